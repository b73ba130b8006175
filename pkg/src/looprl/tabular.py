"""Exact dynamic programming on small MDPs.

Used to check the H-step lookahead performance bound, its 1-step greedy
special case and the KL trust-region total-variation bound on problems where
every quantity can be computed exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, stats


@dataclass
class TabularMDP:
    """``P[s, a, s']`` transition tensor and ``R[s, a]`` reward table in ``[0, r_max]``."""

    P: np.ndarray
    R: np.ndarray
    gamma: float
    r_max: float = 1.0

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=np.float64)
        self.R = np.asarray(self.R, dtype=np.float64)
        if self.P.ndim != 3 or self.P.shape[0] != self.P.shape[2]:
            raise ValueError(f"P must have shape (S, A, S), got {self.P.shape}")
        if self.R.shape != self.P.shape[:2]:
            raise ValueError(f"R shape {self.R.shape} does not match P {self.P.shape}")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if np.any(self.P < 0) or np.max(np.abs(self.P.sum(axis=2) - 1.0)) > 1e-12:
            raise ValueError("rows of P must be probability distributions")
        if np.any(self.R < 0) or np.any(self.R > self.r_max):
            raise ValueError("rewards must lie in [0, r_max]")

    @property
    def n_states(self) -> int:
        return self.P.shape[0]

    @property
    def n_actions(self) -> int:
        return self.P.shape[1]

    @property
    def v_max(self) -> float:
        return self.r_max / (1.0 - self.gamma)


@dataclass(frozen=True)
class BoundInputs:
    eps_m: float
    eps_v: float
    H: int
    gamma: float
    r_max: float
    v_max: float

    def __post_init__(self):
        if self.H < 1:
            raise ValueError("H must be >= 1")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if min(self.eps_m, self.eps_v, self.r_max, self.v_max) < 0:
            raise ValueError("bound inputs must be nonnegative")


def random_mdp(n_states: int, n_actions: int, gamma: float, rng: np.random.Generator,
               r_max: float = 1.0) -> TabularMDP:
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    P /= P.sum(axis=2, keepdims=True)
    R = rng.uniform(0.0, r_max, size=(n_states, n_actions))
    return TabularMDP(P, R, gamma, r_max)


def q_values(mdp: TabularMDP, V: np.ndarray) -> np.ndarray:
    return mdp.R + mdp.gamma * mdp.P @ V


def value_iteration(mdp: TabularMDP, tol: float = 1e-10, max_iter: int = 100_000) -> np.ndarray:
    """Optimal values; stops once the sup-norm Bellman residual is <= ``tol``."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    V = np.zeros(mdp.n_states)
    for _ in range(max_iter):
        V_new = q_values(mdp, V).max(axis=1)
        if np.max(np.abs(V_new - V)) <= tol:
            return V_new
        V = V_new
    raise RuntimeError("value iteration did not converge")


def greedy_policy(mdp: TabularMDP, V: np.ndarray) -> np.ndarray:
    return np.argmax(q_values(mdp, V), axis=1)


def optimal_values(mdp: TabularMDP) -> np.ndarray:
    """V* to machine precision: value iteration, then policy iteration to a fixed point."""
    pi = greedy_policy(mdp, value_iteration(mdp, tol=1e-10))
    for _ in range(100):
        V = policy_value(mdp, pi)
        Q = q_values(mdp, V)
        improved = np.argmax(Q, axis=1)
        # switch only on strict improvement so ties cannot cycle
        better = Q[np.arange(mdp.n_states), improved] > Q[np.arange(mdp.n_states), pi] + 1e-13
        if not better.any():
            return V
        pi = np.where(better, improved, pi)
    raise RuntimeError("policy iteration did not converge")


def policy_value(mdp: TabularMDP, pi: np.ndarray) -> np.ndarray:
    """Exact value of a deterministic stationary policy via a linear solve."""
    pi = np.asarray(pi, dtype=np.int64)
    if pi.shape != (mdp.n_states,) or np.any(pi < 0) or np.any(pi >= mdp.n_actions):
        raise ValueError("policy must hold one valid action index per state")
    idx = np.arange(mdp.n_states)
    P_pi = mdp.P[idx, pi]
    R_pi = mdp.R[idx, pi]
    return np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * P_pi, R_pi)


def perturb_model(mdp: TabularMDP, eps_m: float, rng: np.random.Generator,
                  mixer: np.ndarray | None = None) -> TabularMDP:
    """Mix every transition row with a random distribution.

    ``P_hat = (1 - eps_m) P + eps_m U`` keeps the per-row total variation at
    most ``eps_m``. ``mixer`` overrides the random ``U`` (shape ``(S, A, S)``).
    """
    if not 0.0 <= eps_m <= 1.0:
        raise ValueError("eps_m must lie in [0, 1]")
    if mixer is None:
        mixer = rng.dirichlet(np.ones(mdp.n_states), size=(mdp.n_states, mdp.n_actions))
    P_hat = (1.0 - eps_m) * mdp.P + eps_m * np.asarray(mixer, dtype=np.float64)
    P_hat /= P_hat.sum(axis=2, keepdims=True)
    return TabularMDP(P_hat, mdp.R.copy(), mdp.gamma, mdp.r_max)


def tv_distance(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Half-L1 distance along the last axis."""
    return 0.5 * np.abs(np.asarray(p) - np.asarray(q)).sum(axis=-1)


def perturb_values(V: np.ndarray, eps_v: float, rng: np.random.Generator,
                   v_max: float) -> np.ndarray:
    """Uniform noise in ``[-eps_v, eps_v]`` per state, then clamped to ``[0, v_max]``."""
    if eps_v < 0:
        raise ValueError("eps_v must be >= 0")
    noise = rng.uniform(-eps_v, eps_v, size=np.shape(V))
    return np.clip(np.asarray(V) + noise, 0.0, v_max)


@dataclass
class LookaheadPlan:
    """Backward-DP solution of the H-step problem.

    ``policies[h]`` is the action table used ``h`` steps into the horizon;
    ``q0`` holds the stage-0 action values the first action is chosen from.
    """

    policies: np.ndarray
    q0: np.ndarray

    @property
    def first(self) -> np.ndarray:
        return self.policies[0]


def lookahead_plan(mdp_hat: TabularMDP, V_hat: np.ndarray, H: int) -> LookaheadPlan:
    if H < 1:
        raise ValueError("H must be >= 1")
    W = np.asarray(V_hat, dtype=np.float64)
    policies = []
    Q = None
    for _ in range(H):
        Q = q_values(mdp_hat, W)
        policies.append(np.argmax(Q, axis=1))  # first index on ties
        W = Q.max(axis=1)
    return LookaheadPlan(np.array(policies[::-1]), Q)


def exact_lookahead_policy(mdp_hat: TabularMDP, V_hat: np.ndarray, H: int) -> np.ndarray:
    """First action of the exact H-step lookahead objective in every state."""
    return lookahead_plan(mdp_hat, V_hat, H).first


def periodic_policy_value(mdp: TabularMDP, policies: np.ndarray) -> np.ndarray:
    """Value at phase 0 of the non-stationary policy that cycles through ``policies``.

    This is the lookahead policy without replanning: follow the H-step plan
    for H steps in the true model, then plan again.
    """
    S = mdp.n_states
    idx = np.arange(S)
    M = np.eye(S)
    b = np.zeros(S)
    for h, pi in enumerate(policies):
        b += mdp.gamma ** h * (M @ mdp.R[idx, pi])
        M = M @ mdp.P[idx, pi]
    H = len(policies)
    return np.linalg.solve(np.eye(S) - mdp.gamma ** H * M, b)


def theorem1_bound(b: BoundInputs) -> float:
    """``2 / (1 - g^H) * (C + g^H eps_v)`` with the model-error constant ``C``."""
    g, H = b.gamma, b.H
    C = b.r_max * sum(g ** t * t * b.eps_m for t in range(H)) + g ** H * H * b.eps_m * b.v_max
    return 2.0 / (1.0 - g ** H) * (C + g ** H * b.eps_v)


def greedy_bound(gamma: float, eps_v: float) -> float:
    """Gap bound of the 1-step greedy policy: ``2 gamma eps_v / (1 - gamma)``."""
    return gamma / (1.0 - gamma) * 2.0 * eps_v


# absolute slack for linear-solve roundoff in the exact values (|V| <= 10 here)
ROUNDOFF = 1e-9


@dataclass
class TrialRecord:
    trial: int
    eps_m: float
    eps_v: float
    H: int
    gap: float
    gap_replanning: float
    bound: float
    measured_eps_m: float
    measured_eps_v: float

    @property
    def slack(self) -> float:
        return self.bound - self.gap

    @property
    def holds(self) -> bool:
        return self.gap <= self.bound + ROUNDOFF

    def as_dict(self) -> dict:
        return {"trial": self.trial, "eps_m": self.eps_m, "eps_v": self.eps_v, "H": self.H,
                "gap": self.gap, "gap_replanning": self.gap_replanning, "bound": self.bound,
                "slack": self.slack, "holds": self.holds,
                "measured_eps_m": self.measured_eps_m, "measured_eps_v": self.measured_eps_v}


@dataclass
class BoundReport:
    records: list[TrialRecord] = field(default_factory=list)

    @property
    def holds(self) -> bool:
        return all(r.holds for r in self.records)


def run_trial(mdp: TabularMDP, V_star: np.ndarray, eps_m: float, eps_v: float, H: int,
              rng: np.random.Generator, trial: int = 0) -> TrialRecord:
    mdp_hat = perturb_model(mdp, eps_m, rng)
    V_hat = perturb_values(V_star, eps_v, rng, mdp.v_max)
    plan = lookahead_plan(mdp_hat, V_hat, H)
    gap = float(np.max(V_star - periodic_policy_value(mdp, plan.policies)))
    gap_mpc = float(np.max(V_star - policy_value(mdp, plan.first)))
    b = BoundInputs(eps_m, eps_v, H, mdp.gamma, mdp.r_max, mdp.v_max)
    return TrialRecord(trial, eps_m, eps_v, H, gap, gap_mpc, theorem1_bound(b),
                       float(np.max(tv_distance(mdp.P, mdp_hat.P))),
                       float(np.max(np.abs(V_hat - V_star))))


def verify_bound(mdp: TabularMDP, b: BoundInputs, trials: int,
                 rng: np.random.Generator) -> BoundReport:
    """Check the H-step bound on ``trials`` independent model/value perturbations.

    The gap is ``max_s V*(s) - V^pi(s)`` for the lookahead policy that acts
    ``H`` steps per plan without replanning. The replanning (MPC) gap is
    recorded alongside but is not part of ``holds``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if b.gamma != mdp.gamma:
        raise ValueError("bound gamma does not match the MDP")
    V_star = optimal_values(mdp)
    report = BoundReport()
    for k in range(trials):
        report.records.append(run_trial(mdp, V_star, b.eps_m, b.eps_v, b.H, rng, trial=k))
    return report


def gaussian_kl(mu0: float, sd0: float, mu1: float, sd1: float) -> float:
    """KL(N(mu0, sd0^2) || N(mu1, sd1^2))."""
    return math.log(sd1 / sd0) + (sd0 ** 2 + (mu0 - mu1) ** 2) / (2 * sd1 ** 2) - 0.5


def gaussian_tv_numeric(mu0: float, sd0: float, mu1: float, sd1: float,
                        tol: float = 1e-10) -> tuple[float, float]:
    """Half-L1 distance between two 1-D Gaussians by adaptive quadrature.

    Returns ``(tv, abs_error_estimate)``.
    """
    p = stats.norm(mu0, sd0)
    q = stats.norm(mu1, sd1)
    lo = min(mu0 - 12 * sd0, mu1 - 12 * sd1)
    hi = max(mu0 + 12 * sd0, mu1 + 12 * sd1)
    points = [0.5 * (mu0 + mu1)]
    val, err = integrate.quad(lambda x: abs(p.pdf(x) - q.pdf(x)), lo, hi, points=points,
                              epsabs=tol, epsrel=tol, limit=200)
    return 0.5 * val, 0.5 * err


@dataclass
class TrustRegionReport:
    kl_step: float
    steps: int
    step_kls: list[float]
    step_tvs: list[float]
    tv_total: float
    integration_error: float
    bound_total: float
    bound_step: float

    @property
    def holds(self) -> bool:
        return (self.tv_total <= self.bound_total
                and all(tv <= self.bound_step for tv in self.step_tvs))


def trust_region_tv_check(kl_step: float, steps: int, sd: float = 1.0) -> TrustRegionReport:
    """Chain of mean-shifted Gaussians with each consecutive KL equal to ``kl_step``.

    Measures the end-to-end total variation numerically and compares it to
    ``steps * sqrt(kl_step / 2)`` (Pinsker plus the triangle inequality).
    """
    if kl_step <= 0:
        raise ValueError("kl_step must be positive")
    if steps < 0:
        raise ValueError("steps must be >= 0")
    shift = sd * math.sqrt(2.0 * kl_step)
    means = [k * shift for k in range(steps + 1)]
    step_kls, step_tvs = [], []
    err_total = 0.0
    for m0, m1 in zip(means[:-1], means[1:]):
        step_kls.append(gaussian_kl(m0, sd, m1, sd))
        tv, err = gaussian_tv_numeric(m0, sd, m1, sd)
        step_tvs.append(tv)
        err_total += err
    if steps == 0:
        tv_total = 0.0
    else:
        tv_total, err = gaussian_tv_numeric(means[0], sd, means[-1], sd)
        err_total += err
    per_step = math.sqrt(kl_step / 2.0)
    return TrustRegionReport(kl_step, steps, step_kls, step_tvs, tv_total, err_total,
                             steps * per_step, per_step)
