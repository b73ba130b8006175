"""Sampling-based H-step lookahead planning over a learned ensemble.

The planner scores an action sequence by rolling it through every ensemble
member with several particles, summing discounted model rewards for the first
``H - 1`` steps and closing with the terminal critic at step ``H``. Candidate
sequences come from a mixture of the actor (unrolled through one nominal
member) and a Gaussian around the previous step's shifted solution, and the
Gaussian is refit by exponentially weighted importance sampling.

Modes:
    ``arc``  exponential weights over the whole population.
    ``cem``  mean/variance of the top ``elites`` sequences.

Terminal:
    ``q``     critic at the last step.
    ``none``  model reward at every step; nothing beyond the horizon.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Protocol

import numpy as np

ActorFn = Callable[[np.ndarray], np.ndarray]
QFn = Callable[[np.ndarray, np.ndarray], np.ndarray]
CostFn = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
Scorer = Callable[[np.ndarray], np.ndarray]


class Model(Protocol):
    k: int

    def predict(self, member: int, s: np.ndarray, a: np.ndarray): ...


@dataclass
class SequenceDistribution:
    mean: np.ndarray  # (H, d)
    std: np.ndarray  # (H, d)

    def __post_init__(self):
        self.mean = np.atleast_2d(np.asarray(self.mean, dtype=np.float64))
        self.std = np.atleast_2d(np.asarray(self.std, dtype=np.float64))
        if self.mean.shape != self.std.shape:
            raise ValueError(f"mean {self.mean.shape} and std {self.std.shape} differ")
        if np.any(self.std < 0):
            raise ValueError("std must be non-negative")

    @property
    def horizon(self) -> int:
        return self.mean.shape[0]

    @classmethod
    def zeros(cls, horizon: int, act_dim: int, std: float | np.ndarray = 1.0):
        return cls(np.zeros((horizon, act_dim)), np.broadcast_to(std, (horizon, act_dim)).copy())

    def shifted(self, pad_std: float | np.ndarray) -> "SequenceDistribution":
        """Drop the first step and append a zero-mean step with ``pad_std``."""
        mean = np.vstack([self.mean[1:], np.zeros((1, self.mean.shape[1]))])
        std = np.vstack([self.std[1:], np.broadcast_to(pad_std, (1, self.std.shape[1]))])
        return SequenceDistribution(mean, std)


@dataclass
class PlannerConfig:
    H: int = 3
    N: int = 100
    P: int = 4
    iterations: int = 5
    alpha: float = 0.1
    beta: float = 0.05
    kappa: float = 1.0
    sigma_prior: float = 0.5  # fraction of the action half-range
    actor_noise: float = 0.0  # std on actor-branch actions, same units as sigma_prior
    lambda_pess: float = 0.0
    dispersion: str = "var"  # or "std"
    gamma: float = 0.99
    sigma_floor: float = 1e-3
    method: str = "arc"  # or "cem"
    elites: int = 10
    terminal: str = "q"  # or "none"

    def __post_init__(self):
        if self.H < 1:
            raise ValueError("H must be >= 1")
        if self.N < 2:
            raise ValueError("N must be >= 2")
        if self.P < 1 or self.iterations < 1:
            raise ValueError("P and iterations must be >= 1")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        if self.kappa <= 0:
            raise ValueError("kappa must be > 0")
        if self.lambda_pess < 0 or self.sigma_prior < 0 or self.actor_noise < 0:
            raise ValueError("lambda_pess, sigma_prior and actor_noise must be >= 0")
        if self.dispersion not in ("var", "std"):
            raise ValueError(f"unknown dispersion {self.dispersion!r}")
        if self.method not in ("arc", "cem"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.terminal not in ("q", "none"):
            raise ValueError(f"unknown terminal {self.terminal!r}")
        if self.method == "cem" and not 1 <= self.elites <= self.N:
            raise ValueError("elites must lie in [1, N]")


@dataclass
class SafeConfig:
    d0: float
    cost_fn: CostFn
    m: int = 10

    def __post_init__(self):
        if self.d0 < 0 or self.m < 1:
            raise ValueError("need d0 >= 0 and m >= 1")


@dataclass
class PlanInfo:
    kls: list[float] = field(default_factory=list)  # KL(q_m || q_{m+1}) of the Gaussian branch
    n_safe: list[int] = field(default_factory=list)
    best_score: list[float] = field(default_factory=list)

    @property
    def tv_bound(self) -> float:
        """Chained trust-region bound ``M sqrt(max KL / 2)`` on TV(first, last)."""
        if not self.kls:
            return 0.0
        return len(self.kls) * math.sqrt(max(self.kls) / 2.0)


@dataclass
class PlanResult:
    action: np.ndarray
    dist: SequenceDistribution  # final distribution, not yet shifted
    info: PlanInfo


def diag_gaussian_kl(p: SequenceDistribution, q: SequenceDistribution) -> float:
    """KL(p || q) for diagonal Gaussians; ``inf`` when a std is zero."""
    vp, vq = p.std ** 2, q.std ** 2
    if np.any(vq == 0) or np.any(vp == 0):
        same = np.array_equal(p.mean, q.mean) and np.array_equal(p.std, q.std)
        return 0.0 if same else math.inf
    d = p.mean - q.mean
    return float(0.5 * (np.log(vq / vp) + (vp + d * d) / vq - 1.0).sum())


# -- operations ---------------------------------------------------------------

def sample_prior(s: np.ndarray, dist: SequenceDistribution, cfg: PlannerConfig,
                 rng: np.random.Generator, low: np.ndarray, high: np.ndarray,
                 actor: ActorFn | None = None, model: Model | None = None,
                 nominal: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``N`` sequences from ``β actor + (1 - β) N(dist)``, clipped to bounds.

    The actor acts at states reached by unrolling the sequence itself through
    the mean prediction of member ``nominal``. Returns ``(seqs (N, H, d), from_actor (N, H))``.
    """
    N, (H, d) = cfg.N, dist.mean.shape
    eps = rng.standard_normal((N, H, d))
    gauss = dist.mean + dist.std * eps
    if cfg.beta == 0.0:
        return np.clip(gauss, low, high), np.zeros((N, H), dtype=bool)
    if actor is None:
        raise ValueError("beta > 0 needs an actor")
    pick = rng.random((N, H)) < cfg.beta
    a_noise = rng.standard_normal((N, H, d)) * cfg.actor_noise * 0.5 * (high - low)
    seqs = np.empty((N, H, d))
    states = np.broadcast_to(np.asarray(s, dtype=np.float64), (N, len(s))).copy()
    for t in range(H):
        a_actor = np.asarray(actor(states)).reshape(N, d) + a_noise[:, t]
        seqs[:, t] = np.clip(np.where(pick[:, t, None], a_actor, gauss[:, t]), low, high)
        if t < H - 1:
            if model is None:
                raise ValueError("unrolling the actor branch needs a model")
            states = model.predict(nominal, states, seqs[:, t])[0]
    return seqs, pick


def score_sequences(s: np.ndarray, seqs: np.ndarray, model: Model, cfg: PlannerConfig,
                    rng: np.random.Generator, q_fn: QFn | None = None,
                    cost_fn: CostFn | None = None):
    """Per-member returns ``(N, K)`` and worst-case discounted costs ``(N,)``.

    Each sequence is rolled out ``P`` times in every member, sampling each
    member's Gaussian at every step. Particle noise is shared across members so
    that member disagreement reflects the models rather than the draws. Steps ``t < H`` add ``γ^(t-1) r̂``; step
    ``H`` adds ``γ^(H-1) Q`` (or ``r̂`` when ``terminal == "none"``).
    Costs are ``max`` over members and particles of ``Σ γ^(t-1) c``; ``None``
    without ``cost_fn``.
    """
    N, H, d = seqs.shape
    K, P = model.k, cfg.P
    use_q = cfg.terminal == "q"
    if use_q and q_fn is None:
        raise ValueError("terminal='q' needs a critic")
    acts = np.repeat(seqs, P, axis=0)  # (N*P, H, d), particle-major within sequence
    returns = np.zeros((K, N * P))
    costs = np.zeros((K, N * P)) if cost_fn is not None else None
    s = np.asarray(s, dtype=np.float64)
    noise = rng.standard_normal((H, N * P, len(s)))
    for k in range(K):
        state = np.broadcast_to(s, (N * P, len(s))).copy()
        for t in range(H):
            a = acts[:, t]
            disc = cfg.gamma ** t
            last = t == H - 1
            need_step = not (last and use_q) or cost_fn is not None
            if need_step:
                mean, var, r = model.predict(k, state, a)
                nxt = mean + np.sqrt(var) * noise[t]
            if last and use_q:
                returns[k] += disc * q_fn(state, a)
            else:
                returns[k] += disc * r
            if cost_fn is not None:
                costs[k] += disc * cost_fn(state, a, nxt)
            if not last:
                state = nxt
    member_returns = returns.reshape(K, N, P).mean(axis=2).T
    worst = None if costs is None else costs.reshape(K, N, P).max(axis=(0, 2))
    return member_returns, worst


def aggregate(returns: np.ndarray, lambda_pess: float = 0.0, dispersion: str = "var") -> np.ndarray:
    """``mean_k R - λ · disp_k R`` with population variance (or std) across members."""
    returns = np.asarray(returns, dtype=np.float64)
    score = returns.mean(axis=1)
    if lambda_pess:
        spread = returns.var(axis=1)
        if dispersion == "std":
            spread = np.sqrt(spread)
        score = score - lambda_pess * spread
    return score


def softmax_weights(scores: np.ndarray, kappa: float) -> np.ndarray:
    z = kappa * (np.asarray(scores, dtype=np.float64) - np.max(scores))
    w = np.exp(z)
    return w / w.sum()


def is_update(seqs: np.ndarray, scores: np.ndarray, dist: SequenceDistribution,
              cfg: PlannerConfig) -> SequenceDistribution:
    """Exponentially weighted refit of ``dist`` smoothed by ``α``; std floored."""
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    w = softmax_weights(scores, cfg.kappa)[:, None, None]
    return _refit(seqs, w, dist, cfg)


def cem_update(seqs: np.ndarray, scores: np.ndarray, dist: SequenceDistribution,
               cfg: PlannerConfig) -> SequenceDistribution:
    """Uniform refit on the ``elites`` highest scores, smoothed by ``α``."""
    top = np.argsort(-np.asarray(scores), kind="stable")[:cfg.elites]
    w = np.full((len(top), 1, 1), 1.0 / len(top))
    return _refit(seqs[top], w, dist, cfg)


def _refit(seqs, w, dist, cfg):
    mean = (w * seqs).sum(axis=0)
    var = (w * (seqs - mean) ** 2).sum(axis=0)
    a = cfg.alpha
    mean = a * mean + (1.0 - a) * dist.mean
    var = a * var + (1.0 - a) * dist.std ** 2
    return SequenceDistribution(mean, np.maximum(np.sqrt(var), cfg.sigma_floor))


def arc_plan(s: np.ndarray, cfg: PlannerConfig, prev: SequenceDistribution | None,
             rng: np.random.Generator, low: np.ndarray, high: np.ndarray,
             actor: ActorFn | None = None, model: Model | None = None, q_fn: QFn | None = None,
             scorer: Scorer | None = None, safe: SafeConfig | None = None,
             nominal: int = 0) -> PlanResult:
    """Run ``cfg.iterations`` rounds of sample → score → aggregate → refit.

    ``prev`` is the already shifted solution of the previous step (``None``
    starts from zero means). Its mean seeds the Gaussian branch with std
    ``sigma_prior``. ``scorer`` replaces model rollouts with a direct map
    from sequences ``(N, H, d)`` to member returns ``(N, K)``.

    With ``safe``, sequences whose worst-case discounted cost exceeds ``d0``
    are excluded from the reward-weighted refit; if fewer than ``m`` remain
    the refit uses weights ``exp(-κ C)`` over the whole population instead.
    """
    low = np.asarray(low, dtype=np.float64)
    high = np.asarray(high, dtype=np.float64)
    d = len(low)
    half = 0.5 * (high - low)
    mean = np.zeros((cfg.H, d)) if prev is None else prev.mean
    if mean.shape != (cfg.H, d):
        raise ValueError(f"previous plan has shape {mean.shape}, expected {(cfg.H, d)}")
    dist = SequenceDistribution(mean, np.broadcast_to(cfg.sigma_prior * half, mean.shape))
    info = PlanInfo()
    cost_fn = safe.cost_fn if safe is not None else None
    if scorer is None and model is None:
        raise ValueError("need a model or a scorer")
    refit = cem_update if cfg.method == "cem" else is_update
    for _ in range(cfg.iterations):
        seqs, _ = sample_prior(s, dist, cfg, rng, low, high, actor, model, nominal)
        costs = None
        if scorer is not None:
            returns = np.asarray(scorer(seqs), dtype=np.float64)
            if returns.ndim == 1:
                returns = returns[:, None]
        else:
            returns, costs = score_sequences(s, seqs, model, cfg, rng, q_fn, cost_fn)
        scores = aggregate(returns, cfg.lambda_pess, cfg.dispersion)
        info.best_score.append(float(scores.max()))
        if safe is not None:
            if costs is None:
                raise ValueError("safe planning needs model rollouts")
            ok = costs <= safe.d0
            info.n_safe.append(int(ok.sum()))
            if ok.sum() < safe.m:
                new = is_update(seqs, -costs, dist, cfg)
            else:
                new = refit(seqs[ok], scores[ok], dist, cfg)
        else:
            new = refit(seqs, scores, dist, cfg)
        info.kls.append(diag_gaussian_kl(dist, new))
        dist = new
    return PlanResult(np.clip(dist.mean[0], low, high), dist, info)


class Planner:
    """Receding-horizon wrapper that carries the shifted solution between steps."""

    def __init__(self, cfg: PlannerConfig, low: np.ndarray, high: np.ndarray,
                 safe: SafeConfig | None = None):
        self.cfg = cfg
        self.low = np.asarray(low, dtype=np.float64)
        self.high = np.asarray(high, dtype=np.float64)
        self.safe = safe
        self.prev: SequenceDistribution | None = None
        self.nominal = 0
        self.calls = 0
        self.last_info: PlanInfo | None = None

    def reset(self, rng: np.random.Generator | None = None, k: int = 1) -> None:
        """Forget the previous plan; optionally redraw the nominal member."""
        self.prev = None
        self.nominal = int(rng.integers(k)) if rng is not None else 0

    def act(self, s: np.ndarray, rng: np.random.Generator, actor: ActorFn | None = None,
            model: Model | None = None, q_fn: QFn | None = None,
            scorer: Scorer | None = None) -> np.ndarray:
        self.calls += 1
        res = arc_plan(s, self.cfg, self.prev, rng, self.low, self.high, actor, model, q_fn,
                       scorer, self.safe, self.nominal)
        half = 0.5 * (self.high - self.low)
        self.prev = res.dist.shifted(self.cfg.sigma_prior * half)
        self.last_info = res.info
        return res.action

    def with_config(self, **changes) -> "Planner":
        return Planner(replace(self.cfg, **changes), self.low, self.high, self.safe)
