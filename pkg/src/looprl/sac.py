"""Soft actor-critic with twin critics, plus a SARSA evaluation mode.

The critics double as the terminal value of the planner and the actor as its
sampling prior, so the public surface is small: ``policy``/``actor_dist`` for
acting, ``q_min`` for evaluation and ``update`` for learning.
"""

from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import Batch
from .nn import (
    Adam, DenseNet, GaussianHead, TanhGaussianSample, load_nets, save_nets, tanh_gaussian_backward,
    tanh_gaussian_sample,
)


@dataclass
class SACConfig:
    hidden: Sequence[int] = (256, 256)
    lr: float = 3e-4
    gamma: float = 0.99
    polyak: float = 0.995
    batch_size: int = 256
    init_alpha: float = 1.0
    fixed_alpha: float | None = None  # disables temperature learning when set
    target_entropy: float | None = None  # None -> -act_dim
    bc_weight: float = 0.0  # weight of -log π(a_data|s) in the actor loss (offline only)

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if not 0.0 <= self.polyak < 1.0:
            raise ValueError(f"polyak must lie in [0, 1), got {self.polyak}")
        self.hidden = tuple(self.hidden)


@dataclass
class LossInfo:
    critic: float
    actor: float
    entropy: float
    alpha: float


class ActorCritic:
    """Tanh-Gaussian actor, two critics, their polyak targets and a temperature."""

    def __init__(self, obs_dim: int, act_dim: int, low: np.ndarray, high: np.ndarray,
                 config: SACConfig | None = None, rng: np.random.Generator | None = None):
        self.config = config or SACConfig()
        rng = rng or np.random.default_rng(0)
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.low = np.asarray(low, dtype=np.float64).reshape(act_dim)
        self.high = np.asarray(high, dtype=np.float64).reshape(act_dim)
        h = self.config.hidden
        self.actor = DenseNet([obs_dim, *h, 2 * act_dim], rng=rng)
        self.q1 = DenseNet([obs_dim + act_dim, *h, 1], rng=rng)
        self.q2 = DenseNet([obs_dim + act_dim, *h, 1], rng=rng)
        self.q1_target = self.q1.copy()
        self.q2_target = self.q2.copy()
        self.head = GaussianHead(act_dim)
        self.log_alpha = np.array([math.log(self.config.init_alpha)])
        lr = self.config.lr
        self.actor_opt = Adam(self.actor.params, lr=lr)
        self.critic_opt = Adam(self.q1.params + self.q2.params, lr=lr)
        self.alpha_opt = Adam([self.log_alpha], lr=lr)
        self.updates = 0

    @property
    def alpha(self) -> float:
        if self.config.fixed_alpha is not None:
            return float(self.config.fixed_alpha)
        return float(np.exp(self.log_alpha[0]))

    @property
    def target_entropy(self) -> float:
        te = self.config.target_entropy
        return -float(self.act_dim) if te is None else float(te)

    # -- acting ------------------------------------------------------------

    def actor_dist(self, s: np.ndarray):
        """``(mean, log_std)`` of the pre-squash Gaussian at ``s``."""
        mean, log_std, _ = self.head(self.actor(s))
        return mean, log_std

    def sample(self, s: np.ndarray, rng: np.random.Generator | None = None,
               eps: np.ndarray | None = None) -> TanhGaussianSample:
        mean, log_std = self.actor_dist(s)
        return tanh_gaussian_sample(mean, log_std, self.low, self.high, rng=rng, eps=eps)

    def policy(self, s: np.ndarray, rng: np.random.Generator | None = None,
               deterministic: bool = False) -> np.ndarray:
        if deterministic:
            mean, _ = self.actor_dist(s)
            return self.squash(mean)
        return self.sample(s, rng).action

    def squash(self, u: np.ndarray) -> np.ndarray:
        return 0.5 * (self.high + self.low) + 0.5 * (self.high - self.low) * np.tanh(u)

    def q_values(self, s: np.ndarray, a: np.ndarray, target: bool = False):
        x = np.concatenate([s, a], axis=-1)
        n1, n2 = (self.q1_target, self.q2_target) if target else (self.q1, self.q2)
        return n1(x)[..., 0], n2(x)[..., 0]

    def q_min(self, s: np.ndarray, a: np.ndarray) -> np.ndarray:
        q1, q2 = self.q_values(s, a)
        return np.minimum(q1, q2)

    # -- targets -----------------------------------------------------------

    def soft_target(self, batch: Batch, rng: np.random.Generator | None = None,
                    eps: np.ndarray | None = None) -> np.ndarray:
        """``r + (1 - done) γ (min Q'(s', a') - α log π(a'|s'))`` with ``a'`` drawn fresh."""
        nxt = self.sample(batch.s_next, rng=rng, eps=eps)
        q1, q2 = self.q_values(batch.s_next, nxt.action, target=True)
        soft = np.minimum(q1, q2) - self.alpha * nxt.logp
        return batch.r + (1.0 - batch.done) * self.config.gamma * soft

    def sarsa_target(self, batch: Batch) -> np.ndarray:
        """``r + (1 - done) γ min Q'(s', a')`` using the stored next action."""
        if batch.a_next is None:
            raise ValueError("SARSA targets need a batch with a_next (use sample_sarsa)")
        q1, q2 = self.q_values(batch.s_next, batch.a_next, target=True)
        return batch.r + (1.0 - batch.done) * self.config.gamma * np.minimum(q1, q2)

    # -- losses ------------------------------------------------------------

    def critic_loss(self, batch: Batch, y: np.ndarray, need_grad: bool = True):
        """Sum over both critics of ``½ mean (Q - y)²``; returns ``(loss, grads)``."""
        x = np.concatenate([batch.s, batch.a], axis=-1)
        n = len(y)
        loss = 0.0
        grads = []
        for net in (self.q1, self.q2):
            out, cache = net.forward_cache(x)
            err = out[:, 0] - y
            loss += 0.5 * float((err ** 2).mean())
            if need_grad:
                grads += net.backward(cache, (err / n)[:, None]).params
        return loss, grads if need_grad else None

    def actor_loss(self, batch: Batch, eps: np.ndarray, need_grad: bool = True):
        """``mean(α log π(a|s) - min Q(s, a))`` with ``a`` reparameterized by ``eps``.

        Returns ``(loss, actor grads, logp)``.
        """
        s = batch.s
        n = len(s)
        out, cache = self.actor.forward_cache(s)
        mean, log_std, draw = self.head(out)
        smp = tanh_gaussian_sample(mean, log_std, self.low, self.high, eps=eps)
        x = np.concatenate([s, smp.action], axis=-1)
        o1, c1 = self.q1.forward_cache(x)
        o2, c2 = self.q2.forward_cache(x)
        q = np.minimum(o1[:, 0], o2[:, 0])
        alpha = self.alpha
        loss = float((alpha * smp.logp - q).mean())
        w = self.config.bc_weight
        if w:
            # log-density of the dataset action under the squashed Gaussian
            c = 0.5 * (self.high + self.low)
            y = np.clip((batch.a - c) / smp.scale, -1.0 + 1e-6, 1.0 - 1e-6)
            z = (np.arctanh(y) - mean) / smp.std
            ll = (-0.5 * z * z - log_std - 0.5 * math.log(2 * math.pi) - np.log1p(-y * y)
                  - np.log(smp.scale)).sum(axis=-1)
            loss -= w * float(ll.mean())
        if not need_grad:
            return loss, None, smp.logp
        pick1 = (o1[:, 0] <= o2[:, 0])[:, None]
        dq = np.full((n, 1), -1.0 / n)
        da1 = self.q1.backward(c1, dq * pick1, param_grads=False).dx[:, self.obs_dim:]
        da2 = self.q2.backward(c2, dq * ~pick1, param_grads=False).dx[:, self.obs_dim:]
        dmean, dlog_std = tanh_gaussian_backward(smp, da1 + da2, np.full(n, alpha / n))
        if w:
            dmean -= w * z / smp.std / n
            dlog_std -= w * (z * z - 1.0) / n
        g = self.actor.backward(cache, self.head.backward(dmean, dlog_std, draw))
        return loss, g.params, smp.logp

    # -- updates -----------------------------------------------------------

    def update_critics(self, batch: Batch, rng: np.random.Generator | None = None,
                       sarsa: bool = False) -> float:
        """One Adam step on both critics toward a shared target, then a polyak step."""
        y = self.sarsa_target(batch) if sarsa else self.soft_target(batch, rng=rng)
        loss, grads = self.critic_loss(batch, y)
        self.critic_opt.step(self.q1.params + self.q2.params, grads)
        self.polyak_update()
        return loss

    def polyak_update(self) -> None:
        tau = self.config.polyak
        for net, tgt in ((self.q1, self.q1_target), (self.q2, self.q2_target)):
            for p, pt in zip(net.params, tgt.params):
                pt *= tau
                pt += (1.0 - tau) * p

    def update_actor(self, batch: Batch, rng: np.random.Generator) -> tuple[float, float]:
        """Actor step, then a temperature step; returns ``(actor loss, entropy estimate)``."""
        eps = rng.standard_normal((len(batch), self.act_dim))
        loss, grads, logp = self.actor_loss(batch, eps)
        self.actor_opt.step(self.actor.params, grads)
        entropy = -float(logp.mean())
        if self.config.fixed_alpha is None:
            # d/dlogα of -logα (logp + H̄)
            g = np.array([-float((logp + self.target_entropy).mean())])
            self.alpha_opt.step([self.log_alpha], [g])
        return loss, entropy

    def update(self, batch: Batch, rng: np.random.Generator, sarsa: bool = False) -> LossInfo:
        critic = self.update_critics(batch, rng, sarsa=sarsa)
        actor, entropy = self.update_actor(batch, rng)
        self.updates += 1
        return LossInfo(critic, actor, entropy, self.alpha)

    # -- copies and persistence ---------------------------------------------

    def snapshot(self) -> "ActorCritic":
        """Independent frozen copy for use inside planners or other workers."""
        return copy.deepcopy(self)

    def _nets(self) -> dict[str, DenseNet]:
        return {"actor": self.actor, "q1": self.q1, "q2": self.q2,
                "q1_target": self.q1_target, "q2_target": self.q2_target}

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"log_alpha": self.log_alpha, "updates": np.array([float(self.updates)])}
        out.update(self.actor_opt.state_arrays("actor_opt"))
        out.update(self.critic_opt.state_arrays("critic_opt"))
        out.update(self.alpha_opt.state_arrays("alpha_opt"))
        return out

    def save(self, path: str | Path) -> None:
        cfg = asdict(self.config)
        cfg["hidden"] = list(cfg["hidden"])
        save_nets(path, self._nets(), self.state_arrays(),
                  {"kind": "actor_critic", "obs_dim": self.obs_dim, "act_dim": self.act_dim,
                   "low": self.low.tolist(), "high": self.high.tolist(), "config": cfg})

    @classmethod
    def load(cls, path: str | Path) -> "ActorCritic":
        nets, arrays, meta = load_nets(path)
        ac = cls(meta["obs_dim"], meta["act_dim"], np.array(meta["low"]), np.array(meta["high"]),
                 SACConfig(**meta["config"]))
        for name, net in ac._nets().items():
            net.load_state(nets[name])
        ac.log_alpha[...] = arrays["log_alpha"]
        ac.updates = int(arrays["updates"][0])
        ac.actor_opt.load_state_arrays(arrays, "actor_opt")
        ac.critic_opt.load_state_arrays(arrays, "critic_opt")
        ac.alpha_opt.load_state_arrays(arrays, "alpha_opt")
        return ac
