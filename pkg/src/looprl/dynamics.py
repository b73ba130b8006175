"""Probabilistic ensemble of one-step models.

Each member maps ``s (+) a`` to a diagonal Gaussian over the state delta
``s' - s`` and a point estimate of the reward. Members share architecture and
data and differ only in their random initialization.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import Batch, ReplayBuffer
from .nn import Adam, DenseNet, GaussianHead, gaussian_nll, load_nets, save_nets

log = logging.getLogger(__name__)


@dataclass
class TrainReport:
    epochs: list[int] = field(default_factory=list)
    holdout: list[list[float]] = field(default_factory=list)  # per member, per epoch
    final_loss: float = float("nan")


def _safe_std(x: np.ndarray, floor: float | None = None) -> np.ndarray:
    """Column std; constant columns get 1.0, or ``floor`` for prediction targets."""
    std = x.std(axis=0)
    if floor is not None:
        return np.maximum(std, floor)
    return np.where(std < 1e-8, 1.0, std)


class DynamicsEnsemble:
    """``k`` members trained on normalized inputs, deltas and rewards.

    The training loss per member is the Gaussian NLL of the normalized delta
    plus ``reward_weight`` times the squared error of the normalized reward.
    The weight keeps the reward regression from being drowned out once the
    NLL gradients grow with shrinking predicted variance.
    """

    def __init__(self, obs_dim: int, act_dim: int, k: int = 5,
                 hidden: Sequence[int] = (200, 200, 200, 200), lr: float = 1e-3,
                 rng: np.random.Generator | None = None, reward_weight: float = 100.0):
        if k < 2:
            raise ValueError("an ensemble needs at least two members")
        rng = rng or np.random.default_rng(0)
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.hidden = tuple(hidden)
        self.lr = lr
        self.reward_weight = reward_weight
        sizes = [obs_dim + act_dim, *hidden, 2 * obs_dim + 1]
        self.members = [DenseNet(sizes, rng=rng) for _ in range(k)]
        self.optimizers = [Adam(m.params, lr=lr) for m in self.members]
        self.head = GaussianHead(obs_dim)
        self.in_mean = np.zeros(obs_dim + act_dim)
        self.in_std = np.ones(obs_dim + act_dim)
        self.d_mean = np.zeros(obs_dim)
        self.d_std = np.ones(obs_dim)
        self.r_mean = 0.0
        self.r_std = 1.0

    @property
    def k(self) -> int:
        return len(self.members)

    def _check_member(self, member: int):
        if not 0 <= member < self.k:
            raise IndexError(f"member {member} out of range for ensemble of {self.k}")

    def normalize_inputs(self, s: np.ndarray, a: np.ndarray) -> np.ndarray:
        return (np.concatenate([s, a], axis=-1) - self.in_mean) / self.in_std

    def _raw(self, member: int, s, a):
        out = self.members[member](self.normalize_inputs(s, a))
        mean_n, log_std_n, _ = self.head(out)
        return mean_n, log_std_n, out[..., -1]

    def predict(self, member: int, s: np.ndarray, a: np.ndarray):
        """Gaussian over the next state in raw units plus the reward estimate.

        Returns:
            ``(next_mean, next_var, reward)``.
        """
        self._check_member(member)
        s = np.asarray(s, dtype=np.float64)
        a = np.asarray(a, dtype=np.float64)
        mean_n, log_std_n, r_n = self._raw(member, s, a)
        next_mean = s + self.d_mean + mean_n * self.d_std
        next_var = (np.exp(log_std_n) * self.d_std) ** 2
        return next_mean, next_var, self.r_mean + r_n * self.r_std

    def sample_next(self, member: int, s: np.ndarray, a: np.ndarray,
                    rng: np.random.Generator):
        """Draw ``s'`` from the member's Gaussian; returns ``(s_next, reward)``."""
        mean, var, r = self.predict(member, s, a)
        return mean + np.sqrt(var) * rng.standard_normal(mean.shape), r

    def step_all(self, states: np.ndarray, actions: np.ndarray, noise: np.ndarray | None):
        """Advance member-major batches ``(K, B, d)``; ``noise=None`` uses means."""
        nxt = np.empty_like(states)
        rew = np.empty(states.shape[:2])
        for k in range(self.k):
            mean, var, r = self.predict(k, states[k], actions[k])
            nxt[k] = mean if noise is None else mean + np.sqrt(var) * noise[k]
            rew[k] = r
        return nxt, rew

    # -- training ----------------------------------------------------------

    def fit_normalization(self, data: Batch) -> None:
        x = np.concatenate([data.s, data.a], axis=1)
        self.in_mean = x.mean(axis=0)
        self.in_std = _safe_std(x)
        delta = data.s_next - data.s
        self.d_mean = delta.mean(axis=0)
        self.d_std = _safe_std(delta, floor=1e-12)
        self.r_mean = float(data.r.mean())
        self.r_std = max(float(data.r.std()), 1e-12)

    def _targets(self, data: Batch):
        x = self.normalize_inputs(data.s, data.a)
        y = (data.s_next - data.s - self.d_mean) / self.d_std
        r = (data.r - self.r_mean) / self.r_std
        return x, y, r

    def _loss(self, out, y, r, need_grad=True):
        mean, log_std, draw = self.head(out)
        nll, dm, dl = gaussian_nll(mean, log_std, y)
        n = len(r)
        r_err = out[:, -1] - r
        w = self.reward_weight
        loss = nll + w * float((r_err ** 2).mean())
        if not need_grad:
            return loss, None
        dout = np.concatenate([self.head.backward(dm, dl, draw), (2.0 * w * r_err / n)[:, None]],
                              axis=1)
        return loss, dout

    def member_loss(self, member: int, data: Batch) -> float:
        x, y, r = self._targets(data)
        return self._loss(self.members[member](x), y, r, need_grad=False)[0]

    def train(self, data: Batch | ReplayBuffer, rng: np.random.Generator, max_epochs: int = 100,
              patience: int = 5, holdout: float = 0.1, batch_size: int = 256,
              max_updates: int | None = None) -> TrainReport:
        """Fit every member on the same data until holdout loss stops improving.

        Each member keeps its own holdout split; training stops after
        ``patience`` epochs without improvement (or ``max_epochs``) and the
        best holdout parameters are restored.
        """
        if isinstance(data, ReplayBuffer):
            data = data.all()
        n = len(data)
        if n == 0:
            raise ValueError("cannot train the ensemble on an empty dataset")
        self.fit_normalization(data)
        x_all, y_all, r_all = self._targets(data)
        report = TrainReport()
        losses = []
        for k, (net, opt) in enumerate(zip(self.members, self.optimizers)):
            perm = rng.permutation(n)
            n_hold = int(round(holdout * n)) if n >= 10 else 0
            hold = perm[:n_hold] if n_hold else perm
            train = perm[n_hold:]
            best = self._loss(net(x_all[hold]), y_all[hold], r_all[hold], False)[0]
            best_params = net.get_flat()
            history = [best]
            stale = 0
            updates = 0
            epoch = 0
            for epoch in range(1, max_epochs + 1):
                order = train[rng.permutation(len(train))]
                for start in range(0, len(order), batch_size):
                    idx = order[start:start + batch_size]
                    out, cache = net.forward_cache(x_all[idx])
                    _, dout = self._loss(out, y_all[idx], r_all[idx])
                    opt.step(net.params, net.backward(cache, dout).params)
                    updates += 1
                hold_loss = self._loss(net(x_all[hold]), y_all[hold], r_all[hold], False)[0]
                history.append(hold_loss)
                if hold_loss < best - 1e-6 * abs(best):
                    best, best_params, stale = hold_loss, net.get_flat(), 0
                else:
                    stale += 1
                if stale >= patience or (max_updates is not None and updates >= max_updates):
                    break
            net.set_flat(best_params)
            report.epochs.append(epoch)
            report.holdout.append(history)
            losses.append(best)
            log.debug("member %d: %d epochs, holdout %.4f", k, epoch, best)
        report.final_loss = float(np.mean(losses))
        return report

    # -- persistence -------------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"in_mean": self.in_mean, "in_std": self.in_std, "d_mean": self.d_mean,
               "d_std": self.d_std, "r_stats": np.array([self.r_mean, self.r_std])}
        for k, opt in enumerate(self.optimizers):
            out.update(opt.state_arrays(f"opt{k}"))
        return out

    def save(self, path: str | Path) -> None:
        nets = {f"member{k}": m for k, m in enumerate(self.members)}
        save_nets(path, nets, self.state_arrays(),
                  {"kind": "dynamics_ensemble", "obs_dim": self.obs_dim,
                   "act_dim": self.act_dim, "lr": self.lr, "hidden": list(self.hidden),
                   "reward_weight": self.reward_weight})

    @classmethod
    def load(cls, path: str | Path) -> "DynamicsEnsemble":
        nets, arrays, meta = load_nets(path)
        k = len(nets)
        ens = cls(meta["obs_dim"], meta["act_dim"], k=k, hidden=meta["hidden"], lr=meta["lr"],
                  reward_weight=meta.get("reward_weight", 100.0))
        for i in range(k):
            ens.members[i].load_state(nets[f"member{i}"])
            ens.optimizers[i].load_state_arrays(arrays, f"opt{i}")
        ens.in_mean, ens.in_std = arrays["in_mean"], arrays["in_std"]
        ens.d_mean, ens.d_std = arrays["d_mean"], arrays["d_std"]
        ens.r_mean, ens.r_std = (float(v) for v in arrays["r_stats"])
        return ens
