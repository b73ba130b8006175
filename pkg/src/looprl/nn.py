"""Small dense networks with an explicit reverse pass, Adam, and Gaussian heads.

All arrays are float64. Inputs are batched as ``(batch, features)``; a 1-D
input is treated as a batch of one and the output squeezed back.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .serialization import read_arrays, write_arrays

ACTIVATIONS = ("relu", "tanh", "identity")
LOG_STD_MIN = -10.0
LOG_STD_MAX = 2.0
LOG_2PI = math.log(2.0 * math.pi)


def _activate(z, act):
    if act == "relu":
        return np.maximum(z, 0.0)
    if act == "tanh":
        return np.tanh(z)
    return z


def _activate_grad(z, y, dy, act):
    if act == "relu":
        return dy * (z > 0)
    if act == "tanh":
        return dy * (1.0 - y * y)
    return dy


@dataclass
class Layer:
    W: np.ndarray  # (in, out)
    b: np.ndarray  # (out,)
    activation: str


@dataclass
class Gradients:
    params: list[np.ndarray]  # same order as DenseNet.params
    dx: np.ndarray


class DenseNet:
    """Multi-layer perceptron ``x -> act(x W + b) -> ...``.

    Args:
        sizes: layer widths including input and output, e.g. ``(4, 64, 64, 2)``.
        hidden: activation of hidden layers.
        output: activation of the last layer.
        rng: generator for the uniform ``+-1/sqrt(fan_in)`` initialization; when
            omitted all parameters start at zero.
    """

    def __init__(self, sizes: Sequence[int], hidden: str = "relu", output: str = "identity",
                 rng: np.random.Generator | None = None, activations: Sequence[str] | None = None):
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        n = len(sizes) - 1
        if activations is None:
            activations = [hidden] * (n - 1) + [output]
        if len(activations) != n or any(a not in ACTIVATIONS for a in activations):
            raise ValueError(f"bad activations {activations}")
        self.layers: list[Layer] = []
        for fan_in, fan_out, act in zip(sizes[:-1], sizes[1:], activations):
            if rng is None:
                W, b = np.zeros((fan_in, fan_out)), np.zeros(fan_out)
            else:
                bound = 1.0 / math.sqrt(fan_in)
                W = rng.uniform(-bound, bound, size=(fan_in, fan_out))
                b = rng.uniform(-bound, bound, size=fan_out)
            self.layers.append(Layer(W, b, act))

    @property
    def sizes(self) -> list[int]:
        return [self.layers[0].W.shape[0]] + [l.W.shape[1] for l in self.layers]

    @property
    def activations(self) -> list[str]:
        return [l.activation for l in self.layers]

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for l in self.layers:
            out.extend((l.W, l.b))
        return out

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def _check(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.layers[0].W.shape[0]:
            raise ValueError(f"input dim {x.shape[-1]} != {self.layers[0].W.shape[0]}")
        return x

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = self._check(x)
        h = x
        for l in self.layers:
            h = _activate(h @ l.W + l.b, l.activation)
        return h

    def forward_cache(self, x: np.ndarray):
        """Forward pass keeping what :meth:`backward` needs."""
        x = self._check(x)
        squeeze = x.ndim == 1
        h = x[None] if squeeze else x
        cache = [h]
        for l in self.layers:
            z = h @ l.W + l.b
            h = _activate(z, l.activation)
            cache.append((z, h))
        out = h[0] if squeeze else h
        return out, (squeeze, cache)

    def backward(self, cache, dy: np.ndarray, param_grads: bool = True) -> Gradients:
        """Reverse pass for the upstream gradient ``dy`` (same shape as the output)."""
        squeeze, acts = cache
        dy = np.asarray(dy, dtype=np.float64)
        g = dy[None] if squeeze else dy
        grads: list[np.ndarray] = []
        for i in range(len(self.layers) - 1, -1, -1):
            l = self.layers[i]
            z, y = acts[i + 1]
            h_in = acts[0] if i == 0 else acts[i][1]
            dz = _activate_grad(z, y, g, l.activation)
            if param_grads:
                grads.append(dz.sum(axis=0))
                grads.append(h_in.T @ dz)
            g = dz @ l.W.T
        grads.reverse()
        return Gradients(grads, g[0] if squeeze else g)

    def copy(self) -> "DenseNet":
        new = DenseNet.__new__(DenseNet)
        new.layers = [Layer(l.W.copy(), l.b.copy(), l.activation) for l in self.layers]
        return new

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {flat.size}")
        k = 0
        for p in self.params:
            p[...] = flat[k:k + p.size].reshape(p.shape)
            k += p.size

    def load_state(self, other: "DenseNet") -> None:
        for p, q in zip(self.params, other.params):
            p[...] = q

    def header(self) -> dict:
        return {"sizes": self.sizes, "activations": self.activations}

    @classmethod
    def from_header(cls, header: dict) -> "DenseNet":
        return cls(header["sizes"], activations=header["activations"])


def grad(net: DenseNet, loss_fn: Callable[[np.ndarray], tuple[float, np.ndarray]],
         x: np.ndarray) -> tuple[float, Gradients]:
    """Gradient of ``loss_fn(net(x))`` w.r.t. every parameter and the input.

    ``loss_fn`` maps the network output to ``(loss, d loss / d output)``.
    """
    out, cache = net.forward_cache(x)
    loss, dout = loss_fn(out)
    return loss, net.backward(cache, dout)


class Adam:
    """Bias-corrected adaptive-moment optimizer updating arrays in place."""

    def __init__(self, params: Sequence[np.ndarray], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        if len(params) != len(self.m):
            raise ValueError("parameter list does not match optimizer state")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        step = self.lr * math.sqrt(c2) / c1
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= step * m / (np.sqrt(v) + self.eps * math.sqrt(c2))

    def state_arrays(self, prefix: str) -> dict[str, np.ndarray]:
        out = {f"{prefix}.t": np.array([self.t], dtype=np.float64)}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"{prefix}.m{i}"] = m
            out[f"{prefix}.v{i}"] = v
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], prefix: str) -> None:
        self.t = int(arrays[f"{prefix}.t"][0])
        for i in range(len(self.m)):
            self.m[i][...] = arrays[f"{prefix}.m{i}"]
            self.v[i][...] = arrays[f"{prefix}.v{i}"]


# -- Gaussian heads ---------------------------------------------------------

def squash_log_std(raw: np.ndarray, lo: float = LOG_STD_MIN,
                   hi: float = LOG_STD_MAX) -> tuple[np.ndarray, np.ndarray]:
    """Map an unbounded output into ``(lo, hi)``; returns ``(log_std, dlog_std/draw)``.

    A shifted sigmoid keeps the map smooth and sends ``raw = 0`` to ``log_std = 0``.
    """
    width = hi - lo
    offset = math.log(-lo / hi) if lo < 0 < hi else 0.0
    sig = 0.5 * (1.0 + np.tanh(0.5 * (raw + offset)))
    return lo + width * sig, width * sig * (1.0 - sig)


class GaussianHead:
    """Splits a ``2 d`` output into a mean and a clamped log standard deviation."""

    def __init__(self, dim: int, lo: float = LOG_STD_MIN, hi: float = LOG_STD_MAX):
        self.dim = dim
        self.lo = lo
        self.hi = hi

    def __call__(self, out: np.ndarray):
        d = self.dim
        mean = out[..., :d]
        log_std, draw = squash_log_std(out[..., d:2 * d], self.lo, self.hi)
        return mean, log_std, draw

    @staticmethod
    def backward(dmean: np.ndarray, dlog_std: np.ndarray, draw: np.ndarray) -> np.ndarray:
        return np.concatenate([dmean, dlog_std * draw], axis=-1)


def gaussian_nll(mean: np.ndarray, log_std: np.ndarray, y: np.ndarray):
    """Diagonal Gaussian negative log-likelihood, summed over dims, averaged over batch.

    Returns ``(loss, dmean, dlog_std)``.
    """
    n = mean.shape[0] if mean.ndim > 1 else 1
    inv_var = np.exp(-2.0 * log_std)
    diff = mean - y
    per = 0.5 * diff * diff * inv_var + log_std + 0.5 * LOG_2PI
    loss = per.sum() / n
    dmean = diff * inv_var / n
    dlog_std = (1.0 - diff * diff * inv_var) / n
    return float(loss), dmean, dlog_std


def _log1m_tanh_sq(u):
    # log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u)), stable for large |u|
    return 2.0 * (math.log(2.0) - u - np.logaddexp(0.0, -2.0 * u))


@dataclass
class TanhGaussianSample:
    action: np.ndarray
    logp: np.ndarray
    u: np.ndarray
    eps: np.ndarray
    std: np.ndarray
    scale: np.ndarray


def tanh_gaussian_sample(mean: np.ndarray, log_std: np.ndarray, low: np.ndarray,
                         high: np.ndarray, rng: np.random.Generator | None = None,
                         eps: np.ndarray | None = None) -> TanhGaussianSample:
    """Reparameterized sample ``a = c + s tanh(mean + std * eps)`` with its log-density.

    ``low``/``high`` are the per-dimension action bounds; ``c`` and ``s`` are
    their midpoint and half-width. ``log_prob`` includes the tanh and affine
    change-of-variables terms, summed over action dimensions.
    """
    if eps is None:
        eps = rng.standard_normal(np.shape(mean))
    std = np.exp(log_std)
    u = mean + std * eps
    low = np.asarray(low, dtype=np.float64)
    high = np.asarray(high, dtype=np.float64)
    scale = 0.5 * (high - low)
    action = 0.5 * (high + low) + scale * np.tanh(u)
    logp = (-0.5 * eps * eps - log_std - 0.5 * LOG_2PI - _log1m_tanh_sq(u)
            - np.log(scale)).sum(axis=-1)
    return TanhGaussianSample(action, logp, u, eps, std, scale)


def tanh_gaussian_backward(sample: TanhGaussianSample, d_action: np.ndarray | None,
                           d_logp: np.ndarray | None) -> tuple[np.ndarray, np.ndarray]:
    """Gradients w.r.t. ``mean`` and ``log_std`` with the noise held fixed."""
    t = np.tanh(sample.u)
    dmean = np.zeros_like(sample.u)
    dlog_std = np.zeros_like(sample.u)
    if d_logp is not None:
        dl = np.asarray(d_logp)[..., None]
        # d logp / du = 2 tanh(u); d logp / dlog_std has an extra explicit -1
        dmean += dl * 2.0 * t
        dlog_std += dl * (2.0 * t * sample.std * sample.eps - 1.0)
    if d_action is not None:
        du = d_action * sample.scale * (1.0 - t * t)
        dmean += du
        dlog_std += du * sample.std * sample.eps
    return dmean, dlog_std


# -- checkpoints ------------------------------------------------------------

def save_nets(path: str | Path, nets: dict[str, DenseNet], extra: dict[str, np.ndarray] | None = None,
              meta: dict | None = None) -> None:
    """Store networks as flat parameter vectors plus a JSON shape header.

    Each network ``name`` becomes one array (``W`` row-major ``(in, out)``
    then ``b``, layer by layer) and its ``sizes``/``activations`` go into
    ``meta["nets"][name]``.
    """
    arrays = {name: net.get_flat() for name, net in nets.items()}
    if extra:
        arrays.update(extra)
    header = dict(meta or {})
    header["nets"] = {name: net.header() for name, net in nets.items()}
    write_arrays(path, arrays, header)


def load_nets(path: str | Path) -> tuple[dict[str, DenseNet], dict[str, np.ndarray], dict]:
    arrays, meta = read_arrays(path)
    nets = {}
    for name, header in meta["nets"].items():
        net = DenseNet.from_header(header)
        net.set_flat(arrays.pop(name))
        nets[name] = net
    return nets, arrays, meta
