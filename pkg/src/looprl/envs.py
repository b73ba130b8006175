"""Small analytic control tasks and offline dataset generators.

Both environments expose a pure transition on their physical state
(``transition``) and a thin stateful episode wrapper (``reset``/``step``) used
by the training loops. Observations are what agents and models see.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import ReplayBuffer, Transition

Policy = Callable[[np.ndarray, np.random.Generator], np.ndarray]


@dataclass(frozen=True)
class EnvSpec:
    name: str
    obs_dim: int
    act_dim: int
    low: tuple
    high: tuple
    max_steps: int
    has_cost: bool
    reward: str
    cost: str = "none"

    def __post_init__(self):
        if self.obs_dim < 1 or self.act_dim < 1:
            raise ValueError("dims must be positive")
        if len(self.low) != self.act_dim or len(self.high) != self.act_dim:
            raise ValueError("bounds must match the action dimension")
        if any(lo >= hi for lo, hi in zip(self.low, self.high)):
            raise ValueError("need low < high")

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return np.array(self.low, dtype=np.float64), np.array(self.high, dtype=np.float64)


def _wrap(theta):
    """Angle into (-pi, pi]."""
    return np.pi - np.mod(np.pi - theta, 2 * np.pi)


class _Episodic:
    spec: EnvSpec

    def __init__(self):
        self.x: np.ndarray | None = None
        self.t = 0

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self.x = self.initial_state(rng)
        self.t = 0
        return self.observe(self.x)

    def step(self, a: np.ndarray, rng: np.random.Generator | None = None):
        """Advance the episode; returns ``(obs, r, c, done, truncated)``."""
        if self.x is None:
            raise RuntimeError("call reset() first")
        self.x, r, c, done = self.transition(self.x, a, rng)
        self.t += 1
        truncated = not done and self.t >= self.spec.max_steps
        return self.observe(self.x), r, c, done, truncated

    def clip_action(self, a) -> np.ndarray:
        low, high = self.spec.bounds
        a = np.asarray(a, dtype=np.float64).reshape(self.spec.act_dim)
        return np.clip(a, low, high)

    def _check(self, x):
        if not np.all(np.isfinite(x)):
            raise ValueError(f"non-finite state {x}")


def env_step(env, x: np.ndarray, a: np.ndarray, rng: np.random.Generator | None = None):
    """Pure transition ``(x', r, c, done)`` from physical state ``x``."""
    return env.transition(x, a, rng)


class PendulumEnv(_Episodic):
    """Torque-limited swing-up; ``theta = 0`` is upright.

    Physical state is ``(theta, theta_dot)``; observations are
    ``(cos theta, sin theta, theta_dot)``. The reward is charged on the
    pre-step state: ``-(theta^2 + 0.1 theta_dot^2 + 0.001 a^2)``.
    """

    def __init__(self, g: float = 10.0, mass: float = 1.0, length: float = 1.0, dt: float = 0.05,
                 max_torque: float = 2.0, max_speed: float = 8.0, max_steps: int = 200,
                 process_noise: float = 0.0):
        super().__init__()
        self.g, self.mass, self.length, self.dt = g, mass, length, dt
        self.max_torque, self.max_speed = max_torque, max_speed
        self.process_noise = process_noise
        self.spec = EnvSpec("pendulum", 3, 1, (-max_torque,), (max_torque,), max_steps, False,
                            "-(theta^2 + 0.1 theta_dot^2 + 0.001 a^2)")

    def initial_state(self, rng: np.random.Generator) -> np.ndarray:
        return np.array([rng.uniform(-np.pi, np.pi), rng.uniform(-1.0, 1.0)])

    def observe(self, x: np.ndarray) -> np.ndarray:
        return np.array([math.cos(x[0]), math.sin(x[0]), x[1]])

    def energy(self, x: np.ndarray) -> float:
        """Rod energy with inertia ``m l^2 / 3``; the upright rest state has ``m g l / 2``."""
        inertia = self.mass * self.length ** 2 / 3.0
        return 0.5 * inertia * x[1] ** 2 + 0.5 * self.mass * self.g * self.length * math.cos(x[0])

    def transition(self, x, a, rng=None):
        self._check(x)
        u = float(self.clip_action(a)[0])
        th, thdot = float(x[0]), float(x[1])
        th_n = float(_wrap(th))
        r = -(th_n ** 2 + 0.1 * thdot ** 2 + 0.001 * u ** 2)
        acc = 3.0 * self.g / (2.0 * self.length) * math.sin(th) + 3.0 / (self.mass * self.length ** 2) * u
        thdot2 = thdot + acc * self.dt
        if self.process_noise and rng is not None:
            thdot2 += self.process_noise * rng.standard_normal()
        thdot2 = min(max(thdot2, -self.max_speed), self.max_speed)
        th2 = float(_wrap(th + thdot2 * self.dt))
        return np.array([th2, thdot2]), r, 0.0, False

    # vectorized helpers on observations, used by analytic controllers
    @staticmethod
    def angle(obs: np.ndarray) -> np.ndarray:
        return np.arctan2(obs[..., 1], obs[..., 0])


@dataclass
class Hazard:
    center: tuple[float, float]
    radius: float


class PointNavEnv(_Episodic):
    """Point mass driven by bounded acceleration towards a fixed goal.

    State is ``(x, y, vx, vy)``. The reward is the step's decrease in distance
    to the goal plus ``goal_bonus`` when the goal disc is entered (which ends
    the episode). Cost is 1 when the next position lies inside a hazard disc.
    """

    def __init__(self, goal=(1.0, 0.0), hazards: list[Hazard] | None = None, dt: float = 0.1,
                 max_speed: float = 1.5, arena: float = 2.0, goal_radius: float = 0.15,
                 goal_bonus: float = 1.0, action_repeat: int = 1, max_steps: int = 100,
                 start=(-1.0, 0.0), start_jitter: float = 0.1, process_noise: float = 0.0):
        super().__init__()
        self.goal = np.asarray(goal, dtype=np.float64)
        self.hazards = hazards if hazards is not None else [Hazard((0.0, 0.0), 0.35)]
        self.dt, self.max_speed, self.arena = dt, max_speed, arena
        self.goal_radius, self.goal_bonus = goal_radius, goal_bonus
        if action_repeat < 1:
            raise ValueError("action_repeat must be >= 1")
        self.action_repeat = action_repeat
        self.start = np.asarray(start, dtype=np.float64)
        self.start_jitter = start_jitter
        self.process_noise = process_noise
        self._centers = np.array([h.center for h in self.hazards], dtype=np.float64).reshape(-1, 2)
        self._radii = np.array([h.radius for h in self.hazards], dtype=np.float64)
        self.spec = EnvSpec("pointnav", 4, 2, (-1.0, -1.0), (1.0, 1.0), max_steps, True,
                            "distance-to-goal decrease + goal bonus", "1 inside a hazard disc")

    def initial_state(self, rng: np.random.Generator) -> np.ndarray:
        jitter = rng.uniform(-self.start_jitter, self.start_jitter, 2)
        return np.concatenate([self.start + jitter, np.zeros(2)])

    def observe(self, x: np.ndarray) -> np.ndarray:
        return np.array(x, dtype=np.float64)

    def in_hazard(self, pos: np.ndarray) -> np.ndarray:
        """Point-in-disc test for positions ``(..., 2)``."""
        pos = np.asarray(pos, dtype=np.float64)
        d2 = ((pos[..., None, :] - self._centers) ** 2).sum(axis=-1)
        return (d2 < self._radii ** 2).any(axis=-1)

    def cost_fn(self, s: np.ndarray, a: np.ndarray, s_next: np.ndarray) -> np.ndarray:
        """Cost of predicted transitions (batched observations)."""
        return self.in_hazard(np.asarray(s_next)[..., :2]).astype(np.float64)

    def transition(self, x, a, rng=None):
        self._check(x)
        acc = self.clip_action(a)
        pos, vel = np.array(x[:2], dtype=np.float64), np.array(x[2:], dtype=np.float64)
        start_dist = float(np.linalg.norm(pos - self.goal))
        done = False
        for _ in range(self.action_repeat):
            vel = np.clip(vel + acc * self.dt, -self.max_speed, self.max_speed)
            if self.process_noise and rng is not None:
                vel = vel + self.process_noise * rng.standard_normal(2)
            pos = pos + vel * self.dt
            hit = np.abs(pos) > self.arena
            pos = np.clip(pos, -self.arena, self.arena)
            vel[hit] = 0.0
            if np.linalg.norm(pos - self.goal) < self.goal_radius:
                done = True
                break
        r = start_dist - float(np.linalg.norm(pos - self.goal))
        if done:
            r += self.goal_bonus
        c = float(self.in_hazard(pos))
        return np.concatenate([pos, vel]), r, c, done


def make_env(name: str, **kwargs):
    if name == "pendulum":
        return PendulumEnv(**kwargs)
    if name == "pointnav":
        return PointNavEnv(**kwargs)
    raise ValueError(f"unknown environment {name!r}")


# -- behavior policies --------------------------------------------------------

def random_policy(env) -> Policy:
    low, high = env.spec.bounds
    return lambda obs, rng: rng.uniform(low, high)


def pendulum_expert(env: PendulumEnv, k_energy: float = 1.0) -> Policy:
    """Energy pumping far from upright, PD stabilization near it."""
    inertia = env.mass * env.length ** 2 / 3.0
    e_top = 0.5 * env.mass * env.g * env.length

    def act(obs, rng=None):
        th = float(np.arctan2(obs[1], obs[0]))
        thdot = float(obs[2])
        e = 0.5 * inertia * thdot ** 2 + 0.5 * env.mass * env.g * env.length * math.cos(th)
        if abs(th) < 0.5 and abs(thdot) < 3.0:
            u = -(10.0 * th + 2.0 * thdot)
        else:
            u = k_energy * (e_top - e) * (thdot if abs(thdot) > 1e-3 else 1.0)
        return np.clip(np.array([u]), -env.max_torque, env.max_torque)

    return act


def medium_policy(env, expert: Policy, p_random: float = 0.3, noise: float = 0.3) -> Policy:
    """Expert corrupted by Gaussian action noise and occasional uniform actions."""
    low, high = env.spec.bounds
    scale = 0.5 * (high - low)

    def act(obs, rng):
        if rng.random() < p_random:
            return rng.uniform(low, high)
        return np.clip(expert(obs, rng) + noise * scale * rng.standard_normal(len(low)), low, high)

    return act


def make_offline_dataset(env, behavior: Policy, n: int, rng: np.random.Generator) -> ReplayBuffer:
    """Roll ``behavior`` for exactly ``n`` transitions (episodes restart as needed)."""
    if n < 1:
        raise ValueError("need n >= 1")
    buf = ReplayBuffer(n, env.spec.obs_dim, env.spec.act_dim)
    obs = env.reset(rng)
    while len(buf) < n:
        a = env.clip_action(behavior(obs, rng))
        nxt, r, c, done, truncated = env.step(a, rng)
        buf.push(Transition(obs, a, r, c, nxt, done))
        obs = env.reset(rng) if done or truncated else nxt
    return buf


def episode_return(env, policy: Policy, rng: np.random.Generator) -> tuple[float, float]:
    """Undiscounted ``(return, cost)`` of one episode."""
    obs = env.reset(rng)
    ret = cost = 0.0
    while True:
        obs, r, c, done, truncated = env.step(policy(obs, rng), rng)
        ret += r
        cost += c
        if done or truncated:
            return ret, cost
