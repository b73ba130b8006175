"""Experiment orchestration: online and offline training loops, evaluation,
metrics, checkpoints and the tabular bound check.

Every run writes into one output directory::

    config.resolved.json   the full configuration actually used
    metrics.jsonl          one JSON object per evaluation point
    timing.jsonl           wall-clock per evaluation point (kept apart so that
                           metrics.jsonl is bit-identical across seeded runs)
    checkpoints/           networks, optimizer states, buffer and loop state
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import numpy as np

from .core import ReplayBuffer, Transition
from .dynamics import DynamicsEnsemble
from .envs import make_env, make_offline_dataset, medium_policy, pendulum_expert, random_policy
from .planner import Planner, PlannerConfig, SafeConfig, SequenceDistribution
from .sac import ActorCritic, LossInfo, SACConfig
from .tabular import (
    BoundInputs, greedy_bound, optimal_values, random_mdp, run_trial, theorem1_bound,
    trust_region_tv_check,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ModeSpec:
    model: bool
    learner: str | None  # "sac", "sarsa", "offline" or None
    planner: str | None  # "arc", "cem", "safe" or None


MODES = {
    "loop-sac": ModeSpec(True, "sac", "arc"),
    "sac-only": ModeSpec(False, "sac", None),
    "pets-restricted": ModeSpec(True, None, "cem"),
    "loop-sarsa": ModeSpec(True, "sarsa", "arc"),
    "loop-cem": ModeSpec(True, "sac", "cem"),
    "safe-loop": ModeSpec(True, "sac", "safe"),
    "loop-offline": ModeSpec(True, "offline", "arc"),
}


@dataclass
class ModelConfig:
    k: int = 5
    hidden: tuple = (200, 200, 200, 200)
    lr: float = 1e-3
    retrain_every: int = 250
    max_epochs: int = 100
    patience: int = 5
    batch_size: int = 256
    holdout: float = 0.1
    max_updates: int | None = None  # per member and fit
    reward_weight: float = 100.0


@dataclass
class ExperimentConfig:
    env: str = "pendulum"
    env_kwargs: dict = field(default_factory=dict)
    mode: str = "loop-sac"
    seed: int = 0
    total_steps: int = 30_000
    seed_steps: int = 1000
    eval_interval: int = 1000
    eval_episodes: int = 5
    buffer_capacity: int = 100_000
    stop_return: float | None = None  # stop once an evaluation reaches this mean return
    checkpoint_interval: int = 0  # 0: only at the end
    safe_d0: float = 0.0
    safe_m: int = 10
    offline_updates: int = 20_000
    offline_bc_weight: float = 30.0  # keeps the actor near the data against Q-scale gradients
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    sac: SACConfig = field(default_factory=SACConfig)
    model: ModelConfig = field(default_factory=ModelConfig)

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; choose from {sorted(MODES)}")
        if self.total_steps < 0 or self.seed_steps < 0:
            raise ValueError("step counts must be >= 0")
        if self.eval_interval < 1 or self.eval_episodes < 1:
            raise ValueError("eval_interval and eval_episodes must be >= 1")
        if self.model.retrain_every < 1 or self.model.k < 2:
            raise ValueError("model needs retrain_every >= 1 and k >= 2")
        if self.sac.gamma != self.planner.gamma:
            raise ValueError("planner and learner discounts differ")
        env = make_env(self.env, **self.env_kwargs)
        if self.mode == "safe-loop" and not env.spec.has_cost:
            raise ValueError(f"safe-loop needs an environment with costs, {self.env} has none")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")


# -- config (de)serialization -------------------------------------------------

_NESTED = {"planner": PlannerConfig, "sac": SACConfig, "model": ModelConfig}


def config_to_dict(cfg: ExperimentConfig) -> dict:
    d = asdict(cfg)
    for key in ("sac", "model"):
        d[key]["hidden"] = list(d[key]["hidden"])
    return d


def config_from_dict(d: dict) -> ExperimentConfig:
    d = dict(d)
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown config fields {sorted(unknown)}")
    for key, cls in _NESTED.items():
        if key in d and isinstance(d[key], dict):
            sub = dict(d[key])
            bad = set(sub) - {f.name for f in fields(cls)}
            if bad:
                raise ValueError(f"unknown {key} fields {sorted(bad)}")
            if "hidden" in sub:
                sub["hidden"] = tuple(sub["hidden"])
            d[key] = cls(**sub)
    return ExperimentConfig(**d)


def load_config(path: str | Path) -> ExperimentConfig:
    return config_from_dict(json.loads(Path(path).read_text()))


def desk_config(env: str = "pendulum", mode: str = "loop-sac", seed: int = 0, **overrides) -> ExperimentConfig:
    """Reduced sizes that keep a run within minutes on one CPU core.

    The planner keeps the published horizon, mixture and temperature values;
    population, particles, members and network widths shrink. Smoothing uses
    ``alpha=0.9`` (90% of each refit goes to the new estimate).
    """
    planner = PlannerConfig(H=3, N=50, P=2, iterations=3, alpha=0.9, sigma_prior=0.5)
    model = ModelConfig(k=3, hidden=(64, 64), retrain_every=250, max_epochs=20, patience=3,
                        batch_size=256, max_updates=400)
    sac = SACConfig(hidden=(128, 128), batch_size=128)
    cfg = ExperimentConfig(env=env, mode=mode, seed=seed, total_steps=10_000, seed_steps=1000,
                           eval_interval=1000, planner=planner, sac=sac, model=model)
    if env == "pointnav":
        cfg.seed_steps = 300
        cfg.eval_interval = 500
        # per-step rewards are ~0.1 here, so start with a small entropy bonus
        cfg.sac = replace(cfg.sac, init_alpha=0.1)
        cfg.env_kwargs = {"action_repeat": 2}
    if mode == "safe-loop":
        cfg.planner = replace(cfg.planner, H=8, iterations=5)
    if mode == "loop-offline":
        cfg.planner = replace(cfg.planner, beta=1.0, iterations=1, H=2, actor_noise=0.1,
                              lambda_pess=1.0, kappa=10.0)
        cfg.model = replace(cfg.model, max_epochs=200, patience=10, max_updates=None)
    for key, value in overrides.items():
        if not hasattr(cfg, key):
            raise ValueError(f"unknown config field {key!r}")
        setattr(cfg, key, value)
    return cfg


def effective_planner(cfg: ExperimentConfig) -> PlannerConfig:
    """The planner settings implied by the mode."""
    spec = MODES[cfg.mode]
    p = replace(cfg.planner, gamma=cfg.sac.gamma)
    if spec.planner == "cem":
        p = replace(p, method="cem", beta=0.0)
    if spec.learner is None:
        p = replace(p, terminal="none", beta=0.0)
    if spec.learner == "offline":
        p = replace(p, beta=1.0)
    return p


# -- metrics ------------------------------------------------------------------

class JsonlWriter:
    def __init__(self, path: Path | None, append: bool = False):
        self.path = path
        if path is not None and not append:
            path.write_text("")

    def write(self, record: dict) -> None:
        if self.path is None:
            return
        with self.path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
            fh.flush()


def read_jsonl(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def summarize(records: list[dict]) -> dict:
    """Summary statistics of a metrics stream (used to check schema round-trips)."""
    if not records:
        return {"n": 0}
    rets = [r["mean_return"] for r in records if r.get("mean_return") is not None]
    return {"n": len(records), "last_step": records[-1]["step"],
            "best_return": max(rets) if rets else None,
            "final_return": rets[-1] if rets else None,
            "train_cost": records[-1].get("train_cost")}


@dataclass
class Counters:
    """Invocation counts of each component, for the mode matrix."""

    plan_calls: int = 0
    model_fits: int = 0
    critic_updates: int = 0
    actor_updates: int = 0


def actor_divergence(actor_fn, planner_actions: np.ndarray, states: np.ndarray) -> float:
    """Mean Euclidean distance between planner actions and actor mean actions."""
    states = np.atleast_2d(states)
    if len(states) == 0:
        raise ValueError("need at least one state")
    diff = np.atleast_2d(planner_actions) - np.atleast_2d(actor_fn(states))
    return float(np.linalg.norm(diff, axis=-1).mean())


# -- agents -------------------------------------------------------------------

class Agent:
    """The components a mode uses plus the policies built from them."""

    def __init__(self, cfg: ExperimentConfig, env, rng: np.random.Generator,
                 counters: Counters | None = None):
        self.cfg = cfg
        self.spec = MODES[cfg.mode]
        self.counters = counters or Counters()
        es = env.spec
        self.low, self.high = es.bounds
        self.ac: ActorCritic | None = None
        self.model: DynamicsEnsemble | None = None
        if self.spec.learner is not None:
            sac_cfg = cfg.sac
            if self.spec.learner == "offline":
                sac_cfg = replace(sac_cfg, bc_weight=cfg.offline_bc_weight)
            self.ac = ActorCritic(es.obs_dim, es.act_dim, self.low, self.high, sac_cfg, rng)
        if self.spec.model:
            m = cfg.model
            self.model = DynamicsEnsemble(es.obs_dim, es.act_dim, k=m.k, hidden=m.hidden, lr=m.lr,
                                          rng=rng, reward_weight=m.reward_weight)
        self.planner_cfg = effective_planner(cfg) if self.spec.planner else None
        self.safe = None
        if self.spec.planner == "safe":
            self.safe = SafeConfig(cfg.safe_d0, env.cost_fn, cfg.safe_m)
        self.model_loss = float("nan")
        self.last_loss = None

    def new_planner(self) -> Planner | None:
        if self.planner_cfg is None:
            return None
        return Planner(self.planner_cfg, self.low, self.high, self.safe)

    def actor_mean(self, s: np.ndarray) -> np.ndarray:
        return self.ac.policy(s, deterministic=True)

    def plan(self, planner: Planner, obs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        self.counters.plan_calls += 1
        use_actor = self.ac is not None and planner.cfg.beta > 0
        use_q = planner.cfg.terminal == "q"
        return planner.act(obs, rng, actor=self.actor_mean if use_actor else None,
                           model=self.model, q_fn=self.ac.q_min if use_q else None)

    def fit_model(self, buffer: ReplayBuffer, rng: np.random.Generator, **overrides) -> None:
        m = self.cfg.model
        kw = dict(max_epochs=m.max_epochs, patience=m.patience, holdout=m.holdout,
                  batch_size=m.batch_size, max_updates=m.max_updates)
        kw.update(overrides)
        report = self.model.train(buffer, rng, **kw)
        self.model_loss = report.final_loss
        self.counters.model_fits += 1

    def learn(self, buffer: ReplayBuffer, rng: np.random.Generator) -> None:
        bs = self.ac.config.batch_size
        if self.spec.learner == "sarsa":
            batch = buffer.sample_sarsa(bs, rng)
        else:
            batch = buffer.sample(bs, rng)
        self.last_loss = self.ac.update(batch, rng, sarsa=self.spec.learner == "sarsa")
        self.counters.critic_updates += 1
        self.counters.actor_updates += 1

    def losses(self) -> dict:
        li = self.last_loss
        return {"critic_loss": None if li is None else li.critic,
                "actor_loss": None if li is None else li.actor,
                "alpha": None if li is None else li.alpha,
                "model_loss": None if math.isnan(self.model_loss) else self.model_loss}


def evaluate(agent: Agent, env, key: tuple, episodes: int, planner_mode: bool = True) -> dict:
    """Deterministic-policy evaluation on fresh seed branches ``key + (episode,)``.

    Environment resets and planner noise use separate streams, so two policies
    evaluated under the same key face identical initial states.
    """
    returns, costs, divs = [], [], []
    use_planner = planner_mode and agent.planner_cfg is not None
    for ep in range(episodes):
        env_rng = np.random.default_rng([*key, ep, 0])
        pol_rng = np.random.default_rng([*key, ep, 1])
        obs = env.reset(env_rng)
        planner = agent.new_planner() if use_planner else None
        if planner is not None:
            planner.reset(pol_rng, agent.model.k)
        ret = cost = 0.0
        states, actions = [], []
        while True:
            if planner is not None:
                a = agent.plan(planner, obs, pol_rng)
                states.append(obs)
                actions.append(a)
            else:
                a = agent.actor_mean(obs)
            obs, r, c, done, truncated = env.step(a, env_rng)
            ret += r
            cost += c
            if done or truncated:
                break
        returns.append(ret)
        costs.append(cost)
        if planner is not None and agent.ac is not None:
            divs.append(actor_divergence(agent.actor_mean, np.array(actions), np.array(states)))
    return {"returns": returns, "mean_return": float(np.mean(returns)), "costs": costs,
            "mean_cost": float(np.mean(costs)),
            "divergence": float(np.mean(divs)) if divs else None}


# -- online training ----------------------------------------------------------

class OnlineRun:
    """State of one online training run (Algorithm: act, store, learn, refit)."""

    def __init__(self, cfg: ExperimentConfig, out_dir: str | Path | None = None,
                 counters: Counters | None = None):
        cfg.validate()
        if MODES[cfg.mode].learner == "offline":
            raise ValueError("loop-offline runs through train_offline")
        self.cfg = cfg
        self.out = Path(out_dir) if out_dir is not None else None
        self.env = make_env(cfg.env, **cfg.env_kwargs)
        self.eval_env = make_env(cfg.env, **cfg.env_kwargs)
        init_rng = np.random.default_rng([cfg.seed, 0])
        self.rng = np.random.default_rng([cfg.seed, 1])
        self.agent = Agent(cfg, self.env, init_rng, counters)
        es = self.env.spec
        self.buffer = ReplayBuffer(cfg.buffer_capacity, es.obs_dim, es.act_dim)
        self.planner = self.agent.new_planner()
        self.step = 0
        self.train_cost = 0.0
        self.train_returns: list[float] = []
        self.ep_return = 0.0
        self.stopped = False
        self.records: list[dict] = []
        self.obs = self._new_episode()

    @property
    def counters(self) -> Counters:
        return self.agent.counters

    def _new_episode(self) -> np.ndarray:
        self.ep_return = 0.0
        obs = self.env.reset(self.rng)
        if self.planner is not None:
            self.planner.reset(self.rng, self.agent.model.k)
        return obs

    def act(self, obs: np.ndarray) -> np.ndarray:
        if self.step < self.cfg.seed_steps:
            return self.rng.uniform(self.agent.low, self.agent.high)
        if self.planner is not None:
            return self.agent.plan(self.planner, obs, self.rng)
        return self.agent.ac.policy(obs, self.rng)

    def advance(self) -> None:
        cfg, agent = self.cfg, self.agent
        a = self.act(self.obs)
        nxt, r, c, done, truncated = self.env.step(a, self.rng)
        self.buffer.push(Transition(self.obs, self.env.clip_action(a), r, c, nxt, done))
        self.ep_return += r
        self.train_cost += c
        self.step += 1
        if done or truncated:
            self.train_returns.append(self.ep_return)
            self.obs = self._new_episode()
        else:
            self.obs = nxt
        if (agent.model is not None and self.step >= cfg.seed_steps
                and (self.step - cfg.seed_steps) % cfg.model.retrain_every == 0):
            agent.fit_model(self.buffer, self.rng)
        if agent.ac is not None and self.step >= max(cfg.seed_steps, agent.ac.config.batch_size):
            agent.learn(self.buffer, self.rng)

    def evaluate(self) -> dict:
        res = evaluate(self.agent, self.eval_env, (self.cfg.seed, 2, self.step),
                       self.cfg.eval_episodes)
        rec = {"step": self.step, **res, "train_cost": self.train_cost,
               "train_episodes": len(self.train_returns),
               "train_return": self.train_returns[-1] if self.train_returns else None,
               **self.agent.losses()}
        if self.cfg.stop_return is not None and rec["mean_return"] >= self.cfg.stop_return:
            self.stopped = True
        rec["stopped"] = self.stopped
        return rec

    # -- checkpoints -----------------------------------------------------------

    def save(self) -> None:
        if self.out is None:
            return
        ck = self.out / "checkpoints"
        ck.mkdir(parents=True, exist_ok=True)
        if self.agent.ac is not None:
            self.agent.ac.save(ck / "actor_critic.bin")
        if self.agent.model is not None:
            self.agent.model.save(ck / "ensemble.bin")
        self.buffer.save(ck / "buffer.bin", {"seed": self.cfg.seed, "env": self.cfg.env,
                                              "step": self.step})
        state = {
            "step": self.step, "rng": self.rng.bit_generator.state,
            "env_x": self.env.x.tolist(), "env_t": self.env.t, "obs": self.obs.tolist(),
            "ep_return": self.ep_return, "train_cost": self.train_cost,
            "train_returns": self.train_returns, "stopped": self.stopped,
            "model_loss": self.agent.model_loss,
            "last_loss": None if self.agent.last_loss is None else asdict(self.agent.last_loss),
            "counters": asdict(self.counters),
            "planner": None if self.planner is None or self.planner.prev is None else {
                "mean": self.planner.prev.mean.tolist(), "std": self.planner.prev.std.tolist()},
            "nominal": None if self.planner is None else self.planner.nominal,
        }
        tmp = ck / "state.json.tmp"
        tmp.write_text(json.dumps(state))
        tmp.replace(ck / "state.json")

    def restore(self) -> None:
        ck = self.out / "checkpoints"
        state = json.loads((ck / "state.json").read_text())
        if self.agent.ac is not None:
            self.agent.ac = ActorCritic.load(ck / "actor_critic.bin")
        if self.agent.model is not None:
            self.agent.model = DynamicsEnsemble.load(ck / "ensemble.bin")
        self.buffer = ReplayBuffer.load(ck / "buffer.bin", capacity=self.cfg.buffer_capacity)
        self.step = state["step"]
        self.rng.bit_generator.state = state["rng"]
        self.env.x = np.array(state["env_x"])
        self.env.t = state["env_t"]
        self.obs = np.array(state["obs"])
        self.ep_return = state["ep_return"]
        self.train_cost = state["train_cost"]
        self.train_returns = list(state["train_returns"])
        self.stopped = state["stopped"]
        self.agent.model_loss = state["model_loss"]
        if state["last_loss"] is not None:
            self.agent.last_loss = LossInfo(**state["last_loss"])
        for k, v in state["counters"].items():
            setattr(self.counters, k, v)
        if self.planner is not None:
            self.planner.nominal = state["nominal"]
            p = state["planner"]
            self.planner.prev = None if p is None else SequenceDistribution(p["mean"], p["std"])

    def has_checkpoint(self) -> bool:
        return self.out is not None and (self.out / "checkpoints" / "state.json").exists()


def train_online(cfg: ExperimentConfig, out_dir: str | Path | None = None, resume: bool = False,
                 counters: Counters | None = None) -> list[dict]:
    """Run (or resume) online training; returns the metrics records written."""
    run = OnlineRun(cfg, out_dir, counters)
    out = run.out
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    resumed = resume and run.has_checkpoint()
    if resumed:
        run.restore()
        metrics_path = out / "metrics.jsonl"
        run.records = [r for r in read_jsonl(metrics_path) if r["step"] <= run.step]
        metrics = JsonlWriter(metrics_path)
        for r in run.records:
            metrics.write(r)
    else:
        if out is not None:
            (out / "config.resolved.json").write_text(
                json.dumps(config_to_dict(cfg), indent=2, sort_keys=True))
        metrics = JsonlWriter(None if out is None else out / "metrics.jsonl")
    timing = JsonlWriter(None if out is None else out / "timing.jsonl", append=resumed)
    t0 = time.perf_counter()

    def emit(rec):
        run.records.append(rec)
        metrics.write(rec)
        timing.write({"step": rec["step"], "seconds": time.perf_counter() - t0})
        log.info("step %d return %.1f", rec["step"], rec["mean_return"])

    if not resumed:
        emit(run.evaluate())
    while run.step < cfg.total_steps and not run.stopped:
        run.advance()
        if run.step % cfg.eval_interval == 0:
            emit(run.evaluate())
        if cfg.checkpoint_interval and run.step % cfg.checkpoint_interval == 0:
            run.save()
    run.save()
    return run.records


# -- offline training ---------------------------------------------------------

def train_offline(cfg: ExperimentConfig, dataset: str | Path, out_dir: str | Path | None = None,
                  counters: Counters | None = None) -> list[dict]:
    """Fit the model and a behavior-regularized learner on a fixed dataset, then
    compare the learned actor with lookahead planning around it."""
    if cfg.mode != "loop-offline":
        cfg = replace(cfg, mode="loop-offline")
    cfg.validate()
    path = Path(dataset)
    if not path.exists():
        raise FileNotFoundError(f"dataset {path} does not exist")
    buffer = ReplayBuffer.load(path)
    if len(buffer) == 0:
        raise ValueError(f"dataset {path} is empty")
    env = make_env(cfg.env, **cfg.env_kwargs)
    if (buffer.obs_dim, buffer.act_dim) != (env.spec.obs_dim, env.spec.act_dim):
        raise ValueError("dataset dimensions do not match the environment")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.resolved.json").write_text(
            json.dumps(config_to_dict(cfg), indent=2, sort_keys=True))
    metrics = JsonlWriter(None if out is None else out / "metrics.jsonl")
    timing = JsonlWriter(None if out is None else out / "timing.jsonl")
    t0 = time.perf_counter()
    rng = np.random.default_rng([cfg.seed, 1])
    agent = Agent(cfg, env, np.random.default_rng([cfg.seed, 0]), counters)
    agent.fit_model(buffer, rng)
    bs = agent.ac.config.batch_size
    for _ in range(cfg.offline_updates):
        agent.last_loss = agent.ac.update(buffer.sample(bs, rng), rng)
        agent.counters.critic_updates += 1
        agent.counters.actor_updates += 1
    key = (cfg.seed, 2, cfg.offline_updates)
    base = evaluate(agent, env, key, cfg.eval_episodes, planner_mode=False)
    loop = evaluate(agent, env, key, cfg.eval_episodes, planner_mode=True)
    rec = {"step": cfg.offline_updates, "dataset_size": len(buffer),
           "base_returns": base["returns"], "base_return": base["mean_return"],
           "returns": loop["returns"], "mean_return": loop["mean_return"],
           "divergence": loop["divergence"], **agent.losses()}
    metrics.write(rec)
    timing.write({"step": rec["step"], "seconds": time.perf_counter() - t0})
    if out is not None:
        ck = out / "checkpoints"
        ck.mkdir(exist_ok=True)
        agent.ac.save(ck / "actor_critic.bin")
        agent.model.save(ck / "ensemble.bin")
    return [rec]


# -- datasets -----------------------------------------------------------------

BEHAVIORS = ("random", "medium", "expert")


def make_dataset(env_name: str, behavior: str, n: int, seed: int, path: str | Path,
                 env_kwargs: dict | None = None) -> ReplayBuffer:
    env = make_env(env_name, **(env_kwargs or {}))
    if behavior == "random":
        pol = random_policy(env)
    elif env_name != "pendulum":
        raise ValueError(f"only random data is available for {env_name}")
    elif behavior == "expert":
        pol = pendulum_expert(env)
    elif behavior == "medium":
        pol = medium_policy(env, pendulum_expert(env))
    else:
        raise ValueError(f"unknown behavior {behavior!r}; choose from {BEHAVIORS}")
    buf = make_offline_dataset(env, pol, n, np.random.default_rng([seed, 4]))
    buf.save(path, {"env": env_name, "behavior": behavior, "n": n, "seed": seed})
    return buf


# -- tabular bound check ------------------------------------------------------

@dataclass
class TheoryConfig:
    n_mdps: int = 100
    n_states: int = 6
    n_actions: int = 3
    gamma: float = 0.9
    eps_m: tuple = (0.0, 0.05, 0.1)
    eps_v: tuple = (0.0, 0.5, 1.0)
    horizons: tuple = (1, 2, 3)
    kl_steps: tuple = (0.005, 0.02)
    chain_lengths: tuple = (1, 5)
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TheoryConfig":
        d = dict(d)
        for key in ("eps_m", "eps_v", "horizons", "kl_steps", "chain_lengths"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def theory_check(cfg: TheoryConfig, out_dir: str | Path | None = None) -> dict:
    """Exact-DP check of the H-step performance bound over random MDPs.

    Writes one record per (MDP, eps_m, eps_v, H) to ``theory_report.jsonl``.
    The returned summary also covers the one-step reduction of the bound and
    the Gaussian trust-region chains.
    """
    rng = np.random.default_rng(cfg.seed)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    writer = JsonlWriter(None if out_dir is None else Path(out_dir) / "theory_report.jsonl")
    rows = violations = 0
    zero_gap_rows = 0
    for i in range(cfg.n_mdps):
        mdp = random_mdp(cfg.n_states, cfg.n_actions, cfg.gamma, rng)
        V_star = optimal_values(mdp)
        for em in cfg.eps_m:
            for ev in cfg.eps_v:
                for H in cfg.horizons:
                    rec = run_trial(mdp, V_star, em, ev, H, rng, trial=i)
                    row = {"mdp": i, **rec.as_dict()}
                    writer.write(row)
                    rows += 1
                    violations += not rec.holds
                    zero_gap_rows += rec.gap <= 1e-9
    one_step = max(abs(theorem1_bound(BoundInputs(0.0, ev, 1, cfg.gamma, 1.0, 1.0))
                       - greedy_bound(cfg.gamma, ev)) for ev in cfg.eps_v)
    chains = [trust_region_tv_check(kl, m) for kl in cfg.kl_steps for m in cfg.chain_lengths]
    chains_hold = all(c.holds for c in chains)
    return {"rows": rows, "violations": violations, "zero_gap_rows": zero_gap_rows,
            "one_step_error": one_step, "chains_hold": chains_hold,
            "holds": violations == 0 and chains_hold and one_step <= 1e-12}
