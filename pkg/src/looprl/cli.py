"""Command-line entry point: ``looprl <command> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from contextlib import nullcontext
from dataclasses import replace
from pathlib import Path

from .harness import (
    BEHAVIORS, MODES, ExperimentConfig, TheoryConfig, config_from_dict, config_to_dict,
    desk_config, evaluate, make_dataset, read_jsonl, summarize, theory_check, train_offline,
    train_online,
)

log = logging.getLogger("looprl")


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(d: dict, overrides: list[str]) -> dict:
    """Apply ``a.b=value`` assignments (values parsed as JSON when possible)."""
    d = json.loads(json.dumps(d))
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"override {item!r} is not of the form key=value")
        *path, leaf = key.split(".")
        node = d
        for part in path:
            if not isinstance(node.get(part), dict):
                raise ValueError(f"unknown config section {part!r}")
            node = node[part]
        if leaf not in node:
            raise ValueError(f"unknown config field {key!r}")
        node[leaf] = _parse_value(value)
    return d


def build_config(args, mode: str | None = None) -> ExperimentConfig:
    if args.config:
        base = json.loads(Path(args.config).read_text())
    elif args.preset == "desk":
        base = config_to_dict(desk_config(args.env, mode or args.mode))
    else:
        base = config_to_dict(ExperimentConfig(env=args.env, mode=mode or args.mode))
    if mode is not None:
        base["mode"] = mode
    elif args.mode and not args.config:
        base["mode"] = args.mode
    if args.seed is not None:
        base["seed"] = args.seed
    cfg = config_from_dict(apply_overrides(base, args.set or []))
    cfg.validate()
    return cfg


def _threads(args):
    if not args.single_thread:
        return nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=1)


def _add_common(p: argparse.ArgumentParser, modes: bool = True) -> None:
    p.add_argument("--config", help="JSON experiment config (overrides --preset)")
    p.add_argument("--preset", choices=["paper", "desk"], default="desk",
                   help="built-in sizes: published values or reduced single-core values")
    p.add_argument("--env", default="pendulum", choices=["pendulum", "pointnav"])
    if modes:
        p.add_argument("--mode", default="loop-sac", choices=sorted(MODES))
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config field, e.g. planner.H=5 (repeatable)")
    p.add_argument("--single-thread", action="store_true", help="limit BLAS to one thread")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="looprl", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-online", help="online training in one mode")
    _add_common(p)
    p.add_argument("--resume", action="store_true", help="continue from the last checkpoint")

    p = sub.add_parser("train-offline", help="offline training from a dataset file")
    _add_common(p, modes=False)
    p.add_argument("--dataset", required=True)

    p = sub.add_parser("make-dataset", help="roll a behavior policy into a dataset file")
    p.add_argument("--env", default="pendulum", choices=["pendulum", "pointnav"])
    p.add_argument("--behavior", choices=BEHAVIORS, default="medium")
    p.add_argument("--size", type=int, default=50_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="dataset file path")

    p = sub.add_parser("theory-check", help="tabular check of the lookahead bound")
    p.add_argument("--config", help="JSON TheoryConfig")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--single-thread", action="store_true")

    p = sub.add_parser("eval", help="summarize or re-evaluate a finished run")
    p.add_argument("run", help="run directory")
    p.add_argument("--episodes", type=int, default=0,
                   help="re-run this many evaluation episodes from the saved checkpoint")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _dispatch(args) -> int:
    if args.command == "train-online":
        cfg = build_config(args)
        with _threads(args):
            records = train_online(cfg, args.out, resume=args.resume)
        print(json.dumps(summarize(records)))
        return 0
    if args.command == "train-offline":
        cfg = build_config(args, mode="loop-offline")
        with _threads(args):
            rec = train_offline(cfg, args.dataset, args.out)[0]
        print(json.dumps({"base_return": rec["base_return"], "loop_return": rec["mean_return"]}))
        return 0
    if args.command == "make-dataset":
        if args.size < 1:
            raise ValueError("--size must be >= 1")
        make_dataset(args.env, args.behavior, args.size, args.seed, args.out)
        print(json.dumps({"path": args.out, "size": args.size}))
        return 0
    if args.command == "theory-check":
        tcfg = TheoryConfig()
        if args.config:
            tcfg = TheoryConfig.from_dict(json.loads(Path(args.config).read_text()))
        if args.seed is not None:
            tcfg = replace(tcfg, seed=args.seed)
        with _threads(args):
            report = theory_check(tcfg, args.out)
        print(json.dumps(report))
        return 0 if report["holds"] else 1
    if args.command == "eval":
        return _eval(args)
    raise AssertionError(args.command)


def _eval(args) -> int:
    run = Path(args.run)
    metrics = run / "metrics.jsonl"
    if not metrics.exists():
        raise FileNotFoundError(f"{metrics} not found")
    summary = summarize(read_jsonl(metrics))
    if args.episodes > 0:
        from .dynamics import DynamicsEnsemble
        from .envs import make_env
        from .harness import Agent
        from .sac import ActorCritic

        cfg = config_from_dict(json.loads((run / "config.resolved.json").read_text()))
        env = make_env(cfg.env, **cfg.env_kwargs)
        agent = Agent(cfg, env, None)
        ck = run / "checkpoints"
        if agent.ac is not None:
            agent.ac = ActorCritic.load(ck / "actor_critic.bin")
        if agent.model is not None:
            agent.model = DynamicsEnsemble.load(ck / "ensemble.bin")
        res = evaluate(agent, env, (cfg.seed, 5), args.episodes,
                       planner_mode=agent.planner_cfg is not None)
        summary["eval"] = {k: res[k] for k in ("mean_return", "mean_cost", "divergence")}
    print(json.dumps(summary))
    return 0


if __name__ == "__main__":
    sys.exit(main())
