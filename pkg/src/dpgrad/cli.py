"""Command-line entry point: generate instances, run learners, play the
adversary game, and pretty-print summaries.

One JSON config per job; unknown keys are rejected so typos fail loudly. Exit
status encodes the verdict so CI can chain jobs without parsing output:
0 = success / acceptance condition met, 1 = run finished but the acceptance
condition failed (non-convergence, forgetting above epsilon, or a grid point
at or below the adversary bar), 2 = bad usage, config, or I/O.

Output files never contain timestamps, so identical (config, seed) pairs
produce byte-identical files; wall-clock time goes to stdout only.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import baselines, environments, learner, lowerbound
from .environments import InfeasibleInstanceError
from .factorization import Hyperparams, ProblemDims
from .lowerbound import GameConfig


class ConfigError(ValueError):
    pass


_RUN_KEYS = {
    "d": int,
    "r": int,
    "k": int,
    "D": float,
    "nu": float,
    "novel_schedule": list,
    "seed": int,
    "epsilon": float,
    "mode": str,
    "method": str,
    "snapshot_every": int,
    "out": str,
    "sigma": float,
    "eta": float,
    "t_max": int,
    "stop_target": float,
}
_RUN_REQUIRED = ("d", "r", "k", "D", "nu", "novel_schedule", "seed")

_GAME_KEYS = {
    "v1_range": float,
    "v1_resolution": float,
    "n_starts": int,
    "gd_iters": int,
    "refine_iters": int,
    "seed": int,
    "epsilon_bar": float,
    "out": str,
}


def _load_config(path, allowed: dict, required=()) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(cfg) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    missing = sorted(set(required) - set(cfg))
    if missing:
        raise ConfigError(f"missing config keys: {', '.join(missing)}")
    for key, value in cfg.items():
        want = allowed[key]
        if want is float and isinstance(value, (int, float)) and not isinstance(value, bool):
            continue
        if want is int and isinstance(value, bool):
            raise ConfigError(f"config key {key!r} must be {want.__name__}")
        if not isinstance(value, want):
            raise ConfigError(f"config key {key!r} must be {want.__name__}")
    return cfg


def _out_dir(cfg: dict, args) -> Path:
    out = getattr(args, "out", None) or cfg.get("out")
    if not out:
        raise ConfigError("no output directory: set 'out' in the config or pass --out")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _effective_run_config(cfg: dict, args) -> dict:
    eff = dict(cfg)
    if getattr(args, "seed", None) is not None:
        eff["seed"] = args.seed
    if getattr(args, "method", None) is not None:
        eff["method"] = args.method
    if getattr(args, "mode", None) is not None:
        eff["mode"] = args.mode
    eff.setdefault("epsilon", 1e-3)
    eff.setdefault("mode", "practical")
    eff.setdefault("method", "dpgrad")
    return eff


def _hyperparams(cfg: dict, dims: ProblemDims) -> Hyperparams:
    common = {}
    for key, name in (("sigma", "sigma"), ("eta", "eta"), ("t_max", "t_max"), ("stop_target", "stop_target")):
        if key in cfg:
            common[name] = cfg[key]
    if cfg["mode"] == "theory":
        if common:
            raise ConfigError("sigma/eta/t_max/stop_target cannot be overridden in theory mode")
        return Hyperparams.theory(dims, cfg["D"], cfg["nu"], cfg["epsilon"])
    return Hyperparams.practical(dims, cfg["D"], cfg["nu"], cfg["epsilon"], **common)


def cmd_generate(args) -> int:
    cfg = _load_config(args.config, _RUN_KEYS, _RUN_REQUIRED)
    eff = _effective_run_config(cfg, args)
    out = _out_dir(eff, args)
    dims = ProblemDims(d=eff["d"], r=eff["r"], k=eff["k"])
    rng = np.random.default_rng(eff["seed"])
    gt = environments.generate_instance(dims, eff["D"], eff["nu"], eff["novel_schedule"], rng)
    issues = environments.validate_instance(gt)
    path = out / "instance.json"
    environments.save_instance(path, gt, eff["seed"])
    if issues:
        for issue in issues:
            print(f"validator: {issue}")
        print(f"instance written to {path}: INVALID")
        return 1
    print(f"instance written to {path}: valid (all assumptions verified)")
    return 0


def cmd_run(args) -> int:
    cfg = _load_config(args.config, _RUN_KEYS, _RUN_REQUIRED)
    eff = _effective_run_config(cfg, args)
    out = _out_dir(eff, args)
    try:
        gt, _ = environments.load_instance(args.instance)
    except OSError as exc:
        raise ConfigError(f"cannot read instance {args.instance}: {exc}") from exc
    dims = ProblemDims(d=eff["d"], r=eff["r"], k=eff["k"])
    if (gt.dims, gt.big_d, gt.nu) != (dims, float(eff["D"]), float(eff["nu"])):
        raise ConfigError(
            "instance file does not match the config "
            f"(instance: d={gt.dims.d} r={gt.dims.r} k={gt.dims.k} D={gt.big_d} nu={gt.nu})"
        )
    h = _hyperparams(eff, dims)
    snapshot_every = eff.get("snapshot_every")
    started = time.perf_counter()
    if eff["method"] == "naive":
        _, report = baselines.run_naive(gt, h, eff["seed"], snapshot_every)
    elif eff["method"] == "dpgrad":
        _, report = learner.run_continual(gt, h, eff["seed"], snapshot_every)
    else:
        raise ConfigError(f"method must be 'dpgrad' or 'naive', got {eff['method']!r}")
    elapsed = time.perf_counter() - started
    # The output directory is not an experiment parameter; keep provenance
    # location-independent so identical (config, seed) runs match bytewise.
    provenance = {"config": {k: v for k, v in eff.items() if k != "out"}, "seed": eff["seed"]}
    learner.write_trace_csv(report, out / "trace.csv", provenance)
    summary = learner.write_summary_json(report, out / "summary.json", provenance)
    accepted = summary["all_converged"] and summary["forgetting"]["max_forgetting"] <= eff["epsilon"]
    print(f"wall-clock seconds: {elapsed:.3f}")
    print(
        f"method={eff['method']} converged={summary['all_converged']} "
        f"max_forgetting={summary['forgetting']['max_forgetting']:.3e} "
        f"epsilon={eff['epsilon']:.3e}"
    )
    print(f"outputs: {out / 'trace.csv'}, {out / 'summary.json'}")
    return 0 if accepted else 1


def cmd_lowerbound(args) -> int:
    cfg = _load_config(args.config, _GAME_KEYS)
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    epsilon_bar = cfg.pop("epsilon_bar", 1e-3)
    out = _out_dir(cfg, args)
    cfg.pop("out", None)
    try:
        game_cfg = GameConfig(**cfg)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    if args.witnesses_only:
        witnesses = lowerbound.witness_losses()
        print(json.dumps(witnesses, indent=1, sort_keys=True))
        exact = all(v == 0.0 for pair in witnesses.values() for v in pair.values())
        print(f"witnesses exactly zero: {exact}")
        return 0 if exact else 1

    started = time.perf_counter()
    reports = lowerbound.adversary_game(game_cfg, epsilon_bar)
    elapsed = time.perf_counter() - started
    doc = lowerbound.save_game_reports(out / "lowerbound.json", reports, game_cfg, epsilon_bar)
    summary = doc["summary"]
    print(f"wall-clock seconds: {elapsed:.3f}")
    print(
        f"grid points: {summary['n_grid_points']}, "
        f"min adversary value: {summary['min_adversary_value']:.6e} "
        f"(bar {epsilon_bar:.1e}) at v1={summary['argmin_v1']}"
    )
    print(f"witnesses exactly zero: {summary['witnesses_exact_zero']}")
    print(f"output: {out / 'lowerbound.json'}")
    ok = summary["all_above_bar"] and summary["witnesses_exact_zero"]
    return 0 if ok else 1


def cmd_report(args) -> int:
    try:
        with open(args.summary) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read summary {args.summary}: {exc}") from exc
    print(f"method: {doc.get('method')}")
    print(f"all converged: {doc.get('all_converged')}")
    forgetting = doc.get("forgetting", {})
    print(f"max forgetting: {forgetting.get('max_forgetting'):.6e}")
    print("task  conv  exact  aug  iters  worst_final_loss")
    for task in doc.get("tasks", []):
        worst = max(task["final_losses"])
        print(
            f"{task['task']:>4}  {str(task['converged'])[0]:>4}  "
            f"{str(task['recovered_exact'])[0]:>5}  {str(task['augmented'])[0]:>3}  "
            f"{task['n_iters']:>5}  {worst:.6e}"
        )
    per_task = forgetting.get("per_task", [])
    if per_task:
        print("per-task worst loss after completion: " + ", ".join(f"{x:.3e}" for x in per_task))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dpgrad",
        description="Continual linear-feature learning experiments and the quadratic-feature adversary game.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="generate and validate a synthetic instance")
    gen.add_argument("--config", required=True)
    gen.add_argument("--out", default=None)
    gen.add_argument("--seed", type=int, default=None)
    gen.set_defaults(func=cmd_generate)

    run = sub.add_parser("run", help="run a learner on an instance, write trace + summary")
    run.add_argument("--config", required=True)
    run.add_argument("--instance", required=True)
    run.add_argument("--out", default=None)
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--method", choices=("dpgrad", "naive"), default=None)
    run.add_argument("--mode", choices=("theory", "practical"), default=None)
    run.set_defaults(func=cmd_run)

    game = sub.add_parser("lowerbound", help="play the commit-then-adversary game over the prompt grid")
    game.add_argument("--config", required=True)
    game.add_argument("--out", default=None)
    game.add_argument("--seed", type=int, default=None)
    game.add_argument("--witnesses-only", action="store_true")
    game.set_defaults(func=cmd_lowerbound)

    rep = sub.add_parser("report", help="pretty-print a summary JSON")
    rep.add_argument("summary")
    rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InfeasibleInstanceError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
