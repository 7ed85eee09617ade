"""Command-line entry points: train, eval, finetune, bo.

Every command is a pure function of (argv, config file, seed).  Exit codes:
0 ok, 2 config/usage error, 3 numeric abort during training, 4 task/checkpoint
dimension incompatibility.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .bo import (
    DEFAULT_INIT_POINTS,
    DEFAULT_POOL_SIZE,
    OBJECTIVE_NAMES,
    bo_loop,
    make_objective,
    model_surrogate,
    regret,
)
from .checkpoint import CheckpointError, checkpoint_load, checkpoint_save
from .model import ModelConfig
from .objective import TrainSpec, TrainingAbort, aggregate_reports, evaluate_task, finetune, train
from .taskgen import (
    DEFAULT_EVAL_TASKS,
    DEFAULT_FINETUNE_TASKS,
    DEFAULT_NOISE_STD,
    KERNEL_FAMILIES,
    build_scenario,
)
from .tasks import STREAM_BO, STREAM_EVAL_TASKS, derive_seed

log = logging.getLogger("danp.cli")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_DIMS = 4


class ConfigError(ValueError):
    """Bad run config or CLI usage."""


class DimIncompatibilityError(ValueError):
    """Requested dims cannot be served by this checkpoint."""


_SCENARIO_KEYS = {"name", "d_x", "d_y", "family", "train_dims", "eval_dims",
                  "eval_tasks", "task_count", "noise_std"}
_IO_KEYS = {"out", "curve", "report"}


def parse_run_config(path: str, seed_override: int | None = None):
    """(ModelConfig, TrainSpec, scenario dict, io dict) from a JSON file.

    Unknown keys anywhere are errors naming the offending field path.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from None
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path} is not valid JSON: {err}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    unknown = set(raw) - {"model", "train", "scenario", "io"}
    if unknown:
        raise ConfigError(f"{path}: unknown top-level keys {sorted(unknown)}")

    try:
        model = ModelConfig.from_dict(raw.get("model", {}))
    except (ValueError, TypeError) as err:
        raise ConfigError(f"{path}: model: {err}") from None

    train_raw = dict(raw.get("train", {}))
    if seed_override is not None:
        train_raw["seed"] = seed_override
    if "total_steps" not in train_raw:
        raise ConfigError(f"{path}: train.total_steps is required")
    try:
        spec = TrainSpec.from_dict(train_raw)
    except (ValueError, TypeError) as err:
        raise ConfigError(f"{path}: train: {err}") from None

    scenario = dict(raw.get("scenario", {}))
    unknown = set(scenario) - _SCENARIO_KEYS
    if unknown:
        raise ConfigError(f"{path}: scenario: unknown keys {sorted(unknown)}")
    if "name" not in scenario:
        raise ConfigError(f"{path}: scenario.name is required")

    io = dict(raw.get("io", {}))
    unknown = set(io) - _IO_KEYS
    if unknown:
        raise ConfigError(f"{path}: io: unknown keys {sorted(unknown)}")
    return model, spec, scenario, io


def _build_scenario(scenario: dict, seed: int):
    kwargs = dict(scenario)
    name = kwargs.pop("name")
    try:
        return build_scenario(name, seed=seed, **kwargs)
    except (ValueError, TypeError) as err:
        raise ConfigError(f"scenario: {err}") from None


def _run_config_dict(model: ModelConfig, spec: TrainSpec, scenario: dict) -> dict:
    return {"model": model.to_dict(), "train": spec.to_dict(), "scenario": scenario}


def _write_curve(path: Path, curve: list) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "lr", "loss"])
        for step, lr, loss in curve:
            writer.writerow([step, f"{lr:.10g}", f"{loss:.10g}"])


def _thread_count(args) -> int:
    env = os.environ.get("DANP_THREADS")
    if env is not None:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"DANP_THREADS must be an integer, got {env!r}") from None
    else:
        n = args.threads
    if n < 1:
        raise ConfigError(f"thread count must be >= 1, got {n}")
    return n


def _evaluate_suite(suite, params, config, count: int, K: int, seed: int,
                    threads: int) -> dict:
    def one(i: int):
        task = suite.stream.task(i)
        rng = np.random.default_rng(derive_seed(seed, STREAM_EVAL_TASKS + i))
        return evaluate_task(task, params, config, K, rng)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            reports = list(pool.map(one, range(count)))
    else:
        reports = [one(i) for i in range(count)]
    return aggregate_reports(reports)


def cmd_train(args) -> int:
    model, spec, scenario, io = parse_run_config(args.config, args.seed)
    out = Path(args.out or io.get("out") or "")
    if not str(out):
        raise ConfigError("--out (or io.out in the config) is required")
    built = _build_scenario(scenario, spec.seed)
    if built.train_stream is None:
        raise ConfigError(
            f"scenario {built.name!r} has no infinite train stream; use the finetune command"
        )
    log.info("training %s: %d steps, batch %d, lr %g", built.name,
             spec.total_steps, spec.batch_size, spec.base_lr)
    params, curve = train(built.train_stream, model, spec)
    out.parent.mkdir(parents=True, exist_ok=True)
    checkpoint_save(str(out), params, model,
                    run_config=_run_config_dict(model, spec, scenario),
                    seed=spec.seed, step=spec.total_steps)
    curve_path = Path(io.get("curve") or out.parent / "curve.csv")
    _write_curve(curve_path, curve)
    print(f"checkpoint: {out}")
    print(f"curve: {curve_path} ({len(curve)} rows)")
    print(f"final loss: {curve[-1][2]:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        params, config, meta = checkpoint_load(args.ckpt)
    except (OSError, CheckpointError) as err:
        raise ConfigError(str(err)) from None
    try:
        dims = [int(d) for d in args.dims.split(",") if d.strip()]
    except ValueError:
        raise ConfigError(f"--dims must be a comma list of ints, got {args.dims!r}") from None
    if not dims or any(d < 1 for d in dims):
        raise ConfigError(f"--dims must all be >= 1, got {args.dims!r}")
    if config.fixed_dims is not None:
        bad = [d for d in dims if d != config.fixed_dims[0]]
        if bad:
            raise DimIncompatibilityError(
                f"checkpoint has fixed dims {config.fixed_dims}; cannot evaluate dims {bad}"
            )
    d_y = config.fixed_dims[1] if config.fixed_dims is not None else args.d_y
    threads = _thread_count(args)

    results = []
    for d in dims:
        scenario = build_scenario("from_scratch", seed=args.seed, d_x=d, d_y=d_y,
                                  family=args.kernel, eval_tasks=args.tasks,
                                  noise_std=args.noise_std)
        suite = scenario.eval_suites[0]
        metrics = _evaluate_suite(suite, params, config, args.tasks, args.K,
                                  args.seed, threads)
        results.append({"dim": d, "d_y": d_y, "kernel": args.kernel,
                        "tasks": args.tasks, "K": args.K, "metrics": metrics})
        log.info("dim %d: target_ll %.4f +- %.4f", d,
                 metrics["target_ll"]["mean"], metrics["target_ll"]["std"])

    payload = json.dumps(results, indent=2, sort_keys=True)
    if args.report:
        Path(args.report).parent.mkdir(parents=True, exist_ok=True)
        Path(args.report).write_text(payload + "\n", encoding="utf-8")
        print(f"report: {args.report}")
    else:
        print(payload)
    return EXIT_OK


def cmd_finetune(args) -> int:
    model_ignored, spec, scenario, io = parse_run_config(args.config, args.seed)
    try:
        params, config, meta = checkpoint_load(args.ckpt)
    except (OSError, CheckpointError) as err:
        raise ConfigError(str(err)) from None
    built = _build_scenario(scenario, spec.seed)
    if not built.finetune_tasks:
        raise ConfigError(
            f"scenario {built.name!r} has no finite task list; finetune needs 'fine_tune'"
        )
    suite = built.eval_suites[0]
    threads = _thread_count(args)
    count = min(args.tasks, suite.count)

    before = _evaluate_suite(suite, params, config, count, args.K, spec.seed, threads)
    tuned, curve = finetune(params, built.finetune_tasks, args.mode, config, spec)
    after = _evaluate_suite(suite, tuned, config, count, args.K, spec.seed, threads)

    out = Path(args.out or io.get("out") or "")
    if not str(out):
        raise ConfigError("--out (or io.out in the config) is required")
    out.parent.mkdir(parents=True, exist_ok=True)
    checkpoint_save(str(out), tuned, config,
                    run_config=_run_config_dict(config, spec, scenario),
                    seed=spec.seed, step=spec.total_steps)
    curve_path = Path(io.get("curve") or out.parent / "curve.csv")
    _write_curve(curve_path, curve)

    report = {"mode": args.mode, "eval_tasks": count, "K": args.K,
              "before": before, "after": after}
    payload = json.dumps(report, indent=2, sort_keys=True)
    report_path = args.report or io.get("report")
    if report_path:
        Path(report_path).parent.mkdir(parents=True, exist_ok=True)
        Path(report_path).write_text(payload + "\n", encoding="utf-8")
        print(f"report: {report_path}")
    else:
        print(payload)
    print(f"checkpoint: {out}")
    return EXIT_OK


def cmd_bo(args) -> int:
    name = "gp_sample" if args.objective == "random" else args.objective
    surrogate_factory = None
    config = None
    if args.ckpt:
        try:
            params, config, meta = checkpoint_load(args.ckpt)
        except (OSError, CheckpointError) as err:
            raise ConfigError(str(err)) from None
        if config.fixed_dims is not None and config.fixed_dims[0] != args.dim:
            raise DimIncompatibilityError(
                f"checkpoint has fixed dims {config.fixed_dims}; cannot run BO at dim {args.dim}"
            )

        def surrogate_factory(run_seed: int):
            return model_surrogate(params, config, seed=run_seed)

    threads = _thread_count(args)

    def one_repeat(r: int):
        run_seed = derive_seed(args.seed, STREAM_BO + r)
        obj = make_objective(name, args.dim, seed=derive_seed(run_seed, 1))
        surrogate = surrogate_factory(run_seed) if surrogate_factory else None
        run = bo_loop(obj, surrogate, iters=args.iters, init_points=args.init,
                      pool_size=args.pool, seed=run_seed)
        simple, cumulative, normalized = regret(run, obj)
        return run, simple, cumulative, normalized

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(one_repeat, range(args.repeats)))
    else:
        outcomes = [one_repeat(r) for r in range(args.repeats)]

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["run_seed", "objective", "dim", "iter"]
            + [f"query_x{i}" for i in range(args.dim)]
            + ["y", "best", "simple_regret", "cumulative_regret", "normalized_regret"]
        )
        for run, simple, cumulative, normalized in outcomes:
            for i in range(len(run.ys)):
                writer.writerow(
                    [run.seed, args.objective, args.dim, i - run.n_init]
                    + [f"{v:.10g}" for v in run.xs[i]]
                    + [f"{run.ys[i]:.10g}", f"{run.best_trace[i]:.10g}",
                       f"{simple[i]:.10g}", f"{cumulative[i]:.10g}",
                       f"{normalized[i]:.10g}"]
                )
    final = float(np.mean([s[-1] for _, s, _, _ in outcomes]))
    print(f"runs: {args.repeats} -> {out}")
    print(f"mean final simple regret: {final:.6f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="danp",
        description="Dimension-agnostic neural process experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model per a run config")
    p.add_argument("--config", required=True, help="run config JSON")
    p.add_argument("--seed", type=int, default=None, help="override train.seed")
    p.add_argument("--out", default=None, help="checkpoint output path")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on GP task suites")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--dims", required=True, help="comma list of input dims, e.g. 1,5")
    p.add_argument("--kernel", default="rbf", choices=list(KERNEL_FAMILIES))
    p.add_argument("--tasks", type=int, default=DEFAULT_EVAL_TASKS)
    p.add_argument("--K", type=int, default=50, help="latent samples per task")
    p.add_argument("--d_y", type=int, default=1)
    p.add_argument("--noise_std", type=float, default=DEFAULT_NOISE_STD)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", default=None, help="JSON output path (default stdout)")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("finetune", help="adapt a checkpoint on a finite task list")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--mode", required=True, choices=["full", "freeze"])
    p.add_argument("--config", required=True, help="run config JSON (fine_tune scenario)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="tuned checkpoint path")
    p.add_argument("--tasks", type=int, default=200, help="eval tasks for before/after")
    p.add_argument("--K", type=int, default=50)
    p.add_argument("--report", default=None)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(fn=cmd_finetune)

    p = sub.add_parser("bo", help="Bayesian-optimization runs")
    p.add_argument("--ckpt", default=None, help="surrogate checkpoint; omit for random search")
    p.add_argument("--objective", required=True,
                   choices=list(OBJECTIVE_NAMES) + ["random"])
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--iters", type=int, default=50)
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--init", type=int, default=DEFAULT_INIT_POINTS)
    p.add_argument("--pool", type=int, default=DEFAULT_POOL_SIZE)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="regret CSV path")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(fn=cmd_bo)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingAbort as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except DimIncompatibilityError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DIMS


if __name__ == "__main__":
    sys.exit(main())
