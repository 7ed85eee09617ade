"""Train a model from scratch on GP tasks at one input dimension and report
context/target predictive metrics.

Desk-scale defaults finish on a laptop CPU in a few minutes:

    python3 scripts/gp_regression.py --dim 1 --steps 5000 --out-dir runs/rbf1d
"""

import argparse
import json
import time
from pathlib import Path

import numpy as np

from danp.checkpoint import checkpoint_save
from danp.model import ModelConfig
from danp.objective import TrainSpec, aggregate_reports, evaluate_task, train
from danp.taskgen import build_scenario
from danp.tasks import STREAM_EVAL_TASKS, derive_seed


def desk_model() -> ModelConfig:
    return ModelConfig(d_r=16, det_hidden=64, det_layers=3, det_heads=4,
                       lat_hidden=32, lat_mlp_hidden=64, lat_mlp_layers=2)


def evaluate(suite, params, config, count, K, seed):
    reports = []
    for i in range(count):
        rng = np.random.default_rng(derive_seed(seed, STREAM_EVAL_TASKS + i))
        reports.append(evaluate_task(suite.stream.task(i), params, config, K, rng))
    return aggregate_reports(reports)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dim", type=int, default=1)
    ap.add_argument("--d_y", type=int, default=1)
    ap.add_argument("--family", default="rbf", choices=["rbf", "matern52"])
    ap.add_argument("--steps", type=int, default=5000)
    ap.add_argument("--batch", type=int, default=16)
    ap.add_argument("--lr", type=float, default=3e-3)
    ap.add_argument("--warmup", type=int, default=300)
    ap.add_argument("--clip", type=float, default=1.0)
    ap.add_argument("--elbo-samples", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--eval-tasks", type=int, default=200)
    ap.add_argument("--K", type=int, default=50)
    ap.add_argument("--out-dir", default="runs/gp_regression")
    args = ap.parse_args()

    config = desk_model()
    spec = TrainSpec(total_steps=args.steps, batch_size=args.batch,
                     base_lr=args.lr, seed=args.seed,
                     warmup_steps=args.warmup, clip_norm=args.clip,
                     elbo_latent_samples=args.elbo_samples)
    scenario = build_scenario("from_scratch", seed=args.seed, d_x=args.dim,
                              d_y=args.d_y, family=args.family)

    t0 = time.time()
    params, curve = train(scenario.train_stream, config, spec)
    print(f"trained {args.steps} steps in {time.time() - t0:.0f}s "
          f"(final loss {curve[-1][2]:.4f})")

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    checkpoint_save(str(out / "model.ckpt"), params, config,
                    seed=args.seed, step=args.steps)

    metrics = evaluate(scenario.eval_suites[0], params, config,
                       args.eval_tasks, args.K, seed=args.seed + 1)
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True))
    for key in ("context_ll", "target_ll", "crps_target", "mace", "miscal_area"):
        m = metrics[key]
        print(f"{key:>14}: {m['mean']:+.4f} +- {m['std']:.4f}")
    print(f"artifacts: {out}/model.ckpt, metrics.json")


if __name__ == "__main__":
    main()
