"""Train one model on a mix of input dimensions, then evaluate it across a
sweep of dimensions it never saw.

    python3 scripts/zero_shot_transfer.py --train-dims 2,3 --eval-dims 1,2,3,4
"""

import argparse
import json
import time
from pathlib import Path

import numpy as np

from danp.checkpoint import checkpoint_save
from danp.model import ModelConfig, init_params
from danp.objective import TrainSpec, train
from danp.objective.metrics import normalized_loglik
from danp.taskgen import build_scenario
from danp.tasks import STREAM_EVAL_TASKS, derive_seed


def desk_model() -> ModelConfig:
    return ModelConfig(d_r=16, det_hidden=64, det_layers=3, det_heads=4,
                       lat_hidden=32, lat_mlp_hidden=64, lat_mlp_layers=2)


def target_ll(suite, params, config, count, K, seed):
    vals = []
    for i in range(count):
        rng = np.random.default_rng(derive_seed(seed, STREAM_EVAL_TASKS + i))
        vals.append(normalized_loglik(suite.stream.task(i), params, config, K, rng, "target"))
    return float(np.mean(vals)), float(np.std(vals) / np.sqrt(len(vals)))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--train-dims", default="2,3")
    ap.add_argument("--eval-dims", default="1,2,3,4")
    ap.add_argument("--family", default="rbf", choices=["rbf", "matern52"])
    ap.add_argument("--steps", type=int, default=3000)
    ap.add_argument("--batch", type=int, default=8)
    ap.add_argument("--lr", type=float, default=3e-3)
    ap.add_argument("--warmup", type=int, default=300)
    ap.add_argument("--clip", type=float, default=1.0)
    ap.add_argument("--elbo-samples", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--eval-tasks", type=int, default=100)
    ap.add_argument("--K", type=int, default=50)
    ap.add_argument("--out-dir", default="runs/zero_shot")
    args = ap.parse_args()

    train_dims = tuple(int(d) for d in args.train_dims.split(","))
    eval_dims = tuple(int(d) for d in args.eval_dims.split(","))
    config = desk_model()
    spec = TrainSpec(total_steps=args.steps, batch_size=args.batch,
                     base_lr=args.lr, seed=args.seed,
                     warmup_steps=args.warmup, clip_norm=args.clip,
                     elbo_latent_samples=args.elbo_samples)
    scenario = build_scenario("zero_shot", seed=args.seed, train_dims=train_dims,
                              eval_dims=eval_dims, family=args.family)

    t0 = time.time()
    params, curve = train(scenario.train_stream, config, spec)
    print(f"trained on dims {train_dims} for {args.steps} steps "
          f"in {time.time() - t0:.0f}s (final loss {curve[-1][2]:.4f})")

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    checkpoint_save(str(out / "model.ckpt"), params, config,
                    seed=args.seed, step=args.steps)

    untrained = init_params(config, seed=args.seed + 17)
    rows = {}
    print(f"{'dim':>4} {'target LL':>12} {'untrained':>12} {'seen?':>6}")
    for suite in scenario.eval_suites:
        mean, se = target_ll(suite, params, config, args.eval_tasks, args.K,
                             seed=args.seed + 1)
        base, _ = target_ll(suite, untrained, config, args.eval_tasks, args.K,
                            seed=args.seed + 1)
        seen = "yes" if suite.d_x in train_dims else "no"
        rows[suite.d_x] = {"target_ll": mean, "se": se, "untrained": base, "seen": seen}
        print(f"{suite.d_x:>4} {mean:>+9.4f}+-{se:.3f} {base:>+12.4f} {seen:>6}")
    (out / "transfer.json").write_text(json.dumps(rows, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
