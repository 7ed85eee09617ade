"""Ablation ladder at a fixed budget: the full model, the same model without
positional encodings in its aggregator, and the fixed-dimension transformer
baseline.  Reports mean +- std target LL over seeds.

    python3 scripts/ablation_ladder.py --dim 2 --steps 2000 --seeds 0,1,2
"""

import argparse
import json
import time
from pathlib import Path

import numpy as np

from danp.model import ModelConfig
from danp.objective import TrainSpec, train
from danp.objective.metrics import normalized_loglik
from danp.taskgen import build_scenario
from danp.tasks import STREAM_EVAL_TASKS, derive_seed


def ladder(dim: int) -> dict:
    base = dict(d_r=16, det_hidden=64, det_layers=3, det_heads=4,
                lat_hidden=32, lat_mlp_hidden=64, lat_mlp_layers=2)
    return {
        "danp": ModelConfig(**base),
        "no_pos": ModelConfig(positional_encoding="none", **base),
        "tnp": ModelConfig(d_r=16, det_hidden=64, det_layers=3, det_heads=4,
                           enable_dab=False, enable_latent=False,
                           fixed_dims=(dim, 1)),
    }


def target_ll(suite, params, config, count, K, seed):
    vals = []
    for i in range(count):
        rng = np.random.default_rng(derive_seed(seed, STREAM_EVAL_TASKS + i))
        vals.append(normalized_loglik(suite.stream.task(i), params, config, K, rng, "target"))
    return float(np.mean(vals))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dim", type=int, default=2)
    ap.add_argument("--family", default="rbf", choices=["rbf", "matern52"])
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--batch", type=int, default=8)
    ap.add_argument("--lr", type=float, default=3e-3)
    ap.add_argument("--warmup", type=int, default=300)
    ap.add_argument("--clip", type=float, default=1.0)
    ap.add_argument("--elbo-samples", type=int, default=4)
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--eval-tasks", type=int, default=100)
    ap.add_argument("--K", type=int, default=50)
    ap.add_argument("--out-dir", default="runs/ablation")
    args = ap.parse_args()

    seeds = [int(s) for s in args.seeds.split(",")]
    results = {}
    for name, config in ladder(args.dim).items():
        lls = []
        for seed in seeds:
            spec = TrainSpec(total_steps=args.steps, batch_size=args.batch,
                             base_lr=args.lr, seed=seed,
                             warmup_steps=args.warmup, clip_norm=args.clip,
                             elbo_latent_samples=args.elbo_samples)
            scenario = build_scenario("from_scratch", seed=seed, d_x=args.dim,
                                      family=args.family)
            t0 = time.time()
            params, _ = train(scenario.train_stream, config, spec)
            ll = target_ll(scenario.eval_suites[0], params, config,
                           args.eval_tasks, args.K, seed + 1)
            lls.append(ll)
            print(f"{name} seed {seed}: target LL {ll:+.4f} "
                  f"({time.time() - t0:.0f}s)")
        results[name] = {"mean": float(np.mean(lls)), "std": float(np.std(lls)),
                         "per_seed": lls}

    print(f"\n{'config':>8} {'target LL':>18}")
    for name, r in results.items():
        print(f"{name:>8} {r['mean']:>+11.4f} +- {r['std']:.4f}")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.json").write_text(json.dumps(results, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
