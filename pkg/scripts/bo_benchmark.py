"""Bayesian-optimization benchmark: a pretrained surrogate against random
search on a synthetic objective, mean final regret over repeated runs.

    python3 scripts/bo_benchmark.py --ckpt runs/rbf2d/model.ckpt \
        --objective cosine --dim 2 --iters 50 --repeats 10
"""

import argparse
import json
from pathlib import Path

import numpy as np

from danp.bo import bo_loop, make_objective, model_surrogate, regret
from danp.checkpoint import checkpoint_load
from danp.tasks import STREAM_BO, derive_seed


def repeated_runs(objective_name, dim, iters, repeats, seed, surrogate_for):
    finals, normalized_finals = [], []
    for r in range(repeats):
        run_seed = derive_seed(seed, STREAM_BO + r)
        obj = make_objective(objective_name, dim, seed=derive_seed(run_seed, 1))
        run = bo_loop(obj, surrogate_for(run_seed), iters=iters, seed=run_seed)
        simple, _, normalized = regret(run, obj)
        finals.append(simple[-1])
        normalized_finals.append(normalized[-1])
    return (float(np.mean(finals)), float(np.std(finals)),
            float(np.mean(normalized_finals)))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--ckpt", required=True, help="surrogate checkpoint")
    ap.add_argument("--objective", default="cosine",
                    choices=["ackley", "cosine", "rastrigin", "gp_sample"])
    ap.add_argument("--dim", type=int, default=2)
    ap.add_argument("--iters", type=int, default=50)
    ap.add_argument("--repeats", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out-dir", default="runs/bo")
    args = ap.parse_args()

    params, config, _ = checkpoint_load(args.ckpt)

    results = {}
    for name, factory in [
        ("model", lambda s: model_surrogate(params, config, seed=s)),
        ("random", lambda s: None),
    ]:
        mean, std, norm = repeated_runs(args.objective, args.dim, args.iters,
                                        args.repeats, args.seed, factory)
        results[name] = {"final_simple_regret": mean, "std": std,
                         "final_normalized_regret": norm}
        print(f"{name:>7}: final simple regret {mean:.4f} +- {std:.4f} "
              f"(normalized {norm:.4f})")

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{args.objective}_d{args.dim}.json").write_text(
        json.dumps(results, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
