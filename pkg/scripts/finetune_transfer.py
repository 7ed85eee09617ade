"""Adapt a pretrained checkpoint to a new input dimension on a small fixed
task list, comparing full fine-tuning against encoder-frozen fine-tuning.

    python3 scripts/finetune_transfer.py --ckpt runs/zero_shot/model.ckpt --dim 1
"""

import argparse
import json
from pathlib import Path

import numpy as np

from danp.checkpoint import checkpoint_load, checkpoint_save
from danp.objective import TrainSpec, finetune
from danp.objective.metrics import normalized_loglik
from danp.taskgen import build_scenario
from danp.tasks import STREAM_EVAL_TASKS, derive_seed


def target_ll(suite, params, config, count, K, seed):
    vals = []
    for i in range(count):
        rng = np.random.default_rng(derive_seed(seed, STREAM_EVAL_TASKS + i))
        vals.append(normalized_loglik(suite.stream.task(i), params, config, K, rng, "target"))
    return float(np.mean(vals))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--ckpt", required=True)
    ap.add_argument("--dim", type=int, default=1)
    ap.add_argument("--family", default="rbf", choices=["rbf", "matern52"])
    ap.add_argument("--task-count", type=int, default=160)
    ap.add_argument("--steps", type=int, default=500)
    ap.add_argument("--batch", type=int, default=4)
    ap.add_argument("--lr", type=float, default=3e-4)
    ap.add_argument("--warmup", type=int, default=50)
    ap.add_argument("--clip", type=float, default=1.0)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--eval-tasks", type=int, default=100)
    ap.add_argument("--K", type=int, default=50)
    ap.add_argument("--out-dir", default="runs/finetune")
    args = ap.parse_args()

    params, config, _ = checkpoint_load(args.ckpt)
    spec = TrainSpec(total_steps=args.steps, batch_size=args.batch,
                     base_lr=args.lr, seed=args.seed,
                     warmup_steps=args.warmup, clip_norm=args.clip)
    scenario = build_scenario("fine_tune", seed=args.seed, d_x=args.dim,
                              family=args.family, task_count=args.task_count)
    suite = scenario.eval_suites[0]

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results = {"zero_shot": target_ll(suite, params, config, args.eval_tasks,
                                      args.K, args.seed + 1)}
    print(f"zero-shot target LL at dim {args.dim}: {results['zero_shot']:+.4f}")

    for mode in ("full", "freeze"):
        tuned, curve = finetune(params, scenario.finetune_tasks, mode, config, spec)
        ll = target_ll(suite, tuned, config, args.eval_tasks, args.K, args.seed + 1)
        results[mode] = ll
        checkpoint_save(str(out / f"{mode}.ckpt"), tuned, config,
                        seed=args.seed, step=args.steps)
        enc_same = all(np.array_equal(params[k].data, tuned[k].data)
                       for k in params.encoder_keys)
        print(f"{mode:>6}: target LL {ll:+.4f} "
              f"(delta {ll - results['zero_shot']:+.4f}, "
              f"encoder {'frozen' if enc_same else 'moved'})")
    (out / "finetune.json").write_text(json.dumps(results, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
