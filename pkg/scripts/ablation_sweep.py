"""Desk-scale sweep over the ablation axes: decoder block, upsampler, kernels.

Trains each configuration for a fixed number of steps on the same synthetic
set and prints one row per configuration (DSC, params, FLOPs).  These runs
are far too small to rank architectures; the sweep demonstrates that every
axis is reachable from configuration alone.

Example:
    python scripts/ablation_sweep.py --steps 60
"""

import argparse
import time

from msvseg.data import gen_synthetic_dataset
from msvseg.model import ModelConfig, build_model, count_flops, count_params
from msvseg.tensor import Rng
from msvseg.train import TrainConfig, train_loop


def run_one(name, cfg, samples, steps, seed):
    model = build_model(cfg, Rng(seed))
    tc = TrainConfig(lr=3e-3, weight_decay=1e-4, batch_size=len(samples),
                     max_epochs=100 * steps, max_steps=steps,
                     eval_every=steps, seed=seed)
    t0 = time.time()
    result = train_loop(model, samples, tc)
    print(f"{name:34s} dsc {result.best_dsc:6.3f}   "
          f"params {count_params(model) / 1e6:6.3f}M   "
          f"flops {count_flops(model) / 1e9:6.3f}G   {time.time() - t0:5.1f}s")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--steps", type=int, default=60)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--n", type=int, default=6)
    args = ap.parse_args()

    samples = gen_synthetic_dataset(args.n, 4, 64, Rng(123))
    base = dict(num_classes=4, input_size=(64, 64))

    print("== decoder block x upsampler ==")
    for block in ("vss", "msvss"):
        for up in ("patch_expand", "lkpe"):
            cfg = ModelConfig(decoder_block=block, upsampler=up, **base)
            run_one(f"{block} + {up}", cfg, samples, args.steps, args.seed)

    print("== upsampling methods ==")
    for up in ("transposed_conv", "upsample_block", "patch_expand", "lkpe"):
        cfg = ModelConfig(upsampler=up, **base)
        run_one(up, cfg, samples, args.steps, args.seed)

    print("== multi-scale kernel sets ==")
    for ks in ((1, 3, 5), (3, 5, 7), (1, 3, 5, 7)):
        cfg = ModelConfig(kernel_set=ks, **base)
        run_one(str(list(ks)), cfg, samples, args.steps, args.seed)


if __name__ == "__main__":
    main()
