#!/usr/bin/env python3
"""Build a random, format-valid weight archive for CLI experimentation.

The tensors are random (spectrally normalized so the archive loads), so the
generator output is arbitrary color soup; useful for exercising `infer` and
the saasn pipeline plumbing without a trained checkpoint.
"""

import argparse
import sys

sys.path.insert(0, "tests")

import numpy as np

from stainnorm.weights_io import (
    NetworkArch,
    apply_spectral_normalization,
    save_weights,
    weights_from_tensors,
)


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out", help="output archive path, e.g. reference.saw")
    ap.add_argument("--depth", type=int, default=3)
    ap.add_argument("--base-channels", type=int, default=16)
    ap.add_argument("--channel-cap", type=int, default=64)
    ap.add_argument("--attention-min-res", type=int, default=32)
    ap.add_argument("--disc-base-channels", type=int, default=16)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    from conftest import random_weight_tensors

    arch = NetworkArch(
        depth=args.depth,
        base_channels=args.base_channels,
        channel_cap=args.channel_cap,
        attention_min_res=args.attention_min_res,
        disc_base_channels=args.disc_base_channels,
    )
    rng = np.random.default_rng(args.seed)
    raw = weights_from_tensors(random_weight_tensors(arch, rng), check_spectral=False)
    weights = apply_spectral_normalization(raw)
    save_weights(weights, args.out)
    print(f"wrote {len(weights.tensors)} tensors -> {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
