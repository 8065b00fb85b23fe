#!/usr/bin/env python3
"""Generate synthetic two-stain slides and patch sets for experiments.

Writes `slide_<k>.png` full slides plus `patches/<site>/p<k>.png` patch trees
for two simulated sites with different stain matrices, so the classical
normalizers and the evaluate subcommand can be exercised end to end without
any clinical data.
"""

import argparse
import os
import sys

import numpy as np

sys.path.insert(0, "tests")

from conftest import random_stain_matrix, render_stain_image, synth_concentrations
from stainnorm.imaging import write_image


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out", help="output directory")
    ap.add_argument("--slides", type=int, default=2)
    ap.add_argument("--slide-side", type=int, default=1000)
    ap.add_argument("--patches", type=int, default=8)
    ap.add_argument("--patch-side", type=int, default=256)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    os.makedirs(args.out, exist_ok=True)

    site_a = random_stain_matrix(rng)
    site_b = random_stain_matrix(rng)

    for k in range(args.slides):
        s = synth_concentrations(rng, args.slide_side**2)
        slide = render_stain_image(site_a, s, args.slide_side, args.slide_side)
        write_image(slide, os.path.join(args.out, f"slide_{k}.png"))

    for site, v in (("site_a", site_a), ("site_b", site_b)):
        patch_dir = os.path.join(args.out, "patches", site)
        os.makedirs(patch_dir, exist_ok=True)
        for k in range(args.patches):
            s = synth_concentrations(rng, args.patch_side**2)
            patch = render_stain_image(v, s, args.patch_side, args.patch_side)
            write_image(patch, os.path.join(patch_dir, f"p{k}.png"))

    print(f"wrote {args.slides} slides and 2x{args.patches} patches under {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
