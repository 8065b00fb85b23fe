"""Command-line surface: normalize, evaluate, extract, stitch, infer, losses.

Exit codes: 0 success, 1 configuration error (bad flags, unreadable weight
file, mismatched inputs), 2 processing error (a work item failed under
fail-fast).  Outputs are written to a temporary file and renamed on success,
so a failed run never leaves partial files; for a fixed seed the output bytes
do not depend on the worker count.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

from . import losses
from .errors import ConfigError, ProcessingError, StainNormError, WeightFormatError
from .imaging import RgbImage, read_image, write_image
from .macenko import MacenkoParams
from .ssim import SsimParams, evaluate_dataset
from .vahadane import SnmfParams
from .weights_io import load_weights, read_tensor_archive
from .wsi import PatchGrid, extract_patches, make_patch_normalizer, normalize_wsi, stitch


def _atomic_write_image(img: RgbImage, path: str) -> None:
    tmp = f"{path}.tmp"
    write_image(img, tmp)
    os.replace(tmp, path)


def _atomic_write_text(text: str, path: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _collect_pngs(src: str) -> list[str]:
    if os.path.isfile(src):
        return [src]
    if os.path.isdir(src):
        found = []
        for root, _, names in os.walk(src):
            for name in sorted(names):
                if name.lower().endswith(".png"):
                    found.append(os.path.join(root, name))
        return sorted(found)
    raise ConfigError(f"input path does not exist: {src}")


def cmd_normalize(args) -> int:
    if args.method in ("macenko", "vahadane") and not args.target:
        raise ConfigError(f"--target is required for method {args.method}")
    if args.method == "saasn" and not args.weights:
        raise ConfigError("--weights is required for method saasn")

    target = read_image(args.target) if args.target else None
    weights = None
    if args.weights:
        try:
            weights = load_weights(args.weights)
        except (WeightFormatError, FileNotFoundError) as exc:
            raise ConfigError(str(exc)) from exc

    normalizer = make_patch_normalizer(
        args.method,
        target=target,
        weights=weights,
        macenko_params=MacenkoParams(),
        snmf_params=SnmfParams(seed=args.seed),
    )

    inputs = _collect_pngs(args.src)
    if not inputs:
        raise ConfigError(f"no PNG inputs under {args.src}")
    os.makedirs(args.out, exist_ok=True)
    base = args.src if os.path.isdir(args.src) else os.path.dirname(args.src)

    manifest_rows = []
    for path in inputs:
        rel = os.path.relpath(path, base) if base else os.path.basename(path)
        out_path = os.path.join(args.out, rel)
        os.makedirs(os.path.dirname(out_path) or ".", exist_ok=True)
        img = read_image(path)
        if max(img.width, img.height) > args.patch_size:
            grid = PatchGrid(
                source_dims=(img.width, img.height),
                patch_size=args.patch_size,
                stride=args.stride or args.patch_size,
            )
            result, failures = normalize_wsi(
                img, normalizer, grid, fail_fast=args.fail_fast, workers=args.workers
            )
            status = "ok" if not failures else f"partial:{len(failures)}"
        else:
            try:
                result = normalizer(img)
                status = "ok"
            except StainNormError as exc:
                if args.fail_fast:
                    raise ProcessingError(f"{rel}: {exc}") from exc
                result = img
                status = f"failed:{exc}"
        _atomic_write_image(result, out_path)
        manifest_rows.append((rel, status))

    lines = ["path,status"] + [f"{rel},{status}" for rel, status in manifest_rows]
    _atomic_write_text("\n".join(lines) + "\n", os.path.join(args.out, "manifest.csv"))
    print(f"normalized {len(inputs)} image(s) -> {args.out}")
    return 0


def _ssim_params(args) -> SsimParams:
    return SsimParams(
        window=args.window,
        window_weights="uniform" if args.uniform_window else "gaussian",
        stride=args.ssim_stride,
    )


def cmd_evaluate(args) -> int:
    names_a = {n for n in os.listdir(args.dir_a) if n.lower().endswith(".png")}
    names_b = {n for n in os.listdir(args.dir_b) if n.lower().endswith(".png")}
    if names_a != names_b:
        only_a = sorted(names_a - names_b)
        only_b = sorted(names_b - names_a)
        raise ConfigError(
            f"directories do not hold matching filenames; only in {args.dir_a}: {only_a}; "
            f"only in {args.dir_b}: {only_b}"
        )
    if not names_a:
        raise ConfigError("no PNG pairs to evaluate")

    params = _ssim_params(args)
    pairs = (
        (read_image(os.path.join(args.dir_a, n)), read_image(os.path.join(args.dir_b, n)))
        for n in sorted(names_a)
    )
    report = evaluate_dataset(pairs, params)
    header = "method,direction,mean,std,n"
    row = f"{args.method},{args.direction},{report.mean:.6f},{report.std:.6f},{report.n}"
    print(header)
    print(row)
    if args.out:
        _atomic_write_text(f"{header}\n{row}\n", args.out)
    return 0


def cmd_extract(args) -> int:
    img = read_image(args.src)
    grid = PatchGrid(
        source_dims=(img.width, img.height),
        patch_size=args.patch_size,
        stride=args.stride or args.patch_size,
    )
    slide = args.slide_name or os.path.splitext(os.path.basename(args.src))[0]
    os.makedirs(args.out, exist_ok=True)
    rows = ["row,col,x,y,status"]
    for rec in extract_patches(img, grid):
        name = f"{slide}_{rec.row}_{rec.col}.png"
        _atomic_write_image(rec.image, os.path.join(args.out, name))
        rows.append(f"{rec.row},{rec.col},{rec.x},{rec.y},ok")
    _atomic_write_text("\n".join(rows) + "\n", os.path.join(args.out, "manifest.csv"))
    geometry = {
        "slide": slide,
        "width": img.width,
        "height": img.height,
        "patch_size": grid.patch_size,
        "stride": grid.stride,
    }
    _atomic_write_text(json.dumps(geometry, indent=2) + "\n", os.path.join(args.out, "grid.json"))
    print(f"extracted {grid.rows * grid.cols} patches -> {args.out}")
    return 0


def cmd_stitch(args) -> int:
    geo_path = os.path.join(args.src, "grid.json")
    if not os.path.exists(geo_path):
        raise ConfigError(f"missing grid geometry file: {geo_path}")
    with open(geo_path) as fh:
        geo = json.load(fh)
    grid = PatchGrid(
        source_dims=(geo["width"], geo["height"]),
        patch_size=geo["patch_size"],
        stride=geo["stride"],
    )
    from .wsi import PatchRecord

    records = []
    with open(os.path.join(args.src, "manifest.csv"), newline="") as fh:
        for entry in csv.DictReader(fh):
            row, col = int(entry["row"]), int(entry["col"])
            name = f"{geo['slide']}_{row}_{col}.png"
            patch = read_image(os.path.join(args.src, name))
            records.append(PatchRecord(row, col, int(entry["x"]), int(entry["y"]), patch))
    result = stitch(records, grid)
    _atomic_write_image(result, args.out)
    print(f"stitched {len(records)} patches -> {args.out}")
    return 0


def cmd_infer(args) -> int:
    try:
        weights = load_weights(args.weights)
    except (WeightFormatError, FileNotFoundError) as exc:
        raise ConfigError(str(exc)) from exc
    from .inference import generator_forward

    img = read_image(args.src)
    out = generator_forward(img, weights)
    _atomic_write_image(out, args.out)
    print(f"inferred {img.width}x{img.height} -> {args.out}")
    return 0


def cmd_losses(args) -> int:
    try:
        tensors = read_tensor_archive(args.bundle)
        bundle = losses.bundle_from_tensors(tensors)
    except (WeightFormatError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    weights = losses.LossWeights(
        alpha=args.alpha, beta=args.beta, gamma=args.gamma, delta=args.delta
    )
    breakdown = losses.total_objective(bundle, weights, SsimParams(), args.adv_mode)
    header = ",".join(losses.LossBreakdown.CSV_FIELDS)
    print(header)
    print(breakdown.csv_row())
    if args.out:
        _atomic_write_text(f"{header}\n{breakdown.csv_row()}\n", args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stainnorm",
        description="Stain normalization toolkit for H&E histopathology patches and slides",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_norm = sub.add_parser("normalize", help="normalize images or whole slides")
    p_norm.add_argument("src", help="input PNG file or directory")
    p_norm.add_argument("--method", required=True, choices=["macenko", "vahadane", "saasn"])
    p_norm.add_argument("--target", help="target image (classical methods)")
    p_norm.add_argument("--weights", help="weight archive (saasn)")
    p_norm.add_argument("--out", required=True, help="output directory")
    p_norm.add_argument("--seed", type=int, default=0)
    p_norm.add_argument("--workers", type=int, default=1)
    p_norm.add_argument("--patch-size", type=int, default=500)
    p_norm.add_argument("--stride", type=int, default=0, help="defaults to patch size")
    p_norm.add_argument("--fail-fast", action="store_true")
    p_norm.add_argument("--adv-mode", choices=["ce", "ls"], default="ls",
                        help="recorded for loss logging")
    p_norm.set_defaults(func=cmd_normalize)

    p_eval = sub.add_parser("evaluate", help="SSIM report over paired directories")
    p_eval.add_argument("dir_a")
    p_eval.add_argument("dir_b")
    p_eval.add_argument("--method", default="unknown")
    p_eval.add_argument("--direction", default="a-to-b")
    p_eval.add_argument("--window", type=int, default=11)
    p_eval.add_argument("--uniform-window", action="store_true")
    p_eval.add_argument("--ssim-stride", type=int, default=1)
    p_eval.add_argument("--out", help="write the report CSV here")
    p_eval.set_defaults(func=cmd_evaluate)

    p_ext = sub.add_parser("extract", help="split an image into grid patches")
    p_ext.add_argument("src")
    p_ext.add_argument("--out", required=True)
    p_ext.add_argument("--patch-size", type=int, default=500)
    p_ext.add_argument("--stride", type=int, default=0)
    p_ext.add_argument("--slide-name")
    p_ext.set_defaults(func=cmd_extract)

    p_sti = sub.add_parser("stitch", help="reassemble patches extracted by 'extract'")
    p_sti.add_argument("src", help="directory holding patches + manifest.csv + grid.json")
    p_sti.add_argument("--out", required=True)
    p_sti.set_defaults(func=cmd_stitch)

    p_inf = sub.add_parser("infer", help="run the generator on one PNG")
    p_inf.add_argument("src")
    p_inf.add_argument("--weights", required=True)
    p_inf.add_argument("--out", required=True)
    p_inf.set_defaults(func=cmd_infer)

    p_los = sub.add_parser("losses", help="recompute objective terms from a bundle dump")
    p_los.add_argument("--bundle", required=True, help="tensor archive with batch tensors")
    p_los.add_argument("--adv-mode", choices=["ce", "ls"], default="ls")
    p_los.add_argument("--alpha", type=float, default=10.0)
    p_los.add_argument("--beta", type=float, default=10.0)
    p_los.add_argument("--gamma", type=float, default=10.0)
    p_los.add_argument("--delta", type=float, default=0.1)
    p_los.add_argument("--out")
    p_los.set_defaults(func=cmd_losses)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ProcessingError, StainNormError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
