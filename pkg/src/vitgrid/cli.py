"""Command-line interface.

Subcommands: transform-weights, encode, gradcheck, sweep, probegen, bench.
Exit codes: 0 success, 1 validation failure, 2 numerical-check failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import costmodel, probes, tensorio
from .config import load_run_config
from .encoder import forward, init_state, preprocess, token_count
from .errors import NumericalError, ValidationError
from .patch_embed import build_resize_map, pi_resize_weights, pi_resize_weights_sigma
from .patch_embed import CovarianceEstimate
from .pooling import ca_pool_gradients, zero_init_ca_params
from .tokens import TokenGrid

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2


def _load_image(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"image file {path} does not exist")
    if path.suffix == ".npy":
        arr = np.load(path)
    else:
        from PIL import Image

        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValidationError(f"image {path} must be 2-D or 3-D, got shape {arr.shape}")
    return arr


def _emit(doc) -> None:
    json.dump(doc, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


def cmd_transform_weights(args) -> int:
    weights = tensorio.load_patch_weights(args.input)
    rmap = build_resize_map(weights.channels, weights.patch, args.fine_patch)
    if args.sigma:
        tensors, meta = tensorio.read_tensors(args.sigma)
        if "sigma" not in tensors:
            raise ValidationError(f"{args.sigma}: covariance file needs a 'sigma' tensor")
        cov = CovarianceEstimate(
            sigma=np.asarray(tensors["sigma"], dtype=np.float64),
            sample_count=int(meta.get("sample_count", 1)),
            ridge=float(meta.get("ridge", 0.0)),
        )
        out = pi_resize_weights_sigma(weights, rmap, cov)
    else:
        out = pi_resize_weights(weights, rmap)
    residual = float(np.linalg.norm(weights.weight.T - rmap.matrix @ out.weight.T))
    svals = np.linalg.svd(rmap.matrix, compute_uv=False)
    tensorio.save_patch_weights(args.output, out)
    _emit({
        "input": str(args.input),
        "output": str(args.output),
        "coarse_patch": weights.patch,
        "fine_patch": args.fine_patch,
        "sigma_weighted": bool(args.sigma),
        "residual_frobenius": residual,
        "resize_map_condition": float(svals[0] / svals[-1]) if svals[-1] > 0 else float("inf"),
    })
    return EXIT_OK


def cmd_encode(args) -> int:
    run = load_run_config(args.config)
    image = _load_image(args.image)
    pre = preprocess(image, run.encoder)
    counts = token_count(run.encoder, *pre.size)
    doc = {
        "image": str(args.image),
        "original_size": list(pre.original_size),
        "processed_size": list(pre.size),
        "resized": pre.resized,
        "patch": run.encoder.patch,
        "stage_tokens": counts,
    }
    if pre.resized:
        doc["note"] = (
            f"input resized from {pre.original_size[0]}x{pre.original_size[1]} to "
            f"{pre.size[0]}x{pre.size[1]} for divisibility by "
            f"patch*2^J = {run.encoder.patch * 2 ** run.encoder.plan.count}"
        )
    if not args.arith_only:
        state = init_state(run.encoder, run.seed)
        grid: TokenGrid = forward(pre.image, state, run.encoder)
        digest = hashlib.sha256()
        digest.update(np.array([grid.h, grid.w, grid.dim], dtype="<i8").tobytes())
        digest.update(np.ascontiguousarray(grid.tokens, dtype="<f8").tobytes())
        doc["final_grid"] = [grid.h, grid.w]
        doc["checksum"] = f"sha256:{digest.hexdigest()}"
    _emit(doc)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(args.seed)
    dim, hidden = args.dim, args.hidden
    grid = TokenGrid(h=4, w=4, tokens=rng.normal(size=(16, dim)))
    base = zero_init_ca_params(dim, hidden, seed=args.seed)
    params = type(base)(
        w1=base.w1, b1=base.b1,
        w2=rng.normal(0.0, 0.2, size=base.w2.shape),
        b2=rng.normal(0.0, 0.2, size=base.b2.shape),
    )
    upstream = rng.normal(size=(4, dim))
    dgrid, dparams = ca_pool_gradients(grid, params, upstream)

    from .pooling import ca_pool_compress

    def loss(g, p):
        return float(np.sum(upstream * ca_pool_compress(g, p).tokens))

    step = 1e-5
    worst = 0.0

    def check(analytic, get, put):
        nonlocal worst
        flat = analytic.ravel()
        base_vals = get().copy()
        for i in range(base_vals.size):
            orig = base_vals.flat[i]
            base_vals.flat[i] = orig + step
            hi = loss(*put(base_vals))
            base_vals.flat[i] = orig - step
            lo = loss(*put(base_vals))
            base_vals.flat[i] = orig
            fd = (hi - lo) / (2 * step)
            rel = abs(flat[i] - fd) / max(abs(flat[i]), abs(fd), 1e-6)
            worst = max(worst, rel)

    check(dgrid, lambda: grid.tokens,
          lambda v: (TokenGrid(h=4, w=4, tokens=v), params))
    for name in ("w1", "b1", "w2", "b2"):
        check(
            getattr(dparams, name),
            lambda n=name: getattr(params, n),
            lambda v, n=name: (grid, type(params)(**{**{f: getattr(params, f)
                               for f in params.__dataclass_fields__}, n: v})),
        )
    _emit({"seed": args.seed, "dim": dim, "hidden": hidden,
           "max_relative_error": worst, "tolerance": 1e-4})
    if worst > 1e-4:
        raise NumericalError(
            f"gradient check failed: max relative error {worst:.3e} > 1e-4"
        )
    return EXIT_OK


def cmd_sweep(args) -> int:
    run = load_run_config(args.config)
    if run.input_size is None:
        raise ValidationError("sweep needs 'input_size' in the config")
    pre_h, pre_w = run.input_size
    rows = costmodel.sweep_insertions(
        run.encoder, list(run.sweep_plans), pre_h, pre_w, run.llm
    )
    csv_text = costmodel.sweep_rows_to_csv(rows)
    Path(args.output).write_text(csv_text, encoding="utf-8")
    _emit({"output": str(args.output), "plans": len(rows),
           "errors": sum(1 for r in rows if r.status != "ok")})
    return EXIT_OK


def cmd_probegen(args) -> int:
    out = Path(args.out_dir)
    if args.count < 1:
        raise ValidationError(f"count must be >= 1, got {args.count}")
    if args.kind == "shapegrid":
        items = probes.gen_shapegrid(args.count, args.seed)
    else:
        items = probes.gen_sudoku(args.count, args.seed)
    manifest = probes.write_dataset(items, out, kind=args.kind, seed=args.seed,
                                    fmt=args.format)
    _emit({"out_dir": str(out), "count": manifest["count"], "kind": args.kind,
           "seed": args.seed, "image_format": manifest["image_format"]})
    return EXIT_OK


def cmd_bench(args) -> int:
    run = load_run_config(args.config)
    if run.input_size is None:
        raise ValidationError("bench needs 'input_size' in the config")
    rng = np.random.default_rng(run.seed)
    image = rng.uniform(size=(run.input_size[0], run.input_size[1], run.encoder.channels))
    state = init_state(run.encoder, run.seed)
    dtype = np.float32 if args.f32 else np.float64
    report, stats = costmodel.benchmarked_report(
        run.encoder, state, image, args.repeats, run.llm, dtype=dtype
    )
    _emit({
        "config": str(args.config),
        "input_size": list(run.input_size),
        "repeats": args.repeats,
        "median_ms": stats.median_ms,
        "mean_ms": stats.mean_ms,
        "samples_ms": list(stats.samples_ms),
        "stage_tokens": list(report.stage_tokens),
        "encoder_flops": report.encoder_flops,
        "prefill_flops": report.prefill_flops,
        "total_flops": report.total_flops,
        "compression_ratio": report.compression_ratio,
        "wall_clock_ms": report.wall_clock_ms,
    })
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vitgrid")
    sub = p.add_subparsers(dest="command", required=True)

    tw = sub.add_parser("transform-weights",
                        help="resize patch-embedding weights to a finer patch")
    tw.add_argument("input", help="input weights (.vtt tensor file)")
    tw.add_argument("output", help="output weights file")
    tw.add_argument("--fine-patch", type=int, required=True)
    tw.add_argument("--sigma", default=None,
                    help="optional covariance tensor file for the weighted solve")
    tw.set_defaults(func=cmd_transform_weights)

    en = sub.add_parser("encode", help="run the encoder over an image")
    en.add_argument("image", help="image file (.png/.ppm/.jpg or .npy)")
    en.add_argument("--config", required=True, help="run-config JSON")
    en.add_argument("--arith-only", action="store_true",
                    help="report token arithmetic without running the forward pass")
    en.set_defaults(func=cmd_encode)

    gc = sub.add_parser("gradcheck",
                        help="verify analytic CA-pool gradients against finite differences")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--dim", type=int, default=16)
    gc.add_argument("--hidden", type=int, default=16)
    gc.set_defaults(func=cmd_gradcheck)

    sw = sub.add_parser("sweep", help="evaluate insertion plans with the cost model")
    sw.add_argument("--config", required=True)
    sw.add_argument("--output", required=True, help="CSV output path")
    sw.set_defaults(func=cmd_sweep)

    pg = sub.add_parser("probegen", help="generate a probe dataset")
    pg.add_argument("kind", choices=("shapegrid", "sudoku"))
    pg.add_argument("--count", type=int, required=True)
    pg.add_argument("--seed", type=int, default=0)
    pg.add_argument("--out-dir", required=True)
    pg.add_argument("--format", choices=("png", "ppm"), default="png")
    pg.set_defaults(func=cmd_probegen)

    be = sub.add_parser("bench", help="micro-benchmark the encoder forward pass")
    be.add_argument("--config", required=True)
    be.add_argument("--repeats", type=int, default=5)
    be.add_argument("--f32", action="store_true", help="run the forward in float32")
    be.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
