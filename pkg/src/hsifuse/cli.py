"""Command-line interface: one subcommand per pipeline stage plus orchestration."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import pipeline as pl
from .dimred import reduce_bands
from .fusion import confusion, format_report, fuse_labels, metrics
from .kpca import KpcaParams
from .randwalk import ErwParams, build_laplacian, erw_optimize
from .raster import (
    ProbStack,
    load_cube,
    load_labels,
    write_cube,
    write_labels,
)
from .smoothing import SmoothParams, extract_sp
from .svm import TrainGrid, predict_proba, train
from .synthetic import SyntheticSpec, generate_synthetic


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hsifuse",
        description="Spectral-spatial classification: band averaging, structure "
        "smoothing, kernel classification, graph refinement, decision fusion.",
    )
    parser.add_argument("--config", help="pipeline config file (key = value lines)")
    parser.add_argument("--seed", type=int, help="run seed (overrides config)")
    parser.add_argument("--threads", type=int, help="1 guarantees byte determinism")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene")
    p.add_argument("--out", required=True, help="output cube header path")
    p.add_argument("--labels", required=True, help="output label map path")
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--classes", type=int, default=8)
    p.add_argument("--bands", type=int, default=40)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--cells", type=int, default=20)

    p = sub.add_parser("reduce", help="band-group averaging")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--M", type=int, required=True)

    p = sub.add_parser("sp", help="structural feature extraction")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lambda", dest="lam", type=float, default=1.2)
    p.add_argument("--window", type=int, default=3)
    p.add_argument("--patch", type=int, default=1)
    p.add_argument("--degree", type=int, default=2)
    p.add_argument("--K", type=int, default=20)
    p.add_argument("--max-iters", type=int, default=20)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--kpca-anchors", type=int, default=2000)
    p.add_argument("--kpca-sigma", default="auto")

    p = sub.add_parser("classify", help="train on masked pixels, emit probabilities")
    p.add_argument("--features", required=True, help="feature cube header")
    p.add_argument("--train", required=True, help="training label map")
    p.add_argument("--out-prob", required=True, help="probability cube header")
    p.add_argument("--grid-default", action="store_true",
                   help="use the default cross-validation grid (always on)")

    p = sub.add_parser("erw", help="graph refinement of a probability stack")
    p.add_argument("--prob", required=True, help="probability cube header")
    p.add_argument("--guidance", required=True, help="1-band guidance cube header")
    p.add_argument("--beta", type=float, default=90.0)
    p.add_argument("--gamma", type=float, default=0.1)
    p.add_argument("--cg-tol", type=float, default=1e-6)
    p.add_argument("--cg-max-iters", type=int, default=2000)
    p.add_argument("--out", required=True)

    p = sub.add_parser("fuse", help="convex fusion and argmax labeling")
    p.add_argument("--c1", required=True)
    p.add_argument("--c2", required=True)
    p.add_argument("--mu", type=float, default=0.5)
    p.add_argument("--out", required=True, help="label map path")

    p = sub.add_parser("metrics", help="accuracy report from two label maps")
    p.add_argument("--ref", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--report", required=True, help="output text path")

    p = sub.add_parser("pipeline", help="full two-branch run")
    p.add_argument("--in", dest="input")
    p.add_argument("--labels")
    p.add_argument("--out", dest="out_labels")
    p.add_argument("--report", dest="out_report")
    p.add_argument("--map", dest="out_map", help="P6 pixmap output path")
    p.add_argument("--intermediates", dest="intermediates_dir")

    p = sub.add_parser("sweep", help="rerun the pipeline along one parameter axis")
    p.add_argument("--in", dest="input")
    p.add_argument("--labels")
    p.add_argument("--axis", required=True)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--out", help="output table path (default stdout)")

    p = sub.add_parser("export-map", help="render a label map as a P6 pixmap")
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    return parser


def _pipeline_config(args) -> pl.PipelineConfig:
    config = pl.PipelineConfig()
    if args.config:
        config = pl.load_config(args.config, config)
    for attr in ("input", "labels", "out_labels", "out_report", "out_map",
                 "intermediates_dir"):
        value = getattr(args, attr, None)
        if value is not None:
            setattr(config, attr, value)
    if args.seed is not None:
        config.seed = args.seed
    if args.threads is not None:
        config.threads = args.threads
    return config


def _cmd_synth(args) -> None:
    spec = SyntheticSpec(
        height=args.height, width=args.width, num_classes=args.classes,
        bands=args.bands, noise_sigma=args.noise,
        seed=args.seed if args.seed is not None else 0, cells=args.cells,
    )
    cube, labels = generate_synthetic(spec)
    write_cube(cube, args.out)
    write_labels(labels, args.labels)


def _cmd_reduce(args) -> None:
    write_cube(reduce_bands(load_cube(args.input), args.M), args.out)


def _cmd_sp(args) -> None:
    params = SmoothParams(
        lam=args.lam, window_radius=args.window, patch_radius=args.patch,
        degree=args.degree, sigma=args.sigma, max_iters=args.max_iters, tol=args.tol,
    )
    width = args.kpca_sigma if args.kpca_sigma == "auto" else float(args.kpca_sigma)
    kp = KpcaParams(max_anchors=args.kpca_anchors, kernel_width=width)
    seed = args.seed if args.seed is not None else 0
    cube = load_cube(args.input)
    write_cube(extract_sp(cube, params, args.K, kp, seed=seed), args.out)


def _cmd_classify(args) -> None:
    cube = load_cube(args.features)
    train_map = load_labels(args.train)
    feats = cube.pixels()
    mask = train_map.labels.ravel() > 0
    seed = args.seed if args.seed is not None else 0
    model = train(feats[mask], train_map.labels.ravel()[mask], TrainGrid(), seed=seed)
    probs = np.zeros((feats.shape[0], train_map.num_classes))
    probs[:, model.classes - 1] = predict_proba(model, feats)
    stack = ProbStack(probs.reshape(cube.height, cube.width, train_map.num_classes))
    write_cube(stack.to_cube(), args.out_prob)


def _cmd_erw(args) -> None:
    stack = ProbStack.from_cube(load_cube(args.prob))
    guidance_cube = load_cube(args.guidance)
    if guidance_cube.bands != 1:
        raise ValueError("guidance cube must have exactly one band")
    lap = build_laplacian(guidance_cube.data[:, :, 0], args.beta)
    params = ErwParams(beta=args.beta, gamma=args.gamma,
                       cg_tol=args.cg_tol, cg_max_iters=args.cg_max_iters)
    _, c2 = erw_optimize(lap, stack, params)
    write_cube(c2.to_cube(), args.out)


def _cmd_fuse(args) -> None:
    c1 = ProbStack.from_cube(load_cube(args.c1))
    c2 = ProbStack.from_cube(load_cube(args.c2))
    write_labels(fuse_labels(c1, c2, args.mu), args.out)


def _cmd_metrics(args) -> None:
    ref = load_labels(args.ref)
    pred = load_labels(args.pred)
    report = format_report(metrics(confusion(ref, pred)))
    Path(args.report).write_text(report, encoding="utf-8")
    sys.stdout.write(report)


def _cmd_pipeline(args) -> None:
    config = _pipeline_config(args)
    result = pl.run_pipeline(config)
    sys.stdout.write(result.report)


def _cmd_sweep(args) -> None:
    config = _pipeline_config(args)
    values = [v for v in args.values.split(",") if v.strip()]
    rows = pl.sweep(config, args.axis, values)
    table = pl.format_sweep(args.axis, rows)
    if args.out:
        Path(args.out).write_text(table, encoding="utf-8")
    else:
        sys.stdout.write(table)


def _cmd_export_map(args) -> None:
    pl.export_map(load_labels(args.labels), args.out)


_COMMANDS = {
    "synth": _cmd_synth,
    "reduce": _cmd_reduce,
    "sp": _cmd_sp,
    "classify": _cmd_classify,
    "erw": _cmd_erw,
    "fuse": _cmd_fuse,
    "metrics": _cmd_metrics,
    "pipeline": _cmd_pipeline,
    "sweep": _cmd_sweep,
    "export-map": _cmd_export_map,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        _COMMANDS[args.command](args)
    except pl.PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error: stage {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
