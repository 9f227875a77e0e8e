"""End-to-end orchestration: two spatial branches, fused decision, metrics.

The flow after band averaging forks: branch A smooths the cube into a
structural feature stack and classifies it; branch B classifies the
averaged cube directly and refines the probabilities on the guidance
graph. A convex fusion weight merges the two probability stacks and the
argmax against the held-out mask yields the reported accuracies.

Every stage output passes through the float32 container precision, so a
run that persists and reloads its intermediate artifacts reproduces the
in-memory run bit for bit. One run seed fans out to per-stage sub-seeds
as seed + stage ordinal.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dimred import reduce_bands
from .fusion import MetricsResult, confusion, format_report, fuse_labels, metrics
from .kpca import KpcaParams
from .randwalk import ErwParams, build_laplacian, erw_optimize, guidance_image
from .raster import (
    HsiCube,
    LabelMap,
    ProbStack,
    load_cube,
    load_labels,
    normalize_bands,
    quantize32,
    write_cube,
    write_labels,
)
from .smoothing import SmoothParams, extract_sp
from .svm import TrainGrid, predict_proba, train
from .synthetic import sample_training

# stage ordinals for the seed-splitting rule
STAGE_SEED = {
    "split": 1,
    "sp_kpca": 2,
    "classify_a": 3,
    "classify_b": 4,
    "guidance": 5,
}


class PipelineError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"stage {stage}: {message}")
        self.stage = stage


@dataclass
class PipelineConfig:
    input: str | None = None
    labels: str | None = None
    train_map: str | None = None
    test_map: str | None = None
    out_labels: str | None = None
    out_report: str | None = None
    out_map: str | None = None
    intermediates_dir: str | None = None
    M: int = 40
    K: int = 20
    lam: float = 1.2
    mu: float = 0.5
    window: int = 3
    patch: int = 1
    degree: int = 2
    sigma: float = 1.0
    h0: float = 1.0
    sp_max_iters: int = 20
    sp_tol: float = 1e-4
    kpca_anchors: int = 2000
    kpca_sigma: float | str = "auto"
    svm_kernel_widths: list[float] = field(default_factory=lambda: [2.0**e for e in range(-5, 6)])
    svm_penalties: list[float] = field(default_factory=lambda: [10.0**e for e in range(-2, 5)])
    folds: int = 5
    svm_tol: float = 1e-3
    beta: float = 90.0
    gamma: float = 0.1
    cg_tol: float = 1e-6
    cg_max_iters: int = 2000
    train_per_class: int = 20
    seed: int = 0
    threads: int = 1

    def smooth_params(self) -> SmoothParams:
        return SmoothParams(
            lam=self.lam,
            window_radius=self.window,
            patch_radius=self.patch,
            degree=self.degree,
            sigma=self.sigma,
            h0=self.h0,
            max_iters=self.sp_max_iters,
            tol=self.sp_tol,
        )

    def kpca_params(self) -> KpcaParams:
        return KpcaParams(max_anchors=self.kpca_anchors, kernel_width=self.kpca_sigma)

    def train_grid(self) -> TrainGrid:
        return TrainGrid(
            kernel_widths=list(self.svm_kernel_widths),
            penalties=list(self.svm_penalties),
            folds=self.folds,
        )

    def erw_params(self) -> ErwParams:
        return ErwParams(
            beta=self.beta,
            gamma=self.gamma,
            cg_tol=self.cg_tol,
            cg_max_iters=self.cg_max_iters,
        )


def _parse_optional_str(v: str):
    return v if v else None

def _serialize_optional_str(v) -> str:
    return v if v is not None else ""

def _parse_float_or_auto(v: str):
    return "auto" if v == "auto" else float(v)

def _serialize_float_or_auto(v) -> str:
    return v if isinstance(v, str) else repr(v)

def _parse_float_list(v: str) -> list[float]:
    return [float(tok) for tok in v.split(",") if tok.strip()]

def _serialize_float_list(v) -> str:
    return ",".join(repr(x) for x in v)


# config key -> (attribute, parser, serializer)
CONFIG_FIELDS = {
    "input": ("input", _parse_optional_str, _serialize_optional_str),
    "labels": ("labels", _parse_optional_str, _serialize_optional_str),
    "train_map": ("train_map", _parse_optional_str, _serialize_optional_str),
    "test_map": ("test_map", _parse_optional_str, _serialize_optional_str),
    "out_labels": ("out_labels", _parse_optional_str, _serialize_optional_str),
    "out_report": ("out_report", _parse_optional_str, _serialize_optional_str),
    "out_map": ("out_map", _parse_optional_str, _serialize_optional_str),
    "intermediates_dir": ("intermediates_dir", _parse_optional_str, _serialize_optional_str),
    "M": ("M", int, repr),
    "K": ("K", int, repr),
    "lambda": ("lam", float, repr),
    "mu": ("mu", float, repr),
    "window": ("window", int, repr),
    "patch": ("patch", int, repr),
    "degree": ("degree", int, repr),
    "sigma": ("sigma", float, repr),
    "h0": ("h0", float, repr),
    "sp_max_iters": ("sp_max_iters", int, repr),
    "sp_tol": ("sp_tol", float, repr),
    "kpca_anchors": ("kpca_anchors", int, repr),
    "kpca_sigma": ("kpca_sigma", _parse_float_or_auto, _serialize_float_or_auto),
    "svm_kernel_widths": ("svm_kernel_widths", _parse_float_list, _serialize_float_list),
    "svm_penalties": ("svm_penalties", _parse_float_list, _serialize_float_list),
    "folds": ("folds", int, repr),
    "svm_tol": ("svm_tol", float, repr),
    "beta": ("beta", float, repr),
    "gamma": ("gamma", float, repr),
    "cg_tol": ("cg_tol", float, repr),
    "cg_max_iters": ("cg_max_iters", int, repr),
    "train_per_class": ("train_per_class", int, repr),
    "seed": ("seed", int, repr),
    "threads": ("threads", int, repr),
}


def parse_config(text: str, base: PipelineConfig | None = None) -> PipelineConfig:
    """Read `key = value` lines (# comments allowed); unknown keys are errors."""
    config = dataclasses.replace(base) if base else PipelineConfig()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise PipelineError("config", f"line {lineno}: expected key = value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in CONFIG_FIELDS:
            raise PipelineError("config", f"line {lineno}: unknown key {key!r}")
        attr, parse, _ = CONFIG_FIELDS[key]
        try:
            setattr(config, attr, parse(value))
        except ValueError as exc:
            raise PipelineError("config", f"line {lineno}: bad value for {key}: {exc}") from exc
    return config


def serialize_config(config: PipelineConfig) -> str:
    lines = []
    for key, (attr, _, serialize) in CONFIG_FIELDS.items():
        lines.append(f"{key} = {serialize(getattr(config, attr))}")
    return "\n".join(lines) + "\n"


def load_config(path, base: PipelineConfig | None = None) -> PipelineConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"), base)


@dataclass
class PipelineResult:
    labels: LabelMap            # fused classification of every pixel
    metrics: MetricsResult
    report: str
    train_map: LabelMap
    test_map: LabelMap
    reduced: HsiCube
    sp: HsiCube
    c1: ProbStack
    c2_initial: ProbStack
    guidance: np.ndarray
    c2: ProbStack


def _run_stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(name, str(exc)) from exc


def _classify_branch(feature_cube: HsiCube, train_map: LabelMap, grid, tol, seed):
    """Train on the masked pixels, predict every pixel, shape into a stack."""
    feats = feature_cube.pixels()
    mask = train_map.labels.ravel() > 0
    model = train(feats[mask], train_map.labels.ravel()[mask], grid, seed=seed, tol=tol)
    probs = np.zeros((feats.shape[0], train_map.num_classes))
    probs[:, model.classes - 1] = predict_proba(model, feats)
    stack = ProbStack(
        probs.reshape(feature_cube.height, feature_cube.width, train_map.num_classes)
    )
    return quantize32(stack), model


def run_pipeline(
    config: PipelineConfig,
    cube: HsiCube | None = None,
    labels: LabelMap | None = None,
) -> PipelineResult:
    """Execute the full flow; cube/labels may be passed in memory to skip loading."""
    if cube is None:
        if not config.input:
            raise PipelineError("load", "no input cube configured")
        cube = _run_stage("load", load_cube, config.input)
    if labels is None:
        if not config.labels:
            raise PipelineError("load", "no label map configured")
        labels = _run_stage("load", load_labels, config.labels)
    if (labels.height, labels.width) != (cube.height, cube.width):
        raise PipelineError(
            "load",
            f"label map {labels.height}x{labels.width} does not match cube "
            f"{cube.height}x{cube.width}",
        )

    if config.train_map and config.test_map:
        train_map = _run_stage("split", load_labels, config.train_map)
        test_map = _run_stage("split", load_labels, config.test_map)
    else:
        train_map, test_map = _run_stage(
            "split", sample_training, labels, config.train_per_class,
            config.seed + STAGE_SEED["split"],
        )

    norm = _run_stage("normalize", lambda: quantize32(normalize_bands(cube)))
    reduced = _run_stage("reduce", lambda: quantize32(reduce_bands(norm, config.M)))

    def branch_a():
        sp = _run_stage(
            "sp",
            lambda: quantize32(
                extract_sp(
                    reduced,
                    config.smooth_params(),
                    config.K,
                    config.kpca_params(),
                    seed=config.seed + STAGE_SEED["sp_kpca"],
                )
            ),
        )
        c1, _ = _run_stage(
            "classify-a", _classify_branch, sp, train_map, config.train_grid(),
            config.svm_tol, config.seed + STAGE_SEED["classify_a"],
        )
        return sp, c1

    def branch_b():
        c2_initial, _ = _run_stage(
            "classify-b", _classify_branch, reduced, train_map, config.train_grid(),
            config.svm_tol, config.seed + STAGE_SEED["classify_b"],
        )
        guidance = _run_stage(
            "guidance",
            lambda: quantize32(
                guidance_image(
                    norm, config.kpca_params(), seed=config.seed + STAGE_SEED["guidance"]
                )
            ),
        )
        lap = _run_stage("erw", build_laplacian, guidance, config.beta)
        _, c2 = _run_stage("erw", erw_optimize, lap, c2_initial, config.erw_params())
        return c2_initial, guidance, quantize32(c2)

    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=2) as pool:
            fut_a = pool.submit(branch_a)
            fut_b = pool.submit(branch_b)
            sp, c1 = fut_a.result()
            c2_initial, guidance, c2 = fut_b.result()
    else:
        sp, c1 = branch_a()
        c2_initial, guidance, c2 = branch_b()

    fused = _run_stage("fuse", fuse_labels, c1, c2, config.mu)
    cm = _run_stage("metrics", confusion, test_map, fused)
    result_metrics = _run_stage("metrics", metrics, cm)
    report = format_report(result_metrics)

    result = PipelineResult(
        labels=fused,
        metrics=result_metrics,
        report=report,
        train_map=train_map,
        test_map=test_map,
        reduced=reduced,
        sp=sp,
        c1=c1,
        c2_initial=c2_initial,
        guidance=guidance,
        c2=c2,
    )
    _persist_outputs(config, result)
    return result


def _persist_outputs(config: PipelineConfig, result: PipelineResult) -> None:
    if config.out_labels:
        write_labels(result.labels, config.out_labels)
    if config.out_report:
        Path(config.out_report).write_text(result.report, encoding="utf-8")
    if config.out_map:
        export_map(result.labels, config.out_map)
    if config.intermediates_dir:
        d = Path(config.intermediates_dir)
        d.mkdir(parents=True, exist_ok=True)
        write_labels(result.train_map, d / "train.txt")
        write_labels(result.test_map, d / "test.txt")
        write_cube(result.reduced, d / "reduced.hdr")
        write_cube(result.sp, d / "sp.hdr")
        write_cube(result.c1.to_cube(), d / "c1.hdr")
        write_cube(result.c2_initial.to_cube(), d / "c2_initial.hdr")
        write_cube(HsiCube(result.guidance[:, :, None]), d / "guidance.hdr")
        write_cube(result.c2.to_cube(), d / "c2.hdr")
        write_labels(result.labels, d / "fused.txt")


# 20-entry class palette (class 0 renders black); documented in the README
PALETTE = [
    (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200),
    (245, 130, 48), (145, 30, 180), (70, 240, 240), (240, 50, 230),
    (210, 245, 60), (250, 190, 212), (0, 128, 128), (220, 190, 255),
    (170, 110, 40), (255, 250, 200), (128, 0, 0), (170, 255, 195),
    (128, 128, 0), (255, 215, 180), (0, 0, 128), (128, 128, 128),
]


def export_map(labels: LabelMap, path) -> None:
    """Render a P6 pixmap with the fixed palette; write the text labels alongside."""
    path = Path(path)
    rgb = np.zeros((labels.height, labels.width, 3), dtype=np.uint8)
    for cls in range(1, labels.num_classes + 1):
        color = PALETTE[(cls - 1) % len(PALETTE)]
        rgb[labels.labels == cls] = color
    header = f"P6\n{labels.width} {labels.height}\n255\n".encode("ascii")
    path.write_bytes(header + rgb.tobytes())
    write_labels(labels, path.with_suffix(".txt"))


SWEEP_AXES = (
    "M", "K", "lambda", "mu", "window", "patch", "degree", "sigma",
    "sp_max_iters", "sp_tol", "beta", "gamma", "train_per_class",
)


def sweep(
    config: PipelineConfig,
    axis: str,
    values,
    cube: HsiCube | None = None,
    labels: LabelMap | None = None,
):
    """Rerun the pipeline per value of one parameter; rows of (value, OA, AA, Kappa)."""
    if axis not in SWEEP_AXES:
        raise PipelineError("sweep", f"unknown sweep axis {axis!r} (one of {SWEEP_AXES})")
    attr, parse, _ = CONFIG_FIELDS[axis]
    rows = []
    for value in values:
        cfg = dataclasses.replace(
            config, out_labels=None, out_report=None, out_map=None, intermediates_dir=None
        )
        setattr(cfg, attr, parse(str(value)))
        result = run_pipeline(cfg, cube=cube, labels=labels)
        rows.append((getattr(cfg, attr), result.metrics.oa, result.metrics.aa, result.metrics.kappa))
    return rows


def format_sweep(axis: str, rows) -> str:
    lines = [f"{axis},oa,aa,kappa"]
    for value, oa, aa, kappa in rows:
        lines.append(f"{value:g},{oa:.6f},{aa:.6f},{kappa:.6f}")
    return "\n".join(lines) + "\n"
