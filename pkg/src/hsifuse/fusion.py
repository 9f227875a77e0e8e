"""Decision fusion, confusion-matrix accuracy metrics, and separability."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .raster import LabelMap, ProbStack


def fuse_labels(c1: ProbStack, c2: ProbStack, mu: float) -> LabelMap:
    """Per-pixel argmax of mu*C1 + (1-mu)*C2; ties go to the smallest class."""
    if not 0.0 <= mu <= 1.0:
        raise ValueError("mu must lie in [0, 1]")
    if c1.probs.shape != c2.probs.shape:
        raise ValueError(
            f"probability stacks disagree: {c1.probs.shape} vs {c2.probs.shape}"
        )
    fused = mu * c1.probs + (1.0 - mu) * c2.probs
    labels = np.argmax(fused, axis=2).astype(np.int32) + 1
    return LabelMap(labels, c1.num_classes)


def confusion(ref: LabelMap, pred: LabelMap) -> np.ndarray:
    """(T, T) counts over labeled reference pixels; rows reference, columns predicted."""
    if ref.labels.shape != pred.labels.shape:
        raise ValueError("reference and prediction shapes differ")
    t = ref.num_classes
    mask = ref.labels > 0
    r = ref.labels[mask]
    p = pred.labels[mask]
    if np.any(p == 0):
        raise ValueError("prediction is unlabeled at a labeled reference pixel")
    cm = np.zeros((t, t), dtype=np.int64)
    np.add.at(cm, (r - 1, p - 1), 1)
    return cm


@dataclass
class MetricsResult:
    oa: float
    aa: float
    kappa: float
    per_class: np.ndarray       # NaN where the reference class is absent
    degenerate_kappa: bool = False


def metrics(cm: np.ndarray) -> MetricsResult:
    """Overall accuracy, class-mean accuracy, and chance-corrected agreement."""
    cm = np.asarray(cm, dtype=np.float64)
    total = cm.sum()
    if total <= 0:
        raise ValueError("empty confusion matrix")
    oa = float(np.trace(cm) / total)
    row = cm.sum(axis=1)
    col = cm.sum(axis=0)
    per_class = np.full(cm.shape[0], np.nan)
    present = row > 0
    per_class[present] = np.diag(cm)[present] / row[present]
    aa = float(np.nanmean(per_class))
    pe = float((row * col).sum() / (total * total))
    if abs(1.0 - pe) < 1e-12:
        return MetricsResult(oa, aa, 0.0, per_class, degenerate_kappa=True)
    kappa = (oa - pe) / (1.0 - pe)
    return MetricsResult(oa, aa, float(kappa), per_class)


def format_report(result: MetricsResult) -> str:
    """Fixed-order text block: OA, AA, Kappa, then per-class, 4 decimals."""
    lines = [
        f"OA {result.oa:.4f}",
        f"AA {result.aa:.4f}",
        f"Kappa {result.kappa:.4f}" + (" (degenerate)" if result.degenerate_kappa else ""),
    ]
    for i, acc in enumerate(result.per_class, start=1):
        lines.append(f"class {i} " + ("absent" if np.isnan(acc) else f"{acc:.4f}"))
    return "\n".join(lines) + "\n"


@dataclass
class SeparabilityResult:
    between: float
    within: float
    ratio: float
    infinite: bool = False   # within-class spread is exactly zero


def class_separability(features: np.ndarray, labels: np.ndarray) -> SeparabilityResult:
    """Mean centroid distance vs mean within-class spread of labeled samples."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if classes.size < 2:
        raise ValueError("separability needs at least two classes")
    centroids = []
    spreads = []
    for cls in classes:
        rows = features[labels == cls]
        if rows.shape[0] < 2:
            raise ValueError(f"class {cls} has fewer than 2 samples")
        c = rows.mean(axis=0)
        centroids.append(c)
        spreads.append(float(np.linalg.norm(rows - c, axis=1).mean()))
    centroids = np.array(centroids)
    pair_d = [
        float(np.linalg.norm(centroids[i] - centroids[j]))
        for i in range(len(classes))
        for j in range(i + 1, len(classes))
    ]
    between = float(np.mean(pair_d))
    within = float(np.mean(spreads))
    if within == 0.0:
        return SeparabilityResult(between, 0.0, np.inf, infinite=True)
    return SeparabilityResult(between, within, between / within)
