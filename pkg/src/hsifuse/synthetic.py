"""Deterministic synthetic scenes for desk-scale benchmarking.

Scenes are Voronoi mosaics: random cell centers partition the image into
regions of varied size and shape, each region carries one class, and each
class gets a random spectral signature plus optional white noise. The mix
of large and small regions is deliberate; both the feature-smoothing branch
and the probability-optimization branch of the pipeline need something to
win on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .raster import HsiCube, LabelMap


@dataclass
class SyntheticSpec:
    height: int
    width: int
    num_classes: int
    bands: int
    noise_sigma: float
    seed: int
    cells: int  # Voronoi cell count, >= num_classes

    def __post_init__(self):
        if self.height < 1 or self.width < 1 or self.bands < 1:
            raise ValueError("scene dimensions must be >= 1")
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.cells < self.num_classes:
            raise ValueError(
                f"cells={self.cells} must be >= num_classes={self.num_classes}"
            )


def generate_synthetic(spec: SyntheticSpec) -> tuple[HsiCube, LabelMap]:
    """Build a (cube, labels) pair; bit-identical for a fixed seed.

    Draw order from the seeded generator: cell centers, cell->class shuffle,
    class signatures, then per-sample noise. Signatures are uniform on [0,1]
    per band; noise is i.i.d. Gaussian with std noise_sigma.
    """
    rng = np.random.default_rng(spec.seed)
    h, w, t = spec.height, spec.width, spec.num_classes

    # Centers snap to distinct pixels so every cell owns at least one pixel.
    center_idx = rng.choice(h * w, size=spec.cells, replace=False)
    centers = np.column_stack(np.unravel_index(center_idx, (h, w))).astype(np.float64)

    cell_class = (np.arange(spec.cells) % t) + 1
    rng.shuffle(cell_class)

    signatures = rng.uniform(0.0, 1.0, size=(t, spec.bands))

    rows, cols = np.mgrid[0:h, 0:w]
    pts = np.column_stack([rows.ravel(), cols.ravel()]).astype(np.float64)
    d2 = ((pts[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    owner = np.argmin(d2, axis=1)  # first minimum wins ties, deterministic
    labels = cell_class[owner].reshape(h, w).astype(np.int32)

    data = signatures[labels.ravel() - 1].reshape(h, w, spec.bands)
    noise = rng.normal(0.0, 1.0, size=data.shape)
    data = data + spec.noise_sigma * noise

    return HsiCube(data), LabelMap(labels, t)


def sample_training(
    labels: LabelMap, per_class: int, seed: int
) -> tuple[LabelMap, LabelMap]:
    """Split labeled pixels into disjoint train/test masks, per_class each class."""
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    rng = np.random.default_rng(seed)
    train = np.zeros_like(labels.labels)
    test = labels.labels.copy()
    flat = labels.labels.ravel()
    for cls in range(1, labels.num_classes + 1):
        idx = np.flatnonzero(flat == cls)
        if idx.size < per_class:
            raise ValueError(
                f"class {cls} has only {idx.size} labeled pixels, need {per_class}"
            )
        chosen = rng.choice(idx, size=per_class, replace=False)
        rr, cc = np.unravel_index(chosen, labels.labels.shape)
        train[rr, cc] = cls
        test[rr, cc] = 0
    return LabelMap(train, labels.num_classes), LabelMap(test, labels.num_classes)
