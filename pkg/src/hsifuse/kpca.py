"""Kernel principal component analysis with a Gaussian kernel.

Used twice in the pipeline: to compact the smoothed feature cube down to a
few discriminative components, and to produce the scalar guidance image
whose contrast drives the graph edge weights. Anchor subsampling keeps the
kernel matrix at desk scale; the eigendecomposition is dense and
deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist, pdist

MAX_ANCHORS_DEFAULT = 2000


class KpcaError(ValueError):
    pass


@dataclass
class KpcaParams:
    """Fit-time knobs: anchor budget and kernel width ('auto' = median heuristic)."""

    max_anchors: int = MAX_ANCHORS_DEFAULT
    kernel_width: float | str = "auto"

    def __post_init__(self):
        if self.max_anchors < 1:
            raise KpcaError("max_anchors must be >= 1")
        if isinstance(self.kernel_width, str):
            if self.kernel_width != "auto":
                raise KpcaError(f"kernel_width must be 'auto' or a number")
        elif self.kernel_width <= 0:
            raise KpcaError("kernel_width must be positive")


@dataclass
class KpcaModel:
    anchors: np.ndarray       # (n, d)
    kernel_width: float
    alphas: np.ndarray        # (n, K), eigenvectors scaled by 1/sqrt(eigenvalue)
    eigenvalues: np.ndarray   # (K,), descending, clamped nonnegative
    col_means: np.ndarray     # (n,) column means of the anchor kernel matrix
    total_mean: float
    kernel: str = "gaussian"

    @property
    def num_components(self) -> int:
        return self.alphas.shape[1]


def _kernel_matrix(a, b, width, kind):
    if kind == "gaussian":
        d2 = cdist(a, b, "sqeuclidean")
        return np.exp(-d2 / (2.0 * width * width))
    if kind == "linear":  # verification hook only; production path is gaussian
        return a @ b.T
    raise KpcaError(f"unknown kernel {kind!r}")


def median_pairwise_distance(samples: np.ndarray) -> float:
    if samples.shape[0] < 2:
        raise KpcaError("median heuristic needs at least 2 samples")
    return float(np.median(pdist(samples)))


def fit_kpca(
    samples: np.ndarray,
    num_components: int,
    params: KpcaParams | None = None,
    seed: int = 0,
    kernel: str = "gaussian",
) -> KpcaModel:
    """Fit on (a subsample of) the given rows.

    If the row count exceeds the anchor budget, anchors are drawn uniformly
    without replacement with the given seed. The kernel matrix is centered
    in feature space before the symmetric eigendecomposition; the top
    num_components eigenpairs are kept, eigenvalues clamped at zero. Each
    component's sign is fixed so its first nonzero anchor score is positive.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2:
        raise KpcaError("samples must be 2-D")
    params = params or KpcaParams()

    n_all = samples.shape[0]
    if n_all > params.max_anchors:
        rng = np.random.default_rng(seed)
        idx = np.sort(rng.choice(n_all, size=params.max_anchors, replace=False))
        anchors = samples[idx]
    else:
        anchors = samples.copy()
    n = anchors.shape[0]
    if num_components < 1 or num_components > n:
        raise KpcaError(f"need 1 <= K <= {n} anchors, got K={num_components}")

    if params.kernel_width == "auto":
        width = median_pairwise_distance(anchors)
        if width == 0.0:
            raise KpcaError("all anchors identical: median pairwise distance is zero")
    else:
        width = float(params.kernel_width)

    k = _kernel_matrix(anchors, anchors, width, kernel)
    col_means = k.mean(axis=0)
    total_mean = float(k.mean())
    kc = k - col_means[None, :] - col_means[:, None] + total_mean

    eigvals, eigvecs = np.linalg.eigh(kc)
    order = np.argsort(eigvals)[::-1][:num_components]
    eigvals = np.maximum(eigvals[order], 0.0)
    vecs = eigvecs[:, order]

    # anchor scores are sqrt(eigenvalue) * eigenvector; fix sign on the vector
    for j in range(num_components):
        nz = np.flatnonzero(np.abs(vecs[:, j]) > 1e-12)
        if nz.size and vecs[nz[0], j] < 0:
            vecs[:, j] = -vecs[:, j]

    floor = max(eigvals[0] if num_components else 0.0, 1e-30) * 1e-12
    alphas = np.zeros_like(vecs)
    keep = eigvals > floor
    alphas[:, keep] = vecs[:, keep] / np.sqrt(eigvals[keep])

    return KpcaModel(
        anchors=anchors,
        kernel_width=width,
        alphas=alphas,
        eigenvalues=eigvals,
        col_means=col_means,
        total_mean=total_mean,
        kernel=kernel,
    )


def transform(model: KpcaModel, pixels: np.ndarray) -> np.ndarray:
    """Project query rows onto the fitted components, (p, K)."""
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.ndim != 2:
        raise KpcaError("pixels must be 2-D")
    if pixels.shape[1] != model.anchors.shape[1]:
        raise KpcaError(
            f"dimension mismatch: model expects {model.anchors.shape[1]}, "
            f"got {pixels.shape[1]}"
        )
    if pixels.shape[0] == 0:
        return np.zeros((0, model.num_components))
    kq = _kernel_matrix(pixels, model.anchors, model.kernel_width, model.kernel)
    kq_c = (
        kq
        - kq.mean(axis=1, keepdims=True)
        - model.col_means[None, :]
        + model.total_mean
    )
    return kq_c @ model.alphas


def fit_scores(model: KpcaModel) -> np.ndarray:
    """Projections of the anchors themselves (sqrt(eigenvalue)-scaled vectors)."""
    return transform(model, model.anchors)


def save_model(model: KpcaModel, header_path) -> None:
    """Persist as text header + float32 raw blob (same two-file convention as cubes)."""
    header_path = Path(header_path)
    n, d = model.anchors.shape
    lines = [
        f"anchors={n}",
        f"dim={d}",
        f"components={model.num_components}",
        f"kernel={model.kernel}",
        f"kernel_width={model.kernel_width!r}",
        f"total_mean={model.total_mean!r}",
    ]
    header_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    blob = np.concatenate(
        [
            model.anchors.ravel(),
            model.alphas.ravel(),
            model.eigenvalues.ravel(),
            model.col_means.ravel(),
        ]
    )
    blob.astype("<f4").tofile(header_path.with_suffix(".raw"))


def load_model(header_path) -> KpcaModel:
    header_path = Path(header_path)
    fields = {}
    for line in header_path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            key, _, value = line.partition("=")
            fields[key.strip()] = value.strip()
    n = int(fields["anchors"])
    d = int(fields["dim"])
    k = int(fields["components"])
    blob = np.fromfile(header_path.with_suffix(".raw"), dtype="<f4").astype(np.float64)
    if blob.size != n * d + n * k + k + n:
        raise KpcaError(f"{header_path}: blob size mismatch")
    pos = 0
    anchors = blob[pos : pos + n * d].reshape(n, d); pos += n * d
    alphas = blob[pos : pos + n * k].reshape(n, k); pos += n * k
    eigenvalues = blob[pos : pos + k]; pos += k
    col_means = blob[pos : pos + n]
    return KpcaModel(
        anchors=anchors,
        kernel_width=float(fields["kernel_width"]),
        alphas=alphas,
        eigenvalues=eigenvalues,
        col_means=col_means,
        total_mean=float(fields["total_mean"]),
        kernel=fields["kernel"],
    )
