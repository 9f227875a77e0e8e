"""Probability refinement on the pixel grid via a weighted graph Laplacian.

Each class's refined probability field minimizes a smoothness energy over
the 4-connected grid plus a fidelity term anchoring it to the classifier's
per-pixel prior, which reduces to one symmetric positive definite linear
system per class. Edge weights follow the contrast of a scalar guidance
image (the leading kernel component of the original cube), so probability
mass diffuses within homogeneous regions but not across edges.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .kpca import KpcaParams, fit_kpca, transform
from .raster import HsiCube, ProbStack


class SolverError(RuntimeError):
    pass


@dataclass
class ErwParams:
    beta: float = 90.0          # edge-contrast scale on [0,1] guidance
    gamma: float = 0.1          # prior fidelity weight
    cg_tol: float = 1e-6        # relative residual target
    cg_max_iters: int = 2000

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be > 0")
        if self.gamma <= 0:
            raise ValueError("gamma must be > 0")
        if self.cg_tol <= 0:
            raise ValueError("cg_tol must be > 0")
        if self.cg_max_iters < 1:
            raise ValueError("cg_max_iters must be >= 1")


@dataclass
class GridLaplacian:
    height: int
    width: int
    beta: float
    matrix: sparse.csr_matrix  # symmetric PSD, rows sum to zero


def guidance_image(
    cube: HsiCube, kpca_params: KpcaParams | None = None, seed: int = 0
) -> np.ndarray:
    """Leading kernel component of the cube, rescaled onto [0, 1].

    A constant cube (or a degenerate component) maps to all zeros.
    """
    px = cube.pixels()
    kpca_params = kpca_params or KpcaParams()
    if kpca_params.kernel_width == "auto" and np.ptp(px, axis=0).max() == 0.0:
        kpca_params = KpcaParams(kpca_params.max_anchors, 1.0)
    model = fit_kpca(px, 1, kpca_params, seed=seed)
    comp = transform(model, px)[:, 0].reshape(cube.height, cube.width)
    lo, hi = comp.min(), comp.max()
    if hi - lo <= 0.0:
        return np.zeros_like(comp)
    return (comp - lo) / (hi - lo)


def build_laplacian(guidance: np.ndarray, beta: float) -> GridLaplacian:
    """4-connected grid Laplacian with weights exp(-beta * (v_i - v_j)^2)."""
    guidance = np.asarray(guidance, dtype=np.float64)
    if guidance.ndim != 2:
        raise ValueError("guidance must be 2-D")
    if not np.all(np.isfinite(guidance)):
        raise ValueError("guidance contains non-finite values")
    h, w = guidance.shape
    idx = np.arange(h * w).reshape(h, w)

    rows_i = []
    rows_j = []
    vals = []
    if w > 1:
        a = idx[:, :-1].ravel()
        b = idx[:, 1:].ravel()
        wgt = np.exp(-beta * (guidance[:, :-1] - guidance[:, 1:]).ravel() ** 2)
        rows_i.append(a); rows_j.append(b); vals.append(wgt)
    if h > 1:
        a = idx[:-1, :].ravel()
        b = idx[1:, :].ravel()
        wgt = np.exp(-beta * (guidance[:-1, :] - guidance[1:, :]).ravel() ** 2)
        rows_i.append(a); rows_j.append(b); vals.append(wgt)

    n = h * w
    if not rows_i:  # single pixel
        return GridLaplacian(h, w, beta, sparse.csr_matrix((n, n)))
    i = np.concatenate(rows_i)
    j = np.concatenate(rows_j)
    v = np.concatenate(vals)
    off = sparse.coo_matrix(
        (np.concatenate([-v, -v]), (np.concatenate([i, j]), np.concatenate([j, i]))),
        shape=(n, n),
    ).tocsr()
    degree = -np.asarray(off.sum(axis=1)).ravel()
    lap = off + sparse.diags(degree)
    return GridLaplacian(h, w, beta, lap.tocsr())


@dataclass
class CgResult:
    x: np.ndarray
    iterations: int
    rel_residual: float
    iterates: list  # per-iteration solutions when recording was requested


def cg_jacobi(
    a: sparse.csr_matrix,
    rhs: np.ndarray,
    tol: float,
    max_iters: int,
    record_iterates: bool = False,
) -> CgResult:
    """Jacobi-preconditioned conjugate gradient to a relative residual target."""
    bnorm = float(np.linalg.norm(rhs))
    if bnorm == 0.0:
        return CgResult(np.zeros_like(rhs), 0, 0.0, [])
    minv = 1.0 / a.diagonal()
    x = np.zeros_like(rhs)
    r = rhs.copy()
    z = minv * r
    p = z.copy()
    rz = float(r @ z)
    iterates = []
    for it in range(1, max_iters + 1):
        ap = a @ p
        alpha = rz / float(p @ ap)
        x += alpha * p
        r -= alpha * ap
        if record_iterates:
            iterates.append(x.copy())
        rel = float(np.linalg.norm(r)) / bnorm
        if rel <= tol:
            return CgResult(x, it, rel, iterates)
        z = minv * r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError(
        f"conjugate gradient: relative residual {rel} after {max_iters} iterations "
        f"(target {tol})"
    )


def erw_optimize(
    lap: GridLaplacian, priors: ProbStack, params: ErwParams
) -> tuple[ProbStack, ProbStack]:
    """Refine per-class probabilities; returns (Q, C2) with C2 = Q.

    Class t solves (L + gamma * diag(sum_q prior_q)) q_t = gamma * prior_t.
    Because the priors sum to one per pixel, the refined fields sum to one
    as well (the all-ones vector solves the summed system exactly).
    """
    if (priors.height, priors.width) != (lap.height, lap.width):
        raise ValueError(
            f"prior stack {priors.height}x{priors.width} does not match "
            f"laplacian grid {lap.height}x{lap.width}"
        )
    n = lap.height * lap.width
    total = priors.probs.sum(axis=2).ravel()
    a = (lap.matrix + sparse.diags(params.gamma * total)).tocsr()
    q = np.empty((n, priors.num_classes))
    for t in range(priors.num_classes):
        rhs = params.gamma * priors.probs[:, :, t].ravel()
        result = cg_jacobi(a, rhs, params.cg_tol, params.cg_max_iters)
        q[:, t] = result.x
    stack = ProbStack(q.reshape(priors.height, priors.width, priors.num_classes))
    return stack, stack
