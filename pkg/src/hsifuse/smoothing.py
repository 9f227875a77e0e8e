"""Structure-preserving texture smoothing via weighted local polynomial fits.

Every pixel gets its own degree-L polynomial fitted over a square window,
with per-neighbor weights from patch similarity (so pixels across an edge
barely vote), and an L1 penalty on the polynomial's spatial gradient. The
L1 term is handled by operator splitting: alternate a weighted linear
solve, a soft-threshold shrink of the auxiliary gradient variable, and an
additive update of the splitting residual. The smoothed value at the
window center is the polynomial's constant coefficient.

All bands of a pixel share one weight vector and one normal-equation
matrix, so the per-band solves batch into a single linear solve.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kpca import KpcaParams, fit_kpca, transform
from .raster import HsiCube


@dataclass
class SmoothParams:
    lam: float = 1.2            # gradient-sparsity weight
    window_radius: int = 3      # fit window is (2r+1)^2 pixels
    patch_radius: int = 1       # similarity patch is (2p+1)^2 pixels
    degree: int = 2             # polynomial degree L, m = (L+1)(L+2)/2 terms
    sigma: float = 1.0          # Gaussian falloff over patch offsets
    h0: float = 1.0             # similarity scale
    max_iters: int = 20
    tol: float = 1e-4           # relative change of window values

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.window_radius < 1:
            raise ValueError("window_radius must be >= 1")
        if self.patch_radius < 0:
            raise ValueError("patch_radius must be >= 0")
        if self.degree < 0:
            raise ValueError("degree must be >= 0")
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")
        if self.h0 <= 0:
            raise ValueError("h0 must be > 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.tol <= 0:
            raise ValueError("tol must be > 0")

    @property
    def window_size(self) -> int:
        return (2 * self.window_radius + 1) ** 2

    @property
    def num_terms(self) -> int:
        return (self.degree + 1) * (self.degree + 2) // 2


@dataclass
class LocalSystem:
    """One pixel's fitting system: shared basis, weights, and split variables.

    d and b are (N, 2, bands): the auxiliary gradient target and the
    splitting residual, x-component then y-component, zero-initialized.
    """

    E: np.ndarray
    Ex: np.ndarray
    Ey: np.ndarray
    weights: np.ndarray
    d: np.ndarray = field(default=None)  # type: ignore[assignment]
    b: np.ndarray = field(default=None)  # type: ignore[assignment]

    @staticmethod
    def create(E, Ex, Ey, weights, bands: int) -> "LocalSystem":
        n = E.shape[0]
        return LocalSystem(
            E=E, Ex=Ex, Ey=Ey, weights=weights,
            d=np.zeros((n, 2, bands)), b=np.zeros((n, 2, bands)),
        )


def window_offsets(radius: int) -> np.ndarray:
    """(N, 2) array of (dy, dx) offsets in row-major order."""
    rng = np.arange(-radius, radius + 1)
    dy, dx = np.meshgrid(rng, rng, indexing="ij")
    return np.column_stack([dy.ravel(), dx.ravel()])


def monomial_exponents(degree: int) -> list[tuple[int, int]]:
    """(a, b) pairs for u^a v^b, total degree ascending, u-power descending."""
    return [(d - b, b) for d in range(degree + 1) for b in range(d + 1)]


def build_basis(window_radius: int, degree: int):
    """Monomial basis and its spatial derivatives on the window grid.

    Local coordinates are offsets scaled by the radius onto [-1, 1]; the
    derivative columns carry the 1/radius chain-rule factor so they are
    true per-pixel gradients.
    """
    if degree < 0:
        raise ValueError("degree must be >= 0")
    offs = window_offsets(window_radius)
    r = float(window_radius)
    v = offs[:, 0] / r  # row (y) coordinate
    u = offs[:, 1] / r  # column (x) coordinate
    exps = monomial_exponents(degree)
    n, m = offs.shape[0], len(exps)
    E = np.empty((n, m))
    Ex = np.zeros((n, m))
    Ey = np.zeros((n, m))
    for l, (a, b) in enumerate(exps):
        E[:, l] = u**a * v**b
        if a > 0:
            Ex[:, l] = a * u ** (a - 1) * v**b / r
        if b > 0:
            Ey[:, l] = b * u**a * v ** (b - 1) / r
    return E, Ex, Ey


def _patch_gaussian(patch_radius: int, sigma: float) -> np.ndarray:
    offs = window_offsets(patch_radius)
    d2 = (offs**2).sum(axis=1).astype(np.float64)
    return np.exp(-d2 / (2.0 * sigma * sigma))


def patch_weights(cube: HsiCube, center: tuple[int, int], params: SmoothParams) -> np.ndarray:
    """Similarity weights of every window neighbor against the center pixel.

    For neighbor x_i the weight is exp(-sum_y g(y) * ||I(x_i+y) - I(x+y)||^2
    / h0^2) over patch offsets y, with g an unnormalized Gaussian in the
    offset radius. Lookups outside the image clamp to the border. The
    center's own weight is exactly 1.
    """
    cy, cx = center
    h, w = cube.height, cube.width
    if not (0 <= cy < h and 0 <= cx < w):
        raise ValueError(f"center {center} outside {h}x{w} image")
    data = cube.data
    wins = window_offsets(params.window_radius)
    patch = window_offsets(params.patch_radius)
    g = _patch_gaussian(params.patch_radius, params.sigma)
    out = np.empty(wins.shape[0])
    for k, (ody, odx) in enumerate(wins):
        s = 0.0
        for (pdy, pdx), gy in zip(patch, g):
            ay = min(max(cy + ody + pdy, 0), h - 1)
            ax = min(max(cx + odx + pdx, 0), w - 1)
            by = min(max(cy + pdy, 0), h - 1)
            bx = min(max(cx + pdx, 0), w - 1)
            diff = data[ay, ax, :] - data[by, bx, :]
            s += gy * np.sum(diff * diff)
        out[k] = np.exp(-s / (params.h0 * params.h0))
    return out


def _weights_all(data: np.ndarray, params: SmoothParams) -> np.ndarray:
    """patch_weights for every pixel at once, (H, W, N)."""
    h, w = data.shape[:2]
    r, p = params.window_radius, params.patch_radius
    k = r + p
    pad = np.pad(data, ((k, k), (k, k), (0, 0)), mode="edge")
    wins = window_offsets(r)
    patch = window_offsets(p)
    g = _patch_gaussian(p, params.sigma)
    out = np.empty((h, w, wins.shape[0]))
    for i, (ody, odx) in enumerate(wins):
        acc = np.zeros((h, w))
        for (pdy, pdx), gy in zip(patch, g):
            a = pad[k + ody + pdy : k + ody + pdy + h, k + odx + pdx : k + odx + pdx + w, :]
            b = pad[k + pdy : k + pdy + h, k + pdx : k + pdx + w, :]
            diff = a - b
            acc += gy * np.sum(diff * diff, axis=2)
        out[:, :, i] = np.exp(-acc / (params.h0 * params.h0))
    return out


def shrink(v: np.ndarray, threshold: float) -> np.ndarray:
    """Componentwise soft threshold: sign(a) * max(|a| - threshold, 0)."""
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    return np.sign(v) * np.maximum(np.abs(v) - threshold, 0.0)


# windows whose normal matrix is effectively singular get a tiny Tikhonov
# term (1e-8 * mean diagonal); well-conditioned windows are left exact
_COND_LIMIT = 1e12


def _ridge(a: np.ndarray) -> float:
    cond = np.linalg.cond(a)
    if np.isfinite(cond) and cond <= _COND_LIMIT:
        return 0.0
    return 1e-8 * float(np.trace(a)) / a.shape[-1]


def solve_coefficients(sys: LocalSystem, window_values: np.ndarray, lam: float) -> np.ndarray:
    """Quadratic-subproblem solve: (m, bands) coefficients for all bands at once.

    Normal equations: (E'DE + 2*lam*(Ex'DEx + Ey'DEy)) c =
    E'D I + 2*lam*(Ex'D(dx-bx) + Ey'D(dy-by)), D = diag(weights).
    """
    window_values = np.asarray(window_values, dtype=np.float64)
    if window_values.ndim == 1:
        window_values = window_values[:, None]
    if not np.all(np.isfinite(window_values)):
        raise ValueError("non-finite window values")
    w = sys.weights
    ew = sys.E * w[:, None]
    a = sys.E.T @ ew
    rhs = ew.T @ window_values
    if lam > 0:
        a = a + 2.0 * lam * (sys.Ex.T @ (sys.Ex * w[:, None]) + sys.Ey.T @ (sys.Ey * w[:, None]))
        rhs = rhs + 2.0 * lam * (
            (sys.Ex * w[:, None]).T @ (sys.d[:, 0, :] - sys.b[:, 0, :])
            + (sys.Ey * w[:, None]).T @ (sys.d[:, 1, :] - sys.b[:, 1, :])
        )
    eps = _ridge(a)
    if eps > 0.0:
        a = a + eps * np.eye(a.shape[0])
    return np.linalg.solve(a, rhs)


def window_values(cube: HsiCube, center: tuple[int, int], radius: int) -> np.ndarray:
    """(N, bands) window samples with border clamping."""
    cy, cx = center
    offs = window_offsets(radius)
    ys = np.clip(cy + offs[:, 0], 0, cube.height - 1)
    xs = np.clip(cx + offs[:, 1], 0, cube.width - 1)
    return cube.data[ys, xs, :]


def smooth_pixel(
    cube: HsiCube,
    center: tuple[int, int],
    params: SmoothParams,
    return_trace: bool = False,
):
    """Smoothed spectrum at one pixel; optionally also per-iteration coefficients.

    With lam=0 the split variables never enter: the result is a single
    weighted least-squares fit. The trace (when requested) holds the
    coefficient matrix after each quadratic solve, for convergence and
    objective diagnostics.
    """
    e, ex, ey = build_basis(params.window_radius, params.degree)
    w = patch_weights(cube, center, params)
    vals = window_values(cube, center, params.window_radius)
    sys = LocalSystem.create(e, ex, ey, w, cube.bands)

    if params.lam == 0.0:
        c = solve_coefficients(sys, vals, 0.0)
        return (c[0].copy(), [c]) if return_trace else c[0].copy()

    thr = 1.0 / params.lam
    trace = []
    p_prev = None
    c = None
    for _ in range(params.max_iters):
        c = solve_coefficients(sys, vals, params.lam)
        p_win = sys.E @ c
        gx = sys.Ex @ c
        gy = sys.Ey @ c
        sys.d[:, 0, :] = shrink(gx + sys.b[:, 0, :], thr)
        sys.d[:, 1, :] = shrink(gy + sys.b[:, 1, :], thr)
        sys.b[:, 0, :] += gx - sys.d[:, 0, :]
        sys.b[:, 1, :] += gy - sys.d[:, 1, :]
        if return_trace:
            trace.append(c.copy())
        if p_prev is not None:
            denom = max(float(np.linalg.norm(p_prev)), 1e-30)
            if float(np.linalg.norm(p_win - p_prev)) / denom < params.tol:
                break
        p_prev = p_win
    out = c[0].copy()
    return (out, trace) if return_trace else out


def smooth_cube(cube: HsiCube, params: SmoothParams, chunk: int = 512) -> HsiCube:
    """smooth_pixel applied at every pixel, batched in chunks for speed.

    Matches the per-pixel routine including its stopping rule: each pixel
    stops iterating once its own window values settle, so batching does not
    change results.
    """
    h, w, bands = cube.data.shape
    e, ex, ey = build_basis(params.window_radius, params.degree)
    n, m = e.shape
    weights_img = _weights_all(cube.data, params)

    r = params.window_radius
    pad = np.pad(cube.data, ((r, r), (r, r), (0, 0)), mode="edge")
    offs = window_offsets(r)
    rows, cols = np.mgrid[0:h, 0:w]
    rows = rows.ravel()
    cols = cols.ravel()

    out = np.empty((h * w, bands))
    total = h * w
    for start in range(0, total, chunk):
        stop = min(start + chunk, total)
        pr = rows[start:stop]
        pc = cols[start:stop]
        # (P, N, B) window samples via padded gather
        wy = pr[:, None] + offs[None, :, 0] + r
        wx = pc[:, None] + offs[None, :, 1] + r
        vals = pad[wy, wx, :]
        wts = weights_img[pr, pc, :]
        out[start:stop] = _smooth_batch(vals, wts, e, ex, ey, params)
    return HsiCube(out.reshape(h, w, bands))


def _smooth_batch(vals, wts, e, ex, ey, params: SmoothParams) -> np.ndarray:
    """Iterate the three-step scheme for a batch of pixels; (P, bands) output.

    Per-pixel weighted bases are premultiplied so every step is a batched
    matmul; the normal-equation matrix is fixed across iterations.
    """
    p_count, n, bands = vals.shape
    m = e.shape[1]
    lam = params.lam

    ee = e[:, :, None] * e[:, None, :]  # (N, m, m)
    lhs = np.tensordot(wts, ee, axes=(1, 0))
    ewt = (wts[:, :, None] * e[None, :, :]).transpose(0, 2, 1)  # (P, m, N)
    rhs0 = ewt @ vals
    if lam > 0:
        gg = ex[:, :, None] * ex[:, None, :] + ey[:, :, None] * ey[:, None, :]
        lhs = lhs + 2.0 * lam * np.tensordot(wts, gg, axes=(1, 0))
    conds = np.linalg.cond(lhs)
    ill = ~np.isfinite(conds) | (conds > _COND_LIMIT)
    if ill.any():
        eps = np.where(ill, 1e-8 * np.einsum("pii->p", lhs) / m, 0.0)
        lhs = lhs + eps[:, None, None] * np.eye(m)[None, :, :]

    if lam == 0.0:
        c = np.linalg.solve(lhs, rhs0)
        return c[:, 0, :]

    # gradient rows stacked [x; y] so one matmul serves both components
    grad_basis = np.vstack([ex, ey])                       # (2N, m)
    eval_basis = np.vstack([e, grad_basis])                # (3N, m)
    wts2 = np.concatenate([wts, wts], axis=1)              # (P, 2N)
    gwt = (wts2[:, :, None] * grad_basis[None, :, :]).transpose(0, 2, 1)

    thr = 1.0 / lam
    d = np.zeros((p_count, 2 * n, bands))
    b = np.zeros((p_count, 2 * n, bands))
    result = np.empty((p_count, bands))
    active = np.arange(p_count)
    p_prev = None

    for _ in range(params.max_iters):
        rhs = rhs0[active] + (2.0 * lam) * (gwt[active] @ (d[active] - b[active]))
        c = np.linalg.solve(lhs[active], rhs)
        result[active] = c[:, 0, :]
        fitted = eval_basis[None, :, :] @ c
        p_win = fitted[:, :n]
        grad = fitted[:, n:]
        v = grad + b[active]
        d[active] = v - np.clip(v, -thr, thr)  # soft threshold at thr
        b[active] = v - d[active]

        if p_prev is None:
            p_prev = np.zeros((p_count, n, bands))
            p_prev[active] = p_win
            continue
        diff = p_win - p_prev[active]
        delta = np.sqrt(np.einsum("pnb,pnb->p", diff, diff))
        denom = np.maximum(
            np.sqrt(np.einsum("pnb,pnb->p", p_prev[active], p_prev[active])), 1e-30
        )
        p_prev[active] = p_win
        keep = delta / denom >= params.tol
        active = active[keep]
        if active.size == 0:
            break
    return result


def extract_sp(
    cube: HsiCube,
    params: SmoothParams,
    num_components: int,
    kpca_params: KpcaParams | None = None,
    seed: int = 0,
) -> HsiCube:
    """Smooth every pixel, then compact the result to K kernel components."""
    n_pixels = cube.height * cube.width
    if num_components > cube.bands:
        raise ValueError(
            f"K={num_components} exceeds band count {cube.bands}"
        )
    if num_components > n_pixels:
        raise ValueError(f"K={num_components} exceeds pixel count {n_pixels}")
    initial = smooth_cube(cube, params)
    px = initial.pixels()
    kpca_params = kpca_params or KpcaParams()
    if kpca_params.kernel_width == "auto" and np.ptp(px, axis=0).max() == 0.0:
        # constant image: any width gives an all-ones kernel and zero spectrum
        kpca_params = KpcaParams(kpca_params.max_anchors, 1.0)
    model = fit_kpca(px, num_components, kpca_params, seed=seed)
    feats = transform(model, px)
    return HsiCube(feats.reshape(cube.height, cube.width, num_components))
