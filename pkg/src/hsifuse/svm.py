"""Gaussian-kernel max-margin classifier with calibrated probabilities.

Binary subproblems are solved by sequential minimal optimization with
maximal-violating-pair selection (deterministic: ties resolve to the lowest
index). Multiclass goes one-vs-rest; each task's decision values are mapped
to probabilities by a sigmoid fitted on out-of-fold decisions, then the
per-pixel vector is normalized onto the simplex. Hyperparameters come from
a fivefold cross-validated grid search (kernel width 2^-5..2^5, penalty
10^-2..10^4 by default).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit
from scipy.spatial.distance import cdist


class TrainingError(ValueError):
    pass


DEFAULT_KERNEL_WIDTHS = [2.0**e for e in range(-5, 6)]
DEFAULT_PENALTIES = [10.0**e for e in range(-2, 5)]


@dataclass
class TrainGrid:
    kernel_widths: list[float] = field(default_factory=lambda: list(DEFAULT_KERNEL_WIDTHS))
    penalties: list[float] = field(default_factory=lambda: list(DEFAULT_PENALTIES))
    folds: int = 5

    def __post_init__(self):
        if not self.kernel_widths or not self.penalties:
            raise TrainingError("hyperparameter grids must be nonempty")
        if self.folds < 2:
            raise TrainingError("folds must be >= 2")


@dataclass
class BinaryTask:
    """One one-vs-rest machine: its support set and sigmoid calibration."""

    support_vectors: np.ndarray  # (n_sv, d)
    coef: np.ndarray             # (n_sv,) alpha_i * y_i
    bias: float
    platt_a: float
    platt_b: float


@dataclass
class TrainedClassifier:
    classes: np.ndarray          # sorted class ids
    gamma: float                 # kernel coefficient exp(-gamma * ||a-b||^2)
    penalty: float
    tasks: list[BinaryTask]
    cv_accuracy: float           # mean fold accuracy of the winning pair

    @property
    def num_classes(self) -> int:
        return len(self.classes)


def rbf_kernel(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    return np.exp(-gamma * cdist(a, b, "sqeuclidean"))


@njit(cache=True)
def _smo_loop(kmat, y, c, tol, max_iter):
    """Maximal-violating-pair SMO on a precomputed kernel matrix.

    Maintains u_t = sum_j alpha_j y_j K(t, j); the selection score is
    s_t = y_t - u_t. Returns (alpha, gap, iterations).
    """
    n = kmat.shape[0]
    alpha = np.zeros(n)
    u = np.zeros(n)
    gap = np.inf
    it = 0
    while it < max_iter:
        best_i = -1
        best_j = -1
        s_i = -np.inf
        s_j = np.inf
        for t in range(n):
            s = y[t] - u[t]
            up = (y[t] > 0 and alpha[t] < c) or (y[t] < 0 and alpha[t] > 0)
            low = (y[t] < 0 and alpha[t] < c) or (y[t] > 0 and alpha[t] > 0)
            if up and s > s_i:
                s_i = s
                best_i = t
            if low and s < s_j:
                s_j = s
                best_j = t
        if best_i < 0 or best_j < 0:
            gap = 0.0
            break
        gap = s_i - s_j
        if gap <= tol:
            break
        i = best_i
        j = best_j
        quad = kmat[i, i] + kmat[j, j] - 2.0 * kmat[i, j]
        if quad < 1e-12:
            quad = 1e-12
        step = gap / quad
        if y[i] > 0:
            limit_i = c - alpha[i]
        else:
            limit_i = alpha[i]
        if y[j] > 0:
            limit_j = alpha[j]
        else:
            limit_j = c - alpha[j]
        if step > limit_i:
            step = limit_i
        if step > limit_j:
            step = limit_j
        alpha[i] += y[i] * step
        alpha[j] -= y[j] * step
        # keep the box exact against rounding in the two updates above
        if alpha[i] > c:
            alpha[i] = c
        elif alpha[i] < 0.0:
            alpha[i] = 0.0
        if alpha[j] > c:
            alpha[j] = c
        elif alpha[j] < 0.0:
            alpha[j] = 0.0
        for t in range(n):
            u[t] += step * (kmat[t, i] - kmat[t, j])
        it += 1
    return alpha, gap, it


def _bias_from(kmat, y, alpha, c):
    u = kmat @ (alpha * y)
    s = y - u
    up = ((y > 0) & (alpha < c)) | ((y < 0) & (alpha > 0))
    low = ((y < 0) & (alpha < c)) | ((y > 0) & (alpha > 0))
    hi = s[up].max() if up.any() else 0.0
    lo = s[low].min() if low.any() else 0.0
    return float(hi + lo) / 2.0


def smo_train_binary(
    features: np.ndarray,
    labels: np.ndarray,
    penalty: float,
    gamma: float,
    tol: float = 1e-3,
    max_passes: int = 100_000,
    kernel_matrix: np.ndarray | None = None,
):
    """Solve one soft-margin binary task; returns (alpha, bias).

    labels must be +/-1 with both signs present. On exit the box and
    equality constraints hold and the maximal KKT violation is <= tol
    (unless the iteration cap was hit first, which raises).
    """
    features = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if not np.all(np.isfinite(features)):
        raise TrainingError("non-finite feature values")
    if set(np.unique(y)) != {-1.0, 1.0}:
        raise TrainingError("labels must contain both +1 and -1")
    kmat = kernel_matrix if kernel_matrix is not None else rbf_kernel(features, features, gamma)
    alpha, gap, iters = _smo_loop(kmat, y, float(penalty), float(tol), max_passes)
    if gap > tol:
        raise TrainingError(
            f"SMO failed to reach tolerance {tol} in {max_passes} iterations (gap={gap})"
        )
    bias = _bias_from(kmat, y, alpha, penalty)
    return alpha, bias


def decision_values(features, support_vectors, coef, bias, gamma):
    return rbf_kernel(features, support_vectors, gamma) @ coef + bias


def platt_calibrate(decisions: np.ndarray, labels: np.ndarray, max_iters: int = 100):
    """Fit p(+1|f) = 1 / (1 + exp(A f + B)) by regularized maximum likelihood.

    Targets are smoothed class frequencies; the optimizer is Newton's method
    with backtracking. A failure to converge is reported with the last
    iterate rather than raised.
    """
    f = np.asarray(decisions, dtype=np.float64)
    y = np.asarray(labels)
    pos = y > 0
    n_pos = int(pos.sum())
    n_neg = f.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise TrainingError("calibration needs both classes")
    hi = (n_pos + 1.0) / (n_pos + 2.0)
    lo = 1.0 / (n_neg + 2.0)
    t = np.where(pos, hi, lo)

    def nll(a, b):
        z = a * f + b
        # stable log(1 + exp(-z)) split by sign
        return float(
            np.sum(np.where(z >= 0, t * z + np.log1p(np.exp(-z)), (t - 1) * z + np.log1p(np.exp(z))))
        )

    a, b = 0.0, float(np.log((n_neg + 1.0) / (n_pos + 1.0)))
    fval = nll(a, b)
    converged = False
    for _ in range(max_iters):
        z = a * f + b
        p = np.where(z >= 0, np.exp(-z) / (1 + np.exp(-z)), 1 / (1 + np.exp(z)))
        d2 = p * (1 - p)
        h11 = float(np.dot(f * f, d2)) + 1e-12
        h22 = float(np.sum(d2)) + 1e-12
        h21 = float(np.dot(f, d2))
        d1 = t - p
        g1 = float(np.dot(f, d1))
        g2 = float(np.sum(d1))
        if abs(g1) < 1e-5 and abs(g2) < 1e-5:
            converged = True
            break
        det = h11 * h22 - h21 * h21
        da = -(h22 * g1 - h21 * g2) / det
        db = -(-h21 * g1 + h11 * g2) / det
        gd = g1 * da + g2 * db
        step = 1.0
        while step >= 1e-10:
            na, nb = a + step * da, b + step * db
            nf = nll(na, nb)
            if nf < fval + 1e-4 * step * gd:
                a, b, fval = na, nb, nf
                break
            step /= 2.0
        else:
            break  # line search exhausted; keep last iterate
    if not converged:
        warnings.warn(
            f"sigmoid calibration stopped before convergence (A={a}, B={b})",
            RuntimeWarning,
        )
    return a, b


def sigmoid_probability(decisions, a, b):
    z = a * np.asarray(decisions, dtype=np.float64) + b
    return np.where(z >= 0, np.exp(-z) / (1 + np.exp(-z)), 1 / (1 + np.exp(z)))


def stratified_folds(labels: np.ndarray, folds: int, seed: int) -> np.ndarray:
    """Per-sample fold ids: each class shuffled once, dealt round-robin."""
    rng = np.random.default_rng(seed)
    fold_of = np.empty(labels.shape[0], dtype=np.int64)
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        rng.shuffle(idx)
        fold_of[idx] = np.arange(idx.size) % folds
    return fold_of


def train(
    features: np.ndarray,
    labels: np.ndarray,
    grid: TrainGrid | None = None,
    seed: int = 0,
    tol: float = 1e-3,
) -> TrainedClassifier:
    """Cross-validate the (kernel width, penalty) grid, then refit and calibrate.

    Fold accuracy is the one-vs-rest argmax accuracy on the held-out fold.
    Ties prefer the smaller penalty, then the smaller kernel width. The
    winning pair is refit on all samples; sigmoid calibration uses that
    pair's out-of-fold decision values.
    """
    grid = grid or TrainGrid()
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    classes = np.unique(labels)
    if classes.size < 2:
        raise TrainingError("need at least two classes")
    counts = {int(c): int((labels == c).sum()) for c in classes}
    too_few = {c: n for c, n in counts.items() if n < grid.folds}
    if too_few:
        raise TrainingError(f"classes with fewer samples than folds: {too_few}")

    n = features.shape[0]
    fold_of = stratified_folds(labels, grid.folds, seed)
    d2 = cdist(features, features, "sqeuclidean")

    best = None  # (accuracy, -penalty, -gamma) maximized
    best_pair = None
    best_oof = None
    for gamma in grid.kernel_widths:
        kfull = np.exp(-gamma * d2)
        for penalty in grid.penalties:
            correct = 0
            oof = np.zeros((n, classes.size))
            for f in range(grid.folds):
                tr = fold_of != f
                va = ~tr
                ktr = kfull[np.ix_(tr, tr)]
                kva = kfull[np.ix_(va, tr)]
                y_tr = labels[tr]
                for ti, cls in enumerate(classes):
                    y = np.where(y_tr == cls, 1.0, -1.0)
                    alpha, bias = smo_train_binary(
                        features[tr], y, penalty, gamma, tol=tol, kernel_matrix=ktr
                    )
                    oof[va, ti] = kva @ (alpha * y) + bias
                pred = classes[np.argmax(oof[va], axis=1)]
                correct += int((pred == labels[va]).sum())
            acc = correct / n
            key = (acc, -penalty, -gamma)
            if best is None or key > best:
                best = key
                best_pair = (gamma, penalty)
                best_oof = oof
    gamma, penalty = best_pair

    kfull = np.exp(-gamma * d2)
    tasks = []
    for ti, cls in enumerate(classes):
        y = np.where(labels == cls, 1.0, -1.0)
        alpha, bias = smo_train_binary(
            features, y, penalty, gamma, tol=tol, kernel_matrix=kfull
        )
        sv = alpha > 1e-12
        a, b = platt_calibrate(best_oof[:, ti], y)
        tasks.append(
            BinaryTask(
                support_vectors=features[sv].copy(),
                coef=(alpha * y)[sv],
                bias=bias,
                platt_a=a,
                platt_b=b,
            )
        )
    return TrainedClassifier(
        classes=classes,
        gamma=gamma,
        penalty=penalty,
        tasks=tasks,
        cv_accuracy=best[0],
    )


def predict_proba(model: TrainedClassifier, features: np.ndarray) -> np.ndarray:
    """(p, T) class probabilities; rows sum to one, uniform when all raw mass ~0."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != model.tasks[0].support_vectors.shape[1]:
        raise TrainingError(
            f"feature dimension mismatch: expected "
            f"{model.tasks[0].support_vectors.shape[1]}, got {features.shape}"
        )
    raw = np.empty((features.shape[0], model.num_classes))
    for ti, task in enumerate(model.tasks):
        f = decision_values(features, task.support_vectors, task.coef, task.bias, model.gamma)
        raw[:, ti] = sigmoid_probability(f, task.platt_a, task.platt_b)
    sums = raw.sum(axis=1)
    out = np.full_like(raw, 1.0 / model.num_classes)
    ok = sums >= 1e-12
    out[ok] = raw[ok] / sums[ok, None]
    return out


def save_classifier(model: TrainedClassifier, header_path) -> None:
    header_path = Path(header_path)
    d = model.tasks[0].support_vectors.shape[1]
    lines = [
        f"classes={','.join(str(int(c)) for c in model.classes)}",
        f"dim={d}",
        f"gamma={model.gamma!r}",
        f"penalty={model.penalty!r}",
        f"cv_accuracy={model.cv_accuracy!r}",
        f"sv_counts={','.join(str(t.support_vectors.shape[0]) for t in model.tasks)}",
        f"biases={','.join(repr(t.bias) for t in model.tasks)}",
        f"platt_a={','.join(repr(t.platt_a) for t in model.tasks)}",
        f"platt_b={','.join(repr(t.platt_b) for t in model.tasks)}",
    ]
    header_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    parts = []
    for task in model.tasks:
        parts.append(task.support_vectors.ravel())
        parts.append(task.coef.ravel())
    np.concatenate(parts).astype("<f4").tofile(header_path.with_suffix(".raw"))


def load_classifier(header_path) -> TrainedClassifier:
    header_path = Path(header_path)
    fields = {}
    for line in header_path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            key, _, value = line.partition("=")
            fields[key.strip()] = value.strip()
    classes = np.array([int(v) for v in fields["classes"].split(",")], dtype=np.int64)
    d = int(fields["dim"])
    sv_counts = [int(v) for v in fields["sv_counts"].split(",")]
    biases = [float(v) for v in fields["biases"].split(",")]
    platt_a = [float(v) for v in fields["platt_a"].split(",")]
    platt_b = [float(v) for v in fields["platt_b"].split(",")]
    blob = np.fromfile(header_path.with_suffix(".raw"), dtype="<f4").astype(np.float64)
    tasks = []
    pos = 0
    for ti, n_sv in enumerate(sv_counts):
        sv = blob[pos : pos + n_sv * d].reshape(n_sv, d); pos += n_sv * d
        coef = blob[pos : pos + n_sv]; pos += n_sv
        tasks.append(BinaryTask(sv, coef, biases[ti], platt_a[ti], platt_b[ti]))
    return TrainedClassifier(
        classes=classes,
        gamma=float(fields["gamma"]),
        penalty=float(fields["penalty"]),
        tasks=tasks,
        cv_accuracy=float(fields["cv_accuracy"]),
    )
