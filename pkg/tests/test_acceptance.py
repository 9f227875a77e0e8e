"""Acceptance suite: the seven release criteria, one pass/fail line each.

Run with `pytest tests/test_acceptance.py -v -s` to see the lines as they
print. The five full-scale pipeline runs are shared through a session
fixture, so the end-to-end criteria reuse the same executions.
"""

import sys
import time
from contextlib import contextmanager

import numpy as np
import pytest

from oracles import (
    dense_walker_solve,
    dual_objective,
    lstsq_coefficients,
    pca_scores,
    qp_dual_oracle,
    smoothing_objective,
)

from hsifuse.fusion import class_separability, confusion, fuse_labels, metrics
from hsifuse.kpca import KpcaParams, fit_kpca, fit_scores
from hsifuse.pipeline import PipelineConfig, run_pipeline
from hsifuse.randwalk import ErwParams, build_laplacian, erw_optimize
from hsifuse.raster import HsiCube, ProbStack, RasterError
from hsifuse.smoothing import (
    LocalSystem,
    SmoothParams,
    build_basis,
    patch_weights,
    shrink,
    smooth_pixel,
    solve_coefficients,
    window_values,
)
from hsifuse.svm import rbf_kernel, smo_train_binary


@contextmanager
def criterion(number, description):
    try:
        yield
    except Exception:
        print(f"[FAIL] criterion {number}: {description}", file=sys.stderr)
        raise
    print(f"[PASS] criterion {number}: {description}")


def random_local_system(rng):
    radius = int(rng.integers(1, 4))
    degree = int(rng.integers(0, 4))
    bands = int(rng.integers(1, 4))
    e, ex, ey = build_basis(radius, degree)
    n = e.shape[0]
    sys_ = LocalSystem.create(e, ex, ey, rng.uniform(0.05, 1.0, size=n), bands)
    sys_.d = rng.normal(size=(n, 2, bands))
    sys_.b = rng.normal(size=(n, 2, bands))
    vals = rng.normal(size=(n, bands))
    lam = float(rng.uniform(0.1, 3.0))
    return sys_, vals, lam


def quadratic_energy(sys_, vals, lam, c):
    r = sys_.E @ c - vals
    total = float((sys_.weights[:, None] * r * r).sum())
    if lam > 0:
        rx = sys_.Ex @ c - (sys_.d[:, 0, :] - sys_.b[:, 0, :])
        ry = sys_.Ey @ c - (sys_.d[:, 1, :] - sys_.b[:, 1, :])
        total += 2.0 * lam * float((sys_.weights[:, None] * (rx * rx + ry * ry)).sum())
    return total


def fd_gradient(sys_, vals, lam, c, h=1e-6):
    g = np.zeros_like(c)
    for i in range(c.shape[0]):
        for j in range(c.shape[1]):
            cp = c.copy(); cp[i, j] += h
            cm = c.copy(); cm[i, j] -= h
            g[i, j] = (quadratic_energy(sys_, vals, lam, cp)
                       - quadratic_energy(sys_, vals, lam, cm)) / (2 * h)
    return g


def test_criterion_1_oracle_equivalences():
    start = time.monotonic()
    with criterion(1, "oracle equivalences (SMO/QP, solve/lstsq, walker/dense, KPCA/PCA)"):
        rng = np.random.default_rng(101)
        for _ in range(100):
            n = int(rng.integers(2, 7))
            feats = rng.normal(size=(n, 2))
            y = np.where(rng.uniform(size=n) < 0.5, 1.0, -1.0)
            if np.abs(y.sum()) == n:
                y[0] = -y[0]
            c = float(rng.choice([0.5, 1.0, 10.0]))
            gamma = float(rng.choice([0.25, 1.0, 4.0]))
            alpha, _ = smo_train_binary(feats, y, c, gamma, tol=1e-6)
            kmat = rbf_kernel(feats, feats, gamma)
            ours = dual_objective(kmat, y, alpha)
            best, _ = qp_dual_oracle(kmat, y, c)
            assert best - ours < 1e-4, f"dual objective gap {best - ours}"

        rng = np.random.default_rng(102)
        for _ in range(100):
            sys_, vals, lam = random_local_system(rng)
            got = solve_coefficients(sys_, vals, lam)
            ref = lstsq_coefficients(
                sys_.E, sys_.Ex, sys_.Ey, sys_.weights, vals, sys_.d, sys_.b, lam
            )
            assert np.abs(got - ref).max() < 1e-8

        rng = np.random.default_rng(103)
        for i in range(50):
            shape = (2, 2) if i % 2 == 0 else (3, 3)
            g = rng.uniform(size=shape)
            priors = ProbStack(rng.dirichlet(np.ones(2), size=shape))
            lap = build_laplacian(g, 1.0)
            q, _ = erw_optimize(lap, priors, ErwParams(beta=1.0, gamma=0.5, cg_tol=1e-14))
            ref = dense_walker_solve(g, priors.probs, 1.0, 0.5)
            assert np.abs(q.probs - ref).max() < 1e-8

        rng = np.random.default_rng(104)
        for _ in range(10):
            x = rng.normal(size=(6, 2))
            model = fit_kpca(x, 2, KpcaParams(kernel_width=1.0), kernel="linear")
            scores = fit_scores(model)
            ref = pca_scores(x, 2)
            for j in range(2):
                assert min(np.abs(scores[:, j] - ref[:, j]).max(),
                           np.abs(scores[:, j] + ref[:, j]).max()) < 1e-8
    elapsed = time.monotonic() - start
    assert elapsed < 60, f"criterion 1 took {elapsed:.1f}s (budget 60s)"


def test_criterion_2_structural_invariants():
    start = time.monotonic()
    with criterion(2, "structural invariants (graph, simplex, shrink, objective)"):
        rng = np.random.default_rng(201)
        for _ in range(10):
            g = rng.uniform(size=(4, 5))
            mat = build_laplacian(g, 90.0).matrix.toarray()
            assert np.abs(mat.sum(axis=1)).max() <= 1e-12
            assert np.abs(mat - mat.T).max() == 0.0
            for _ in range(5):
                x = rng.normal(size=20)
                assert x @ (mat @ x) >= -1e-10

        for _ in range(10):
            h, w, t = 6, 7, int(rng.integers(2, 6))
            priors = ProbStack(rng.dirichlet(np.ones(t), size=(h, w)))
            lap = build_laplacian(rng.uniform(size=(h, w)), 90.0)
            q, _ = erw_optimize(lap, priors, ErwParams())
            assert np.abs(q.probs.sum(axis=2) - 1.0).max() <= 1e-5
            assert q.probs.min() >= 0.0 and q.probs.max() <= 1.0

        bad = np.full((2, 2, 2), 0.5)
        bad[0, 0, 0] = 0.6
        with pytest.raises(RasterError):
            ProbStack(bad)

        vs = rng.normal(size=500) * 3
        ts = rng.uniform(0.0, 2.0, size=500)
        got = shrink(vs, 0.0)
        assert np.array_equal(got, vs)
        for v, t in zip(vs, ts):
            assert shrink(np.array([v]), t)[0] == np.sign(v) * max(abs(v) - t, 0.0)

        rng = np.random.default_rng(202)
        img = HsiCube(rng.uniform(size=(16, 16, 3)))
        params = SmoothParams()
        e, ex, ey = build_basis(params.window_radius, params.degree)
        for cy in range(16):
            for cx in range(16):
                _, trace = smooth_pixel(img, (cy, cx), params, return_trace=True)
                w = patch_weights(img, (cy, cx), params)
                vals = window_values(img, (cy, cx), params.window_radius)
                first = smoothing_objective(e, ex, ey, w, vals, params.lam, trace[0])
                final = smoothing_objective(e, ex, ey, w, vals, params.lam, trace[-1])
                assert final <= first + 1e-12 * max(1.0, first), (cy, cx)
    elapsed = time.monotonic() - start
    assert elapsed < 120, f"criterion 2 took {elapsed:.1f}s (budget 120s)"


def test_criterion_3_gradient_check():
    with criterion(3, "quadratic-step coefficients zero the objective gradient"):
        rng = np.random.default_rng(301)
        for _ in range(50):
            sys_, vals, lam = random_local_system(rng)
            c = solve_coefficients(sys_, vals, lam)
            g = fd_gradient(sys_, vals, lam, c)
            scale = np.abs(fd_gradient(sys_, vals, lam, np.zeros_like(c))).max()
            rel = np.abs(g).max() / max(scale, 1.0)
            assert rel <= 1e-5, f"stationarity residual {rel}"


def test_criterion_4_synthetic_end_to_end(acceptance_runs):
    runs, elapsed = acceptance_runs
    with criterion(4, "synthetic benchmark: fused OA >= 0.95 and fusion beats branches"):
        fused = []
        best_branch = []
        for seed, cube, labels, result in runs:
            oa = result.metrics.oa
            assert oa >= 0.95, f"seed {seed}: fused OA {oa:.4f}"
            fused.append(oa)
            branch_oas = []
            for mu in (1.0, 0.0):
                pred = fuse_labels(result.c1, result.c2, mu)
                branch_oas.append(metrics(confusion(result.test_map, pred)).oa)
            best_branch.append(max(branch_oas))
        assert np.mean(fused) >= np.mean(best_branch) - 0.01, (
            f"fused mean {np.mean(fused):.4f} vs branch mean {np.mean(best_branch):.4f}"
        )
        assert elapsed <= 120, f"five runs took {elapsed:.1f}s (budget 120s)"


def test_criterion_5_separability_improvement(acceptance_runs):
    runs, _ = acceptance_runs
    with criterion(5, "smoothed features separate classes better than raw averages"):
        for seed, cube, labels, result in runs:
            mask = result.train_map.labels.ravel() > 0
            y = result.train_map.labels.ravel()[mask]
            sp_ratio = class_separability(result.sp.pixels()[mask], y).ratio
            raw_ratio = class_separability(result.reduced.pixels()[mask], y).ratio
            assert sp_ratio > raw_ratio, (
                f"seed {seed}: smoothed ratio {sp_ratio:.3f} <= raw {raw_ratio:.3f}"
            )


def test_criterion_6_determinism(acceptance_runs, tmp_path):
    runs, _ = acceptance_runs
    with criterion(6, "byte-identical reruns; threaded run matches single-threaded"):
        seed, cube, labels, first = runs[0]
        from hsifuse.raster import write_labels

        write_labels(first.labels, tmp_path / "a.txt")
        (tmp_path / "a.rep").write_text(first.report, encoding="utf-8")

        again = run_pipeline(PipelineConfig(seed=seed), cube=cube, labels=labels)
        write_labels(again.labels, tmp_path / "b.txt")
        (tmp_path / "b.rep").write_text(again.report, encoding="utf-8")
        assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()
        assert (tmp_path / "a.rep").read_bytes() == (tmp_path / "b.rep").read_bytes()

        threaded = run_pipeline(PipelineConfig(seed=seed, threads=2), cube=cube, labels=labels)
        assert abs(threaded.metrics.oa - first.metrics.oa) <= 1e-6
        assert abs(threaded.metrics.aa - first.metrics.aa) <= 1e-6
        assert abs(threaded.metrics.kappa - first.metrics.kappa) <= 1e-6


def test_criterion_7_metrics_exactness():
    with criterion(7, "accuracy metrics reproduce hand-computed values"):
        result = metrics(np.array([[2, 0], [1, 1]]))
        assert result.oa == 0.75
        assert result.aa == 0.75
        assert result.kappa == 0.5
        perfect = metrics(np.diag([3, 5, 9]))
        assert perfect.oa == 1.0 and perfect.aa == 1.0 and perfect.kappa == 1.0
