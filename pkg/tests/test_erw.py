import numpy as np
import pytest
from scipy import sparse

from oracles import dense_laplacian, dense_walker_solve

from hsifuse.kpca import KpcaParams
from hsifuse.randwalk import (
    ErwParams,
    SolverError,
    build_laplacian,
    cg_jacobi,
    erw_optimize,
    guidance_image,
)
from hsifuse.raster import HsiCube, ProbStack


def random_priors(rng, h, w, t):
    return ProbStack(rng.dirichlet(np.ones(t), size=(h, w)))


class TestGuidance:
    def test_constant_cube_all_zeros(self):
        cube = HsiCube(np.full((6, 6, 4), 0.2))
        g = guidance_image(cube, KpcaParams(), seed=0)
        np.testing.assert_array_equal(g, np.zeros((6, 6)))

    def test_two_region_zero_noise_two_valued(self):
        data = np.zeros((6, 6, 5))
        data[:, :3, :] = 0.1
        data[:, 3:, :] = 0.9
        g = guidance_image(HsiCube(data), KpcaParams(), seed=0)
        assert len(np.unique(np.round(g, 9))) == 2

    def test_range_exact(self, rng):
        cube = HsiCube(rng.uniform(size=(8, 8, 6)))
        g = guidance_image(cube, KpcaParams(), seed=1)
        assert g.min() == 0.0
        assert g.max() == 1.0


class TestLaplacian:
    def test_two_pixel_equal_guidance(self):
        lap = build_laplacian(np.array([[0.5, 0.5]]), 1.0)
        np.testing.assert_allclose(lap.matrix.toarray(), [[1, -1], [-1, 1]])

    def test_two_pixel_unit_contrast(self):
        lap = build_laplacian(np.array([[0.0, 1.0]]), 1.0)
        e = np.exp(-1.0)
        np.testing.assert_allclose(lap.matrix.toarray(), [[e, -e], [-e, e]])

    def test_matches_dense_reference(self, rng):
        g = rng.uniform(size=(4, 5))
        lap = build_laplacian(g, 7.0)
        np.testing.assert_allclose(lap.matrix.toarray(), dense_laplacian(g, 7.0), atol=1e-14)

    def test_structural_invariants(self, rng):
        for _ in range(5):
            g = rng.uniform(size=(3, 3))
            mat = build_laplacian(g, 90.0).matrix.toarray()
            np.testing.assert_allclose(mat.sum(axis=1), 0.0, atol=1e-12)
            np.testing.assert_allclose(mat, mat.T, atol=0)
            assert np.linalg.eigvalsh(mat).min() >= -1e-10
            off = mat[~np.eye(9, dtype=bool)]
            assert (off <= 0).all()

    def test_single_pixel(self):
        lap = build_laplacian(np.zeros((1, 1)), 1.0)
        assert lap.matrix.shape == (1, 1)
        assert lap.matrix.nnz == 0


class TestErwOptimize:
    def test_uniform_priors_fixed_point(self, rng):
        g = rng.uniform(size=(5, 5))
        lap = build_laplacian(g, 30.0)
        priors = ProbStack(np.full((5, 5, 4), 0.25))
        q, c2 = erw_optimize(lap, priors, ErwParams())
        np.testing.assert_allclose(q.probs, 0.25, atol=1e-12)
        assert c2 is q

    def test_huge_gamma_prior_dominated(self, rng):
        g = rng.uniform(size=(6, 6))
        lap = build_laplacian(g, 30.0)
        priors = random_priors(rng, 6, 6, 3)
        q, _ = erw_optimize(lap, priors, ErwParams(gamma=1e6, cg_tol=1e-10))
        assert np.abs(q.probs - priors.probs).max() <= 1e-3

    def test_matches_dense_oracle(self, rng):
        for shape in ((2, 2), (3, 3)):
            g = rng.uniform(size=shape)
            lap = build_laplacian(g, 1.0)
            priors = random_priors(rng, *shape, 2)
            q, _ = erw_optimize(lap, priors, ErwParams(beta=1.0, gamma=0.5, cg_tol=1e-14))
            ref = dense_walker_solve(g, priors.probs, 1.0, 0.5)
            np.testing.assert_allclose(q.probs, ref, atol=1e-8)

    def test_sum_to_one(self, rng):
        g = rng.uniform(size=(8, 7))
        lap = build_laplacian(g, 90.0)
        priors = random_priors(rng, 8, 7, 5)
        q, _ = erw_optimize(lap, priors, ErwParams())
        np.testing.assert_allclose(q.probs.sum(axis=2), 1.0, atol=1e-5)

    def test_class_permutation_equivariance(self, rng):
        g = rng.uniform(size=(5, 5))
        lap = build_laplacian(g, 10.0)
        priors = random_priors(rng, 5, 5, 4)
        perm = [3, 1, 0, 2]
        q, _ = erw_optimize(lap, priors, ErwParams(cg_tol=1e-12))
        qp, _ = erw_optimize(lap, ProbStack(priors.probs[:, :, perm]), ErwParams(cg_tol=1e-12))
        np.testing.assert_allclose(q.probs[:, :, perm], qp.probs, atol=1e-10)

    def test_dimension_mismatch(self, rng):
        lap = build_laplacian(rng.uniform(size=(4, 4)), 1.0)
        with pytest.raises(ValueError, match="does not match"):
            erw_optimize(lap, random_priors(rng, 5, 5, 2), ErwParams())

    def test_range_within_slack(self, rng):
        # discrete maximum principle: refined values stay inside [0, 1]
        for s in range(5):
            local = np.random.default_rng(s)
            g = local.uniform(size=(6, 6))
            lap = build_laplacian(g, 90.0)
            priors = random_priors(local, 6, 6, 3)
            q, _ = erw_optimize(lap, priors, ErwParams())
            assert q.probs.min() >= 0.0 and q.probs.max() <= 1.0


class TestCg:
    def setup_system(self, rng, n=30):
        g = rng.uniform(size=(5, 6))
        lap = build_laplacian(g, 50.0)
        a = (lap.matrix + sparse.diags(0.1 * np.ones(30))).tocsr()
        b = rng.uniform(size=30)
        return a, b

    def test_solves_to_tolerance(self, rng):
        a, b = self.setup_system(rng)
        res = cg_jacobi(a, b, 1e-10, 1000)
        assert res.rel_residual <= 1e-10
        x_ref = np.linalg.solve(a.toarray(), b)
        np.testing.assert_allclose(res.x, x_ref, atol=1e-8)

    def test_zero_rhs_short_circuits(self, rng):
        a, _ = self.setup_system(rng)
        res = cg_jacobi(a, np.zeros(30), 1e-10, 10)
        assert res.iterations == 0
        np.testing.assert_array_equal(res.x, np.zeros(30))

    def test_error_a_norm_monotone(self, rng):
        # the guaranteed CG property: energy-norm error decreases every step
        a, b = self.setup_system(rng)
        res = cg_jacobi(a, b, 1e-12, 1000, record_iterates=True)
        x_ref = np.linalg.solve(a.toarray(), b)
        norms = [float(np.sqrt((x - x_ref) @ (a @ (x - x_ref)))) for x in res.iterates]
        assert (np.diff(norms) <= 1e-12).all()

    def test_non_convergence_raises_with_residual(self, rng):
        a, b = self.setup_system(rng)
        with pytest.raises(SolverError, match="relative residual"):
            cg_jacobi(a, b, 1e-14, 2)
