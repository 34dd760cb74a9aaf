import math

import numpy as np
import pytest
from scipy import sparse

from dynsketch.errors import ConvergenceError, EmptyStructureError
from dynsketch.linalg import pseudo_inverse, ridge_closed_form, ridge_spectrum
from dynsketch.ridge import (
    RidgeConfig,
    RidgeSolution,
    conjugate_gradient,
    estimate_sigma_1,
    estimate_sigma_k,
    ridge_sample_sizes,
    ridge_solve,
    solution_entry,
)
from dynsketch.sampler import ColSampler, DynSamp, RowSampler, SparseMatrix


def ds_from(a):
    return DynSamp.from_matrix(SparseMatrix.from_dense(a))


def rank_r(n, d, r, rng):
    return rng.standard_normal((n, r)) @ rng.standard_normal((r, d))


def rel_err(y, x):
    y, x = np.ravel(y), np.ravel(x)
    return float(np.linalg.norm(y - x) / np.linalg.norm(x))


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            RidgeConfig(lam=-1)
        with pytest.raises(ValueError):
            RidgeConfig(lam=1, epsilon=1.5)
        with pytest.raises(ValueError):
            RidgeConfig(lam=1, sigma_k_lower=3, sigma_1_upper=2)
        with pytest.raises(ValueError):
            RidgeConfig(lam=0, sigma_k_lower=0, sigma_1_upper=1)


class TestSampleSizes:
    def test_kappa_one(self):
        cfg = RidgeConfig(lam=1.0, epsilon=0.5, sigma_k_lower=2.0, sigma_1_upper=2.0)
        m_s, _ = ridge_sample_sizes(cfg, 50.0, 10**6, 40)
        z2 = 1 / (1 + 4)
        assert m_s == math.ceil(2 * z2 * 50 * math.log(41) / 0.25)

    def test_formulas(self):
        cfg = RidgeConfig(lam=0.5, epsilon=0.3, sigma_k_lower=1.0, sigma_1_upper=4.0)
        m_s, m_r = ridge_sample_sizes(cfg, 200.0, 10**7, 10**7)
        z2 = 1 / 1.5
        k2 = z2 * 16.5
        assert m_s == math.ceil(2 * k2 * z2 * 200 * math.log(10**7 + 1) / 0.09)
        assert m_r == math.ceil(2 * math.log(m_s) * z2 * 200 / 0.09)

    def test_doubling_lambda_halves(self):
        base = dict(epsilon=0.5, sigma_k_lower=0.1, sigma_1_upper=1.0)
        a, _ = ridge_sample_sizes(RidgeConfig(lam=1000.0, **base), 1e6, 10**9, 100)
        b, _ = ridge_sample_sizes(RidgeConfig(lam=2000.0, **base), 1e6, 10**9, 100)
        assert abs(a / 2 - b) <= 1 + 1e-3 * a

    def test_desk_scale_replica_uncapped(self):
        # 700 x 900 rank-20 instance with unit singular values, lambda = 1
        cfg = RidgeConfig(lam=1.0, epsilon=0.5, sigma_k_lower=1.0, sigma_1_upper=1.0)
        m_s, m_r = ridge_sample_sizes(cfg, 20.0, 700, 900)
        assert 1 <= m_s < 700 and 1 <= m_r < 900

    def test_caps(self):
        cfg = RidgeConfig(lam=1e-3, epsilon=0.1, sigma_k_lower=0.01, sigma_1_upper=10)
        assert ridge_sample_sizes(cfg, 1e4, 50, 30) == (50, 30)

    def test_overrides(self):
        cfg = RidgeConfig(lam=1, m_rows=7, m_cols=900)
        assert ridge_sample_sizes(cfg, 1.0, 100, 40) == (7, 40)

    def test_degenerate(self):
        with pytest.raises(EmptyStructureError):
            ridge_sample_sizes(RidgeConfig(lam=1, sigma_k_lower=1, sigma_1_upper=1), 0.0, 5, 5)


class TestEstimates:
    def test_sigma_bounds(self, rng):
        a = rank_r(300, 40, 40, rng)
        s = np.linalg.svd(a, compute_uv=False)
        ds = ds_from(a)
        assert estimate_sigma_1(ds, rng) >= s[0]
        assert estimate_sigma_1(ds, rng) <= 1.2 * s[0]
        sk = estimate_sigma_k(ds, rng)
        assert 0 < sk <= 1.5 * s[-1]


class TestRidgeSolve:
    def test_identity_design(self, rng):
        n = 40
        ds = ds_from(np.eye(n))
        b = rng.standard_normal((n, 3))
        sol = ridge_solve(ds, b, RidgeConfig(lam=0.0, epsilon=0.5), rng)
        assert sol.m_rows == n and sol.m_cols == n
        assert rel_err(sol.materialize(ds), b) <= 1e-6

    def test_random_rank_30(self):
        errs = []
        for s in range(10):
            r = np.random.default_rng(s)
            a = rank_r(400, 60, 30, r)
            lam = np.linalg.norm(a, 2) ** 2 / 10
            b = r.standard_normal(400)
            ds = ds_from(a)
            sol = ridge_solve(ds, b, RidgeConfig(lam=lam, epsilon=0.3), r)
            errs.append(rel_err(sol.materialize(ds)[:, 0], ridge_closed_form(a, b, lam)))
        assert np.median(errs) <= 0.2

    def test_sampled_path(self):
        # tall instance: the formula sizes sample 244 of 4000 rows at eps = 0.5
        for eps in (0.5, 0.3):
            errs = []
            for s in range(10):
                r = np.random.default_rng(100 + s)
                u, _ = np.linalg.qr(r.standard_normal((4000, 20)))
                v, _ = np.linalg.qr(r.standard_normal((20, 20)))
                a = u @ v.T
                b = a @ r.standard_normal(20)
                ds = ds_from(a)
                cfg = RidgeConfig(lam=1.0, epsilon=eps, sigma_k_lower=1.0, sigma_1_upper=1.0)
                sol = ridge_solve(ds, b, cfg, r)
                assert sol.m_rows < 4000
                errs.append(rel_err(sol.materialize(ds), ridge_closed_form(a, b, 1.0)))
            assert np.median(errs) <= eps

    def test_zero_rhs(self, rng):
        ds = ds_from(rng.standard_normal((30, 5)))
        sol = ridge_solve(ds, np.zeros(30), RidgeConfig(lam=1.0), rng)
        assert np.all(sol.x_tilde == 0)
        assert sol.cg_iterations == 0

    def test_zero_matrix(self, rng):
        with pytest.raises(EmptyStructureError):
            ridge_solve(DynSamp(5, 3), np.ones(5), RidgeConfig(lam=1.0), rng)

    def test_wrong_rhs_shape(self, rng):
        with pytest.raises(ValueError):
            ridge_solve(ds_from(np.eye(3)), np.ones(4), RidgeConfig(lam=1.0), rng)

    def test_objective_and_spd(self):
        for s in range(10):
            r = np.random.default_rng(s)
            a = rank_r(120, 30, 10, r) * r.exponential(1.0, size=(120, 1))
            lam = float(10 ** r.uniform(-1, 1))
            b = r.standard_normal((120, 2))
            ds = ds_from(a)
            sol = ridge_solve(ds, b, RidgeConfig(lam=lam, m_rows=40, m_cols=15), r)
            sar = sol.col_sampler.apply(sol.row_sampler.apply(a))
            m = sar @ sar.T + lam * np.eye(sar.shape[0])
            assert np.linalg.eigvalsh(m).min() >= lam - 1e-9
            y = sol.materialize(ds)
            x = ridge_closed_form(a, b, lam)

            def obj(z):
                return np.linalg.norm(a @ z - b) ** 2 + lam * np.linalg.norm(z) ** 2

            assert obj(y) >= obj(x) * (1 - 1e-12)

    def test_multi_column_matches_single(self, rng):
        a = rng.standard_normal((80, 10))
        b = rng.standard_normal((80, 3))
        ds = ds_from(a)
        cfg = RidgeConfig(lam=2.0, m_rows=30, m_cols=8)
        both = ridge_solve(ds, b, cfg, np.random.default_rng(1))
        one = ridge_solve(ds, b[:, 1], cfg, np.random.default_rng(1))
        np.testing.assert_allclose(both.x_tilde[:, 1], one.x_tilde[:, 0], atol=1e-10)

    def test_error_decays_with_epsilon(self):
        # the formula path on the desk-scale replica keeps the caps from binding at eps = 0.5
        meds = []
        for eps in (0.5, 0.3, 0.15):
            errs = []
            for s in range(10):
                r = np.random.default_rng(s)
                u, _ = np.linalg.qr(r.standard_normal((700, 20)))
                v, _ = np.linalg.qr(r.standard_normal((900, 20)))
                a = u @ v.T
                b = a @ r.standard_normal(900)
                ds = ds_from(a)
                cfg = RidgeConfig(lam=1.0, epsilon=eps, sigma_k_lower=1.0, sigma_1_upper=1.0)
                sol = ridge_solve(ds, b, cfg, r)
                errs.append(rel_err(sol.materialize(ds)[:, 0], ridge_closed_form(a, b, 1.0)))
            meds.append(float(np.median(errs)))
        assert meds[0] >= meds[1] >= meds[2]


def test_prediction_to_solution_bound():
    # for a ridge problem, apply the bound to the augmented least-squares system
    for s in range(20):
        r = np.random.default_rng(s)
        a = r.standard_normal((60, 8)) * r.exponential(1.0, size=(60, 1))
        lam = float(10 ** r.uniform(-2, 1))
        b = r.standard_normal(60)
        aug = np.vstack([a, math.sqrt(lam) * np.eye(8)])
        b_aug = np.r_[b, np.zeros(8)]
        x_star = ridge_closed_form(a, b, lam)[:, 0]
        xi = float(np.linalg.norm(aug @ x_star - b_aug))
        ds = ds_from(a)
        sol = ridge_solve(ds, b, RidgeConfig(lam=lam, m_rows=20, m_cols=6), r)
        x_t = sol.materialize(ds)[:, 0]
        eps_p = float(np.linalg.norm(aug @ x_t - b_aug) ** 2 / xi**2 - 1)
        assert eps_p >= -1e-12
        pinv = np.linalg.norm(pseudo_inverse(aug), 2)
        assert pinv**2 == pytest.approx(ridge_spectrum(a, lam).pinv_norm_sq, rel=1e-8)
        assert np.linalg.norm(x_t - x_star) <= 2 * math.sqrt(max(eps_p, 0)) * pinv * xi + 1e-12


class TestSolutionEntry:
    def test_zero_solution(self, rng):
        a = rng.standard_normal((10, 4))
        ds = ds_from(a)
        s = RowSampler.from_picks(10, [1, 3], [0.1, 0.2])
        sol = RidgeSolution(np.zeros((2, 2)), s, ColSampler.identity(4), 0, 0.0, True, 2, 4)
        assert all(solution_entry(sol, ds, i, j) == 0 for i in range(4) for j in range(2))

    def test_dense_oracle(self, rng):
        a = rng.standard_normal((50, 12)) * (rng.random((50, 12)) < 0.6)
        ds = ds_from(a)
        sol = ridge_solve(ds, rng.standard_normal((50, 2)), RidgeConfig(lam=1.0, m_rows=20, m_cols=6), rng)
        dense = a.T @ (sol.row_sampler.matrix().T @ sol.x_tilde)
        got = np.array([[sol.entry(ds, i, j) for j in range(2)] for i in range(12)])
        np.testing.assert_allclose(got, dense, atol=1e-10)
        np.testing.assert_allclose(sol.materialize(ds), dense, atol=1e-10)

    def test_single_pick(self, rng):
        a = rng.standard_normal((6, 3))
        ds = ds_from(a)
        s = RowSampler.from_picks(6, [4], [0.25])
        x = np.array([[1.5, -2.0]])
        sol = RidgeSolution(x, s, ColSampler.identity(3), 0, 0.0, True, 1, 3)
        assert solution_entry(sol, ds, 2, 1) == pytest.approx(s.scales[0] * a[4, 2] * -2.0)

    def test_out_of_bounds(self, rng):
        ds = ds_from(np.eye(3))
        sol = RidgeSolution(np.zeros((3, 1)), RowSampler.identity(3), ColSampler.identity(3), 0, 0.0, True, 3, 3)
        with pytest.raises(IndexError):
            solution_entry(sol, ds, 3, 0)
        with pytest.raises(IndexError):
            solution_entry(sol, ds, 0, 1)


class TestConjugateGradient:
    def test_identity(self, rng):
        b = rng.standard_normal(7)
        out = conjugate_gradient(np.eye(7), b)
        assert out.iterations == 1 and out.converged
        np.testing.assert_allclose(out.x, b)

    def test_diag_1_to_10(self):
        m = np.diag(np.arange(1.0, 11.0))
        out = conjugate_gradient(m, np.ones(10), tol=1e-8, max_iters=100)
        assert out.iterations <= 10
        np.testing.assert_allclose(out.x, np.linalg.solve(m, np.ones(10)), atol=1e-8)

    def test_sqrt_kappa_scaling(self):
        its = []
        for kappa in (1e2, 1e4):
            ev = np.logspace(0, math.log10(kappa), 2000)
            its.append(conjugate_gradient(lambda x, ev=ev: ev * x, np.ones(2000), 1e-8, 10**5).iterations)
        assert 10 / 3 <= its[1] / its[0] <= 30

    def test_sparse_operator(self, rng):
        a = sparse.random(200, 200, density=0.02, random_state=4)
        m = (a @ a.T + sparse.identity(200)).tocsr()
        b = rng.standard_normal(200)
        out = conjugate_gradient(lambda x: m @ x, b, 1e-10, 1000)
        assert np.linalg.norm(m @ out.x - b) <= 1e-10 * np.linalg.norm(b) * 1.0001

    def test_iteration_cap_flag(self):
        ev = np.logspace(0, 6, 500)
        out = conjugate_gradient(lambda x: ev * x, np.ones(500), 1e-12, 5)
        assert not out.converged and out.iterations == 5

    def test_nan(self):
        with pytest.raises(ConvergenceError):
            conjugate_gradient(lambda x: x * np.nan, np.ones(3))

    def test_indefinite(self):
        with pytest.raises(ConvergenceError):
            conjugate_gradient(np.diag([1.0, -1.0]), np.array([0.0, 1.0]))


def guarantee_terms(a, b, x_star, lam):
    """Both readings of the problem-dependent gamma and the projection of B below sqrt(lam)."""
    u, s, _ = np.linalg.svd(a, full_matrices=False)
    r = int(np.count_nonzero(s > max(a.shape) * s[0] * 1e-12))
    u, s = u[:, :r], s[:r]
    gamma_b = np.linalg.norm(b) / np.linalg.norm(u @ (u.T @ b))
    # the other reading mixes n- and d-space; scaling X* by ||A|| makes it comparable
    gamma_x = np.linalg.norm(b) / (np.linalg.norm(x_star) * s[0])
    keep = u[:, s >= math.sqrt(lam)]
    perp = np.linalg.norm(b - keep @ (keep.T @ b))
    return max(gamma_b, gamma_x), perp


def test_error_within_guarantee():
    eps, lam, hits = 0.5, 1.0, 0
    for s in range(10):
        r = np.random.default_rng(200 + s)
        u, _ = np.linalg.qr(r.standard_normal((3000, 20)))
        v, _ = np.linalg.qr(r.standard_normal((20, 20)))
        a = (u * np.linspace(2.0, 0.5, 20)) @ v.T
        b = a @ r.standard_normal((20, 2)) + 0.5 * r.standard_normal((3000, 2))
        ds = ds_from(a)
        sol = ridge_solve(ds, b, RidgeConfig(lam=lam, epsilon=eps, sigma_k_lower=0.5, sigma_1_upper=2.0), r)
        assert sol.m_rows < 3000
        x = ridge_closed_form(a, b, lam)
        gamma, perp = guarantee_terms(a, b, x, lam)
        bound = eps * (1 + 2 * gamma) * np.linalg.norm(x) + eps / math.sqrt(lam) * perp
        hits += np.linalg.norm(sol.materialize(ds) - x) <= bound
    assert hits >= 9
