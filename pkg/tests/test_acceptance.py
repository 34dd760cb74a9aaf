"""Acceptance criteria 1 to 11, one test each.

Every test records a pass/fail line into ``ACCEPTANCE_RESULTS``; the
terminal summary prints them after the run.
"""

import math
import os
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_RESULTS, chi2_ok, tv
from dynsketch.harness import gen_decay, gen_synthetic_rank_k, run_experiment
from dynsketch.leverage import ACCEPTANCE_MONITOR, build_samp, lensq_cover_size, lev_sample, matvec_sampler
from dynsketch.linalg import best_rank_k_error, ridge_closed_form, ridge_spectrum
from dynsketch.lowrank import LowRankConfig, build_low_rank, oracle_spectrum, pcp_sample, query_distribution
from dynsketch.lowrank import sample_rows_given_column
from dynsketch.ridge import RidgeConfig, conjugate_gradient, ridge_solve
from dynsketch.sampler import DynSamp, SparseMatrix, len_sq_sample_cols_of_SA, len_sq_sample_rows, sampled_rows
from dynsketch.schemas import ExperimentSpec, SyntheticRecipe
from dynsketch.tree import WeightedTree


def record(n, ok, detail, elapsed=None, limit=None):
    if limit is not None:
        detail = f"{detail}; {elapsed:.1f}s (limit {limit}s)"
        ok = ok and elapsed < limit
    ACCEPTANCE_RESULTS[n] = ("PASS" if ok else "FAIL", detail)
    assert ok, detail


def ds_from(a):
    return DynSamp.from_matrix(SparseMatrix.from_dense(np.asarray(a, dtype=float)))


def rel_err(y, x):
    y, x = np.ravel(y), np.ravel(x)
    return float(np.linalg.norm(y - x) / np.linalg.norm(x))


def test_criterion_01_sampling_distributions():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    u = rng.standard_normal(37)
    tree = WeightedTree.from_items(list(range(37)), u.tolist())
    p = tree.path_probabilities()
    exact_dev = max(abs(p[i] - u[i] ** 2 / np.sum(u**2)) for i in range(37))

    a = rng.standard_normal((12, 9)) * (rng.random((12, 9)) < 0.6)
    ds = ds_from(a)
    joint = np.zeros_like(a)
    for i, pi in ds.length_tree.path_probabilities().items():
        for j, pj in ds.row_trees[i].path_probabilities().items():
            joint[i, j] = pi * pj
    exact_dev = max(exact_dev, float(np.abs(joint - a * a / np.sum(a * a)).max()))

    draws = 100_000
    rn = np.sum(a * a, axis=1)
    rows_ok = chi2_ok(np.bincount(ds.sample_rows(draws, rng), minlength=12), rn / rn.sum())
    i = int(np.argmax(np.count_nonzero(a, axis=1)))
    entry_ok = chi2_ok(np.bincount(ds.sample_entries_in_row(i, draws, rng), minlength=9), a[i] ** 2 / rn[i])
    s = len_sq_sample_rows(ds, 5, rng)
    sa = sampled_rows(ds, s)
    q = np.sum(sa * sa, axis=0) / np.sum(sa * sa)
    c = len_sq_sample_cols_of_SA(ds, s, draws, rng)
    cols_ok = chi2_ok(np.bincount(c.indices, minlength=9), q)
    elapsed = time.perf_counter() - t0
    record(1, exact_dev <= 1e-12 and rows_ok and entry_ok and cols_ok,
           f"max exact deviation {exact_dev:.1e}; chi2 rows={rows_ok} entries={entry_ok} columns={cols_ok}",
           elapsed, 10)


def test_criterion_02_turnstile_integrity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    n, d = 100, 80
    ds = DynSamp(n, d)
    oracle = {}
    for _ in range(10_000):
        i, j = int(rng.integers(n)), int(rng.integers(d))
        r = rng.random()
        if r < 0.25:
            v = float(rng.standard_normal())
            ds.add_to_entry(i, j, v)
            oracle[(i, j)] = oracle.get((i, j), 0.0) + v
        elif r < 0.4:
            ds.update_entry(i, j, 0.0)
            oracle[(i, j)] = 0.0
        else:
            v = float(rng.standard_normal())
            ds.update_entry(i, j, v)
            oracle[(i, j)] = v
    dense = np.zeros((n, d))
    for (i, j), v in oracle.items():
        dense[i, j] = v
    rn = np.sum(dense * dense, axis=1)
    frob_rel = abs(ds.frob_sq - rn.sum()) / rn.sum()
    row_rel = max(abs(ds.row_norm_sq(i) - rn[i]) / max(rn[i], 1e-300) for i in range(n) if rn[i] > 0)
    zero_rows = all(ds.row_norm_sq(i) == 0 for i in range(n) if rn[i] == 0)
    entries = all(ds.get_entry(i, j) == v for (i, j), v in oracle.items())
    elapsed = time.perf_counter() - t0
    ok = frob_rel <= 1e-9 and row_rel <= 1e-9 and zero_rows and entries and ds.nnz == np.count_nonzero(dense)
    record(2, ok, f"frob rel {frob_rel:.1e}, max row rel {row_rel:.1e}, entries match={entries}", elapsed, 5)


def test_criterion_03_ridge_correctness():
    t0 = time.perf_counter()
    meds = {}
    for eps in (0.5, 0.3, 0.15):
        errs = []
        for s in range(10):
            r = np.random.default_rng(s)
            a = r.standard_normal((400, 30)) @ r.standard_normal((30, 60))
            lam = np.linalg.norm(a, 2) ** 2 / 10
            b = r.standard_normal(400)
            ds = ds_from(a)
            sol = ridge_solve(ds, b, RidgeConfig(lam=lam, epsilon=eps), r)
            errs.append(rel_err(sol.materialize(ds), ridge_closed_form(a, b, lam)))
        meds[eps] = float(np.median(errs))
    elapsed = time.perf_counter() - t0
    # at this size the sample caps bind and the solve is exact up to CG tolerance,
    # so monotonicity is checked up to that floating-point floor
    floor = 1e-9
    monotone = meds[0.5] + floor >= meds[0.3] and meds[0.3] + floor >= meds[0.15]
    record(3, meds[0.3] <= 0.2 and monotone,
           "median rel error " + ", ".join(f"eps={e}: {m:.2e}" for e, m in meds.items()), elapsed, 30)


def test_criterion_04_ridge_ten_percent():
    t0 = time.perf_counter()
    spec = ExperimentSpec(task="ridge", synthetic=SyntheticRecipe(kind="rank_k", n=700, d=900, rank=20),
                          rows=70, cols=90, lam=1.0, trials=10, seed=4)
    rep = run_experiment(spec)
    med = rep.aggregates[0].median_error
    elapsed = time.perf_counter() - t0
    record(4, med <= 0.2, f"median rel error {med:.3f} at 70/700 rows and 90/900 columns", elapsed, 60)


def test_criterion_05_lra_relative_error():
    t0 = time.perf_counter()
    ratios, exact = [], []
    for seed in range(10):
        r = np.random.default_rng(seed)
        ds = DynSamp.from_matrix(gen_decay(200, 150, r, power=2.0))
        sig_k, tau = oracle_spectrum(ds, 5)
        m = build_low_rank(ds, LowRankConfig(k=5, epsilon=0.5, sigma_k_lower=sig_k, tau=tau), r)
        a = ds.to_dense()
        ratios.append(np.linalg.norm(a - m.materialize()) / best_rank_k_error(a, 5))
        ds2 = DynSamp.from_matrix(gen_synthetic_rank_k(200, 150, 5, r))
        m2 = build_low_rank(ds2, LowRankConfig(k=5, epsilon=0.5), r)
        a2 = ds2.to_dense()
        exact.append(np.linalg.norm(a2 - m2.materialize()) / np.linalg.norm(a2))
    med, ex = float(np.median(ratios)), float(np.max(exact))
    elapsed = time.perf_counter() - t0
    record(5, med <= 2.0 and ex <= 1e-6, f"median ratio {med:.3f}; exact-rank max rel error {ex:.1e}", elapsed, 60)


MOVIELENS = os.environ.get("DYNSKETCH_MOVIELENS")


@pytest.mark.skipif(not MOVIELENS, reason="set DYNSKETCH_MOVIELENS to a MatrixMarket ratings file")
def test_criterion_06_movielens_replica():
    t0 = time.perf_counter()
    meds = []
    for rows, cols in ((300, 500), (500, 800)):
        rep = run_experiment(ExperimentSpec(task="lra", input_path=MOVIELENS, rows=rows, cols=cols,
                                            k=10, trials=5, seed=6))
        meds.append(rep.aggregates[0].median_error)
    elapsed = time.perf_counter() - t0
    record(6, 0 <= meds[0] <= 0.15 and meds[1] <= meds[0],
           f"metric (300,500)={meds[0]:.4f} (500,800)={meds[1]:.4f}; reference 0.0416 and 0.0323", elapsed, None)


def pcp_hits(a, s, axis, k, eps, rng, trials=100):
    hits = 0
    sk = s.apply(a)
    for _ in range(trials):
        if axis == "rows":
            q, _ = np.linalg.qr(rng.standard_normal((a.shape[1], k)))
            full, small = a - (a @ q) @ q.T, sk - (sk @ q) @ q.T
        else:
            q, _ = np.linalg.qr(rng.standard_normal((a.shape[0], k)))
            full, small = a - q @ (q.T @ a), sk - q @ (q.T @ sk)
        ratio = np.sum(small**2) / np.sum(full**2)
        hits += (1 - eps) <= ratio <= (1 + eps)
    return hits


def test_criterion_07_pcp():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    a = rng.standard_normal((60, 40))
    s = pcp_sample(a, 4, 0.5, "rows", rng)
    row_hits = pcp_hits(a, s, "rows", 4, 0.5, rng)
    sa = s.apply(a)
    r = pcp_sample(sa, 4, 0.5, "cols", rng)
    col_hits = pcp_hits(sa, r, "cols", 4, 0.5, rng)
    elapsed = time.perf_counter() - t0
    note = " (column stage keeps every column at this size)" if r.is_identity else ""
    record(7, row_hits >= 95 and col_hits >= 95,
           f"row stage {row_hits}/100 with {s.m} picks, column stage {col_hits}/100{note}", elapsed, 20)


def test_criterion_08_query_distribution():
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    ds = DynSamp.from_matrix(gen_decay(80, 60, rng, power=1.0))
    model = build_low_rank(ds, LowRankConfig(k=5), rng)
    tvs, trial_ratio = [], []
    bound = 2 * model.m_cols * model.kappa_est**2
    for j in rng.choice(60, 10, replace=False).tolist():
        res = sample_rows_given_column(model, j, 10_000, rng)
        tvs.append(tv(res.rows, query_distribution(model, j)))
        trial_ratio.append(res.trials / 10_000)
    elapsed = time.perf_counter() - t0
    record(8, max(tvs) <= 0.05 and max(trial_ratio) <= bound,
           f"max TV {max(tvs):.3f}; max trials per draw {max(trial_ratio):.2f} vs bound {bound:.1f}", elapsed, 60)


def test_criterion_09_leverage_stack():
    from scipy.linalg import hadamard

    t0 = time.perf_counter()
    rng = np.random.default_rng(9)
    before = ACCEPTANCE_MONITOR.violations
    a = hadamard(64) / 8.0
    samp = build_samp(a, np.arange(64), math.log(65), rng)
    s = matvec_sampler(a, samp, np.eye(64), 10_000, rng=rng)
    tv_mv = tv(s.indices, np.full(64, 1 / 64))
    h = hadamard(64)[:, :8] / 8.0
    tv_lev = tv(lev_sample(h, target_size=10_000, rng=rng).sampler.indices, np.full(64, 1 / 64))
    for _ in range(20):
        n, d = int(rng.integers(20, 300)), int(rng.integers(1, 8))
        lev_sample(rng.standard_normal((n, d)) * rng.exponential(1.0, size=(n, 1)) ** 2, target_size=200, rng=rng)
    dominated = 0
    for _ in range(20):
        m_ = rng.standard_normal((int(rng.integers(10, 60)), int(rng.integers(2, 10))))
        m_ *= rng.exponential(1.0, size=(m_.shape[0], 1))
        lam = float(10 ** rng.uniform(-2, 2))
        spec = ridge_spectrum(m_, lam)
        frob = float(np.sum(m_ * m_))
        v = int(rng.integers(5, 100))
        cover = lensq_cover_size(spec, frob, v)
        dominated += bool(np.all(cover * np.sum(m_ * m_, axis=1) / frob >= v * spec.ridge_scores / spec.sd_lambda))
    fired = ACCEPTANCE_MONITOR.violations - before
    elapsed = time.perf_counter() - t0
    record(9, max(tv_mv, tv_lev) <= 0.05 and fired == 0 and dominated == 20,
           f"uniform TV {tv_mv:.3f}/{tv_lev:.3f}; ratio violations here {fired}; domination {dominated}/20",
           elapsed, 30)


def test_criterion_10_conjugate_gradient():
    t0 = time.perf_counter()
    rng = np.random.default_rng(10)
    worst = 0.0
    for n in (10, 100, 500):
        diag = rng.uniform(0.1, 100, n)
        b = rng.standard_normal(n)
        out = conjugate_gradient(np.diag(diag), b, tol=1e-12, max_iters=10 * n)
        worst = max(worst, float(np.max(np.abs(out.x - np.linalg.solve(np.diag(diag), b)))))
    its = []
    for kappa in (1e2, 1e4):
        ev = np.logspace(0, math.log10(kappa), 2000)
        its.append(conjugate_gradient(lambda x, ev=ev: ev * x, np.ones(2000), 1e-8, 10**5).iterations)
    ratio = its[1] / its[0]
    elapsed = time.perf_counter() - t0
    # sqrt(kappa) predicts a ratio of 10; a factor 3 either side is allowed
    record(10, worst <= 1e-8 and 10 / 3 <= ratio <= 30,
           f"max abs error {worst:.1e}; iterations {its[0]} -> {its[1]} (ratio {ratio:.2f})", elapsed, 5)


def test_criterion_11_sublinear_queries():
    t0 = time.perf_counter()
    spec = ExperimentSpec(task="bench", synthetic=SyntheticRecipe(kind="decay", n=1000, d=200, power=1.0),
                          bench_ns=[1000, 4000], k=10, rows=400, cols=100, trials=3, queries=2000,
                          tv_columns=0, seed=11)
    rep = run_experiment(spec)
    lat = {a.group: a.median_query_seconds for a in rep.aggregates}
    ratio = lat["n=4000"] / lat["n=1000"]
    elapsed = time.perf_counter() - t0
    record(11, ratio <= 2.0,
           f"median query latency {lat['n=1000'] * 1e6:.0f}us -> {lat['n=4000'] * 1e6:.0f}us (ratio {ratio:.2f})",
           elapsed, 120)
