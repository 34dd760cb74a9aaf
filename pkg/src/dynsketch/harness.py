"""Synthetic instances, experiment drivers and report output.

Every driver takes an :class:`~dynsketch.schemas.ExperimentSpec` and returns
a :class:`~dynsketch.schemas.Report` with one row per trial. Randomness is
derived from ``spec.seed``: the first child stream builds the instance and
trial ``t`` uses child ``t + 1``, so error fields are reproducible.
"""

from __future__ import annotations

import csv
import io
import json
import statistics
import time
from importlib import resources
from pathlib import Path

import numpy as np

from .linalg import ridge_closed_form
from .lowrank import (
    LowRankConfig,
    LowRankModel,
    build_low_rank,
    model_error,
    oracle_spectrum,
    query_distribution,
    sample_rows_given_column,
)
from .mmio import read_matrix_market
from .ridge import RidgeConfig, ridge_solve
from .sampler import DynSamp, SparseMatrix
from .schemas import Aggregate, ExperimentSpec, Report, SyntheticRecipe, TrialRow


def _orthonormal(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, k)))
    # fix column signs so the factor is a deterministic function of the draw
    return q * np.sign(np.diag(r))


def synthetic_factors(n: int, d: int, k: int, rng: np.random.Generator):
    """``U`` (n x k) and ``V`` (d x k) with orthonormal columns from Gaussian QR."""
    if not 1 <= k <= min(n, d):
        raise ValueError(f"rank {k} outside [1, {min(n, d)}]")
    return _orthonormal(n, k, rng), _orthonormal(d, k, rng)


def gen_synthetic_rank_k(n: int, d: int, k: int, rng: np.random.Generator, sigma=None) -> SparseMatrix:
    """``U diag(sigma) V^T`` with exact rank ``k`` (sigma defaults to all ones)."""
    u, v = synthetic_factors(n, d, k, rng)
    s = np.ones(k) if sigma is None else np.asarray(sigma, dtype=float)
    return SparseMatrix.from_dense((u * s) @ v.T)


def gen_decay(n: int, d: int, rng: np.random.Generator, power: float = 2.0, rank: int | None = None):
    """Gaussian-QR factors with ``sigma_i = 1 / i**power``."""
    r = rank or min(n, d)
    return gen_synthetic_rank_k(n, d, r, rng, 1.0 / np.arange(1, r + 1) ** power)


def build_instance(recipe: SyntheticRecipe, rng: np.random.Generator) -> SparseMatrix:
    if recipe.kind == "rank_k":
        a = gen_synthetic_rank_k(recipe.n, recipe.d, recipe.rank or min(recipe.n, recipe.d), rng, recipe.sigma)
    else:
        a = gen_decay(recipe.n, recipe.d, rng, recipe.power, recipe.rank)
    if recipe.noise > 0:
        dense = a.to_dense()
        scale = recipe.noise * np.linalg.norm(dense) / np.sqrt(dense.size)
        a = SparseMatrix.from_dense(dense + scale * rng.standard_normal(dense.shape))
    return a


def _streams(spec: ExperimentSpec) -> tuple[np.random.Generator, list[tuple[int, np.random.Generator]]]:
    ss = np.random.SeedSequence(spec.seed)
    kids = ss.spawn(spec.trials + 1)
    trials = [(int(c.generate_state(1)[0]), np.random.default_rng(c)) for c in kids[1:]]
    return np.random.default_rng(kids[0]), trials


def load_instance(spec: ExperimentSpec, rng: np.random.Generator) -> SparseMatrix:
    if spec.input_path is not None:
        return read_matrix_market(spec.input_path)
    return build_instance(spec.synthetic, rng)


def _aggregate(group: str, rows: list[TrialRow]) -> Aggregate:
    errs = [r.error for r in rows if r.error is not None]
    return Aggregate(
        group=group,
        count=len(rows),
        median_error=statistics.median(errs) if errs else None,
        mean_error=statistics.fmean(errs) if errs else None,
        median_query_seconds=statistics.median(r.query_seconds for r in rows),
        median_total_seconds=statistics.median(r.total_seconds for r in rows),
    )


def _group_by(rows: list[TrialRow], key: str) -> list[Aggregate]:
    groups: dict[str, list[TrialRow]] = {}
    for r in rows:
        val = getattr(r, key)
        groups.setdefault("all" if val is None else f"{key}={val}", []).append(r)
    return [_aggregate(g, rs) for g, rs in groups.items()]


def _report(spec: ExperimentSpec, rows: list[TrialRow], key: str) -> Report:
    return Report(
        task=spec.task,
        seed=spec.seed,
        config=spec.model_dump(mode="json"),
        rows=rows,
        aggregates=_group_by(rows, key),
    )


def ridge_response(a: np.ndarray, spec: ExperimentSpec, rng: np.random.Generator) -> np.ndarray:
    """``B = A x0`` for Gaussian ``x0``, plus optional relative Gaussian noise."""
    x0 = rng.standard_normal((a.shape[1], spec.b_cols))
    b = a @ x0
    if spec.b_noise > 0:
        scale = spec.b_noise * np.linalg.norm(b) / np.sqrt(b.size)
        b = b + scale * rng.standard_normal(b.shape)
    return b


def run_ridge_experiment(spec: ExperimentSpec) -> Report:
    data_rng, trial_rngs = _streams(spec)
    m = load_instance(spec, data_rng)
    a = m.to_dense()
    b = ridge_response(a, spec, data_rng)
    x_star = ridge_closed_form(a, b, spec.lam)
    x_norm = float(np.linalg.norm(x_star))
    if not np.isfinite(x_norm) or x_norm == 0:
        raise ValueError("closed-form solution is zero or non-finite; relative error undefined")
    t0 = time.perf_counter()
    ds = DynSamp.from_matrix(m)
    build = time.perf_counter() - t0
    cfg = RidgeConfig(lam=spec.lam, epsilon=spec.epsilon, m_rows=spec.rows, m_cols=spec.cols)
    rows = []
    for t, (seed, rng) in enumerate(trial_rngs):
        t1 = time.perf_counter()
        sol = ridge_solve(ds, b, cfg, rng)
        query = time.perf_counter() - t1
        y = sol.materialize(ds)
        err = float(np.linalg.norm(y - x_star) / x_norm)
        rows.append(
            TrialRow(
                trial=t, seed=seed, error=err, query_seconds=query, total_seconds=build + query,
                sizes={"m_s": sol.m_rows, "m_r": sol.m_cols, "cg_iterations": sol.cg_iterations},
            )
        )
    return _report(spec, rows, "k")


def run_lra_experiment(spec: ExperimentSpec) -> Report:
    data_rng, trial_rngs = _streams(spec)
    m = load_instance(spec, data_rng)
    t0 = time.perf_counter()
    ds = DynSamp.from_matrix(m)
    build = time.perf_counter() - t0
    rows = []
    for k in spec.ks or [spec.k]:
        sig_k, tau = oracle_spectrum(ds, k) if spec.use_oracle else (None, None)
        cfg = LowRankConfig(
            k=k, epsilon=spec.epsilon, sigma_k_lower=sig_k, tau=tau, m_rows=spec.rows, m_cols=spec.cols
        )
        for t, (seed, _) in enumerate(trial_rngs):
            # every k sees the same trial seeds
            rng = np.random.default_rng([seed, k])
            t1 = time.perf_counter()
            model = build_low_rank(ds, cfg, rng)
            query = time.perf_counter() - t1
            metric = model_error(model, ds)
            rows.append(
                TrialRow(
                    trial=t, seed=seed, k=k, error=metric.value, absolute_error=metric.absolute,
                    query_seconds=query, total_seconds=build + query,
                    sizes={key: float(v) for key, v in (model.stage_sizes or {}).items()},
                )
            )
    return _report(spec, rows, "k")


def _live_columns(model: LowRankModel) -> np.ndarray:
    v = model.w @ model.sa
    cols = np.einsum("ij,ij->j", model.ar_cache @ v, model.ar_cache @ v)
    return np.flatnonzero(cols > 1e-24 * max(cols.max(), 1e-300))


def tv_distance(samples: np.ndarray, target: np.ndarray) -> float:
    emp = np.bincount(samples, minlength=target.size) / samples.size
    return 0.5 * float(np.abs(emp - target).sum())


def benchmark_model(model: LowRankModel, spec: ExperimentSpec, rng: np.random.Generator) -> dict:
    """Latency and trial statistics of single-draw queries plus TV checks."""
    live = _live_columns(model)
    if live.size == 0:
        raise ValueError("model has no nonzero columns")
    cols = rng.choice(live, size=spec.queries)
    lat = np.empty(spec.queries)
    trials = np.empty(spec.queries)
    for q, j in enumerate(cols.tolist()):
        t0 = time.perf_counter()
        res = sample_rows_given_column(model, j, 1, rng)
        lat[q] = time.perf_counter() - t0
        trials[q] = res.trials
    tvs = []
    for j in rng.choice(live, size=min(spec.tv_columns, live.size), replace=False).tolist():
        res = sample_rows_given_column(model, j, spec.tv_draws, rng)
        tvs.append(tv_distance(res.rows, query_distribution(model, j)))
    return {
        "median_latency": float(np.median(lat)),
        "mean_latency": float(lat.mean()),
        "mean_trials": float(trials.mean()),
        "max_tv": max(tvs) if tvs else None,
    }


def _query_rows(spec: ExperimentSpec, n: int | None = None) -> list[TrialRow]:
    data_rng, trial_rngs = _streams(spec)
    m = load_instance(spec, data_rng)
    t0 = time.perf_counter()
    ds = DynSamp.from_matrix(m)
    build = time.perf_counter() - t0
    sig_k, tau = oracle_spectrum(ds, spec.k) if spec.use_oracle else (None, None)
    cfg = LowRankConfig(
        k=spec.k, epsilon=spec.epsilon, sigma_k_lower=sig_k, tau=tau, m_rows=spec.rows, m_cols=spec.cols
    )
    rows = []
    for t, (seed, rng) in enumerate(trial_rngs):
        t1 = time.perf_counter()
        model = build_low_rank(ds, cfg, rng)
        model_time = time.perf_counter() - t1
        stats = benchmark_model(model, spec, rng)
        rows.append(
            TrialRow(
                trial=t, seed=seed, k=spec.k, n=n, query_seconds=stats["median_latency"],
                total_seconds=build + model_time, mean_latency_seconds=stats["mean_latency"],
                mean_trials=stats["mean_trials"], max_tv=stats["max_tv"], alpha=model.alpha,
                sizes={key: float(v) for key, v in (model.stage_sizes or {}).items()},
            )
        )
    return rows


QUERY_RECIPE = SyntheticRecipe(kind="decay", n=1000, d=200, power=1.0)


def _query_spec(spec: ExperimentSpec) -> ExperimentSpec:
    if spec.input_path is None and spec.synthetic == SyntheticRecipe():
        return spec.model_copy(update={"synthetic": QUERY_RECIPE})
    return spec


def run_query_benchmark(spec: ExperimentSpec) -> Report:
    spec = _query_spec(spec)
    return _report(spec, _query_rows(spec), "n")


def run_bench(spec: ExperimentSpec) -> Report:
    """Query benchmark repeated over ``bench_ns`` row counts at fixed ``d`` and sizes."""
    spec = _query_spec(spec)
    if spec.input_path is not None:
        raise ValueError("bench scales synthetic instances; input_path is not supported")
    rows = []
    for n in spec.bench_ns or [1000, 4000]:
        sub = spec.model_copy(update={"synthetic": spec.synthetic.model_copy(update={"n": n})})
        rows.extend(_query_rows(sub, n))
    return _report(spec, rows, "n")


DRIVERS = {
    "ridge": run_ridge_experiment,
    "lra": run_lra_experiment,
    "query": run_query_benchmark,
    "bench": run_bench,
}


def run_experiment(spec: ExperimentSpec) -> Report:
    return DRIVERS[spec.task](spec)


CSV_FIELDS = [f for f in TrialRow.model_fields if f != "sizes"] + ["sizes"]


def report_csv(report: Report) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for row in report.rows:
        d = row.model_dump(mode="json")
        d["sizes"] = json.dumps(d["sizes"], sort_keys=True)
        w.writerow(d)
    return buf.getvalue()


def render_report(report: Report, fmt: str = "json") -> str:
    if fmt == "json":
        return report.model_dump_json(indent=2) + "\n"
    if fmt == "csv":
        return report_csv(report)
    raise ValueError(f"unknown format {fmt!r}")


def write_report(report: Report, path, fmt: str = "json") -> None:
    Path(path).write_text(render_report(report, fmt), encoding="utf-8")


SCHEMA_FILE = "report.schema.json"


def report_schema() -> dict:
    """The JSON schema shipped with the package for validating reports."""
    return json.loads(resources.files(__package__).joinpath(SCHEMA_FILE).read_text(encoding="utf-8"))
