"""HTTP service over the sampling structures, solvers and experiment drivers.

State lives in an in-process registry. Each matrix carries its own lock:
writes to one :class:`DynSamp` are serialized, and solves or model builds
take the same lock so they see a consistent snapshot.
"""

from __future__ import annotations

import threading
import uuid
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, HTTPException

from .errors import DynSketchError
from .harness import build_instance, run_experiment
from .lowrank import LowRankConfig, LowRankModel, build_low_rank, sample_rows_given_column
from .mmio import read_matrix_market
from .ridge import RidgeConfig, RidgeSolution, ridge_solve, solution_entry
from .sampler import DynSamp, SparseMatrix, len_sq_sample_rows
from .schemas import (
    EntryValue,
    ExperimentSpec,
    LowRankOut,
    LowRankRequest,
    MatrixCreate,
    MatrixInfo,
    QueryOut,
    QueryRequest,
    Report,
    RidgeOut,
    RidgeRequest,
    RowSampleRequest,
    SamplerOut,
    UpdateBatch,
)


@dataclass
class _Slot:
    ds: DynSamp
    lock: threading.Lock = field(default_factory=threading.Lock)


@dataclass
class Registry:
    matrices: dict[str, _Slot] = field(default_factory=dict)
    solutions: dict[str, tuple[str, RidgeSolution]] = field(default_factory=dict)
    models: dict[str, tuple[str, LowRankModel]] = field(default_factory=dict)
    lock: threading.Lock = field(default_factory=threading.Lock)

    def slot(self, mid: str) -> _Slot:
        try:
            return self.matrices[mid]
        except KeyError:
            raise HTTPException(404, f"unknown matrix {mid}") from None


def _info(mid: str, ds: DynSamp) -> MatrixInfo:
    return MatrixInfo(
        id=mid, n_rows=ds.n_rows, n_cols=ds.n_cols, nnz=ds.nnz, frob_sq=ds.frob_sq, version=ds.version
    )


def _bad(exc: Exception) -> HTTPException:
    return HTTPException(422, str(exc))


def create_app(registry: Registry | None = None) -> FastAPI:
    reg = Registry() if registry is None else registry
    app = FastAPI(title="dynsketch")
    app.state.registry = reg

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.post("/matrices", response_model=MatrixInfo, status_code=201)
    def create_matrix(req: MatrixCreate):
        try:
            if req.input_path is not None:
                m = read_matrix_market(req.input_path)
            elif req.synthetic is not None:
                m = build_instance(req.synthetic, np.random.default_rng(req.seed))
            else:
                if req.n_rows is None or req.n_cols is None:
                    raise ValueError("n_rows and n_cols are required without input_path or synthetic")
                e = req.entries
                m = SparseMatrix.from_coo(
                    (req.n_rows, req.n_cols), [x.i for x in e], [x.j for x in e], [x.value for x in e]
                )
            ds = DynSamp.from_matrix(m)
        except (DynSketchError, ValueError, IndexError, OSError) as exc:
            raise _bad(exc) from exc
        mid = uuid.uuid4().hex[:12]
        with reg.lock:
            reg.matrices[mid] = _Slot(ds)
        return _info(mid, ds)

    @app.get("/matrices/{mid}", response_model=MatrixInfo)
    def get_matrix(mid: str):
        return _info(mid, reg.slot(mid).ds)

    @app.delete("/matrices/{mid}", status_code=204)
    def delete_matrix(mid: str):
        with reg.lock:
            if reg.matrices.pop(mid, None) is None:
                raise HTTPException(404, f"unknown matrix {mid}")

    @app.post("/matrices/{mid}/entries", response_model=MatrixInfo)
    def update_entries(mid: str, batch: UpdateBatch):
        slot = reg.slot(mid)
        with slot.lock:
            for up in batch.updates:
                try:
                    if up.mode == "set":
                        slot.ds.update_entry(up.i, up.j, up.value)
                    else:
                        slot.ds.add_to_entry(up.i, up.j, up.value)
                except (ValueError, IndexError) as exc:
                    raise _bad(exc) from exc
            return _info(mid, slot.ds)

    @app.get("/matrices/{mid}/entries/{i}/{j}", response_model=EntryValue)
    def get_entry(mid: str, i: int, j: int):
        slot = reg.slot(mid)
        try:
            return EntryValue(i=i, j=j, value=slot.ds.get_entry(i, j))
        except IndexError as exc:
            raise _bad(exc) from exc

    @app.post("/matrices/{mid}/sample-rows", response_model=SamplerOut)
    def sample_rows(mid: str, req: RowSampleRequest):
        slot = reg.slot(mid)
        with slot.lock:
            try:
                s = len_sq_sample_rows(slot.ds, req.m, np.random.default_rng(req.seed))
            except DynSketchError as exc:
                raise _bad(exc) from exc
        return SamplerOut(
            dim=s.dim, indices=s.indices.tolist(), probs=s.probs.tolist(), scales=s.scales.tolist()
        )

    @app.post("/matrices/{mid}/ridge", response_model=RidgeOut, status_code=201)
    def ridge(mid: str, req: RidgeRequest):
        slot = reg.slot(mid)
        try:
            cfg = RidgeConfig(
                lam=req.lam, epsilon=req.epsilon, sigma_k_lower=req.sigma_k_lower,
                sigma_1_upper=req.sigma_1_upper, m_rows=req.m_rows, m_cols=req.m_cols,
            )
            with slot.lock:
                sol = ridge_solve(slot.ds, np.asarray(req.b, dtype=float), cfg, np.random.default_rng(req.seed))
        except (DynSketchError, ValueError) as exc:
            raise _bad(exc) from exc
        sid = uuid.uuid4().hex[:12]
        with reg.lock:
            reg.solutions[sid] = (mid, sol)
        return RidgeOut(
            id=sid, m_rows=sol.m_rows, m_cols=sol.m_cols, cg_iterations=sol.cg_iterations,
            residual_norm=sol.residual_norm, converged=sol.converged,
        )

    @app.get("/solutions/{sid}/entries/{i}/{j}", response_model=EntryValue)
    def ridge_entry(sid: str, i: int, j: int):
        try:
            mid, sol = reg.solutions[sid]
        except KeyError:
            raise HTTPException(404, f"unknown solution {sid}") from None
        slot = reg.slot(mid)
        with slot.lock:
            try:
                return EntryValue(i=i, j=j, value=solution_entry(sol, slot.ds, i, j))
            except IndexError as exc:
                raise _bad(exc) from exc

    @app.post("/matrices/{mid}/lowrank", response_model=LowRankOut, status_code=201)
    def lowrank(mid: str, req: LowRankRequest):
        slot = reg.slot(mid)
        try:
            cfg = LowRankConfig(
                k=req.k, epsilon=req.epsilon, sigma_k_lower=req.sigma_k_lower, tau=req.tau,
                m_rows=req.m_rows, m_cols=req.m_cols,
            )
            with slot.lock:
                model = build_low_rank(slot.ds, cfg, np.random.default_rng(req.seed))
        except (DynSketchError, ValueError) as exc:
            raise _bad(exc) from exc
        lid = uuid.uuid4().hex[:12]
        with reg.lock:
            reg.models[lid] = (mid, model)
        return LowRankOut(
            id=lid, k=model.k, m_rows=model.row_sampler.m, m_cols=model.m_cols,
            kappa_est=model.kappa_est, alpha=model.alpha, rank_deficient=model.rank_deficient,
        )

    @app.post("/models/{lid}/query", response_model=QueryOut)
    def query(lid: str, req: QueryRequest):
        try:
            _, model = reg.models[lid]
        except KeyError:
            raise HTTPException(404, f"unknown model {lid}") from None
        try:
            res = sample_rows_given_column(model, req.column, req.size, np.random.default_rng(req.seed))
        except (DynSketchError, IndexError) as exc:
            raise _bad(exc) from exc
        return QueryOut(column=req.column, rows=res.rows.tolist(), trials=res.trials, doublings=res.doublings)

    @app.post("/experiments", response_model=Report)
    def experiment(spec: ExperimentSpec):
        try:
            return run_experiment(spec)
        except (DynSketchError, ValueError, OSError) as exc:
            raise _bad(exc) from exc

    return app


app = create_app()
