"""Pydantic models shared by the experiment harness, the HTTP service and the CLI."""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, PositiveInt, model_validator

Task = Literal["ridge", "lra", "query", "bench"]


class SyntheticRecipe(BaseModel):
    """Random instance: ``rank_k`` uses Gaussian-QR factors, ``decay`` uses sigma_i = 1 / i**power."""

    model_config = ConfigDict(extra="forbid")

    kind: Literal["rank_k", "decay"] = "rank_k"
    n: PositiveInt = 200
    d: PositiveInt = 150
    rank: Optional[PositiveInt] = None
    sigma: Optional[list[float]] = None
    power: float = Field(2.0, gt=0)
    noise: float = Field(0.0, ge=0)

    @model_validator(mode="after")
    def _check(self):
        r = self.rank or min(self.n, self.d)
        if r > min(self.n, self.d):
            raise ValueError("rank exceeds min(n, d)")
        if self.sigma is not None:
            if len(self.sigma) != r:
                raise ValueError("sigma must have one value per rank")
            if any(s <= 0 for s in self.sigma):
                raise ValueError("sigma values must be positive")
        return self


class ExperimentSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    task: Task
    input_path: Optional[str] = None
    synthetic: Optional[SyntheticRecipe] = None
    rows: Optional[PositiveInt] = None
    cols: Optional[PositiveInt] = None
    k: PositiveInt = 10
    ks: Optional[list[PositiveInt]] = None
    epsilon: float = Field(0.5, gt=0, lt=1)
    lam: float = Field(1.0, ge=0)
    b_noise: float = Field(0.0, ge=0)
    b_cols: PositiveInt = 1
    use_oracle: bool = True
    trials: PositiveInt = 10
    seed: int = 0
    queries: PositiveInt = 1000
    tv_columns: int = Field(10, ge=0)
    tv_draws: PositiveInt = 10_000
    bench_ns: Optional[list[PositiveInt]] = None

    @model_validator(mode="after")
    def _source(self):
        if self.input_path is None and self.synthetic is None:
            self.synthetic = SyntheticRecipe()
        if self.input_path is not None and self.synthetic is not None:
            raise ValueError("give either input_path or synthetic, not both")
        return self


class TrialRow(BaseModel):
    trial: int
    seed: int
    k: Optional[int] = None
    n: Optional[int] = None
    error: Optional[float] = None
    absolute_error: bool = False
    query_seconds: float
    total_seconds: float
    mean_latency_seconds: Optional[float] = None
    mean_trials: Optional[float] = None
    max_tv: Optional[float] = None
    alpha: Optional[float] = None
    sizes: dict[str, float] = Field(default_factory=dict)


class Aggregate(BaseModel):
    group: str
    count: int
    median_error: Optional[float] = None
    mean_error: Optional[float] = None
    median_query_seconds: float
    median_total_seconds: float


class Report(BaseModel):
    task: Task
    seed: int
    config: dict
    rows: list[TrialRow]
    aggregates: list[Aggregate]


# -- service payloads -------------------------------------------------------


class Entry(BaseModel):
    i: int = Field(ge=0)
    j: int = Field(ge=0)
    value: float


class MatrixCreate(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_rows: Optional[PositiveInt] = None
    n_cols: Optional[PositiveInt] = None
    entries: list[Entry] = Field(default_factory=list)
    input_path: Optional[str] = None
    synthetic: Optional[SyntheticRecipe] = None
    seed: int = 0


class MatrixInfo(BaseModel):
    id: str
    n_rows: int
    n_cols: int
    nnz: int
    frob_sq: float
    version: int


class EntryUpdate(Entry):
    mode: Literal["set", "add"] = "set"


class UpdateBatch(BaseModel):
    updates: list[EntryUpdate]


class EntryValue(BaseModel):
    i: int
    j: int
    value: float


class RowSampleRequest(BaseModel):
    m: PositiveInt
    seed: int = 0


class SamplerOut(BaseModel):
    dim: int
    indices: list[int]
    probs: list[float]
    scales: list[float]


class RidgeRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    b: list[list[float]]
    lam: float = Field(ge=0)
    epsilon: float = Field(0.3, gt=0, lt=1)
    sigma_k_lower: Optional[float] = None
    sigma_1_upper: Optional[float] = None
    m_rows: Optional[PositiveInt] = None
    m_cols: Optional[PositiveInt] = None
    seed: int = 0


class RidgeOut(BaseModel):
    id: str
    m_rows: int
    m_cols: int
    cg_iterations: int
    residual_norm: float
    converged: bool


class LowRankRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    k: PositiveInt
    epsilon: float = Field(0.5, gt=0, lt=1)
    sigma_k_lower: Optional[float] = Field(None, gt=0)
    tau: Optional[float] = Field(None, gt=0)
    m_rows: Optional[PositiveInt] = None
    m_cols: Optional[PositiveInt] = None
    seed: int = 0


class LowRankOut(BaseModel):
    id: str
    k: int
    m_rows: int
    m_cols: int
    kappa_est: float
    alpha: float
    rank_deficient: bool


class QueryRequest(BaseModel):
    column: int = Field(ge=0)
    size: PositiveInt = 1
    seed: int = 0


class QueryOut(BaseModel):
    column: int
    rows: list[int]
    trials: int
    doublings: int
