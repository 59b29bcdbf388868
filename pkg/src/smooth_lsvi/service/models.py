"""Pydantic request/response models for the service endpoints."""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field


class KernelCheckRequest(BaseModel):
    degree: int
    grid: int = 4096
    n_draws: int = 100_000
    seed: int = 0


class CheckItemModel(BaseModel):
    name: str
    passed: bool
    value: float
    tol: float


class KernelCheckReport(BaseModel):
    N: int
    G: int
    beta_plus: float
    beta_minus: float
    lambda_hat: float
    l1_norm: float
    ks_plus: float
    ks_minus: float
    reproduction_error: float
    projection_error: float
    checks: list[CheckItemModel]
    passed: bool


class TrainRequest(BaseModel):
    env: str
    horizon: Optional[int] = None
    env_params: dict = Field(default_factory=dict)
    degree: Optional[int] = None
    epsilon: Optional[float] = None
    nu: float = 1.0
    degree_c: float = 1.0
    n_tot: int = 2000
    eps_prime: Optional[float] = None
    action_grid: int = 33
    seed: int = 0
    ridge: float = 1e-10
    oracle_grid: int = 201
    oracle_mc: int = 64
    eval_episodes: int = 2000


class StageDiagnosticModel(BaseModel):
    stage: int
    n_samples: int
    residual_rms: float
    width_cover: float
    width_uniform: float


class RunRecord(BaseModel):
    """Summary of one training run; wall_time_s is the only nondeterministic field."""

    config: dict
    seed: int
    env: str
    horizon: int
    n_queries_total: int
    per_stage_queries: dict[str, int]
    design_g_value: float
    design_support: int
    per_stage_samples: int
    value_gap: float
    oracle_value: float
    rollout_value: float
    rollout_se: float
    per_stage: list[StageDiagnosticModel]
    wall_time_s: float


class TrainResponse(BaseModel):
    estimate: dict
    run_record: RunRecord


class EvalRequest(BaseModel):
    estimate: dict
    env: str
    horizon: Optional[int] = None
    env_params: dict = Field(default_factory=dict)
    n_episodes: int = 2000
    seed: int = 0
    start_grid: int = 21
    oracle_grid: int = 201
    oracle_mc: int = 64


class EvalResponse(BaseModel):
    env: str
    n_episodes: int
    rollout_value: float
    rollout_se: float
    oracle_value: float
    value_gap: float
    max_gap_over_starts: float
    start_gaps: list[float]


class SweepRequest(BaseModel):
    env: str
    horizon: Optional[int] = None
    env_params: dict = Field(default_factory=dict)
    epsilons: list[float]
    seeds: list[int]
    nu: float = 1.0
    degree_c: float = 1.0
    n_start: int = 250
    cap: int = 64000
    pass_fraction: float = 0.8
    episodes: int = 2000
    oracle_grid: int = 201
    oracle_mc: int = 64
    eps_prime: Optional[float] = None
    action_grid: int = 33
    threads: Optional[int] = None


class SweepRowModel(BaseModel):
    epsilon: float
    nu: float
    N: int
    n_queries: int
    gap_median: float
    seeds_passed: int
    wall_time_s: float
    status: str


class SweepResponse(BaseModel):
    env: str
    rows: list[SweepRowModel]
    csv: str
