"""Service layer: the four operations behind both the HTTP app and the CLI.

Plain functions over the pydantic models; all error conditions surface as
typed exceptions (``UsageError`` for caller mistakes, ``DesignFailure`` /
``EnvFailure`` propagated from the pipeline) so the transport layers can map
them to HTTP statuses or exit codes.
"""

from __future__ import annotations

import time

import numpy as np

from .. import checks
from ..env import get_env, grid_dp_oracle, rollout_value
from ..lsvi import (
    QEstimate,
    StageDiagnostics,
    TrainConfig,
    choose_degree,
    greedy_policy,
    train,
)
from ..rng import stream
from ..sweep import SweepSettings, rows_to_csv, run_sweep
from . import models

__all__ = ["UsageError", "run_kernel_check", "run_train", "run_eval", "run_sweep_service"]


class UsageError(ValueError):
    """The request is malformed or refers to unknown entities."""


def run_kernel_check(req: models.KernelCheckRequest) -> models.KernelCheckReport:
    if req.degree < 2 or req.degree % 2 != 0:
        raise UsageError(f"degree must be an even integer >= 2, got {req.degree}")
    try:
        report = checks.run_kernel_check(req.degree, req.grid, req.n_draws, req.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return models.KernelCheckReport(**report)


def _resolve_env(name: str, horizon, params: dict):
    try:
        return get_env(name, horizon, params)
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def _resolve_config(req: models.TrainRequest) -> TrainConfig:
    degree = req.degree
    if degree is None:
        if req.epsilon is None:
            raise UsageError("either degree or epsilon must be given")
        degree = choose_degree(req.epsilon, req.nu, req.degree_c)
    try:
        return TrainConfig(
            degree=degree,
            n_tot=req.n_tot,
            nu=req.nu,
            eps_prime=req.eps_prime,
            action_grid_M=req.action_grid,
            seed=req.seed,
            ridge=req.ridge,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def run_train(req: models.TrainRequest) -> models.TrainResponse:
    spec = _resolve_env(req.env, req.horizon, req.env_params)
    config = _resolve_config(req)
    t0 = time.monotonic()
    out = train(spec, config)
    oracle = grid_dp_oracle(spec, req.oracle_grid, req.oracle_mc, seed=0)
    oracle_value = oracle.value_at(spec.start_state)
    policy = greedy_policy(out.estimate)
    value, se = rollout_value(
        spec, policy, req.eval_episodes, stream(config.seed, "train_rollout")
    )
    record = models.RunRecord(
        config=config.to_json_dict(),
        seed=config.seed,
        env=spec.name,
        horizon=spec.horizon,
        n_queries_total=out.n_queries_total,
        per_stage_queries={str(h): n for h, n in out.per_stage_queries.items()},
        design_g_value=out.design_g_value,
        design_support=out.design_support,
        per_stage_samples=out.per_stage_samples,
        value_gap=oracle_value - value,
        oracle_value=oracle_value,
        rollout_value=value,
        rollout_se=se,
        per_stage=[
            models.StageDiagnosticModel(**diag.to_json_dict())
            for diag in out.estimate.diagnostics
        ],
        wall_time_s=time.monotonic() - t0,
    )
    return models.TrainResponse(estimate=out.estimate.to_json_dict(), run_record=record)


def _estimate_from_dict(payload: dict) -> QEstimate:
    try:
        diagnostics = tuple(
            StageDiagnostics(**item) for item in payload.get("diagnostics", [])
        )
        return QEstimate(
            env_name=payload["env"]["name"],
            d_state=payload["env"]["d_state"],
            d_action=payload["env"]["d_action"],
            horizon=payload["env"]["horizon"],
            degree=payload["degree"],
            norm_kind=payload["norm_kind"],
            normalization=payload["normalization"],
            thetas=np.asarray(payload["thetas"], dtype=float),
            diagnostics=diagnostics,
            config=payload.get("config", {}),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"malformed estimate payload: {exc}") from exc


def run_eval(req: models.EvalRequest) -> models.EvalResponse:
    if req.n_episodes < 1:
        raise UsageError(f"n_episodes must be >= 1, got {req.n_episodes}")
    spec = _resolve_env(req.env, req.horizon, req.env_params)
    est = _estimate_from_dict(req.estimate)
    if est.d_state != spec.d_state or est.d_action != spec.d_action:
        raise UsageError(
            f"estimate dimensions ({est.d_state}, {est.d_action}) do not match "
            f"environment ({spec.d_state}, {spec.d_action})"
        )
    if est.horizon != spec.horizon:
        raise UsageError(
            f"estimate horizon {est.horizon} does not match environment {spec.horizon}"
        )
    if est.thetas.shape[1] != est.feature_map.n_features:
        raise UsageError("estimate coefficient length does not match its feature map")
    policy = greedy_policy(est)
    oracle = grid_dp_oracle(spec, req.oracle_grid, req.oracle_mc, seed=0)
    value, se = rollout_value(spec, policy, req.n_episodes, stream(req.seed, "eval_rollout"))
    oracle_value = oracle.value_at(spec.start_state)

    # sup over start states approximated on a uniform start grid
    start_axis = np.linspace(-1.0, 1.0, req.start_grid)
    grids = np.meshgrid(*([start_axis] * spec.d_state), indexing="ij")
    starts = np.stack([g.ravel() for g in grids], axis=1)
    gaps = []
    for i, s0 in enumerate(starts):
        v_i, _ = rollout_value(
            spec,
            policy,
            max(req.n_episodes // 4, 1),
            stream(req.seed, "eval_start", i),
            start=s0,
        )
        gaps.append(oracle.value_at(s0) - v_i)
    return models.EvalResponse(
        env=spec.name,
        n_episodes=req.n_episodes,
        rollout_value=value,
        rollout_se=se,
        oracle_value=oracle_value,
        value_gap=oracle_value - value,
        max_gap_over_starts=float(np.max(gaps)),
        start_gaps=[float(g) for g in gaps],
    )


def run_sweep_service(req: models.SweepRequest) -> models.SweepResponse:
    if len(req.epsilons) < 2:
        raise UsageError("a sweep needs at least 2 epsilon values")
    if not req.seeds:
        raise UsageError("a sweep needs at least 1 seed")
    if req.cap < req.n_start:
        raise UsageError(f"cap {req.cap} is below the starting budget {req.n_start}")
    spec = _resolve_env(req.env, req.horizon, req.env_params)
    settings = SweepSettings(
        epsilons=tuple(req.epsilons),
        seeds=tuple(req.seeds),
        nu=req.nu,
        degree_c=req.degree_c,
        n_start=req.n_start,
        cap=req.cap,
        pass_fraction=req.pass_fraction,
        episodes=req.episodes,
        oracle_grid=req.oracle_grid,
        oracle_mc=req.oracle_mc,
        eps_prime=req.eps_prime,
        action_grid_M=req.action_grid,
        threads=req.threads,
    )
    rows = run_sweep(spec, settings)
    return models.SweepResponse(
        env=spec.name,
        rows=[models.SweepRowModel(**row.as_record()) for row in rows],
        csv=rows_to_csv(rows),
    )
