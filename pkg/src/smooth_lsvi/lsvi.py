"""Perturbed least-squares value iteration with a precomputed design.

One design is computed for the feature map, its support points are
replicated into a per-stage dataset, and backward induction then regresses
signed perturbed targets onto the features: each data point is perturbed
with one positive-class and one negative-class kernel draw, the generative
model is queried at both wrapped points (two queries per data point), and
the target reweights reward plus next-stage value by the d-dimensional
decomposition weights.  Because the kernel projects every smoothed target
into the feature span, the regression is misspecification-free by
construction.

Each stage consumes its own counter-based random streams keyed by
(seed, stage, sample index, purpose), so stages are statistically
independent and any stage can be regenerated without disturbing the others.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np
import scipy.linalg

from .design import (
    DesignResult,
    frank_wolfe_design,
    make_design_problem,
    round_counts,
    with_counts,
)
from .env import GenerativeModel, MdpSpec
from .harmonics import (
    FeatureMap,
    NormKind,
    Normalization,
    axis_features,
    enumerate_indices,
    feature_matrix,
    tensor_rows,
)
from .kernel_sampler import KernelTable, beta_pair, build_table, sample_pair_d, wrap
from .rng import StreamPool

__all__ = [
    "TrainConfig",
    "StageDiagnostics",
    "QEstimate",
    "TrainOutput",
    "DesignFailure",
    "EnvFailure",
    "choose_degree",
    "build_feature_map",
    "build_dataset",
    "build_targets",
    "solve_stage",
    "train",
    "greedy_policy",
    "confidence_width",
    "load_estimate",
]

DEFAULT_RIDGE = 1e-10
_MIN_EIG = 1e-10


class DesignFailure(RuntimeError):
    """The experimental design did not reach its quality target."""


class EnvFailure(RuntimeError):
    """A generative-model query failed during training."""


@dataclass(frozen=True)
class TrainConfig:
    """Inputs of one training run.

    ``degree`` is the (even) feature degree, ``n_tot`` the reference sample
    count per stage; ``nu`` is only consulted by the degree-selection helper.
    The ridge default is a pure numerical safeguard: the design guarantees a
    well-conditioned Gram matrix, so it is statistically negligible.
    """

    degree: int
    n_tot: int
    nu: float = 1.0
    eps_prime: Optional[float] = None
    action_grid_M: int = 33
    seed: int = 0
    ridge: float = DEFAULT_RIDGE
    kernel_grid: int = 4096
    design_tol: float = 0.05
    design_max_iters: Optional[int] = None
    refine_rounds: int = 3
    clip_values: bool = False

    def __post_init__(self):
        if self.degree < 2 or self.degree % 2 != 0:
            raise ValueError(f"degree must be an even integer >= 2, got {self.degree}")
        if self.n_tot < 1:
            raise ValueError(f"n_tot must be >= 1, got {self.n_tot}")
        if self.action_grid_M < 3:
            raise ValueError(f"action_grid_M must be >= 3, got {self.action_grid_M}")

    def to_json_dict(self) -> dict:
        return {
            "degree": self.degree,
            "n_tot": self.n_tot,
            "nu": self.nu,
            "eps_prime": self.eps_prime,
            "action_grid_M": self.action_grid_M,
            "seed": self.seed,
            "ridge": self.ridge,
            "kernel_grid": self.kernel_grid,
            "design_tol": self.design_tol,
            "design_max_iters": self.design_max_iters,
            "refine_rounds": self.refine_rounds,
            "clip_values": self.clip_values,
        }


@dataclass(frozen=True)
class StageDiagnostics:
    stage: int
    n_samples: int
    residual_rms: float
    width_cover: float
    width_uniform: float

    def to_json_dict(self) -> dict:
        return {
            "stage": self.stage,
            "n_samples": self.n_samples,
            "residual_rms": self.residual_rms,
            "width_cover": self.width_cover,
            "width_uniform": self.width_uniform,
        }


def choose_degree(epsilon: float, nu: float, c: float = 1.0) -> int:
    """Even feature degree 2*ceil(c * eps^(-1/(nu+1)) / 2) for a target accuracy."""
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    if nu < 0:
        raise ValueError(f"nu must be >= 0, got {nu}")
    raw = c * epsilon ** (-1.0 / (nu + 1.0))
    return max(2, 2 * math.ceil(raw / 2.0))


def build_feature_map(spec: MdpSpec, degree: int) -> FeatureMap:
    """Orthonormal feature map over the joint state-action cube.

    The max-norm index set matches the span of the tensor-product kernel
    exactly, so the smoothed regression targets live in the feature span
    with zero mismatch.
    """
    index_set = enumerate_indices(spec.d, degree, NormKind.LINF)
    return FeatureMap(index_set=index_set, normalization=Normalization.ORTHONORMAL)


@dataclass(frozen=True)
class QEstimate:
    """Per-stage coefficient vectors over the feature map, plus diagnostics.

    The implicit stage-(H+1) coefficient vector is zero.  The JSON form is
    deterministic for a fixed seed and reloadable without retraining.
    """

    env_name: str
    d_state: int
    d_action: int
    horizon: int
    degree: int
    norm_kind: str
    normalization: str
    thetas: np.ndarray
    diagnostics: tuple
    config: dict

    @cached_property
    def feature_map(self) -> FeatureMap:
        index_set = enumerate_indices(
            self.d_state + self.d_action, self.degree, NormKind(self.norm_kind)
        )
        return FeatureMap(index_set=index_set, normalization=Normalization(self.normalization))

    def q_values(self, S, A, h: int) -> np.ndarray:
        S = np.atleast_2d(np.asarray(S, dtype=float))
        A = np.atleast_2d(np.asarray(A, dtype=float))
        Z = np.hstack([S, A])
        return feature_matrix(self.feature_map, Z) @ self.thetas[h - 1]

    def to_json_dict(self) -> dict:
        return {
            "env": {
                "name": self.env_name,
                "d_state": self.d_state,
                "d_action": self.d_action,
                "horizon": self.horizon,
            },
            "degree": self.degree,
            "norm_kind": self.norm_kind,
            "normalization": self.normalization,
            "config": self.config,
            "thetas": [theta.tolist() for theta in self.thetas],
            "diagnostics": [diag.to_json_dict() for diag in self.diagnostics],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())


def load_estimate(path) -> QEstimate:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    diagnostics = tuple(
        StageDiagnostics(
            stage=item["stage"],
            n_samples=item["n_samples"],
            residual_rms=item["residual_rms"],
            width_cover=item["width_cover"],
            width_uniform=item["width_uniform"],
        )
        for item in payload.get("diagnostics", [])
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


def build_dataset(design: DesignResult, n_tot: int) -> np.ndarray:
    """Expand the design support into the per-stage base-point multiset.

    The same multiset is used at every stage; fresh perturbations and
    queries are drawn per stage later.
    """
    counts = design.counts if design.counts is not None else round_counts(design, n_tot)
    return np.repeat(design.support_points, counts, axis=0)


def _action_grid(d_action: int, points_per_axis: int) -> np.ndarray:
    axis = np.linspace(-1.0, 1.0, points_per_axis)
    grids = np.meshgrid(*([axis] * d_action), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


class _StageQ:
    """Factorized Q evaluation exploiting the tensor structure of the max-norm basis.

    phi(s, a) is the Kronecker product of state-axis and action-axis
    features, so Q over an action grid is two small matrix products instead
    of one evaluation per (state, action) pair.
    """

    def __init__(self, fm: FeatureMap, theta: np.ndarray, d_state: int):
        self.N = fm.index_set.degree
        self.d_state = d_state
        self.d_action = fm.d - d_state
        self.ortho = Normalization(fm.normalization) is Normalization.ORTHONORMAL
        k = 2 * self.N + 1
        self.theta_mat = np.asarray(theta, dtype=float).reshape(
            k**self.d_state, k**self.d_action
        )

    def state_rows(self, S: np.ndarray) -> np.ndarray:
        return tensor_rows(
            [axis_features(S[:, a], self.N, self.ortho) for a in range(self.d_state)]
        )

    def action_rows(self, A: np.ndarray) -> np.ndarray:
        return tensor_rows(
            [axis_features(A[:, a], self.N, self.ortho) for a in range(self.d_action)]
        )

    def q_on_grid(self, S: np.ndarray, action_grid: np.ndarray) -> np.ndarray:
        projected = self.theta_mat @ self.action_rows(action_grid).T
        return self.state_rows(S) @ projected


def _max_q(
    fm: FeatureMap,
    theta: np.ndarray,
    states: np.ndarray,
    action_grid: np.ndarray,
    d_state: int,
    clip_to: Optional[float] = None,
    chunk: int = 4096,
):
    """max_a phi(s, a)^T theta over the action grid, for a batch of states."""
    n, n_a = states.shape[0], action_grid.shape[0]
    if NormKind(fm.index_set.norm_kind) is NormKind.LINF:
        q = _StageQ(fm, theta, d_state).q_on_grid(states, action_grid)
        if clip_to is not None:
            np.clip(q, 0.0, clip_to, out=q)
        argmax = q.argmax(axis=1)
        return q[np.arange(n), argmax], argmax
    out = np.empty(n)
    argmax = np.empty(n, dtype=int)
    for start in range(0, n, chunk):
        block = states[start : start + chunk]
        b = block.shape[0]
        Z = np.hstack(
            [np.repeat(block, n_a, axis=0), np.tile(action_grid, (b, 1))]
        )
        q = (feature_matrix(fm, Z) @ theta).reshape(b, n_a)
        if clip_to is not None:
            np.clip(q, 0.0, clip_to, out=q)
        argmax[start : start + chunk] = q.argmax(axis=1)
        out[start : start + chunk] = q[np.arange(b), argmax[start : start + chunk]]
    return out, argmax


def build_targets(
    model: GenerativeModel,
    h: int,
    base_points: np.ndarray,
    theta_next: Optional[np.ndarray],
    table: KernelTable,
    fm: FeatureMap,
    config: TrainConfig,
    stage_seed=None,
):
    """Features and signed regression targets for one stage.

    Every base point consumes exactly two generative-model queries (one per
    kernel part).  At the last stage the next-stage value is identically
    zero and the target is the signed reward pair alone.
    """
    spec = model.spec
    d, d_s = fm.d, spec.d_state
    n = base_points.shape[0]
    seed = config.seed if stage_seed is None else stage_seed
    bp, bm = beta_pair(table, d)
    Phi = feature_matrix(fm, base_points)

    next_states = np.empty((2 * n, d_s))
    rewards = np.empty(2 * n)
    noise_pool = StreamPool()
    env_pool = StreamPool()
    for i in range(n):
        noise_rng = noise_pool.get(seed, "noise", h, i)
        eta_plus, eta_minus = sample_pair_d(table, d, noise_rng)
        perturbed = wrap(base_points[i] + np.stack([eta_plus, eta_minus]))
        env_rng = env_pool.get(seed, "env", h, i)
        try:
            s_next, r = model.query_batch(perturbed[:, :d_s], perturbed[:, d_s:], h, env_rng)
        except Exception as exc:
            raise EnvFailure(f"generative model failed at stage {h}, sample {i}: {exc}") from exc
        next_states[2 * i : 2 * i + 2] = s_next
        rewards[2 * i : 2 * i + 2] = r

    if theta_next is None:
        values = np.zeros(2 * n)
    else:
        action_grid = _action_grid(spec.d_action, config.action_grid_M)
        clip_to = float(spec.horizon) if config.clip_values else None
        values, _ = _max_q(fm, theta_next, next_states, action_grid, d_s, clip_to)

    y_plus = rewards[0::2] + values[0::2]
    y_minus = rewards[1::2] + values[1::2]
    targets = bp * y_plus - bm * y_minus
    return Phi, targets


def solve_stage(features: np.ndarray, targets: np.ndarray, ridge: float = DEFAULT_RIDGE):
    """Ridge-regularized least squares through the Gram matrix.

    With ridge = 0 the smallest eigenvalue of the Gram matrix is checked and
    a singular system raises instead of returning garbage.  Duplicated rows
    act exactly like integer weights.
    """
    if ridge < 0:
        raise ValueError(f"ridge must be >= 0, got {ridge}")
    Phi = np.asarray(features, dtype=float)
    y = np.asarray(targets, dtype=float)
    m = Phi.shape[1]
    gram = Phi.T @ Phi
    if ridge == 0.0:
        smallest = scipy.linalg.eigvalsh(gram, subset_by_index=[0, 0])[0]
        if smallest < _MIN_EIG:
            raise ValueError(
                f"Gram matrix is numerically singular (min eigenvalue {smallest:g}); "
                "supply a positive ridge or a spanning design"
            )
    else:
        gram = gram + ridge * np.eye(m)
    cho = scipy.linalg.cho_factor(gram, lower=True)
    return scipy.linalg.cho_solve(cho, Phi.T @ y)


def confidence_width(
    features: np.ndarray,
    x: np.ndarray,
    sigma_bound: float,
    delta: float,
    k_cover: int,
    ridge: float = 0.0,
):
    """Finite-cover and uniform regression confidence widths at a point.

    Returns the pair (sqrt(log(2k/delta)) * ||x||_{V^-1} * sigma,
    sqrt(n log(2n/delta)) * ||x||_{V^-1} * sigma) where V is the Gram matrix
    of the dataset.
    """
    Phi = np.asarray(features, dtype=float)
    n, m = Phi.shape
    V = Phi.T @ Phi + ridge * np.eye(m)
    try:
        cho = scipy.linalg.cho_factor(V, lower=True)
    except scipy.linalg.LinAlgError as exc:
        raise ValueError("Gram matrix is singular; confidence width undefined") from exc
    x = np.asarray(x, dtype=float)
    norm = float(np.sqrt(x @ scipy.linalg.cho_solve(cho, x)))
    cover = math.sqrt(math.log(2.0 * k_cover / delta)) * norm * sigma_bound
    uniform = math.sqrt(n * math.log(2.0 * n / delta)) * norm * sigma_bound
    return cover, uniform


def _max_confidence_width(features, grid_features, sigma_bound, delta, ridge=0.0):
    """Confidence-width pair at the worst grid point, sup_x ||x||_{V^-1}."""
    Phi = np.asarray(features, dtype=float)
    n, m = Phi.shape
    V = Phi.T @ Phi + ridge * np.eye(m)
    cho = scipy.linalg.cho_factor(V, lower=True)
    solved = scipy.linalg.cho_solve(cho, grid_features.T)
    worst = float(np.sqrt(np.max(np.einsum("ij,ji->i", grid_features, solved))))
    k = grid_features.shape[0]
    cover = math.sqrt(math.log(2.0 * k / delta)) * worst * sigma_bound
    uniform = math.sqrt(n * math.log(2.0 * n / delta)) * worst * sigma_bound
    return cover, uniform


@dataclass(frozen=True)
class TrainOutput:
    """Everything a run produces besides the estimate itself."""

    estimate: QEstimate
    design_g_value: float
    design_support: int
    per_stage_samples: int
    n_queries_total: int
    per_stage_queries: dict


def train(
    spec: MdpSpec,
    config: TrainConfig,
    stage_seeds: Optional[dict] = None,
) -> TrainOutput:
    """Run the full pipeline: design once, then backward induction H..1.

    ``stage_seeds`` optionally overrides the stream seed of individual
    stages; because stages own independent streams, regenerating one stage
    leaves every other stage's coefficients bit-identical.
    """
    model = GenerativeModel(spec)
    fm = build_feature_map(spec, config.degree)
    problem = make_design_problem(fm, eps_prime=config.eps_prime)
    result = frank_wolfe_design(problem, config.design_max_iters, config.design_tol)
    if result.status != "ok":
        raise DesignFailure(
            f"design criterion {result.g_value:.3f} exceeds quasi-optimality bar "
            f"{2 * fm.n_features} after {result.n_iters} iterations"
        )
    result = with_counts(result, config.n_tot)
    base_points = build_dataset(result, config.n_tot)
    table = build_table(config.degree, config.kernel_grid)

    H = spec.horizon
    thetas = np.zeros((H, fm.n_features))
    diagnostics = []
    sigma_bound = 1.0 + table.lambda_hat**fm.d * (H + 1)
    theta_next = None
    for h in range(H, 0, -1):
        override = None if stage_seeds is None else stage_seeds.get(h)
        Phi, targets = build_targets(
            model, h, base_points, theta_next, table, fm, config, stage_seed=override
        )
        theta = solve_stage(Phi, targets, config.ridge)
        thetas[h - 1] = theta
        residual = Phi @ theta - targets
        cover, uniform = _max_confidence_width(
            Phi, problem.features, sigma_bound, delta=0.1, ridge=config.ridge
        )
        diagnostics.append(
            StageDiagnostics(
                stage=h,
                n_samples=Phi.shape[0],
                residual_rms=float(np.sqrt(np.mean(residual**2))),
                width_cover=cover,
                width_uniform=uniform,
            )
        )
        theta_next = theta

    estimate = QEstimate(
        env_name=spec.name,
        d_state=spec.d_state,
        d_action=spec.d_action,
        horizon=H,
        degree=config.degree,
        norm_kind=fm.index_set.norm_kind.value,
        normalization=Normalization(fm.normalization).value,
        thetas=thetas,
        diagnostics=tuple(sorted(diagnostics, key=lambda diag: diag.stage)),
        config=config.to_json_dict(),
    )
    return TrainOutput(
        estimate=estimate,
        design_g_value=result.g_value,
        design_support=int(result.support.size),
        per_stage_samples=int(base_points.shape[0]),
        n_queries_total=model.ledger.total,
        per_stage_queries=dict(sorted(model.ledger.per_stage.items())),
    )


def greedy_policy(est: QEstimate):
    """Deterministic greedy policy: action-grid argmax plus local refinement.

    The action grid has ``action_grid_M`` points per axis (from the config
    echo); ties break to the lowest index.  Each refinement round halves the
    search window around the winner (``refine_rounds`` rounds, 5 points per
    axis, clipped to the cube), so the returned action is reproducible and
    scale-invariant in theta.
    """
    config = est.config
    points_per_axis = int(config.get("action_grid_M", 33))
    rounds = int(config.get("refine_rounds", 3))
    clip_to = float(est.horizon) if config.get("clip_values", False) else None
    fm = est.feature_map
    d_a = est.d_action
    d_s = est.d_state
    tensor = NormKind(fm.index_set.norm_kind) is NormKind.LINF
    base_grid = _action_grid(d_a, points_per_axis)
    spacing = 2.0 / (points_per_axis - 1)
    offsets_unit = _action_grid(d_a, 5)  # offsets in [-1, 1] per axis

    def policy(S, h: int) -> np.ndarray:
        S = np.atleast_2d(np.asarray(S, dtype=float))
        theta = est.thetas[h - 1]
        n = S.shape[0]
        n_c = offsets_unit.shape[0]
        if tensor:
            sq = _StageQ(fm, theta, d_s)
            state_rows = sq.state_rows(S)
            q = state_rows @ (sq.theta_mat @ sq.action_rows(base_grid).T)
            if clip_to is not None:
                np.clip(q, 0.0, clip_to, out=q)
            best = base_grid[q.argmax(axis=1)]
            projected = state_rows @ sq.theta_mat  # (n, action basis)
            delta = spacing
            for _ in range(rounds):
                delta /= 2.0
                cands = np.clip(
                    best[:, None, :] + delta * offsets_unit[None, :, :], -1.0, 1.0
                )
                arows = sq.action_rows(cands.reshape(n * n_c, d_a)).reshape(n, n_c, -1)
                q = np.einsum("na,nca->nc", projected, arows)
                if clip_to is not None:
                    np.clip(q, 0.0, clip_to, out=q)
                best = cands[np.arange(n), q.argmax(axis=1)]
            return best
        _, arg = _max_q(fm, theta, S, base_grid, d_s, clip_to)
        best = base_grid[arg]
        delta = spacing
        for _ in range(rounds):
            delta /= 2.0
            cands = np.clip(
                best[:, None, :] + delta * offsets_unit[None, :, :], -1.0, 1.0
            )
            Z = np.hstack(
                [np.repeat(S, n_c, axis=0), cands.reshape(n * n_c, d_a)]
            )
            q = (feature_matrix(fm, Z) @ theta).reshape(n, n_c)
            if clip_to is not None:
                np.clip(q, 0.0, clip_to, out=q)
            best = cands[np.arange(n), q.argmax(axis=1)]
        return best

    return policy
