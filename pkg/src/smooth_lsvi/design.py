"""Quasi-optimal experimental design for least squares over a feature grid.

Given the feature vectors of an eps'-grid of the state-action cube, the
classical Wynn-Fedorov / Frank-Wolfe iteration with exact line search drives
the D-optimality criterion g = max_j ||x_j||^2_{Sigma^-1} towards its
optimum (the feature dimension m); stopping at the quasi-optimality bar 2m
keeps the support small.  The returned weights are pruned, renormalized and
capped at 4 m loglog(max(m, 16)) support points, re-running the iteration
restricted to the kept support if the cap degrades the criterion.

For any probability design g >= m (the information matrix has trace-m
whitened form), so the achieved g always lies in [m, 2m] on success.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
import scipy.linalg

from .harmonics import FeatureMap, feature_matrix

__all__ = [
    "DesignProblem",
    "DesignResult",
    "build_grid",
    "default_eps_prime",
    "make_design_problem",
    "support_cap",
    "frank_wolfe_design",
    "round_counts",
    "g_value_at",
    "design_to_json_dict",
]

GRID_CAP = 10**6
PRUNE_WEIGHT = 1e-8
_SPAN_TOL = 1e-10
_JITTER = 1e-12


@dataclass(frozen=True)
class DesignProblem:
    """Feature matrix of candidate design points (rows must span R^m)."""

    feature_map: FeatureMap
    grid_points: np.ndarray
    features: np.ndarray

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_points(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class DesignResult:
    """Design weights with their information matrix and quality certificate.

    ``status`` is "ok" when g_value <= 2 m at exit and "target_not_met"
    otherwise (callers decide whether that is fatal).  ``counts`` is filled
    by ``round_counts`` once a reference sample count is supplied.
    """

    rho: np.ndarray
    support: np.ndarray
    support_points: np.ndarray
    sigma: np.ndarray
    g_value: float
    status: str
    n_iters: int
    counts: Optional[np.ndarray] = None

    @property
    def support_weights(self) -> np.ndarray:
        return self.rho[self.support]


def build_grid(d: int, eps_prime: float) -> np.ndarray:
    """Cell-centered uniform tensor grid with spacing <= eps_prime.

    Centering keeps the points away from the periodic seam at +-1; the count
    is ceil(2/eps_prime)^d and is capped at 10^6 points.
    """
    if not (0.0 < eps_prime <= 2.0):
        raise ValueError(f"eps_prime must lie in (0, 2], got {eps_prime}")
    per_axis = math.ceil(2.0 / eps_prime)
    count = per_axis**d
    if count > GRID_CAP:
        raise ValueError(f"grid would have {count} points, exceeding cap {GRID_CAP}")
    h = 2.0 / per_axis
    axis = -1.0 + h * (np.arange(per_axis) + 0.5)
    grids = np.meshgrid(*([axis] * d), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def default_eps_prime(d: int, n_features: int) -> float:
    """Spacing giving at least 10x more grid points than features."""
    per_axis = math.ceil((10.0 * n_features) ** (1.0 / d))
    return 2.0 / per_axis


def make_design_problem(
    fm: FeatureMap, grid_points: Optional[np.ndarray] = None, eps_prime: Optional[float] = None
) -> DesignProblem:
    """Assemble and validate the candidate feature matrix for the design."""
    if grid_points is None:
        if eps_prime is None:
            eps_prime = default_eps_prime(fm.d, fm.n_features)
        grid_points = build_grid(fm.d, eps_prime)
    grid_points = np.asarray(grid_points, dtype=float)
    X = feature_matrix(fm, grid_points)
    if X.shape[0] < X.shape[1]:
        raise ValueError(f"need at least {X.shape[1]} grid points, got {X.shape[0]}")
    smin = np.linalg.svd(X, compute_uv=False)[-1]
    if smin <= _SPAN_TOL:
        raise ValueError(f"feature matrix does not span R^{X.shape[1]} (sigma_min = {smin:g})")
    return DesignProblem(feature_map=fm, grid_points=grid_points, features=X)


def support_cap(n_features: int) -> int:
    """Support bound 4 m loglog(max(m, 16)); the floor keeps loglog >= 1."""
    m = max(int(n_features), 16)
    return int(math.floor(4.0 * n_features * math.log(math.log(m))))


def _inv_psd(sigma: np.ndarray) -> np.ndarray:
    """Inverse via Cholesky, retrying once with jitter; failures surface."""
    m = sigma.shape[0]
    try:
        cho = scipy.linalg.cho_factor(sigma, lower=True)
    except scipy.linalg.LinAlgError:
        cho = scipy.linalg.cho_factor(sigma + _JITTER * np.eye(m), lower=True)
    return scipy.linalg.cho_solve(cho, np.eye(m))


def _g_scan(X: np.ndarray, inv: np.ndarray) -> np.ndarray:
    return np.einsum("ij,ij->i", X @ inv, X)


def _frank_wolfe(X: np.ndarray, max_iters: int, tol: float, refresh_every: int = 512):
    """Core iteration on a feature matrix; returns (rho, n_iters)."""
    k, m = X.shape
    _, _, piv = scipy.linalg.qr(X.T, pivoting=True)
    init = np.sort(piv[:m])
    rho = np.zeros(k)
    rho[init] = 1.0 / m
    sigma = (X[init].T @ X[init]) / m
    inv = _inv_psd(sigma)
    g = _g_scan(X, inv)
    target = 2.0 * m * (1.0 - tol)
    n_iters = 0
    for t in range(max_iters):
        j = int(np.argmax(g))
        g_max = float(g[j])
        if g_max <= target:
            break
        n_iters = t + 1
        gamma = (g_max / m - 1.0) / (g_max - 1.0)
        x = X[j]
        rho *= 1.0 - gamma
        rho[j] += gamma
        sigma = (1.0 - gamma) * sigma + gamma * np.outer(x, x)
        if (t + 1) % refresh_every == 0:
            inv = _inv_psd(sigma)
            g = _g_scan(X, inv)
        else:
            # Sherman-Morrison update of the inverse and of the g-scan
            w = inv @ x
            v = X @ w
            denom = (1.0 - gamma) + gamma * g_max
            inv = (inv - (gamma / denom) * np.outer(w, w)) / (1.0 - gamma)
            g = (g - (gamma / denom) * v**2) / (1.0 - gamma)
    return rho, n_iters


def _result_from_rho(
    X: np.ndarray, grid_points: np.ndarray, rho: np.ndarray, n_iters: int
) -> DesignResult:
    m = X.shape[1]
    support = np.flatnonzero(rho > 0)
    Xs = X[support]
    sigma = (Xs * rho[support][:, None]).T @ Xs
    g_value = float(np.max(_g_scan(X, _inv_psd(sigma))))
    status = "ok" if g_value <= 2.0 * m * (1.0 + 1e-12) else "target_not_met"
    return DesignResult(
        rho=rho,
        support=support,
        support_points=grid_points[support],
        sigma=sigma,
        g_value=g_value,
        status=status,
        n_iters=n_iters,
    )


def frank_wolfe_design(
    problem: DesignProblem, max_iters: Optional[int] = None, tol: float = 0.05
) -> DesignResult:
    """Compute a quasi-optimal design on the problem grid.

    Iterates rho <- (1-gamma) rho + gamma e_j* with j* the point of largest
    whitened norm and the exact D-optimal step gamma = (g/m - 1)/(g - 1),
    stopping at g <= 2m(1 - tol).  Ties in the argmax break to the lowest
    index.  Weights below 1e-8 are pruned; if the support still exceeds its
    cap the smallest weights are dropped and, should the criterion degrade
    above 2m, the iteration is re-run restricted to the kept support.
    """
    X = problem.features
    m = X.shape[1]
    if max_iters is None:
        max_iters = 40 * m + 2000
    rho, n_iters = _frank_wolfe(X, max_iters, tol)

    rho = np.where(rho < PRUNE_WEIGHT, 0.0, rho)
    rho /= rho.sum()
    cap = support_cap(m)
    support = np.flatnonzero(rho)
    if support.size > cap:
        order = np.argsort(rho[support])
        drop = support[order[: support.size - cap]]
        rho[drop] = 0.0
        rho /= rho.sum()
        result = _result_from_rho(X, problem.grid_points, rho, n_iters)
        if result.status != "ok":
            keep = np.flatnonzero(rho)
            sub_rho, sub_iters = _frank_wolfe(X[keep], max_iters, tol)
            sub_rho = np.where(sub_rho < PRUNE_WEIGHT, 0.0, sub_rho)
            sub_rho /= sub_rho.sum()
            rho = np.zeros_like(rho)
            rho[keep] = sub_rho
            result = _result_from_rho(X, problem.grid_points, rho, n_iters + sub_iters)
        return result
    return _result_from_rho(X, problem.grid_points, rho, n_iters)


def round_counts(result: DesignResult, n_tot: int) -> np.ndarray:
    """Per-support-point sample counts ceil(n_tot * rho_j); total <= n_tot + |support|."""
    if n_tot < 1:
        raise ValueError(f"n_tot must be >= 1, got {n_tot}")
    counts = np.ceil(n_tot * result.support_weights).astype(int)
    return counts


def with_counts(result: DesignResult, n_tot: int) -> DesignResult:
    return replace(result, counts=round_counts(result, n_tot))


def g_value_at(result: DesignResult, fm: FeatureMap, points: np.ndarray) -> float:
    """Criterion value max ||phi(z)||^2_{Sigma^-1} on an arbitrary point set.

    Used as the audit diagnostic on a finer grid than the one the design was
    computed on.
    """
    X = feature_matrix(fm, points)
    return float(np.max(_g_scan(X, _inv_psd(result.sigma))))


def design_to_json_dict(
    problem: DesignProblem,
    result: DesignResult,
    eps_prime: Optional[float],
    n_tot: Optional[int],
) -> dict:
    counts = result.counts
    if counts is None and n_tot is not None:
        counts = round_counts(result, n_tot)
    support = []
    for pos, j in enumerate(result.support):
        entry = {
            "z": problem.grid_points[j].tolist(),
            "rho": float(result.rho[j]),
        }
        if counts is not None:
            entry["count"] = int(counts[pos])
        support.append(entry)
    return {
        "d": problem.feature_map.d,
        "N": problem.feature_map.index_set.degree,
        "norm_kind": problem.feature_map.index_set.norm_kind.value,
        "eps_prime": eps_prime,
        "support": support,
        "g_value": result.g_value,
        "n_tot": n_tot,
        "status": result.status,
    }


def save_design(path, problem, result, eps_prime=None, n_tot=None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(design_to_json_dict(problem, result, eps_prime, n_tot), fh, indent=2)
