"""Sampling machinery for the signed smoothing kernel.

The averaged kernel integrates to one after normalization but takes negative
values, so it cannot be sampled directly.  It is split as
``density = beta_plus * p_plus - beta_minus * p_minus`` with ``p_plus`` and
``p_minus`` the normalized positive and negative parts.  Perturbing a query
point with draws from the two parts and reweighting by ``beta_plus`` and
``beta_minus`` yields unbiased samples of the kernel-smoothed function: the
expectation of the signed pair equals the circular convolution of the target
with the normalized kernel.

In d dimensions the kernel is the tensor product of univariate kernels; a
coordinate-wise draw from the |density| product lands in the plus or minus
class according to the product of coordinate signs, and the effective
d-dimensional weights follow in closed form from the univariate masses.

``beta_plus`` and ``beta_minus`` are computed analytically (sign-change
zeros of the kernel plus the closed-form antiderivative of its cosine
expansion); the tabulated grid is used only for inverse-CDF sampling, where
the piecewise-linear CDF resolution is far below the Monte-Carlo noise floor
of any consumer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .harmonics import (
    ResolutionError,
    cosine_poly_primitive,
    cosine_poly_zeros,
    vp_cosine_coefficients,
    vp_kernel,
)

__all__ = [
    "KernelTable",
    "SignedNoise",
    "build_table",
    "load_table",
    "wrap",
    "sample_part",
    "sample_pair_d",
    "sample_pairs",
    "beta_pair",
    "draw_signed_noise",
    "convolution_samples",
    "convolution_estimate",
    "convolution_estimate_importance",
]

DEFAULT_GRID_SIZE = 4096
_MIN_PART_MASS = 1e-12


def wrap(z):
    """Map each coordinate into [-1, 1) by adding or subtracting 2; idempotent."""
    z = np.asarray(z, dtype=float)
    out = (z + 1.0) % 2.0 - 1.0
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class SignedNoise:
    """One perturbation draw with its sign class.

    ``weight_plus_pair`` records whether the draw plays the positive-part
    role (reweighted by beta_plus) or the negative-part role (beta_minus).
    """

    eta: np.ndarray
    sign: int
    weight_plus_pair: bool


@dataclass(frozen=True)
class KernelTable:
    """Tabulated univariate signed kernel with its decomposition constants.

    ``density`` holds the normalized kernel values vp_kernel(N, x)/2 on a
    uniform grid of G points, ``abs_cdf`` the normalized cumulative |density|
    at the grid nodes.  ``beta_plus - beta_minus = 1`` (unit total mass) and
    ``lambda_hat = beta_plus + beta_minus`` equals the kernel's L1 norm.
    """

    N: int
    G: int
    grid: np.ndarray
    density: np.ndarray
    abs_cdf: np.ndarray
    beta_plus: float
    beta_minus: float
    lambda_hat: float = field(default=0.0)

    # Derived sampling tables (cell masses split by the sign of the density).

    @cached_property
    def _cells(self):
        h = self.grid[1] - self.grid[0]
        d0, d1 = self.density[:-1], self.density[1:]
        mass = 0.5 * (np.abs(d0) + np.abs(d1)) * h
        sign = np.where(d0 + d1 >= 0.0, 1, -1)
        return mass, sign

    def _part_sampler(self, positive: bool):
        mass, sign = self._cells
        keep = sign > 0 if positive else sign < 0
        part_mass = np.where(keep, mass, 0.0)
        total = part_mass.sum()
        cdf = np.concatenate(([0.0], np.cumsum(part_mass))) / total
        cdf[-1] = 1.0
        return cdf

    @cached_property
    def _plus_cdf(self):
        return self._part_sampler(True)

    @cached_property
    def _minus_cdf(self):
        return self._part_sampler(False)

    @cached_property
    def _abs_cell_cdf(self):
        mass, _ = self._cells
        cdf = np.concatenate(([0.0], np.cumsum(mass)))
        cdf /= cdf[-1]
        cdf[-1] = 1.0
        return cdf

    def to_json_dict(self) -> dict:
        return {
            "N": self.N,
            "G": self.G,
            "beta_plus": self.beta_plus,
            "beta_minus": self.beta_minus,
            "lambda_hat": self.lambda_hat,
            "density": self.density.tolist(),
            "abs_cdf": self.abs_cdf.tolist(),
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh)


def _signed_masses(N: int) -> tuple[float, float]:
    """Exact positive/negative masses of the normalized kernel.

    Sums the closed-form antiderivative between consecutive sign-change
    zeros, so beta_plus - beta_minus telescopes to exactly one.
    """
    coeffs = vp_cosine_coefficients(N) / 2.0
    zeros = cosine_poly_zeros(coeffs, n_scan=max(8192, 64 * N))
    boundaries = np.concatenate(([-1.0], zeros, [1.0]))
    primitive = cosine_poly_primitive(coeffs, boundaries)
    segments = np.diff(primitive)
    beta_plus = float(segments[segments > 0].sum())
    beta_minus = float(-segments[segments < 0].sum())
    return beta_plus, beta_minus


def build_table(N: int, G: int = DEFAULT_GRID_SIZE) -> KernelTable:
    """Tabulate the normalized kernel of order N on a G-point uniform grid."""
    N = int(N)
    if N < 2 or N % 2 != 0:
        raise ValueError(f"kernel order must be an even integer >= 2, got {N}")
    G = int(G)
    if G < 64 * N:
        raise ResolutionError(f"grid size {G} cannot resolve order {N}; need G >= {64 * N}")
    grid = np.linspace(-1.0, 1.0, G)
    density = vp_kernel(N, grid) / 2.0
    h = grid[1] - grid[0]
    cell_mass = 0.5 * (np.abs(density[:-1]) + np.abs(density[1:])) * h
    abs_cdf = np.concatenate(([0.0], np.cumsum(cell_mass)))
    abs_cdf /= abs_cdf[-1]
    abs_cdf[-1] = 1.0
    beta_plus, beta_minus = _signed_masses(N)
    for arr in (grid, density, abs_cdf):
        arr.flags.writeable = False
    return KernelTable(
        N=N,
        G=G,
        grid=grid,
        density=density,
        abs_cdf=abs_cdf,
        beta_plus=beta_plus,
        beta_minus=beta_minus,
        lambda_hat=beta_plus + beta_minus,
    )


def validate_table(table: KernelTable) -> None:
    """Check the decomposition invariants; raises ValueError on violation."""
    if not table.beta_plus >= 0.0 or not table.beta_minus >= 0.0:
        raise ValueError("part masses must be non-negative")
    if abs(table.beta_plus - table.beta_minus - 1.0) > 1e-6:
        raise ValueError(
            f"normalized kernel mass is {table.beta_plus - table.beta_minus}, expected 1"
        )
    if abs(table.lambda_hat - (table.beta_plus + table.beta_minus)) > 1e-6:
        raise ValueError("lambda_hat must equal beta_plus + beta_minus")
    if np.any(np.diff(table.abs_cdf) < -1e-15) or abs(table.abs_cdf[-1] - 1.0) > 1e-12:
        raise ValueError("abs_cdf must be non-decreasing and end at 1")
    if len(table.density) != table.G or len(table.abs_cdf) != table.G:
        raise ValueError("density/abs_cdf length must equal G")


def load_table(path) -> KernelTable:
    """Load a kernel table from JSON, validating its invariants."""
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    G = int(payload["G"])
    grid = np.linspace(-1.0, 1.0, G)
    density = np.asarray(payload["density"], dtype=float)
    abs_cdf_nodes = np.asarray(payload["abs_cdf"], dtype=float)
    table = KernelTable(
        N=int(payload["N"]),
        G=G,
        grid=grid,
        density=density,
        abs_cdf=abs_cdf_nodes,
        beta_plus=float(payload["beta_plus"]),
        beta_minus=float(payload["beta_minus"]),
        lambda_hat=float(payload["lambda_hat"]),
    )
    validate_table(table)
    return table


def _inverse_cdf(table: KernelTable, cdf: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Positions for uniforms ``u`` under a per-cell CDF (linear within cells)."""
    cells = np.clip(np.searchsorted(cdf, u, side="right") - 1, 0, table.G - 2)
    lo, hi = cdf[cells], cdf[cells + 1]
    frac = np.where(hi > lo, (u - lo) / np.maximum(hi - lo, 1e-300), 0.0)
    h = table.grid[1] - table.grid[0]
    return table.grid[cells] + frac * h


def sample_part(table: KernelTable, part: str, rng: np.random.Generator, size=None):
    """Inverse-CDF draw(s) from the normalized positive or negative kernel part."""
    if part not in ("plus", "minus"):
        raise ValueError(f"part must be 'plus' or 'minus', got {part!r}")
    beta = table.beta_plus if part == "plus" else table.beta_minus
    if beta < _MIN_PART_MASS:
        raise ValueError(f"requested {part} part has mass {beta:g} < {_MIN_PART_MASS:g}")
    cdf = table._plus_cdf if part == "plus" else table._minus_cdf
    u = rng.random() if size is None else rng.random(size)
    out = _inverse_cdf(table, cdf, np.atleast_1d(u))
    return float(out[0]) if size is None else out


def _joint_abs_draw(table: KernelTable, d: int, rng: np.random.Generator, n: int):
    """n coordinate-wise draws from |density|^(x)d with their sign classes."""
    u = rng.random((n, d))
    cells = np.clip(np.searchsorted(table._abs_cell_cdf, u, side="right") - 1, 0, table.G - 2)
    lo = table._abs_cell_cdf[cells]
    hi = table._abs_cell_cdf[cells + 1]
    frac = np.where(hi > lo, (u - lo) / np.maximum(hi - lo, 1e-300), 0.0)
    h = table.grid[1] - table.grid[0]
    pts = table.grid[cells] + frac * h
    _, cell_sign = table._cells
    signs = cell_sign[cells].prod(axis=1)
    return pts, signs


def beta_pair(table: KernelTable, d: int) -> tuple[float, float]:
    """Effective d-dimensional decomposition weights for the product kernel.

    With lam = beta_plus + beta_minus, the positive and negative masses of
    the d-fold product are (lam^d + 1)/2 and (lam^d - 1)/2: their difference
    is the unit total mass and their sum is the product of the |mass| per
    coordinate.
    """
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    lam_d = table.lambda_hat**d
    return (lam_d + 1.0) / 2.0, (lam_d - 1.0) / 2.0


def sample_pair_d(table: KernelTable, d: int, rng: np.random.Generator):
    """One positive-class and one negative-class perturbation in d dimensions.

    For d = 1 this is exactly one draw from each normalized part.  For
    d >= 2, coordinate-wise draws from the |density| product are assigned to
    the plus or minus class by the product of coordinate signs, drawing until
    one sample of each class is obtained.
    """
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    if d == 1:
        eta_plus = np.array([sample_part(table, "plus", rng)])
        eta_minus = np.array([sample_part(table, "minus", rng)])
        return eta_plus, eta_minus
    eta_plus = None
    eta_minus = None
    while eta_plus is None or eta_minus is None:
        pts, signs = _joint_abs_draw(table, d, rng, 8)
        for i in range(len(signs)):
            if signs[i] > 0:
                if eta_plus is None:
                    eta_plus = pts[i]
            elif eta_minus is None:
                eta_minus = pts[i]
    return eta_plus, eta_minus


def sample_pairs(table: KernelTable, d: int, n_pairs: int, rng: np.random.Generator):
    """Vectorized ``sample_pair_d``: arrays of shape (n_pairs, d) per class."""
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    if d == 1:
        plus = sample_part(table, "plus", rng, size=n_pairs).reshape(-1, 1)
        minus = sample_part(table, "minus", rng, size=n_pairs).reshape(-1, 1)
        return plus, minus
    plus_pool = []
    minus_pool = []
    n_plus = n_minus = 0
    while n_plus < n_pairs or n_minus < n_pairs:
        batch = max(1024, 2 * (n_pairs - min(n_plus, n_minus)))
        pts, signs = _joint_abs_draw(table, d, rng, batch)
        pos = signs > 0
        plus_pool.append(pts[pos])
        minus_pool.append(pts[~pos])
        n_plus += int(pos.sum())
        n_minus += int(batch - pos.sum())
    plus = np.concatenate(plus_pool)[:n_pairs]
    minus = np.concatenate(minus_pool)[:n_pairs]
    return plus, minus


def draw_signed_noise(table: KernelTable, d: int, rng: np.random.Generator) -> SignedNoise:
    """Single signed-importance draw from the joint |density| product.

    Statistically equivalent in mean to the paired scheme when the value is
    reweighted by sign * lambda_hat^d instead of the beta pair.
    """
    pts, signs = _joint_abs_draw(table, d, rng, 1)
    sign = int(signs[0])
    return SignedNoise(eta=pts[0], sign=sign, weight_plus_pair=sign > 0)


def convolution_samples(f_sampler, z, table: KernelTable, d: int, n_pairs: int, rng):
    """Per-pair signed estimator values whose mean targets the smoothed f at z.

    ``f_sampler(points, rng)`` must return unbiased samples of f at the given
    (n, d) points.  Each value is beta_plus^d * f(wrap(z + eta_plus)) -
    beta_minus^d * f(wrap(z + eta_minus)); a function bounded by B gives
    values bounded by lambda_hat^d * B.
    """
    z = np.asarray(z, dtype=float).reshape(1, -1)
    if z.shape[1] != d:
        raise ValueError(f"point has dimension {z.shape[1]}, expected {d}")
    bp, bm = beta_pair(table, d)
    plus, minus = sample_pairs(table, d, n_pairs, rng)
    y_plus = np.asarray(f_sampler(wrap(z + plus), rng), dtype=float)
    y_minus = np.asarray(f_sampler(wrap(z + minus), rng), dtype=float)
    return bp * y_plus - bm * y_minus


def convolution_estimate(f_sampler, z, table: KernelTable, d: int, n_pairs: int, rng) -> float:
    """Mean of the signed pair estimator; expectation is the smoothed f at z."""
    return float(convolution_samples(f_sampler, z, table, d, n_pairs, rng).mean())


def convolution_estimate_importance(
    f_sampler, z, table: KernelTable, d: int, n_draws: int, rng
) -> float:
    """Single-signed-draw variant of ``convolution_estimate`` (same mean)."""
    z = np.asarray(z, dtype=float).reshape(1, -1)
    if z.shape[1] != d:
        raise ValueError(f"point has dimension {z.shape[1]}, expected {d}")
    lam_d = table.lambda_hat**d
    pts, signs = _joint_abs_draw(table, d, rng, n_draws)
    values = np.asarray(f_sampler(wrap(z + pts), rng), dtype=float)
    return float((signs * lam_d * values).mean())
