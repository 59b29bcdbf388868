"""Self-check suite for the kernel and its sampler, used by the check command.

Each check compares an implementation path against an independent route
(quadrature, closed-form identities, or empirical CDFs) at a fixed
tolerance.  The report is machine-readable; the suite passes only if every
check passes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import harmonics as ha
from . import kernel_sampler as ks
from .rng import stream

__all__ = ["CheckItem", "run_kernel_check"]


@dataclass(frozen=True)
class CheckItem:
    name: str
    passed: bool
    value: float
    tol: float

    def to_json_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "value": self.value, "tol": self.tol}


def _ks_distance(draws: np.ndarray, grid: np.ndarray, cdf: np.ndarray) -> float:
    """One-sample KS distance against a piecewise-linear tabulated CDF."""
    x = np.sort(draws)
    f = np.interp(x, grid, cdf)
    n = len(x)
    upper = np.max(np.arange(1, n + 1) / n - f)
    lower = np.max(f - np.arange(0, n) / n)
    return float(max(upper, lower))


def run_kernel_check(N: int, G: int = 4096, n_draws: int = 10**5, seed: int = 0) -> dict:
    """Run the kernel/sampler invariant suite; returns a JSON-ready report."""
    table = ks.build_table(N, G)
    checks = []

    checks.append(
        CheckItem(
            name="unit_mass",
            passed=abs(table.beta_plus - table.beta_minus - 1.0) <= 1e-6,
            value=table.beta_plus - table.beta_minus,
            tol=1e-6,
        )
    )

    l1_quad = ha.kernel_l1_norm(N)
    checks.append(
        CheckItem(
            name="l1_norm_match",
            passed=abs(table.lambda_hat - l1_quad) <= 1e-6,
            value=abs(table.lambda_hat - l1_quad),
            tol=1e-6,
        )
    )

    checks.append(
        CheckItem(
            name="abs_cdf_final",
            passed=bool(table.abs_cdf[-1] == 1.0),
            value=float(table.abs_cdf[-1]),
            tol=0.0,
        )
    )

    # reproduction of random polynomials of degree <= N/2 under convolution
    quad = ha.trapezoid_quadrature(1)
    kernel1d = lambda x: ha.vp_kernel(N, x)
    grid201 = np.linspace(-1.0, 1.0, 201)
    rng = stream(seed, "kernel_check", "repro")
    worst_repro = 0.0
    fm_half = ha.FeatureMap(
        ha.enumerate_indices(1, N // 2, ha.NormKind.LINF), ha.Normalization.RAW
    )
    for _ in range(5):
        theta = rng.uniform(-1.0, 1.0, fm_half.n_features)
        f = lambda Z: ha.feature_matrix(fm_half, Z) @ theta
        vals = ha.convolve_on_grid(f, kernel1d, quad, [grid201])
        ref = f(grid201.reshape(-1, 1))
        worst_repro = max(worst_repro, float(np.max(np.abs(vals - ref))))
    checks.append(
        CheckItem(name="polynomial_reproduction", passed=worst_repro <= 1e-6, value=worst_repro, tol=1e-6)
    )

    # coefficients beyond degree N vanish after convolution
    rng = stream(seed, "kernel_check", "proj")
    worst_proj = 0.0
    fm_wide = ha.FeatureMap(
        ha.enumerate_indices(1, 2 * N, ha.NormKind.LINF), ha.Normalization.RAW
    )
    for _ in range(3):
        theta = rng.uniform(-1.0, 1.0, fm_wide.n_features)
        f = lambda Z: ha.feature_matrix(fm_wide, Z) @ theta
        conv = ha.circular_convolve(f, ha.separable_kernel(kernel1d), quad)
        for idx in (N + 1, -(N + 1), N + 2):
            worst_proj = max(worst_proj, abs(ha.fourier_coefficient(conv, idx, quad)))
    checks.append(
        CheckItem(name="projection_degree", passed=worst_proj <= 1e-8, value=worst_proj, tol=1e-8)
    )

    # sampler fidelity against the tabulated part CDFs; the 0.01 bar applies
    # at the reference scale of 1e5 draws and widens for smaller samples
    ks_tol = max(0.01, 1.95 / np.sqrt(n_draws))
    ks_values = {}
    for part in ("plus", "minus"):
        draws = ks.sample_part(table, part, stream(seed, "kernel_check", part), size=n_draws)
        cdf = table._plus_cdf if part == "plus" else table._minus_cdf
        ks_values[part] = _ks_distance(draws, table.grid, cdf)
        checks.append(
            CheckItem(
                name=f"ks_{part}", passed=ks_values[part] <= ks_tol, value=ks_values[part], tol=ks_tol
            )
        )

    # closed-form product weights
    worst_pair = 0.0
    for d in (1, 2, 3):
        bp, bm = ks.beta_pair(table, d)
        worst_pair = max(
            worst_pair, abs(bp - bm - 1.0), abs(bp + bm - table.lambda_hat**d)
        )
    checks.append(
        CheckItem(name="pair_weight_identity", passed=worst_pair <= 1e-9, value=worst_pair, tol=1e-9)
    )

    return {
        "N": table.N,
        "G": table.G,
        "beta_plus": table.beta_plus,
        "beta_minus": table.beta_minus,
        "lambda_hat": table.lambda_hat,
        "l1_norm": l1_quad,
        "ks_plus": ks_values["plus"],
        "ks_minus": ks_values["minus"],
        "reproduction_error": worst_repro,
        "projection_error": worst_proj,
        "checks": [c.to_json_dict() for c in checks],
        "passed": all(c.passed for c in checks),
    }
