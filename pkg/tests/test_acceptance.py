"""Acceptance gate: one test per shipped criterion, at its stated tolerance.

Run with ``pytest tests/test_acceptance.py -v -s`` to see one pass/fail line
per criterion.  Every tolerance is pinned here; nothing is deferred to
later calibration.
"""

import json
import os
import subprocess
import sys

import numpy as np
import pytest

from smooth_lsvi import cli
from smooth_lsvi import design as dg
from smooth_lsvi import env as ev
from smooth_lsvi import harmonics as ha
from smooth_lsvi import kernel_sampler as ks
from smooth_lsvi import lsvi as lv
from smooth_lsvi.rng import stream

from conftest import random_trig_poly


def _report(criterion: str, passed: bool, detail: str) -> None:
    print(f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}")
    assert passed, f"{criterion}: {detail}"


def test_criterion_01_kernel_reproduction(quad1, quad2):
    rng = stream("acceptance", 1)
    worst = 0.0
    cases = [(1, 4, 7, quad1), (1, 8, 7, quad1), (2, 4, 6, quad2)]
    for d, N, n_polys, quad in cases:
        axes = [np.linspace(-1, 1, 201)] * d
        pts = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
        for _ in range(n_polys):
            f, _, _ = random_trig_poly(rng, d, N // 2)
            vals = ha.convolve_on_grid(f, lambda x: ha.vp_kernel(N, x), quad, axes)
            worst = max(worst, float(np.max(np.abs(vals.ravel() - f(pts)))))
    _report(
        "criterion 1 (kernel reproduction)",
        worst <= 1e-6,
        f"sup error over 20 polynomials = {worst:.3e} (tol 1e-6)",
    )


def test_criterion_02_projection_degree(quad1):
    rng = stream("acceptance", 2)
    N = 4
    kernel = ha.separable_kernel(lambda x: ha.vp_kernel(N, x))
    worst = 0.0
    ns = np.arange(1, 3 * N + 1)
    for _ in range(10):
        coefs = rng.uniform(-1, 1, len(ns)) / (1.0 + ns)
        f = lambda Z: (
            np.cos(np.pi * np.outer(Z[:, 0], ns)) @ coefs
            + np.sin(np.pi * np.outer(Z[:, 0], ns)) @ coefs[::-1]
        )
        conv = ha.circular_convolve(f, kernel, quad1)
        for idx in (N + 1, -(N + 1), N + 3, 2 * N):
            worst = max(worst, abs(ha.fourier_coefficient(conv, idx, quad1)))
    _report(
        "criterion 2 (projection degree)",
        worst <= 1e-8,
        f"largest coefficient beyond degree {N} = {worst:.3e} (tol 1e-8)",
    )


def test_criterion_03_l1_boundedness():
    orders = (8, 16, 32, 64)
    vp = {N: ha.kernel_l1_norm(N) for N in orders}
    spread = max(vp.values()) / min(vp.values()) - 1.0
    dir_growth = ha.dirichlet_l1_norm(64) / ha.dirichlet_l1_norm(8) - 1.0
    passed = spread < 0.10 and dir_growth > 0.25
    _report(
        "criterion 3 (L1 boundedness)",
        passed,
        f"averaged-kernel spread = {spread:.1%} (< 10%), Dirichlet growth = {dir_growth:.1%} (> 25%)",
    )


def test_criterion_04_approximation_rate(quad1):
    grid = np.linspace(-1, 1, 2001)
    ns = np.arange(1, 65)
    orders = np.array([4, 8, 16, 32])
    slopes = {}
    for nu in (0, 1, 2):
        coef = ns.astype(float) ** (-(nu + 2.0))
        f = lambda Z: np.cos(np.pi * np.outer(Z[:, 0], ns)) @ coef
        fg = f(grid.reshape(-1, 1))
        errs = [
            float(
                np.max(
                    np.abs(
                        ha.convolve_on_grid(f, lambda x: ha.vp_kernel(N, x), quad1, [grid])
                        - fg
                    )
                )
            )
            for N in orders
        ]
        slopes[nu] = float(np.polyfit(np.log(orders), np.log(errs), 1)[0])
    passed = all(slopes[nu] <= -(nu + 0.7) for nu in slopes)
    _report(
        "criterion 4 (approximation rate)",
        passed,
        ", ".join(f"nu={nu}: slope {s:.2f} <= {-(nu + 0.7)}" for nu, s in slopes.items()),
    )


def test_criterion_05_design_quality():
    details = []
    passed = True
    for d in (1, 2):
        for N in (2, 4, 8):
            fm = ha.FeatureMap(ha.enumerate_indices(d, N, ha.NormKind.LINF))
            problem = dg.make_design_problem(fm)
            result = dg.frank_wolfe_design(problem)
            m = fm.n_features
            cap = dg.support_cap(m)
            ok = (
                result.status == "ok"
                and m - 1e-6 <= result.g_value <= 2 * m
                and result.support.size <= cap
            )
            passed = passed and ok
            details.append(f"d={d},N={N}: g={result.g_value:.1f}/[{m},{2*m}] supp={result.support.size}<={cap}")
    _report("criterion 5 (design quality)", passed, "; ".join(details))


def test_criterion_06_unbiased_targets(quad1, quad2):
    rng = stream("acceptance", 6)
    table = ks.build_table(4)
    kernel = ha.separable_kernel(lambda x: ha.vp_kernel(4, x))
    worst_z = 0.0
    for d, quad, n_inst in ((1, quad1, 10), (2, quad2, 10)):
        for i in range(n_inst):
            f, _, _ = random_trig_poly(rng, d, 6)
            z = rng.uniform(-1, 1, d)
            truth = ha.circular_convolve(f, kernel, quad)(z)
            vals = ks.convolution_samples(
                lambda Z, _rng: f(Z), z, table, d, 10**4, stream("acceptance", 6, d, i)
            )
            se = vals.std() / np.sqrt(len(vals))
            worst_z = max(worst_z, abs(vals.mean() - truth) / se)
    _report(
        "criterion 6 (unbiased perturbed targets)",
        worst_z <= 3.0,
        f"worst |z|-score over 20 instances = {worst_z:.2f} (limit 3)",
    )


def test_criterion_07_sample_accounting():
    spec = ev.make_smooth_chain(3)
    out = lv.train(spec, lv.TrainConfig(degree=2, n_tot=500, seed=0))
    exact = out.n_queries_total == 2 * out.per_stage_samples * spec.horizon
    bounded = out.per_stage_samples <= 500 + out.design_support
    _report(
        "criterion 7 (sample accounting)",
        exact and bounded,
        f"ledger={out.n_queries_total} = 2*{out.per_stage_samples}*{spec.horizon}, "
        f"per-stage {out.per_stage_samples} <= 500 + {out.design_support}",
    )


def test_criterion_08_bandit_end_to_end():
    spec = ev.make_trig_bandit()
    hits = 0
    actions = []
    for seed in range(10):
        out = lv.train(spec, lv.TrainConfig(degree=2, n_tot=2000, seed=seed))
        action = float(lv.greedy_policy(out.estimate)(np.zeros((1, 1)), 1)[0, 0])
        actions.append(action)
        hits += abs(action - 0.5) <= 0.1
    _report(
        "criterion 8 (bandit end-to-end)",
        hits >= 9,
        f"{hits}/10 seeds within 0.1 of 0.5 (actions {np.round(actions, 3).tolist()})",
    )


def test_criterion_09_chain_end_to_end():
    spec = ev.make_smooth_chain(3)
    oracle = ev.grid_dp_oracle(spec, grid_M=201, mc_per_cell=128, seed=0)
    target = oracle.value_at(spec.start_state)
    hits = 0
    gaps = []
    for seed in range(10):
        out = lv.train(spec, lv.TrainConfig(degree=4, n_tot=10**4, seed=seed))
        policy = lv.greedy_policy(out.estimate)
        value, _ = ev.rollout_value(spec, policy, 4000, stream("acceptance", 9, seed))
        gap = target - value
        gaps.append(gap)
        hits += gap <= 0.2
    _report(
        "criterion 9 (multi-stage end-to-end)",
        hits >= 8,
        f"{hits}/10 seeds within 0.2 of oracle {target:.3f} (gaps {np.round(gaps, 3).tolist()})",
    )


def test_criterion_10_regression_coverage():
    rng = stream("acceptance", 10)
    fm = ha.FeatureMap(ha.enumerate_indices(1, 3, ha.NormKind.LINF))
    problem = dg.make_design_problem(fm)
    result = dg.with_counts(dg.frank_wolfe_design(problem), 300)
    Phi = np.repeat(problem.features[result.support], result.counts, axis=0)
    sigma, delta = 0.5, 0.1
    k = problem.n_points
    inv = np.linalg.inv(Phi.T @ Phi)
    norms = np.sqrt(np.einsum("ij,ij->i", problem.features @ inv, problem.features))
    bound = np.sqrt(np.log(2 * k / delta)) * float(np.max(norms)) * sigma
    violations = 0
    trials = 200
    for _ in range(trials):
        theta_star = rng.normal(size=fm.n_features)
        y = Phi @ theta_star + rng.uniform(-sigma, sigma, len(Phi))
        theta = lv.solve_stage(Phi, y, ridge=0.0)
        err = float(np.max(np.abs(problem.features @ (theta - theta_star))))
        violations += err > bound
    frac = violations / trials
    _report(
        "criterion 10 (regression coverage)",
        frac <= delta + 0.05,
        f"bound violated in {frac:.3f} of {trials} trials (allowed <= {delta + 0.05})",
    )


def test_criterion_11_determinism(tmp_path):
    args = [
        "train",
        "--env",
        "trig_bandit",
        "--n-tot",
        "500",
        "--seed",
        "42",
        "--episodes",
        "200",
    ]
    paths = [tmp_path / name for name in ("a.json", "b.json", "c.json")]
    assert cli.main(args + ["--out", str(paths[0])]) == 0
    assert cli.main(args + ["--out", str(paths[1])]) == 0
    same_process = paths[0].read_bytes() == paths[1].read_bytes()

    # thread-count insensitivity, exercised through the real process boundary
    thread_bytes = []
    for threads in ("1", "8"):
        envvars = dict(os.environ, SMOOTH_LSVI_THREADS=threads)
        out = tmp_path / f"t{threads}.json"
        proc = subprocess.run(
            [sys.executable, "-m", "smooth_lsvi.cli"] + args + ["--out", str(out)],
            capture_output=True,
            env=envvars,
        )
        assert proc.returncode == 0, proc.stderr.decode()
        thread_bytes.append(out.read_bytes())
    across_threads = thread_bytes[0] == thread_bytes[1] == paths[0].read_bytes()
    _report(
        "criterion 11 (determinism)",
        same_process and across_threads,
        f"byte-identical across runs={same_process}, across thread counts={across_threads}",
    )
