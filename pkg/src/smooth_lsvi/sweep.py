"""Sample-complexity sweeps: smallest sample budget meeting a gap target.

For each accuracy target the feature degree is set by the degree-selection
rule and the per-stage budget is doubled geometrically until the measured
value gap (DP-oracle value minus greedy-policy rollout) meets the target on
the required fraction of seeds.  Runs are cached by (degree, budget, seed)
so overlapping ladders across targets are computed once; rows are emitted in
deterministic order (descending target) regardless of worker completion
order.

The worker pool size is taken from the SMOOTH_LSVI_THREADS environment
variable unless given explicitly; each run owns its seed-keyed streams, so
the thread count never changes any result.
"""

from __future__ import annotations

import csv
import io
import math
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .env import MdpSpec, grid_dp_oracle, rollout_value
from .lsvi import TrainConfig, choose_degree, greedy_policy, train
from .rng import stream

__all__ = ["SweepSettings", "SweepRow", "run_sweep", "rows_to_csv", "rows_from_csv"]

CSV_COLUMNS = [
    "epsilon",
    "nu",
    "N",
    "n_queries",
    "gap_median",
    "seeds_passed",
    "wall_time_s",
    "status",
]


@dataclass(frozen=True)
class SweepSettings:
    epsilons: tuple
    seeds: tuple
    nu: float = 1.0
    degree_c: float = 1.0
    n_start: int = 250
    cap: int = 64000
    pass_fraction: float = 0.8
    episodes: int = 2000
    oracle_grid: int = 201
    oracle_mc: int = 64
    eps_prime: Optional[float] = None
    action_grid_M: int = 33
    threads: Optional[int] = None
    extra_config: dict = field(default_factory=dict)

    def n_threads(self) -> int:
        if self.threads is not None:
            return max(1, self.threads)
        env = os.environ.get("SMOOTH_LSVI_THREADS", "")
        try:
            return max(1, int(env))
        except ValueError:
            return 1


@dataclass(frozen=True)
class SweepRow:
    epsilon: float
    nu: float
    N: int
    n_queries: int
    gap_median: float
    seeds_passed: int
    wall_time_s: float
    status: str

    def as_record(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "nu": self.nu,
            "N": self.N,
            "n_queries": self.n_queries,
            "gap_median": self.gap_median,
            "seeds_passed": self.seeds_passed,
            "wall_time_s": self.wall_time_s,
            "status": self.status,
        }


class _RunCache:
    """Thread-safe memo of (degree, n_tot, seed) -> (gap, n_queries)."""

    def __init__(self, spec: MdpSpec, settings: SweepSettings, oracle_value: float):
        self.spec = spec
        self.settings = settings
        self.oracle_value = oracle_value
        self._lock = threading.Lock()
        self._memo: dict = {}

    def gap(self, degree: int, n_tot: int, seed: int):
        key = (degree, n_tot, seed)
        with self._lock:
            if key in self._memo:
                return self._memo[key]
        s = self.settings
        config = TrainConfig(
            degree=degree,
            n_tot=n_tot,
            nu=s.nu,
            eps_prime=s.eps_prime,
            action_grid_M=s.action_grid_M,
            seed=seed,
            **s.extra_config,
        )
        out = train(self.spec, config)
        policy = greedy_policy(out.estimate)
        value, _ = rollout_value(
            self.spec, policy, s.episodes, stream(seed, "sweep_rollout", degree, n_tot)
        )
        entry = (self.oracle_value - value, out.n_queries_total)
        with self._lock:
            self._memo[key] = entry
        return entry


def run_sweep(spec: MdpSpec, settings: SweepSettings) -> list:
    """Run the doubling search for every accuracy target; returns SweepRows."""
    if len(settings.epsilons) < 2:
        raise ValueError("a sweep needs at least 2 epsilon values")
    oracle = grid_dp_oracle(spec, settings.oracle_grid, settings.oracle_mc, seed=0)
    oracle_value = oracle.value_at(spec.start_state)
    cache = _RunCache(spec, settings, oracle_value)
    seeds = tuple(settings.seeds)
    need = math.ceil(settings.pass_fraction * len(seeds))
    pool = ThreadPoolExecutor(max_workers=settings.n_threads())

    rows = []
    try:
        for eps in sorted(settings.epsilons, reverse=True):
            t0 = time.monotonic()
            degree = choose_degree(eps, settings.nu, settings.degree_c)
            n_tot = settings.n_start
            status = "cap_exceeded"
            gaps: list = []
            n_queries = 0
            while n_tot <= settings.cap:
                results = list(
                    pool.map(lambda sd: cache.gap(degree, n_tot, sd), seeds)
                )
                gaps = [g for g, _ in results]
                n_queries = results[0][1]
                passed = sum(1 for g in gaps if g <= eps)
                if passed >= need:
                    status = "ok"
                    break
                n_tot *= 2
            rows.append(
                SweepRow(
                    epsilon=float(eps),
                    nu=float(settings.nu),
                    N=int(degree),
                    n_queries=int(n_queries),
                    gap_median=float(np.median(gaps)),
                    seeds_passed=int(sum(1 for g in gaps if g <= eps)),
                    wall_time_s=time.monotonic() - t0,
                    status=status,
                )
            )
    finally:
        pool.shutdown(wait=False)
    return rows


def rows_to_csv(rows) -> str:
    """Serialize sweep rows as RFC-4180 CSV (header + CRLF line endings)."""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\r\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row.as_record())
    return buf.getvalue()


def rows_from_csv(text: str) -> list:
    """Parse sweep CSV back into SweepRows (lossless for the numeric columns)."""
    reader = csv.DictReader(io.StringIO(text))
    rows = []
    for rec in reader:
        rows.append(
            SweepRow(
                epsilon=float(rec["epsilon"]),
                nu=float(rec["nu"]),
                N=int(rec["N"]),
                n_queries=int(rec["n_queries"]),
                gap_median=float(rec["gap_median"]),
                seeds_passed=int(rec["seeds_passed"]),
                wall_time_s=float(rec["wall_time_s"]),
                status=rec["status"],
            )
        )
    return rows
