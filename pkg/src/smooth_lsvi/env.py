"""Generative-model MDPs on the periodic cube, rollouts, and a DP oracle.

The benchmark environments are built from low-degree trigonometric
ingredients so that ground truth is computable: rewards are deterministic
trig polynomials with range inside [0, 1] and transitions wrap additive
drift plus smooth bounded noise back into the state cube.  A generative
model wraps an environment with a query ledger so sample-complexity
accounting is exact.

The grid DP oracle does brute-force backward value iteration on a uniform
state/action grid with Monte-Carlo transition expectations; it is the
independent ground truth the learned policies are compared against on desk
scale instances.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Optional

import numpy as np

from .kernel_sampler import wrap
from .rng import stream

__all__ = [
    "MdpSpec",
    "QueryLedger",
    "GenerativeModel",
    "make_trig_bandit",
    "make_smooth_chain",
    "with_reward_noise",
    "get_env",
    "rollout_value",
    "DpOracle",
    "grid_dp_oracle",
]

DOMAIN_TOL = 1e-9


@dataclass(frozen=True)
class MdpSpec:
    """Finite-horizon MDP on [-1,1]^{d_state} x [-1,1]^{d_action}.

    ``reward(S, A, h)`` is deterministic and vectorized over (n, d) point
    arrays; ``step(S, A, h, rng)`` draws next states (already wrapped into
    the cube).  ``transition_mean`` documents the closed-form next-state
    mean where no wrapping occurs, for use as a test oracle.
    """

    name: str
    d_state: int
    d_action: int
    horizon: int
    params: dict
    reward: Callable
    step: Callable
    transition_mean: Optional[Callable] = None
    start_state: np.ndarray = field(default_factory=lambda: np.zeros(1))
    reward_noise_half_width: float = 0.0

    @property
    def d(self) -> int:
        return self.d_state + self.d_action


class QueryLedger:
    """Monotone counters of generative-model queries, total and per stage."""

    def __init__(self):
        self._lock = threading.Lock()
        self.total = 0
        self.per_stage: dict[int, int] = {}

    def record(self, h: int, n: int = 1) -> None:
        with self._lock:
            self.total += n
            self.per_stage[h] = self.per_stage.get(h, 0) + n


def _check_stage(spec: MdpSpec, h: int) -> None:
    if not 1 <= h <= spec.horizon:
        raise ValueError(f"stage {h} out of range 1..{spec.horizon}")


def _check_domain(x: np.ndarray, dim: int, label: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    if x.shape[1] != dim:
        raise ValueError(f"{label} has dimension {x.shape[1]}, expected {dim}")
    if np.any(np.abs(x) > 1.0 + DOMAIN_TOL):
        raise ValueError(f"{label} outside [-1,1]^{dim}")
    return x


class GenerativeModel:
    """Sampler (s, a, h) -> (s', r) with query accounting.

    Stateless apart from the ledger; safe to query from many workers as long
    as each worker owns its own random stream.
    """

    def __init__(self, spec: MdpSpec):
        self.spec = spec
        self.ledger = QueryLedger()

    def query(self, s, a, h: int, rng: np.random.Generator):
        s_next, r = self.query_batch(s, a, h, rng)
        return s_next[0], float(r[0])

    def query_batch(self, S, A, h: int, rng: np.random.Generator):
        spec = self.spec
        _check_stage(spec, h)
        S = _check_domain(S, spec.d_state, "state")
        A = _check_domain(A, spec.d_action, "action")
        if S.shape[0] != A.shape[0]:
            raise ValueError("state and action batches differ in length")
        s_next = spec.step(S, A, h, rng)
        r = np.asarray(spec.reward(S, A, h), dtype=float)
        if spec.reward_noise_half_width > 0.0:
            r = r + spec.reward_noise_half_width * (2.0 * rng.random(r.shape) - 1.0)
        self.ledger.record(h, S.shape[0])
        return s_next, r


def make_trig_bandit() -> MdpSpec:
    """One-stage testbed: reward (1 + sin(pi a))/2, optimum a* = 0.5, value 1.

    The reward is a degree-1 trigonometric polynomial, hence exactly
    representable by any feature degree >= 2 after kernel smoothing.  The
    transition is irrelevant at horizon 1 and is the identity.
    """

    def reward(S, A, h):
        return (1.0 + np.sin(np.pi * A[:, 0])) / 2.0

    def step(S, A, h, rng):
        return np.array(S, dtype=float, copy=True)

    def transition_mean(S, A, h):
        return np.array(S, dtype=float, copy=True)

    return MdpSpec(
        name="trig_bandit",
        d_state=1,
        d_action=1,
        horizon=1,
        params={},
        reward=reward,
        step=step,
        transition_mean=transition_mean,
        start_state=np.zeros(1),
    )


class _CosineBumpNoise:
    """Zero-mean noise with density proportional to (1 + cos(2 pi w))^p on [-1/2, 1/2].

    The support half-width 1/2 keeps the drifted state away from the
    periodic seam around the nominal operating range, so closed-form
    transition means hold without wrap corrections.  Sampling is by inverse
    CDF on a dense tabulation (exact closed form for p = 1).
    """

    def __init__(self, power: int = 1, table_size: int = 4097):
        self.power = int(power)
        w = np.linspace(-0.5, 0.5, table_size)
        if self.power == 1:
            cdf = (w + 0.5) + np.sin(2.0 * np.pi * w) / (2.0 * np.pi)
        else:
            dens = (1.0 + np.cos(2.0 * np.pi * w)) ** self.power
            inc = 0.5 * (dens[:-1] + dens[1:]) * np.diff(w)
            cdf = np.concatenate(([0.0], np.cumsum(inc)))
            cdf /= cdf[-1]
        cdf[0], cdf[-1] = 0.0, 1.0
        self._w = w
        self._cdf = cdf

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        return np.interp(rng.random(size), self._cdf, self._w)


def make_smooth_chain(H: int, nu_profile: int = 1) -> MdpSpec:
    """Multi-stage testbed with smooth periodic reward and drift dynamics.

    Reward (2 + cos(pi s) + sin(pi a))/4; transition s' = wrap(s +
    0.5 sin(pi a) + w) with w the cosine-bump noise above.  ``nu_profile``
    selects the noise sharpness (the cosine power); higher values
    concentrate the transition noise.  All ingredients are smooth and
    periodic.  For h = 1 with fixed s this reduces to a bandit with optimal
    action 0.5.
    """
    if H < 2:
        raise ValueError(f"smooth_chain needs horizon >= 2, got {H}")
    noise = _CosineBumpNoise(power=nu_profile)

    def reward(S, A, h):
        return (2.0 + np.cos(np.pi * S[:, 0]) + np.sin(np.pi * A[:, 0])) / 4.0

    def step(S, A, h, rng):
        drift = S[:, 0] + 0.5 * np.sin(np.pi * A[:, 0])
        w = noise.sample(rng, S.shape[0])
        return wrap(drift + w).reshape(-1, 1)

    def transition_mean(S, A, h):
        # valid when |s + 0.5 sin(pi a)| <= 0.5 so the noise never wraps
        return (S[:, 0] + 0.5 * np.sin(np.pi * A[:, 0])).reshape(-1, 1)

    return MdpSpec(
        name="smooth_chain",
        d_state=1,
        d_action=1,
        horizon=int(H),
        params={"nu_profile": int(nu_profile)},
        reward=reward,
        step=step,
        transition_mean=transition_mean,
        start_state=np.zeros(1),
    )


def with_reward_noise(spec: MdpSpec, half_width: float) -> MdpSpec:
    """Diagnostic wrapper adding bounded zero-mean reward noise (off by default).

    Noisy rewards may leave [0, 1]; unbiasedness is preserved (no clipping).
    """
    return replace(spec, reward_noise_half_width=float(half_width))


def get_env(name: str, horizon: Optional[int] = None, params: Optional[dict] = None) -> MdpSpec:
    """Environment selection by name plus JSON-style params."""
    params = dict(params or {})
    if name == "trig_bandit":
        if horizon not in (None, 1):
            raise ValueError("trig_bandit has a fixed horizon of 1")
        return make_trig_bandit()
    if name == "smooth_chain":
        return make_smooth_chain(H=horizon if horizon is not None else 3, **params)
    raise ValueError(f"unknown environment {name!r}")


def _apply_policy(policy, S: np.ndarray, h: int) -> np.ndarray:
    out = np.asarray(policy(S, h), dtype=float)
    if out.shape[0] == S.shape[0] and out.ndim == 2:
        return out
    # scalar policy signature (s, h) -> a; evaluate row by row
    rows = [np.atleast_1d(np.asarray(policy(S[i], h), dtype=float)) for i in range(S.shape[0])]
    return np.stack(rows, axis=0)


def rollout_value(spec: MdpSpec, policy, n_episodes: int, rng: np.random.Generator, start=None):
    """Monte-Carlo estimate (mean, standard error) of the policy value from a start state."""
    if n_episodes < 1:
        raise ValueError(f"n_episodes must be >= 1, got {n_episodes}")
    start = np.asarray(spec.start_state if start is None else start, dtype=float)
    S = np.tile(start.reshape(1, -1), (n_episodes, 1))
    returns = np.zeros(n_episodes)
    for h in range(1, spec.horizon + 1):
        A = _apply_policy(policy, S, h)
        returns += np.asarray(spec.reward(S, A, h), dtype=float)
        if h < spec.horizon:
            S = spec.step(S, A, h, rng)
    mean = float(returns.mean())
    se = float(returns.std(ddof=1) / np.sqrt(n_episodes)) if n_episodes > 1 else 0.0
    return mean, se


@dataclass(frozen=True)
class DpOracle:
    """Backward-induction tables on a uniform grid, with the greedy grid policy.

    Error budget: O(Lip / grid_M) state-discretization bias per stage plus
    Monte-Carlo error O(H / sqrt(mc_per_cell)) in the transition
    expectations.
    """

    spec: MdpSpec
    state_axes: tuple
    action_points: np.ndarray
    v_tables: dict
    q_tables: dict
    policy_indices: dict

    @cached_property
    def _state_shape(self):
        return tuple(len(ax) for ax in self.state_axes)

    def _state_cell(self, S: np.ndarray) -> np.ndarray:
        S = np.atleast_2d(np.asarray(S, dtype=float))
        idx = []
        for axis, ax in enumerate(self.state_axes):
            h = ax[1] - ax[0]
            idx.append(np.clip(np.round((S[:, axis] - ax[0]) / h).astype(int), 0, len(ax) - 1))
        return np.ravel_multi_index(idx, self._state_shape)

    def value_at(self, s, h: int = 1) -> float:
        return float(self.v_tables[h][self._state_cell(s)][0])

    def policy(self, S, h: int) -> np.ndarray:
        cells = self._state_cell(S)
        return self.action_points[self.policy_indices[h][cells]]

    def to_json_dict(self) -> dict:
        return {
            "env": self.spec.name,
            "horizon": self.spec.horizon,
            "state_axes": [ax.tolist() for ax in self.state_axes],
            "values": {str(h): self.v_tables[h].tolist() for h in self.v_tables},
        }


def grid_dp_oracle(
    spec: MdpSpec, grid_M: int = 201, mc_per_cell: int = 32, seed: int = 0
) -> DpOracle:
    """Brute-force dynamic programming on an M-per-axis grid.

    Expectations over transitions use ``mc_per_cell`` Monte-Carlo draws per
    (cell, stage) with nearest-grid-cell value lookup.  Only desk-scale
    instances are supported (d_state + d_action <= 3).
    """
    if spec.d_state + spec.d_action > 3:
        raise ValueError("oracle supports d_state + d_action <= 3")
    if grid_M < 3:
        raise ValueError(f"grid_M must be >= 3, got {grid_M}")
    state_axes = tuple(np.linspace(-1.0, 1.0, grid_M) for _ in range(spec.d_state))
    action_axes = [np.linspace(-1.0, 1.0, grid_M) for _ in range(spec.d_action)]
    a_grids = np.meshgrid(*action_axes, indexing="ij")
    action_points = np.stack([g.ravel() for g in a_grids], axis=1)
    s_grids = np.meshgrid(*state_axes, indexing="ij")
    state_points = np.stack([g.ravel() for g in s_grids], axis=1)
    n_s, n_a = state_points.shape[0], action_points.shape[0]

    oracle = DpOracle(
        spec=spec,
        state_axes=state_axes,
        action_points=action_points,
        v_tables={},
        q_tables={},
        policy_indices={},
    )
    SS = np.repeat(state_points, n_a, axis=0)
    AA = np.tile(action_points, (n_s, 1))
    v_next = np.zeros(n_s)
    oracle.v_tables[spec.horizon + 1] = v_next
    for h in range(spec.horizon, 0, -1):
        r = np.asarray(spec.reward(SS, AA, h), dtype=float)
        if h == spec.horizon:
            exp_v = 0.0
        else:
            rng = stream(seed, "dp_oracle", h)
            acc = np.zeros(n_s * n_a)
            for _ in range(mc_per_cell):
                nxt = spec.step(SS, AA, h, rng)
                acc += v_next[oracle._state_cell(nxt)]
            exp_v = acc / mc_per_cell
        q = (r + exp_v).reshape(n_s, n_a)
        v_next = q.max(axis=1)
        oracle.q_tables[h] = q
        oracle.v_tables[h] = v_next
        oracle.policy_indices[h] = q.argmax(axis=1)
    return oracle


def save_oracle(path, oracle: DpOracle) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(oracle.to_json_dict(), fh)
