"""Randomly reinforced generalized Pólya urns, two-color and multicolor.

Colors are 0-based.  In the two-color urn color 0 is black, so the usual
indicator ``X_n`` of a black draw is ``draws == 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numba
import numpy as np

from .errors import ConfigError, EnumerationTooLarge
from .rng import Role, StreamKey, derive_stream
from .schedule import LawKind, ReinforcementSchedule, validate_schedule

MAX_ENUMERATION_PATHS = 10**7


def default_checkpoints(horizon: int) -> tuple[int, ...]:
    """Geometric grid ``floor(N / 2**i)`` down to 1, plus ``N``."""
    pts = set()
    n = horizon
    while n >= 1:
        pts.add(n)
        n //= 2
    return tuple(sorted(pts))


def _resolve_checkpoints(checkpoints, horizon):
    if not isinstance(horizon, (int, np.integer)) or horizon < 1:
        raise ConfigError(f"horizon must be an integer >= 1, got {horizon!r}", "horizon")
    if checkpoints is None:
        return default_checkpoints(int(horizon))
    cps = tuple(int(c) for c in checkpoints)
    if not cps:
        raise ConfigError("checkpoints must be nonempty", "checkpoints")
    if list(cps) != sorted(set(cps)):
        raise ConfigError("checkpoints must be strictly increasing", "checkpoints")
    if cps[0] < 1 or cps[-1] > horizon:
        raise ConfigError(f"checkpoints must lie in [1, {horizon}], got {cps[0]}..{cps[-1]}", "checkpoints")
    return cps


@dataclass(frozen=True, eq=False)
class MultiColorConfig:
    weights: tuple[float, ...]
    schedule: ReinforcementSchedule
    horizon: int
    checkpoints: tuple[int, ...] | None = None

    def __post_init__(self):
        w = tuple(float(a) for a in self.weights)
        if len(w) < 2:
            raise ConfigError("need d >= 2 colors", "weights")
        if not all(a > 0 and math.isfinite(a) for a in w):
            raise ConfigError("initial weights must be finite and > 0", "weights")
        if self.schedule.d != len(w):
            raise ConfigError(f"schedule has {self.schedule.d} colors, weights {len(w)}", "schedule")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "checkpoints", _resolve_checkpoints(self.checkpoints, self.horizon))

    @property
    def d(self) -> int:
        return len(self.weights)

    @property
    def initial_weights(self) -> np.ndarray:
        return np.array(self.weights)


class TwoColorConfig(MultiColorConfig):
    """Two-color urn with ``b`` black (color 0) and ``r`` red (color 1) initial weight."""

    def __init__(self, b: float, r: float, schedule: ReinforcementSchedule, horizon: int,
                 checkpoints: Sequence[int] | None = None):
        if not (b > 0 and math.isfinite(b)):
            raise ConfigError("initial black weight b must be > 0", "b")
        if not (r > 0 and math.isfinite(r)):
            raise ConfigError("initial red weight r must be > 0", "r")
        if schedule.d != 2:
            raise ConfigError("two-color urn needs a two-color schedule", "schedule")
        super().__init__((b, r), schedule, horizon, None if checkpoints is None else tuple(checkpoints))

    @property
    def b(self) -> float:
        return self.weights[0]

    @property
    def r(self) -> float:
        return self.weights[1]


@dataclass(frozen=True, eq=False)
class UrnTrajectory:
    config: MultiColorConfig
    draws: np.ndarray
    reinforcements: np.ndarray
    checkpoints: np.ndarray
    z: np.ndarray
    s: np.ndarray
    counts: np.ndarray
    z0: np.ndarray
    s0: float
    z_terminal: np.ndarray
    z_dense: np.ndarray | None = None

    @property
    def d(self) -> int:
        return self.z0.shape[0]

    @property
    def horizon(self) -> int:
        return self.draws.shape[0]

    @property
    def xbar(self) -> np.ndarray:
        return self.counts / self.checkpoints[:, None]

    @property
    def dense(self) -> bool:
        return self.z_dense is not None

    def indicator(self, color: int = 0) -> np.ndarray:
        return (self.draws == color).astype(float)


class TwoColorStep(NamedTuple):
    black_weight: float
    total_weight: float
    black: bool
    z: float


def _check_finite(*xs):
    if not all(math.isfinite(x) for x in xs):
        raise FloatingPointError("urn weights became non-finite")


def step_two_color(black_weight: float, total_weight: float, u: float, B: float, R: float) -> TwoColorStep:
    if not 0 < black_weight < total_weight:
        raise ValueError("need 0 < black_weight < total_weight")
    black = u * total_weight < black_weight
    if black:
        black_weight += B
        total_weight += B
    else:
        total_weight += R
    _check_finite(black_weight, total_weight)
    return TwoColorStep(black_weight, total_weight, black, black_weight / total_weight)


def step_multicolor(weights: Sequence[float], u: float, A: Sequence[float]) -> tuple[np.ndarray, int]:
    """Draw a color by inverse CDF over normalized weights and reinforce it by ``A[j]``."""
    w = np.array(weights, dtype=float)
    if np.any(w <= 0):
        raise ValueError("all weights must be > 0")
    total = 0.0
    for a in w:
        total += a
    thr = u * total
    c = 0.0
    j = w.size - 1
    for i, a in enumerate(w):
        c += a
        if thr < c:
            j = i
            break
    w[j] += A[j]
    _check_finite(*w)
    return w, j


@numba.njit(nogil=True, cache=True)
def _urn_kernel(weights, total, u_draw, reinf, checkpoints, z_dense, draws, applied,
                cp_z, cp_s, cp_counts):
    d = weights.shape[0]
    n_steps = u_draw.shape[0]
    dense = z_dense.shape[0] > 0
    record = draws.shape[0] > 0
    counts = np.zeros(d)
    ci = 0
    n_cp = checkpoints.shape[0]
    if dense:
        for i in range(d):
            z_dense[0, i] = weights[i] / total
    for k in range(n_steps):
        thr = u_draw[k] * total
        c = 0.0
        j = d - 1
        for i in range(d):
            c += weights[i]
            if thr < c:
                j = i
                break
        a = reinf[k, j]
        weights[j] += a
        total += a
        if not math.isfinite(total):
            raise FloatingPointError("urn weights became non-finite")
        counts[j] += 1.0
        if record:
            draws[k] = j
            applied[k] = a
        if dense:
            for i in range(d):
                z_dense[k + 1, i] = weights[i] / total
        while ci < n_cp and checkpoints[ci] == k + 1:
            for i in range(d):
                cp_z[ci, i] = weights[i] / total
                cp_counts[ci, i] = counts[i]
            cp_s[ci] = total
            ci += 1
    return total


def _total(weights):
    total = 0.0
    for a in weights:
        total += a
    return total


def _ensure_valid(schedule):
    violations = validate_schedule(schedule)
    if violations:
        raise ConfigError("; ".join(v.message for v in violations), "schedule")


def simulate(config: MultiColorConfig, key: StreamKey, dense: bool = False,
             validate: bool = True) -> UrnTrajectory:
    """Run one urn path of ``config.horizon`` steps.

    Color draws come from the ``DRAW`` stream of ``key`` and reinforcements
    from its ``REINFORCEMENT`` stream; both colors' reinforcements exist at
    every step and only the drawn one is applied.  ``dense`` keeps every
    predictive vector ``Z_0 .. Z_N``.  ``validate=False`` allows schedules
    that break the equal-mean hypothesis (used for counterexamples).
    """
    if validate:
        _ensure_valid(config.schedule)
    N = config.horizon
    d = config.d
    u_draw = derive_stream(key.with_role(Role.DRAW)).random(N)
    sched = config.schedule
    rng = None if sched.all_constant else derive_stream(key.with_role(Role.REINFORCEMENT))
    reinf = sched.block(rng, 1, N)

    weights = config.initial_weights.copy()
    s0 = _total(weights)
    z0 = weights / s0
    cps = np.asarray(config.checkpoints, dtype=np.int64)
    z_dense = np.empty((N + 1, d)) if dense else np.empty((0, d))
    draws = np.empty(N, dtype=np.int8)
    applied = np.empty(N)
    cp_z = np.empty((cps.size, d))
    cp_s = np.empty(cps.size)
    cp_counts = np.empty((cps.size, d))
    total = _urn_kernel(weights, s0, u_draw, reinf, cps, z_dense, draws, applied, cp_z, cp_s, cp_counts)
    return UrnTrajectory(
        config=config, draws=draws, reinforcements=applied, checkpoints=cps,
        z=cp_z, s=cp_s, counts=cp_counts, z0=z0, s0=s0,
        z_terminal=weights / total, z_dense=z_dense if dense else None,
    )


def continue_urn(weights: np.ndarray, schedule: ReinforcementSchedule, start_n: int, steps: int,
                 rng: np.random.Generator) -> np.ndarray:
    """Advance an urn from ``weights`` (state after ``start_n - 1`` draws) by ``steps`` draws.

    Uniform layout on ``rng``: ``steps`` draw uniforms, then the reinforcement
    block.  Returns the final weight vector.
    """
    d = weights.shape[0]
    u_draw = rng.random(steps)
    reinf = schedule.block(None if schedule.all_constant else rng, start_n, steps)
    w = np.array(weights, dtype=float)
    empty_cp = np.empty(0, dtype=np.int64)
    _urn_kernel(w, _total(w), u_draw, reinf, empty_cp, np.empty((0, d)), np.empty(0, dtype=np.int8),
                np.empty(0), np.empty((0, d)), np.empty(0), np.empty((0, d)))
    return w


def state_at(config: MultiColorConfig, key: StreamKey, n: int, validate: bool = True) -> np.ndarray:
    """Weight vector after ``n`` draws of the path identified by ``key``.

    Streams are positional, so this equals the state of the full-horizon path at time ``n``.
    """
    if validate:
        _ensure_valid(config.schedule)
    sub = MultiColorConfig(config.weights, config.schedule, n, (n,))
    w = sub.initial_weights.copy()
    u_draw = derive_stream(key.with_role(Role.DRAW)).random(n)
    sched = config.schedule
    rng = None if sched.all_constant else derive_stream(key.with_role(Role.REINFORCEMENT))
    reinf = sched.block(rng, 1, n)
    d = config.d
    _urn_kernel(w, _total(w), u_draw, reinf, np.empty(0, dtype=np.int64), np.empty((0, d)),
                np.empty(0, dtype=np.int8), np.empty(0), np.empty((0, d)), np.empty(0), np.empty((0, d)))
    return w


def enumerate_exact(config: MultiColorConfig, n: int, max_paths: int = MAX_ENUMERATION_PATHS) -> dict:
    """Exact law of ``(Z_n, Xbar_n)`` by enumerating every draw/reinforcement path.

    Keys are ``(Z_n, Xbar_n)`` of color 0 for two-color urns and tuples of
    per-color values otherwise.  Laws must be constant or discrete.  Float
    arithmetic follows the simulator step for step, so keys coincide with
    simulated checkpoint values.
    """
    sched = config.schedule
    if n < 1:
        raise ValueError("n must be >= 1")
    paths = 1
    for k in range(1, n + 1):
        branching = 0
        for j in range(config.d):
            law = sched.law_at(k, j)
            if law.kind == LawKind.TABLE:
                raise ValueError("enumerate_exact needs constant or discrete laws")
            branching += law.values.size
        paths *= branching
        if paths > max_paths:
            raise EnumerationTooLarge(f"more than {max_paths} paths at n={n}")

    d = config.d
    w0 = tuple(config.weights)
    states = {(w0, _total(w0), (0,) * d): 1.0}
    for k in range(1, n + 1):
        nxt: dict = {}
        for (w, total, counts), p in states.items():
            for j in range(d):
                pj = p * w[j] / total
                for a, pa in sched.law_at(k, j).atoms():
                    wj = list(w)
                    wj[j] += a
                    cj = list(counts)
                    cj[j] += 1
                    key = (tuple(wj), total + a, tuple(cj))
                    nxt[key] = nxt.get(key, 0.0) + pj * pa
        states = nxt

    law: dict = {}
    for (w, total, counts), p in states.items():
        z = tuple(a / total for a in w)
        xbar = tuple(c / n for c in counts)
        key = (z[0], xbar[0]) if d == 2 else (z, xbar)
        law[key] = law.get(key, 0.0) + p
    return law


def marginal(law: dict, index: int = 0) -> dict:
    """Marginal of an ``enumerate_exact`` law over one coordinate of its keys."""
    out: dict = {}
    for key, p in law.items():
        out[key[index]] = out.get(key[index], 0.0) + p
    return out


def total_variation(p: dict, q: dict, digits: int = 12) -> float:
    """TV distance between two finite laws given as ``{value: prob}``; values are rounded to match."""
    def rounded(law):
        out: dict = {}
        for k, v in law.items():
            kk = tuple(np.round(k, digits)) if isinstance(k, tuple) else round(k, digits)
            out[kk] = out.get(kk, 0.0) + v
        return out
    a, b = rounded(p), rounded(q)
    return 0.5 * math.fsum(abs(a.get(k, 0.0) - b.get(k, 0.0)) for k in set(a) | set(b))


def empirical_law(values) -> dict:
    vals, counts = np.unique(np.asarray(values), return_counts=True)
    total = counts.sum()
    return {float(v): c / total for v, c in zip(vals, counts)}
