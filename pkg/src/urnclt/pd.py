"""Two-parameter Poisson-Dirichlet predictive sequences on a finite alphabet."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numba
import numpy as np

from .errors import ConfigError, InvariantViolation
from .rng import Role, StreamKey, derive_stream
from .urn import _resolve_checkpoints


@dataclass(frozen=True, eq=False)
class PDConfig:
    alpha: float
    theta: float
    nu: tuple[float, ...]
    target: tuple[int, ...]
    horizon: int
    checkpoints: tuple[int, ...] | None = None

    def __post_init__(self):
        if not 0 <= self.alpha < 1:
            raise ConfigError(f"alpha must lie in [0, 1), got {self.alpha}", "alpha")
        if not self.theta > -self.alpha:
            raise ConfigError(f"theta must exceed -alpha, got {self.theta}", "theta")
        nu = tuple(float(p) for p in self.nu)
        if len(nu) < 2:
            raise ConfigError("alphabet needs at least two symbols", "nu")
        if any(p < 0 for p in nu) or abs(math.fsum(nu) - 1.0) > 1e-12:
            raise ConfigError("nu must be a probability vector", "nu")
        target = tuple(sorted(set(int(y) for y in self.target)))
        if any(y < 0 or y >= len(nu) for y in target):
            raise ConfigError("target symbols must index the alphabet", "target")
        object.__setattr__(self, "nu", nu)
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "checkpoints", _resolve_checkpoints(self.checkpoints, self.horizon))

    @property
    def alphabet_size(self) -> int:
        return len(self.nu)

    @property
    def nu_target(self) -> float:
        return math.fsum(self.nu[y] for y in self.target)

    @property
    def target_mask(self) -> np.ndarray:
        mask = np.zeros(self.alphabet_size, dtype=np.bool_)
        mask[list(self.target)] = True
        return mask


def pd_predictive(counts: Sequence[int], n: int, config: PDConfig, target: Sequence[int] | None = None) -> float:
    """P(Y_{n+1} in target | occupancy ``counts`` after ``n`` draws)."""
    counts = np.asarray(counts)
    if counts.shape != (config.alphabet_size,) or counts.sum() != n or np.any(counts < 0):
        raise ValueError("occupancy counts must be nonnegative and sum to n")
    target = config.target if target is None else tuple(target)
    nu_a = math.fsum(config.nu[y] for y in target)
    if n == 0:
        return nu_a
    a, th = config.alpha, config.theta
    seen = counts > 0
    num = math.fsum((counts[y] - a) for y in target if seen[y])
    num += (th + a * int(seen.sum())) * nu_a
    return num / (th + n)


@numba.njit(nogil=True, cache=True)
def _pd_kernel(alpha, theta, nu, mask, u, counts, n0, checkpoints, symbols, z_dense,
               cp_counts, cp_distinct, cp_hits, cp_z):
    n_sym = nu.shape[0]
    steps = u.shape[0]
    p = np.empty(n_sym)
    distinct = 0
    hits = 0
    for y in range(n_sym):
        if counts[y] > 0:
            distinct += 1
            if mask[y]:
                hits += int(counts[y])
    ci = 0
    n_cp = checkpoints.shape[0]
    dense = z_dense.shape[0] > 0
    record = symbols.shape[0] > 0
    max_err = 0.0
    z_last = 0.0
    for i in range(steps + 1):
        n = n0 + i
        if n == 0:
            for y in range(n_sym):
                p[y] = nu[y]
        else:
            base = theta + alpha * distinct
            denom = theta + n
            for y in range(n_sym):
                seen_part = counts[y] - alpha if counts[y] > 0 else 0.0
                p[y] = (seen_part + base * nu[y]) / denom
        tot = 0.0
        za = 0.0
        for y in range(n_sym):
            tot += p[y]
            if mask[y]:
                za += p[y]
        err = abs(tot - 1.0)
        if err > max_err:
            max_err = err
        z_last = za
        if dense:
            z_dense[i] = za
        while ci < n_cp and checkpoints[ci] == n:
            for y in range(n_sym):
                cp_counts[ci, y] = counts[y]
            cp_distinct[ci] = distinct
            cp_hits[ci] = hits
            cp_z[ci] = za
            ci += 1
        if i == steps:
            break
        thr = u[i]
        c = 0.0
        j = -1
        for y in range(n_sym):
            c += p[y]
            if thr < c:
                j = y
                break
        if j < 0:
            for y in range(n_sym):
                if p[y] > 0:
                    j = y
        if record:
            symbols[i] = j
        if counts[j] == 0:
            distinct += 1
        counts[j] += 1.0
        if mask[j]:
            hits += 1
    return z_last, max_err


@dataclass(frozen=True, eq=False)
class PDTrajectory:
    config: PDConfig
    symbols: np.ndarray
    checkpoints: np.ndarray
    counts: np.ndarray
    distinct: np.ndarray
    hits: np.ndarray
    z: np.ndarray
    z0: float
    z_terminal: float
    max_normalization_error: float
    z_dense: np.ndarray | None = None

    @property
    def horizon(self) -> int:
        return self.symbols.shape[0]

    @property
    def xbar(self) -> np.ndarray:
        return self.hits / self.checkpoints

    @property
    def q(self) -> np.ndarray:
        """Q_n = (theta + n) Z_n - n Xbar_n at each checkpoint."""
        n = self.checkpoints
        return (self.config.theta + n) * self.z - n * self.xbar

    @property
    def dense(self) -> bool:
        return self.z_dense is not None

    def indicator(self, color: int = 0) -> np.ndarray:
        return self.config.target_mask[self.symbols].astype(float)


def pd_simulate(config: PDConfig, key: StreamKey, dense: bool = False) -> PDTrajectory:
    """Sample ``Y_1 .. Y_N`` sequentially from the predictive rule (one uniform per step)."""
    N = config.horizon
    u = derive_stream(key.with_role(Role.DRAW)).random(N)
    cps = np.asarray(config.checkpoints, dtype=np.int64)
    K = cps.size
    n_sym = config.alphabet_size
    symbols = np.empty(N, dtype=np.int16)
    z_dense = np.empty(N + 1) if dense else np.empty(0)
    cp_counts = np.empty((K, n_sym))
    cp_distinct = np.empty(K, dtype=np.int64)
    cp_hits = np.empty(K, dtype=np.int64)
    cp_z = np.empty(K)
    z_last, max_err = _pd_kernel(config.alpha, config.theta, np.array(config.nu), config.target_mask, u,
                                 np.zeros(n_sym), 0, cps, symbols, z_dense, cp_counts, cp_distinct, cp_hits, cp_z)
    return PDTrajectory(config, symbols, cps, cp_counts, cp_distinct, cp_hits, cp_z,
                        config.nu_target, z_last, max_err, z_dense if dense else None)


def pd_state_at(config: PDConfig, key: StreamKey, n: int) -> np.ndarray:
    """Occupancy counts after ``n`` draws of the path identified by ``key``."""
    u = derive_stream(key.with_role(Role.DRAW)).random(n)
    counts = np.zeros(config.alphabet_size)
    _pd_kernel(config.alpha, config.theta, np.array(config.nu), config.target_mask, u, counts, 0,
               np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int16), np.empty(0),
               np.empty((0, config.alphabet_size)), np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64),
               np.empty(0))
    return counts


def pd_continue(config: PDConfig, counts: np.ndarray, steps: int, rng: np.random.Generator) -> float:
    """Advance from occupancy ``counts`` by ``steps`` draws; returns the final target predictive mass."""
    c = np.array(counts, dtype=float)
    n0 = int(round(c.sum()))
    z_last, _ = _pd_kernel(config.alpha, config.theta, np.array(config.nu), config.target_mask, rng.random(steps),
                           c, n0, np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int16), np.empty(0),
                           np.empty((0, config.alphabet_size)), np.empty(0, dtype=np.int64),
                           np.empty(0, dtype=np.int64), np.empty(0))
    return z_last


@dataclass(frozen=True)
class PDBoundReport:
    checkpoints: np.ndarray
    c: np.ndarray
    q: np.ndarray
    q_bound: float
    c_bound: np.ndarray
    max_identity_residual: float
    max_q_mismatch: float
    ok: bool


def pd_bound_check(trajectory: PDTrajectory, config: PDConfig | None = None, tol: float = 1e-9) -> PDBoundReport:
    """Check the pathwise bound on ``C_n`` implied by ``Z_n = (n Xbar_n + Q_n) / (theta + n)``.

    ``Q_n`` is taken from the identity and cross-checked against its direct
    definition from occupancy counts.  Raises :class:`InvariantViolation` when
    any check fails.
    """
    config = trajectory.config if config is None else config
    a, th = config.alpha, config.theta
    n = trajectory.checkpoints.astype(float)
    xbar = trajectory.xbar
    z = trajectory.z
    c = np.sqrt(n) * (xbar - z)
    q = trajectory.q
    mask = config.target_mask
    seen = trajectory.counts > 0
    q_direct = -a * seen[:, mask].sum(axis=1) + (th + a * seen.sum(axis=1)) * config.nu_target
    q_bound = a * config.alphabet_size + abs(th) + a * config.alphabet_size
    c_bound = np.sqrt(n) * (abs(th) + np.abs(q)) / (th + n)
    residual = np.abs(c - np.sqrt(n) * (th * xbar - q) / (th + n))
    mismatch = np.abs(q - q_direct)
    scale = tol * (1.0 + n)
    ok = bool(np.all(np.abs(q) <= q_bound + scale) and np.all(np.abs(c) <= c_bound + tol)
              and np.all(residual <= tol) and np.all(mismatch <= scale))
    report = PDBoundReport(trajectory.checkpoints, c, q, q_bound, c_bound,
                           float(residual.max()), float(mismatch.max()), ok)
    if not ok:
        raise InvariantViolation(f"Poisson-Dirichlet C_n bound violated: {report}")
    return report
