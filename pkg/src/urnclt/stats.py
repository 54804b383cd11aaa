"""Per-path CLT statistics, condition diagnostics and limit-variance formulas.

Notation follows the usual urn CLT setup: ``Z_n`` is the predictive
probability of the tracked color after ``n`` draws, ``Xbar_n`` the running
frequency, ``C_n = sqrt(n) (Xbar_n - Z_n)``, ``D_n = sqrt(n) (Z_n - Z)`` and
``W_n = C_n + D_n``.  The almost-sure limit ``Z`` is replaced by the terminal
value ``Z_N`` of a longer horizon (see :class:`ZProxyPolicy`).  Increments are
written ``dZ_k = Z_{k-1} - Z_k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, InvariantViolation, TruncationError, UnsupportedModeError
from .pd import PDConfig, PDTrajectory
from .rng import Role, StreamKey, derive_stream
from .schedule import LawKind, ReinforcementSchedule
from .urn import MultiColorConfig, TwoColorConfig, UrnTrajectory, state_at


@dataclass(frozen=True)
class ZProxyPolicy:
    """``D_n`` is reported only when ``N >= min_factor * n``; tail diagnostics need ``N >= truncation_factor * n``."""

    min_factor: int = 10
    truncation_factor: int = 10

    def proxy_ok(self, n, N):
        return N >= self.min_factor * n

    def tail_ok(self, n, N):
        return N >= self.truncation_factor * n


class DensePath(NamedTuple):
    """Bare dense path: ``z`` holds ``Z_0 .. Z_N`` and ``x`` holds ``X_1 .. X_N``."""

    z: np.ndarray
    x: np.ndarray


def is_scalar_model(config) -> bool:
    return isinstance(config, (TwoColorConfig, PDConfig))


def _dense(path, color=0) -> DensePath:
    if isinstance(path, DensePath):
        return path
    if path.z_dense is None:
        raise UnsupportedModeError("condition diagnostics need a dense trajectory (simulate with dense=True)")
    z = path.z_dense if path.z_dense.ndim == 1 else path.z_dense[:, color]
    return DensePath(z, path.indicator(color))


# -- statistics -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CLTSeries:
    """Checkpointed statistics of one path.

    Arrays have shape ``(K,)`` for scalar models (two-color urn tracks black,
    Poisson-Dirichlet tracks the target set) and ``(K, d)`` for multicolor
    urns.  Entries that the proxy or truncation policy forbids are NaN.
    """

    checkpoints: np.ndarray
    z: np.ndarray
    xbar: np.ndarray
    C: np.ndarray
    D: np.ndarray
    W: np.ndarray
    z_proxy: float | np.ndarray
    proxy_horizon: int
    a_stat: np.ndarray
    b_stat: np.ndarray
    c_stat: np.ndarray
    d_stat: np.ndarray
    v_tail: np.ndarray
    v_cesaro: np.ndarray
    n_over_s: np.ndarray | None


def _profile(path: DensePath, ns: np.ndarray, N: int, policy: ZProxyPolicy):
    """Conditions (a)-(d) plus the two averaging estimators of V at every ``n`` in ``ns``."""
    z, x = path.z, path.x
    dz = z[:-1] - z[1:]
    k = np.arange(1, N + 1, dtype=float)
    absdz = np.abs(dz)
    a_run = np.maximum.accumulate(k * absdz)
    b_cum = np.cumsum((x - z[:-1] + k * dz) ** 2)
    c_rev = np.maximum.accumulate(absdz[::-1])[::-1]
    y = k * k * dz * dz
    out = np.full((6, ns.size), np.nan)
    for i, n in enumerate(ns):
        out[0, i] = a_run[n - 1] / math.sqrt(n)
        out[1, i] = b_cum[n - 1] / n
        if policy.tail_ok(n, N):
            out[2, i] = math.sqrt(n) * c_rev[n - 1]
            out[3, i] = n * np.sum(dz[n - 1:] ** 2)
            out[4, i], out[5, i] = cesaro_tail_average(y, n)
    return out


def clt_series(trajectory, policy: ZProxyPolicy = ZProxyPolicy(), checkpoints=None) -> CLTSeries:
    """Compute ``C_n, D_n, W_n`` and, for dense paths, the condition diagnostics.

    With ``checkpoints=None`` every recorded checkpoint is used and entries
    beyond the proxy policy are NaN; explicitly requested checkpoints that
    violate the policy raise :class:`TruncationError`.
    """
    N = trajectory.horizon
    all_cps = trajectory.checkpoints
    if checkpoints is None:
        sel = np.arange(all_cps.size)
    else:
        sel = np.searchsorted(all_cps, checkpoints)
        if np.any(sel >= all_cps.size) or np.any(all_cps[np.minimum(sel, all_cps.size - 1)] != checkpoints):
            raise ValueError("requested checkpoints were not recorded by the trajectory")
        bad = [int(n) for n in checkpoints if not policy.proxy_ok(n, N)]
        if bad:
            raise TruncationError(f"checkpoints {bad} too close to horizon {N} for the Z proxy "
                                  f"(need N >= {policy.min_factor} n)")
    cps = all_cps[sel]
    n = cps.astype(float)
    scalar = isinstance(trajectory, PDTrajectory) or isinstance(trajectory.config, TwoColorConfig)
    if isinstance(trajectory, PDTrajectory):
        z, xbar, z_proxy = trajectory.z[sel], trajectory.xbar[sel], float(trajectory.z_terminal)
        n_over_s = None
        colors = [0]
    else:
        z, xbar = trajectory.z[sel], trajectory.xbar[sel]
        z_proxy = trajectory.z_terminal.copy()
        n_over_s = n / trajectory.s[sel]
        if scalar:
            z, xbar, z_proxy = z[:, 0], xbar[:, 0], float(z_proxy[0])
            colors = [0]
        else:
            colors = list(range(trajectory.d))
    root = np.sqrt(n) if scalar else np.sqrt(n)[:, None]
    C = root * (xbar - z)
    D = root * (z - z_proxy)
    ok = np.array([policy.proxy_ok(c, N) for c in cps])
    D[~ok] = np.nan
    W = C + D

    shape = (cps.size,) if scalar else (cps.size, len(colors))
    diag = np.full((6,) + shape, np.nan)
    if trajectory.dense:
        for j in colors:
            prof = _profile(_dense(trajectory, j), cps, N, policy)
            if scalar:
                diag[:, :] = prof
            else:
                diag[:, :, j] = prof
    return CLTSeries(cps, z, xbar, C, D, W, z_proxy, N, *diag, n_over_s)


def condition_a_stat(path, n: int, color: int = 0) -> float:
    """``n^{-1/2} max_{k<=n} k |Z_{k-1} - Z_k|`` along one path."""
    p = _dense(path, color)
    dz = np.abs(p.z[:n] - p.z[1:n + 1])
    return float(np.max(np.arange(1, n + 1) * dz) / math.sqrt(n))


def condition_b_stat(path, n: int, color: int = 0) -> float:
    """``(1/n) sum_{k<=n} (X_k - Z_{k-1} + k (Z_{k-1} - Z_k))^2`` along one path."""
    p = _dense(path, color)
    k = np.arange(1, n + 1)
    terms = (p.x[:n] - p.z[:n] + k * (p.z[:n] - p.z[1:n + 1])) ** 2
    return math.fsum(terms) / n


def _tail_checked(p: DensePath, n, truncation_factor):
    N = p.x.shape[0]
    if N < truncation_factor * n:
        raise TruncationError(f"horizon {N} < {truncation_factor} * n = {truncation_factor * n}")
    return p.z[n - 1:N] - p.z[n:N + 1]


def condition_c_stat(path, n: int, color: int = 0, truncation_factor: int = 10) -> float:
    """``sqrt(n) max_{n<=k<=N} |Z_{k-1} - Z_k|`` (tail truncated at the horizon)."""
    dz = _tail_checked(_dense(path, color), n, truncation_factor)
    return math.sqrt(n) * float(np.max(np.abs(dz)))


def condition_d_stat(path, n: int, color: int = 0, truncation_factor: int = 10) -> float:
    """``n sum_{n<=k<=N} (Z_{k-1} - Z_k)^2`` (tail truncated at the horizon)."""
    dz = _tail_checked(_dense(path, color), n, truncation_factor)
    return n * math.fsum(dz * dz)


def cesaro_tail_average(y, n: int) -> tuple[float, float]:
    """``(n sum_{k=n}^N y_k / k^2, (1/n) sum_{k=1}^n y_k)`` with ``y[0]`` holding ``y_1``.

    Both converge to the same limit when ``E(y_{k+1} | past)`` does.
    """
    y = np.asarray(y, dtype=float)
    if not 1 <= n <= y.size:
        raise ValueError("need 1 <= n <= len(y)")
    k = np.arange(n, y.size + 1, dtype=float)
    tail = n * float(np.sum(y[n - 1:] / (k * k)))
    return tail, float(np.sum(y[:n])) / n


def s_over_n_diag(trajectory: UrnTrajectory):
    """``n / S_n`` at each checkpoint together with the reference ``1 / m``."""
    n = trajectory.checkpoints.astype(float)
    return n / trajectory.s, 1.0 / trajectory.config.schedule.m


def delta_step_sigma2(z: float, h: int, r: int) -> float:
    """Squared derivative of ``f(x) = x^h (1-x)^(r-h)`` at ``z`` (``0**0 = 1``)."""
    if r < 1 or not 0 <= h <= r:
        raise ValueError("need r >= 1 and 0 <= h <= r")
    if not 0 <= z <= 1:
        raise ValueError("z must lie in [0, 1]")
    first = h * z ** (h - 1) * (1 - z) ** (r - h) if h > 0 else 0.0
    second = (r - h) * z ** h * (1 - z) ** (r - h - 1) if r > h else 0.0
    return (first - second) ** 2


# -- limit variances --------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LimitVariance:
    U: float | np.ndarray
    V: float | np.ndarray
    z: float | np.ndarray
    m: float
    second_moments: tuple[float, ...]


def scalar_uv(z, m, q, s):
    """Vectorized two-color ``(U, V)``; ``z`` may be an array."""
    z = np.asarray(z, dtype=float)
    ratio = ((1 - z) * q + z * s) / (m * m)
    v = z * (1 - z) * ratio
    u = z * (1 - z) * (ratio - 1)
    return u, v


def evaluate_limit_variance_scalar(z: float, m: float, q: float, s: float) -> LimitVariance:
    if not 0 <= z <= 1:
        raise ConfigError(f"z must lie in [0, 1], got {z}", "z")
    if not m > 0:
        raise ConfigError("m must be > 0", "m")
    if q < 0 or s < 0:
        raise ConfigError("second moments must be >= 0", "q")
    tol = 1e-12 * m * m
    if q < m * m - tol or s < m * m - tol:
        raise ConfigError("second moments below m^2 are not attainable by any law with mean m", "q")
    u, v = scalar_uv(z, m, q, s)
    return LimitVariance(max(float(u), 0.0), float(v), float(z), float(m), (float(q), float(s)))


def _simplex(Z, tol=1e-9):
    Z = np.asarray(Z, dtype=float)
    if Z.ndim != 1 or Z.size < 2 or np.any(Z < -tol) or abs(Z.sum() - 1.0) > tol:
        raise ConfigError("Z must be a probability vector (on the simplex within 1e-9)", "Z")
    return Z


def evaluate_limit_variance_matrix(Z, m: float, q) -> LimitVariance:
    """Multicolor ``U`` and ``V`` matrices evaluated entrywise at the limit vector ``Z``."""
    Z = _simplex(Z)
    q = np.asarray(q, dtype=float)
    if q.shape != Z.shape:
        raise ConfigError("need one second moment per color", "q")
    if not m > 0:
        raise ConfigError("m must be > 0", "m")
    d = Z.size
    m2 = m * m
    total = math.fsum(q * Z)
    V = np.empty((d, d))
    U = np.empty((d, d))
    for i in range(d):
        for j in range(d):
            if i == j:
                rest = total - q[j] * Z[j]
                V[j, j] = Z[j] / m2 * (q[j] * (1 - Z[j]) ** 2 + Z[j] * rest)
                U[j, j] = V[j, j] - Z[j] * (1 - Z[j])
            else:
                V[i, j] = Z[i] * Z[j] / m2 * (total - q[i] - q[j])
                U[i, j] = V[i, j] + Z[i] * Z[j]
    scale = max(1.0, float(np.abs(V).max()))
    if np.linalg.eigvalsh(V).min() < -1e-10 * scale:
        raise InvariantViolation("V is not positive semidefinite")
    return LimitVariance(U, V, Z, float(m), tuple(q.tolist()))


def limit_variance_for(config, z_proxy) -> LimitVariance:
    """Limit variances of the model ``config`` at a terminal proxy ``Z``."""
    if isinstance(config, PDConfig):
        z = float(z_proxy)
        return LimitVariance(0.0, z * (1 - z), z, float("nan"), ())
    sched = config.schedule
    q = sched.limit_second_moments
    if isinstance(config, TwoColorConfig):
        z = float(np.atleast_1d(z_proxy)[0])
        return evaluate_limit_variance_scalar(z, sched.m, q[0], q[1])
    return evaluate_limit_variance_matrix(z_proxy, sched.m, q)


# -- the quasi-martingale condition ----------------------------------------


def one_step_expected_z(weights, schedule: ReinforcementSchedule, n_next: int, color: int = 0) -> float:
    """Exact ``E(Z_{n+1} | G_n)`` for the tracked color, given the weights after ``n`` draws.

    Needs constant or discrete laws at time ``n_next``.
    """
    w = np.asarray(weights, dtype=float)
    S = math.fsum(w)
    acc = []
    for j in range(w.size):
        law = schedule.law_at(n_next, j)
        if law.kind == LawKind.TABLE:
            raise ValueError("exact one-step expectation needs discrete laws")
        pj = w[j] / S
        for a, pa in law.atoms():
            num = w[color] + (a if j == color else 0.0)
            acc.append(pj * pa * num / (S + a))
    return math.fsum(acc)


def drift_bound(weights, schedule: ReinforcementSchedule, n_next: int) -> float:
    """``sum_j E A_{n+1,j}^2 / S_n^2``, the pathwise bound on ``|E(Z_{n+1}|G_n) - Z_n|`` under equal means."""
    S = float(np.sum(weights))
    return math.fsum(schedule.law_at(n_next, j).declared_second_moment for j in range(schedule.d)) / (S * S)


@dataclass(frozen=True)
class BasicConditionReport:
    ns: list[int]
    estimate: list[float]
    stderr: list[float]
    exact: list[float] | None
    prefixes: int
    branches: int
    flagged: bool

    def rows(self):
        exact = self.exact or [None] * len(self.ns)
        return [dict(n=n, estimate=e, stderr=s, exact=x) for n, e, s, x in zip(self.ns, self.estimate, self.stderr, exact)]


def basic_condition_stat(config: MultiColorConfig, ns, prefixes: int, branches: int, seed: int,
                         validate: bool = True, color: int = 0) -> BasicConditionReport:
    """Monte Carlo estimate of ``n^3 E{(E(Z_{n+1}|G_n) - Z_n)^2}`` at each ``n``.

    Each prefix path is frozen at time ``n`` and ``branches`` one-step
    continuations (stream role ``BRANCH``, ``branch_id = n``) estimate the
    conditional mean.  The squared error is debiased by the branch variance
    over ``branches``, so a martingale gives an estimate centred on 0.  The
    report is flagged when the statistic is significantly positive at the
    largest ``n`` and grows with ``n``, i.e. the ``o(n^-3)`` requirement fails.
    """
    if branches < 2:
        raise ValueError("need at least two branches")
    sched = config.schedule
    discrete = all(sched.law_at(n + 1, j).kind != LawKind.TABLE for n in ns for j in range(config.d))
    est, se, exact = [], [], []
    for n in ns:
        vals, ex = [], []
        for p in range(prefixes):
            key = StreamKey(seed, p)
            w = state_at(config, key, n, validate=validate)
            S = w.sum()
            z_n = w[color] / S
            rng = derive_stream(StreamKey(seed, p, Role.BRANCH, n))
            u = rng.random(branches)
            A = sched.sample_at(n + 1, rng, branches)
            cum = np.cumsum(w)
            drawn = np.minimum(np.searchsorted(cum, u * S, side="right"), config.d - 1)
            add = A[np.arange(branches), drawn]
            z_next = (w[color] + np.where(drawn == color, add, 0.0)) / (S + add)
            mean = z_next.mean()
            var = z_next.var(ddof=1)
            vals.append(n ** 3 * ((mean - z_n) ** 2 - var / branches))
            if discrete:
                ex.append(n ** 3 * (one_step_expected_z(w, sched, n + 1, color) - z_n) ** 2)
        vals = np.array(vals)
        est.append(float(vals.mean()))
        se.append(float(vals.std(ddof=1) / math.sqrt(prefixes)) if prefixes > 1 else float("inf"))
        if discrete:
            exact.append(float(np.mean(ex)))
    flagged = bool(len(ns) > 1 and est[-1] - 3 * se[-1] > 0 and est[-1] > est[0])
    return BasicConditionReport(list(ns), est, se, exact if discrete else None, prefixes, branches, flagged)


def a_star_profile(mean_sq_increments, ns):
    """``(1/n) sum_{k<=n} k^2 E(dZ_k^2)`` from ensemble-mean squared increments (``[0]`` is ``k=1``)."""
    e = np.asarray(mean_sq_increments, dtype=float)
    k = np.arange(1, e.shape[0] + 1, dtype=float)
    if e.ndim == 2:
        k = k[:, None]
    c = np.cumsum(k * k * e, axis=0)
    return np.array([c[n - 1] / n for n in ns])
