"""Replication ensembles: many independent paths reduced to checkpointed statistics."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .pd import PDConfig, pd_simulate
from .rng import StreamKey
from .stats import CLTSeries, ZProxyPolicy, clt_series, is_scalar_model, limit_variance_for
from .urn import _ensure_valid, simulate

_STATS = ("C", "D", "W", "a_stat", "b_stat", "c_stat", "d_stat", "v_tail", "v_cesaro")


@dataclass(eq=False)
class Ensemble:
    """``R`` replications of one configuration on a shared checkpoint grid.

    Statistic arrays are ``(R, K)`` for scalar models and ``(R, K, d)`` for
    multicolor urns.  ``U`` and ``V`` are the limit variances evaluated at each
    replication's terminal proxy: ``(R,)`` or ``(R, d, d)``.
    """

    checkpoints: np.ndarray
    C: np.ndarray
    D: np.ndarray
    W: np.ndarray
    z_proxy: np.ndarray
    U: np.ndarray
    V: np.ndarray
    proxy_horizon: int = 0
    a_stat: np.ndarray | None = None
    b_stat: np.ndarray | None = None
    c_stat: np.ndarray | None = None
    d_stat: np.ndarray | None = None
    v_tail: np.ndarray | None = None
    v_cesaro: np.ndarray | None = None
    n_over_s: np.ndarray | None = None
    mean_sq_increment: np.ndarray | None = None
    m: float = float("nan")
    meta: dict = field(default_factory=dict)

    @property
    def R(self) -> int:
        return self.C.shape[0]

    @property
    def scalar(self) -> bool:
        return self.U.ndim == 1

    def index(self, n: int) -> int:
        hits = np.flatnonzero(self.checkpoints == n)
        if hits.size == 0:
            raise KeyError(f"checkpoint {n} not in ensemble grid {self.checkpoints.tolist()}")
        return int(hits[0])

    def column(self, name: str, n: int, color: int | None = None) -> np.ndarray:
        arr = getattr(self, name)
        if arr is None:
            raise ValueError(f"ensemble has no {name} data (dense diagnostics not computed)")
        col = arr[:, self.index(n)]
        if col.ndim == 2:
            col = col[:, 0 if color is None else color]
        return col

    def variance(self, which: str, color: int | None = None) -> np.ndarray:
        def pick(a):
            if self.scalar:
                return a
            j = 0 if color is None else color
            return a[:, j, j]
        if which == "U":
            return pick(self.U)
        if which == "V":
            return pick(self.V)
        if which == "U+V":
            return pick(self.U) + pick(self.V)
        raise ValueError(which)

    def z(self, color: int | None = None) -> np.ndarray:
        return self.z_proxy if self.z_proxy.ndim == 1 else self.z_proxy[:, 0 if color is None else color]

    def select(self, statistic: str, n: int, color: int | None = None):
        """(values, limit variances, z proxies) for statistic ``C``, ``D`` or ``W`` at ``n``."""
        which = {"C": "U", "D": "V", "W": "U+V"}[statistic]
        return self.column(statistic, n, color), self.variance(which, color), self.z(color)


def simulate_path(config, key: StreamKey, dense: bool = False, validate: bool = True):
    if isinstance(config, PDConfig):
        return pd_simulate(config, key, dense=dense)
    return simulate(config, key, dense=dense, validate=validate)


def _worker(config, seed, dense, policy, validate, dump):
    def run(rep):
        traj = simulate_path(config, StreamKey(seed, rep), dense=dense, validate=validate)
        series = clt_series(traj, policy)
        lv = limit_variance_for(config, series.z_proxy)
        dz2 = None
        if dense:
            z = traj.z_dense
            if z.ndim == 2 and is_scalar_model(config):
                z = z[:, 0]
            dz2 = (z[:-1] - z[1:]) ** 2
        return series, lv, dz2, (traj if rep < dump else None)
    return run


def build_ensemble(config, replications: int, seed: int, threads: int | None = None, dense: bool = True,
                   policy: ZProxyPolicy = ZProxyPolicy(), validate: bool = True, dump: int = 0,
                   on_dump=None, chunk: int = 64) -> Ensemble:
    """Simulate ``replications`` paths (replication ids ``0..R-1``) and stack their statistics.

    Work is spread over ``threads`` workers; results are folded strictly in
    replication order, so every array is independent of the thread count.
    ``on_dump(rep, trajectory)`` is called for the first ``dump`` paths.
    """
    if replications < 1:
        raise ValueError("need at least one replication")
    if validate and not isinstance(config, PDConfig):
        _ensure_valid(config.schedule)
    threads = threads or os.cpu_count() or 1
    run = _worker(config, seed, dense, policy, False, dump)

    series: list[CLTSeries] = []
    lvs = []
    dz_sum = None
    with ThreadPoolExecutor(max_workers=threads) as pool:
        for start in range(0, replications, chunk):
            reps = range(start, min(replications, start + chunk))
            for rep, (s, lv, dz2, traj) in zip(reps, pool.map(run, reps)):
                series.append(s)
                lvs.append(lv)
                if dz2 is not None:
                    dz_sum = dz2.copy() if dz_sum is None else dz_sum + dz2
                if traj is not None and on_dump is not None:
                    on_dump(rep, traj)

    def stack(name):
        return np.stack([getattr(s, name) for s in series])

    scalar = is_scalar_model(config)
    U = np.array([lv.U for lv in lvs], dtype=float)
    V = np.array([lv.V for lv in lvs], dtype=float)
    first = series[0]
    m = float("nan") if isinstance(config, PDConfig) else config.schedule.m
    ens = Ensemble(
        checkpoints=first.checkpoints.copy(),
        C=stack("C"), D=stack("D"), W=stack("W"),
        z_proxy=np.array([s.z_proxy for s in series], dtype=float),
        U=U, V=V, proxy_horizon=first.proxy_horizon,
        n_over_s=None if first.n_over_s is None else stack("n_over_s"),
        mean_sq_increment=None if dz_sum is None else dz_sum / replications,
        m=m,
        meta={"seed": seed, "replications": replications, "dense": dense, "scalar": scalar},
    )
    for name in _STATS[3:]:
        setattr(ens, name, stack(name))
    return ens
