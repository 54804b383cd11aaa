"""Ensemble-level checks of stable convergence to Gaussian variance mixtures.

Stability is probed by conditioning on events measurable with respect to the
limit: the ensemble is cut into equal-count quantile slices of the terminal
proxy ``Z_N`` and every statistic, studentized by its own limit variance, must
look standard normal inside every slice, not just pooled.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numba
import numpy as np
from scipy import integrate, stats

from .ensemble import Ensemble
from .pd import PDConfig, pd_continue, pd_state_at
from .rng import Role, StreamKey, derive_stream
from .stats import limit_variance_for
from .urn import TwoColorConfig, continue_urn, state_at

DEGENERATE_VARIANCE = 1e-10
DEFAULT_SLICES = 8
MIN_SLICE = 200
ALPHA = 0.01


def ks_distance(sample, reference) -> float:
    """Sup distance between the empirical CDF of ``sample`` and ``reference``.

    ``reference`` is either a continuous CDF callable or another sample.
    """
    sample = np.asarray(sample, dtype=float)
    if sample.size == 0:
        raise ValueError("sample must be nonempty")
    if callable(reference):
        return float(stats.ks_1samp(sample, reference).statistic)
    return float(stats.ks_2samp(sample, np.asarray(reference, dtype=float)).statistic)


def ks_threshold(count: int, alpha: float = ALPHA, tests: int = 1) -> float:
    """Exact finite-sample Kolmogorov critical value at level ``alpha / tests``."""
    return float(stats.kstwo.isf(alpha / tests, count))


def quantile_slices(z: np.ndarray, n_slices: int = DEFAULT_SLICES, min_count: int = MIN_SLICE):
    """Equal-count index bins of ``z``; fewer bins when the ensemble is too small."""
    k = max(1, min(n_slices, z.size // min_count))
    order = np.argsort(z, kind="stable")
    return np.array_split(order, k)


@dataclass
class SliceResult:
    bin: int
    z_low: float
    z_high: float
    count: int
    route: str
    statistic: float
    threshold: float
    passed: bool
    excluded: int = 0
    reason: str = ""


@dataclass
class SliceTestReport:
    name: str
    statistic: str
    n: int
    color: int | None
    slices: list[SliceResult]
    pooled_ks: float
    pooled_threshold: float
    alpha: float
    overall_pass: bool
    extra: dict = field(default_factory=dict)

    @property
    def max_ks(self) -> float:
        vals = [s.statistic for s in self.slices if s.route == "ks"]
        return max(vals) if vals else float("nan")

    def to_dict(self) -> dict:
        return {
            "name": self.name, "statistic": self.statistic, "n": self.n, "color": self.color,
            "slices": [{"bin": s.bin, "count": s.count, "ks": s.statistic, "pass": s.passed, "route": s.route,
                        "threshold": s.threshold, "z_range": [s.z_low, s.z_high], "excluded": s.excluded,
                        "reason": s.reason} for s in self.slices],
            "pooled_ks": self.pooled_ks,
            "thresholds": {"alpha": self.alpha, "pooled": self.pooled_threshold,
                           "per_slice": [s.threshold for s in self.slices]},
            "overall_pass": self.overall_pass,
            **self.extra,
        }


def studentized_test(ensemble: Ensemble, n: int, statistic: str = "D", color: int | None = None,
                     n_slices: int = DEFAULT_SLICES, alpha: float = ALPHA, min_count: int = MIN_SLICE,
                     magnitude_bound: float | None = None) -> SliceTestReport:
    """Slice-wise KS test of ``statistic / sqrt(limit variance)`` against N(0, 1).

    Per-slice critical values are Bonferroni-corrected over the slices.  A
    slice whose limit variances all vanish is a degenerate kernel: it is routed
    to a magnitude test requiring the 95th percentile of ``|statistic|`` to be
    below ``magnitude_bound`` (default ``3 / sqrt(n)``).
    """
    values, var, z = ensemble.select(statistic, n, color)
    if np.any(~np.isfinite(values)):
        raise ValueError(f"{statistic} at n={n} has missing values (check the Z-proxy policy)")
    if np.any(var < -1e-12):
        raise ValueError("negative limit variance")
    var = np.maximum(var, 0.0)
    bound = 3.0 / math.sqrt(n) if magnitude_bound is None else magnitude_bound
    bins = quantile_slices(z, n_slices, min_count)
    k = len(bins)
    results = []
    pooled = []
    for b, idx in enumerate(bins):
        v = var[idx]
        zlo, zhi = float(z[idx].min()), float(z[idx].max())
        if v.max() < DEGENERATE_VARIANCE:
            p95 = float(np.percentile(np.abs(values[idx]), 95))
            results.append(SliceResult(b, zlo, zhi, idx.size, "magnitude", p95, bound, p95 < bound,
                                       reason="degenerate kernel: limit variance is 0"))
            continue
        keep = v >= DEGENERATE_VARIANCE
        t = values[idx][keep] / np.sqrt(v[keep])
        pooled.append(t)
        ks = ks_distance(t, stats.norm.cdf)
        thr = ks_threshold(t.size, alpha, k)
        results.append(SliceResult(b, zlo, zhi, idx.size, "ks", ks, thr, ks <= thr,
                                   excluded=int((~keep).sum()),
                                   reason="" if keep.all() else "replications with zero limit variance dropped"))
    if pooled:
        allt = np.concatenate(pooled)
        pooled_ks, pooled_thr = ks_distance(allt, stats.norm.cdf), ks_threshold(allt.size, alpha)
    else:
        pooled_ks, pooled_thr = float("nan"), float("nan")
    return SliceTestReport(f"studentized_{statistic}", statistic, n, color, results, pooled_ks, pooled_thr,
                           alpha, all(r.passed for r in results))


@numba.njit(cache=True)
def _dependence(ry):
    """max_i |F(x_i, y_i) - F_x(x_i) F_y(y_i)| with ``ry`` the y-ranks (1..n) listed in x order."""
    n = ry.shape[0]
    tree = np.zeros(n + 1)
    best = 0.0
    for i in range(n):
        r = ry[i]
        j = r
        while j <= n:
            tree[j] += 1.0
            j += j & (-j)
        c = 0.0
        j = r
        while j > 0:
            c += tree[j]
            j -= j & (-j)
        diff = abs(c / n - (i + 1.0) * r / (n * n))
        if diff > best:
            best = diff
    return best


def _ranks_in_x_order(x, y):
    ox = np.argsort(x, kind="stable")
    ry = np.empty(y.size, dtype=np.int64)
    ry[np.argsort(y, kind="stable")] = np.arange(1, y.size + 1)
    return ry[ox]


@dataclass
class JointSliceResult:
    bin: int
    count: int
    correlation: float
    correlation_threshold: float
    dependence: float
    dependence_pvalue: float
    passed: bool


@dataclass
class JointTestReport:
    n: int
    color: int | None
    slices: list[JointSliceResult]
    alpha: float
    permutations: int
    seed: int
    overall_pass: bool

    @property
    def max_abs_correlation(self) -> float:
        return max(abs(s.correlation) for s in self.slices)

    def to_dict(self) -> dict:
        return {"name": "joint_product", "n": self.n, "color": self.color,
                "slices": [asdict(s) | {"pass": s.passed} for s in self.slices],
                "thresholds": {"alpha": self.alpha, "permutations": self.permutations},
                "seeds": [self.seed], "overall_pass": self.overall_pass}


def joint_product_test(ensemble: Ensemble, n: int, color: int | None = None, n_slices: int = DEFAULT_SLICES,
                       alpha: float = ALPHA, min_count: int = MIN_SLICE, permutations: int = 1999,
                       seed: int = 0) -> JointTestReport:
    """Within each proxy slice, studentized ``C_n`` and ``D_n`` must be uncorrelated and independent.

    Correlation uses the Fisher z bound; independence uses the maximal gap
    between the joint empirical CDF and the product of its marginals, with a
    permutation null (``BRANCH`` streams keyed by slice).  Both are
    Bonferroni-corrected over slices.
    """
    c, u, z = ensemble.select("C", n, color)
    d, v, _ = ensemble.select("D", n, color)
    bins = quantile_slices(z, n_slices, min_count)
    k = len(bins)
    if 1.0 / (permutations + 1.0) > alpha / k:
        raise ValueError(f"{permutations} permutations cannot reach p <= {alpha / k:g}")
    crit = stats.norm.isf(alpha / (2 * k))
    out = []
    for b, idx in enumerate(bins):
        keep = (u[idx] >= DEGENERATE_VARIANCE) & (v[idx] >= DEGENERATE_VARIANCE)
        sc = c[idx][keep] / np.sqrt(u[idx][keep])
        sd = d[idx][keep] / np.sqrt(v[idx][keep])
        m = sc.size
        if m < 4:
            out.append(JointSliceResult(b, m, float("nan"), float("nan"), float("nan"), float("nan"), True))
            continue
        r = float(np.corrcoef(sc, sd)[0, 1])
        r_thr = math.tanh(crit / math.sqrt(m - 3))
        ry = _ranks_in_x_order(sc, sd)
        obs = _dependence(ry)
        rng = derive_stream(StreamKey(seed, b, Role.BRANCH, n))
        null = np.empty(permutations)
        perm = ry.copy()
        for i in range(permutations):
            rng.shuffle(perm)
            null[i] = _dependence(perm)
        pval = (1.0 + np.sum(null >= obs)) / (permutations + 1.0)
        ok = abs(r) <= r_thr and pval > alpha / k
        out.append(JointSliceResult(b, m, r, r_thr, float(obs), float(pval), bool(ok)))
    return JointTestReport(n, color, out, alpha, permutations, seed, all(s.passed for s in out))


# -- conditional law by branching -------------------------------------------


def _normal_expectation(f: Callable, var: float) -> float:
    if var <= 0:
        return float(f(np.array([0.0]))[0])
    sd = math.sqrt(var)
    val, _ = integrate.quad(lambda x: float(f(np.array([x]))[0]) * stats.norm.pdf(x, scale=sd),
                            -12 * sd, 12 * sd, points=[-2.0, 0.0, 2.0] if 2.0 < 12 * sd else None, limit=200)
    return val


def default_test_functions(t_grid=(0.5, 1.0, 2.0), clip: float = 2.0, powers=(1, 2)):
    fs = {}
    for t in t_grid:
        fs[f"cos({t}x)"] = (lambda x, t=t: np.cos(t * x))
        fs[f"sin({t}x)"] = (lambda x, t=t: np.sin(t * x))
    for p in powers:
        fs[f"clip(x,{clip})^{p}"] = (lambda x, p=p: np.clip(x, -clip, clip) ** p)
    return fs


@dataclass
class ConditionalEstimate:
    name: str
    estimate: float
    stderr: float
    reference: float

    @property
    def zscore(self) -> float:
        diff = self.estimate - self.reference
        if self.stderr < 1e-12:
            return 0.0 if abs(diff) < 1e-12 else math.copysign(math.inf, diff)
        return diff / self.stderr


@dataclass
class ConditionalLawReport:
    prefix_n: int
    horizon: int
    z_n: float
    variance: float
    branches: int
    partial: bool
    estimates: list[ConditionalEstimate]

    def within(self, k_se: float = 3.0, names=None) -> bool:
        return all(abs(e.zscore) <= k_se for e in self.estimates if names is None or e.name in names)


def nested_conditional_law(config, n: int, branches: int, horizon: int, key: StreamKey,
                           functions: dict | None = None, color: int = 0,
                           max_steps: int | None = None) -> ConditionalLawReport:
    """Branching estimate of ``E(f(D_n) | G_n)`` for one frozen prefix.

    The prefix is the path of ``key`` up to time ``n``; branch ``j`` continues
    it to ``horizon`` on stream ``(key.master_seed, key.replication_id, BRANCH,
    j)`` and yields ``D_n = sqrt(n) (Z_n - Z_N^(j))``.  Each estimate is
    compared with the N(0, V(Z_n)) expectation of ``f``.  When
    ``branches * (horizon - n)`` exceeds ``max_steps`` the branch count is cut
    and the report is marked partial (its standard errors grow accordingly).
    """
    if branches < 2 or horizon <= n:
        raise ValueError("need branches >= 2 and horizon > n")
    functions = default_test_functions() if functions is None else functions
    steps = horizon - n
    partial = False
    if max_steps is not None and branches * steps > max_steps:
        branches = max(2, max_steps // steps)
        partial = True

    if isinstance(config, PDConfig):
        counts = pd_state_at(config, key, n)
        z_n = _pd_mass(config, counts, n)
        ends = np.array([pd_continue(config, counts, steps,
                                     derive_stream(StreamKey(key.master_seed, key.replication_id, Role.BRANCH, j)))
                         for j in range(branches)])
        var = z_n * (1 - z_n)
    else:
        w = state_at(config, key, n)
        S = w.sum()
        z_vec = w / S
        z_n = float(z_vec[color])
        ends = np.empty(branches)
        for j in range(branches):
            rng = derive_stream(StreamKey(key.master_seed, key.replication_id, Role.BRANCH, j))
            wf = continue_urn(w, config.schedule, n + 1, steps, rng)
            ends[j] = wf[color] / wf.sum()
        lv = limit_variance_for(config, z_vec[0] if isinstance(config, TwoColorConfig) else z_vec)
        var = float(lv.V) if np.ndim(lv.V) == 0 else float(lv.V[color, color])

    D = math.sqrt(n) * (z_n - ends)
    estimates = []
    for name, f in functions.items():
        vals = np.asarray(f(D), dtype=float)
        est = float(np.mean(vals))
        se = float(np.std(vals, ddof=1) / math.sqrt(branches))
        estimates.append(ConditionalEstimate(name, est, se, _normal_expectation(f, var)))
    return ConditionalLawReport(n, horizon, z_n, var, branches, partial, estimates)


def _pd_mass(config: PDConfig, counts, n):
    from .pd import pd_predictive
    return pd_predictive(np.rint(counts).astype(int), n, config)


# -- kernel samples, atoms, synthetic ensembles ------------------------------


@dataclass
class KernelSample:
    draws: np.ndarray
    clamped: int


def kernel_sample(ensemble: Ensemble, size: int, key: StreamKey, which: str = "V",
                  color: int | None = None) -> KernelSample:
    """Draws from the variance mixture: resample a replication, then N(0, its limit variance)."""
    var = ensemble.variance(which, color)
    rng = derive_stream(key)
    idx = rng.integers(0, var.size, size)
    v = var[idx]
    if np.any(v < -1e-12):
        raise ValueError("limit variance is negative beyond rounding")
    clamped = int(np.sum(v < 0))
    return KernelSample(rng.standard_normal(size) * np.sqrt(np.maximum(v, 0.0)), clamped)


@dataclass
class AtomReport:
    max_mass: float
    location: float
    width: float
    flagged: bool


def atomlessness_diag(z, width: float = 1e-3, soft_threshold: float = 0.01) -> AtomReport:
    """Largest fraction of terminal proxies inside any window ``[z_i, z_i + width]``."""
    z = np.sort(np.asarray(z.z() if isinstance(z, Ensemble) else z, dtype=float))
    counts = np.searchsorted(z, z + width, side="right") - np.arange(z.size)
    i = int(np.argmax(counts))
    mass = counts[i] / z.size
    return AtomReport(float(mass), float(z[i]), width, bool(mass > soft_threshold))


def synthetic_ensemble(kind: str, R: int, key: StreamKey, n: int = 1000) -> Ensemble:
    """Synthetic ensembles with a two-point variance ``V = 0.25`` (``z < 1/2``) or ``1``.

    ``matched``: C, D independent with exact N(0, U), N(0, V) kernels (U = V).
    ``adversarial``: D is N(0, 1) regardless of V, so only the pooled law can match.
    ``comonotone``: C = D, studentized marginals correct but fully dependent.
    """
    rng = derive_stream(key)
    z = rng.random(R)
    V = np.where(z < 0.5, 0.25, 1.0)
    U = V.copy()
    g1 = rng.standard_normal(R)
    g2 = rng.standard_normal(R)
    if kind == "matched":
        C, D = g1 * np.sqrt(U), g2 * np.sqrt(V)
    elif kind == "adversarial":
        C, D = g1 * np.sqrt(U), g2
    elif kind == "comonotone":
        C = D = g2 * np.sqrt(V)
    else:
        raise ValueError(f"unknown synthetic ensemble {kind!r}")
    col = lambda a: np.asarray(a, dtype=float).reshape(R, 1)
    return Ensemble(np.array([n]), col(C), col(D), col(C + D), z, U, V, meta={"synthetic": kind})


# -- ensemble summaries used by acceptance runs ------------------------------


def median_ratio(ensemble: Ensemble, stat: str, n: int, which: str, color: int | None = None) -> float:
    """Median over replications of ``stat / limit variance`` (NaN-free replications only)."""
    vals = ensemble.column(stat, n, color)
    ref = ensemble.variance(which, color)
    ok = ref > DEGENERATE_VARIANCE
    return float(np.median(vals[ok] / ref[ok]))


def covariance_vs_mean_v(ensemble: Ensemble, n: int):
    """Empirical covariance of the ``D_n`` vectors and the ensemble mean of the ``V`` matrices."""
    D = ensemble.D[:, ensemble.index(n), :]
    return np.cov(D, rowvar=False, bias=False), ensemble.V.mean(axis=0)
