"""Reinforcement laws and time-indexed schedules.

A law is sampled by inverse CDF from uniforms.  Uniform consumption per draw is
fixed by the law kind: constant laws consume none, discrete and table laws
consume exactly one.  Schedules lay reinforcement uniforms out positionally
(step ``k``, color slot ``j`` -> flat index ``(k - 1) * d + j`` of the
reinforcement stream), so a time-varying schedule stays aligned no matter
which law is active at each step.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numba
import numpy as np

from .errors import LawError

TABLE_SIZE = 4096
_MOMENT_RTOL = 1e-9


class LawKind(enum.IntEnum):
    CONSTANT = 0
    DISCRETE = 1
    TABLE = 2


@numba.njit(nogil=True, cache=True)
def _fill_quantiles(kind, values, cdf, u, out):
    n = u.shape[0]
    if kind == 0:
        c = values[0]
        for i in range(n):
            out[i] = c
    elif kind == 1:
        last = values.shape[0] - 1
        for i in range(n):
            x = u[i]
            j = 0
            while j < last and x >= cdf[j]:
                j += 1
            out[i] = values[j]
    else:
        g = values.shape[0] - 1
        for i in range(n):
            x = u[i] * g
            j = int(x)
            if j >= g:
                out[i] = values[g]
            else:
                f = x - j
                out[i] = values[j] + f * (values[j + 1] - values[j])


def _close(a, b, rtol=_MOMENT_RTOL):
    return abs(a - b) <= rtol * max(abs(a), abs(b), 1e-300)


@dataclass(frozen=True, eq=False)
class ReinforcementLaw:
    """Nonnegative reinforcement law with validated first two moments.

    Use the ``constant``, ``discrete``, ``from_quantile_table`` or ``from_ppf``
    constructors rather than the raw initializer.
    """

    kind: LawKind
    values: np.ndarray
    cdf: np.ndarray
    declared_mean: float
    declared_second_moment: float

    @classmethod
    def constant(cls, value: float) -> "ReinforcementLaw":
        value = float(value)
        if not math.isfinite(value) or value < 0:
            raise LawError(f"constant reinforcement must be finite and >= 0, got {value}")
        return cls(LawKind.CONSTANT, np.array([value]), np.empty(0), value, value * value)

    @classmethod
    def discrete(cls, values: Sequence[float], probs: Sequence[float],
                 mean: float | None = None, second_moment: float | None = None) -> "ReinforcementLaw":
        v = np.asarray(values, dtype=float)
        p = np.asarray(probs, dtype=float)
        if v.ndim != 1 or v.shape != p.shape or v.size == 0:
            raise LawError("discrete law needs matching nonempty value and probability lists")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise LawError("discrete support values must be finite and >= 0")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise LawError("discrete probabilities must be >= 0 and sum to 1")
        keep = p > 0
        v, p = v[keep], p[keep]
        order = np.argsort(v, kind="stable")
        v, p = v[order], p[order]
        cdf = np.cumsum(p)
        cdf[-1] = 1.0
        actual_mean = math.fsum(v * p)
        actual_m2 = math.fsum(v * v * p)
        return cls._checked(LawKind.DISCRETE, v, cdf, actual_mean, actual_m2, mean, second_moment)

    @classmethod
    def from_quantile_table(cls, table: Sequence[float], mean: float | None = None,
                            second_moment: float | None = None) -> "ReinforcementLaw":
        """Law of ``q(U)`` where ``q`` linearly interpolates ``table`` on an even grid of [0, 1]."""
        q = np.asarray(table, dtype=float)
        if q.ndim != 1 or q.size < 2:
            raise LawError("quantile table needs at least two points")
        if not np.all(np.isfinite(q)) or q[0] < 0 or np.any(np.diff(q) < 0):
            raise LawError("quantile table must be finite, nondecreasing and >= 0")
        a, b = q[:-1], q[1:]
        h = 1.0 / (q.size - 1)
        actual_mean = h * math.fsum((a + b) / 2.0)
        actual_m2 = h * math.fsum((a * a + a * b + b * b) / 3.0)
        return cls._checked(LawKind.TABLE, q, np.empty(0), actual_mean, actual_m2, mean, second_moment)

    @classmethod
    def from_ppf(cls, ppf: Callable[[np.ndarray], np.ndarray], size: int = TABLE_SIZE) -> "ReinforcementLaw":
        """Tabulate a bounded law from its quantile function (e.g. ``scipy.stats.uniform(1, 2).ppf``)."""
        grid = np.linspace(0.0, 1.0, size)
        return cls.from_quantile_table(np.asarray(ppf(grid), dtype=float))

    @classmethod
    def _checked(cls, kind, values, cdf, actual_mean, actual_m2, mean, second_moment):
        if mean is not None and not _close(mean, actual_mean):
            raise LawError(f"declared mean {mean} does not match actual mean {actual_mean}")
        if second_moment is not None and not _close(second_moment, actual_m2):
            raise LawError(f"declared second moment {second_moment} does not match actual {actual_m2}")
        return cls(kind, values, cdf,
                   float(actual_mean if mean is None else mean),
                   float(actual_m2 if second_moment is None else second_moment))

    @property
    def uniforms_per_draw(self) -> int:
        return 0 if self.kind == LawKind.CONSTANT else 1

    @property
    def support_size(self) -> int:
        return self.values.size if self.kind != LawKind.TABLE else math.inf

    def atoms(self):
        """(value, probability) pairs of a constant or discrete law."""
        if self.kind == LawKind.CONSTANT:
            return [(float(self.values[0]), 1.0)]
        if self.kind == LawKind.DISCRETE:
            p = np.diff(np.concatenate(([0.0], self.cdf)))
            return list(zip(self.values.tolist(), p.tolist()))
        raise LawError("table laws have no finite atom list")

    def quantile(self, u) -> np.ndarray:
        u = np.ascontiguousarray(u, dtype=float)
        out = np.empty(u.shape)
        _fill_quantiles(int(self.kind), self.values, self.cdf, u.reshape(-1), out.reshape(-1))
        return out

    def fill(self, u: np.ndarray, out: np.ndarray) -> None:
        _fill_quantiles(int(self.kind), self.values, self.cdf, u, out)

    def to_dict(self) -> dict:
        if self.kind == LawKind.CONSTANT:
            return {"kind": "constant", "value": float(self.values[0])}
        if self.kind == LawKind.DISCRETE:
            vals, probs = zip(*self.atoms())
            return {"kind": "discrete", "values": list(vals), "probs": list(probs)}
        return {"kind": "table", "quantiles": self.values.tolist()}


def sample_reinforcement(law: ReinforcementLaw, source: np.random.Generator) -> float:
    """One draw from ``law``; consumes ``law.uniforms_per_draw`` uniforms from ``source``."""
    if law.kind == LawKind.CONSTANT:
        return float(law.values[0])
    return float(law.quantile(np.array([source.random()]))[0])


@dataclass(frozen=True)
class ColorSchedule:
    tail: ReinforcementLaw
    early: Mapping[int, ReinforcementLaw] = field(default_factory=dict)

    def law_at(self, n: int) -> ReinforcementLaw:
        return self.early.get(n, self.tail)


@dataclass(frozen=True)
class Violation:
    kind: str
    message: str
    n: int | None = None
    color: int | None = None


@dataclass(frozen=True)
class ReinforcementSchedule:
    """Per-color reinforcement laws indexed by time, with a repeated tail law.

    ``moment_exponent`` is recorded metadata only: every supported law is
    bounded, so all its moments are finite.
    """

    colors: tuple[ColorSchedule, ...]
    moment_exponent: float = 3.0
    pairing: str = "independent"

    @classmethod
    def iid(cls, laws: Sequence[ReinforcementLaw], **kw) -> "ReinforcementSchedule":
        return cls(tuple(ColorSchedule(law) for law in laws), **kw)

    @property
    def d(self) -> int:
        return len(self.colors)

    @property
    def m(self) -> float:
        return self.colors[0].tail.declared_mean

    @property
    def limit_second_moments(self) -> tuple[float, ...]:
        return tuple(c.tail.declared_second_moment for c in self.colors)

    @property
    def early_indices(self) -> list[int]:
        return sorted(set().union(*(c.early.keys() for c in self.colors)))

    @property
    def all_constant(self) -> bool:
        return all(
            c.tail.kind == LawKind.CONSTANT and all(l.kind == LawKind.CONSTANT for l in c.early.values())
            for c in self.colors
        )

    def law_at(self, n: int, color: int) -> ReinforcementLaw:
        return self.colors[color].law_at(n)

    def block(self, rng: np.random.Generator | None, start_n: int, steps: int) -> np.ndarray:
        """Reinforcements for steps ``start_n .. start_n + steps - 1``, shape ``(steps, d)``.

        All-constant schedules never touch ``rng``.
        """
        d = self.d
        out = np.empty((steps, d))
        if self.all_constant:
            for j, c in enumerate(self.colors):
                out[:, j] = c.tail.values[0]
            u = None
        else:
            u = rng.random((steps, d))
        for j, c in enumerate(self.colors):
            if u is not None:
                col = 0 if self.pairing == "comonotone" else j
                c.tail.fill(np.ascontiguousarray(u[:, col]), out[:, j])
            for n, law in c.early.items():
                k = n - start_n
                if 0 <= k < steps:
                    uu = 0.0 if u is None else u[k, 0 if self.pairing == "comonotone" else j]
                    out[k, j] = law.quantile(np.array([uu]))[0]
        return out

    def sample_at(self, n: int, rng: np.random.Generator, size: int) -> np.ndarray:
        """``size`` independent reinforcement vectors for time ``n``, shape ``(size, d)``."""
        d = self.d
        u = None if self.all_constant else rng.random((size, d))
        out = np.empty((size, d))
        for j in range(d):
            law = self.law_at(n, j)
            if u is None:
                out[:, j] = law.values[0]
            else:
                col = 0 if self.pairing == "comonotone" else j
                law.fill(np.ascontiguousarray(u[:, col]), out[:, j])
        return out

    def to_dict(self) -> dict:
        return {
            "colors": [
                {"tail": c.tail.to_dict(), "early": {str(n): l.to_dict() for n, l in sorted(c.early.items())}}
                for c in self.colors
            ],
            "moment_exponent": self.moment_exponent,
            "pairing": self.pairing,
        }


def validate_schedule(s: ReinforcementSchedule) -> list[Violation]:
    out: list[Violation] = []
    if s.d < 2:
        out.append(Violation("colors", "at least two colors are required"))
        return out
    if s.pairing not in ("independent", "comonotone"):
        out.append(Violation("pairing", f"unknown pairing {s.pairing!r}"))
    if not s.moment_exponent > 2:
        out.append(Violation("moment_exponent", "moment exponent u must exceed 2"))

    def check_means(n, laws):
        ref = laws[0].declared_mean
        for j, law in enumerate(laws[1:], start=1):
            if not _close(law.declared_mean, ref, 1e-12):
                out.append(Violation(
                    "equal_mean",
                    f"color {j} mean {law.declared_mean} differs from color 0 mean {ref}"
                    + (" in the tail law" if n is None else f" at n={n}"),
                    n=n, color=j,
                ))

    for n in s.early_indices:
        if n < 1:
            out.append(Violation("time_index", f"time index {n} must be >= 1", n=n))
            continue
        check_means(n, [s.law_at(n, j) for j in range(s.d)])
    check_means(None, [c.tail for c in s.colors])

    for j, c in enumerate(s.colors):
        for law in [c.tail, *c.early.values()]:
            if not (math.isfinite(law.declared_mean) and math.isfinite(law.declared_second_moment)):
                out.append(Violation("moments", "moments must be finite", color=j))
    if not s.m > 0:
        out.append(Violation("limit_mean", "m must be positive (limit mean reinforcement is 0)"))
    return out
