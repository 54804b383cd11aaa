import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from urnclt.errors import LawError
from urnclt.rng import StreamKey, derive_stream
from urnclt.schedule import (ColorSchedule, LawKind, ReinforcementLaw, ReinforcementSchedule,
                             sample_reinforcement, validate_schedule)

TWO_POINT = ReinforcementLaw.discrete([1, 3], [0.5, 0.5])


def test_constant_law_consumes_nothing():
    rng = derive_stream(StreamKey(1))
    assert sample_reinforcement(ReinforcementLaw.constant(2), rng) == 2.0
    assert rng.random() == derive_stream(StreamKey(1)).random()


def test_discrete_consumes_one_uniform():
    a, b = derive_stream(StreamKey(1)), derive_stream(StreamKey(1))
    sample_reinforcement(TWO_POINT, a)
    b.random()
    assert a.random() == b.random()


def test_two_point_moments_by_sampling():
    x = TWO_POINT.quantile(derive_stream(StreamKey(3)).random(10**6))
    assert 1.994 <= x.mean() <= 2.006
    assert 4.98 <= (x * x).mean() <= 5.02


def test_declared_moments_checked():
    assert TWO_POINT.declared_mean == 2.0 and TWO_POINT.declared_second_moment == 5.0
    with pytest.raises(LawError):
        ReinforcementLaw.discrete([1, 3], [0.5, 0.5], mean=2.1)
    with pytest.raises(LawError):
        ReinforcementLaw.discrete([1, 3], [0.5, 0.5], second_moment=4.0)
    ReinforcementLaw.discrete([1, 3], [0.5, 0.5], mean=2.0, second_moment=5.0)


@pytest.mark.parametrize("bad", [
    lambda: ReinforcementLaw.constant(-1),
    lambda: ReinforcementLaw.discrete([-1, 2], [0.5, 0.5]),
    lambda: ReinforcementLaw.discrete([1, 2], [0.7, 0.7]),
    lambda: ReinforcementLaw.from_quantile_table([2, 1]),
    lambda: ReinforcementLaw.from_quantile_table([-0.5, 1]),
])
def test_invalid_laws_rejected(bad):
    with pytest.raises(LawError):
        bad()


def test_table_moments_match_quadrature():
    # quantile function of a nonuniform bounded law
    ppf = lambda u: 1 + 2 * np.asarray(u) ** 2
    law = ReinforcementLaw.from_ppf(ppf)
    # Simpson on segment ends and midpoints is exact for the piecewise linear
    # quantile and its square
    u = np.linspace(0, 1, 2 * (law.values.size - 1) + 1)
    q = law.quantile(u)
    m1 = integrate.simpson(q, x=u)
    m2 = integrate.simpson(q * q, x=u)
    assert math.isclose(law.declared_mean, m1, rel_tol=1e-9)
    assert math.isclose(law.declared_second_moment, m2, rel_tol=1e-9)
    # the table is fine enough to track the underlying law closely
    assert math.isclose(law.declared_mean, 5 / 3, rel_tol=1e-6)


def test_table_sampling_is_interpolation():
    law = ReinforcementLaw.from_quantile_table([0.0, 1.0, 4.0])
    assert np.allclose(law.quantile([0.0, 0.25, 0.5, 0.75]), [0.0, 0.5, 1.0, 2.5])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 10), st.floats(0.01, 1)), min_size=1, max_size=5))
def test_discrete_moments_property(atoms):
    v = [a for a, _ in atoms]
    w = np.array([p for _, p in atoms])
    p = w / w.sum()
    p[-1] = 1 - p[:-1].sum()
    if p[-1] < 0:
        return
    law = ReinforcementLaw.discrete(v, p)
    assert math.isclose(law.declared_mean, math.fsum(np.array(v) * p), rel_tol=1e-9, abs_tol=1e-12)
    x = law.quantile(np.linspace(0, 1, 1001, endpoint=False))
    assert x.min() >= 0


def test_quantile_of_discrete_matches_cdf():
    law = ReinforcementLaw.discrete([3, 1, 2], [0.2, 0.5, 0.3])
    assert law.quantile([0.0, 0.49, 0.5, 0.79, 0.8, 0.999]).tolist() == [1, 1, 2, 2, 3, 3]


def _kinds(v):
    return sorted(x.kind for x in v)


def test_validate_clean_schedule():
    c = ReinforcementLaw.constant(2)
    assert validate_schedule(ReinforcementSchedule.iid([c, c])) == []


def test_validate_equal_mean_violation_at_time_one():
    two, three = ReinforcementLaw.constant(2), ReinforcementLaw.constant(3)
    s = ReinforcementSchedule((ColorSchedule(two, {1: two}), ColorSchedule(two, {1: three})))
    v = validate_schedule(s)
    assert len(v) == 1
    assert (v[0].kind, v[0].n, v[0].color) == ("equal_mean", 1, 1)


def test_validate_zero_limit_mean():
    z = ReinforcementLaw.constant(0)
    v = validate_schedule(ReinforcementSchedule.iid([z, z]))
    assert any("m must be positive" in x.message for x in v)


def test_validate_moment_exponent_and_colors():
    c = ReinforcementLaw.constant(1)
    assert _kinds(validate_schedule(ReinforcementSchedule.iid([c, c], moment_exponent=2.0))) == ["moment_exponent"]
    assert _kinds(validate_schedule(ReinforcementSchedule.iid([c]))) == ["colors"]


def test_block_layout_is_positional():
    s = ReinforcementSchedule.iid([TWO_POINT, TWO_POINT])
    full = s.block(derive_stream(StreamKey(4)), 1, 100)
    again = s.block(derive_stream(StreamKey(4)), 1, 40)
    assert np.array_equal(full[:40], again)


def test_early_law_overrides_tail():
    early = ReinforcementLaw.constant(2)
    s = ReinforcementSchedule((ColorSchedule(TWO_POINT, {3: early}), ColorSchedule(TWO_POINT, {3: early})))
    out = s.block(derive_stream(StreamKey(4)), 1, 5)
    assert out[2].tolist() == [2.0, 2.0]
    assert s.law_at(3, 0).kind == LawKind.CONSTANT and s.law_at(4, 0) is TWO_POINT


def test_comonotone_pairing_shares_uniform():
    s = ReinforcementSchedule.iid([TWO_POINT, TWO_POINT], pairing="comonotone")
    out = s.block(derive_stream(StreamKey(8)), 1, 1000)
    assert np.array_equal(out[:, 0], out[:, 1])


def test_all_constant_block_needs_no_rng():
    c = ReinforcementLaw.constant(1.5)
    assert np.all(ReinforcementSchedule.iid([c, c]).block(None, 1, 10) == 1.5)


def test_to_dict_round_trips_kind():
    s = ReinforcementSchedule.iid([TWO_POINT, ReinforcementLaw.constant(2)])
    d = s.to_dict()
    assert d["colors"][0]["tail"] == {"kind": "discrete", "values": [1.0, 3.0], "probs": [0.5, 0.5]}
    assert d["colors"][1]["tail"] == {"kind": "constant", "value": 2.0}
