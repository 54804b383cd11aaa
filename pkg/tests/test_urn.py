import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from urnclt.errors import ConfigError, EnumerationTooLarge
from urnclt.rng import Role, StreamKey, derive_stream
from urnclt.schedule import ColorSchedule, ReinforcementLaw, ReinforcementSchedule
from urnclt.urn import (MultiColorConfig, TwoColorConfig, continue_urn, default_checkpoints, empirical_law,
                        enumerate_exact, marginal, simulate, state_at, step_multicolor, step_two_color,
                        total_variation)

ONE = ReinforcementLaw.constant(1)
U12 = ReinforcementLaw.discrete([1, 2], [0.5, 0.5])
U123 = ReinforcementLaw.discrete([1, 2, 3], [1 / 3, 1 / 3, 1 / 3])


def polya(N, checkpoints=None):
    return TwoColorConfig(1, 1, ReinforcementSchedule.iid([ONE, ONE]), N, checkpoints)


# -- single steps ------------------------------------------------------------


def test_step_two_color_examples():
    s = step_two_color(1, 2, 0.3, 2, 2)
    assert (s.black_weight, s.total_weight, s.black, s.z) == (3, 4, True, 0.75)
    s = step_two_color(1, 2, 0.9, 2, 2)
    assert (s.black_weight, s.total_weight, s.black, s.z) == (1, 4, False, 0.25)
    s = step_two_color(1, 2, 0.3, 0, 0)
    assert (s.black_weight, s.total_weight, s.z) == (1, 2, 0.5)


def test_step_two_color_rejects_nonfinite():
    with pytest.raises(FloatingPointError):
        step_two_color(1, 2, 0.3, math.inf, 1)


def test_step_multicolor_examples():
    w, j = step_multicolor([1, 1, 2], 0.1, [0, 0, 0])
    assert j == 0
    w, j = step_multicolor([1, 1, 2], 0.6, [5, 5, 5])
    assert j == 2 and w.tolist() == [1, 1, 7]


@settings(max_examples=200, deadline=None)
@given(st.floats(0.01, 100), st.floats(0.01, 100), st.floats(0, 1, exclude_max=True),
       st.floats(0, 10), st.floats(0, 10))
def test_multicolor_step_reduces_to_two_color(b, r, u, B, R):
    s = step_two_color(b, b + r, u, B, R)
    w, j = step_multicolor([b, r], u, [B, R])
    assert (j == 0) == s.black
    assert w[0] == s.black_weight and w.sum() == pytest.approx(s.total_weight, rel=1e-15)


# -- whole paths ---------------------------------------------------------------


def reference_path(weights, laws, N, key):
    """Plain-Python urn driven by the same two streams as ``simulate``."""
    u = derive_stream(key.with_role(Role.DRAW)).random(N)
    d = len(weights)
    uses_rng = any(len(v) > 1 for v, _ in laws)
    ur = derive_stream(key.with_role(Role.REINFORCEMENT)).random((N, d)) if uses_rng else np.zeros((N, d))
    w = [float(a) for a in weights]
    total = sum(w)
    zs, draws, s = [], [], []
    for k in range(N):
        thr = u[k] * total
        c, j = 0.0, d - 1
        for i in range(d):
            c += w[i]
            if thr < c:
                j = i
                break
        vals, cdf = laws[j]
        a = vals[np.searchsorted(cdf, ur[k, j], side="right")] if len(vals) > 1 else vals[0]
        w[j] += a
        total += a
        draws.append(j)
        zs.append([x / total for x in w])
        s.append(total)
    return np.array(zs), np.array(draws), np.array(s)


def _law_table(law):
    vals, probs = zip(*law.atoms())
    cdf = np.cumsum(probs)
    cdf[-1] = 1.0
    return list(vals), cdf


@pytest.mark.parametrize("weights,law", [((1, 1), U123), ((2, 0.5, 1), U123), ((1, 3), ONE), ((1, 1, 1, 1), U12)])
def test_simulate_matches_reference(weights, law):
    N = 500
    sched = ReinforcementSchedule.iid([law] * len(weights))
    cfg = MultiColorConfig(weights, sched, N, (1, 10, 250, 500))
    key = StreamKey(77, 3)
    traj = simulate(cfg, key, dense=True)
    zs, draws, s = reference_path(weights, [_law_table(law)] * len(weights), N, key)
    assert np.array_equal(traj.draws, draws)
    assert np.allclose(traj.z_dense[1:], zs, rtol=0, atol=1e-13)
    idx = np.array(cfg.checkpoints) - 1
    assert np.allclose(traj.s, s[idx], rtol=1e-14)
    counts = np.array([[np.sum(draws[:n] == j) for j in range(len(weights))] for n in cfg.checkpoints])
    assert np.array_equal(traj.counts, counts)


def test_two_color_and_d2_multicolor_cosimulate():
    sched = ReinforcementSchedule.iid([U123, U123])
    key = StreamKey(5, 1)
    a = simulate(TwoColorConfig(2, 3, sched, 300), key, dense=True)
    b = simulate(MultiColorConfig((2, 3), sched, 300), key, dense=True)
    assert np.array_equal(a.z_dense, b.z_dense)


def test_path_invariants():
    cfg = MultiColorConfig((1, 2, 3), ReinforcementSchedule.iid([U123] * 3), 2000)
    t = simulate(cfg, StreamKey(1), dense=True)
    assert np.all((t.z_dense > 0) & (t.z_dense < 1))
    assert np.allclose(t.z_dense.sum(axis=1), 1, atol=1e-12)
    assert np.all(np.diff(t.s) >= 0) and t.s0 == 6
    assert np.all(np.isin(t.draws, [0, 1, 2]))
    assert np.array_equal(t.counts.sum(axis=1), t.checkpoints)


def test_increment_identity():
    sched = ReinforcementSchedule.iid([U123, U12.__class__.discrete([0, 4], [0.5, 0.5])])
    cfg = TwoColorConfig(1.5, 1, sched, 1000)
    t = simulate(cfg, StreamKey(12), dense=True)
    z = t.z_dense[:, 0]
    x = (t.draws == 0).astype(float)
    S = t.s0 + np.cumsum(t.reinforcements)
    a = t.reinforcements
    # B_{n+1} is applied when black is drawn, R_{n+1} otherwise
    rhs = ((1 - z[:-1]) * x * a - z[:-1] * (1 - x) * a) / S
    assert np.allclose(np.diff(z), rhs, atol=1e-14)


def test_prefix_and_state_at_consistency():
    cfg = TwoColorConfig(1, 1, ReinforcementSchedule.iid([U123, U123]), 5000, (100, 5000))
    key = StreamKey(3, 9)
    full = simulate(cfg, key, dense=True)
    w = state_at(cfg, key, 100)
    assert np.allclose(w / w.sum(), full.z_dense[100], atol=1e-15)
    short = simulate(TwoColorConfig(1, 1, cfg.schedule, 100, (100,)), key)
    assert np.array_equal(short.z[0], full.z[0])


def test_continue_urn_constant_schedule_is_polya_step():
    w = continue_urn(np.array([1.0, 1.0]), ReinforcementSchedule.iid([ONE, ONE]), 1, 10,
                     derive_stream(StreamKey(1, 0, Role.BRANCH, 0)))
    assert w.sum() == 12.0


def test_invalid_schedule_blocks_simulation():
    sched = ReinforcementSchedule.iid([ONE, ReinforcementLaw.constant(2)])
    with pytest.raises(ConfigError):
        simulate(TwoColorConfig(1, 1, sched, 10), StreamKey(1))
    simulate(TwoColorConfig(1, 1, sched, 10), StreamKey(1), validate=False)


@pytest.mark.parametrize("kw,field", [
    (dict(b=0, r=1), "b"), (dict(b=1, r=-1), "r"),
])
def test_two_color_config_fields(kw, field):
    with pytest.raises(ConfigError) as e:
        TwoColorConfig(schedule=ReinforcementSchedule.iid([ONE, ONE]), horizon=10, **kw)
    assert e.value.field == field


def test_checkpoint_validation():
    with pytest.raises(ConfigError) as e:
        polya(10, (5, 11))
    assert e.value.field == "checkpoints"
    with pytest.raises(ConfigError):
        polya(10, ())
    with pytest.raises(ConfigError):
        polya(0)


def test_default_checkpoints_grid():
    assert default_checkpoints(100) == (1, 3, 6, 12, 25, 50, 100)


# -- exact enumeration ---------------------------------------------------------


def test_enumerate_n1_by_hand():
    law = enumerate_exact(polya(1), 1)
    assert law == pytest.approx({(2 / 3, 1.0): 0.5, (1 / 3, 0.0): 0.5})


def test_enumerate_n2_by_hand():
    z = marginal(enumerate_exact(polya(2), 2))
    assert z == pytest.approx({0.25: 1 / 3, 0.5: 1 / 3, 0.75: 1 / 3})


def test_polya_uniform_law_by_path_counting():
    # Z_n is uniform on {(1+j)/(2+n)}
    for n in range(1, 13):
        z = marginal(enumerate_exact(polya(n), n))
        assert sorted(z) == pytest.approx([(1 + j) / (2 + n) for j in range(n + 1)])
        assert all(p == pytest.approx(1 / (n + 1), abs=1e-12) for p in z.values())


@pytest.mark.parametrize("law", [ONE, U12, U123])
def test_enumeration_mass_is_one(law):
    cfg = MultiColorConfig((1, 2), ReinforcementSchedule.iid([law, law]), 6)
    assert math.fsum(enumerate_exact(cfg, 6).values()) == pytest.approx(1, abs=1e-12)


def test_enumeration_guard():
    cfg = MultiColorConfig((1, 1), ReinforcementSchedule.iid([U123, U123]), 30)
    with pytest.raises(EnumerationTooLarge):
        enumerate_exact(cfg, 30)


def test_enumeration_keys_match_simulated_values():
    cfg = TwoColorConfig(1, 1, ReinforcementSchedule.iid([U12, U12]), 3, (3,))
    support = set(enumerate_exact(cfg, 3))
    for i in range(200):
        t = simulate(cfg, StreamKey(4, i))
        assert (t.z[0, 0], t.xbar[0, 0]) in support


def test_total_variation_basics():
    assert total_variation({0.5: 1.0}, {0.5: 1.0}) == 0
    assert total_variation({0.1: 1.0}, {0.2: 1.0}) == 1
    assert empirical_law([1, 1, 2, 4]) == {1.0: 0.5, 2.0: 0.25, 4.0: 0.25}


def test_martingale_mean_increment_constant_reinforcement():
    # identical constant reinforcement: Z is an exact martingale
    cfg = TwoColorConfig(1, 2, ReinforcementSchedule.iid([ONE, ONE]), 64, (8, 16, 32, 63, 64))
    z = np.array([simulate(cfg, StreamKey(10, i)).z[:, 0] for i in range(20000)])
    inc = z[:, -1] - z[:, -2]
    se = inc.std(ddof=1) / math.sqrt(inc.size)
    assert abs(inc.mean()) < 4 * se
    drift = z - 1 / 3
    se = drift.std(axis=0, ddof=1) / math.sqrt(z.shape[0])
    assert np.all(np.abs(drift.mean(axis=0)) < 4 * se)


def test_early_schedule_changes_first_step():
    two = ReinforcementLaw.constant(2)
    sched = ReinforcementSchedule((ColorSchedule(ONE, {1: two}), ColorSchedule(ONE, {1: two})))
    t = simulate(TwoColorConfig(1, 1, sched, 3, (1, 3)), StreamKey(2))
    assert t.s[0] == 4 and t.s[1] == 6
