import math

import numpy as np
import pytest
from scipy import stats

from urnclt.ensemble import build_ensemble
from urnclt.limits import (atomlessness_diag, default_test_functions, joint_product_test, kernel_sample, ks_distance,
                           ks_threshold, nested_conditional_law, quantile_slices, studentized_test,
                           synthetic_ensemble)
from urnclt.pd import PDConfig
from urnclt.rng import Role, StreamKey, derive_stream
from urnclt.schedule import ReinforcementLaw, ReinforcementSchedule
from urnclt.urn import TwoColorConfig

ONE = ReinforcementLaw.constant(1)


def polya(N, cps=None):
    return TwoColorConfig(1, 1, ReinforcementSchedule.iid([ONE, ONE]), N, cps)


# -- KS machinery -----------------------------------------------------------------


def test_ks_point_mass_at_zero():
    assert ks_distance([0.0], stats.norm.cdf) == 0.5


def test_ks_sample_against_itself():
    x = derive_stream(StreamKey(1)).standard_normal(500)
    assert ks_distance(x, x) == 0


def test_ks_reference_sample_small():
    x = derive_stream(StreamKey(2)).standard_normal(10**4)
    assert ks_distance(x, stats.norm.cdf) < 1.63 / math.sqrt(10**4)


def test_ks_distance_matches_direct_computation():
    x = np.sort(derive_stream(StreamKey(3)).standard_normal(300))
    F = stats.norm.cdf(x)
    i = np.arange(1, x.size + 1)
    direct = max(np.max(i / x.size - F), np.max(F - (i - 1) / x.size))
    assert ks_distance(x, stats.norm.cdf) == pytest.approx(direct, abs=1e-15)


def test_ks_threshold_against_asymptotic_table():
    # Kolmogorov 1% point: sqrt(n) D -> 1.6276
    assert ks_threshold(10**5) * math.sqrt(10**5) == pytest.approx(1.6276, abs=0.005)


def test_ks_threshold_calibrated_by_self_simulation():
    rng = derive_stream(StreamKey(4))
    thr = ks_threshold(625, 0.01)
    exceed = sum(ks_distance(rng.standard_normal(625), stats.norm.cdf) > thr for _ in range(3000))
    # binomial(3000, 0.01): mean 30, sd 5.4
    assert 10 <= exceed <= 50


def test_quantile_slices_partition():
    z = derive_stream(StreamKey(5)).random(1001)
    bins = quantile_slices(z, 8, 100)
    assert len(bins) == 8
    assert sorted(np.concatenate(bins).tolist()) == list(range(1001))
    assert all(z[a].max() <= z[b].min() for a, b in zip(bins, bins[1:]))
    assert len(quantile_slices(z, 8, 400)) == 2


# -- slice tests on synthetic ensembles ----------------------------------------------


def test_matched_synthetic_passes():
    rep = studentized_test(synthetic_ensemble("matched", 5000, StreamKey(6)), 1000, "D")
    assert rep.overall_pass and len(rep.slices) == 8 and all(s.count == 625 for s in rep.slices)


def test_adversarial_synthetic_fails_in_low_v_slices():
    rep = studentized_test(synthetic_ensemble("adversarial", 5000, StreamKey(7)), 1000, "D")
    assert not rep.overall_pass
    low = [s for s in rep.slices if s.z_high < 0.5]
    assert low and not any(s.passed for s in low)


def test_report_serializes():
    rep = studentized_test(synthetic_ensemble("matched", 1000, StreamKey(8)), 1000, "W")
    d = rep.to_dict()
    assert d["overall_pass"] == rep.overall_pass
    assert {"bin", "count", "ks", "pass"} <= set(d["slices"][0])


def test_polya_c_routes_to_magnitude():
    e = build_ensemble(polya(10**5, (1000, 10**5)), 1600, 9, dense=False)
    rep = studentized_test(e, 1000, "C")
    assert all(s.route == "magnitude" for s in rep.slices)
    assert rep.overall_pass
    assert studentized_test(e, 1000, "D").overall_pass


def test_joint_product_pass_and_comonotone_fail():
    assert joint_product_test(synthetic_ensemble("matched", 5000, StreamKey(10)), 1000).overall_pass
    rep = joint_product_test(synthetic_ensemble("comonotone", 5000, StreamKey(11)), 1000, permutations=999)
    assert not rep.overall_pass
    assert rep.max_abs_correlation == pytest.approx(1.0)


def test_joint_dependence_statistic_is_permutation_sensitive():
    # dependence without correlation: D = |C| symmetrized sign
    e = synthetic_ensemble("matched", 4000, StreamKey(12))
    c = e.C[:, 0] / np.sqrt(e.U)
    e.D[:, 0] = (np.abs(c) - math.sqrt(2 / math.pi)) / math.sqrt(1 - 2 / math.pi) * np.sqrt(e.V)
    rep = joint_product_test(e, 1000)
    assert not rep.overall_pass
    assert max(abs(s.correlation) for s in rep.slices) < 0.2
    assert min(s.dependence_pvalue for s in rep.slices) <= 0.01 / 8


def test_joint_rejects_too_few_permutations():
    with pytest.raises(ValueError):
        joint_product_test(synthetic_ensemble("matched", 2000, StreamKey(10)), 1000, permutations=199)


# -- nested conditional law ---------------------------------------------------------


def test_constant_function_is_exact():
    rep = nested_conditional_law(polya(2000), 100, 100, 2000, StreamKey(13), functions={"c": lambda x: 0 * x + 0.7})
    est = rep.estimates[0]
    assert est.estimate == pytest.approx(0.7, abs=1e-15) and est.stderr == pytest.approx(0, abs=1e-15)
    assert est.zscore == 0


def test_bounded_estimates_and_se_scaling():
    small = nested_conditional_law(polya(3000), 200, 200, 3000, StreamKey(14))
    large = nested_conditional_law(polya(3000), 200, 800, 3000, StreamKey(14))
    for a, b in zip(small.estimates, large.estimates):
        if a.name.startswith(("cos", "sin")):
            assert abs(a.estimate) <= 1 and abs(b.estimate) <= 1
        assert b.stderr / a.stderr == pytest.approx(0.5, rel=0.25)


def test_polya_characteristic_function():
    rep = nested_conditional_law(polya(20000), 500, 1000, 20000, StreamKey(15))
    cos = [e for e in rep.estimates if e.name.startswith("cos")]
    assert len(cos) == 3
    for e in cos:
        t = float(e.name[4:-2])
        assert e.reference == pytest.approx(math.exp(-t * t * rep.variance / 2), rel=1e-8)
        assert abs(e.zscore) <= 3
    assert rep.variance == pytest.approx(rep.z_n * (1 - rep.z_n))


def test_normal_reference_for_clipped_powers():
    fs = default_test_functions()
    rep = nested_conditional_law(polya(2000), 100, 50, 2000, StreamKey(16), functions=fs)
    v = rep.variance
    ref = {e.name: e.reference for e in rep.estimates}
    x = derive_stream(StreamKey(16, 0, Role.BRANCH, 99)).standard_normal(10**6) * math.sqrt(v)
    assert ref["clip(x,2.0)^2"] == pytest.approx(np.mean(np.clip(x, -2, 2) ** 2), rel=0.01)
    assert ref["clip(x,2.0)^1"] == pytest.approx(0, abs=1e-10)
    assert ref["sin(1.0x)"] == pytest.approx(0, abs=1e-10)


def test_branch_budget_gives_partial_result():
    rep = nested_conditional_law(polya(1000), 100, 400, 1000, StreamKey(17), max_steps=90_000)
    assert rep.partial and rep.branches == 100


def test_nested_law_for_poisson_dirichlet():
    cfg = PDConfig(0.5, 1.0, (0.25,) * 4, (0,), 5000)
    rep = nested_conditional_law(cfg, 200, 300, 5000, StreamKey(18))
    assert rep.variance == pytest.approx(rep.z_n * (1 - rep.z_n))
    assert rep.within(4.0, names=[e.name for e in rep.estimates if e.name.startswith("cos")])


# -- kernel samples, atoms ----------------------------------------------------------


def test_kernel_sample_variance():
    e = synthetic_ensemble("matched", 5000, StreamKey(19))
    ks = kernel_sample(e, 200_000, StreamKey(19, 1))
    target = e.V.mean()
    # variance of the squared draws gives the Monte Carlo error of the variance
    se = np.std(ks.draws ** 2, ddof=1) / math.sqrt(ks.draws.size)
    assert abs(np.var(ks.draws) - target) < 3 * se
    assert ks.clamped == 0


def test_kernel_sample_clamps_rounding_negatives():
    e = synthetic_ensemble("matched", 100, StreamKey(20))
    e.V[:] = -1e-13
    assert kernel_sample(e, 100, StreamKey(20)).clamped == 100
    e.V[:] = -1e-6
    with pytest.raises(ValueError):
        kernel_sample(e, 100, StreamKey(20))


def test_atomlessness():
    assert atomlessness_diag(np.full(1000, 0.5)).max_mass == 1.0
    assert atomlessness_diag(np.full(1000, 0.5)).flagged
    z = derive_stream(StreamKey(21)).random(10**5)
    rep = atomlessness_diag(z)
    assert 1e-3 <= rep.max_mass < 2e-3 and not rep.flagged


def test_polya_limit_has_no_atoms():
    e = build_ensemble(polya(2000, (100, 2000)), 2000, 22, dense=False)
    rep = atomlessness_diag(e.z_proxy)
    assert rep.max_mass < 0.01
    assert not rep.flagged
