"""Combination tests: worked examples, edge cases and properties.

Frozen values come from mpmath at 60 digits unless noted.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from stablemeld import combiners as cb
from stablemeld.combiners import CombinedResult, PValueFamily, UnsupportedMethodError
from stablemeld.stable import StableParams, landau, stable_isf, stable_sf

# ---------------------------------------------------------------------------
# PValueFamily


class TestPValueFamily:
    def test_defaults(self):
        fam = PValueFamily([0.1, 0.2, 0.3])
        assert fam.size == 3
        assert np.array_equal(fam.w, np.ones(3))
        assert fam.equal_weights
        assert np.allclose(fam.bonferroni_weights(), 1 / 3)

    def test_lct_bonferroni_weights_sum_to_one(self):
        fam = PValueFamily([0.1, 0.2, 0.3], [1.0, 4.0, 9.0])
        u = fam.bonferroni_weights()
        assert u.sum() == pytest.approx(1.0, rel=1e-15)
        assert np.allclose(u, np.array([1, 2, 3]) / 6)

    def test_arrays_are_read_only(self):
        fam = PValueFamily([0.1, 0.2])
        with pytest.raises(ValueError):
            fam.p[0] = 0.5

    @pytest.mark.parametrize(
        "p, w, ids",
        [
            ([], None, None),
            ([0.1, 1.2], None, None),
            ([0.1, -0.01], None, None),
            ([0.1, np.nan], None, None),
            ([0.1, 0.2], [1.0, 0.0], None),
            ([0.1, 0.2], [1.0, np.inf], None),
            ([0.1, 0.2], [1.0], None),
            ([0.1, 0.2], None, ["a", "a"]),
            ([0.1, 0.2], None, ["a"]),
        ],
    )
    def test_invalid(self, p, w, ids):
        with pytest.raises(ValueError):
            PValueFamily(p, w, ids)

    def test_indices(self):
        fam = PValueFamily([0.1, 0.2, 0.3], ids=["x", "y", "z"])
        assert list(fam.indices([2, 0])) == [0, 2]
        assert list(fam.indices(None)) == [0, 1, 2]
        assert list(fam.indices_of(["z", "x"])) == [0, 2]
        for bad in ([], [3], [-1], [1, 1]):
            with pytest.raises(ValueError):
                fam.indices(bad)
        with pytest.raises(KeyError):
            fam.indices_of(["w"])

    def test_extended(self):
        fam = PValueFamily([0.1], [2.0]).extended([1.0, 1.0])
        assert list(fam.p) == [0.1, 1.0, 1.0]
        assert list(fam.w) == [2.0, 1.0, 1.0]


# ---------------------------------------------------------------------------
# LCT


class TestLCT:
    def test_single_test_identity(self):
        assert cb.lct(PValueFamily([0.05])).p_adjusted == pytest.approx(0.05, rel=1e-14)

    def test_two_tests(self):
        res = cb.lct(PValueFamily([0.01, 0.5]))
        assert res.statistic == pytest.approx(1592.0156236111372, rel=1e-13)
        assert res.p_adjusted == pytest.approx(0.019994978190295252, rel=1e-12)
        assert res.reject and res.method == "lct"

    def test_singleton_of_three(self):
        res = cb.lct(PValueFamily([0.001, 0.6, 0.9]), [0])
        assert res.p_adjusted == pytest.approx(0.0029999937168245622, rel=1e-12)
        assert res.p_adjusted < cb.bonferroni(PValueFamily([0.001, 0.6, 0.9]), [0]).p_adjusted
        assert res.subset == (0,)

    def test_denominator_uses_full_family(self):
        fam = PValueFamily([0.01, 0.5, 0.7])
        res = cb.lct(fam, [0, 1])
        assert res.statistic == pytest.approx(cb.lct(PValueFamily([0.01, 0.5])).statistic * 4 / 9, rel=1e-14)
        # p_raw is the subset's own combination
        assert res.p_raw == pytest.approx(cb.lct(PValueFamily([0.01, 0.5])).p_adjusted, rel=1e-14)
        assert res.p_adjusted >= res.p_raw

    def test_boundaries(self):
        assert cb.lct(PValueFamily([1.0, 1.0])).p_adjusted == 1.0
        res = cb.lct(PValueFamily([0.0, 0.5]))
        assert res.p_adjusted == 0.0 and res.reject and res.statistic == math.inf

    @pytest.mark.parametrize(
        "p, w, subset, expected",
        [
            ([1e-300, 0.5, 0.2], [1, 2, 3], [0, 1], 4.1462643699419724e-300),
            ([1e-200, 1e-250, 1.0], [1, 2, 3], None, 2.931851652578137e-250),
            ([5e-324, 1.0], [1, 1], [0], 1e-323),
        ],
    )
    def test_transform_overflow_keeps_precision(self, p, w, subset, expected):
        res = cb.lct(PValueFamily(p, w), subset)
        assert res.p_adjusted == pytest.approx(expected, rel=1e-13)
        assert res.statistic == math.inf

    def test_empty_subset(self):
        with pytest.raises(ValueError):
            cb.lct(PValueFamily([0.1]), [])

    def test_matches_cct_for_small_p(self):
        fam = PValueFamily([0.01, 0.5])
        assert abs(math.log(cb.lct(fam).p_adjusted / cb.cct(fam).p_raw)) < 1e-3


# ---------------------------------------------------------------------------
# CCT


class TestCCT:
    def test_examples(self):
        assert cb.cct(PValueFamily([0.3])).p_raw == pytest.approx(0.3, rel=1e-15)
        res = cb.cct(PValueFamily([0.01, 0.5]))
        assert res.statistic == pytest.approx(15.91025797688698, rel=1e-13)
        assert res.p_raw == pytest.approx(0.019980299664053645, rel=1e-12)
        assert res.p_adjusted == res.p_raw
        assert not res.warnings

    def test_p_one_flaw(self):
        res = cb.cct(PValueFamily([0.01, 1.0]))
        assert res.statistic == -math.inf
        assert res.p_raw == 1.0
        assert res.warnings

    def test_near_one_warns(self):
        assert cb.cct(PValueFamily([0.01, 1 - 1e-9])).warnings
        assert not cb.cct(PValueFamily([0.01, 1 - 1e-7])).warnings

    def test_zero(self):
        res = cb.cct(PValueFamily([0.0, 0.5, 1.0]))
        assert res.p_raw == 0.0 and res.reject


# ---------------------------------------------------------------------------
# HMP


class TestHMP:
    def test_raw_examples(self):
        assert cb.hmp_raw(PValueFamily([0.2])) == pytest.approx(0.2, rel=1e-15)
        assert cb.hmp_raw(PValueFamily([0.01, 0.04])) == pytest.approx(0.016, rel=1e-14)
        assert cb.hmp_raw(PValueFamily([0.01, 1.0])) == pytest.approx(2 / 101, rel=1e-14)
        assert cb.hmp_raw(PValueFamily([0.0, 0.5])) == 0.0

    def test_adjusted_bounds(self):
        near_one = cb.hmp_adjusted(0.999999, 100)
        assert near_one.p_adjusted < 1.0
        res = cb.hmp_adjusted(0.001, 100)
        assert 0.001 < res.p_adjusted <= 0.01
        assert res.p_raw is None and res.statistic == 0.001

    def test_adjusted_errors(self):
        for raw in (0.0, -0.1, 1.5):
            with pytest.raises(ValueError):
                cb.hmp_adjusted(raw, 10)

    @pytest.mark.slow
    def test_adjusted_matches_simulation(self):
        # P(hmp <= 0.001) for 100 iid uniforms; 2e6 replicates give about 2%
        # relative standard error against the 10% tolerance
        rng = np.random.default_rng(2024)
        L, reps, chunk, hits = 100, 2_000_000, 100_000, 0
        for _ in range(reps // chunk):
            P = rng.random((chunk, L))
            hits += int(np.sum(L / np.sum(1.0 / P, axis=1) <= 0.001))
        mc = hits / reps
        assert cb.hmp_adjusted(0.001, L).p_adjusted == pytest.approx(mc, rel=0.10)

    def test_subset_uses_weight_share(self):
        fam = PValueFamily([0.001, 0.5, 0.5, 0.5])
        res = cb.hmp(fam, [0])
        assert res.p_adjusted == pytest.approx(stable_sf(0.25 / 0.001, landau(4)), rel=1e-12)
        assert cb.hmp(PValueFamily([0.0, 0.4])).p_adjusted == 0.0

    @settings(max_examples=200, deadline=None)
    @given(
        st.lists(st.floats(1e-6, 1.0), min_size=1, max_size=20),
        st.lists(st.floats(0.01, 10.0), min_size=1, max_size=5),
    )
    def test_appended_ones_bounded_by_weight_share(self, p, extra_w):
        w = [1.0] * len(p)
        fam = PValueFamily(p + [1.0] * len(extra_w), w + extra_w)
        base = cb.hmp_raw(fam, range(len(p)))
        grown = cb.hmp_raw(fam, None)
        share = sum(extra_w) / (sum(w) + sum(extra_w))
        assert 0.0 <= grown - base <= share + 1e-15


# ---------------------------------------------------------------------------
# Extremal Stable combination


class TestSCT:
    def test_half_equals_lct(self):
        rng = np.random.default_rng(5)
        for _ in range(5):
            L = int(rng.integers(1, 8))
            fam = PValueFamily(rng.random(L) ** 2, rng.uniform(0.2, 3.0, L))
            subset = sorted(set(rng.integers(0, L, size=max(1, L // 2)).tolist()))
            a = cb.sct_extremal(fam, subset, lam=0.5)
            b = cb.lct(fam, subset)
            assert abs(a.p_adjusted - b.p_adjusted) <= 1e-9
            assert abs(a.p_raw - b.p_raw) <= 1e-9

    def test_single_test_identity(self):
        assert abs(cb.sct_extremal(PValueFamily([0.05]), lam=0.9).p_adjusted - 0.05) <= 1e-8

    def test_two_tests_round_trip(self):
        params = StableParams(0.9, 1.0)
        res = cb.sct_extremal(PValueFamily([0.01, 0.5]), lam=0.9)
        x = stable_isf(np.array([0.01, 0.5]), params)
        assert np.allclose(stable_sf(x, params), [0.01, 0.5], rtol=1e-8)
        assert res.statistic == pytest.approx(x.sum() / 2 ** (1 / 0.9), rel=1e-12)
        assert abs(res.p_adjusted - stable_sf(res.statistic, params)) <= 1e-8
        assert res.method == "sct:0.9"

    @pytest.mark.parametrize("lam", [0.0, 1.0, 1.5, -0.2])
    def test_bad_tail_index(self, lam):
        with pytest.raises(ValueError):
            cb.sct_extremal(PValueFamily([0.1]), lam=lam)

    def test_weight_scale_invariance(self):
        fam = PValueFamily([0.02, 0.3, 0.7], [1.0, 2.0, 5.0])
        scaled = PValueFamily(fam.p, fam.w * 7.5)
        a = cb.sct_extremal(fam, [0, 1], lam=0.8)
        b = cb.sct_extremal(scaled, [0, 1], lam=0.8)
        assert a.p_adjusted == pytest.approx(b.p_adjusted, rel=1e-10)

    @pytest.mark.slow
    @pytest.mark.parametrize("lam", [0.1, 0.25, 0.5])
    def test_dominates_bonferroni_on_singletons(self, lam):
        # reduced count: each call costs two numerical quantile solves
        rng = np.random.default_rng(int(lam * 1000))
        for _ in range(300):
            L = int(rng.integers(1, 51))
            fam = PValueFamily(rng.random(L) ** rng.uniform(0.5, 4.0), rng.uniform(0.05, 10.0, L))
            i = [int(rng.integers(L))]
            a = cb.sct_extremal(fam, i, lam=lam).p_adjusted
            b = cb.bonferroni(fam, i, lam=lam).p_adjusted
            assert a <= b * (1.0 + 1e-9)


# ---------------------------------------------------------------------------
# Bonferroni, Simes, Fisher


class TestBonferroni:
    def test_examples(self):
        assert cb.bonferroni(PValueFamily([0.01, 0.5])).p_adjusted == pytest.approx(0.02, rel=1e-15)
        assert cb.bonferroni(PValueFamily([0.001, 0.6, 0.9]), [0]).p_adjusted == pytest.approx(0.003, rel=1e-15)
        assert cb.bonferroni(PValueFamily([0.6, 0.9])).p_adjusted == 1.0

    def test_weighted(self):
        fam = PValueFamily([0.01, 0.01], [1.0, 9.0])
        # u = (1/4, 3/4) for the square-root weights
        assert cb.bonferroni(fam, [0]).p_adjusted == pytest.approx(0.04)
        assert cb.bonferroni(fam, [1]).p_adjusted == pytest.approx(0.01 / 0.75)


class TestSimes:
    def test_examples(self):
        fam = PValueFamily([0.01, 0.02, 0.9])
        assert cb.simes_multilevel(fam).p_adjusted == pytest.approx(0.03, rel=1e-15)
        for i in range(3):
            assert cb.simes_multilevel(fam, [i]).p_adjusted == cb.bonferroni(fam, [i]).p_adjusted

    def test_boundary_configuration(self):
        alpha, L = 0.05, 8
        fam = PValueFamily(alpha * np.arange(1, L + 1) / L)
        assert cb.simes_multilevel(fam, alpha=alpha).p_adjusted == pytest.approx(alpha, rel=1e-14)

    def test_within_subset_raw(self):
        fam = PValueFamily([0.01, 0.02, 0.9, 0.5])
        res = cb.simes_multilevel(fam, [0, 1])
        assert res.p_raw == pytest.approx(0.02)
        assert res.p_adjusted == pytest.approx(0.04)

    def test_equal_weights_only(self):
        with pytest.raises(ValueError):
            cb.simes_multilevel(PValueFamily([0.1, 0.2], [1.0, 2.0]))


class TestFisher:
    def test_examples(self):
        assert cb.fisher(PValueFamily([0.37])).p_raw == pytest.approx(0.37, rel=1e-13)
        res = cb.fisher(PValueFamily([0.05, 0.05]))
        assert res.statistic == pytest.approx(11.982929094215963, rel=1e-14)
        assert res.p_raw == pytest.approx(0.017478661367769959, rel=1e-12)
        res = cb.fisher(PValueFamily([1.0, 1.0, 1.0]))
        assert res.statistic == 0.0 and res.p_raw == 1.0
        assert cb.fisher(PValueFamily([0.0, 0.5])).p_raw == 0.0

    def test_equal_weights_only(self):
        with pytest.raises(ValueError):
            cb.fisher(PValueFamily([0.1, 0.2], [1.0, 2.0]))

    @pytest.mark.parametrize(
        "x, df, expected",
        [
            (11.982929094215963, 4, 0.017478661367769959137),
            (200.0, 150, 0.0039731859708216113254),
            (0.5, 2, 0.77880078307140486825),
            (50.0, 10, 2.6690834249044956397e-7),
        ],
    )
    def test_chi2_sf_oracle(self, x, df, expected):
        assert cb.chi2_sf(x, df) == pytest.approx(expected, rel=1e-12)

    def test_chi2_sf_against_scipy(self):
        for df in (2, 7, 40, 400, 2000):
            for x in np.geomspace(df / 50, df * 5, 25):
                assert cb.chi2_sf(x, df) == pytest.approx(stats.chi2.sf(x, df), rel=1e-10, abs=1e-300)

    def test_incomplete_gamma_edges(self):
        assert cb.regularized_gamma_q(3.0, 0.0) == 1.0
        assert cb.regularized_gamma_q(3.0, math.inf) == 0.0
        with pytest.raises(ValueError):
            cb.regularized_gamma_q(0.0, 1.0)


# ---------------------------------------------------------------------------
# Dispatch and results


class TestDispatch:
    @pytest.mark.parametrize(
        "name, expected",
        [
            ("lct", ("lct", None)),
            ("SCT:0.9", ("sct", 0.9)),
            ("sct(0.99)", ("sct", 0.99)),
            ("simes_multilevel", ("simes", None)),
            ("fisher", ("fisher", None)),
        ],
    )
    def test_parse(self, name, expected):
        assert cb.parse_method(name) == expected

    @pytest.mark.parametrize("name", ["sct", "sct:1.2", "sct:abc", "stouffer", ""])
    def test_parse_errors(self, name):
        with pytest.raises(ValueError):
            cb.parse_method(name)

    def test_combine_matches_direct_calls(self):
        fam = PValueFamily([0.01, 0.2, 0.7])
        assert cb.combine(fam, "lct", subset=[0]) == cb.lct(fam, [0])
        assert cb.combine(fam, "simes") == cb.simes_multilevel(fam)
        assert cb.combine(fam, "cct") == cb.cct(fam)

    @pytest.mark.parametrize("method", ["cct", "fisher"])
    def test_no_subset_for_headline_only_methods(self, method):
        with pytest.raises(UnsupportedMethodError):
            cb.combine(PValueFamily([0.1, 0.2]), method, subset=[0])

    def test_result_dict(self):
        d = cb.lct(PValueFamily([0.01, 0.5]), alpha=0.01).as_dict()
        assert d["method"] == "lct" and d["reject"] is False and d["subset"] is None
        assert isinstance(CombinedResult("x", 1.0, None, 0.2, 0.05, False).p_value, float)

    def test_bad_alpha(self):
        with pytest.raises(ValueError):
            cb.lct(PValueFamily([0.1]), alpha=1.5)


# ---------------------------------------------------------------------------
# Properties

probabilities = st.floats(1e-12, 1.0, allow_nan=False)
families = st.lists(st.tuples(probabilities, st.floats(0.05, 20.0)), min_size=1, max_size=25)


def _family(pairs):
    p, w = zip(*pairs)
    return PValueFamily(p, w)


@settings(max_examples=200, deadline=None)
@given(families, st.floats(0.01, 100.0))
def test_weight_scale_invariance(pairs, c):
    fam = _family(pairs)
    scaled = PValueFamily(fam.p, fam.w * c)
    assert cb.lct(scaled).p_adjusted == pytest.approx(cb.lct(fam).p_adjusted, rel=1e-12, abs=1e-300)
    assert cb.cct(scaled).p_raw == pytest.approx(cb.cct(fam).p_raw, rel=1e-12, abs=1e-300)
    assert cb.hmp_raw(scaled) == pytest.approx(cb.hmp_raw(fam), rel=1e-12)


@settings(max_examples=200, deadline=None)
@given(families, st.data())
def test_decreasing_a_p_never_increases_combined_p(pairs, data):
    fam = _family(pairs)
    i = data.draw(st.integers(0, fam.size - 1))
    factor = data.draw(st.floats(0.0, 1.0))
    p = fam.p.copy()
    p[i] *= factor
    smaller = PValueFamily(p, fam.w)
    eq = PValueFamily(fam.p)
    eq_smaller = PValueFamily(p)
    slack = 1.0 + 1e-12
    for fn in (cb.lct, cb.bonferroni, cb.hmp):
        assert fn(smaller).p_value <= fn(fam).p_value * slack
    assert cb.cct(smaller).p_raw <= cb.cct(fam).p_raw * slack
    assert cb.simes_multilevel(eq_smaller).p_value <= cb.simes_multilevel(eq).p_value * slack
    assert cb.fisher(eq_smaller).p_raw <= cb.fisher(eq).p_raw * slack


@settings(max_examples=300, deadline=None)
@given(families, st.data())
def test_lct_dominates_bonferroni(pairs, data):
    fam = _family(pairs)
    subset = data.draw(st.sets(st.integers(0, fam.size - 1), min_size=1))
    a = cb.lct(fam, subset)
    b = cb.bonferroni(fam, subset)
    # equality holds to the last bits when one p-value dominates the sum
    assert a.p_adjusted <= b.p_adjusted * (1.0 + 1e-12)
    assert a.p_adjusted >= a.p_raw


@settings(max_examples=100, deadline=None)
@given(st.lists(probabilities, min_size=1, max_size=10), st.integers(1, 5))
def test_reject_matches_threshold(p, k):
    fam = PValueFamily(p)
    alpha = [0.001, 0.01, 0.05, 0.1, 0.5][k - 1]
    for method in ("lct", "bonferroni", "simes", "cct", "fisher"):
        res = cb.combine(fam, method, alpha)
        assert res.reject == (res.p_value <= alpha)
