import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from cqlearn import pbnoise
from cqlearn.pbnoise import DegenerateConditioningError, ExponentialNoise, PreconditionError
from cqlearn.qcore import ContractError


def enumerate_pmf(probs):
    """Brute-force law of a Bernoulli sum over all outcome strings."""
    out = np.zeros(len(probs) + 1)
    for bits in itertools.product((0, 1), repeat=len(probs)):
        w = math.prod(p if b else 1 - p for p, b in zip(probs, bits))
        out[sum(bits)] += w
    return out


class TestPmf:
    @pytest.mark.parametrize("n, p", [(1, 0.3), (10, 0.5), (50, 0.07), (200, 0.9)])
    def test_equal_probs_match_binomial(self, n, p):
        pb = pbnoise.pb_pmf(np.full(n, p))
        assert np.max(np.abs(pb.pmf - stats.binom.pmf(np.arange(n + 1), n, p))) < 1e-12

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=10))
    def test_matches_enumeration(self, probs):
        pb = pbnoise.pb_pmf(probs)
        assert np.max(np.abs(pb.pmf - enumerate_pmf(probs))) < 1e-12
        assert pb.pmf.sum() == pytest.approx(1.0, abs=1e-12)
        assert pb.mean == pytest.approx(float(np.dot(np.arange(pb.n + 1), pb.pmf)), abs=1e-9)

    def test_degenerate_probs(self):
        pb = pbnoise.pb_pmf([0.0, 1.0, 1.0])
        assert np.allclose(pb.pmf, [0, 0, 1, 0])
        assert pb.stddev == 0.0

    @pytest.mark.parametrize("bad", [[-0.1], [1.2], [np.nan]])
    def test_rejects_invalid(self, bad):
        with pytest.raises(ContractError):
            pbnoise.pb_pmf(bad)


class TestSmoothing:
    def test_survival(self):
        noise = ExponentialNoise(0.5)
        assert np.allclose(pbnoise.survival(noise, [-1.0, 0.0, 2.0]), [1.0, 1.0, math.exp(-1.0)])

    def test_noise_rate_positive(self):
        with pytest.raises(ContractError):
            ExponentialNoise(0.0)

    def test_tail_against_monte_carlo(self, rng):
        probs = rng.uniform(0, 1, 30)
        noise = ExponentialNoise(0.2)
        exact = pbnoise.smoothed_tail(pbnoise.pb_pmf(probs), noise, 18.0)
        n = 200_000
        t = (rng.random((n, 30)) < probs).sum(1) + rng.exponential(1 / 0.2, n)
        mc = np.mean(t > 18.0)
        assert exact == pytest.approx(mc, abs=5 * math.sqrt(exact * (1 - exact) / n))

    def test_conditional_reject_normalized(self, rng):
        pb = pbnoise.pb_pmf(rng.uniform(0, 1, 20))
        cond = pbnoise.conditional_pmf_reject(pb, ExponentialNoise(0.3), 8.0)
        assert cond.sum() == pytest.approx(1.0)
        assert np.all(cond >= 0)

    def test_conditional_reject_degenerate(self):
        pb = pbnoise.pb_pmf(np.ones(5))
        with pytest.raises(DegenerateConditioningError):
            pbnoise.conditional_pmf_reject(pb, ExponentialNoise(0.9), -1.0)

    @pytest.mark.parametrize("seed", range(5))
    def test_boundexp_dominates(self, seed):
        rng = np.random.default_rng(seed)
        probs = rng.uniform(0, 0.4, 100)
        lam = 1 / (4 * math.sqrt(100))
        theta_n = 60.0
        tail = pbnoise.smoothed_tail(pbnoise.pb_pmf(probs), ExponentialNoise(lam), theta_n)
        assert tail <= pbnoise.boundexp(probs, lam, theta_n) + 1e-12


class TestDivergences:
    def test_bhattacharyya_identical(self):
        p = np.array([0.2, 0.3, 0.5])
        assert pbnoise.bhattacharyya(p, p) == pytest.approx(1.0)
        assert pbnoise.chi_squared(p, p) == pytest.approx(0.0)

    def test_disjoint_supports(self):
        assert pbnoise.bhattacharyya([1, 0], [0, 1]) == 0.0

    def test_chi_squared_undefined(self):
        with pytest.raises(ContractError, match="undefined"):
            pbnoise.chi_squared([0.5, 0.5], [1.0, 0.0])

    def test_support_mismatch(self):
        with pytest.raises(ContractError, match="supports"):
            pbnoise.bhattacharyya([1.0], [0.5, 0.5])

    def test_chernoff_values(self):
        up, lo = pbnoise.chernoff_bounds(30.0, 0.5)
        assert up == pytest.approx(math.exp(-2.5))
        assert lo == pytest.approx(math.exp(-3.75))


class TestGentleness:
    def test_check_holds_on_typical_instance(self, rng):
        n = 400
        probs = rng.uniform(0, 0.3, n)
        pb = pbnoise.pb_pmf(probs)
        lam = 1 / (4 * math.sqrt(n))
        res = pbnoise.gentleness_check(pb, ExponentialNoise(lam), pb.mean + 160.0)
        assert res["pB"] < 0.25 and res["ok"]
        assert res["ratio"] == pytest.approx(res["chi2"] / res["bound_rhs"])

    def test_precondition_noise_mean(self):
        pb = pbnoise.pb_pmf(np.full(100, 0.5))
        with pytest.raises(PreconditionError, match="noise mean"):
            pbnoise.gentleness_check(pb, ExponentialNoise(0.9), 90.0)

    def test_precondition_acceptance(self):
        pb = pbnoise.pb_pmf(np.full(100, 0.5))
        with pytest.raises(PreconditionError, match="1/4"):
            pbnoise.gentleness_check(pb, ExponentialNoise(0.05), 10.0)
