import math
import warnings

import numpy as np
import pytest
from scipy import stats

from cqlearn import batching
from cqlearn.batching import SizingWarning
from cqlearn.qcore import ContractError


class TestDrawBatches:
    def test_disjoint_and_in_range(self, rng):
        plan = batching.draw_batches(100, 5, 6, rng)
        flat = plan.indices.ravel()
        assert plan.indices.shape == (5, 6)
        assert len(set(flat.tolist())) == 30
        assert flat.min() >= 0 and flat.max() < 100
        assert plan.meets_precondition

    def test_too_many(self, rng):
        with pytest.raises(ContractError, match="exceeds"):
            batching.draw_batches(10, 3, 4, rng)

    def test_sizing_warning(self, rng):
        with pytest.warns(SizingWarning):
            plan = batching.draw_batches(10, 2, 3, rng)
        assert not plan.meets_precondition

    def test_json_round_trip(self, rng):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SizingWarning)
            plan = batching.draw_batches(20, 2, 3, rng, seed=7)
        back = batching.BatchPlan.from_json(plan.to_json())
        assert back.n == 20 and back.seed == 7
        assert np.array_equal(back.indices, plan.indices)

    def test_first_position_uniform(self):
        rng = np.random.default_rng(3)
        hits = np.bincount([batching.draw_batches(6, 1, 1, rng).indices[0, 0] for _ in range(6000)],
                           minlength=6)
        assert stats.chisquare(hits).pvalue > 1e-3


class TestHypergeometric:
    @pytest.mark.parametrize("ngood, nbad, nsample, expected", [
        (0, 5, 3, 0), (5, 0, 3, 3), (4, 4, 0, 0),
    ])
    def test_edge_cases(self, rng, ngood, nbad, nsample, expected):
        assert batching.hypergeometric(ngood, nbad, nsample, rng) == expected

    def test_oversized_sample(self, rng):
        with pytest.raises(ContractError):
            batching.hypergeometric(2, 2, 5, rng)

    def test_large_population_moments(self, rng):
        ngood, nbad, k = 3 * 10**9, 7 * 10**9, 10_000
        draws = np.array([batching.hypergeometric(ngood, nbad, k, rng) for _ in range(3000)])
        mean, sd = k * 0.3, math.sqrt(k * 0.3 * 0.7)
        assert draws.mean() == pytest.approx(mean, abs=4 * sd / math.sqrt(3000))
        assert draws.std() == pytest.approx(sd, rel=0.1)

    def test_window_matches_scipy(self):
        rng = np.random.default_rng(0)
        draws = np.array([batching._hypergeom_window(40, 60, 30, rng) for _ in range(20000)])
        pmf = stats.hypergeom.pmf(np.arange(31), 100, 40, 30)
        emp = np.bincount(draws, minlength=31) / len(draws)
        assert np.max(np.abs(emp - pmf)) < 0.01

    def test_multivariate_total(self, rng):
        out = batching.multivariate_hypergeometric([5, 0, 7, 3], 9, rng)
        assert out.sum() == 9 and np.all(out <= [5, 0, 7, 3])


class TestGroupedStream:
    def test_batches_exhaust_population(self, rng):
        s = batching.GroupedBatchStream([4, 6, 2], 3, 4, rng)
        total = sum(s.next() for _ in range(4))
        assert np.array_equal(total, [4, 6, 2])
        with pytest.raises(ContractError, match="exhausted"):
            s.next()

    def test_budget_too_large(self, rng):
        with pytest.raises(ContractError):
            batching.GroupedBatchStream([2, 2], 3, 2, rng)


class TestDeviation:
    def test_bound_formula(self):
        assert batching.deviation_bound(2, 3, 100, 0.1) == pytest.approx(12 * math.exp(-0.5))

    def test_verification_passes(self, rng):
        pops = (rng.random((3, 600)) < 0.4).astype(float)
        res = batching.verify_without_replacement(pops, 4, 50, 0.15, 300, rng)
        assert res["pass"]
        assert res["empirical_freq"] <= res["bound"] + 3 * res["se"]

    def test_values_checked(self, rng):
        with pytest.raises(ContractError):
            batching.verify_without_replacement([[2.0, 0.0]], 1, 1, 0.1, 5, rng)
