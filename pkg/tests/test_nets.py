import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cqlearn import concepts, nets, qcore
from cqlearn.concepts import ConceptClass, Kind
from cqlearn.qcore import ContractError


def random_state_class(seed, size=30, d=2, labels=4):
    rng = np.random.default_rng(seed)
    tables = [[qcore.random_density_matrix(d, rng) for _ in range(labels)] for _ in range(size)]
    members = [concepts.Concept(Kind.STATE, lambda x, t=t: t[x], {}, d) for t in tables]
    return ConceptClass(Kind.STATE, d, members), list(range(labels))


class TestPseudometric:
    def test_symmetric_and_zero(self):
        cls, labels = random_state_class(0, 3)
        a, b = cls.members[:2]
        assert nets.pseudometric(a, a, labels) == 0.0
        assert nets.pseudometric(a, b, labels) == pytest.approx(nets.pseudometric(b, a, labels))

    def test_projector_default_is_operator_norm(self):
        p0 = concepts.constant_concept(np.diag([1.0, 0.0]), Kind.PROJECTOR)
        p1 = concepts.constant_concept(np.diag([0.0, 1.0]), Kind.PROJECTOR)
        assert nets.pseudometric(p0, p1, [0]) == pytest.approx(1.0)
        assert nets.pseudometric(p0, p1, [0], q=1) == pytest.approx(2.0)

    def test_weights_equal_repetition(self):
        cls, labels = random_state_class(1, 5)
        evals = np.array([[c(x) for x in labels] for c in cls.members])
        rep = np.array([[c(x) for x in [0, 0, 1, 2, 3]] for c in cls.members])
        w = np.array([2, 1, 1, 1]) / 5
        assert np.allclose(nets.distance_matrix(evals, 1, weights=w), nets.distance_matrix(rep, 1))

    def test_empty_labels(self):
        c = concepts.constant_concept(np.eye(2) / 2, Kind.STATE)
        with pytest.raises(ContractError):
            nets.pseudometric(c, c, [])


class TestEmpiricalNet:
    @pytest.mark.parametrize("eps", [0.05, 0.2, 0.5])
    def test_covers_and_separates(self, eps):
        cls, labels = random_state_class(2)
        net = nets.build_empirical_net(cls, labels, eps)
        assert net.distances.min(axis=1).max() <= eps + 1e-12
        assert net.audit()
        inner = net.distances[net.member_index]
        off = inner[~np.eye(len(net), dtype=bool)]
        assert off.size == 0 or off.min() > eps

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 1000))
    def test_size_monotone_in_eps(self, seed):
        cls, labels = random_state_class(seed, size=20)
        sizes = [len(nets.build_empirical_net(cls, labels, e)) for e in (0.02, 0.1, 0.3, 0.8, 2.1)]
        assert sizes == sorted(sizes, reverse=True)
        assert sizes[-1] == 1

    def test_assignment_is_nearest(self):
        cls, labels = random_state_class(3)
        net = nets.build_empirical_net(cls, labels, 0.3)
        assert np.array_equal(net.assignment, np.argmin(net.distances, axis=1))

    def test_radius_for_size(self):
        cls, labels = random_state_class(4)
        net = nets.build_empirical_net(cls, labels, 0.0)
        assert net.radius_for_size(len(cls)) == 0.0
        assert net.radius_for_size(1) >= net.radius_for_size(5)

    def test_sampled_pool(self, rng):
        cls = ConceptClass(Kind.STATE, 2, sampler=lambda r: concepts.constant_concept(
            qcore.random_density_matrix(2, r), Kind.STATE))
        net = nets.build_empirical_net(cls, [0], 0.3, sample_budget=40, rng=rng)
        assert net.audited_on_sample
        with pytest.raises(ContractError, match="sample_budget"):
            nets.build_empirical_net(cls, [0], 0.3)


class TestParameterNets:
    def test_box_grid_spacing(self):
        pts, axes = nets.box_grid([0, -1], [1, 1], 0.3)
        assert all(np.max(np.diff(a)) <= 0.3 + 1e-12 for a in axes)
        assert len(pts) == len(axes[0]) * len(axes[1])

    def test_degenerate_axis(self):
        pts, _ = nets.box_grid([0.5], [0.5], 0.1)
        assert pts.shape == (1, 1)

    def test_unknown_family(self):
        with pytest.raises(ContractError):
            nets.parameter_net("nope", 0.1)

    def test_hermitian_dictionary_radius(self):
        basis = [np.diag([1.0, -1.0]), np.array([[0, 2.0], [2.0, 0]])]
        net = nets.parameter_net("hermitian-dictionary", 0.5, basis=basis, R=1.0)
        assert net.eps_concept == pytest.approx(1.5)
        assert len(net.points) == 25

    def test_vershynin(self):
        exact, simple = nets.vershynin_bound(1.0, 0.5, 3)
        assert exact == pytest.approx(125.0) and simple == pytest.approx(216.0)
        assert exact <= simple


class TestClosedFormBounds:
    # Reference values from an independent 30-digit evaluation.
    @pytest.mark.parametrize("report, expected", [
        (nets.bound_lqc(4, 2, 0.5), 89.5376394521987102),
        (nets.bound_full_unitary(1, 6.0), 0.0),
        (nets.bound_full_unitary(1, 0.1), 28.4504200061382981),
        (nets.bound_fatshatter(10, 1, 0.5, 2), 30.1211120530663465),
    ])
    def test_log10_values(self, report, expected):
        assert report.log10_value == pytest.approx(expected, abs=1e-9)

    def test_huge_value_is_inf(self):
        assert nets.bound_brickwork(20, 20, 0.01).value == math.inf

    def test_uniform_convergence_bound(self):
        assert nets.uniform_convergence_bound(0, 0.1, 0.0) == pytest.approx(4.0)
        assert nets.uniform_convergence_bound(3200, 0.1, math.log(10)) == pytest.approx(40 * math.exp(-1))
        assert nets.uniform_convergence_bound(1, 0.1, 800.0) == math.inf
