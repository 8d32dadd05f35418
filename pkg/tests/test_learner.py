import csv
import io
import json

import numpy as np
import pytest

from cqlearn import concepts, learner, qcore, simstate
from cqlearn.algorithms import AlgorithmConfig
from cqlearn.concepts import Concept, ConceptClass, FiniteLabels, Kind
from cqlearn.experiments import interval_class
from cqlearn.qcore import ContractError

from conftest import KET0, KET1, KETP, proj


def interval_source(rng, offset=0.0, truth=5):
    cls = interval_class()
    labels = FiniteLabels(list(range(8)), rng.dirichlet(np.ones(8)))
    return cls, concepts.depolarized_source(labels, cls.members[truth], offset, 2)


class TestTrainingSet:
    def test_grouped_for_diagonal_outputs(self, rng):
        _, src = interval_source(rng)
        ts = learner.draw_training_set(src, 1000, rng)
        assert ts.grouped and ts.n == 1000
        assert np.all(ts.counts > 0)
        labels, state = ts
        assert len(labels) == len(ts.counts) == state.probs.shape[0]

    def test_dense_for_general_outputs(self, rng):
        labels = FiniteLabels([0, 1], [0.5, 0.5])
        src = concepts.CQSource(labels, lambda x: proj(KETP) if x else proj(KET0), d=2)
        ts = learner.draw_training_set(src, 6, rng)
        assert not ts.grouped
        assert ts.state.n == 6
        assert np.array_equal(np.bincount(ts.site_groups, minlength=len(ts.labels)), ts.counts)

    def test_dense_cap_enforced(self, rng):
        labels = FiniteLabels([0], [1.0])
        src = concepts.CQSource(labels, lambda x: proj(KETP), d=2)
        with pytest.raises(simstate.BackendError):
            learner.draw_training_set(src, 40, rng)

    def test_continuous_labels_keep_order(self, rng):
        src = concepts.CQSource(concepts.ContinuousLabels(lambda r, n: r.uniform(0, 1, n)),
                                lambda x: np.diag([1 - x, x]), d=2)
        ts = learner.draw_training_set(src, 5, rng)
        sub_labels, sub_counts = ts.prefix(3, rng)
        assert sub_labels == list(ts.labels[:3]) and np.all(sub_counts == 1)

    def test_prefix_sizes(self, rng):
        _, src = interval_source(rng)
        ts = learner.draw_training_set(src, 500, rng)
        labels, counts = ts.prefix(50, rng)
        assert counts.sum() == 50 and set(labels) <= set(ts.labels)
        with pytest.raises(ContractError):
            ts.prefix(501, rng)


class TestRiskReport:
    def _row(self, **kw):
        row = {"net_position": 0, "concept": 0, "selected": True, "estimate": 0.5,
               "empirical_risk": 0.2, "true_risk": 0.3, "true_risk_se": 0.0, "gap": 0.1}
        row.update(kw)
        return row

    def test_gap_definition_checked(self):
        learner.RiskReport("erm", [self._row()], {"inf_risk": 0.2})
        with pytest.raises(ContractError, match="gap"):
            learner.RiskReport("erm", [self._row(gap=0.5)], {"inf_risk": 0.2})

    def test_risk_range_checked(self):
        with pytest.raises(ContractError, match="outside"):
            learner.RiskReport("erm", [self._row(true_risk=1.5, gap=1.3)], {"inf_risk": 0.2})

    def test_shadow_gap(self):
        rep = learner.RiskReport("shadow", [self._row(estimate=0.6, gap=0.1)], {})
        assert rep.selected["estimate"] == 0.6

    def test_csv_and_json(self):
        rep = learner.RiskReport("erm", [self._row()], {"inf_risk": 0.2, "within_target": True})
        rows = list(csv.DictReader(io.StringIO(rep.to_csv(run=3))))
        assert rows[0]["run"] == "3" and rows[0]["selected"] == "1"
        assert json.loads(rep.to_json())["task"] == "erm"
        t = learner.tally([rep, rep])
        assert t["runs"] == 2 and t["success_rate"] == 1.0


class TestProjectorLearner:
    def test_realizable_interval_learning(self):
        rng = np.random.default_rng(0)
        cls, src = interval_source(rng)
        cfg = AlgorithmConfig(eps=0.15)
        rep = learner.learn_projector_class(src, cls, cfg, rng=rng)
        assert rep.summary["inf_risk"] == pytest.approx(0.0, abs=1e-12)
        assert rep.summary["within_target"]
        assert rep.meta["backend"] == "grouped-commuting"
        assert rep.meta["n"] >= rep.meta["schedule"]["n_required"]

    def test_agnostic_offset(self):
        rng = np.random.default_rng(1)
        cls, src = interval_source(rng, offset=0.2)
        rep = learner.learn_projector_class(src, cls, AlgorithmConfig(eps=0.15), rng=rng)
        assert rep.summary["inf_risk"] == pytest.approx(0.1, abs=1e-12)
        assert rep.summary["selected_gap"] <= 7 * 0.15

    def test_net_prefix(self):
        rng = np.random.default_rng(2)
        cls, src = interval_source(rng)
        rep = learner.learn_projector_class(src, cls, AlgorithmConfig(eps=0.15), rng=rng, net_prefix=200)
        assert rep.meta["net_prefix"] == 200

    def test_net_cap(self, rng):
        cls, src = interval_source(rng)
        with pytest.raises(learner.NetTooLargeError) as info:
            learner.learn_projector_class(src, cls, AlgorithmConfig(eps=0.01), rng=rng, n=2000, net_cap=2)
        assert info.value.size > 2 and info.value.required_eps > 0.01

    def test_kind_mismatch(self, rng):
        cls = ConceptClass(Kind.STATE, 2, [concepts.constant_concept(np.eye(2) / 2, Kind.STATE)])
        _, src = interval_source(rng)
        with pytest.raises(ContractError, match="PROJECTOR"):
            learner.learn_projector_class(src, cls, rng=rng)


class TestStateLearner:
    def test_exact_statistics(self):
        rng = np.random.default_rng(3)
        members = [concepts.constant_concept(np.diag([1 - p, p]), Kind.STATE) for p in (0.0, 0.3, 0.6, 1.0)]
        cls = ConceptClass(Kind.STATE, 2, members)
        src = concepts.CQSource(FiniteLabels([0, 1], [0.5, 0.5]), lambda x: np.diag([0.7, 0.3]), d=2)
        rep = learner.learn_state_class(src, cls, AlgorithmConfig(eps=0.05), rng=rng, n=100,
                                        exact_statistics=True)
        assert rep.selected["concept"] == 1 and rep.summary["within_target"]


class TestUniformConvergence:
    def test_decay(self):
        rng = np.random.default_rng(4)
        cls, src = interval_source(rng, offset=0.2)
        out = learner.uniform_convergence_experiment(src, cls, (50, 800), 60, rng, eps=0.5)
        assert out["rows"][1]["median"] < out["rows"][0]["median"]
        assert out["monotone"] and out["bound_ok"] and out["class_size"] == len(cls)
