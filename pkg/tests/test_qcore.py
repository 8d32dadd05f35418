import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm, sqrtm

from cqlearn import qcore
from cqlearn.qcore import ContractError

from conftest import KET0, KET1, KETP, proj

SQRT_HALF = 0.7071067811865476


def _rand_rho(seed, d=3, rank=None):
    return qcore.random_density_matrix(d, np.random.default_rng(seed), rank=rank)


class TestValidators:
    def test_density_matrix_accepts_valid_state(self):
        rho = qcore.as_density_matrix(np.eye(2) / 2)
        assert np.allclose(rho, np.eye(2) / 2)

    @pytest.mark.parametrize("mat, msg", [
        (np.array([[1.0, 1.0], [0.0, 0.0]]), "Hermitian"),
        (np.diag([1.5, -0.5]), "semi-definite"),
        (np.diag([0.6, 0.6]), "trace"),
    ])
    def test_density_matrix_rejects(self, mat, msg):
        with pytest.raises(ContractError, match=msg):
            qcore.as_density_matrix(mat)

    def test_tiny_negative_eigenvalue_within_tolerance(self):
        rho = qcore.as_density_matrix(np.diag([1.0 + 5e-11, -5e-11]))
        assert np.linalg.eigvalsh(rho).min() >= -qcore.TOL_PSD

    def test_nan_rejected(self):
        with pytest.raises(ContractError):
            qcore.as_density_matrix(np.array([[np.nan, 0], [0, 1]]))

    def test_projector_idempotence(self):
        qcore.as_projector(proj(KETP))
        with pytest.raises(ContractError, match="idempotent"):
            qcore.as_projector(np.diag([1.0, 0.5]))

    def test_hermitian_norm_bound(self):
        h = qcore.HermitianMatrix(np.diag([0.5, -1.0]), 1.0)
        assert h.norm_bound == 1.0
        with pytest.raises(ContractError):
            qcore.HermitianMatrix(np.diag([0.5, -1.1]), 1.0)

    def test_dimension_mismatch(self):
        with pytest.raises(ContractError, match="dimension"):
            qcore.trace_distance(np.eye(2) / 2, np.eye(3) / 3)


class TestDistances:
    @pytest.mark.parametrize("a, b, expected", [
        (KET0, KET0, 0.0),
        (KET0, KET1, 1.0),
        (KET0, KETP, SQRT_HALF),
    ])
    def test_trace_distance_pure(self, a, b, expected):
        assert qcore.trace_distance(proj(a), proj(b)) == pytest.approx(expected, abs=1e-12)

    @pytest.mark.parametrize("a, b, expected", [
        (KET0, KET0, 1.0),
        (KET0, KET1, 0.0),
        (KET0, KETP, SQRT_HALF),
    ])
    def test_fidelity_pure(self, a, b, expected):
        assert qcore.fidelity(proj(a), proj(b)) == pytest.approx(expected, abs=1e-12)

    @pytest.mark.parametrize("a, b, expected", [
        (KET0, KET0, 0.0),
        (KET0, KET1, np.sqrt(2)),
        (KET0, KETP, 0.7653668647301795),
    ])
    def test_bures(self, a, b, expected):
        assert qcore.bures_distance(proj(a), proj(b)) == pytest.approx(expected, abs=1e-10)

    @pytest.mark.parametrize("seed", range(5))
    def test_fidelity_matches_sqrtm_oracle(self, seed):
        a, b = _rand_rho(seed), _rand_rho(seed + 100)
        sa = sqrtm(a)
        oracle = np.real(np.trace(sqrtm(sa @ b @ sa)))
        assert qcore.fidelity(a, b) == pytest.approx(oracle, abs=1e-9)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 10**6), st.integers(2, 4))
    def test_distance_properties(self, seed, d):
        rng = np.random.default_rng(seed)
        a = qcore.random_density_matrix(d, rng, rank=int(rng.integers(1, d + 1)))
        b = qcore.random_density_matrix(d, rng, rank=int(rng.integers(1, d + 1)))
        t, f = qcore.trace_distance(a, b), qcore.fidelity(a, b)
        assert 0 <= t <= 1 and 0 <= f <= 1
        assert t == pytest.approx(qcore.trace_distance(b, a), abs=1e-12)
        # Fuchs-van de Graaf both ways, and the Bures form of the upper bound.
        assert 1 - f <= t + 1e-9
        assert t <= np.sqrt(max(0.0, 1 - f * f)) + 1e-9
        assert t <= qcore.bures_distance(a, b) + 1e-9


class TestNorms:
    def test_identity(self):
        assert qcore.operator_norm(np.eye(3)) == pytest.approx(1.0)
        assert qcore.trace_norm(np.eye(3)) == pytest.approx(3.0)

    def test_rank_one(self, rng):
        u = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        v = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        assert qcore.trace_norm(np.outer(u, v.conj())) == pytest.approx(np.linalg.norm(u) * np.linalg.norm(v))

    @pytest.mark.parametrize("seed", range(4))
    def test_schatten_ordering(self, seed):
        m = np.random.default_rng(seed).standard_normal((4, 4))
        s1, s2, sinf = (qcore.schatten_norm(m, q) for q in (1, 2, np.inf))
        assert s1 >= s2 >= sinf
        assert sinf == pytest.approx(qcore.operator_norm(m))
        assert s2 == pytest.approx(np.linalg.norm(m, "fro"))


class TestHelstrom:
    def test_orthogonal_pair(self):
        assert np.allclose(qcore.helstrom_projector(proj(KET0), proj(KET1)), proj(KET0))

    def test_identical_pair_gives_zero(self):
        rho = _rand_rho(3, 2)
        assert np.allclose(qcore.helstrom_projector(rho, rho), 0)

    @pytest.mark.parametrize("d", [2, 3, 4])
    @pytest.mark.parametrize("seed", range(5))
    def test_identity(self, d, seed):
        a, b = _rand_rho(seed, d), _rand_rho(seed + 50, d)
        A = qcore.helstrom_projector(a, b)
        gap = np.real(np.trace(a @ A) - np.trace(b @ A))
        assert gap == pytest.approx(0.5 * np.abs(np.linalg.eigvalsh(a - b)).sum(), abs=1e-10)


class TestMatrixFunctions:
    def test_zero_is_identity(self):
        assert np.allclose(qcore.matrix_exp_hermitian(np.zeros((2, 2))), np.eye(2))

    def test_diagonal_phase(self):
        u = qcore.matrix_exp_hermitian(np.diag([0.0, np.pi]), 1.0, mode="imag")
        assert np.allclose(u, np.diag([1.0, -1.0]))

    @pytest.mark.parametrize("seed", range(4))
    def test_against_expm(self, seed):
        h = qcore.random_hermitian(3, np.random.default_rng(seed), norm=2.0)
        assert np.allclose(qcore.matrix_exp_hermitian(h, 0.7, "imag"), expm(0.7j * h), atol=1e-12)
        assert np.allclose(qcore.matrix_exp_hermitian(h, 0.7, "real"), expm(-0.7 * h), atol=1e-12)

    def test_non_hermitian_rejected(self):
        with pytest.raises(ContractError):
            qcore.matrix_exp_hermitian(np.array([[0.0, 1.0], [0.0, 0.0]]))

    def test_gibbs_matches_expm(self, rng):
        h = qcore.random_hermitian(3, rng, norm=5.0)
        g = expm(-h)
        assert np.allclose(qcore.gibbs_state(h), g / np.trace(g), atol=1e-12)

    def test_low_energy_examples(self):
        assert np.allclose(qcore.low_energy_projector(np.diag([0.0, 1.0]), 0.5), proj(KET0))
        assert np.allclose(qcore.low_energy_projector(np.diag([0.0, 1.0]), -1.0), 0)

    def test_low_energy_rank(self, rng):
        h = qcore.random_hermitian(5, rng)
        w = np.sort(np.linalg.eigvalsh(h))
        e = 0.5 * (w[1] + w[2])
        assert np.trace(qcore.low_energy_projector(h, e)).real == pytest.approx(2.0)

    def test_low_energy_degenerate(self):
        with pytest.raises(ContractError, match="within"):
            qcore.low_energy_projector(np.diag([0.0, 1.0]), 1.0 + 1e-9)


class TestRandomObjects:
    def test_haar_unitary(self, rng):
        u = qcore.random_unitary(4, rng)
        assert np.allclose(u @ u.conj().T, np.eye(4))

    @pytest.mark.parametrize("rank", [0, 1, 2, 3])
    def test_projector_rank(self, rng, rank):
        p = qcore.random_projector(3, rng, rank=rank)
        assert np.allclose(p @ p, p) and np.trace(p).real == pytest.approx(rank)

    def test_hermitian_norm(self, rng):
        assert qcore.operator_norm(qcore.random_hermitian(4, rng, norm=0.3)) == pytest.approx(0.3)


class TestJson:
    def test_round_trip(self, rng):
        m = qcore.random_density_matrix(3, rng)
        obj = json.loads(json.dumps(qcore.matrix_to_json(m)))
        assert set(obj) == {"dim", "re", "im"} and obj["dim"] == 3
        assert np.array_equal(qcore.matrix_from_json(obj), m)
