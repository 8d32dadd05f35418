"""Quantum-object primitives on dense complex matrices.

All spectral work goes through ``numpy.linalg.eigh``. Tolerances:

* hermiticity ``TOL_HERM = 1e-10`` (max entrywise ``|M - M^dagger|``)
* positivity slack ``TOL_PSD = 1e-10`` (negative eigenvalues above ``-TOL_PSD``
  are clamped to zero)
* idempotency ``TOL_IDEM = 1e-9`` (operator norm of ``P^2 - P``)
"""
from dataclasses import dataclass

import numpy as np

TOL_HERM = 1e-10
TOL_PSD = 1e-10
TOL_TRACE = 1e-10
TOL_IDEM = 1e-9
TOL_GAP = 1e-8
POS_CUTOFF = 1e-12


class ContractError(ValueError):
    """Raised when an input violates an operation's stated preconditions."""


def _as_square(m, name="matrix"):
    a = np.asarray(m, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] == 0:
        raise ContractError(f"{name} must be a non-empty square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ContractError(f"{name} has non-finite entries")
    return a


def _same_dim(a, b):
    if a.shape != b.shape:
        raise ContractError(f"dimension mismatch: {a.shape} vs {b.shape}")


def is_hermitian(m, tol=TOL_HERM):
    a = np.asarray(m)
    return a.ndim == 2 and a.shape[0] == a.shape[1] and float(np.max(np.abs(a - a.conj().T), initial=0.0)) <= tol


def _hermitize(a):
    return 0.5 * (a + a.conj().T)


def as_hermitian(m, norm_bound=None, name="matrix"):
    """Validate a Hermitian matrix (optionally with an operator-norm bound)."""
    a = _as_square(m, name)
    if not is_hermitian(a):
        raise ContractError(f"{name} is not Hermitian within {TOL_HERM}")
    a = _hermitize(a)
    if norm_bound is not None and operator_norm(a) > norm_bound + 1e-9:
        raise ContractError(f"{name} operator norm exceeds bound {norm_bound}")
    return a


def as_density_matrix(m, name="state"):
    """Validate and return a density matrix (Hermitian, PSD, unit trace)."""
    a = as_hermitian(m, name=name)
    w = np.linalg.eigvalsh(a)
    if w[0] < -TOL_PSD:
        raise ContractError(f"{name} is not positive semi-definite (min eigenvalue {w[0]:.3e})")
    if abs(np.trace(a).real - 1.0) > TOL_TRACE:
        raise ContractError(f"{name} trace is {np.trace(a).real!r}, expected 1")
    return a


def as_projector(m, name="projector"):
    """Validate and return a Hermitian idempotent matrix."""
    a = as_hermitian(m, name=name)
    if operator_norm(a @ a - a) > TOL_IDEM:
        raise ContractError(f"{name} is not idempotent within {TOL_IDEM}")
    return a


@dataclass(frozen=True)
class HermitianMatrix:
    """A Hermitian matrix with a declared operator-norm bound."""

    mat: np.ndarray
    norm_bound: float

    def __post_init__(self):
        if self.norm_bound < 0:
            raise ContractError("norm_bound must be non-negative")
        object.__setattr__(self, "mat", as_hermitian(self.mat, self.norm_bound))

    @property
    def dim(self):
        return self.mat.shape[0]


def _eigh_psd(a):
    w, v = np.linalg.eigh(_hermitize(a))
    w = np.where((w < 0) & (w > -TOL_PSD), 0.0, w)
    return np.clip(w, 0.0, None), v


def psd_sqrt(a):
    """Square root of a positive semi-definite matrix via eigendecomposition."""
    w, v = _eigh_psd(_as_square(a))
    return (v * np.sqrt(w)) @ v.conj().T


def singular_values(m):
    return np.linalg.svd(np.asarray(m, dtype=complex), compute_uv=False)


def schatten_norm(m, q):
    """Schatten q-norm; ``q=np.inf`` gives the operator norm."""
    s = singular_values(m)
    if q == np.inf:
        return float(s.max(initial=0.0))
    if q < 1:
        raise ContractError("Schatten norm requires q >= 1")
    return float(np.sum(s**q) ** (1.0 / q))


def operator_norm(m):
    return schatten_norm(m, np.inf)


def trace_norm(m):
    return schatten_norm(m, 1)


def trace_distance(a, b):
    """Half the trace norm of ``a - b``."""
    a, b = _as_square(a), _as_square(b)
    _same_dim(a, b)
    d = _hermitize(a - b)
    return float(min(1.0, 0.5 * np.abs(np.linalg.eigvalsh(d)).sum()))


def _psd_factor(a):
    """``L`` with ``a = L L^dagger``, dropping eigenvalues below numerical rank.

    Rounding leaves eigenvalues of order 1e-17 where the exact value is zero;
    their square roots would otherwise perturb the fidelity at the 1e-8 level.
    """
    w, v = _eigh_psd(a)
    keep = w > max(w.max(), 0.0) * len(w) * np.finfo(float).eps
    return v[:, keep] * np.sqrt(w[keep])


def fidelity(a, b):
    """Root fidelity ``||sqrt(a) sqrt(b)||_1`` (not squared).

    Computed as the nuclear norm of ``La^dagger Lb`` for factors ``a = La La^dagger``.
    """
    a, b = _as_square(a), _as_square(b)
    _same_dim(a, b)
    la, lb = _psd_factor(a), _psd_factor(b)
    if la.shape[1] == 0 or lb.shape[1] == 0:
        return 0.0
    f = float(np.sum(singular_values(la.conj().T @ lb)))
    return float(min(1.0, max(0.0, f)))


def bures_distance(a, b):
    """``sqrt(2 (1 - F))`` with ``F`` the root fidelity."""
    return float(np.sqrt(max(0.0, 2.0 * (1.0 - fidelity(a, b)))))


def positive_part_projector(m):
    """Projector onto the eigenvectors of Hermitian ``m`` with eigenvalue > 1e-12."""
    w, v = np.linalg.eigh(_hermitize(_as_square(m)))
    keep = v[:, w > POS_CUTOFF]
    return keep @ keep.conj().T


def helstrom_projector(si, sj):
    """Projector onto the positive part of ``si - sj``.

    It attains ``trace_distance(si, sj) == Tr[si A] - Tr[sj A]``.
    """
    si, sj = _as_square(si), _as_square(sj)
    _same_dim(si, sj)
    return positive_part_projector(si - sj)


def matrix_exp_hermitian(h, scale=1.0, mode="imag"):
    """Exponential of a Hermitian matrix through its eigendecomposition.

    Args:
        h: Hermitian matrix (array or ``HermitianMatrix``).
        scale: Real multiplier ``s``.
        mode: ``"imag"`` returns the unitary ``exp(i s H)``; ``"real"``
            returns the positive matrix ``exp(-s H)``.
    """
    mat = h.mat if isinstance(h, HermitianMatrix) else h
    a = _as_square(mat)
    if not is_hermitian(a):
        raise ContractError("matrix_exp_hermitian requires a Hermitian input")
    w, v = np.linalg.eigh(_hermitize(a))
    if mode == "imag":
        out = (v * np.exp(1j * scale * w)) @ v.conj().T
        if operator_norm(out @ out.conj().T - np.eye(len(w))) > 1e-9:
            raise ContractError("exponential lost unitarity")
    elif mode == "real":
        out = (v * np.exp(-scale * w)) @ v.conj().T
    else:
        raise ContractError(f"unknown mode {mode!r}")
    return out


def low_energy_projector(h, energy):
    """Spectral projector onto eigenvalues strictly below ``energy``.

    Raises:
        ContractError: if an eigenvalue lies within ``TOL_GAP`` of ``energy``.
    """
    mat = h.mat if isinstance(h, HermitianMatrix) else h
    a = as_hermitian(mat)
    w, v = np.linalg.eigh(a)
    if np.any(np.abs(w - energy) <= TOL_GAP):
        raise ContractError(f"eigenvalue within {TOL_GAP} of threshold {energy}")
    keep = v[:, w < energy]
    return keep @ keep.conj().T


def gibbs_state(h):
    """Normalized ``exp(-H) / Tr exp(-H)``, shifted for numerical stability."""
    a = as_hermitian(h.mat if isinstance(h, HermitianMatrix) else h)
    w, v = np.linalg.eigh(a)
    p = np.exp(-(w - w.min()))
    p /= p.sum()
    return (v * p) @ v.conj().T


def pure_state(vec):
    """Density matrix of a (normalized) state vector."""
    v = np.asarray(vec, dtype=complex).ravel()
    v = v / np.linalg.norm(v)
    return np.outer(v, v.conj())


def random_unitary(d, rng):
    """Haar-random unitary via QR of a complex Ginibre matrix."""
    z = (rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    ph = np.diagonal(r) / np.abs(np.diagonal(r))
    return q * ph


def random_pure_state(d, rng):
    z = rng.standard_normal(d) + 1j * rng.standard_normal(d)
    return pure_state(z)


def random_density_matrix(d, rng, rank=None):
    """Random mixed state from the induced (Ginibre) measure."""
    k = d if rank is None else rank
    g = rng.standard_normal((d, k)) + 1j * rng.standard_normal((d, k))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


def random_hermitian(d, rng, norm=1.0):
    """Random Hermitian matrix rescaled to operator norm ``norm``."""
    g = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    h = _hermitize(g)
    return h * (norm / operator_norm(h))


def random_projector(d, rng, rank=None):
    r = int(rng.integers(0, d + 1)) if rank is None else rank
    u = random_unitary(d, rng)[:, :r]
    return u @ u.conj().T


def matrix_to_json(m):
    """Serialize to ``{"dim", "re", "im"}``."""
    a = _as_square(m)
    return {"dim": int(a.shape[0]), "re": a.real.tolist(), "im": a.imag.tolist()}


def matrix_from_json(obj):
    a = np.asarray(obj["re"], dtype=float) + 1j * np.asarray(obj["im"], dtype=float)
    if a.shape != (obj["dim"], obj["dim"]):
        raise ContractError("matrix JSON shape does not match dim")
    return _as_square(a)
