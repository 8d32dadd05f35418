"""Concept classes, losses and classical-quantum sources.

A concept maps a classical label to a projector (event hypotheses) or to a
density matrix (state hypotheses). Infinite families are given by a seeded
parameter sampler plus a parameter-to-concept map.
"""
import enum
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import qcore
from .qcore import ContractError
from .simstate import DENSE_CAP


class Kind(enum.Enum):
    PROJECTOR = "projector"
    STATE = "state"


@dataclass(frozen=True, eq=False)
class Concept:
    """A deterministic map ``label -> matrix`` with its defining parameters."""

    kind: Kind
    fn: object
    params: dict = field(default_factory=dict)
    d: int = None

    def __call__(self, x):
        return self.fn(x)

    def evaluate_checked(self, x):
        out = self.fn(x)
        if self.kind is Kind.PROJECTOR:
            return qcore.as_projector(out)
        return qcore.as_density_matrix(out)


def constant_concept(mat, kind):
    m = np.asarray(mat, dtype=complex)
    return Concept(kind, lambda x, m=m: m, {"matrix": m}, m.shape[0])


@dataclass
class ConceptClass:
    """Finite list of concepts or a sampler for an infinite family.

    Args:
        kind: Shared output kind.
        d: Shared output dimension.
        members: Explicit finite list (``None`` for infinite families).
        sampler: ``rng -> Concept`` for infinite families.
        name: Family tag used in reports.
        build: Parameter-to-concept map for parameterized families.
    """

    kind: Kind
    d: int
    members: list = None
    sampler: object = None
    name: str = "class"
    build: object = None

    def __post_init__(self):
        if self.members is None and self.sampler is None:
            raise ContractError("a concept class needs members or a sampler")
        if self.members is not None:
            for c in self.members:
                if c.kind is not self.kind:
                    raise ContractError("all members must share the class kind")

    @property
    def finite(self):
        return self.members is not None

    def __len__(self):
        if not self.finite:
            raise ContractError("infinite class has no length")
        return len(self.members)

    def sample(self, rng, size):
        if self.finite:
            idx = rng.integers(0, len(self.members), size=size)
            return [self.members[i] for i in idx]
        return [self.sampler(rng) for _ in range(size)]


# ------------------------------------------------------------------ losses


def loss(concept, sample):
    """``d_tr(sigma(x), rho)`` for states, ``1 - Tr[rho Pi(x)]`` for projectors."""
    x, rho = sample
    out = concept(x)
    rho = np.asarray(rho)
    if out.shape != rho.shape:
        raise ContractError(f"dimension mismatch: concept {out.shape} vs state {rho.shape}")
    if concept.kind is Kind.STATE:
        return qcore.trace_distance(out, rho)
    return float(np.clip(1.0 - np.real(np.trace(rho @ out)), 0.0, 1.0))


def empirical_risk(concept, dataset):
    """Average loss over ``(label, state)`` pairs. Oracle use only."""
    if len(dataset) == 0:
        raise ContractError("empty dataset")
    return math.fsum(loss(concept, s) for s in dataset) / len(dataset)


# ------------------------------------------------------------------ sources


@dataclass
class FiniteLabels:
    """Finite label space with a probability vector."""

    values: list
    probs: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=float)
        if len(self.values) != len(self.probs) or abs(self.probs.sum() - 1) > 1e-12 or np.any(self.probs < 0):
            raise ContractError("finite label law must be a probability vector over the values")

    def sample_indices(self, rng, n):
        return rng.choice(len(self.values), size=n, p=self.probs)

    def sample(self, rng, n):
        return [self.values[i] for i in self.sample_indices(rng, n)]


@dataclass
class ContinuousLabels:
    """Label space given only by a sampler ``(rng, n) -> list``."""

    sampler: object
    name: str = "continuous"

    def sample(self, rng, n):
        return list(self.sampler(rng, n))


@dataclass
class CQSource:
    """Label distribution plus the unknown channel ``x -> rho(x)``.

    ``realizable`` marks whether the channel belongs to the class it is used
    with; ``truth`` optionally holds the generating concept for oracles.
    """

    labels: object
    channel: object
    realizable: bool = None
    truth: object = None
    d: int = None

    @property
    def finite(self):
        return isinstance(self.labels, FiniteLabels)

    def sample(self, rng, n):
        return self.labels.sample(rng, n)


def depolarized_source(labels, concept, offset, d):
    """Source emitting ``(1 - p) sigma(x) + p I/d`` around a concept.

    For a projector concept ``sigma(x)`` is the normalized projector (or
    ``I/d`` when it vanishes). With ``offset = 0`` the source is realizable.
    """
    if not 0 <= offset <= 1:
        raise ContractError("offset must lie in [0, 1]")
    eye = np.eye(d) / d

    def channel(x):
        out = concept(x)
        if concept.kind is Kind.PROJECTOR:
            tr = np.real(np.trace(out))
            out = out / tr if tr > 0.5 else eye
        return (1 - offset) * out + offset * eye

    return CQSource(labels, channel, realizable=offset == 0, truth=concept, d=d)


def true_risk(concept, source, mc_samples=100_000, rng=None):
    """True risk and its standard error (exact on finite label spaces)."""
    if source.finite:
        val = math.fsum(p * loss(concept, (x, source.channel(x)))
                        for x, p in zip(source.labels.values, source.labels.probs) if p > 0)
        return val, 0.0
    rng = np.random.default_rng() if rng is None else rng
    xs = source.sample(rng, mc_samples)
    ls = np.array([loss(concept, (x, source.channel(x))) for x in xs])
    return float(ls.mean()), float(ls.std(ddof=1) / math.sqrt(len(ls)))


# -------------------------------------------------------- real function family


@dataclass
class RealFunctionFamily:
    """``g(x) = sum_k a_k phi_k(x)`` with coefficients in a box.

    Args:
        basis: Feature functions on labels.
        coeff_lo, coeff_hi: Per-coefficient bounds.
        B: Range bound, checked as ``|g| <= B`` on ``grid``.
        D_fs: Declared fat-shattering parameter (an input, not computed).
        grid: Validation labels.
    """

    basis: list
    coeff_lo: np.ndarray
    coeff_hi: np.ndarray
    B: float
    D_fs: float = 1.0
    grid: list = None

    def __post_init__(self):
        self.coeff_lo = np.asarray(self.coeff_lo, dtype=float)
        self.coeff_hi = np.asarray(self.coeff_hi, dtype=float)
        if self.coeff_lo.shape != (len(self.basis),) or np.any(self.coeff_lo > self.coeff_hi):
            raise ContractError("coefficient box must match the basis")
        if self.grid is not None:
            feats = np.array([[f(x) for f in self.basis] for x in self.grid])
            worst = np.abs(feats) @ np.maximum(np.abs(self.coeff_lo), np.abs(self.coeff_hi))
            if np.max(worst) > self.B + 1e-12:
                raise ContractError("coefficient box allows |g| > B on the validation grid")

    @property
    def dim(self):
        return len(self.basis)

    def features(self, x):
        return np.array([f(x) for f in self.basis], dtype=float)

    def function(self, coeffs):
        a = np.asarray(coeffs, dtype=float)
        if np.any(a < self.coeff_lo - 1e-12) or np.any(a > self.coeff_hi + 1e-12):
            raise ContractError("coefficients outside the admissible box")
        return lambda x: float(self.features(x) @ a)

    def sample_coeffs(self, rng):
        return rng.uniform(self.coeff_lo, self.coeff_hi)


def fourier_family(n_terms, B, D_fs=None, grid_size=201):
    """Truncated Fourier family on ``[0, 1]`` with values in ``[0, B]``.

    ``g(x) = a_0 + sum_k (a_k cos 2 pi k x + b_k sin 2 pi k x)`` with
    ``a_0 in [B/4, 3B/4]`` and the other coefficients bounded by ``B/(8K)``.
    """
    basis = [lambda x: 1.0]
    for k in range(1, n_terms + 1):
        basis.append(lambda x, k=k: math.cos(2 * math.pi * k * float(x)))
        basis.append(lambda x, k=k: math.sin(2 * math.pi * k * float(x)))
    w = B / (8 * max(n_terms, 1))
    lo = np.r_[B / 4, -w * np.ones(2 * n_terms)]
    hi = np.r_[3 * B / 4, w * np.ones(2 * n_terms)]
    grid = list(np.linspace(0, 1, grid_size))
    return RealFunctionFamily(basis, lo, hi, B, D_fs if D_fs is not None else 2 * n_terms + 1, grid)


def zero_family():
    """The family containing only ``g = 0``."""
    return RealFunctionFamily([lambda x: 0.0], [0.0], [0.0], 0.0, 0.0)


# ------------------------------------------------------------------ circuits


@dataclass(frozen=True)
class Arch:
    """Circuit architecture: ``lqc`` (l two-qubit gates on adjacent pairs),
    ``brickwork`` (l brick layers) or ``full`` (one m-qubit unitary)."""

    kind: str
    m: int
    depth: int = 1

    def __post_init__(self):
        if self.kind not in ("lqc", "brickwork", "full"):
            raise ContractError(f"unknown architecture {self.kind!r}")
        if self.m < 1 or self.depth < 0:
            raise ContractError("architecture sizes must be positive")
        if self.kind != "full" and self.m < 2:
            raise ContractError("two-qubit gate architectures need m >= 2")

    def slots(self):
        """Gate slots as lists of first-qubit positions per layer."""
        if self.kind == "full":
            return [None]
        if self.kind == "lqc":
            return [[None]] * self.depth
        out = []
        for layer in range(self.depth):
            out.append(list(range(layer % 2, self.m - 1, 2)))
        return out


def embed_two_qubit(gate, pos, m):
    """Lift a 4x4 gate on qubits ``(pos, pos+1)`` to ``m`` qubits."""
    return np.kron(np.kron(np.eye(2**pos), gate), np.eye(2 ** (m - pos - 2)))


def sample_circuit(arch, rng):
    """Haar-random gates in every slot: list of ``(pos, U)``; ``pos=None`` means full."""
    if arch.kind == "full":
        return [(None, qcore.random_unitary(2**arch.m, rng))]
    gates = []
    if arch.kind == "lqc":
        for _ in range(arch.depth):
            gates.append((int(rng.integers(0, arch.m - 1)), qcore.random_unitary(4, rng)))
        return gates
    for layer in arch.slots():
        for pos in layer:
            gates.append((pos, qcore.random_unitary(4, rng)))
    return gates


def circuit_unitary(gates, m):
    u = np.eye(2**m, dtype=complex)
    for pos, g in gates:
        full = g if pos is None else embed_two_qubit(g, pos, m)
        u = full @ u
    return u


def _conj(u, a):
    return u @ a @ u.conj().T


def make_circuit_class(arch, input_prep, kind):
    """Class ``{x -> U prep(x) U^dagger}`` over Haar-random gates in ``arch``."""
    if arch.m > DENSE_CAP // 2:
        raise ContractError(f"circuit on {arch.m} qubits exceeds the dense cap")

    def build(gates):
        u = circuit_unitary(gates, arch.m)
        return Concept(kind, lambda x, u=u: _conj(u, input_prep(x)), {"gates": gates}, 2**arch.m)

    return ConceptClass(kind, 2**arch.m, sampler=lambda rng: build(sample_circuit(arch, rng)),
                        name=f"circuit-{arch.kind}", build=build)


def make_data_dependent_circuit_class(arch, insert_slots, hams, gfam, kind, input_prep):
    """Fixed circuit interleaved with label-dependent gates ``exp(i H_j g_j(x))``.

    Args:
        arch: Architecture of the fixed gates.
        insert_slots: For each inserted gate, the number of fixed gates applied
            before it.
        hams: One Hermitian matrix (full register) per inserted gate.
        gfam: RealFunctionFamily for every ``g_j``.
        kind: Output kind.
        input_prep: Label-to-matrix preparation.

    Returns:
        ConceptClass whose ``build(gates, coeffs)`` makes one concept.
    """
    if len(insert_slots) != len(hams):
        raise ContractError("one Hamiltonian per inserted slot is required")
    dim = 2**arch.m
    hams = [h.mat if isinstance(h, qcore.HermitianMatrix) else qcore.as_hermitian(h) for h in hams]
    for h in hams:
        if h.shape != (dim, dim):
            raise ContractError("inserted Hamiltonians must act on the full register")
    eig = [np.linalg.eigh(h) for h in hams]

    def unitary(gates, coeffs, x):
        gs = [gfam.function(a)(x) for a in coeffs]
        u = np.eye(dim, dtype=complex)
        j = 0
        order = sorted(range(len(insert_slots)), key=lambda k: insert_slots[k])
        for i in range(len(gates) + 1):
            while j < len(order) and insert_slots[order[j]] == i:
                k = order[j]
                w, v = eig[k]
                u = ((v * np.exp(1j * gs[k] * w)) @ v.conj().T) @ u
                j += 1
            if i < len(gates):
                pos, g = gates[i]
                u = (g if pos is None else embed_two_qubit(g, pos, arch.m)) @ u
        return u

    def build(gates, coeffs):
        return Concept(kind, lambda x: _conj(unitary(gates, coeffs, x), input_prep(x)),
                       {"gates": gates, "coeffs": [np.asarray(a) for a in coeffs]}, dim)

    def sampler(rng):
        return build(sample_circuit(arch, rng), [gfam.sample_coeffs(rng) for _ in hams])

    return ConceptClass(kind, dim, sampler=sampler, name=f"dd-circuit-{arch.kind}", build=build)


def data_dependent_gate(h, g):
    """``exp(i g H)``."""
    return qcore.matrix_exp_hermitian(h, g, "imag")


# ----------------------------------------------------- Hamiltonian families


def _ham_sum(h0, vfam, gs):
    out = np.array(h0, dtype=complex)
    for g, v in zip(gs, vfam):
        out = out + g * v
    return out


def _mats(hs):
    return [h.mat if isinstance(h, qcore.HermitianMatrix) else qcore.as_hermitian(h) for h in hs]


def make_gibbs_class(H0, Vfam, gfam):
    """States ``exp(-H0 - sum_j g_j(x) V_j) / Tr[...]``.

    The returned class's ``build(coeffs)`` takes one coefficient vector per ``V_j``.
    """
    h0 = _mats([H0])[0]
    vs = _mats(Vfam)

    def build(coeffs):
        fs = [gfam.function(a) for a in coeffs]
        return Concept(Kind.STATE, lambda x: qcore.gibbs_state(_ham_sum(h0, vs, [f(x) for f in fs])),
                       {"coeffs": [np.asarray(a) for a in coeffs]}, h0.shape[0])

    return ConceptClass(Kind.STATE, h0.shape[0], sampler=lambda rng: build([gfam.sample_coeffs(rng) for _ in vs]),
                        name="gibbs", build=build)


def make_phaseshift_class(Hfam, gfam, probe, kind=Kind.STATE):
    """``x -> U^g(x) probe(x) U^-g(x)`` with ``U = exp(iH)``, ``H`` from ``Hfam``.

    Probes are unentangled (no reference system).
    """
    hs = _mats(Hfam)
    eig = [np.linalg.eigh(h) for h in hs]

    def build(h_index, coeffs):
        w, v = eig[h_index]
        f = gfam.function(coeffs)

        def fn(x):
            u = (v * np.exp(1j * f(x) * w)) @ v.conj().T
            return _conj(u, probe(x))

        return Concept(kind, fn, {"h_index": h_index, "coeffs": np.asarray(coeffs)}, hs[0].shape[0])

    def sampler(rng):
        return build(int(rng.integers(0, len(hs))), gfam.sample_coeffs(rng))

    return ConceptClass(kind, hs[0].shape[0], sampler=sampler, name="phaseshift", build=build)


def make_lowenergy_class(H0, Vfam, gfam, E, gap):
    """Projectors onto eigenvalues of ``H0 + g(x) V`` below ``E``.

    Requires ``H0`` to have no eigenvalue in ``[E - 2 gap, E + 2 gap]`` and every
    ``||V|| <= gap / B`` so that ``||g(x) V|| <= gap``.
    """
    h0 = _mats([H0])[0]
    vs = _mats(Vfam)
    w0 = np.linalg.eigvalsh(h0)
    if np.any(np.abs(w0 - E) <= 2 * gap):
        raise ContractError(f"H0 has an eigenvalue within 2*gap={2 * gap} of E={E}")
    for v in vs:
        if gfam.B > 0 and qcore.operator_norm(v) > gap / gfam.B + 1e-12:
            raise ContractError("perturbation norm exceeds gap / B")

    def build(v_index, coeffs):
        f = gfam.function(coeffs)
        v = vs[v_index]
        return Concept(Kind.PROJECTOR, lambda x: qcore.low_energy_projector(h0 + f(x) * v, E),
                       {"v_index": v_index, "coeffs": np.asarray(coeffs)}, h0.shape[0])

    def sampler(rng):
        return build(int(rng.integers(0, len(vs))), gfam.sample_coeffs(rng))

    return ConceptClass(Kind.PROJECTOR, h0.shape[0], sampler=sampler, name="lowenergy", build=build)


# ------------------------------------------------------------ restrictions


def restriction_matrix(concepts, labels):
    """Stack of evaluations, shape ``(len(concepts), len(labels), d, d)``."""
    return np.array([[c(x) for x in labels] for c in concepts])


def restriction_count(cls, labels, tol=1e-9):
    """Number of distinct restrictions of a finite class to ``labels``.

    Two concepts coincide when every per-label operator-norm distance is at
    most ``tol``.
    """
    if not cls.finite:
        raise ContractError("restriction_count needs a finite class")
    return len(distinct_restrictions(cls.members, labels, tol))


def distinct_restrictions(concepts, labels, tol=1e-9):
    """Indices of the first concept of each distinct restriction class."""
    evals = restriction_matrix(concepts, labels)
    reps = []
    for i in range(len(concepts)):
        if reps:
            diff = evals[reps] - evals[i][None]
            # ||A|| <= ||A||_F <= sqrt(d) ||A||: the Frobenius norm settles most pairs.
            frob = np.max(np.sqrt(np.sum(np.abs(diff) ** 2, axis=(-2, -1))), axis=1)
            if np.any(frob <= tol):
                continue
            unsure = np.flatnonzero(frob <= tol * np.sqrt(diff.shape[-1]))
            if len(unsure) and np.any(np.max(np.linalg.norm(diff[unsure], ord=2, axis=(-2, -1)), axis=1) <= tol):
                continue
        reps.append(i)
    return reps


def bitstring_labels(k):
    """All ``k``-bit labels as tuples."""
    return [tuple(b) for b in itertools.product((0, 1), repeat=k)]
