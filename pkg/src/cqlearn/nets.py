"""Empirical nets and covering-number bounds.

Distances between concepts are measured on data labels by
``||c1 - c2||_{1,q,x} = (1/n) sum_i ||c1(x_i) - c2(x_i)||_q`` with the trace norm
(``q = 1``) for state concepts and the operator norm (``q = inf``) for
projector concepts.
"""
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import qcore
from .concepts import Kind
from .qcore import ContractError


def default_q(kind):
    return 1 if kind is Kind.STATE else np.inf


def _norms(diff, q):
    """Schatten-q norm of each matrix in a ``(..., d, d)`` stack of Hermitian differences."""
    w = np.abs(np.linalg.eigvalsh(diff))
    return w.max(axis=-1) if q == np.inf else w.sum(axis=-1)


def pseudometric(c1, c2, labels, q=None):
    """Average per-label Schatten-q distance between two concepts."""
    if len(labels) == 0:
        raise ContractError("pseudometric needs at least one label")
    q = default_q(c1.kind) if q is None else q
    diff = np.array([c1(x) - c2(x) for x in labels])
    return float(np.mean(_norms(diff, q)))


def distance_matrix(evals, q, rows=None, weights=None):
    """Pairwise pseudodistances from evaluations of shape ``(N, n, d, d)``.

    ``weights`` (summing to one) replaces the uniform label average, so that
    repeated labels can be passed once with their multiplicity.
    """
    rows = range(len(evals)) if rows is None else rows
    out = np.empty((len(rows), len(evals)))
    for a, i in enumerate(rows):
        norms = _norms(evals - evals[i][None], q)
        out[a] = norms.mean(axis=1) if weights is None else norms @ weights
    return out


@dataclass
class EmpiricalNet:
    """Greedy internal net over a candidate pool.

    ``member_index`` indexes the pool, ``assignment[j]`` is the net position
    nearest to pool element ``j`` (ties to the lowest position) and
    ``audited_on_sample`` marks that the pool was sampled from an infinite
    family, so coverage is only certified for the pool.
    """

    members: list
    member_index: list
    eps: float
    q: float
    labels: list
    assignment: np.ndarray
    distances: np.ndarray = field(repr=False)
    audited_on_sample: bool = False
    radii: np.ndarray = field(repr=False, default=None)

    def __len__(self):
        return len(self.members)

    def radius_for_size(self, size):
        """Smallest covering radius whose net has at most ``size`` members."""
        if self.radii is None or size >= len(self.radii):
            return 0.0
        return float(self.radii[max(size, 1)])

    def audit(self):
        """Exhaustive check that every pool element is within eps of its member."""
        nearest = self.distances[np.arange(len(self.assignment)), self.assignment]
        return bool(np.all(nearest <= self.eps + 1e-12))


def farthest_point_order(dist):
    """Farthest-first traversal from element 0 (ties to the lowest index).

    Returns:
        ``(order, radii)`` where ``radii[k]`` is the distance from ``order[k]``
        to the earlier elements (``inf`` for the first). Radii are
        non-increasing.
    """
    n = dist.shape[0]
    order = [0]
    radii = [np.inf]
    gap = dist[0].copy()
    for _ in range(n - 1):
        j = int(np.argmax(gap))
        if gap[j] <= 0:
            break
        order.append(j)
        radii.append(float(gap[j]))
        gap = np.minimum(gap, dist[j])
    return order, np.array(radii)


def greedy_net_indices(dist, eps):
    """Shortest farthest-first prefix covering every element within ``eps``.

    Because traversal radii never increase, the net size is monotone
    non-increasing in ``eps``, and members are pairwise more than ``eps`` apart.
    """
    order, radii = farthest_point_order(dist)
    k = int(np.sum(radii > eps))
    return order[:max(k, 1)]


def build_empirical_net(cls, labels, eps, q=None, sample_budget=None, rng=None, weights=None):
    """Greedy ``eps``-net of a class under the empirical pseudometric.

    Args:
        cls: ConceptClass (finite, or with a sampler).
        labels: Data labels defining the pseudometric.
        eps: Covering radius.
        q: Schatten index (defaults by kind).
        sample_budget: Number of sampled candidates for infinite classes.
        rng: Generator for sampling.
        weights: Optional label multiplicities (normalized internally).

    Returns:
        EmpiricalNet over the candidate pool.
    """
    q = default_q(cls.kind) if q is None else q
    if cls.finite:
        pool = list(cls.members)
        sampled = False
    else:
        if not sample_budget or sample_budget < 1:
            raise ContractError("infinite class requires sample_budget >= 1")
        rng = np.random.default_rng() if rng is None else rng
        pool = cls.sample(rng, sample_budget)
        sampled = True
    if weights is not None:
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (len(labels),) or np.any(weights < 0) or weights.sum() <= 0:
            raise ContractError("weights must be non-negative, one per label")
        weights = weights / weights.sum()
    evals = np.array([[c(x) for x in labels] for c in pool])
    dist = distance_matrix(evals, q, weights=weights)
    order, radii = farthest_point_order(dist)
    chosen = order[:max(int(np.sum(radii > eps)), 1)]
    sub = dist[chosen]
    assignment = np.argmin(sub, axis=0)  # argmin returns the first minimum
    return EmpiricalNet([pool[i] for i in chosen], chosen, eps, q, list(labels), assignment,
                        dist[:, chosen], sampled, radii)


# ---------------------------------------------------------- parameter nets


@dataclass
class ParameterNet:
    """Grid over a parameter box and the concept-space radius it induces."""

    points: np.ndarray
    eps_param: float
    eps_concept: float
    axes: list = field(repr=False, default=None)


def box_grid(lo, hi, eps_param):
    """Grid with spacing at most ``eps_param`` on each coordinate of a box."""
    lo, hi = np.atleast_1d(np.asarray(lo, float)), np.atleast_1d(np.asarray(hi, float))
    if eps_param <= 0:
        raise ContractError("eps_param must be positive")
    axes = [np.linspace(a, b, int(math.ceil((b - a) / eps_param - 1e-12)) + 1) if b > a else np.array([a])
            for a, b in zip(lo, hi)]
    pts = np.array(list(itertools.product(*axes)))
    return pts, axes


def gfamily_sup_features(gfam):
    grid = gfam.grid if gfam.grid is not None else [0.0]
    feats = np.array([[abs(f(x)) for f in gfam.basis] for x in grid])
    return feats.max(axis=0)


def parameter_net(family, eps_param, **kw):
    """Parameter grid for a named family and its induced concept-space radius.

    Families:
        ``"box"``: raw coordinate grid over ``lo``/``hi`` (``eps_concept`` is
        the grid spacing).
        ``"g-coefficients"``: grid over ``gfam``'s box; ``eps_concept`` bounds
        ``sup |g - g'|`` for grid-adjacent coefficient vectors.
        ``"gibbs"``: grid over ``gfam``'s box; with ``b = ||V||`` the induced
        trace-norm radius is ``2 e^{t(B+b)} t (b+B)`` with ``t`` the g-radius.
        ``"hermitian-dictionary"``: grid over real coordinates in
        ``[-R, R]^K``; ``eps_concept`` is ``eps_param * sum ||basis_k||``.
    """
    if family == "box":
        pts, axes = box_grid(kw["lo"], kw["hi"], eps_param)
        return ParameterNet(pts, eps_param, eps_param, axes)
    if family in ("g-coefficients", "gibbs"):
        gfam = kw["gfam"]
        pts, axes = box_grid(gfam.coeff_lo, gfam.coeff_hi, eps_param)
        t = eps_param * float(gfamily_sup_features(gfam).max())
        if family == "g-coefficients":
            return ParameterNet(pts, eps_param, t, axes)
        B, b = gfam.B, kw["b"]
        return ParameterNet(pts, eps_param, 2 * math.exp(t * (B + b)) * t * (b + B), axes)
    if family == "hermitian-dictionary":
        basis = kw["basis"]
        R = kw.get("R", 1.0)
        pts, axes = box_grid(-R * np.ones(len(basis)), R * np.ones(len(basis)), eps_param)
        return ParameterNet(pts, eps_param, eps_param * sum(qcore.operator_norm(v) for v in basis), axes)
    raise ContractError(f"unknown parameter family {family!r}")


def vershynin_bound(R, eps, K):
    """``(1 + 2R/eps)^K`` and its simplification ``(3R/eps)^K`` (for ``eps <= R``)."""
    return (1 + 2 * R / eps) ** K, (3 * R / eps) ** K


# ------------------------------------------------------ closed-form bounds


@dataclass(frozen=True)
class CoveringBoundReport:
    family: str
    params: dict
    log10_value: float

    @property
    def value(self):
        return 10.0 ** self.log10_value if self.log10_value < 308 else math.inf


def bound_lqc(m, ell, eps):
    """``[m (6 ell/eps)^32]^ell`` for local circuits of ``ell`` two-qubit gates."""
    v = ell * (math.log10(m) + 32 * math.log10(6 * ell / eps))
    return CoveringBoundReport("lqc", {"m": m, "ell": ell, "eps": eps}, v)


def bound_brickwork(m, ell, eps):
    """``(6 m ell / eps)^{32 m ell}``."""
    v = 32 * m * ell * math.log10(6 * m * ell / eps)
    return CoveringBoundReport("brickwork", {"m": m, "ell": ell, "eps": eps}, v)


def bound_full_unitary(m, eps):
    """``(6/eps)^{2^{2m+2}}`` for all unitaries on ``m`` qubits."""
    v = 2 ** (2 * m + 2) * math.log10(6 / eps)
    return CoveringBoundReport("full_unitary", {"m": m, "eps": eps}, v)


def bound_fatshatter(n, B, eps, D):
    """``2 (4 n B^2/eps^2)^{D log2(4 e B n/(D eps))}``."""
    v = math.log10(2) + D * math.log2(4 * math.e * B * n / (D * eps)) * math.log10(4 * n * B * B / eps**2)
    return CoveringBoundReport("fatshatter", {"n": n, "B": B, "eps": eps, "D": D}, v)


def uniform_convergence_bound(n, eps, log_cover, c=1.0):
    """``4 Gamma e^{-n eps^2 / (32 c^2)}`` with ``log_cover = ln Gamma``."""
    expo = log_cover - n * eps * eps / (32 * c * c)
    return 4 * math.exp(expo) if expo < 700 else math.inf
