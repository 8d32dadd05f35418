"""Post-selection estimator for risk estimation.

The estimator holds ``q`` copies of the register state
``sum_x w_x |x><x| (x) I/d`` and, for each concept, the block-diagonal
projector ``Pi^(c) = sum_x |x><x| (x) Pi_c(x)``. An update post-selects on
"at least ``r`` copies accept" (direction ``+1``) or "at most ``r`` copies
accept" (direction ``-1``). Predictions are ``Tr[rho Pi_bar^(c)] / q`` with
``Pi_bar^(c)`` the sum of ``Pi^(c)`` over copies.

Backends:

``dense``
    The ``(R d)^q`` density matrix, conditioned by explicit projectors.
``commuting-dp``
    For diagonal projectors: a dynamic program over the accept counts of the
    concepts that appear in events. Register cells ``(x, b)`` are grouped by
    their accept pattern on those concepts.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from ..qcore import ContractError


class EstimatorCapacityError(ContractError):
    """The estimator representation would exceed its configured capacity."""


@dataclass(frozen=True)
class PostSelection:
    concept: int
    direction: int
    r: int
    q: int


@dataclass
class EstimatorState:
    """Register description plus the ordered list of post-selection events.

    Args:
        weights: ``(R,)`` label weights.
        projs: ``(m, R, d, d)`` per-label projectors (``dense`` backend) or
            ``(m, R, d)`` 0/1 diagonals (``commuting-dp``).
        q: Number of copies.
        backend: ``"dense"`` or ``"commuting-dp"``.
        events: Applied post-selections.
        cap: Capacity limit (DP table entries or dense ``log2`` dimension).
    """

    weights: np.ndarray
    projs: np.ndarray
    q: int
    backend: str = "commuting-dp"
    events: tuple = ()
    cap: int = 50_000_000
    _rho: np.ndarray = field(default=None, repr=False)
    _probs: tuple = field(default=(), repr=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.q < 1:
            raise ContractError("q must be >= 1")
        if self.backend == "dense":
            self.projs = np.asarray(self.projs, dtype=complex)
            if self.projs.ndim != 4:
                raise ContractError("dense estimator needs (m, R, d, d) projectors")
            bits = self.q * math.log2(self.dim1)
            if bits > 14 + 1e-12:
                raise EstimatorCapacityError(f"dense estimator dimension 2^{bits:.2f} exceeds 2^14")
        elif self.backend == "commuting-dp":
            self.projs = np.asarray(self.projs, dtype=float)
            if self.projs.ndim == 4:
                d = self.projs.shape[-1]
                off = self.projs * (1 - np.eye(d))
                if np.max(np.abs(off), initial=0.0) > 1e-12:
                    raise ContractError("commuting-dp estimator needs diagonal projectors")
                self.projs = np.real(np.diagonal(self.projs, axis1=-2, axis2=-1))
        else:
            raise ContractError(f"unknown estimator backend {self.backend!r}")

    @property
    def m(self):
        return self.projs.shape[0]

    @property
    def d(self):
        return self.projs.shape[2]

    @property
    def dim1(self):
        return len(self.weights) * self.d

    @property
    def event_probabilities(self):
        """Probability of each applied post-selection given the previous ones."""
        return list(self._probs)


def fresh_estimator(weights, projs, q, backend="commuting-dp", cap=50_000_000):
    return EstimatorState(weights, projs, q, backend, (), cap)


# ------------------------------------------------------------------ dense


def _dense_single(est, c):
    """Eigenbasis and accept flags of the one-copy projector ``Pi^(c)``."""
    R, d = len(est.weights), est.d
    vecs = np.zeros((R * d, R * d), dtype=complex)
    acc = np.zeros(R * d, dtype=np.int64)
    for x in range(R):
        w, v = np.linalg.eigh(est.projs[c, x])
        vecs[x * d:(x + 1) * d, x * d:(x + 1) * d] = v
        acc[x * d:(x + 1) * d] = w > 0.5
    return vecs, acc


def _dense_q(est, c):
    vecs, acc = _dense_single(est, c)
    u = np.ones((1, 1), dtype=complex)
    cnt = np.zeros(1, dtype=np.int64)
    for _ in range(est.q):
        u = np.kron(u, vecs)
        cnt = np.add.outer(cnt, acc).ravel()
    return u, cnt


def _dense_initial(est):
    rho1 = np.kron(np.diag(est.weights), np.eye(est.d) / est.d)
    rho = np.ones((1, 1))
    for _ in range(est.q):
        rho = np.kron(rho, rho1)
    return rho.astype(complex)


def dense_rho(est):
    """Current dense register state (recomputed from the event list)."""
    if est._rho is not None:
        return est._rho
    rho = _dense_initial(est)
    for ev in est.events:
        rho, _ = _dense_condition(est, rho, ev)
    return rho


def _event_indicator(cnt, ev):
    return (cnt >= ev.r) if ev.direction > 0 else (cnt <= ev.r)


def _dense_condition(est, rho, ev):
    u, cnt = _dense_q(est, ev.concept)
    keep = _event_indicator(cnt, ev).astype(float)
    rot = u.conj().T @ rho @ u
    post = keep[:, None] * rot * keep[None, :]
    z = float(np.real(np.trace(post)))
    if not z > 1e-300:
        raise ContractError("post-selection event has zero probability")
    post = u @ (post / z) @ u.conj().T
    return 0.5 * (post + post.conj().T), z


def _dense_predictions(est):
    rho = dense_rho(est)
    out = np.empty(est.m)
    for c in range(est.m):
        u, cnt = _dense_q(est, c)
        diag = np.real(np.einsum("ij,jk,ki->i", u.conj().T, rho, u))
        out[c] = math.fsum(cnt * diag) / est.q
    return out


# ------------------------------------------------------------ commuting DP


def _dp_tables(est):
    """Run the copy-by-copy DP; returns ``(W, A, used)`` before constraints."""
    used = sorted({ev.concept for ev in est.events})
    k = len(used)
    q, m = est.q, est.m
    size = (q + 1) ** k
    if size * (m + 1) > est.cap:
        raise EstimatorCapacityError(f"DP table of {(q + 1)}^{k} x {m + 1} entries exceeds cap {est.cap}")
    cell_w = (est.weights[:, None] / est.d) * np.ones(est.d)[None, :]
    cell_w = cell_w.ravel()
    cell_masks = est.projs.reshape(m, -1)
    patterns = cell_masks[used].T.astype(np.int64) if k else np.zeros((len(cell_w), 0), np.int64)
    types, inv = np.unique(patterns, axis=0, return_inverse=True)
    inv = np.asarray(inv).ravel()
    p_type = np.bincount(inv, weights=cell_w, minlength=len(types))
    a_type = np.stack([np.bincount(inv, weights=cell_w * cell_masks[c], minlength=len(types))
                       for c in range(m)], axis=1)
    shape = (q + 1,) * k
    W = np.zeros(shape)
    A = np.zeros(shape + (m,))
    W[(0,) * k] = 1.0
    for _ in range(q):
        W2 = np.zeros(shape)
        A2 = np.zeros(shape + (m,))
        for t, pat in enumerate(types):
            src = tuple(slice(0, q + 1 - int(b)) for b in pat)
            dst = tuple(slice(int(b), q + 1) for b in pat)
            W2[dst] += p_type[t] * W[src]
            A2[dst] += p_type[t] * A[src] + a_type[t] * W[src][..., None]
        W, A = W2, A2
    return W, A, used


def _dp_constraint(est, used, events):
    q, k = est.q, len(used)
    grids = np.indices((q + 1,) * k) if k else np.zeros((0,))
    keep = np.ones((q + 1,) * k, dtype=bool)
    for ev in events:
        cnt = grids[used.index(ev.concept)]
        keep &= _event_indicator(cnt, ev)
    return keep


def _dp_predictions(est):
    W, A, used = _dp_tables(est)
    keep = _dp_constraint(est, used, est.events)
    z = float(np.sum(W[keep]))
    if not z > 1e-300:
        raise ContractError("post-selected estimator state has zero norm")
    return np.array([np.sum(A[..., c][keep]) for c in range(est.m)]) / (est.q * z)


def _dp_norm(est, events):
    probe = EstimatorState(est.weights, est.projs, est.q, est.backend, tuple(events), est.cap)
    W, _, used = _dp_tables(probe)
    return float(np.sum(W[_dp_constraint(probe, used, events)]))


# ------------------------------------------------------------------ API


def estimator_predictions(est):
    """Per-concept predictions ``Tr[Pi_bar^(c) rho] / q`` on the current state."""
    if est.backend == "dense":
        return _dense_predictions(est)
    return _dp_predictions(est)


def count_threshold(mu_hat, eps, q, direction):
    """``ceil((mu + eps/2) q)`` for ``+1``; ``floor((mu - eps/2) q)`` for ``-1``."""
    if direction > 0:
        return int(math.ceil((mu_hat + eps / 2) * q - 1e-12))
    return int(math.floor((mu_hat - eps / 2) * q + 1e-12))


def update_estimator(est, c, direction, mu_hat_ct, eps):
    """Append the post-selection for concept ``c`` in the given direction.

    Raises:
        ContractError: if the count threshold falls outside ``[0, q]`` or the
            event has zero probability.
    """
    if direction not in (1, -1):
        raise ContractError("direction must be +1 or -1")
    if not 0 <= c < est.m:
        raise ContractError(f"concept index {c} out of range")
    r = count_threshold(mu_hat_ct, eps, est.q, direction)
    if not 0 <= r <= est.q:
        raise ContractError(f"count threshold r = {r} outside [0, q = {est.q}]")
    ev = PostSelection(int(c), int(direction), r, est.q)
    events = est.events + (ev,)
    if est.backend == "dense":
        rho, p = _dense_condition(est, dense_rho(est), ev)
    else:
        rho = None
        prev = _dp_norm(est, est.events) if est.events else 1.0
        p = _dp_norm(est, events) / prev
        if not p > 1e-300:
            raise ContractError("post-selection event has zero probability")
    return EstimatorState(est.weights, est.projs, est.q, est.backend, events, est.cap, rho, est._probs + (p,))
