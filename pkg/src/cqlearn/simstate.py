"""Product-state simulation with gentle threshold measurements.

Two backends:

``DENSE``
    The full ``d^n`` density matrix. A gentle event with site projectors
    ``P_1..P_n`` is diagonalized by the tensor product of per-site eigenbases,
    in which it acts as ``c_t`` on the subspace where exactly ``t`` of the
    projectors accept. Square roots are taken on the coefficients.

``COMMUTING``
    States and projectors that are all diagonal in the computational basis.
    Sites are stored in groups sharing the same diagonal state, so a block is
    a vector of group counts rather than a list of sites. Because every
    operator commutes with the computational-basis measurement, the state
    after any sequence of gentle measurements is the classical mixture over
    basis strings reweighted by the outcome likelihoods. The simulator draws
    the (hidden) basis configuration once, on first use, and then applies each
    event's acceptance law conditional on it, which is exact in law.

Every handle is single-use: measuring it marks it consumed and returns a new
handle for the post-measurement state.
"""
import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import pbnoise, qcore
from .qcore import ContractError

DENSE_CAP = 14
DIAG_TOL = 1e-12
DEFAULT_PARTICLES = 100_000
DEFAULT_ESS_FRACTION = 0.5


class Backend(enum.Enum):
    DENSE = "dense"
    COMMUTING = "commuting"


class ConsumedStateError(ContractError):
    """A state handle was used after it had been measured."""


class BackendError(ContractError):
    """An operation is not representable in the requested backend."""


def _is_diagonal(m):
    a = np.asarray(m)
    return float(np.max(np.abs(a - np.diag(np.diagonal(a))), initial=0.0)) <= DIAG_TOL


def diag_masks(projectors):
    """Convert diagonal projectors to 0/1 diagonal vectors (shape ``(n, d)``)."""
    out = []
    for p in projectors:
        if not _is_diagonal(p):
            raise BackendError("COMMUTING backend requires diagonal projectors")
        out.append(np.rint(np.real(np.diagonal(p))))
    return np.asarray(out, dtype=float)


@dataclass
class ProductState:
    """Explicit product state ``rho_1 x ... x rho_n``.

    Args:
        sites: Per-site density matrices, all of the same dimension.
        backend: ``Backend.DENSE`` or ``Backend.COMMUTING``.
        cap: Maximum ``n log2 d`` for the dense backend.
    """

    sites: list
    backend: Backend = Backend.DENSE
    cap: int = DENSE_CAP

    def __post_init__(self):
        if len(self.sites) == 0:
            raise ContractError("a product state needs at least one site")
        self.sites = [qcore.as_density_matrix(s, f"site {i}") for i, s in enumerate(self.sites)]
        dims = {s.shape[0] for s in self.sites}
        if len(dims) != 1:
            raise ContractError("all sites must share one dimension")
        if self.backend is Backend.DENSE and self.n * math.log2(self.d) > self.cap + 1e-12:
            raise BackendError(f"DENSE backend cap exceeded: n log2 d = {self.n * math.log2(self.d):g} > {self.cap}")
        if self.backend is Backend.COMMUTING and not all(_is_diagonal(s) for s in self.sites):
            raise BackendError("COMMUTING backend requires diagonal site states")

    @property
    def n(self):
        return len(self.sites)

    @property
    def d(self):
        return self.sites[0].shape[0]

    def sub(self, indices):
        return ProductState([self.sites[i] for i in indices], self.backend, self.cap)

    def handle(self):
        """Fresh single-use handle on this state."""
        if self.backend is Backend.DENSE:
            rho = self.sites[0]
            for s in self.sites[1:]:
                rho = np.kron(rho, s)
            return DenseState(rho, self.n, self.d, sites=list(self.sites))
        probs = np.array([np.real(np.diagonal(s)) for s in self.sites])
        return CommutingState(np.clip(probs, 0.0, 1.0), np.ones(self.n, dtype=np.int64))


@dataclass
class GroupedProductState:
    """Diagonal product state stored as groups of identical sites.

    Args:
        probs: ``(G, d)`` basis distribution of each group's site state.
        counts: ``(G,)`` number of sites in each group.
    """

    probs: np.ndarray
    counts: np.ndarray
    backend: Backend = field(default=Backend.COMMUTING, init=False)

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=float)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.probs.ndim != 2 or self.probs.shape[0] != self.counts.shape[0]:
            raise ContractError("probs must be (G, d) with one count per group")
        if np.any(self.probs < -qcore.TOL_PSD) or np.any(np.abs(self.probs.sum(1) - 1) > qcore.TOL_TRACE):
            raise ContractError("each group's diagonal must be a probability vector")
        if np.any(self.counts < 0):
            raise ContractError("group counts must be non-negative")
        self.probs = np.clip(self.probs, 0.0, 1.0)

    @property
    def n(self):
        return int(self.counts.sum())

    @property
    def d(self):
        return self.probs.shape[1]

    def with_counts(self, counts):
        return GroupedProductState(self.probs, counts)

    def handle(self):
        return CommutingState(self.probs, self.counts.copy())


@dataclass
class GentleEvent:
    """Smoothed threshold event ``B`` accepting when ``T + X > theta n``.

    ``site_projectors`` is either a list of ``n`` projector matrices or, for
    grouped commuting states, a ``(G, d)`` array of 0/1 diagonals.
    """

    site_projectors: object
    theta: float
    lam: float
    n: int

    def __post_init__(self):
        if not 0 < self.lam < 1:
            raise ContractError(f"noise rate must lie in (0, 1), got {self.lam!r}")
        if self.n < 1:
            raise ContractError("event needs n >= 1")

    @property
    def theta_n(self):
        return self.theta * self.n

    @property
    def noise(self):
        return pbnoise.ExponentialNoise(self.lam)

    def coefficients(self):
        return pbnoise.accept_coefficients(self.n, self.noise, self.theta_n)


def build_gentle_event(projs, theta, D, n):
    """Gentle event with noise rate ``lambda = 1 / (D sqrt(n))``.

    Raises:
        ContractError: if ``D <= 0`` or the resulting rate is not below 1.
    """
    if not D > 0:
        raise ContractError("D must be positive")
    lam = 1.0 / (D * math.sqrt(n))
    if not lam < 1:
        raise ContractError(f"lambda = 1/(D sqrt n) = {lam:g} must be < 1; increase n or D")
    return GentleEvent(projs, float(theta), lam, int(n))


@dataclass
class MeasurementOutcome:
    accepted: bool
    p_accept: float
    post_state: object


class _Handle:
    consumed = False

    def _use(self):
        if self.consumed:
            raise ConsumedStateError("state handle already consumed by a measurement")
        self.consumed = True


# ---------------------------------------------------------------- dense backend


@dataclass(eq=False)
class DenseState(_Handle):
    """Dense density-matrix handle. ``sites`` is kept only while fresh."""

    rho: np.ndarray
    n: int
    d: int
    sites: list = None
    consumed: bool = False

    @property
    def fresh(self):
        return self.sites is not None


def event_eigenbasis(projectors, d):
    """Joint eigenbasis of the site projectors and per-vector accept counts.

    Returns:
        ``(U, counts)`` where column ``J`` of ``U`` is a product of per-site
        eigenvectors and ``counts[J]`` is how many of them lie in the range of
        their site projector.
    """
    u = np.ones((1, 1), dtype=complex)
    counts = np.zeros(1, dtype=np.int64)
    for p in projectors:
        p = qcore.as_projector(p)
        if p.shape[0] != d:
            raise ContractError("projector dimension does not match site dimension")
        w, v = np.linalg.eigh(p)
        acc = (w > 0.5).astype(np.int64)
        u = np.kron(u, v)
        counts = np.add.outer(counts, acc).ravel()
    return u, counts


def _dense_event(state, ev):
    if len(ev.site_projectors) != state.n or ev.n != state.n:
        raise ContractError("projector count must equal the state length")
    u, counts = event_eigenbasis(ev.site_projectors, state.d)
    c = ev.coefficients()[counts]
    return u, c


def event_operator(ev, d):
    """Dense matrix of ``B`` (mainly for tests)."""
    u, counts = event_eigenbasis(ev.site_projectors, d)
    c = ev.coefficients()[counts]
    return (u * c) @ u.conj().T


def _dense_expect(state, ev):
    u, c = _dense_event(state, ev)
    diag = np.real(np.einsum("ij,jk,ki->i", u.conj().T, state.rho, u))
    return float(np.clip(math.fsum(c * diag), 0.0, 1.0)), u, c


def _dense_condition(rho, u, s):
    rot = u.conj().T @ rho @ u
    post = (s[:, None] * rot) * s[None, :]
    z = np.real(np.trace(post))
    if not z > 1e-300:
        raise ContractError("branch probability underflow")
    post = u @ (post / z) @ u.conj().T
    return 0.5 * (post + post.conj().T)


# ------------------------------------------------------------ commuting backend


@dataclass(eq=False)
class CommutingState(_Handle):
    """Grouped diagonal state with a lazily drawn hidden configuration.

    ``history`` lists ``(event_masks, theta_n, lam, accepted)`` for every
    measurement already applied, which defines the evolved mixture.
    """

    probs: np.ndarray
    counts: np.ndarray
    config: np.ndarray = None
    history: list = field(default_factory=list)
    consumed: bool = False

    @property
    def n(self):
        return int(self.counts.sum())

    @property
    def d(self):
        return self.probs.shape[1]

    @property
    def fresh(self):
        return self.config is None and not self.history

    def ensure_config(self, rng):
        if self.config is None:
            self.config = sample_configs(self.probs, self.counts, rng)
        return self.config


def sample_configs(probs, counts, rng, size=None):
    """Draw basis-outcome counts ``N[g, b]`` for every group (optionally batched)."""
    if size is None:
        return rng.multinomial(counts, probs)
    return rng.multinomial(np.broadcast_to(counts, (size, len(counts))),
                           np.broadcast_to(probs, (size,) + probs.shape))


def _masks_for(state, ev):
    sp = ev.site_projectors
    if isinstance(sp, np.ndarray) and sp.ndim == 2:
        m = sp.astype(float)
    else:
        if len(sp) != len(state.counts):
            raise ContractError("projector count must equal the state length")
        m = diag_masks(sp)
    if m.shape != state.probs.shape:
        raise ContractError(f"mask shape {m.shape} does not match state groups {state.probs.shape}")
    if ev.n != state.n:
        raise ContractError("event n does not match the state length")
    if np.any((m != 0) & (m != 1)):
        raise BackendError("COMMUTING masks must be 0/1 diagonals")
    return m


def _config_count(config, mask):
    return np.tensordot(config, mask, axes=([-2, -1], [0, 1])).astype(np.int64)


def grouped_pmf(probs, counts, mask):
    """Exact law of the accept count ``T`` on a fresh grouped state."""
    p_g = np.clip((probs * mask).sum(axis=1), 0.0, 1.0)
    if int(counts.sum()) <= 5000:
        return pbnoise.pb_pmf(np.repeat(p_g, counts)).pmf
    from scipy import signal, stats
    pmf = np.ones(1)
    for n_g, p in zip(counts, p_g):
        if n_g == 0:
            continue
        part = stats.binom.pmf(np.arange(n_g + 1), n_g, p)
        pmf = np.clip(signal.fftconvolve(pmf, part), 0.0, None)
    return pmf / pmf.sum()


# ------------------------------------------------------------ public operations


def expect_event(state, ev):
    """Acceptance probability ``E[B]`` on the current state.

    DENSE: exact ``Tr[B rho]``. COMMUTING: exact on a fresh state; on an
    evolved handle, an estimate from a particle ensemble conditioned on the
    measurement history (see :func:`commuting_evolved_state`).
    """
    if isinstance(state, _Handle) and state.consumed:
        raise ConsumedStateError("state handle already consumed by a measurement")
    if isinstance(state, DenseState):
        return _dense_expect(state, ev)[0]
    if isinstance(state, CommutingState):
        mask = _masks_for(state, ev)
        if not state.history:
            pmf = grouped_pmf(state.probs, state.counts, mask)
            return min(1.0, math.fsum(pmf * ev.coefficients()))
        particles = commuting_evolved_state(
            CommutingState(state.probs, state.counts),
            [h for h in state.history], rng=np.random.default_rng(0))
        return particles.expect(ev)[0]
    if isinstance(state, ParticleState):
        return state.expect(ev)[0]
    raise BackendError(f"unsupported state handle {type(state).__name__}")


def measure_event(state, ev, rng):
    """Measure ``{B, 1 - B}`` and return the outcome with the post state.

    The input handle is consumed. For COMMUTING handles ``p_accept`` is the
    acceptance probability given the hidden configuration.
    """
    if isinstance(state, DenseState):
        p, u, c = _dense_expect(state, ev)
        state._use()
        accepted = bool(rng.random() < p)
        s = np.sqrt(c) if accepted else np.sqrt(np.clip(1.0 - c, 0.0, None))
        post = _dense_condition(state.rho, u, s)
        return MeasurementOutcome(accepted, p, DenseState(post, state.n, state.d))
    if isinstance(state, CommutingState):
        mask = _masks_for(state, ev)
        state._use()
        config = state.ensure_config(rng)
        t = int(_config_count(config, mask))
        p = float(pbnoise.survival(ev.noise, ev.theta_n - t))
        accepted = bool(rng.random() < p)
        post = CommutingState(state.probs, state.counts, config,
                              state.history + [(mask, ev.theta_n, ev.lam, accepted)])
        return MeasurementOutcome(accepted, p, post)
    raise BackendError(f"unsupported state handle {type(state).__name__}")


def conditioned_state(state, ev, accepted):
    """Post-measurement state of a DENSE handle for a given outcome.

    Deterministic counterpart of :func:`measure_event`; the input handle is
    not consumed.

    Returns:
        ``(post_rho, branch_probability)``.
    """
    if not isinstance(state, DenseState):
        raise BackendError("conditioned_state needs a DENSE handle")
    p, u, c = _dense_expect(state, ev)
    s = np.sqrt(c) if accepted else np.sqrt(np.clip(1.0 - c, 0.0, None))
    return _dense_condition(state.rho, u, s), (p if accepted else 1.0 - p)


def measure_average(state, projs, rng):
    """Destructively measure ``sum_i P_i`` on a fresh product state.

    Returns:
        The integer count ``X``, distributed as PB(Tr[rho_i P_i]).
    """
    if isinstance(state, DenseState):
        if not state.fresh:
            raise ContractError("measure_average requires a fresh product state")
        if len(projs) != state.n:
            raise ContractError("projector count must equal the state length")
        p = np.array([np.real(np.trace(r @ qcore.as_projector(q))) for r, q in zip(state.sites, projs)])
        state._use()
        return int((rng.random(state.n) < np.clip(p, 0, 1)).sum())
    if isinstance(state, CommutingState):
        if not state.fresh:
            raise ContractError("measure_average requires a fresh product state")
        dummy = GentleEvent(projs, 0.0, 0.5, max(state.n, 1))
        mask = _masks_for(state, dummy)
        state._use()
        return int(_config_count(state.ensure_config(rng), mask))
    raise BackendError(f"unsupported state handle {type(state).__name__}")


# ------------------------------------------------------------ particle ensemble


@dataclass
class ParticleState:
    """Weighted sample of hidden configurations of a commuting state."""

    configs: np.ndarray
    log_w: np.ndarray
    n: int
    resamples: int = 0

    def weights(self):
        w = np.exp(self.log_w - self.log_w.max())
        return w / w.sum()

    def ess(self):
        w = self.weights()
        return 1.0 / float(np.sum(w * w))

    def expect(self, ev):
        """Weighted estimate of ``E[B]`` and its standard error."""
        mask = ev.site_projectors
        if not (isinstance(mask, np.ndarray) and mask.ndim == 2):
            mask = diag_masks(mask)
        t = _config_count(self.configs, mask)
        c = ev.coefficients()[np.clip(t, 0, ev.n)]
        w = self.weights()
        mean = float(np.sum(w * c))
        se = math.sqrt(max(float(np.sum(w * w * (c - mean) ** 2)), 0.0))
        return mean, se


def _residual_resample(w, rng):
    n = len(w)
    base = np.floor(n * w).astype(np.int64)
    idx = np.repeat(np.arange(n), base)
    rest = n - len(idx)
    if rest > 0:
        r = n * w - base
        extra = rng.choice(n, size=rest, p=r / r.sum())
        idx = np.concatenate([idx, extra])
    return np.sort(idx)


def commuting_evolved_state(state, rejected_events, n_particles=DEFAULT_PARTICLES,
                            ess_fraction=DEFAULT_ESS_FRACTION, rng=None):
    """Particle representation of a commuting state after measured events.

    Args:
        state: Fresh ``CommutingState`` (or ``GroupedProductState``).
        rejected_events: ``GentleEvent`` objects observed as rejected, or
            history tuples ``(mask, theta_n, lam, accepted)``.
        n_particles: Ensemble size.
        ess_fraction: Residual resampling triggers when ESS falls below
            ``ess_fraction * n_particles``.
        rng: Generator for sampling and resampling.

    Returns:
        ParticleState whose ``expect`` estimates event probabilities.
    """
    rng = np.random.default_rng() if rng is None else rng
    if isinstance(state, ProductState):
        if state.backend is not Backend.COMMUTING:
            raise BackendError("particle ensemble requires the COMMUTING backend")
        state = state.handle()
    probs, counts = state.probs, state.counts
    configs = sample_configs(probs, counts, rng, size=n_particles)
    log_w = np.zeros(n_particles)
    n = int(counts.sum())
    resamples = 0
    for ev in rejected_events:
        if isinstance(ev, GentleEvent):
            mask = _masks_for(CommutingState(probs, counts), ev)
            theta_n, lam, accepted = ev.theta_n, ev.lam, False
        else:
            mask, theta_n, lam, accepted = ev
        t = _config_count(configs, mask)
        c = pbnoise.survival(pbnoise.ExponentialNoise(lam), theta_n - t)
        lik = c if accepted else 1.0 - c
        with np.errstate(divide="ignore"):
            log_w = log_w + np.log(lik)
        if not np.isfinite(log_w.max()):
            raise ContractError("all particles have zero weight")
        w = np.exp(log_w - log_w.max())
        w /= w.sum()
        if 1.0 / np.sum(w * w) < ess_fraction * n_particles:
            idx = _residual_resample(w, rng)
            configs, log_w = configs[idx], np.zeros(n_particles)
            resamples += 1
    return ParticleState(configs, log_w, n, resamples)
