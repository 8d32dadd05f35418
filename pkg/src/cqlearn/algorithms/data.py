"""Quantum data registers paired with concept projectors at fixed sites.

``GroupedData`` stores a commuting register by label group: ``probs[g]`` is
the diagonal of ``rho(x_g)``, ``counts[g]`` how many sites carry label
``x_g`` and ``masks[c, g]`` the diagonal of concept ``c``'s projector at
``x_g``. ``DenseData`` stores explicit sites and projector matrices.
"""
import json
from dataclasses import dataclass, field

import numpy as np

from .. import batching, simstate
from ..qcore import ContractError


@dataclass
class ThresholdedConceptList:
    """Per-concept site projectors with thresholds ``theta_c``."""

    projectors: list
    thetas: list

    def __post_init__(self):
        if len(self.projectors) != len(self.thetas):
            raise ContractError("one threshold per concept is required")

    def __len__(self):
        return len(self.thetas)


@dataclass
class Trace:
    """JSON-serializable record of one algorithm run."""

    name: str
    config: dict = field(default_factory=dict)
    records: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def add(self, **kw):
        self.records.append(kw)

    def to_dict(self):
        return {"name": self.name, "config": self.config, "records": self.records, "summary": self.summary}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, default=_json_default)


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


class GroupedBlock:
    def __init__(self, data, counts):
        self.data, self.counts = data, np.asarray(counts, dtype=np.int64)

    @property
    def n(self):
        return int(self.counts.sum())

    def handle(self):
        return simstate.CommutingState(self.data.probs, self.counts.copy())

    def projectors(self, c, complement=False):
        m = self.data.masks[c]
        return 1.0 - m if complement else m

    def mu(self, c):
        return float((self.counts[:, None] * self.data.probs * self.data.masks[c]).sum() / self.n)


class DenseBlock:
    def __init__(self, data, indices):
        self.data, self.indices = data, np.asarray(indices)

    @property
    def n(self):
        return len(self.indices)

    def handle(self):
        return self.data.state.sub(self.indices).handle()

    def projectors(self, c, complement=False):
        ps = [self.data.projs[c][i] for i in self.indices]
        if complement:
            ps = [np.eye(p.shape[0]) - p for p in ps]
        return ps

    def mu(self, c):
        return float(np.mean([np.real(np.trace(self.data.state.sites[i] @ self.data.projs[c][i]))
                              for i in self.indices]))


@dataclass
class GroupedData:
    """Commuting register grouped by label.

    Args:
        probs: ``(G, d)`` diagonal of the state at each label.
        counts: ``(G,)`` sites per label.
        masks: ``(m, G, d)`` 0/1 diagonals of each concept's projector.
    """

    probs: np.ndarray
    counts: np.ndarray
    masks: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=float)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        self.masks = np.asarray(self.masks, dtype=float)
        simstate.GroupedProductState(self.probs, self.counts)
        if self.masks.ndim != 3 or self.masks.shape[1:] != self.probs.shape:
            raise ContractError("masks must have shape (m, G, d)")
        if np.any((self.masks != 0) & (self.masks != 1)):
            raise ContractError("masks must be 0/1")

    @property
    def n(self):
        return int(self.counts.sum())

    @property
    def m(self):
        return self.masks.shape[0]

    @property
    def d(self):
        return self.probs.shape[1]

    @property
    def weights(self):
        return self.counts / self.counts.sum()

    def mu(self):
        """Oracle averages ``(1/n) sum_i Tr[rho_i Pi_i^(c)]``."""
        return np.einsum("g,gb,cgb->c", self.weights, self.probs, self.masks)

    def block_stream(self, K, l, rng):
        stream = batching.GroupedBatchStream(self.counts, l, K, rng)

        class _Stream:
            def next(inner):
                return GroupedBlock(self, stream.next())

        return _Stream()

    def register(self):
        """Label weights and per-label projector matrices ``(m, G, d, d)``."""
        eye = np.eye(self.d)
        mats = self.masks[..., :, None] * eye
        return self.weights, mats

    def register_masks(self):
        return self.weights, self.masks

    def complement(self):
        return GroupedData(self.probs, self.counts, 1.0 - self.masks)


@dataclass
class DenseData:
    """Explicit product register with per-site projectors ``projs[c][i]``.

    ``groups[i]`` is the register label of site ``i`` (default: one per site).
    """

    state: simstate.ProductState
    projs: np.ndarray
    groups: np.ndarray = None

    def __post_init__(self):
        self.projs = np.asarray(self.projs, dtype=complex)
        if self.projs.shape[:2] != (self.projs.shape[0], self.state.n):
            raise ContractError("projs must have shape (m, n, d, d)")
        if self.groups is None:
            self.groups = np.arange(self.state.n)

    @property
    def n(self):
        return self.state.n

    @property
    def m(self):
        return self.projs.shape[0]

    @property
    def d(self):
        return self.state.d

    def mu(self):
        return np.array([np.mean([np.real(np.trace(r @ p)) for r, p in zip(self.state.sites, self.projs[c])])
                         for c in range(self.m)])

    def block_stream(self, K, l, rng):
        plan = batching.draw_batches(self.n, K, l, rng)
        it = iter(plan.indices)

        class _Stream:
            def next(inner):
                try:
                    return DenseBlock(self, next(it))
                except StopIteration:
                    raise ContractError(f"batch budget K = {K} exhausted") from None

        return _Stream()

    def register(self):
        labels, first = np.unique(self.groups, return_index=True)
        weights = np.array([np.mean(self.groups == g) for g in labels])
        return weights, self.projs[:, first]


def data_from_source(source, concepts, n, rng):
    """Grouped commuting data from a finite-label source and a finite concept list.

    Label counts are multinomial in ``n`` with the source's label law; only
    labels that occur are kept.
    """
    labels = source.labels
    counts = rng.multinomial(n, labels.probs)
    keep = np.flatnonzero(counts)
    probs, masks = [], []
    for g in keep:
        x = labels.values[g]
        rho = source.channel(x)
        if np.max(np.abs(rho - np.diag(np.diagonal(rho)))) > simstate.DIAG_TOL:
            raise simstate.BackendError("source state is not diagonal; COMMUTING data needs diagonal states")
        probs.append(np.real(np.diagonal(rho)))
    for c in concepts:
        masks.append(simstate.diag_masks([c(labels.values[g]) for g in keep]))
    return GroupedData(np.clip(np.array(probs), 0, 1), counts[keep], np.array(masks)), keep
