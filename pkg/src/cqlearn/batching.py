"""Disjoint batches drawn without replacement and their concentration.

Explicit batches come from one partial Fisher-Yates shuffle of ``[n]`` sliced
into ``K`` segments of length ``l``. For grouped populations (sites sharing a
label) only the per-group counts of each batch matter; those are drawn by
sequential multivariate hypergeometric sampling, which is the same law.
"""
import json
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .qcore import ContractError

_NUMPY_HYPERGEOM_LIMIT = 10**9


class SizingWarning(UserWarning):
    """A recommended (non-fatal) sizing condition does not hold."""


@dataclass(frozen=True)
class BatchPlan:
    """``K`` disjoint index batches of size ``l`` from ``[n]``."""

    n: int
    K: int
    l: int
    indices: np.ndarray
    seed: object = None

    @property
    def meets_precondition(self):
        """Whether ``n >= 3 K l`` (the concentration lemma's hypothesis)."""
        return self.n >= 3 * self.K * self.l

    def to_json(self):
        return json.dumps({"n": self.n, "K": self.K, "l": self.l, "seed": self.seed,
                           "indices": self.indices.tolist()})

    @classmethod
    def from_json(cls, text):
        obj = json.loads(text)
        return cls(obj["n"], obj["K"], obj["l"], np.asarray(obj["indices"], dtype=np.int64), obj["seed"])


def draw_batches(n, K, l, rng, seed=None):
    """Draw ``K`` disjoint batches of ``l`` indices uniformly from ``[n]``.

    Raises:
        ContractError: if ``K * l > n``.
    """
    if K < 1 or l < 1:
        raise ContractError("K and l must be positive")
    if K * l > n:
        raise ContractError(f"K*l = {K * l} exceeds population size n = {n}")
    if n < 3 * K * l:
        warnings.warn(f"n = {n} < 3Kl = {3 * K * l}; deviation bound hypothesis not met", SizingWarning,
                      stacklevel=2)
    perm = np.arange(n, dtype=np.int64)
    total = K * l
    # Partial Fisher-Yates: only the first K*l positions are needed.
    for i in range(total):
        j = int(rng.integers(i, n))
        perm[i], perm[j] = perm[j], perm[i]
    return BatchPlan(n, K, l, perm[:total].reshape(K, l).copy(), seed)


def _hypergeom_window(ngood, nbad, nsample, rng):
    """Exact-to-roundoff hypergeometric draw for populations beyond numpy's limit.

    Inverts the pmf on a window of +-15 standard deviations around the mode;
    the pmf is built from its term ratio and normalized on the window.
    """
    N = ngood + nbad
    var = nsample * (ngood / N) * (nbad / N) * (N - nsample) / max(N - 1, 1)
    lo_sup, hi_sup = max(0, nsample - nbad), min(nsample, ngood)
    half = int(15 * math.sqrt(var)) + 10
    mode = int(math.floor((nsample + 1) * (ngood + 1) / (N + 2)))
    lo, hi = max(lo_sup, mode - half), min(hi_sup, mode + half)
    x = np.arange(lo, hi, dtype=float)
    # log pmf(x+1) - log pmf(x)
    step = (np.log(ngood - x) + np.log(nsample - x) - np.log(x + 1) - np.log(nbad - nsample + x + 1))
    logp = np.concatenate([[0.0], np.cumsum(step)])
    p = np.exp(logp - logp.max())
    p /= p.sum()
    return int(lo + np.searchsorted(np.cumsum(p), rng.random(), side="right").clip(0, len(p) - 1))


def hypergeometric(ngood, nbad, nsample, rng):
    """Number of good items in ``nsample`` draws without replacement."""
    ngood, nbad, nsample = int(ngood), int(nbad), int(nsample)
    if nsample > ngood + nbad:
        raise ContractError("sample larger than population")
    if nsample == 0 or ngood == 0:
        return 0
    if nbad == 0:
        return nsample
    if ngood < _NUMPY_HYPERGEOM_LIMIT and nbad < _NUMPY_HYPERGEOM_LIMIT:
        return int(rng.hypergeometric(ngood, nbad, nsample))
    return _hypergeom_window(ngood, nbad, nsample, rng)


def multivariate_hypergeometric(colors, nsample, rng):
    """Counts per color for ``nsample`` draws without replacement (marginal method)."""
    colors = np.asarray(colors, dtype=np.int64)
    out = np.zeros_like(colors)
    remaining_total = int(colors.sum())
    need = int(nsample)
    for g, c in enumerate(colors):
        if need == 0:
            break
        remaining_total -= int(c)
        x = hypergeometric(int(c), remaining_total, need, rng)
        out[g] = x
        need -= x
    return out


class GroupedBatchStream:
    """Sequential disjoint batches from a grouped population.

    Each call to :meth:`next` returns the per-group counts of a fresh batch of
    ``l`` sites drawn without replacement from the sites not yet used.
    """

    def __init__(self, counts, l, K, rng):
        self.remaining = np.asarray(counts, dtype=np.int64).copy()
        self.l, self.K, self.rng = int(l), int(K), rng
        self.drawn = 0
        if self.K * self.l > int(self.remaining.sum()):
            raise ContractError(f"K*l = {self.K * self.l} exceeds population size {int(self.remaining.sum())}")

    def next(self):
        if self.drawn >= self.K:
            raise ContractError(f"batch budget K = {self.K} exhausted")
        batch = multivariate_hypergeometric(self.remaining, self.l, self.rng)
        self.remaining -= batch
        self.drawn += 1
        return batch


def deviation_bound(K, m, l, eps):
    """``2 K m exp(-2 l eps^2 / 4)``; may exceed 1."""
    return 2.0 * K * m * math.exp(-2.0 * l * eps * eps / 4.0)


def verify_without_replacement(populations, K, l, eps, trials, rng):
    """Monte-Carlo frequency of a batch mean deviating by ``eps`` or more.

    For each trial a fresh plan of ``K`` batches is drawn and the event is
    ``max_{j, k} |mean(populations[j][batch_k]) - mean(populations[j])| >= eps``.

    Args:
        populations: ``(m, n)`` array of values in ``[0, 1]``.
        K, l: Batch count and size.
        eps: Deviation level.
        trials: Number of independent plans.
        rng: Generator.

    Returns:
        dict with ``empirical_freq``, ``bound``, ``se`` and ``pass``.
    """
    pops = np.atleast_2d(np.asarray(populations, dtype=float))
    if np.any(pops < 0) or np.any(pops > 1):
        raise ContractError("population values must lie in [0, 1]")
    m, n = pops.shape
    if K * l > n:
        raise ContractError(f"K*l = {K * l} exceeds population size n = {n}")
    mu = pops.mean(axis=1)
    hits = 0
    total = K * l
    for _ in range(trials):
        # The first K*l entries of a uniform permutation, as a global shuffle would give.
        idx = rng.permutation(n)[:total].reshape(K, l) if total > n // 4 else \
            rng.choice(n, size=total, replace=False).reshape(K, l)
        dev = np.abs(pops[:, idx].mean(axis=2) - mu[:, None])
        hits += int(dev.max() >= eps)
    freq = hits / trials
    bound = deviation_bound(K, m, l, eps)
    se = math.sqrt(freq * (1 - freq) / trials)
    return {"empirical_freq": freq, "bound": bound, "se": se, "pass": bool(freq <= bound + 3 * se)}
