"""Oracle access to the unknown channel, for validation only.

The learning path in :mod:`cqlearn.learner` sees labels and a quantum register.
Everything here evaluates losses on the true outputs ``rho(x)`` and therefore
must only be used to score results.
"""
import math

import numpy as np

from .concepts import loss, true_risk


def loss_table(concepts, labels, channel):
    """``L[c, j] = loss(c, (labels[j], channel(labels[j])))``."""
    states = [channel(x) for x in labels]
    return np.array([[loss(c, (x, r)) for x, r in zip(labels, states)] for c in concepts])


def empirical_risks(concepts, labels, counts, channel):
    """Average loss on a training set given as distinct labels with multiplicities."""
    counts = np.asarray(counts, dtype=float)
    return loss_table(concepts, labels, channel) @ (counts / counts.sum())


def true_risks(concepts, source, mc_samples=100_000, rng=None):
    """``(risks, standard_errors)`` for each concept.

    Exact on finite label spaces; Monte-Carlo with ``mc_samples`` shared
    labels otherwise.
    """
    if source.finite:
        vals = [true_risk(c, source)[0] for c in concepts]
        return np.array(vals), np.zeros(len(vals))
    rng = np.random.default_rng() if rng is None else rng
    xs = source.sample(rng, mc_samples)
    tab = loss_table(concepts, xs, source.channel)
    return tab.mean(axis=1), tab.std(axis=1, ddof=1) / math.sqrt(len(xs))


def infimum_risk(cls, source, pool=(), mc_samples=100_000, rng=None):
    """Smallest true risk over a finite class, or over ``pool`` plus the source's truth.

    For infinite classes the returned value is an upper bound on the infimum
    unless the source is realizable with a known generating concept.
    """
    cands = list(cls.members) if cls.finite else list(pool)
    if not cls.finite and source.truth is not None and source.truth.kind is cls.kind:
        cands.append(source.truth)
    risks, _ = true_risks(cands, source, mc_samples, rng)
    return float(np.min(risks))
