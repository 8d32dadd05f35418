"""Poisson-binomial sums smoothed by exponential noise.

``T = sum_i T_i`` with independent ``T_i ~ Bernoulli(p_i)`` and an independent
``X ~ Exp(lambda)``. The smoothed event is ``T + X > theta_n``; since ``X >= 0``
its probability given ``T = t`` is ``survival(theta_n - t)`` where
``survival(s) = exp(-lambda s)`` for ``s > 0`` and ``1`` otherwise.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from .qcore import ContractError


class DegenerateConditioningError(ContractError):
    """The conditioning event has (numerically) zero probability."""


class PreconditionError(ContractError):
    """A theorem hypothesis required by a check does not hold."""


@dataclass(frozen=True)
class PBDistribution:
    """Exact law of a Poisson-binomial count."""

    probs: np.ndarray
    pmf: np.ndarray = field(repr=False)

    @property
    def n(self):
        return len(self.probs)

    @property
    def mean(self):
        return math.fsum(self.probs)

    @property
    def variance(self):
        return math.fsum(self.probs * (1.0 - self.probs))

    @property
    def stddev(self):
        return math.sqrt(self.variance)


@dataclass(frozen=True)
class ExponentialNoise:
    """Exponential noise with rate ``lam`` (mean ``1/lam``)."""

    lam: float

    def __post_init__(self):
        if not self.lam > 0:
            raise ContractError("exponential rate must be positive")

    @property
    def mean(self):
        return 1.0 / self.lam


def pb_pmf(probs):
    """Exact Poisson-binomial pmf by the O(n^2) convolution recurrence.

    Args:
        probs: Success probabilities ``p_i`` in ``[0, 1]``.

    Returns:
        PBDistribution with ``pmf[t] = Pr[T = t]`` for ``t = 0..n``.
    """
    p = np.asarray(probs, dtype=float).ravel()
    if np.any(~np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
        raise ContractError("probabilities must lie in [0, 1]")
    pmf = np.zeros(len(p) + 1)
    pmf[0] = 1.0
    for k, pk in enumerate(p, start=1):
        # Both terms are non-negative, so no cancellation occurs.
        pmf[1:k + 1] = pmf[1:k + 1] * (1.0 - pk) + pmf[0:k] * pk
        pmf[0] *= 1.0 - pk
    return PBDistribution(p, pmf)


def survival(noise, s):
    """``Pr[X > s]`` for exponential ``X`` (vectorized)."""
    s = np.asarray(s, dtype=float)
    return np.where(s > 0, np.exp(-noise.lam * np.clip(s, 0.0, None)), 1.0)


def _counts(pb):
    return np.arange(pb.n + 1, dtype=float)


def accept_coefficients(n, noise, theta_n):
    """``c_t = Pr[t + X > theta_n]`` for ``t = 0..n``."""
    return survival(noise, theta_n - np.arange(n + 1, dtype=float))


def smoothed_tail(pb, noise, theta_n):
    """``Pr[T + X > theta_n]`` with compensated summation."""
    c = accept_coefficients(pb.n, noise, theta_n)
    return min(1.0, math.fsum(pb.pmf * c))


def conditional_pmf_reject(pb, noise, theta_n):
    """Law of ``T`` conditioned on ``T + X <= theta_n``.

    Raises:
        DegenerateConditioningError: if the rejection probability is below 1e-300.
    """
    c = accept_coefficients(pb.n, noise, theta_n)
    w = pb.pmf * (1.0 - c)
    z = math.fsum(w)
    if not z > 1e-300:
        raise DegenerateConditioningError(f"rejection probability {z!r} underflows")
    return w / z


def _check_pair(p, q):
    p = np.asarray(p, dtype=float).ravel()
    q = np.asarray(q, dtype=float).ravel()
    if p.shape != q.shape:
        raise ContractError(f"pmf supports differ: {p.shape} vs {q.shape}")
    if np.any(p < 0) or np.any(q < 0):
        raise ContractError("pmf entries must be non-negative")
    return p, q


def bhattacharyya(p, q):
    """Bhattacharyya coefficient ``sum sqrt(p q)``."""
    p, q = _check_pair(p, q)
    return min(1.0, math.fsum(np.sqrt(p * q)))


def chi_squared(p, q):
    """``sum_x q_x (1 - p_x/q_x)^2`` over the support of ``q``.

    Raises:
        ContractError: if ``p`` puts mass where ``q`` vanishes.
    """
    p, q = _check_pair(p, q)
    zero = q == 0
    if np.any(p[zero] > 0):
        raise ContractError("chi-squared undefined: p has mass where q is zero")
    s = ~zero
    return math.fsum((q[s] - p[s]) ** 2 / q[s])


def chernoff_bounds(mean, eps):
    """Multiplicative Chernoff tails ``(exp(-eps^2 mu/3), exp(-eps^2 mu/2))``.

    The first bounds ``Pr[T >= (1+eps) mu]`` and the second
    ``Pr[T <= (1-eps) mu]``.
    """
    if mean < 0 or eps < 0:
        raise ContractError("mean and eps must be non-negative")
    return math.exp(-eps * eps * mean / 3.0), math.exp(-eps * eps * mean / 2.0)


def boundexp(probs, lam, theta_n):
    """Upper bound ``exp(-n lam (theta - pbar - e lam / 2))`` on the smoothed tail."""
    p = np.asarray(probs, dtype=float)
    n = len(p)
    theta = theta_n / n
    pbar = math.fsum(p) / n
    return math.exp(min(700.0, -n * lam * (theta - pbar - math.e * lam / 2.0)))


def gentleness_check(pb, noise, theta_n, c_cal=10.0):
    """Compare ``chi2((T | reject), T)`` with ``c_cal (Pr[B] stddev lambda)^2``.

    Hypotheses: ``1/lambda >= max(1, stddev[T])`` and ``Pr[B] < 1/4``.

    Returns:
        dict with keys ``pB``, ``chi2``, ``bound_rhs`` (without ``c_cal``),
        ``ratio`` (``chi2 / bound_rhs``) and ``ok``.

    Raises:
        PreconditionError: naming the violated hypothesis.
    """
    sd = pb.stddev
    if noise.mean < max(1.0, sd):
        raise PreconditionError(
            f"noise mean 1/lambda={noise.mean:.6g} is below max(1, stddev)={max(1.0, sd):.6g}")
    c = accept_coefficients(pb.n, noise, theta_n)
    p_b = math.fsum(pb.pmf * c)
    if not p_b < 0.25:
        raise PreconditionError(f"Pr[B]={p_b:.6g} is not below 1/4")
    # (1 - P/Q) simplifies to (c_t - Pr[B]) / Pr[not B], avoiding cancellation.
    chi2 = math.fsum(pb.pmf * (c - p_b) ** 2) / (1.0 - p_b) ** 2
    rhs = (p_b * sd * noise.lam) ** 2
    ratio = chi2 / rhs if rhs > 0 else (0.0 if chi2 <= 1e-300 else math.inf)
    return {"pB": p_b, "chi2": chi2, "bound_rhs": rhs, "ratio": ratio,
            "ok": bool(chi2 <= c_cal * rhs + 1e-300)}
