"""Threshold search and empirical risk minimization over projector concepts."""
import math

import numpy as np

from .. import simstate
from .config import SizingError, check_population, erm_schedule, warn_threshold_sizing
from .data import ThresholdedConceptList, Trace


def threshold_search(state, concepts, cfg, rng, eps=None, trace=None):
    """Sequentially measure smoothed events until one accepts.

    Concept ``c`` is tested with the event ``T_c + X > (theta_c - eps) n`` and
    noise rate ``1/(D sqrt n)``, in input order, on the post-measurement state
    left by the previous rejections.

    Args:
        state: Fresh state handle of ``n`` sites.
        concepts: ThresholdedConceptList.
        cfg: AlgorithmConfig (``D_noise`` and the default ``eps``).
        rng: Generator.
        eps: Margin override (defaults to ``cfg.eps``).
        trace: Optional Trace to append to.

    Returns:
        ``(c, trace)`` with ``c`` the first accepted index or ``None``.
    """
    eps = cfg.eps if eps is None else eps
    trace = Trace("threshold_search") if trace is None else trace
    n = state.n
    for c, (projs, theta) in enumerate(zip(concepts.projectors, concepts.thetas)):
        ev = simstate.build_gentle_event(projs, theta - eps, cfg.D_noise, n)
        out = simstate.measure_event(state, ev, rng)
        trace.add(step="event", concept=c, theta=float(theta), threshold=float(theta - eps),
                  p_accept=out.p_accept, accepted=out.accepted)
        state = out.post_state
        if out.accepted:
            return c, trace
    return None, trace


def check_count(l, level):
    """Integer count threshold ``ceil(l * level)``."""
    return int(math.ceil(l * level - 1e-12))


def erm_projector(data, cfg, rng, trace=None):
    """Binary search for the largest achievable average acceptance.

    Blocks come in pairs: threshold search with thresholds ``theta - eps``
    (margin ``eps/4``) on the first, and a check ``X >= l (theta - 7 eps/4)``
    of the returned concept on the second. ``k`` consecutive failures lower
    the upper end; a passed check raises the lower end to ``theta - 2 eps``.

    Args:
        data: GroupedData or DenseData.
        cfg: AlgorithmConfig.
        rng: Generator.

    Returns:
        ``(c_star, mu_hat, trace)``; ``trace.summary["degenerate"]`` marks a
        run in which no concept ever passed a check (uniform choice).

    Raises:
        SizingError: if ``n < 6 T k l``.
    """
    eps = cfg.eps
    sched = erm_schedule(data.m, cfg)
    check_population(data.n, sched, "erm_projector")
    warn_threshold_sizing(data.m, sched.l, eps, cfg.C1, cfg.C2)
    trace = Trace("erm_projector", config=cfg.to_dict()) if trace is None else trace
    trace.summary["schedule"] = sched.to_dict()
    stream = data.block_stream(sched.blocks, sched.l, rng)
    theta, low, high = 0.5, 0.0, 1.0
    failures, s = 0, 0
    selected = None
    while high - low >= 6 * eps:
        if failures < sched.k:
            s += 1
            blk = stream.next()
            tcl = ThresholdedConceptList([blk.projectors(c) for c in range(data.m)], [theta - eps] * data.m)
            c, _ = threshold_search(blk.handle(), tcl, cfg, rng, eps=eps / 4, trace=trace)
            if c is None:
                failures += 1
                trace.add(step="search_none", s=s, theta=theta)
                continue
            chk = stream.next()
            x = simstate.measure_average(chk.handle(), chk.projectors(c), rng)
            need = check_count(sched.l, theta - 1.75 * eps)
            passed = x >= need
            trace.add(step="check", s=s, concept=c, theta=theta, count=x, needed=need, passed=passed)
            if passed:
                low = theta - 2 * eps
                theta = (high + low) / 2
                failures = 0
                selected = c
            else:
                failures += 1
        else:
            high = theta
            theta = (high + low) / 2
            failures = 0
            trace.add(step="lower_high", theta=theta, low=low, high=high)
    degenerate = selected is None
    if degenerate:
        selected = int(rng.integers(0, data.m))
    trace.summary.update(c_star=int(selected), mu_hat=float(theta), degenerate=degenerate, pairs_used=s,
                         low=low, high=high)
    return int(selected), float(theta), trace


__all__ = ["threshold_search", "erm_projector", "SizingError"]
