"""Risk estimation by searching for badly estimated concepts.

Each round runs threshold search over ``2m`` pairs, concept ``c`` with
threshold ``lambda_c + 7 eps/4`` and its complement ``1 - Pi^(c)`` with
threshold ``1 - lambda_c + 7 eps/4``, followed on a fresh block by the check
``|X/l - lambda_c| > eps``. A concept that passes is corrected by one
post-selection update of the estimator.
"""
import numpy as np

from .. import simstate
from ..qcore import ContractError
from .config import check_population, ere_schedule, warn_threshold_sizing
from .data import ThresholdedConceptList, Trace
from .estimator import estimator_predictions, fresh_estimator, update_estimator
from .search import threshold_search


def search_bad_estimate(stream, data, lambdas, cfg, rng, k, l, trace=None):
    """Look for a concept whose estimate is off by more than ``eps``.

    Args:
        stream: Block stream of the data (two blocks per attempt at most).
        data: GroupedData or DenseData.
        lambdas: Current estimates.
        cfg: AlgorithmConfig.
        rng: Generator.
        k: Attempt budget.
        l: Block length (for the check).
        trace: Optional Trace.

    Returns:
        ``(c, direction)`` with ``direction = +1`` when the estimate is too
        low, or ``None``.
    """
    eps = cfg.eps
    trace = Trace("search_bad_estimate") if trace is None else trace
    for attempt in range(k):
        blk = stream.next()
        projs, thetas = [], []
        for c in range(data.m):
            projs += [blk.projectors(c), blk.projectors(c, complement=True)]
            thetas += [lambdas[c] + 1.75 * eps, 1.0 - lambdas[c] + 1.75 * eps]
        found, _ = threshold_search(blk.handle(), ThresholdedConceptList(projs, thetas), cfg, rng,
                                    eps=eps / 4, trace=trace)
        if found is None:
            trace.add(step="search_none", attempt=attempt)
            continue
        c = found // 2
        chk = stream.next()
        x = simstate.measure_average(chk.handle(), chk.projectors(c), rng)
        dev = x / l - lambdas[c]
        trace.add(step="check", attempt=attempt, concept=c, complement=bool(found % 2), count=x,
                  estimate=float(lambdas[c]), deviation=float(dev), passed=bool(abs(dev) > eps))
        if abs(dev) > eps:
            return c, (1 if dev > 0 else -1)
    return None


def register_estimator(data, cfg):
    if cfg.estimator_backend == "dense":
        w, projs = data.register()
    else:
        if not hasattr(data, "register_masks"):
            w, projs = data.register()
        else:
            w, projs = data.register_masks()
    return fresh_estimator(w, projs, cfg.q_copies, cfg.estimator_backend, cfg.estimator_cap)


def ere_shadow(data, cfg, rng, trace=None, on_update=None):
    """Estimate every concept's average acceptance.

    Rounds alternate :func:`search_bad_estimate` and an estimator update
    until no bad estimate is found, ``T`` rounds are used, or the correcting
    update is infeasible (``trace.summary["stalled"]``).

    Args:
        data: GroupedData or DenseData.
        cfg: AlgorithmConfig.
        rng: Generator.
        trace: Optional Trace.
        on_update: Optional callback ``(estimator) -> None`` after each update.

    Returns:
        ``(estimates, trace)``.

    Raises:
        SizingError: if ``n < 3 K l`` for the schedule's ``K = 2 T k`` blocks.
    """
    w, _ = data.register()
    sched = ere_schedule(data.m, len(w) * data.d, cfg)
    check_population(data.n, sched, "ere_shadow")
    warn_threshold_sizing(2 * data.m, sched.l, cfg.eps, cfg.C1, cfg.C2)
    trace = Trace("ere_shadow", config=cfg.to_dict()) if trace is None else trace
    trace.summary["schedule"] = sched.to_dict()
    est = register_estimator(data, cfg)
    stream = data.block_stream(sched.blocks, sched.l, rng)
    updates = 0
    stalled = False
    for t in range(sched.T):
        lam = estimator_predictions(est)
        found = search_bad_estimate(stream, data, lam, cfg, rng, sched.k, sched.l, trace)
        if found is None:
            trace.add(step="round_end", round=t, found=False)
            break
        c, direction = found
        try:
            est = update_estimator(est, c, direction, lam[c], cfg.eps)
        except ContractError as err:
            # The correcting event is infeasible (threshold outside [0, q] or zero
            # probability, e.g. when 1/q exceeds eps). The same estimate would be
            # flagged every round, so the estimator stops here.
            stalled = True
            trace.add(step="update_infeasible", round=t, concept=c, direction=direction, reason=str(err))
            break
        updates += 1
        trace.add(step="update", round=t, concept=c, direction=direction, r=est.events[-1].r,
                  event_probability=est.event_probabilities[-1])
        if on_update is not None:
            on_update(est)
    estimates = estimator_predictions(est)
    trace.summary.update(updates=updates, stalled=stalled, estimates=estimates.tolist())
    return estimates, trace


# ------------------------------------------------------ hypothesis selection


def helstrom_masks(sigma_evals):
    """Positive-part projectors ``A_ij`` for ``i < j`` at every label.

    Args:
        sigma_evals: ``(m, R, d, d)`` hypothesis states per label.

    Returns:
        ``(pairs, A)`` with ``A`` of shape ``(P, R, d, d)``.
    """
    from ..qcore import helstrom_projector

    m, R = sigma_evals.shape[:2]
    pairs = [(i, j) for i in range(m) for j in range(i + 1, m)]
    A = np.array([[helstrom_projector(sigma_evals[i, x], sigma_evals[j, x]) for x in range(R)] for i, j in pairs])
    return pairs, A


def select_from_mu(sigma_evals, weights, mu, pairs, A):
    """``k* = argmin_k max_{i<j} |nu_kij - mu_ij|`` (ties to the lowest ``k``).

    ``nu_kij = sum_x w_x Tr[sigma_k(x) A_ij(x)]``.
    """
    nu = np.einsum("x,kxab,pxba->kp", weights, sigma_evals, A).real
    delta = np.max(np.abs(nu - np.asarray(mu)[None, :]), axis=1) if len(pairs) else np.zeros(len(sigma_evals))
    return int(np.argmin(delta)), delta


def hypothesis_selection(data_probs, counts, sigma_evals, cfg, rng, mu=None, trace=None):
    """Select the hypothesis state closest on average to the data.

    Args:
        data_probs: ``(R, d)`` diagonal data states per label (commuting route)
            or ``None`` when ``mu`` is injected.
        counts: ``(R,)`` sites per label.
        sigma_evals: ``(m, R, d, d)`` hypothesis states per label.
        cfg: AlgorithmConfig for the estimation route.
        rng: Generator.
        mu: Optional exact ``mu_ij`` (oracle injection), one per pair ``i < j``.

    Returns:
        ``(k_star, info)`` with the ``Delta_k`` values and the ``mu`` used.
    """
    from .data import GroupedData

    counts = np.asarray(counts, dtype=np.int64)
    weights = counts / counts.sum()
    pairs, A = helstrom_masks(sigma_evals)
    if mu is None:
        if data_probs is None:
            raise ContractError("either data states or exact mu are required")
        masks = simstate_masks(A)
        data = GroupedData(data_probs, counts, masks)
        mu, trace = ere_shadow(data, cfg, rng, trace=trace)
    k, delta = select_from_mu(sigma_evals, weights, mu, pairs, A)
    return k, {"delta": delta, "mu": np.asarray(mu), "pairs": pairs, "trace": trace}


def simstate_masks(A):
    """0/1 diagonals of diagonal Helstrom projectors ``(P, R, d, d) -> (P, R, d)``."""
    d = A.shape[-1]
    if np.max(np.abs(A * (1 - np.eye(d))), initial=0.0) > simstate.DIAG_TOL:
        raise simstate.BackendError("Helstrom projectors are not diagonal; use injected mu or DENSE data")
    return np.rint(np.real(np.diagonal(A, axis1=-2, axis2=-1)))


# ------------------------------------------------------- pure-state learner


def pure_state_realizable_learner(labels, states, concepts, rng):
    """Maximum-likelihood learner from random-basis measurements of pure outputs.

    Each output is measured once in an independent Haar-random basis; the
    concept maximizing the summed log-likelihood among the distinct
    restrictions to the data labels is returned (ties to the lowest index).

    Returns:
        ``(index, info)`` where ``info["zero_likelihood"]`` flags the case in
        which every concept has likelihood zero.
    """
    from ..concepts import distinct_restrictions
    from ..qcore import random_unitary

    reps = distinct_restrictions(concepts, labels)
    d = states[0].shape[0]
    vecs = np.empty((len(labels), d), dtype=complex)
    for i, rho in enumerate(states):
        u = random_unitary(d, rng)
        p = np.clip(np.real(np.einsum("ai,ab,bi->i", u.conj(), rho, u)), 0, None)
        vecs[i] = u[:, int(rng.choice(d, p=p / p.sum()))]
    evals = np.array([[concepts[ci](x) for x in labels] for ci in reps])
    lik = np.real(np.einsum("ia,kiab,ib->ki", vecs.conj(), evals, vecs))
    with np.errstate(divide="ignore"):
        loglik = np.where(lik > 1e-300, np.log(np.maximum(lik, 1e-300)), -np.inf).sum(axis=1)
    zero = bool(np.all(np.isneginf(loglik)))
    best = int(np.argmax(loglik)) if not zero else 0
    return reps[best], {"loglik": loglik, "restricted": reps, "zero_likelihood": zero}
