"""End-to-end learning from classical-quantum samples.

A training set is ``n`` labels drawn from the source's label law together with
one product register ``rho(x_1) (x) ... (x) rho(x_n)``. The learners build an
empirical net from the labels alone, run a quantum algorithm on the register
against the net, and score the result with oracle risks from
:mod:`cqlearn.validation`.
"""
import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import nets, simstate, validation
from .algorithms import AlgorithmConfig, DenseData, GroupedData, erm_projector, ere_shadow, hypothesis_selection
from .algorithms.config import erm_schedule
from .algorithms.data import _json_default
from .batching import multivariate_hypergeometric
from .concepts import FiniteLabels, Kind
from .qcore import ContractError
from .rng import make_rng


class NetTooLargeError(ContractError):
    """The empirical net exceeds the configured cap.

    Attributes:
        size: Net size at the requested radius.
        required_eps: Smallest radius whose net fits the cap.
    """

    def __init__(self, size, cap, required_eps):
        super().__init__(f"net of size {size} exceeds cap {cap}; eps >= {required_eps:.6g} is required")
        self.size, self.cap, self.required_eps = size, cap, required_eps


# ---------------------------------------------------------------- training set


@dataclass
class TrainingSet:
    """Labels and the quantum register of one draw.

    Args:
        labels: Distinct labels in group order.
        counts: Multiplicity of each distinct label.
        state: ``GroupedProductState`` (diagonal outputs) or explicit
            ``ProductState`` whose site ``i`` carries label ``labels[site_groups[i]]``.
        site_groups: Group of every site for explicit states, else ``None``.
        ordered: Whether groups follow the sampling order (continuous labels).
    """

    labels: list
    counts: np.ndarray
    state: object
    site_groups: np.ndarray = None
    ordered: bool = False

    def __iter__(self):
        return iter((self.labels, self.state))

    @property
    def n(self):
        return int(self.counts.sum())

    @property
    def grouped(self):
        return isinstance(self.state, simstate.GroupedProductState)

    def prefix(self, m0, rng):
        """Labels and counts of the first ``m0`` draws.

        With unordered groups the prefix is a uniformly random sub-multiset,
        which has the law of the first ``m0`` i.i.d. draws.
        """
        if not 1 <= m0 <= self.n:
            raise ContractError(f"prefix size must lie in [1, n = {self.n}]")
        if self.site_groups is not None:
            sub = np.bincount(self.site_groups[:m0], minlength=len(self.labels))
        elif self.ordered:
            sub = np.zeros(len(self.labels), dtype=np.int64)
            sub[:m0] = 1
        else:
            sub = multivariate_hypergeometric(self.counts, m0, rng)
        keep = np.flatnonzero(sub)
        return [self.labels[g] for g in keep], sub[keep]


def _is_diag(m):
    return np.max(np.abs(m - np.diag(np.diagonal(m)))) <= simstate.DIAG_TOL


def draw_training_set(source, n, rng):
    """Sample ``n`` labels i.i.d. and materialize the register once.

    Diagonal outputs are stored grouped by label; other outputs need an
    explicit register within the dense cap.

    Raises:
        BackendError: non-diagonal outputs on a register too large for DENSE.
    """
    if n < 1:
        raise ContractError("n must be >= 1")
    if isinstance(source.labels, FiniteLabels):
        counts = rng.multinomial(n, source.labels.probs)
        keep = np.flatnonzero(counts)
        labels = [source.labels.values[g] for g in keep]
        counts = counts[keep].astype(np.int64)
        ordered = False
    else:
        labels = source.sample(rng, n)
        counts = np.ones(n, dtype=np.int64)
        ordered = True
    states = [np.asarray(source.channel(x), dtype=complex) for x in labels]
    if all(_is_diag(s) for s in states):
        probs = np.clip(np.array([np.real(np.diagonal(s)) for s in states]), 0.0, 1.0)
        return TrainingSet(labels, counts, simstate.GroupedProductState(probs, counts), None, ordered)
    groups = np.repeat(np.arange(len(labels)), counts)
    if not ordered:
        groups = rng.permutation(groups)
    state = simstate.ProductState([states[g] for g in groups], simstate.Backend.DENSE)
    return TrainingSet(labels, counts, state, groups, ordered)


# -------------------------------------------------------------------- reports


_CSV_FIELDS = ("run", "task", "net_position", "concept", "selected", "estimate", "empirical_risk",
               "true_risk", "true_risk_se", "gap")


@dataclass
class RiskReport:
    """Per-net-member results of one learning run plus its metadata.

    ``gap`` is task specific: ``true_risk - inf_risk`` for ``"erm"``,
    ``|estimate - (1 - true_risk)|`` for ``"shadow"`` and
    ``true_risk - 3 inf_risk`` for ``"states"``.
    """

    task: str
    rows: list
    summary: dict
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self):
        inf = self.summary.get("inf_risk")
        for r in self.rows:
            for key in ("empirical_risk", "true_risk"):
                if not -1e-12 <= r[key] <= 1 + 1e-12:
                    raise ContractError(f"{key} = {r[key]} outside [0, 1]")
            if r["gap"] is not None and not math.isclose(r["gap"], self._gap(r, inf), abs_tol=1e-12):
                raise ContractError("gap field does not match its definition")

    def _gap(self, r, inf):
        if self.task == "erm":
            return r["true_risk"] - inf
        if self.task == "shadow":
            return abs(r["estimate"] - (1.0 - r["true_risk"]))
        return r["true_risk"] - 3 * inf

    @property
    def selected(self):
        return next((r for r in self.rows if r["selected"]), None)

    def to_dict(self):
        return {"task": self.task, "rows": self.rows, "summary": self.summary, "meta": self.meta}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, default=_json_default)

    def csv_rows(self, run=0):
        return [{"run": run, "task": self.task, **{k: r[k] for k in _CSV_FIELDS[2:]}} for r in self.rows]

    def to_csv(self, run=0):
        return rows_to_csv(self.csv_rows(run))


def _fmt(v):
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(round(v, 12))
    return "" if v is None else str(v)


def rows_to_csv(rows, fields=_CSV_FIELDS):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for r in rows:
        w.writerow([_fmt(r.get(f)) for f in fields])
    return buf.getvalue()


def tally(reports, target_key="within_target"):
    """Fraction of reports meeting their target and the CSV of all rows."""
    hits = [bool(r.summary[target_key]) for r in reports]
    rows = [row for i, r in enumerate(reports) for row in r.csv_rows(i)]
    return {"runs": len(hits), "success_rate": float(np.mean(hits)) if hits else float("nan"),
            "csv": rows_to_csv(rows)}


# ------------------------------------------------------------------- pipeline


def _net(cls, training, eps, q, rng, net_prefix, net_cap, sample_budget):
    if net_prefix is None:
        labels, weights = training.labels, training.counts
    else:
        labels, weights = training.prefix(net_prefix, rng)
    net = nets.build_empirical_net(cls, labels, eps, q, sample_budget, rng, weights=weights)
    if net_cap is not None and len(net) > net_cap:
        raise NetTooLargeError(len(net), net_cap, net.radius_for_size(net_cap))
    return net


def _projector_data(training, members):
    if training.grouped:
        masks = np.array([simstate.diag_masks([c(x) for x in training.labels]) for c in members])
        return GroupedData(training.state.probs, training.counts, masks)
    projs = np.array([[c(training.labels[g]) for g in training.site_groups] for c in members])
    return DenseData(training.state, projs, training.site_groups)


def _setup(source, cls, cfg, rng, n, kind):
    if cls.kind is not kind:
        raise ContractError(f"this learner needs a {kind.name} class")
    cfg = AlgorithmConfig() if cfg is None else cfg
    rng = make_rng(cfg.seed, cfg.stream) if rng is None else rng
    return cfg, rng


def _oracle_rows(members, net, training, source, mc_samples, rng):
    emp = validation.empirical_risks(members, training.labels, training.counts, source.channel)
    tr, se = validation.true_risks(members, source, mc_samples, rng)
    return emp, tr, se


def _meta(training, cfg, net, net_prefix, **extra):
    return {"n": training.n, "seed": cfg.seed, "stream": cfg.stream, "eps": cfg.eps, "delta": cfg.delta,
            "backend": "grouped-commuting" if training.grouped else "dense", "net_size": len(net),
            "net_prefix": net_prefix, "net_pool": len(net.assignment), **extra}


def learn_projector_class(source, cls, cfg=None, n=None, rng=None, net_prefix=None, net_cap=200,
                          sample_budget=None, mc_samples=100_000):
    """Net plus ERM on the register; scored against oracle true risks.

    Args:
        source: CQSource.
        cls: PROJECTOR ConceptClass.
        cfg: AlgorithmConfig (``eps`` is both the net radius and the ERM accuracy).
        n: Training-set size (default: the ERM requirement for a net of
            ``net_cap`` members, or of the whole finite class if smaller).
        rng: Generator (default from ``cfg.seed``/``cfg.stream``).
        net_prefix: Build the net on the first ``m0`` labels only.
        net_cap: Largest accepted net.
        sample_budget: Candidate pool for infinite classes.
        mc_samples: Monte-Carlo labels for true risks on continuous labels.

    Returns:
        RiskReport with ``summary["within_target"]`` meaning
        ``R(selected) - inf R <= 7 eps``.

    Raises:
        NetTooLargeError: the net exceeds ``net_cap``.
        SizingError: ``n`` is too small for the ERM schedule.
    """
    cfg, rng = _setup(source, cls, cfg, rng, n, Kind.PROJECTOR)
    if n is None:
        m_bound = min(len(cls), net_cap) if cls.finite else net_cap
        n = erm_schedule(m_bound, cfg).n_required
    training = draw_training_set(source, n, rng)
    net = _net(cls, training, cfg.eps, None, rng, net_prefix, net_cap, sample_budget)
    data = _projector_data(training, net.members)
    pos, mu_hat, trace = erm_projector(data, cfg, rng)
    emp, tr, se = _oracle_rows(net.members, net, training, source, mc_samples, rng)
    pool = [] if cls.finite else net.members
    inf = validation.infimum_risk(cls, source, pool, mc_samples, rng)
    rows = [{"net_position": i, "concept": int(net.member_index[i]), "selected": i == pos,
             "estimate": float(mu_hat) if i == pos else None, "empirical_risk": float(emp[i]),
             "true_risk": float(tr[i]), "true_risk_se": float(se[i]), "gap": float(tr[i] - inf)}
            for i in range(len(net))]
    gap = float(tr[pos] - inf)
    summary = {"selected": pos, "mu_hat": float(mu_hat), "inf_risk": inf, "selected_gap": gap,
               "target": 7 * cfg.eps, "within_target": gap <= 7 * cfg.eps,
               "degenerate": trace.summary["degenerate"]}
    return RiskReport("erm", rows, summary, _meta(training, cfg, net, net_prefix,
                                                  schedule=trace.summary["schedule"]))


def shadow_cq(source, cls, cfg=None, n=None, rng=None, net_cap=200, sample_budget=None, mc_samples=100_000):
    """Net plus risk estimation for every net member.

    Estimates are compared with the true averages ``1 - R(c)``; for a finite
    class each member is also scored through its nearest net member.

    Returns:
        RiskReport with ``summary["within_target"]`` meaning every
        ``|mu_hat - (1 - R)| <= 3 eps``.
    """
    from .algorithms.config import ere_schedule

    cfg, rng = _setup(source, cls, cfg, rng, n, Kind.PROJECTOR)
    if n is None:
        m_bound = min(len(cls), net_cap) if cls.finite else net_cap
        n = ere_schedule(m_bound, _register_dim(source), cfg).n_required
    training = draw_training_set(source, n, rng)
    net = _net(cls, training, cfg.eps, None, rng, None, net_cap, sample_budget)
    data = _projector_data(training, net.members)
    est, trace = ere_shadow(data, cfg, rng)
    emp, tr, se = _oracle_rows(net.members, net, training, source, mc_samples, rng)
    rows = [{"net_position": i, "concept": int(net.member_index[i]), "selected": False,
             "estimate": float(est[i]), "empirical_risk": float(emp[i]), "true_risk": float(tr[i]),
             "true_risk_se": float(se[i]), "gap": abs(float(est[i]) - (1.0 - float(tr[i])))}
            for i in range(len(net))]
    worst = max(r["gap"] for r in rows)
    summary = {"max_gap": worst, "target": 3 * cfg.eps, "updates": trace.summary["updates"]}
    if cls.finite:
        full, _ = validation.true_risks(cls.members, source)
        class_gap = float(np.max(np.abs(est[net.assignment] - (1.0 - full))))
        summary["class_max_gap"] = class_gap
        worst = max(worst, class_gap)
    summary["within_target"] = worst <= 3 * cfg.eps
    return RiskReport("shadow", rows, summary, _meta(training, cfg, net, None, schedule=trace.summary["schedule"]))


def _register_dim(source):
    labels = source.labels
    R = len(labels.values) if isinstance(labels, FiniteLabels) else 1
    return R * (source.d or 2)


def learn_state_class(source, cls, cfg=None, n=None, rng=None, net_cap=200, sample_budget=None,
                      mc_samples=100_000, exact_statistics=False):
    """Trace-norm net plus hypothesis selection.

    Args:
        exact_statistics: Replace the estimated Helstrom statistics by their
            exact values (a validation mode that reads the true outputs).

    Returns:
        RiskReport with ``summary["within_target"]`` meaning
        ``R(selected) - 3 inf R <= 6 eps``.
    """
    from .algorithms.config import ere_schedule
    from .algorithms.estimation import helstrom_masks

    cfg, rng = _setup(source, cls, cfg, rng, n, Kind.STATE)
    if n is None:
        m_bound = min(len(cls), net_cap) if cls.finite else net_cap
        pairs = m_bound * (m_bound - 1) // 2
        n = ere_schedule(max(pairs, 1), _register_dim(source), cfg).n_required
    training = draw_training_set(source, n, rng)
    net = _net(cls, training, cfg.eps, 1, rng, None, net_cap, sample_budget)
    sigma = np.array([[c(x) for x in training.labels] for c in net.members])
    mu = None
    if exact_statistics:
        pairs, A = helstrom_masks(sigma)
        w = training.counts / training.counts.sum()
        rhos = np.array([source.channel(x) for x in training.labels])
        mu = np.einsum("x,xab,pxba->p", w, rhos, A).real
    if len(net) == 1:
        pos, info = 0, {}
    else:
        if not training.grouped and mu is None:
            raise simstate.BackendError("estimated statistics need a diagonal (grouped) register")
        probs = training.state.probs if training.grouped else None
        pos, info = hypothesis_selection(probs, training.counts, sigma, cfg, rng, mu=mu)
    emp, tr, se = _oracle_rows(net.members, net, training, source, mc_samples, rng)
    pool = [] if cls.finite else net.members
    inf = validation.infimum_risk(cls, source, pool, mc_samples, rng)
    rows = [{"net_position": i, "concept": int(net.member_index[i]), "selected": i == pos, "estimate": None,
             "empirical_risk": float(emp[i]), "true_risk": float(tr[i]), "true_risk_se": float(se[i]),
             "gap": float(tr[i] - 3 * inf)} for i in range(len(net))]
    gap = float(tr[pos] - 3 * inf)
    summary = {"selected": int(pos), "inf_risk": inf, "selected_gap": gap, "target": 6 * cfg.eps,
               "within_target": gap <= 6 * cfg.eps, "exact_statistics": exact_statistics}
    return RiskReport("states", rows, summary, _meta(training, cfg, net, None))


# ------------------------------------------------------- uniform convergence


def uniform_convergence_experiment(source, cls, n_grid, trials, rng, eps=None, mc_samples=100_000,
                                   pool_size=64):
    """Sup-gap ``max_c |R(c) - R_hat(c)|`` between true and empirical risks versus ``n``.

    Args:
        source: CQSource (oracle access is used throughout).
        cls: ConceptClass; infinite classes are replaced by ``pool_size`` samples.
        n_grid: Increasing sample sizes.
        trials: Repetitions per size.
        rng: Generator.
        eps: When given, exceedance of ``eps/4`` is compared with
            ``4 |C| e^{-n eps^2/512}``.

    Returns:
        dict with per-size ``rows`` (median, mean, 90% quantile, standard
        error of the median, exceedance frequency, bound),
        ``monotone`` (median non-increasing within three standard errors) and
        ``bound_ok`` (exceedance within bound plus three standard errors
        wherever the bound is below one).
    """
    members = list(cls.members) if cls.finite else cls.sample(rng, pool_size)
    finite = isinstance(source.labels, FiniteLabels)
    if finite:
        L = validation.loss_table(members, source.labels.values, source.channel)
        R = L @ source.labels.probs
    else:
        R, _ = validation.true_risks(members, source, mc_samples, rng)
    rows = []
    for n in n_grid:
        sup = np.empty(trials)
        for t in range(trials):
            if finite:
                counts = rng.multinomial(n, source.labels.probs)
                Rh = L @ (counts / n)
            else:
                xs = source.sample(rng, n)
                Rh = validation.loss_table(members, xs, source.channel).mean(axis=1)
            sup[t] = np.max(np.abs(R - Rh))
        row = {"n": int(n), "median": float(np.median(sup)), "mean": float(sup.mean()),
               "q90": float(np.quantile(sup, 0.9)),
               "median_se": float(1.2533 * sup.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0}
        if eps is not None:
            f = float(np.mean(sup >= eps / 4))
            row.update(exceed_freq=f, exceed_se=math.sqrt(max(f * (1 - f), 1e-300) / trials),
                       bound=nets.uniform_convergence_bound(n, eps / 4, math.log(len(members))))
        rows.append(row)
    monotone = all(b["median"] <= a["median"] + 3 * max(a["median_se"], b["median_se"])
                   for a, b in zip(rows, rows[1:]))
    out = {"rows": rows, "monotone": monotone, "class_size": len(members)}
    if eps is not None:
        out["bound_ok"] = all(r["exceed_freq"] <= r["bound"] + 3 * r["exceed_se"] for r in rows if r["bound"] < 1)
    return out
