"""Registry of validation experiments.

Each experiment is a list of independent units. A unit is keyed by
``(setting, index)`` and draws all of its randomness from
``make_rng(seed, stream=(setting << 32) | index)``, so results do not depend on
how units are spread over workers. Units return flat rows; a summary function
turns the rows into rates and a ``passed`` flag.
"""
import itertools
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy import stats

from . import batching, concepts as C, learner, nets, pbnoise, qcore, simstate
from .algorithms import (AlgorithmConfig, GroupedData, ThresholdedConceptList, erm_projector, ere_shadow,
                         estimator_predictions, hypothesis_selection, threshold_search)
from .algorithms.config import ere_schedule, erm_schedule, threshold_min_l
from .algorithms.estimation import helstrom_masks, pure_state_realizable_learner, select_from_mu
from .qcore import ContractError
from .rng import make_rng


class ConfigError(ContractError):
    """Invalid experiment configuration."""


@dataclass
class ExperimentConfig:
    """Settings shared by all experiments; ``None`` means the experiment default.

    Attributes:
        experiment: Registered experiment name.
        seed: Master seed.
        trials: Number of trials per setting.
        out: Output directory.
        backend: Simulation or estimator backend where an experiment offers a choice.
        eps, delta: Accuracy and confidence overrides.
        workers: Worker processes (capped by ``CQLEARN_THREADS``).
        design: Instance design for threshold search (``uniform`` or ``boundary``).
        D_noise: Noise scale of gentle events.
        q_copies: Estimator copies for risk estimation.
        estimator_cap: Largest estimator table.
    """

    experiment: str = ""
    seed: int = 0
    trials: int = None
    out: str = "results"
    backend: str = None
    eps: float = None
    delta: float = None
    workers: int = 1
    design: str = "uniform"
    D_noise: float = 4.0
    q_copies: int = None
    estimator_cap: int = 50_000_000

    @classmethod
    def from_mapping(cls, mapping):
        """Build from string values, rejecting unknown keys."""
        known = {f.name: f for f in fields(cls)}
        kw = {}
        for key, raw in mapping.items():
            if key not in known:
                raise ConfigError(f"unknown configuration key {key!r}; known keys: {', '.join(sorted(known))}")
            kw[key] = _coerce(key, raw)
        return cls(**kw)

    def to_dict(self):
        return asdict(self)


_INT_KEYS = {"seed", "trials", "workers", "q_copies", "estimator_cap"}
_FLOAT_KEYS = {"eps", "delta", "D_noise"}


def _coerce(key, raw):
    if raw is None or not isinstance(raw, str):
        return raw
    if raw.strip().lower() in ("", "none"):
        return None
    try:
        if key in _INT_KEYS:
            return int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key} = {raw!r} is not a valid number") from None
    return raw.strip()


def parse_config_text(text):
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


@dataclass(frozen=True)
class Experiment:
    name: str
    anchor: str
    trials: int
    units: object
    run_unit: object
    summarize: object
    columns: tuple
    backends: tuple = ()


REGISTRY = {}


def register(exp):
    REGISTRY[exp.name] = exp
    return exp


def list_experiments():
    """``(name, anchor, default trials)`` for every registered experiment."""
    return [(e.name, e.anchor, e.trials) for e in REGISTRY.values()]


def unit_rng(cfg, key):
    setting, index = key
    return make_rng(cfg.seed, (setting << 32) | index)


def _trials(cfg, exp):
    return exp.trials if cfg.trials is None else cfg.trials


def _grid_units(n_settings):
    return lambda cfg, exp: [(s, t) for s in range(n_settings) for t in range(_trials(cfg, exp))]


def _single_units(cfg, exp):
    return [(0, t) for t in range(_trials(cfg, exp))]


# ------------------------------------------------------------------ execution


@dataclass
class ExperimentResult:
    name: str
    config: dict
    rows: list
    summary: dict
    traces: list
    elapsed: float

    @property
    def passed(self):
        return bool(self.summary.get("passed"))

    def csv_text(self):
        return learner.rows_to_csv(self.rows, REGISTRY[self.name].columns)

    def report(self):
        return {"experiment": self.name, "anchor": REGISTRY[self.name].anchor, "config": self.config,
                "summary": self.summary, "elapsed_seconds": self.elapsed}


def _run_one(name, cfg, key):
    rows, trace = REGISTRY[name].run_unit(cfg, key)
    return rows, trace


def _worker_cap(cfg):
    cap = os.environ.get("CQLEARN_THREADS")
    w = max(1, int(cfg.workers or 1))
    if cap:
        try:
            w = min(w, max(1, int(cap)))
        except ValueError:
            raise ConfigError(f"CQLEARN_THREADS = {cap!r} is not an integer") from None
    return w


def validate_config(cfg):
    if cfg.experiment not in REGISTRY:
        raise ConfigError(f"unknown experiment {cfg.experiment!r}; registered: {', '.join(REGISTRY)}")
    exp = REGISTRY[cfg.experiment]
    if cfg.backend is not None and cfg.backend not in exp.backends:
        allowed = ", ".join(exp.backends) or "none"
        raise ConfigError(f"backend {cfg.backend!r} not offered by {exp.name} (allowed: {allowed})")
    if cfg.trials is not None and cfg.trials < 1:
        raise ConfigError("trials must be >= 1")
    if cfg.seed < 0:
        raise ConfigError("seed must be non-negative")
    if cfg.eps is not None and not 0 < cfg.eps < 1:
        raise ConfigError("eps must lie in (0, 1)")
    if cfg.delta is not None and not 0 < cfg.delta < 1:
        raise ConfigError("delta must lie in (0, 1)")
    if cfg.design not in ("uniform", "boundary"):
        raise ConfigError("design must be 'uniform' or 'boundary'")
    return exp


def run_experiment(cfg):
    """Run every unit of ``cfg.experiment`` and summarize.

    Units are merged in key order, so the rows are identical for any worker
    count.
    """
    exp = validate_config(cfg)
    keys = exp.units(cfg, exp)
    start = time.perf_counter()
    workers = _worker_cap(cfg)
    if workers > 1 and len(keys) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunk = max(1, len(keys) // (8 * workers))
            results = list(pool.map(_run_one, itertools.repeat(exp.name), itertools.repeat(cfg), keys,
                                    chunksize=chunk))
    else:
        results = [_run_one(exp.name, cfg, k) for k in keys]
    rows = [r for rs, _ in results for r in rs]
    traces = [t for _, t in results if t is not None]
    summary = exp.summarize(cfg, rows)
    return ExperimentResult(exp.name, cfg.to_dict(), rows, summary, traces, time.perf_counter() - start)


def write_outputs(result, out_dir):
    """Write ``<name>.csv``, ``<name>.json`` and, if any, ``<name>.trace.jsonl``."""
    os.makedirs(out_dir, exist_ok=True)
    base = os.path.join(out_dir, result.name)
    with open(base + ".csv", "w", newline="") as fh:
        fh.write(result.csv_text())
    with open(base + ".json", "w") as fh:
        json.dump(result.report(), fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    paths = [base + ".csv", base + ".json"]
    if result.traces:
        with open(base + ".trace.jsonl", "w") as fh:
            for t in result.traces:
                fh.write(json.dumps(t, sort_keys=True, default=_json_default) + "\n")
        paths.append(base + ".trace.jsonl")
    return paths


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def _rate(values):
    v = np.asarray(values, dtype=float)
    return float(v.mean()) if len(v) else float("nan")


def _se(p, n):
    return math.sqrt(max(p * (1 - p), 0.0) / n) if n else float("nan")


# --------------------------------------------------------------- 1. PB engine


def enumerate_pb(probs):
    """PB pmf by summing over all ``2^n`` outcome vectors."""
    p = np.asarray(probs, dtype=float)
    n = len(p)
    bits = (np.arange(2 ** n)[:, None] >> np.arange(n)[None, :]) & 1
    weight = np.prod(np.where(bits == 1, p[None, :], 1.0 - p[None, :]), axis=1)
    return np.bincount(bits.sum(axis=1), weights=weight, minlength=n + 1)


def _pb_engine_unit(cfg, key):
    rng = unit_rng(cfg, key)
    t = key[1]
    nb = 1 + t % 200
    p = float(rng.uniform())
    err_b = float(np.max(np.abs(pbnoise.pb_pmf(np.full(nb, p)).pmf - stats.binom.pmf(np.arange(nb + 1), nb, p))))
    ne = 1 + t % 16
    probs = rng.uniform(size=ne)
    if t % 5 == 0:
        probs[rng.integers(ne)] = float(rng.integers(2))
    err_e = float(np.max(np.abs(pbnoise.pb_pmf(probs).pmf - enumerate_pb(probs))))
    return [{"trial": t, "n_binom": nb, "p": p, "err_binom": err_b, "n_enum": ne, "err_enum": err_e}], None


def _pb_engine_summary(cfg, rows):
    mb = max(r["err_binom"] for r in rows)
    me = max(r["err_enum"] for r in rows)
    return {"max_err_binom": mb, "max_err_enum": me, "instances": len(rows), "passed": mb <= 1e-12 and me <= 1e-12}


register(Experiment(
    "pb_engine", "PB pmf equals Binomial and 2^n enumeration to 1e-12", 200,
    _single_units, _pb_engine_unit, _pb_engine_summary,
    ("trial", "n_binom", "p", "err_binom", "n_enum", "err_enum")))


# ------------------------------------------------ 2/3. gentle event on DENSE


def dense_gentle_instance(rng):
    """Random DENSE product state (n <= 6, d = 2) with a gentle event."""
    n = int(rng.integers(1, 7))
    sites = [qcore.random_density_matrix(2, rng, rank=int(rng.integers(1, 3))) for _ in range(n)]
    projs = [qcore.random_projector(2, rng, rank=int(rng.choice([0, 1, 1, 1, 2]))) for _ in range(n)]
    theta = float(rng.uniform(0.2, 1.0))
    lam = float(rng.uniform(0.05, 0.95))
    return sites, projs, simstate.GentleEvent(projs, theta, lam, n)


def _dense_faithfulness(rng):
    sites, projs, ev = dense_gentle_instance(rng)
    state = simstate.ProductState(sites).handle()
    e_b = simstate.expect_event(state, ev)
    p = np.array([np.real(np.trace(r @ q)) for r, q in zip(sites, projs)])
    pb = pbnoise.pb_pmf(np.clip(p, 0, 1))
    tail = pbnoise.smoothed_tail(pb, ev.noise, ev.theta_n)
    row = {"n": ev.n, "theta": ev.theta, "lam": ev.lam, "e_b": e_b, "tail": tail, "err_accept": abs(e_b - tail),
           "fidelity": None, "bc": None, "err_fidelity": None, "bures_ratio": None,
           "bound": pbnoise.boundexp(p, ev.lam, ev.theta_n)}
    if 1.0 - e_b > 1e-12:
        post, _ = simstate.conditioned_state(state, ev, accepted=False)
        f = qcore.fidelity(state.rho, post)
        bc = pbnoise.bhattacharyya(pbnoise.conditional_pmf_reject(pb, ev.noise, ev.theta_n), pb.pmf)
        row.update(fidelity=f, bc=bc, err_fidelity=abs(f - bc))
        scale = e_b * pb.stddev * ev.lam
        if scale > 1e-12:
            # Empirical constant of d_Bures(rho, rho | reject) <~ E[B] stddev[T] lambda.
            row["bures_ratio"] = math.sqrt(max(2.0 * (1.0 - f), 0.0)) / scale
    return row


def _faith_unit(cfg, key):
    row = _dense_faithfulness(unit_rng(cfg, key))
    return [{"trial": key[1], **row}], None


def _faith_summary(cfg, rows):
    ea = max(r["err_accept"] for r in rows)
    fid = [r["err_fidelity"] for r in rows if r["err_fidelity"] is not None]
    ef = max(fid) if fid else 0.0
    ratios = [r["bures_ratio"] for r in rows if r["bures_ratio"] is not None]
    return {"instances": len(rows), "max_err_accept": ea, "max_err_fidelity": ef,
            "fidelity_checked": len(fid), "max_bures_ratio": max(ratios, default=0.0),
            "passed": ea <= 1e-10 and ef <= 1e-8}


register(Experiment(
    "gentle_event_faithfulness", "E[B] equals the smoothed PB tail; rejection fidelity equals the classical BC",
    500, _single_units, _faith_unit, _faith_summary,
    ("trial", "n", "theta", "lam", "e_b", "tail", "err_accept", "fidelity", "bc", "err_fidelity", "bures_ratio")))


def classical_tail_instance(rng, n_max=2000):
    n = int(rng.integers(1, n_max + 1))
    a, b = rng.uniform(0.2, 5.0, size=2)
    probs = rng.beta(a, b, size=n)
    pbar = float(probs.mean())
    theta = float(np.clip(pbar + rng.uniform(-0.05, 0.5), 0.0, 1.0))
    lam = float(math.exp(rng.uniform(math.log(1e-3), math.log(0.999))))
    return probs, theta, lam


def _tail_unit(cfg, key):
    setting, t = key
    if setting == 0:
        # Same streams as gentle_event_faithfulness, hence the same instances.
        r = _dense_faithfulness(unit_rng(cfg, key))
        value, bound, n, theta, lam = r["e_b"], r["bound"], r["n"], r["theta"], r["lam"]
    else:
        probs, theta, lam = classical_tail_instance(unit_rng(cfg, key))
        n = len(probs)
        value = pbnoise.smoothed_tail(pbnoise.pb_pmf(probs), pbnoise.ExponentialNoise(lam), theta * n)
        bound = pbnoise.boundexp(probs, lam, theta * n)
    viol = value > bound * (1 + 1e-12) + 1e-300
    return [{"kind": "dense" if setting == 0 else "classical", "trial": t, "n": n, "theta": theta, "lam": lam,
             "value": value, "bound": bound, "violation": bool(viol)}], None


def _tail_units(cfg, exp):
    dense = 500 if cfg.trials is None else min(500, cfg.trials)
    return [(0, t) for t in range(dense)] + [(1, t) for t in range(_trials(cfg, exp))]


def _tail_summary(cfg, rows):
    v = sum(r["violation"] for r in rows)
    informative = sum(r["bound"] < 1 for r in rows)
    return {"instances": len(rows), "dense": sum(r["kind"] == "dense" for r in rows),
            "classical": sum(r["kind"] == "classical" for r in rows), "violations": v,
            "bound_below_one": informative, "passed": v == 0}


register(Experiment(
    "gentle_tail_bound", "E[B] <= exp(-n lam (theta - pbar - e lam / 2))", 10_000,
    _tail_units, _tail_unit, _tail_summary,
    ("kind", "trial", "n", "theta", "lam", "value", "bound", "violation")))


# ------------------------------------------------ 4. classical gentleness


def gentleness_instance(rng, n_max=1000):
    """PB law, noise and threshold meeting ``1/lam >= max(1, sd)`` and ``Pr[B] < 1/4``."""
    n = int(rng.integers(1, n_max + 1))
    a, b = rng.uniform(0.2, 5.0, size=2)
    pb = pbnoise.pb_pmf(rng.beta(a, b, size=n))
    sd = pb.stddev
    mean_x = max(1.0, sd) * math.exp(rng.uniform(0.0, math.log(20.0)))
    noise = pbnoise.ExponentialNoise(1.0 / mean_x)
    theta_n = pb.mean + sd * rng.uniform(-1.0, 4.0) + mean_x * rng.uniform(0.0, 3.0)
    while pbnoise.smoothed_tail(pb, noise, theta_n) >= 0.25:
        theta_n += mean_x
    return pb, noise, theta_n


def _gentle_unit(cfg, key):
    pb, noise, theta_n = gentleness_instance(unit_rng(cfg, key))
    r = pbnoise.gentleness_check(pb, noise, theta_n, c_cal=10.0)
    return [{"trial": key[1], "n": pb.n, "lam": noise.lam, "theta_n": theta_n, "stddev": pb.stddev,
             "p_b": r["pB"],
             "chi2": r["chi2"], "bound_rhs": r["bound_rhs"], "ratio": r["ratio"], "ok": r["ok"]}], None


def _gentle_summary(cfg, rows):
    v = sum(not r["ok"] for r in rows)
    return {"instances": len(rows), "violations": v, "max_ratio": max(r["ratio"] for r in rows),
            "c_cal": 10.0, "passed": v == 0}


register(Experiment(
    "pb_gentleness", "chi2((T | reject), T) <= 10 (Pr[B] stddev[T] lam)^2", 10_000,
    _single_units, _gentle_unit, _gentle_summary,
    ("trial", "n", "lam", "theta_n", "stddev", "p_b", "chi2", "bound_rhs", "ratio", "ok")))


# ------------------------------------------------------ 5. threshold search


THRESHOLD_MS = (4, 8, 16)


def threshold_instance(rng, m, eps, design):
    """Grouped commuting promise instance: one concept meets its threshold.

    ``uniform``: other thresholds uniform on [0, 1]. ``boundary``: every other
    concept sits between ``eps`` and ``eps + 0.3`` below its threshold.
    """
    G = 4
    p = rng.uniform(0, 1, G)
    probs = np.c_[p, 1 - p]
    w = rng.dirichlet(np.ones(G))
    masks = rng.integers(0, 2, (m, G, 2)).astype(float)
    mu = np.einsum("g,gb,cgb->c", w, probs, masks)
    good = int(rng.integers(m))
    if design == "uniform":
        theta = rng.uniform(0, 1, m)
    else:
        theta = np.minimum(1.0, mu + eps + rng.uniform(0, 0.3, m))
    theta[good] = rng.uniform(0, mu[good])
    return probs, w, masks, mu, theta


def _threshold_unit(cfg, key):
    setting, t = key
    m = THRESHOLD_MS[setting]
    eps = cfg.eps or 0.1
    acfg = AlgorithmConfig(eps=eps, D_noise=cfg.D_noise)
    n = threshold_min_l(m, eps, acfg.C1, acfg.C2)
    rng = unit_rng(cfg, key)
    probs, w, masks, mu, theta = threshold_instance(rng, m, eps, cfg.design)
    counts = np.floor(w * n).astype(np.int64)
    counts[0] += n - counts.sum()
    mu = np.einsum("g,gb,cgb->c", counts / n, probs, masks)
    tcl = ThresholdedConceptList([masks[i] for i in range(m)], list(theta))
    c, trace = threshold_search(simstate.CommutingState(probs, counts), tcl, acfg, rng)
    ok = c is not None and mu[c] >= theta[c] - eps
    fp = c is not None and not ok
    return [{"m": m, "trial": t, "n": n, "returned": -1 if c is None else int(c), "success": bool(ok),
             "false_positive": bool(fp)}], None


def _threshold_summary(cfg, rows):
    out = {"design": cfg.design}
    passed = True
    for m in THRESHOLD_MS:
        rs = [r for r in rows if r["m"] == m]
        if not rs:
            continue
        s, f = _rate([r["success"] for r in rs]), _rate([r["false_positive"] for r in rs])
        out[f"m{m}"] = {"trials": len(rs), "success_rate": s, "false_positive_rate": f, "n": rs[0]["n"]}
        passed &= s >= 0.03 and f <= 0.05
    out["success_rate"] = min(v["success_rate"] for k, v in out.items() if k.startswith("m"))
    out["passed"] = bool(passed)
    return out


register(Experiment(
    "threshold_search_success", "threshold search returns c with mu_c >= theta_c - eps w.p. >= 0.03", 2000,
    _grid_units(len(THRESHOLD_MS)), _threshold_unit, _threshold_summary,
    ("m", "trial", "n", "returned", "success", "false_positive")))


# ------------------------------------------------------------------ 6. ERM


def erm_instance(rng, m=8, d=100):
    """Single-group commuting instance with ``mu`` spread over [0.2, 0.9]."""
    mu = rng.permutation(np.round(np.linspace(0.2, 0.9, m), 2))
    masks = np.zeros((m, 1, d))
    for c in range(m):
        masks[c, 0, rng.choice(d, size=int(round(mu[c] * d)), replace=False)] = 1.0
    return np.full((1, d), 1.0 / d), masks, mu


def _erm_unit(cfg, key):
    rng = unit_rng(cfg, key)
    acfg = AlgorithmConfig(eps=cfg.eps or 0.1, delta=cfg.delta or 0.25, D_noise=cfg.D_noise, seed=cfg.seed,
                           stream=key[1])
    probs, masks, mu = erm_instance(rng)
    n = erm_schedule(len(mu), acfg).n_required
    data = GroupedData(probs, [n], masks)
    c, mu_hat, trace = erm_projector(data, acfg, rng)
    eps = acfg.eps
    ok = abs(mu_hat - mu.max()) <= 6 * eps and abs(mu_hat - mu[c]) <= 6 * eps
    return [{"trial": key[1], "n": n, "c_star": c, "mu_hat": mu_hat, "mu_c_star": float(mu[c]),
             "mu_max": float(mu.max()), "ok": bool(ok), "degenerate": trace.summary["degenerate"]}], trace.to_dict()


def _erm_summary(cfg, rows):
    delta = cfg.delta or 0.25
    rate = _rate([r["ok"] for r in rows])
    return {"runs": len(rows), "success_rate": rate, "target": 1 - delta,
            "degenerate": sum(r["degenerate"] for r in rows), "passed": rate >= 1 - delta}


register(Experiment(
    "erm_projector", "ERM: |mu_hat - max mu| <= 6 eps and |mu_hat - mu_c*| <= 6 eps w.p. >= 1 - delta", 200,
    _single_units, _erm_unit, _erm_summary,
    ("trial", "n", "c_star", "mu_hat", "mu_c_star", "mu_max", "ok", "degenerate")))


# ------------------------------------------------------ 7. risk estimation


def postselection_oracle(weights, projs, q, events):
    """Dense post-selection by explicit subset sums; returns per-concept predictions.

    Args:
        weights: ``(R,)`` label weights.
        projs: ``(m, R, d, d)`` per-label projectors.
        q: Copies.
        events: ``(concept, direction, r)`` triples.
    """
    R, d = projs.shape[1], projs.shape[-1]
    D = R * d
    single = []
    for c in range(projs.shape[0]):
        P = np.zeros((D, D), dtype=complex)
        for x in range(R):
            P[x * d:(x + 1) * d, x * d:(x + 1) * d] = projs[c, x]
        single.append(P)
    eye = np.eye(D)

    def kron_all(ms):
        out = np.ones((1, 1), dtype=complex)
        for mm in ms:
            out = np.kron(out, mm)
        return out

    rho1 = np.kron(np.diag(weights), np.eye(d) / d)
    rho = kron_all([rho1] * q)
    for c, direction, r in events:
        F = np.zeros((D ** q, D ** q), dtype=complex)
        for S in itertools.product((0, 1), repeat=q):
            k = sum(S)
            if (k >= r) if direction > 0 else (k <= r):
                F += kron_all([single[c] if s else eye - single[c] for s in S])
        rho = F @ rho @ F
        rho /= np.real(np.trace(rho))
    preds = []
    for P in single:
        tot = sum(np.real(np.trace(rho @ kron_all([P if j == i else eye for j in range(q)]))) for i in range(q))
        preds.append(tot / q)
    return np.array(preds)


def risk_instance(rng, m=3):
    p = rng.uniform(0, 1, 2)
    probs = np.c_[p, 1 - p]
    masks = rng.integers(0, 2, (m, 2, 2)).astype(float)
    w = rng.dirichlet([2.0, 2.0])
    return probs, masks, w


def _risk_unit(cfg, key):
    rng = unit_rng(cfg, key)
    eps_alg = cfg.eps or 0.075
    acfg = AlgorithmConfig(eps=eps_alg, delta=cfg.delta or 0.25, D_noise=cfg.D_noise, T_rounds=5,
                           q_copies=cfg.q_copies or 3, estimator_backend=cfg.backend or "dense",
                           estimator_cap=cfg.estimator_cap, seed=cfg.seed, stream=key[1])
    probs, masks, w = risk_instance(rng)
    sched = ere_schedule(masks.shape[0], 4, acfg)
    counts = np.maximum((w * sched.n_required * 1.01).astype(np.int64), 1)
    data = GroupedData(probs, counts, masks)
    wts, mats = data.register()
    diffs = []

    def check(est):
        ev = [(e.concept, e.direction, e.r) for e in est.events]
        diffs.append(float(np.max(np.abs(estimator_predictions(est) - postselection_oracle(wts, mats, acfg.q_copies, ev)))))

    est, trace = ere_shadow(data, acfg, rng, on_update=check)
    err = float(np.max(np.abs(est - data.mu())))
    return [{"trial": key[1], "n": data.n, "updates": trace.summary["updates"], "max_error": err,
             "ok": err <= 0.15, "oracle_max_diff": max(diffs, default=0.0)}], trace.to_dict()


def _risk_summary(cfg, rows):
    rate = _rate([r["ok"] for r in rows])
    od = max(r["oracle_max_diff"] for r in rows)
    return {"runs": len(rows), "success_rate": rate, "oracle_max_diff": od,
            "updates_checked": sum(r["updates"] for r in rows), "passed": rate >= 0.75 and od <= 1e-9}


register(Experiment(
    "risk_estimation_update", "risk estimation with post-selection updates: max error <= 0.15 in >= 75% of runs",
    200, _single_units, _risk_unit, _risk_summary,
    ("trial", "n", "updates", "max_error", "ok", "oracle_max_diff"), backends=("dense", "commuting-dp")))


# ------------------------------------------------- 8. hypothesis selection


def selection_instance(rng, m=4, R=3, d=2, diagonal=False):
    """Hypothesis states ``(m, R, d, d)``, data states ``(R, d, d)`` and label weights."""
    if diagonal:
        sig = np.zeros((m, R, d, d))
        for k in range(m):
            for x in range(R):
                sig[k, x] = np.diag(rng.dirichlet(np.ones(d)))
        k0 = int(rng.integers(m))
        rho = np.array([0.8 * sig[k0, x] + 0.2 * np.diag(rng.dirichlet(np.ones(d))) for x in range(R)])
    else:
        sig = np.array([[qcore.random_density_matrix(d, rng) for _ in range(R)] for _ in range(m)])
        rho = np.array([qcore.random_density_matrix(d, rng) for _ in range(R)])
    return sig, rho, rng.dirichlet(np.ones(R))


def avg_trace_distance(sig_k, rho, w):
    return float(sum(wx * qcore.trace_distance(a, b) for wx, a, b in zip(w, sig_k, rho)))


def _selection_unit(cfg, key):
    setting, t = key
    rng = unit_rng(cfg, key)
    if setting == 0:
        sig, rho, w = selection_instance(rng)
        pairs, A = helstrom_masks(sig)
        mu = np.einsum("x,xab,pxba->p", w, rho, A).real
        k, _ = select_from_mu(sig, w, mu, pairs, A)
        eps, target_extra = 0.0, 0.0
    else:
        sig, rho, w = selection_instance(rng, diagonal=True)
        eps = cfg.eps or 0.05
        acfg = AlgorithmConfig(eps=eps, delta=cfg.delta or 0.25, D_noise=cfg.D_noise,
                               q_copies=cfg.q_copies or 8, estimator_cap=cfg.estimator_cap)
        P = sig.shape[0] * (sig.shape[0] - 1) // 2
        n = ere_schedule(P, sig.shape[1] * sig.shape[2], acfg).n_required
        counts = np.maximum(np.floor(w * n * 1.01).astype(np.int64), 1)
        probs = np.real(np.diagonal(rho, axis1=-2, axis2=-1))
        k, _ = hypothesis_selection(probs, counts, sig, acfg, rng)
        w = counts / counts.sum()
        target_extra = 4 * eps
    dists = [avg_trace_distance(sig[j], rho, w) for j in range(sig.shape[0])]
    eta = min(dists)
    ok = dists[k] <= 3 * eta + target_extra + 1e-12
    return [{"route": "exact" if setting == 0 else "estimated", "trial": t, "k_star": int(k),
             "eta": eta, "selected_distance": dists[k], "bound": 3 * eta + target_extra, "ok": bool(ok)}], None


def _selection_units(cfg, exp):
    t = _trials(cfg, exp)
    return [(0, i) for i in range(t)] + [(1, i) for i in range(max(1, t // 2))]


def _selection_summary(cfg, rows):
    ex = [r for r in rows if r["route"] == "exact"]
    es = [r for r in rows if r["route"] == "estimated"]
    delta = cfg.delta or 0.25
    exact_ok = all(r["ok"] for r in ex)
    rate = _rate([r["ok"] for r in es])
    return {"exact_instances": len(ex), "exact_violations": sum(not r["ok"] for r in ex),
            "estimated_runs": len(es), "estimated_success_rate": rate, "target": 1 - delta,
            "passed": bool(exact_ok and rate >= 1 - delta)}


register(Experiment(
    "hypothesis_selection", "selected state within 3 eta (exact statistics) or 3 eta + 4 eps (estimated)", 100,
    _selection_units, _selection_unit, _selection_summary,
    ("route", "trial", "k_star", "eta", "selected_distance", "bound", "ok")))


# ---------------------------------------------------------- 9. matrix lemmas


def _gapped_pair(rng, d, eps, theta=0.0):
    """Hermitian ``A`` without eigenvalues in ``(theta - 2 eps, theta + 2 eps)`` and ``B`` within ``eps``."""
    side = rng.choice([-1.0, 1.0], size=d)
    ev = theta + side * (2 * eps + rng.exponential(0.5, size=d))
    u = qcore.random_unitary(d, rng)
    a = (u * ev) @ u.conj().T
    b = a + qcore.random_hermitian(d, rng, norm=eps * rng.uniform(0.01, 1.0))
    return 0.5 * (a + a.conj().T), 0.5 * (b + b.conj().T)


def _lemma_unit(cfg, key):
    rng = unit_rng(cfg, key)
    t = key[1]
    d = 2 + t % 3
    s1, s2 = (qcore.random_density_matrix(d, rng, rank=int(rng.integers(1, d + 1))) for _ in range(2))
    A = qcore.helstrom_projector(s1, s2)
    helstrom_err = abs(qcore.trace_distance(s1, s2) - (np.real(np.trace(s1 @ A)) - np.real(np.trace(s2 @ A))))
    fvdg = (qcore.trace_distance(s1, s2), qcore.bures_distance(s1, s2))
    h = qcore.random_hermitian(d, rng, norm=rng.uniform(0.1, 3.0))
    hp = h + qcore.random_hermitian(d, rng, norm=rng.uniform(1e-3, 1.0))
    gap = qcore.operator_norm(h - hp)
    brand = (qcore.trace_norm(qcore.gibbs_state(h) - qcore.gibbs_state(hp)), 2 * (math.exp(gap) - 1))
    # exp(X) for Hermitian X = -H, and the unitary exp(iH); operator and trace norms.
    exp_lhs, exp_rhs = [], []
    for mode, norm in (("real", qcore.operator_norm), ("real", qcore.trace_norm),
                       ("imag", qcore.operator_norm), ("imag", qcore.trace_norm)):
        ex, ey = qcore.matrix_exp_hermitian(h, 1.0, mode), qcore.matrix_exp_hermitian(hp, 1.0, mode)
        diff = (h - hp) if mode == "real" else 1j * (h - hp)
        xnorm = h if mode == "real" else 1j * h
        exp_lhs.append(norm(ex - ey))
        exp_rhs.append(norm(diff) * math.exp(norm(diff)) * math.exp(norm(xnorm)))
    eps = float(rng.uniform(0.05, 0.5))
    a, b = _gapped_pair(rng, d, eps)
    bh = (qcore.operator_norm(qcore.low_energy_projector(a, 0.0) - qcore.low_energy_projector(b, 0.0)),
          math.pi / (4 * eps) * qcore.operator_norm(a - b))
    weyl = (float(np.max(np.abs(np.linalg.eigvalsh(h) - np.linalg.eigvalsh(hp)))), gap)
    tol = 1e-12
    row = {"trial": t, "d": d, "helstrom_err": helstrom_err,
           "fvdg_viol": fvdg[0] > fvdg[1] + tol, "brand_viol": brand[0] > brand[1] + tol,
           "exp_viol": any(l > r * (1 + tol) + tol for l, r in zip(exp_lhs, exp_rhs)),
           "bhatia_viol": bh[0] > bh[1] + tol, "weyl_viol": weyl[0] > weyl[1] + tol,
           "brand_ratio": brand[0] / brand[1], "bhatia_ratio": bh[0] / bh[1] if bh[1] > 0 else 0.0}
    return [row], None


def _lemma_summary(cfg, rows):
    out = {"instances": len(rows), "max_helstrom_err": float(max(r["helstrom_err"] for r in rows))}
    for k in ("fvdg", "brand", "exp", "bhatia", "weyl"):
        out[f"{k}_violations"] = sum(r[f"{k}_viol"] for r in rows)
    out["max_brand_ratio"] = max(r["brand_ratio"] for r in rows)
    out["max_bhatia_ratio"] = max(r["bhatia_ratio"] for r in rows)
    out["passed"] = out["max_helstrom_err"] <= 1e-9 and all(out[f"{k}_violations"] == 0
                                                          for k in ("fvdg", "brand", "exp", "bhatia", "weyl"))
    return out


register(Experiment(
    "matrix_lemmas", "Helstrom identity, Gibbs and exponential perturbation, spectral projector, Weyl, "
    "trace vs Bures distance", 1000, _single_units, _lemma_unit, _lemma_summary,
    ("trial", "d", "helstrom_err", "fvdg_viol", "brand_viol", "exp_viol", "bhatia_viol", "weyl_viol",
     "brand_ratio", "bhatia_ratio")))


# ------------------------------------------------ 10. without replacement


WR_GRID = [(l, K, m, e) for l in (200, 1000) for K in (2, 8) for m in (4, 32) for e in (0.1, 0.2)]


def _wr_unit(cfg, key):
    l, K, m, e = WR_GRID[key[0]]
    rng = unit_rng(cfg, key)
    n = 3 * K * l
    pops = (rng.random((m, n)) < rng.uniform(0, 1, (m, 1))).astype(float)
    r = batching.verify_without_replacement(pops, K, l, e, _trials(cfg, REGISTRY["without_replacement"]), rng)
    return [{"l": l, "K": K, "m": m, "eps": e, "n": n, "freq": r["empirical_freq"], "bound": r["bound"],
             "se": r["se"], "pass": r["pass"]}], None


def _wr_summary(cfg, rows):
    return {"settings": len(rows), "failures": sum(not r["pass"] for r in rows),
            "passed": all(r["pass"] for r in rows)}


register(Experiment(
    "without_replacement", "max batch-mean deviation frequency <= 2 K m exp(-l eps^2 / 2) + 3 se", 10_000,
    lambda cfg, exp: [(s, 0) for s in range(len(WR_GRID))], _wr_unit, _wr_summary,
    ("l", "K", "m", "eps", "n", "freq", "bound", "se", "pass")))


# --------------------------------------------------- 11. covering bounds


def random_finite_class(rng, size, n_labels, kind):
    d = 2
    pool_size = int(rng.integers(2, 6))
    pool = [[qcore.random_projector(d, rng, rank=1) if kind is C.Kind.PROJECTOR
             else qcore.random_density_matrix(d, rng) for _ in range(pool_size)] for _ in range(n_labels)]
    members = []
    for _ in range(size):
        choice = rng.integers(0, pool_size, n_labels)
        table = [pool[x][choice[x]] for x in range(n_labels)]
        members.append(C.Concept(kind, lambda x, tb=table: tb[x], {}, d))
    return C.ConceptClass(kind, d, members)


def exhaustive_coverage(net, cls, labels, weights):
    """Every class member within ``eps`` of some net member, recomputed pairwise."""
    w = np.asarray(weights, float) / np.sum(weights)
    norm = qcore.trace_norm if net.q == 1 else qcore.operator_norm
    for c in cls.members:
        best = min(sum(wx * norm(c(x) - m(x)) for wx, x in zip(w, labels)) for m in net.members)
        if best > net.eps + 1e-9:
            return False
    return True


def _cover_unit(cfg, key):
    rng = unit_rng(cfg, key)
    size = int(rng.integers(2, 201))
    n_labels = int(rng.integers(2, 9))
    kind = C.Kind.PROJECTOR if key[1] % 2 == 0 else C.Kind.STATE
    cls = random_finite_class(rng, size, n_labels, kind)
    labels = list(range(n_labels))
    weights = rng.integers(1, 5, n_labels)
    eps = float(rng.uniform(0.05, 0.8))
    net = nets.build_empirical_net(cls, labels, eps, weights=weights)
    return [{"trial": key[1], "kind": kind.name, "class_size": size, "labels": n_labels, "eps": eps,
             "net_size": len(net), "audit": net.audit(),
             "covered": exhaustive_coverage(net, cls, labels, weights)}], None


def _cover_summary(cfg, rows):
    lqc = nets.bound_lqc(4, 2, 0.5).log10_value
    full = nets.bound_full_unitary(1, 6).value
    fat = nets.bound_fatshatter(10, 1.0, 0.5, 2).log10_value
    nets_ok = all(r["audit"] and r["covered"] for r in rows)
    return {"bound_lqc_4_2_0.5_log10": lqc, "bound_full_unitary_1_6": full,
            "bound_fatshatter_10_1_0.5_2_log10": fat, "nets": len(rows),
            "net_failures": sum(not (r["audit"] and r["covered"]) for r in rows),
            "passed": abs(lqc - 89.54) <= 0.01 and full == 1.0 and nets_ok}


register(Experiment(
    "covering_bounds", "closed-form covering bounds and exhaustive net coverage on finite classes", 50,
    _single_units, _cover_unit, _cover_summary,
    ("trial", "kind", "class_size", "labels", "eps", "net_size", "audit", "covered")))


# ------------------------------------------------ 12. pure-state learner


PURE_TS = (25, 50, 100, 200, 400)


def pure_state_class(rng, m=16, n_labels=4, spread=0.8):
    """Pure-state concepts tilted by up to ``spread`` radians from a random state per label."""
    base = [qcore.random_unitary(2, rng) for _ in range(n_labels)]
    members = []
    for _ in range(m):
        a = rng.uniform(0, spread, n_labels)
        ph = rng.uniform(0, 2 * np.pi, n_labels)
        table = [qcore.pure_state(base[x] @ np.array([np.cos(a[x]), np.exp(1j * ph[x]) * np.sin(a[x])]))
                 for x in range(n_labels)]
        members.append(C.Concept(C.Kind.STATE, lambda x, tb=table: tb[x], {}, 2))
    return members


def _pure_unit(cfg, key):
    setting, t = key
    T = PURE_TS[setting]
    eps = cfg.eps or 0.2
    rng = unit_rng(cfg, key)
    members = pure_state_class(rng)
    truth = int(rng.integers(len(members)))
    xs = list(rng.integers(0, 4, T))
    states = [members[truth](x) for x in xs]
    h, info = pure_state_realizable_learner(xs, states, members, rng)
    delta = float(np.mean([qcore.trace_distance(members[h](x), members[truth](x)) for x in range(4)]))
    return [{"T": T, "trial": t, "h": h, "truth": truth, "risk": delta, "error": delta > 2 * eps,
             "zero_likelihood": info["zero_likelihood"]}], None


def _pure_summary(cfg, rows):
    eps = cfg.eps or 0.2
    rates = {}
    for T in PURE_TS:
        rs = [r["error"] for r in rows if r["T"] == T]
        if rs:
            rates[T] = (_rate(rs), len(rs))
    Ts = sorted(rates)
    decays = all(rates[b][0] <= rates[a][0] + 3 * max(_se(rates[a][0], rates[a][1]), _se(rates[b][0], rates[b][1]))
                 for a, b in zip(Ts, Ts[1:]))
    pts = [(eps * eps * T, math.log2(r)) for T, (r, _) in rates.items() if r > 0]
    omega = -float(np.polyfit(*zip(*pts), 1)[0]) if len(pts) >= 2 else None
    last = rates.get(400, rates[Ts[-1]])[0]
    return {"error_rates": {str(T): rates[T][0] for T in Ts}, "decays": decays, "omega_fit": omega,
            "rate_at_T400": last, "zero_likelihood": sum(r["zero_likelihood"] for r in rows),
            "passed": bool(decays and last <= 0.05)}


register(Experiment(
    "pure_state_learner", "ML from random-basis measurements: Pr[risk > 2 eps] decays with T, <= 0.05 at T=400",
    500, _grid_units(len(PURE_TS)), _pure_unit, _pure_summary,
    ("T", "trial", "h", "truth", "risk", "error", "zero_likelihood")))


# ------------------------------------------------------- 13. end to end


def interval_class(n_labels=8):
    """Concepts ``x -> |1><1|`` on ``[a, b)`` and ``|0><0|`` elsewhere."""
    p1, p0 = np.diag([0.0, 1.0]), np.diag([1.0, 0.0])
    members = [C.Concept(C.Kind.PROJECTOR, lambda x, a=a, b=b: p1 if a <= x < b else p0, {"a": a, "b": b}, 2)
               for a in range(n_labels + 1) for b in range(a, n_labels + 1)]
    return C.ConceptClass(C.Kind.PROJECTOR, 2, members, name="intervals")


def _e2e_unit(cfg, key):
    rng = unit_rng(cfg, key)
    cls = interval_class()
    probs = rng.dirichlet(np.ones(8))
    truth = cls.members[int(rng.integers(len(cls)))]
    src = C.depolarized_source(C.FiniteLabels(list(range(8)), probs), truth, 0.0, 2)
    acfg = AlgorithmConfig(eps=cfg.eps or 0.15, delta=cfg.delta or 0.25, D_noise=cfg.D_noise, seed=cfg.seed,
                           stream=key[1])
    rep = learner.learn_projector_class(src, cls, acfg, rng=rng)
    s = rep.summary
    return [{"trial": key[1], "n": rep.meta["n"], "net_size": rep.meta["net_size"],
             "selected_risk": s["inf_risk"] + s["selected_gap"], "inf_risk": s["inf_risk"], "gap": s["selected_gap"],
             "ok": s["within_target"]}], None


def _e2e_summary(cfg, rows):
    delta = cfg.delta or 0.25
    rate = _rate([r["ok"] for r in rows])
    return {"runs": len(rows), "success_rate": rate, "target": 1 - delta,
            "median_gap": float(np.median([r["gap"] for r in rows])), "passed": rate >= 1 - delta}


register(Experiment(
    "end_to_end_erm", "net + ERM: R(selected) - inf R <= 7 eps w.p. >= 1 - delta", 100,
    _single_units, _e2e_unit, _e2e_summary,
    ("trial", "n", "net_size", "selected_risk", "inf_risk", "gap", "ok")))


# --------------------------------------------------- uniform convergence


def _uc_unit(cfg, key):
    rng = unit_rng(cfg, key)
    labels = C.FiniteLabels(list(range(6)), rng.dirichlet(np.ones(6)))
    cls = random_finite_class(rng, 10, 6, C.Kind.PROJECTOR)
    src = C.depolarized_source(labels, cls.members[0], 0.2, 2)
    curve = learner.uniform_convergence_experiment(src, cls, (100, 400, 1600),
                                                   _trials(cfg, REGISTRY["uniform_convergence"]), rng,
                                                   eps=cfg.eps or 0.5)
    rows = [{**r, "monotone": curve["monotone"], "bound_ok": curve["bound_ok"]} for r in curve["rows"]]
    return rows, None


def _uc_summary(cfg, rows):
    return {"medians": [r["median"] for r in rows], "monotone": rows[0]["monotone"],
            "bound_ok": rows[0]["bound_ok"], "passed": bool(rows[0]["monotone"] and rows[0]["bound_ok"])}


register(Experiment(
    "uniform_convergence", "sup_c |R - R_hat| decays with n; exceedance within the covering bound", 200,
    lambda cfg, exp: [(0, 0)], _uc_unit, _uc_summary,
    ("n", "median", "mean", "q90", "median_se", "exceed_freq", "exceed_se", "bound", "monotone", "bound_ok")))
