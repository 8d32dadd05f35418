"""Algorithm configuration and sample-size schedules.

The unnamed constants of the sizing conditions are configuration values:

* threshold search: ``(log m + C2)^2 < C1 l eps^2`` (defaults ``C1 = 1/400``,
  ``C2 = 4``, natural log);
* ERM: ``l > log(T k / delta) / eps^2`` and ``n >= 6 T k l``;
* failure budget ``k = ceil(log(2T/delta) / log(1/0.97))``.
"""
import math
import warnings
from dataclasses import asdict, dataclass

from ..batching import SizingWarning
from ..qcore import ContractError

SUCCESS_FLOOR = 0.97


class SizingError(ContractError):
    """The data are too small for the requested schedule."""


@dataclass
class AlgorithmConfig:
    """Tunable constants of the learning algorithms.

    Attributes:
        eps: Accuracy parameter.
        delta: Failure probability.
        D_noise: Noise scale; events use ``lambda = 1/(D sqrt(l))``.
        k_repeats: Consecutive-failure budget (``None`` derives the default).
        T_rounds: Round budget of risk estimation (``None`` derives it).
        q_copies: Copies held by the risk estimator.
        C_cal: Calibration constant of the chi-squared gentleness check.
        C1, C2: Threshold-search sizing constants.
        block_size: Override for the block length ``l``.
        estimator_backend: ``"dense"`` or ``"commuting-dp"``.
        estimator_cap: Maximum DP table entries (or dense ``log2`` dimension).
        seed, stream: Random-stream identifiers recorded in traces.
    """

    eps: float = 0.1
    delta: float = 0.25
    D_noise: float = 4.0
    k_repeats: int = None
    T_rounds: int = None
    q_copies: int = 3
    C_cal: float = 10.0
    C1: float = 1.0 / 400.0
    C2: float = 4.0
    block_size: int = None
    estimator_backend: str = "commuting-dp"
    estimator_cap: int = 50_000_000
    seed: int = 0
    stream: int = 0

    def __post_init__(self):
        if not 0 < self.eps < 1:
            raise ContractError("eps must lie in (0, 1)")
        if not 0 < self.delta < 1:
            raise ContractError("delta must lie in (0, 1)")
        for name in ("k_repeats", "T_rounds", "q_copies", "block_size"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ContractError(f"{name} must be >= 1")
        if self.D_noise <= 0:
            raise ContractError("D_noise must be positive")
        if self.estimator_backend not in ("dense", "commuting-dp"):
            raise ContractError(f"unknown estimator backend {self.estimator_backend!r}")

    def to_dict(self):
        return asdict(self)


def default_k(T, delta):
    """``ceil(log(2T/delta) / log(1/0.97))``."""
    return int(math.ceil(math.log(2 * T / delta) / math.log(1 / SUCCESS_FLOOR)))


def threshold_min_l(m, eps, C1, C2):
    """Smallest integer ``l`` with ``(log m + C2)^2 < C1 l eps^2``."""
    return int(math.floor((math.log(m) + C2) ** 2 / (C1 * eps * eps))) + 1


def threshold_sizing_ok(m, n, eps, C1, C2):
    return (math.log(m) + C2) ** 2 < C1 * n * eps * eps


def warn_threshold_sizing(m, n, eps, C1, C2):
    if not threshold_sizing_ok(m, n, eps, C1, C2):
        warnings.warn(f"(log m + C2)^2 < C1 n eps^2 fails for m={m}, n={n}, eps={eps}", SizingWarning,
                      stacklevel=3)


def binary_search_rounds(eps):
    """Worst-case number of interval updates of the ERM binary search.

    Each update either halves the interval or maps its width ``w`` to
    ``w/2 + 2 eps``; the second is never smaller, so it is the worst case.
    """
    w, t = 1.0, 0
    while w >= 6 * eps:
        w = w / 2 + 2 * eps
        t += 1
    return max(t, 1)


@dataclass(frozen=True)
class Schedule:
    T: int
    k: int
    l: int
    blocks: int

    @property
    def n_required(self):
        """Population needed for the without-replacement lemma (``n >= 3 K l``)."""
        return 3 * self.blocks * self.l

    def to_dict(self):
        return {"T": self.T, "k": self.k, "l": self.l, "blocks": self.blocks, "n_required": self.n_required}


def erm_schedule(m, cfg):
    """ERM schedule: ``T`` interval updates, budget ``k``, ``2Tk`` blocks of size ``l``."""
    T = binary_search_rounds(cfg.eps)
    k = cfg.k_repeats or default_k(T, cfg.delta)
    l_ts = threshold_min_l(max(m, 1), cfg.eps, cfg.C1, cfg.C2)
    l_chk = int(math.floor(math.log(T * k / cfg.delta) / cfg.eps**2)) + 1
    l = cfg.block_size or max(l_ts, l_chk)
    return Schedule(T, k, l, 2 * T * k)


def ere_default_rounds(register_dim, eps):
    """``ceil(log(d)/eps^3 (log log d + log 1/eps))`` with unit constant, ``d >= 3``."""
    d = max(register_dim, 3)
    return int(math.ceil(math.log(d) / eps**3 * (math.log(math.log(d)) + math.log(1 / eps))))


def ere_schedule(m, register_dim, cfg):
    """Risk-estimation schedule: ``T`` rounds of up to ``k`` search/check pairs.

    ``l`` satisfies the threshold-search condition for the ``2m`` search pairs
    and makes each check's deviation probability at most
    ``delta / (4 (k + 1) T)`` via ``2 e^{-l eps^2/6}``.
    """
    T = cfg.T_rounds or ere_default_rounds(register_dim, cfg.eps)
    k = cfg.k_repeats or default_k(T, cfg.delta)
    l_ts = threshold_min_l(2 * max(m, 1), cfg.eps, cfg.C1, cfg.C2)
    l_chk = int(math.ceil(6 * math.log(8 * (k + 1) * T / cfg.delta) / cfg.eps**2))
    l = cfg.block_size or max(l_ts, l_chk)
    return Schedule(T, k, l, 2 * T * k)


def check_population(n, sched, what):
    if n < sched.n_required:
        raise SizingError(f"{what}: n = {n} violates n >= 3*K*l = 3*{sched.blocks}*{sched.l} = {sched.n_required}")
