"""How much shuffling freedom survives file redirection.

Within one virtual chunk the ``L = F/M`` files can be delivered in ``L!``
orders without redirection. Redirection makes the ``G`` files sharing a slot
interchangeable, so at least ``L! / (G!)^K`` distinct delivery sequences remain.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from .engine import Cluster
from .errors import ConfigError
from .layout import LayoutConfig, build_layout, make_trace
from .local import FIRST, GREEDY
from .metrics import C

LN10 = math.log(10)
EXACT_LIMIT = 20  # F/M up to this is also evaluated with integers
ENUMERATION_LIMIT = 10 ** 6


@dataclass(frozen=True)
class RandomnessBound:
    F: int
    M: int
    K: int
    G: int
    log10_full: float
    log10_divisor: float
    log10_lower_bound: float
    full_exact: int | None = None
    divisor_exact: int | None = None
    lower_bound_exact: int | None = None

    @property
    def divisor(self) -> float:
        """(G!)^K as a float, e.g. 2.16e88 for G=4, K=64."""
        return 10 ** self.log10_divisor

    def to_dict(self) -> dict:
        d = asdict(self)
        d["divisor"] = self.divisor
        return d


def _files_per_vc(F: int, M: int, K: int) -> tuple[int, int]:
    if min(F, M, K) < 1:
        raise ConfigError("F, M and K must be positive")
    if F % (K * M):
        raise ConfigError(f"F={F} is not a multiple of K*M={K * M}")
    return F // M, F // (K * M)


def compute_bound(F: int, M: int, K: int) -> RandomnessBound:
    L, G = _files_per_vc(F, M, K)
    log_full = math.lgamma(L + 1) / LN10
    log_div = K * math.lgamma(G + 1) / LN10
    exact = {}
    if L <= EXACT_LIMIT:
        full = math.factorial(L)
        div = math.factorial(G) ** K
        exact = dict(full_exact=full, divisor_exact=div, lower_bound_exact=full // div)
    return RandomnessBound(F, M, K, G, log_full, log_div, log_full - log_div, **exact)


def _single_vc_layout(K: int, G: int):
    return build_layout(LayoutConfig(F=K * G, K=K, M=1, N=1, P=1), np.ones(K * G, dtype=np.int64))


def enumerate_reachable(K: int, G: int, policy: str = FIRST, backend: str | None = None) -> int:
    """Distinct delivery sequences of one virtual chunk over every input order of its files.

    Tie-breaks are deterministic (``first`` by default) so the count is well
    defined; seeded tie-breaking can only reach more sequences.
    """
    L = K * G
    if L < 1:
        raise ConfigError("K and G must be positive")
    if math.factorial(L) > ENUMERATION_LIMIT:
        raise ConfigError(f"enumeration over {L}! orders exceeds the {ENUMERATION_LIMIT} limit")
    layout = _single_vc_layout(K, G)
    seen = set()
    for perm in itertools.permutations(range(L)):
        cl = Cluster(layout, make_trace((0, f) for f in perm), prefetch=False, policy=policy)
        cl.run(backend)
        seen.add(cl.delivered.tobytes())
    return len(seen)


@dataclass(frozen=True)
class UniformityReport:
    K: int
    G: int
    trials: int
    alpha: float
    policy: str
    first_load_order_p: float
    first_delivery_p: float
    first_load_order_flagged: bool
    first_delivery_flagged: bool

    def to_dict(self) -> dict:
        return asdict(self)


def _chisquare_p(counts: np.ndarray) -> float:
    if counts.size < 2:
        return 1.0
    return float(stats.chisquare(counts).pvalue)


def position_uniformity(K: int, G: int, trials: int = 10_000, alpha: float = 0.001,
                        policy: str = GREEDY, seed: int = 0, backend: str | None = None) -> UniformityReport:
    """Chi-square diagnostics for one virtual chunk under random input orders.

    (a) the order in which the G chunks are first loaded, over all G! orders;
    (b) which of the K*G files is delivered first. This is a diagnostic only.
    """
    if trials < 1000:
        raise ConfigError("position_uniformity needs at least 1000 trials")
    layout = _single_vc_layout(K, G)
    L = K * G
    perms = {p: i for i, p in enumerate(itertools.permutations(range(G)))} if G <= 8 else None
    order_counts = np.zeros(len(perms) if perms else 1, dtype=np.int64)
    first_counts = np.zeros(L, dtype=np.int64)
    ss = np.random.SeedSequence(seed)
    for child in ss.spawn(trials):
        trace_seed, tie_seed = child.generate_state(2)
        files = np.random.default_rng(trace_seed).permutation(L)
        cl = Cluster(layout, make_trace((0, int(f)) for f in files), prefetch=False,
                     policy=policy, tie_seed=int(tie_seed))
        cl.run(backend)
        first_counts[cl.delivered[0]] += 1
        if perms is not None:
            loads = cl.refill_pc[: cl.counters[C.MEMORY_MISSES]]
            _, idx = np.unique(loads, return_index=True)
            order = tuple(int(x) for x in loads[np.sort(idx)])
            order_counts[perms[order]] += 1
    p_order = _chisquare_p(order_counts) if perms is not None else float("nan")
    p_first = _chisquare_p(first_counts)
    return UniformityReport(K, G, trials, alpha, policy, p_order, p_first,
                            bool(p_order < alpha), bool(p_first < alpha))
