"""Deterministic epoch driver, exactly-once verification, breakdown ablation and chunk-size sweep."""

from __future__ import annotations

import csv
import io
import json
import logging
from collections import defaultdict
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .engine import JITTER, ROUND_ROBIN, SCHEDULES, Cluster, EpochResult
from .errors import ConfigError, ProtocolViolation
from .layout import Layout, LayoutConfig, build_layout, generate_epoch_trace
from .local import GREEDY, POLICIES, RANDOM
from .metrics import MetricsReport
from .storage import CostModel

log = logging.getLogger(__name__)

SIZE_KINDS = ("fixed", "uniform", "lognormal")


@dataclass(frozen=True)
class SizeDistribution:
    kind: str = "lognormal"
    mean: int = 100_000  # fixed size, or lognormal mean
    low: int = 10_000
    high: int = 200_000
    sigma: float = 0.6

    def __post_init__(self):
        if self.kind not in SIZE_KINDS:
            raise ConfigError(f"size distribution must be one of {SIZE_KINDS}, got {self.kind!r}")
        if self.mean < 1 or self.low < 1 or self.high < self.low or self.sigma < 0:
            raise ConfigError("size distribution parameters out of range")

    def sample(self, F: int, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        if self.kind == "fixed":
            return np.full(F, self.mean, dtype=np.int64)
        if self.kind == "uniform":
            return rng.integers(self.low, self.high, F, endpoint=True, dtype=np.int64)
        mu = np.log(self.mean) - self.sigma ** 2 / 2
        return np.maximum(1, np.rint(rng.lognormal(mu, self.sigma, F))).astype(np.int64)


def derive_seed(base: int, stream: str, index: int = 0) -> int:
    """Independent 63-bit seed for a named stream."""
    tag = int.from_bytes(stream.encode(), "little")
    return int(np.random.SeedSequence([base, tag, index]).generate_state(1, np.uint64)[0] >> 1)


@dataclass(frozen=True)
class SimConfig:
    layout: LayoutConfig
    epochs: int = 1
    cost: CostModel = field(default_factory=CostModel)
    prefetch: bool = True
    refill_policy: str = GREEDY
    batching: bool = True
    sizes: SizeDistribution = field(default_factory=SizeDistribution)
    seed: int = 0
    schedule: str = ROUND_ROBIN

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.refill_policy not in POLICIES:
            raise ConfigError(f"refill_policy must be one of {POLICIES}")
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"schedule must be one of {SCHEDULES}")

    def effective_layout(self) -> LayoutConfig:
        """Layout actually simulated. Without batching every chunk is a single file;
        VC memory (K*M slots) is kept constant."""
        if self.batching:
            return self.layout
        c = self.layout
        return c.replace(K=1, M=c.K * c.M)

    def trace_seed(self, epoch: int) -> int:
        return derive_seed(self.seed, "trace", epoch)

    def tie_seed(self, epoch: int) -> int:
        return derive_seed(self.seed, "tiebreak", epoch)

    def schedule_seed(self, epoch: int) -> int:
        return derive_seed(self.seed, "schedule", epoch)

    def size_seed(self) -> int:
        return derive_seed(self.layout.layout_seed, "sizes")

    def resolved_seeds(self) -> dict:
        return {
            "seed": self.seed,
            "layout_seed": self.layout.layout_seed,
            "size_seed": self.size_seed(),
            "trace_seeds": [self.trace_seed(e) for e in range(self.epochs)],
            "tie_seeds": [self.tie_seed(e) for e in range(self.epochs)],
            "schedule_seeds": [self.schedule_seed(e) for e in range(self.epochs)],
        }

    def with_features(self, **changes) -> "SimConfig":
        return replace(self, **changes)


def build_sim_layout(config: SimConfig) -> Layout:
    sizes = config.sizes.sample(config.layout.F, config.size_seed())
    return build_layout(config.effective_layout(), sizes)


# verification ------------------------------------------------------------------

@dataclass
class VerificationReport:
    ok: bool
    num_files: int
    duplicates: dict[int, list[int]] = field(default_factory=dict)  # file -> sns that returned it
    omissions: list[int] = field(default_factory=list)
    unserved: list[int] = field(default_factory=list)  # sns with no delivery
    redirect_violations: list[int] = field(default_factory=list)  # sns

    def summary(self) -> str:
        if self.ok:
            return f"ok: {self.num_files} files delivered exactly once"
        parts = []
        if self.duplicates:
            parts.append(f"{len(self.duplicates)} duplicated files, e.g. "
                         + ", ".join(f"file {f} at sns {s}" for f, s in list(self.duplicates.items())[:3]))
        if self.omissions:
            parts.append(f"{len(self.omissions)} files never delivered, e.g. {self.omissions[:5]}")
        if self.unserved:
            parts.append(f"{len(self.unserved)} unserved requests, e.g. sns {self.unserved[:5]}")
        if self.redirect_violations:
            parts.append(f"{len(self.redirect_violations)} redirection violations, e.g. sns "
                         f"{self.redirect_violations[:5]}")
        return "FAILED: " + "; ".join(parts)


LogEntries = Iterable[tuple[int, int, int]]  # (sn, requested, returned)


def verify_exactly_once(logs: Sequence[LogEntries], num_files: int,
                        layout: Layout | None = None) -> VerificationReport:
    """Check that the union of per-node delivery logs returns every file exactly once.

    With ``layout`` given, also checks the redirection constraint: each returned
    file shares (vc, offset, home) with the file requested.
    """
    seen: dict[int, list[int]] = defaultdict(list)
    unserved, redirect = [], []
    for node_log in logs:
        for sn, requested, returned in node_log:
            if returned < 0:
                unserved.append(int(sn))
                continue
            seen[int(returned)].append(int(sn))
            if layout is not None and not 0 <= returned < layout.F:
                redirect.append(int(sn))
            elif layout is not None and layout.slot_of(int(requested)) != layout.slot_of(int(returned)):
                redirect.append(int(sn))
    dups = {f: sorted(s) for f, s in sorted(seen.items()) if len(s) > 1}
    omissions = [f for f in range(num_files) if f not in seen]
    stray = [f for f in seen if not 0 <= f < num_files]
    ok = not (dups or omissions or unserved or redirect or stray)
    return VerificationReport(ok, num_files, dups, omissions, sorted(unserved), sorted(redirect))


def node_logs(result: EpochResult, num_nodes: int) -> list[list[tuple[int, int, int]]]:
    logs: list[list[tuple[int, int, int]]] = [[] for _ in range(num_nodes)]
    for sn, (r, req, ret) in enumerate(zip(result.requesters, result.requested, result.delivered)):
        logs[int(r)].append((sn, int(req), int(ret)))
    return logs


def check_epoch(result: EpochResult, layout: Layout, cluster: Cluster | None = None) -> None:
    """Inline invariants after a full epoch. Raises ProtocolViolation with reproducer seeds."""
    seeds = cluster.seeds if cluster is not None else {}
    req, dlv = result.requested, result.delivered
    if (dlv < 0).any():
        raise ProtocolViolation("epoch finished with unserved requests", **seeds)
    if len(req) == layout.F and not np.array_equal(np.sort(dlv), np.arange(layout.F)):
        raise ProtocolViolation("delivery log is not a permutation of the dataset", **seeds)
    for arr in (layout.file_vc, layout.file_offset, layout.file_home):
        if not np.array_equal(arr[req], arr[dlv]):
            raise ProtocolViolation("redirection constraint violated", **seeds)
    m = result.metrics
    if m.files_read_from_disk != m.files_filled + m.files_wasted:
        raise ProtocolViolation("files read != filled + wasted", **seeds)
    if m.refill_waste_sum != m.files_wasted:
        raise ProtocolViolation("sum of (K - usefulRefill) != files wasted", **seeds)
    if max(m.per_pc_load_counts, default=0) > layout.config.K:
        raise ProtocolViolation("a chunk was loaded more than K times", **seeds)


# epoch driver ------------------------------------------------------------------

def make_cluster(config: SimConfig, layout: Layout, epoch: int = 0, **kwargs) -> Cluster:
    trace = generate_epoch_trace(layout.config, config.trace_seed(epoch))
    return Cluster(
        layout, trace,
        prefetch=config.prefetch,
        policy=config.refill_policy,
        cost=config.cost,
        sequential_reads=config.batching,
        tie_seed=config.tie_seed(epoch),
        schedule=config.schedule,
        schedule_seed=config.schedule_seed(epoch),
        **kwargs,
    )


def run_epochs(config: SimConfig, layout: Layout | None = None, backend: str | None = None,
               check: bool = True, **cluster_kwargs) -> list[EpochResult]:
    """Run ``config.epochs`` epochs on one cluster, resetting state in between."""
    layout = layout or build_sim_layout(config)
    cluster = make_cluster(config, layout, 0, **cluster_kwargs)
    results = []
    for epoch in range(config.epochs):
        if epoch:
            cluster.schedule_seed = config.schedule_seed(epoch)
            cluster.reset_epoch(generate_epoch_trace(layout.config, config.trace_seed(epoch)),
                                tie_seed=config.tie_seed(epoch))
        cluster.run(backend)
        res = cluster.result()
        if check:
            check_epoch(res, layout, cluster)
        results.append(res)
    return results


def run_epoch(config: SimConfig, layout: Layout | None = None, backend: str | None = None) -> EpochResult:
    return run_epochs(replace(config, epochs=1), layout, backend)[0]


# ablation ----------------------------------------------------------------------

VARIANTS = {
    "full": dict(refill_policy=GREEDY, prefetch=True),
    "random-selection": dict(refill_policy=RANDOM, prefetch=True),
    "no-prefetch": dict(refill_policy=GREEDY, prefetch=False),
    "no-optimization": dict(refill_policy=RANDOM, prefetch=False),
}

TABLE_FIELDS = ("simulated_epoch_time", "memory_misses", "remote_on_demand_requests",
                "files_wasted", "bytes_over_network", "prefetched_files")


@dataclass
class ComparisonTable:
    key: str
    rows: list[tuple[object, MetricsReport]]

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow([self.key, *TABLE_FIELDS])
        for label, m in self.rows:
            w.writerow([label, *(repr(getattr(m, f)) if isinstance(getattr(m, f), float)
                                 else getattr(m, f) for f in TABLE_FIELDS)])
        return out.getvalue()

    def __getitem__(self, label) -> MetricsReport:
        for lab, m in self.rows:
            if lab == label:
                return m
        raise KeyError(label)


def run_ablation(config: SimConfig, backend: str | None = None) -> ComparisonTable:
    """Breakdown variants on identical layout, traces and tie-break streams (first epoch)."""
    layout = build_sim_layout(config)
    rows = []
    for name, feats in VARIANTS.items():
        res = run_epoch(config.with_features(**feats), layout, backend)
        rows.append((name, res.metrics))
    return ComparisonTable("variant", rows)


def chunk_size_sweep(config: SimConfig, chunk_sizes: Sequence[int] = (2, 4, 8, 16, 32, 64, 128, 256),
                     backend: str | None = None) -> ComparisonTable:
    """Vary K while keeping total VC memory (K*M) and file sizes fixed; the PCS size G is held constant."""
    G = config.layout.G
    base_sizes = config.sizes.sample(config.layout.F, config.size_seed())
    rows = []
    for K in chunk_sizes:
        if config.layout.F % (K * G):
            raise ConfigError(f"chunk size {K} does not divide F={config.layout.F} into PCS of {G}")
        lc = config.layout.replace(K=K, M=config.layout.F // (K * G))
        cfg = replace(config, layout=lc, epochs=1)
        layout = build_layout(cfg.effective_layout(), base_sizes)
        rows.append((K, run_epoch(cfg, layout, backend).metrics))
    return ComparisonTable("chunk_size", rows)


def default_config(**overrides) -> SimConfig:
    """K=64, three nodes, ~10^5 files, PCS size 8."""
    overrides.setdefault("layout", LayoutConfig(F=98304, K=64, M=192, N=3, P=8))
    return SimConfig(**overrides)


# config files ------------------------------------------------------------------

CONFIG_SCHEMA = "redox-simconfig v1"


def config_to_dict(config: SimConfig) -> dict:
    return {
        "schema": CONFIG_SCHEMA,
        "layout": config.layout.to_dict(),
        "epochs": config.epochs,
        "cost": config.cost.to_dict(),
        "prefetch": config.prefetch,
        "refill_policy": config.refill_policy,
        "batching": config.batching,
        "sizes": asdict(config.sizes),
        "seed": config.seed,
        "schedule": config.schedule,
    }


def _merge(base: dict, over: dict, where: str = "") -> dict:
    out = dict(base)
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown config key {where}{k!r}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"config key {where}{k!r} must be an object")
            out[k] = _merge(base[k], v, f"{where}{k}.")
        else:
            out[k] = v
    return out


def config_from_dict(data: dict, base: SimConfig | None = None) -> SimConfig:
    """Overlay ``data`` (possibly partial) on ``base`` (default: :func:`default_config`)."""
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    schema = data.get("schema", CONFIG_SCHEMA)
    if schema != CONFIG_SCHEMA:
        raise ConfigError(f"unsupported config schema {schema!r}")
    merged = _merge(config_to_dict(base or default_config()), data)
    try:
        return SimConfig(
            layout=LayoutConfig(**merged["layout"]),
            epochs=int(merged["epochs"]),
            cost=CostModel(**{k: float(v) for k, v in merged["cost"].items()}),
            prefetch=bool(merged["prefetch"]),
            refill_policy=merged["refill_policy"],
            batching=bool(merged["batching"]),
            sizes=SizeDistribution(**merged["sizes"]),
            seed=int(merged["seed"]),
            schedule=merged["schedule"],
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid config value: {exc}") from exc


def load_config(path, base: SimConfig | None = None) -> SimConfig:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_dict(data, base)


def save_config(config: SimConfig, path) -> None:
    Path(path).write_text(json.dumps(config_to_dict(config), indent=2, sort_keys=True) + "\n")


# delivery logs -----------------------------------------------------------------

DELIVERY_MAGIC = "redox-delivery"


def parse_delivery_log(text: str) -> tuple[int, list[tuple[int, int, int]]]:
    """Inverse of :meth:`EpochResult.delivery_log_text`; returns (epoch, entries)."""
    lines = text.splitlines()
    head = lines[0].split() if lines else []
    if len(head) != 4 or head[0] != DELIVERY_MAGIC or head[1] != "v1":
        raise ConfigError(f"bad delivery log header: {lines[0] if lines else ''!r}")
    n, epoch = int(head[2]), int(head[3])
    entries = []
    for ln in lines[1:]:
        if ln.strip():
            parts = ln.split()
            if len(parts) != 3:
                raise ConfigError(f"malformed delivery log line {ln!r}")
            entries.append(tuple(int(x) for x in parts))
    if len(entries) != n:
        raise ConfigError(f"delivery log declares {n} entries but has {len(entries)}")
    return epoch, entries
