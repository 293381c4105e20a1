"""Counter slots shared by the Python engine and the compiled core, and the per-epoch report."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from enum import IntEnum


class C(IntEnum):
    """Index into ``Cluster.counters``. The compiled core hard-codes the same numbers."""

    MEMORY_MISSES = 0
    MEMORY_HITS = 1
    REMOTE_REQUESTS = 2
    REMOTE_HITS = 3
    FILES_READ = 4
    FILES_FILLED = 5
    FILES_WASTED = 6
    REFILL_WASTE = 7
    BYTES_READ = 8
    BYTES_WASTED = 9
    NET_BYTES = 10
    MESSAGES = 11
    PREFETCHED = 12
    PREFETCH_BYTES = 13
    CONFLICT_SKIPS = 14
    BUDGET_SKIPS = 15
    DELIVERED = 16
    CURSOR = 17


N_COUNTERS = len(C)


@dataclass
class MetricsReport:
    memory_misses: int
    memory_hits: int
    remote_on_demand_requests: int
    remote_hits: int
    files_read_from_disk: int
    files_filled: int
    files_wasted: int
    refill_waste_sum: int
    bytes_read_from_disk: int
    bytes_wasted: int
    bytes_over_network: int
    messages: int
    prefetched_files: int
    prefetched_bytes: int
    conflict_skips: int
    budget_skips: int
    delivered_files: int
    fill_rate_histogram: list[int]
    per_node_disk_time: list[float]
    per_node_network_time: list[float]
    simulated_epoch_time: float
    per_pc_load_counts: list[int] = field(repr=False)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(**d)
