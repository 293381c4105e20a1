"""Multi-node protocol state and the request dispatcher.

One :class:`Cluster` holds every node's state in flat arrays so the same
memory can be driven either request-by-request from Python or in bulk by the
compiled loop in ``_core``. All nodes run in one thread; each node's state is
only touched while that node's request (or a request it owns) is processed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import _backend
from .errors import ConfigError, ProtocolViolation
from .layout import EpochTrace, Layout
from .local import FIRST, GREEDY, POLICIES, POLICY_CODES, RANDOM, LocalProtocol
from .metrics import C, N_COUNTERS, MetricsReport
from .remote import RemoteProtocol
from .storage import ChunkStore, CostModel
from .wire import Payload

log = logging.getLogger(__name__)

ROUND_ROBIN, JITTER = "round_robin", "jitter"
SCHEDULES = (ROUND_ROBIN, JITTER)

__all__ = ["Cluster", "EpochResult", "GREEDY", "RANDOM", "FIRST", "ROUND_ROBIN", "JITTER"]


@dataclass
class EpochResult:
    metrics: MetricsReport
    requested: np.ndarray  # requested[sn]
    delivered: np.ndarray  # delivered[sn], -1 where unserved
    requesters: np.ndarray

    def delivery_log_text(self, epoch: int = 0) -> str:
        lines = [f"redox-delivery v1 {len(self.requested)} {epoch}"]
        lines += [f"{sn} {r} {d}" for sn, (r, d) in enumerate(zip(self.requested, self.delivered))]
        return "\n".join(lines) + "\n"


def interleave_order(requesters: np.ndarray, seed: int) -> np.ndarray:
    """Random merge of the per-node request streams; each node keeps its own order."""
    rng = np.random.default_rng(seed)
    picks = rng.permutation(requesters)
    order = np.empty_like(requesters)
    for node in np.unique(requesters):
        order[picks == node] = np.flatnonzero(requesters == node)
    return order


class Cluster(LocalProtocol, RemoteProtocol):

    def __init__(
        self,
        layout: Layout,
        trace: EpochTrace,
        *,
        prefetch: bool = True,
        policy: str = GREEDY,
        cost: CostModel | None = None,
        sequential_reads: bool = True,
        tie_seed: int = 0,
        schedule: str = ROUND_ROBIN,
        schedule_seed: int = 0,
        store: ChunkStore | None = None,
        record: bool = False,
        encode_messages: bool = False,
    ):
        if policy not in POLICIES:
            raise ConfigError(f"refill policy must be one of {POLICIES}, got {policy!r}")
        if schedule not in SCHEDULES:
            raise ConfigError(f"schedule must be one of {SCHEDULES}, got {schedule!r}")
        cfg = layout.config
        self.layout = layout
        self.K, self.N, self.P, self.G = cfg.K, cfg.N, cfg.P, cfg.G
        self.prefetch = bool(prefetch)
        self.policy = policy
        self.policy_code = POLICY_CODES[policy]
        self.cost = cost or CostModel()
        self.sequential_reads = bool(sequential_reads)
        self.schedule = schedule
        self.schedule_seed = schedule_seed
        self.store = store
        self.encode_messages = encode_messages
        self._record = record

        self.file_vc = layout.file_vc
        self.file_offset = layout.file_offset
        self.file_home = layout.file_home
        self.sizes = layout.sizes
        self.pcs = layout.chunk_map.vc_to_pcs
        self.pc_vc = layout.chunk_map.pc_to_vc
        self.vc_home = layout.chunk_map.vc_home
        self.pc_bytes = layout.sizes.reshape(-1, self.K).sum(axis=1)

        self.consumed = np.zeros(cfg.F, dtype=np.uint8)
        self.consumed2d = self.consumed.reshape(-1, self.K)
        self.vc_file = np.full((cfg.M, self.K), -1, dtype=np.int64)
        self.rvc_file = np.full((self.N, cfg.M, self.K), -1, dtype=np.int64)
        self.budget = np.full(self.N, cfg.remote_vc_budget, dtype=np.int64)
        self.win_vc = np.full((self.N, self.N, self.P), -1, dtype=np.int64)
        self.win_o = np.full((self.N, self.N, self.P), -1, dtype=np.int64)
        self.win_map = np.zeros((self.N, self.N, self.P), dtype=np.uint8)
        self.win_last = np.full((self.N, self.N), -1, dtype=np.int64)
        self.fill_hist = np.zeros(self.K + 1, dtype=np.int64)
        self.pc_loads = np.zeros(cfg.num_pcs, dtype=np.int64)
        self.disk_time = np.zeros(self.N, dtype=np.float64)
        self.net_time = np.zeros(self.N, dtype=np.float64)
        self.history: list[EpochResult] = []
        self._load_trace(trace, tie_seed)

    # trace-dependent state ----------------------------------------------------

    def _load_trace(self, trace: EpochTrace, tie_seed: int) -> None:
        T = len(trace)
        if T and (trace.files.min() < 0 or trace.files.max() >= self.layout.F):
            raise ConfigError("trace references a file outside the layout")
        if T and (trace.requesters.min() < 0 or trace.requesters.max() >= self.N):
            raise ConfigError("trace references a node outside the layout")
        self.trace = trace
        self.tie_seed = tie_seed
        self.trace_file = trace.files
        self.trace_req = trace.requesters
        NN = self.N * self.N
        key = self.trace_req * self.N + self.file_home[self.trace_file]
        idx = np.argsort(key, kind="stable").astype(np.int64)
        self.sub_start = np.zeros(NN + 1, dtype=np.int64)
        np.cumsum(np.bincount(key, minlength=NN), out=self.sub_start[1:])
        self.sub_sns = idx
        self.sub_pos = np.empty(T, dtype=np.int64)
        self.sub_pos[idx] = np.arange(T, dtype=np.int64) - self.sub_start[key[idx]]
        if self.schedule == JITTER:
            self.order = interleave_order(self.trace_req, self.schedule_seed)
        else:
            self.order = np.arange(T, dtype=np.int64)
        self.tie_u = np.random.default_rng(tie_seed).random(max(T, 1))
        self.counters = np.zeros(N_COUNTERS, dtype=np.int64)
        self.delivered = np.full(T, -1, dtype=np.int64)
        self.refill_pc = np.full(max(T, 1), -1, dtype=np.int64)
        self.refill_useful = np.full(max(T, 1), -1, dtype=np.int64)
        self.records = [] if self._record else None
        self._vc_data: dict = {}
        self._rvc_data: dict = {}

    @property
    def seeds(self) -> dict:
        return {"layout_seed": self.layout.config.layout_seed,
                "epoch_seed": self.trace.epoch_seed, "tie_seed": self.tie_seed}

    @property
    def done(self) -> bool:
        return self.counters[C.CURSOR] >= len(self.order)

    # request path -------------------------------------------------------------

    def read_file(self, sn: int) -> Payload:
        """Serve trace entry ``sn`` for its requester; the file returned may differ from the one asked for."""
        if self.delivered[sn] >= 0:
            raise ProtocolViolation("trace entry served twice", sn=sn)
        f = self.trace_file[sn]
        R = self.trace_req[sn]
        if self.file_home[f] == R:
            p = self.read_local_file(f, sn)
        else:
            vc = self.file_vc[f]
            o = self.file_offset[f]
            g = self.rvc_file[R, vc, o]
            if g >= 0:
                # prefetched earlier: no message
                self.rvc_file[R, vc, o] = -1
                self.budget[R] += self.sizes[g]
                self.counters[C.REMOTE_HITS] += 1
                p = Payload(int(g), int(self.sizes[g]), self._rvc_data.pop((R, vc, o), None))
            else:
                p = self._remote_read(sn)
        self.delivered[sn] = p.file_id
        self.counters[C.DELIVERED] += 1
        return p

    def step(self) -> tuple[int, Payload]:
        i = self.counters[C.CURSOR]
        if i >= len(self.order):
            raise IndexError("epoch already complete")
        sn = int(self.order[i])
        p = self.read_file(sn)
        self.counters[C.CURSOR] += 1
        return sn, p

    def run(self, backend: str | None = None, stop: int | None = None) -> "Cluster":
        """Process scheduled requests up to ``stop`` (default: the whole epoch)."""
        stop = len(self.order) if stop is None else min(stop, len(self.order))
        impl = _backend.resolve(backend)
        python_only = self.store is not None or self.records is not None or self.encode_messages
        if impl == _backend.COMPILED and not python_only:
            _backend._core.run_trace(self, stop)
        else:
            while self.counters[C.CURSOR] < stop:
                self.step()
        return self

    # reporting ----------------------------------------------------------------

    def metrics(self) -> MetricsReport:
        c = self.counters
        total = self.disk_time + self.net_time
        return MetricsReport(
            memory_misses=int(c[C.MEMORY_MISSES]),
            memory_hits=int(c[C.MEMORY_HITS]),
            remote_on_demand_requests=int(c[C.REMOTE_REQUESTS]),
            remote_hits=int(c[C.REMOTE_HITS]),
            files_read_from_disk=int(c[C.FILES_READ]),
            files_filled=int(c[C.FILES_FILLED]),
            files_wasted=int(c[C.FILES_WASTED]),
            refill_waste_sum=int(c[C.REFILL_WASTE]),
            bytes_read_from_disk=int(c[C.BYTES_READ]),
            bytes_wasted=int(c[C.BYTES_WASTED]),
            bytes_over_network=int(c[C.NET_BYTES]),
            messages=int(c[C.MESSAGES]),
            prefetched_files=int(c[C.PREFETCHED]),
            prefetched_bytes=int(c[C.PREFETCH_BYTES]),
            conflict_skips=int(c[C.CONFLICT_SKIPS]),
            budget_skips=int(c[C.BUDGET_SKIPS]),
            delivered_files=int(c[C.DELIVERED]),
            fill_rate_histogram=[int(x) for x in self.fill_hist],
            per_node_disk_time=[float(x) for x in self.disk_time],
            per_node_network_time=[float(x) for x in self.net_time],
            simulated_epoch_time=float(total.max()) if len(total) else 0.0,
            per_pc_load_counts=[int(x) for x in self.pc_loads],
        )

    def result(self) -> EpochResult:
        return EpochResult(self.metrics(), self.trace_file.copy(), self.delivered.copy(),
                           self.trace_req.copy())

    def reset_epoch(self, trace: EpochTrace | None = None, tie_seed: int | None = None) -> EpochResult:
        """Archive this epoch and clear all per-epoch state. Partial epochs are allowed but logged."""
        res = self.result()
        self.history.append(res)
        undelivered = int((self.delivered < 0).sum())
        if undelivered:
            log.warning("epoch reset with %d undelivered requests and %d unconsumed files",
                        undelivered, int((self.consumed == 0).sum()))
        self.consumed[:] = 0
        self.vc_file[:] = -1
        self.rvc_file[:] = -1
        self.budget[:] = self.layout.config.remote_vc_budget
        self.win_vc[:] = -1
        self.win_o[:] = -1
        self.win_map[:] = 0
        self.win_last[:] = -1
        self.fill_hist[:] = 0
        self.pc_loads[:] = 0
        self.disk_time[:] = 0.0
        self.net_time[:] = 0.0
        self._load_trace(trace if trace is not None else self.trace,
                         self.tie_seed if tie_seed is None else tie_seed)
        return res
