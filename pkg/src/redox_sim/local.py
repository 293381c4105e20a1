"""Owner-side read path: redirected slot hits, refill-chunk selection, batched fill.

The mixin operates on arrays owned by :class:`redox_sim.engine.Cluster`:

``vc_file[vc, i]``
    resident file id of slot ``i`` of virtual chunk ``vc``, or -1 when the slot
    is invalid. Validity, payload presence and residency are one array, so
    they cannot disagree.
``consumed[f]``
    set once file ``f`` has been filled into a virtual chunk this epoch.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ProtocolViolation
from .metrics import C
from .wire import Payload

log = logging.getLogger(__name__)

GREEDY, RANDOM, FIRST = "greedy", "random", "first"
POLICIES = (GREEDY, RANDOM, FIRST)
POLICY_CODES = {GREEDY: 0, RANDOM: 1, FIRST: 2}


@dataclass(frozen=True)
class VirtualChunkState:
    vc_id: int
    valid: tuple[bool, ...]
    payload: tuple[Payload | None, ...]
    resident_file: tuple[int | None, ...]


@dataclass(frozen=True)
class ConsumedLedger:
    """Snapshot of per-chunk consumed bitmaps plus the delivery log so far."""

    bitmaps: np.ndarray  # (F/K, K) bool
    delivery_log: list[tuple[int, int]]  # (sn, returned file)

    def chunk(self, pc: int) -> tuple[bool, ...]:
        return tuple(bool(b) for b in self.bitmaps[pc])


@dataclass(frozen=True)
class RefillRecord:
    sn: int
    vc: int
    pc: int
    useful: int
    best_alternative: int  # highest usefulRefill among the other feasible chunks, -1 if none


def score_candidates(consumed_rows: np.ndarray, empty_slots: np.ndarray, offset: int) -> np.ndarray:
    """usefulRefill per chunk of a PCS; -1 for chunks whose ``offset`` file is consumed.

    ``consumed_rows`` is (G, K) bool, ``empty_slots`` is (K,) bool.
    """
    score = (~consumed_rows & empty_slots).sum(axis=1)
    score[consumed_rows[:, offset]] = -1
    return score


class LocalProtocol:

    def vc_state(self, vc: int) -> VirtualChunkState:
        row = self.vc_file[vc]
        payloads = []
        for i, f in enumerate(row):
            if f < 0:
                payloads.append(None)
            else:
                payloads.append(Payload(int(f), int(self.sizes[f]), self._vc_data.get((vc, i))))
        return VirtualChunkState(
            vc, tuple(bool(f >= 0) for f in row), tuple(payloads),
            tuple(int(f) if f >= 0 else None for f in row))

    def ledger(self) -> ConsumedLedger:
        K = self.layout.config.K
        order = self.order[: self.counters[C.CURSOR]]
        return ConsumedLedger(self.consumed.reshape(-1, K).astype(bool),
                              [(int(sn), int(self.delivered[sn])) for sn in order])

    def read_local_file(self, file_id: int, sn: int = -1) -> Payload:
        """Serve a request at the file's home. Returns the payload of the file actually delivered."""
        vc = self.file_vc[file_id]
        o = self.file_offset[file_id]
        g = self.vc_file[vc, o]
        if g >= 0:
            self.counters[C.MEMORY_HITS] += 1
        else:
            pc = self.find_replace_pc(file_id, sn)
            self._refill(vc, pc)
            g = self.vc_file[vc, o]
            if g < 0:
                raise ProtocolViolation("refill left the requested slot empty", vc=int(vc), offset=int(o))
        self.vc_file[vc, o] = -1
        return Payload(int(g), int(self.sizes[g]), self._vc_data.pop((vc, o), None))

    def find_replace_pc(self, file_id: int, sn: int = -1) -> int:
        vc = self.file_vc[file_id]
        o = self.file_offset[file_id]
        if self.vc_file[vc, o] >= 0:
            raise ProtocolViolation("refill requested for a valid slot", vc=int(vc), offset=int(o))
        pcs = self.pcs[vc]
        rows = self.consumed2d[pcs].astype(bool)
        empty = self.vc_file[vc] < 0
        score = score_candidates(rows, empty, o)
        feasible = np.flatnonzero(score >= 0)
        if feasible.size == 0:
            raise ProtocolViolation("no physical chunk can refill slot", vc=int(vc), offset=int(o),
                                    sn=sn, **self.seeds)
        miss = self.counters[C.MEMORY_MISSES]
        if self.policy == RANDOM:
            cands = feasible
        else:
            cands = np.flatnonzero(score == score.max())
        if self.policy == FIRST:
            pick = cands[0]
        else:
            pick = cands[int(self.tie_u[miss] * cands.size)]
        pc = int(pcs[pick])
        useful = int(score[pick])
        self.counters[C.MEMORY_MISSES] += 1
        self.counters[C.REFILL_WASTE] += self.K - useful
        self.refill_pc[miss] = pc
        self.refill_useful[miss] = useful
        if self.records is not None:
            others = np.delete(score, pick)
            self.records.append(RefillRecord(sn, int(vc), pc, useful,
                                             int(others.max()) if others.size else -1))
        return pc

    def _refill(self, vc: int, pc: int) -> None:
        K = self.K
        if self.pc_vc[pc] != vc:
            raise ProtocolViolation("refill chunk maps to a different virtual chunk", pc=pc, vc=int(vc))
        home = self.vc_home[vc]
        base = pc * K
        nbytes = int(self.pc_bytes[pc])
        data = self.store.read_chunk(pc)[0] if self.store is not None else None
        self.disk_time[home] += self._read_cost(nbytes)
        self.counters[C.FILES_READ] += K
        self.counters[C.BYTES_READ] += nbytes
        self.pc_loads[pc] += 1
        filled = 0
        row = self.vc_file[vc]
        for i in range(K):
            f = base + i
            if not self.consumed[f] and row[i] < 0:
                row[i] = f
                self.consumed[f] = 1
                filled += 1
                if data is not None:
                    self._vc_data[(vc, i)] = data[i]
            else:
                self.counters[C.FILES_WASTED] += 1
                self.counters[C.BYTES_WASTED] += self.sizes[f]
        self.counters[C.FILES_FILLED] += filled
        self.fill_hist[filled] += 1

    def _read_cost(self, nbytes: int) -> float:
        if self.sequential_reads:
            return self.cost.chunk_read(nbytes)
        return self.cost.random_read(nbytes)
