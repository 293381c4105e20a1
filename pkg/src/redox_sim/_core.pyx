# cython: language_level=3
"""Compiled epoch loop. Mirrors ``Cluster.read_file`` and everything it calls.

Operates in place on the arrays of a ``redox_sim.engine.Cluster``; after
``run_trace`` returns, the cluster is in exactly the state the Python engine
would have produced, down to the float accumulation order of the cost model.
"""

from libc.stdint cimport int64_t, uint8_t

from redox_sim.errors import ProtocolViolation

# must match redox_sim.metrics.C
cdef enum:
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

cdef enum:
    GREEDY = 0
    RANDOM = 1
    FIRST = 2

cdef enum:
    REQUEST_SIZE = 29
    RESP_HEAD = 7
    PAYLOAD_HEAD = 16


cdef class _Kernel:
    cdef const int64_t[::1] trace_file
    cdef const int64_t[::1] trace_req
    cdef const int64_t[::1] file_vc
    cdef const int64_t[::1] file_offset
    cdef const int64_t[::1] file_home
    cdef const int64_t[::1] sizes
    cdef const int64_t[::1] pc_vc
    cdef const int64_t[::1] vc_home
    cdef const int64_t[::1] pc_bytes
    cdef const int64_t[::1] sub_start
    cdef const int64_t[::1] sub_sns
    cdef const int64_t[::1] sub_pos
    cdef const int64_t[::1] order
    cdef const int64_t[:, ::1] pcs
    cdef const double[::1] tie_u
    cdef uint8_t[::1] consumed
    cdef int64_t[:, ::1] vc_file
    cdef int64_t[:, :, ::1] rvc_file
    cdef int64_t[:, :, ::1] win_vc
    cdef int64_t[:, :, ::1] win_o
    cdef uint8_t[:, :, ::1] win_map
    cdef int64_t[:, ::1] win_last
    cdef int64_t[::1] budget
    cdef int64_t[::1] counters
    cdef int64_t[::1] fill_hist
    cdef int64_t[::1] pc_loads
    cdef int64_t[::1] delivered
    cdef int64_t[::1] refill_pc
    cdef int64_t[::1] refill_useful
    cdef double[::1] disk_time
    cdef double[::1] net_time
    cdef int64_t[::1] score
    cdef int64_t[::1] cand
    cdef int64_t[::1] resp_at
    cdef int64_t[::1] blocked_vc
    cdef int64_t[::1] blocked_o
    cdef int64_t K, N, P, G, policy, map_bytes
    cdef bint prefetch, sequential
    cdef double lat, seq_bw, rand_bw, net_bw, net_lat

    def __init__(self, cl):
        import numpy as np
        self.trace_file = cl.trace_file
        self.trace_req = cl.trace_req
        self.file_vc = cl.file_vc
        self.file_offset = cl.file_offset
        self.file_home = cl.file_home
        self.sizes = cl.sizes
        self.pc_vc = cl.pc_vc
        self.vc_home = cl.vc_home
        self.pc_bytes = cl.pc_bytes
        self.sub_start = cl.sub_start
        self.sub_sns = cl.sub_sns
        self.sub_pos = cl.sub_pos
        self.order = cl.order
        self.pcs = cl.pcs
        self.tie_u = cl.tie_u
        self.consumed = cl.consumed
        self.vc_file = cl.vc_file
        self.rvc_file = cl.rvc_file
        self.win_vc = cl.win_vc
        self.win_o = cl.win_o
        self.win_map = cl.win_map
        self.win_last = cl.win_last
        self.budget = cl.budget
        self.counters = cl.counters
        self.fill_hist = cl.fill_hist
        self.pc_loads = cl.pc_loads
        self.delivered = cl.delivered
        self.refill_pc = cl.refill_pc
        self.refill_useful = cl.refill_useful
        self.disk_time = cl.disk_time
        self.net_time = cl.net_time
        self.K = cl.K
        self.N = cl.N
        self.P = cl.P
        self.G = cl.G
        self.policy = cl.policy_code
        self.prefetch = cl.prefetch
        self.sequential = cl.sequential_reads
        self.map_bytes = (self.P + 7) // 8
        cost = cl.cost
        self.lat = cost.per_io_latency
        self.seq_bw = cost.seq_bandwidth
        self.rand_bw = cost.rand_read_effective_bandwidth
        self.net_bw = cost.net_bandwidth
        self.net_lat = cost.net_latency
        self.score = np.zeros(self.G, dtype=np.int64)
        self.cand = np.zeros(self.G, dtype=np.int64)
        self.resp_at = np.zeros(self.P, dtype=np.int64)
        self.blocked_vc = np.zeros(self.P, dtype=np.int64)
        self.blocked_o = np.zeros(self.P, dtype=np.int64)

    cdef int64_t find_replace_pc(self, int64_t f, int64_t sn) except -1:
        cdef int64_t vc = self.file_vc[f]
        cdef int64_t o = self.file_offset[f]
        cdef int64_t K = self.K
        cdef int64_t p, i, base, s, best = -1, n = 0, pick, pc
        for p in range(self.G):
            base = self.pcs[vc, p] * K
            if self.consumed[base + o]:
                self.score[p] = -1
                continue
            s = 0
            for i in range(K):
                if self.vc_file[vc, i] < 0 and not self.consumed[base + i]:
                    s += 1
            self.score[p] = s
            if s > best:
                best = s
        if best < 0:
            raise ProtocolViolation("no physical chunk can refill slot", vc=vc, offset=o, sn=sn)
        for p in range(self.G):
            if self.policy == RANDOM:
                if self.score[p] >= 0:
                    self.cand[n] = p
                    n += 1
            elif self.score[p] == best:
                self.cand[n] = p
                n += 1
        cdef int64_t miss = self.counters[MEMORY_MISSES]
        if self.policy == FIRST:
            pick = self.cand[0]
        else:
            pick = self.cand[<int64_t>(self.tie_u[miss] * n)]
        pc = self.pcs[vc, pick]
        s = self.score[pick]
        self.counters[MEMORY_MISSES] += 1
        self.counters[REFILL_WASTE] += K - s
        self.refill_pc[miss] = pc
        self.refill_useful[miss] = s
        return pc

    cdef int refill(self, int64_t vc, int64_t pc) except -1:
        cdef int64_t K = self.K
        cdef int64_t home = self.vc_home[vc]
        cdef int64_t base = pc * K
        cdef int64_t nbytes = self.pc_bytes[pc]
        cdef int64_t i, f, filled = 0
        if self.pc_vc[pc] != vc:
            raise ProtocolViolation("refill chunk maps to a different virtual chunk", pc=pc, vc=vc)
        if self.sequential:
            self.disk_time[home] += self.lat + (<double>nbytes) / self.seq_bw
        else:
            self.disk_time[home] += self.lat + (<double>nbytes) / self.rand_bw
        self.counters[FILES_READ] += K
        self.counters[BYTES_READ] += nbytes
        self.pc_loads[pc] += 1
        for i in range(K):
            f = base + i
            if not self.consumed[f] and self.vc_file[vc, i] < 0:
                self.vc_file[vc, i] = f
                self.consumed[f] = 1
                filled += 1
            else:
                self.counters[FILES_WASTED] += 1
                self.counters[BYTES_WASTED] += self.sizes[f]
        self.counters[FILES_FILLED] += filled
        self.fill_hist[filled] += 1
        return 0

    cdef int64_t read_local(self, int64_t f, int64_t sn) except -1:
        cdef int64_t vc = self.file_vc[f]
        cdef int64_t o = self.file_offset[f]
        cdef int64_t g = self.vc_file[vc, o]
        cdef int64_t pc
        if g >= 0:
            self.counters[MEMORY_HITS] += 1
        else:
            pc = self.find_replace_pc(f, sn)
            self.refill(vc, pc)
            g = self.vc_file[vc, o]
            if g < 0:
                raise ProtocolViolation("refill left the requested slot empty", vc=vc, offset=o)
        self.vc_file[vc, o] = -1
        return g

    cdef int64_t read_and_prefetch(self, int64_t sn, int64_t declared) except -1:
        """Owner side with prefetch; fills resp_at and returns the encoded response size."""
        cdef int64_t f = self.trace_file[sn]
        cdef int64_t R = self.trace_req[sn]
        cdef int64_t H = self.file_home[f]
        cdef int64_t P = self.P
        cdef int64_t key = R * self.N + H
        cdef int64_t start = self.sub_start[key]
        cdef int64_t end = self.sub_start[key + 1]
        cdef int64_t pos = self.sub_pos[sn]
        cdef int64_t SL = pos - self.win_last[H, R]
        cdef int64_t j, k, lim, cf, cvc, co, g, size, remaining, nblocked = 0, first, nbytes
        cdef bint conflict
        if SL < 1:
            raise ProtocolViolation("on-demand requests out of order", sn=sn, slide=SL)
        if SL < P and self.win_vc[H, R, SL] >= 0:
            raise ProtocolViolation("on-demand request was already prefetched", sn=sn)
        for j in range(P):
            if j + SL < P:
                self.win_vc[H, R, j] = self.win_vc[H, R, j + SL]
                self.win_o[H, R, j] = self.win_o[H, R, j + SL]
            else:
                self.win_vc[H, R, j] = -1
                self.win_o[H, R, j] = -1
            self.win_map[H, R, j] = 0
        self.win_last[H, R] = pos

        cvc = self.file_vc[f]
        co = self.file_offset[f]
        for k in range(P):
            if self.win_vc[H, R, k] == cvc and self.win_o[H, R, k] == co:
                raise ProtocolViolation("on-demand slot conflicts with a surviving window entry", sn=sn)
        first = self.read_local(f, sn)
        self.win_vc[H, R, 0] = cvc
        self.win_o[H, R, 0] = co
        self.win_map[H, R, 0] = 1
        self.resp_at[0] = first
        nbytes = RESP_HEAD + self.map_bytes + PAYLOAD_HEAD + self.sizes[first]
        remaining = declared
        lim = end - start - pos
        if lim > P:
            lim = P
        for j in range(1, lim):
            if self.win_vc[H, R, j] >= 0:
                continue
            cf = self.trace_file[self.sub_sns[start + pos + j]]
            cvc = self.file_vc[cf]
            co = self.file_offset[cf]
            conflict = False
            for k in range(P):
                if self.win_vc[H, R, k] == cvc and self.win_o[H, R, k] == co:
                    conflict = True
                    break
            if not conflict:
                for k in range(nblocked):
                    if self.blocked_vc[k] == cvc and self.blocked_o[k] == co:
                        conflict = True
                        break
            if conflict:
                self.counters[CONFLICT_SKIPS] += 1
                continue
            g = self.vc_file[cvc, co]
            if g < 0:
                continue
            size = self.sizes[g]
            if size > remaining:
                self.counters[BUDGET_SKIPS] += 1
                self.blocked_vc[nblocked] = cvc
                self.blocked_o[nblocked] = co
                nblocked += 1
                continue
            g = self.read_local(cf, sn)
            remaining -= size
            self.win_vc[H, R, j] = cvc
            self.win_o[H, R, j] = co
            self.win_map[H, R, j] = 1
            self.resp_at[j] = g
            self.counters[PREFETCHED] += 1
            self.counters[PREFETCH_BYTES] += size
            nbytes += PAYLOAD_HEAD + size
        return nbytes

    cdef int64_t fill_in(self, int64_t sn) except -1:
        cdef int64_t f = self.trace_file[sn]
        cdef int64_t R = self.trace_req[sn]
        cdef int64_t H = self.file_home[f]
        cdef int64_t base = self.sub_start[R * self.N + H] + self.sub_pos[sn]
        cdef int64_t j, cf, vc, o, g
        for j in range(1, self.P):
            if not self.win_map[H, R, j]:
                continue
            g = self.resp_at[j]
            cf = self.trace_file[self.sub_sns[base + j]]
            vc = self.file_vc[cf]
            o = self.file_offset[cf]
            if self.file_vc[g] != vc or self.file_offset[g] != o:
                raise ProtocolViolation("prefetched file does not match its window slot", sn=sn, file=g)
            if self.rvc_file[R, vc, o] >= 0:
                raise ProtocolViolation("prefetch target slot is occupied", sn=sn, requester=R,
                                        vc=vc, offset=o)
            self.rvc_file[R, vc, o] = g
            self.budget[R] -= self.sizes[g]
        return self.resp_at[0]

    cdef int64_t read_file(self, int64_t sn) except -1:
        cdef int64_t f = self.trace_file[sn]
        cdef int64_t R = self.trace_req[sn]
        cdef int64_t vc, o, g, nbytes
        if self.delivered[sn] >= 0:
            raise ProtocolViolation("trace entry served twice", sn=sn)
        if self.file_home[f] == R:
            g = self.read_local(f, sn)
        else:
            vc = self.file_vc[f]
            o = self.file_offset[f]
            g = self.rvc_file[R, vc, o]
            if g >= 0:
                self.rvc_file[R, vc, o] = -1
                self.budget[R] += self.sizes[g]
                self.counters[REMOTE_HITS] += 1
            else:
                self.counters[REMOTE_REQUESTS] += 1
                if self.prefetch:
                    nbytes = self.read_and_prefetch(sn, self.budget[R])
                else:
                    g = self.read_local(f, sn)
                    nbytes = RESP_HEAD + 1 + PAYLOAD_HEAD + self.sizes[g]
                self.counters[NET_BYTES] += REQUEST_SIZE + nbytes
                self.counters[MESSAGES] += 2
                self.net_time[R] += self.net_lat + (<double>REQUEST_SIZE) / self.net_bw
                self.net_time[R] += self.net_lat + (<double>nbytes) / self.net_bw
                if self.prefetch:
                    g = self.fill_in(sn)
                if self.rvc_file[R, vc, o] >= 0:
                    raise ProtocolViolation("on-demand slot filled by its own response", sn=sn)
        self.delivered[sn] = g
        self.counters[DELIVERED] += 1
        return g


def run_trace(cl, Py_ssize_t stop):
    """Process ``cl.order[cursor:stop]`` in place."""
    cdef _Kernel k = _Kernel(cl)
    cdef Py_ssize_t i
    for i in range(k.counters[CURSOR], stop):
        k.read_file(k.order[i])
        k.counters[CURSOR] += 1
