"""Cross-node reads: single-file on-demand service and opportunistic, conflict-free prefetch.

Window model. For an (owner H, requester R) pair the window covers R's next
``P`` requests whose home is H, indexed by position in that filtered
subsequence. Entry ``j`` records the ``(vc, offset)`` pair of a request whose
payload has already been sent (on-demand at ``j == 0`` or prefetched), or
``-1`` when nothing was sent for it. When the next on-demand request arrives
``SL`` positions later, the record shifts left by ``SL`` so that payloads still
sitting in R's slots keep blocking conflicting candidates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ProtocolViolation, RemoteError, StorageError
from .metrics import C
from .wire import ErrorResponse, Payload, RemoteResponse

# error codes carried by ErrorResponse
E_STORAGE = 1


@dataclass(frozen=True)
class PrefetchWindowState:
    map: tuple[bool, ...]
    p_vc: tuple[int | None, ...]
    p_o: tuple[int | None, ...]
    last_sn: int = -1

    @classmethod
    def empty(cls, P: int) -> "PrefetchWindowState":
        return cls((False,) * P, (None,) * P, (None,) * P, -1)

    @property
    def P(self) -> int:
        return len(self.map)

    def pairs(self) -> list[tuple[int, int] | None]:
        return [None if v is None else (v, o) for v, o in zip(self.p_vc, self.p_o)]


def slide_window(state: PrefetchWindowState, SL: int) -> PrefetchWindowState:
    """Shift recorded pairs left by ``SL`` and clear the map."""
    if SL < 1:
        raise ValueError(f"window slide must be >= 1, got {SL}")
    P = state.P
    keep = max(P - SL, 0)
    p_vc = state.p_vc[SL:SL + keep] + (None,) * (P - keep)
    p_o = state.p_o[SL:SL + keep] + (None,) * (P - keep)
    return PrefetchWindowState((False,) * P, p_vc, p_o, state.last_sn)


def _slide_rows(vc_row: np.ndarray, o_row: np.ndarray, SL: int) -> None:
    P = vc_row.shape[0]
    if SL < P:
        vc_row[:P - SL] = vc_row[SL:]
        o_row[:P - SL] = o_row[SL:]
        vc_row[P - SL:] = -1
        o_row[P - SL:] = -1
    else:
        vc_row[:] = -1
        o_row[:] = -1


class RemoteProtocol:

    def window_state(self, owner: int, requester: int) -> PrefetchWindowState:
        vcs = self.win_vc[owner, requester]
        os_ = self.win_o[owner, requester]
        return PrefetchWindowState(
            tuple(bool(b) for b in self.win_map[owner, requester]),
            tuple(int(v) if v >= 0 else None for v in vcs),
            tuple(int(o) if o >= 0 else None for o in os_),
            int(self.win_last[owner, requester]))

    def declare_budget(self, requester: int) -> int:
        """Remaining remote-VC bytes at ``requester``; piggybacked on every on-demand request."""
        return int(self.budget[requester])

    def read_remote_file(self, sn: int) -> RemoteResponse | ErrorResponse:
        """Owner side, prefetch disabled: serve exactly the requested slot."""
        f = self.trace_file[sn]
        try:
            p = self.read_local_file(f, sn)
        except StorageError as exc:
            return ErrorResponse(E_STORAGE, str(exc))
        return RemoteResponse((True,), (p,))

    def read_and_prefetch_remote(self, sn: int, declared_budget: int) -> RemoteResponse | ErrorResponse:
        """Owner side with prefetch: serve the on-demand slot, then piggyback resident files.

        A candidate is sent only if (1) nothing was sent for it in an earlier
        window, (2) its (vc, offset) pair matches no recorded pair in the
        window, (3) the owner slot is valid (never triggers a disk read) and
        (4) the declared budget admits it.
        """
        f = self.trace_file[sn]
        R = self.trace_req[sn]
        H = self.file_home[f]
        P = self.P
        if R == H:
            raise ProtocolViolation("remote read issued for a local file", sn=sn)
        key = R * self.N + H
        start = self.sub_start[key]
        end = self.sub_start[key + 1]
        pos = self.sub_pos[sn]
        vc_row = self.win_vc[H, R]
        o_row = self.win_o[H, R]
        map_row = self.win_map[H, R]
        SL = pos - self.win_last[H, R]
        if SL < 1:
            raise ProtocolViolation("on-demand requests out of order", sn=sn, slide=int(SL))
        if SL < P and vc_row[SL] >= 0:
            raise ProtocolViolation("on-demand request was already prefetched", sn=sn)
        _slide_rows(vc_row, o_row, SL)
        map_row[:] = 0
        self.win_last[H, R] = pos

        vc0 = self.file_vc[f]
        o0 = self.file_offset[f]
        if ((vc_row == vc0) & (o_row == o0)).any():
            raise ProtocolViolation("on-demand slot conflicts with a surviving window entry", sn=sn)
        try:
            first = self.read_local_file(f, sn)
        except StorageError as exc:
            return ErrorResponse(E_STORAGE, str(exc))
        vc_row[0] = vc0
        o_row[0] = o0
        map_row[0] = 1
        payloads = [first]
        remaining = declared_budget
        blocked = []  # slots refused for budget; later candidates on them must wait
        for j in range(1, min(P, end - start - pos)):
            if vc_row[j] >= 0:
                continue
            cf = self.trace_file[self.sub_sns[start + pos + j]]
            cvc = self.file_vc[cf]
            co = self.file_offset[cf]
            if ((vc_row == cvc) & (o_row == co)).any() or (cvc, co) in blocked:
                self.counters[C.CONFLICT_SKIPS] += 1
                continue
            g = self.vc_file[cvc, co]
            if g < 0:
                continue
            size = self.sizes[g]
            if size > remaining:
                self.counters[C.BUDGET_SKIPS] += 1
                blocked.append((cvc, co))
                continue
            p = self.read_local_file(cf, sn)
            remaining -= size
            vc_row[j] = cvc
            o_row[j] = co
            map_row[j] = 1
            payloads.append(p)
            self.counters[C.PREFETCHED] += 1
            self.counters[C.PREFETCH_BYTES] += size
        return RemoteResponse(tuple(bool(b) for b in map_row), tuple(payloads))

    def fill_in_data(self, sn: int, resp: RemoteResponse) -> Payload:
        """Requester side: return the on-demand payload, insert prefetched ones into empty slots."""
        if not resp.map or not resp.map[0]:
            raise ProtocolViolation("response lacks the on-demand payload", sn=sn)
        f = self.trace_file[sn]
        R = self.trace_req[sn]
        H = self.file_home[f]
        key = R * self.N + H
        base = self.sub_start[key] + self.sub_pos[sn]
        it = iter(resp.payloads)
        first = next(it)
        for j in range(1, resp.P):
            if not resp.map[j]:
                continue
            p = next(it)
            cf = self.trace_file[self.sub_sns[base + j]]
            vc = self.file_vc[cf]
            o = self.file_offset[cf]
            if self.file_vc[p.file_id] != vc or self.file_offset[p.file_id] != o:
                raise ProtocolViolation("prefetched file does not match its window slot",
                                        sn=sn, file=p.file_id)
            if self.rvc_file[R, vc, o] >= 0:
                raise ProtocolViolation("prefetch target slot is occupied", sn=sn, requester=int(R),
                                        vc=int(vc), offset=int(o), **self.seeds)
            self.rvc_file[R, vc, o] = p.file_id
            self.budget[R] -= p.size
            if p.data is not None:
                self._rvc_data[(R, vc, o)] = p.data
        return first

    def _remote_read(self, sn: int) -> Payload:
        """Requester side of a miss in its remote virtual chunk."""
        from .wire import REQUEST_SIZE, decode_message, encode_response

        f = self.trace_file[sn]
        R = self.trace_req[sn]
        vc = self.file_vc[f]
        o = self.file_offset[f]
        self.counters[C.REMOTE_REQUESTS] += 1
        if self.prefetch:
            resp = self.read_and_prefetch_remote(sn, self.declare_budget(R))
        else:
            resp = self.read_remote_file(sn)
        if self.encode_messages and isinstance(resp, RemoteResponse):
            resp = decode_message(encode_response(resp))
        if isinstance(resp, ErrorResponse):
            raise RemoteError(resp.code, resp.message)
        nbytes = resp.nbytes
        self.counters[C.NET_BYTES] += REQUEST_SIZE + nbytes
        self.counters[C.MESSAGES] += 2
        self.net_time[R] += self.cost.estimate_transfer(REQUEST_SIZE)
        self.net_time[R] += self.cost.estimate_transfer(nbytes)
        if self.prefetch:
            payload = self.fill_in_data(sn, resp)
        else:
            payload = resp.payloads[0]
        if self.rvc_file[R, vc, o] >= 0:
            raise ProtocolViolation("on-demand slot filled by its own response", sn=sn)
        return payload
