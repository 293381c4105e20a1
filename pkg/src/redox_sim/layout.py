"""Static file -> physical chunk -> virtual chunk -> node placement, and epoch traces.

Files are stored consecutively: physical chunk ``pc`` holds files
``pc*K .. pc*K + K - 1``. Node ``n`` is home to the contiguous file range
``[n*F/N, (n+1)*F/N)``. Inside a node, consecutive runs of ``G = F/(K*M)``
local physical chunks share one local virtual chunk.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError

LAYOUT_MAGIC = "redox-layout"
TRACE_MAGIC = "redox-trace"
FORMAT_VERSION = "v1"

# 10% of a 16 GB node, the tuned remote-VC allotment.
DEFAULT_REMOTE_VC_BUDGET = 1_500_000_000


@dataclass(frozen=True)
class LayoutConfig:
    F: int
    K: int
    M: int
    N: int = 1
    P: int = 8
    layout_seed: int = 0
    remote_vc_budget: int = DEFAULT_REMOTE_VC_BUDGET

    def __post_init__(self):
        self.validate()

    @property
    def G(self) -> int:
        """Physical chunks per virtual chunk (the PCS size)."""
        return self.F // (self.K * self.M)

    @property
    def num_pcs(self) -> int:
        return self.F // self.K

    def validate(self) -> None:
        for name in ("F", "K", "M", "N", "P"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.remote_vc_budget < 0:
            raise ConfigError("remote_vc_budget must be >= 0")
        if self.M % self.N:
            raise ConfigError(f"M mod N == 0 violated: M={self.M}, N={self.N}")
        if self.F % (self.K * self.M):
            raise ConfigError(
                f"F mod (K*M) == 0 violated: F={self.F}, K={self.K}, M={self.M}"
            )
        if self.F % self.N:
            raise ConfigError(f"F mod N == 0 violated: F={self.F}, N={self.N}")

    def replace(self, **changes) -> "LayoutConfig":
        fields = {
            "F": self.F, "K": self.K, "M": self.M, "N": self.N, "P": self.P,
            "layout_seed": self.layout_seed, "remote_vc_budget": self.remote_vc_budget,
        }
        fields.update(changes)
        return LayoutConfig(**fields)

    def to_dict(self) -> dict:
        return {
            "F": int(self.F), "K": int(self.K), "M": int(self.M), "N": int(self.N),
            "P": int(self.P), "layout_seed": int(self.layout_seed),
            "remote_vc_budget": int(self.remote_vc_budget),
        }


@dataclass(frozen=True)
class FileMeta:
    file_id: int
    pc: int
    vc: int
    offset: int
    home: int
    size: int
    sn: int = -1
    requester: int = -1
    consumed: bool = False


@dataclass(frozen=True, eq=False)
class ChunkMap:
    pc_to_vc: np.ndarray
    vc_to_pcs: np.ndarray  # shape (M, G), ordered
    vc_home: np.ndarray

    def pcs(self, vc: int) -> list[int]:
        return [int(p) for p in self.vc_to_pcs[vc]]


class Layout:
    """Immutable placement of every file. Arrays are read-only views."""

    def __init__(self, config: LayoutConfig, sizes: np.ndarray, chunk_map: ChunkMap):
        self.config = config
        self.sizes = sizes
        self.chunk_map = chunk_map
        K = config.K
        files_per_node = config.F // config.N
        fids = np.arange(config.F, dtype=np.int64)
        self.file_pc = fids // K
        self.file_offset = fids % K
        self.file_vc = chunk_map.pc_to_vc[self.file_pc]
        self.file_home = fids // files_per_node
        self.pc_home = chunk_map.vc_home[chunk_map.pc_to_vc]
        for arr in (self.sizes, self.file_pc, self.file_offset, self.file_vc,
                    self.file_home, self.pc_home, chunk_map.pc_to_vc,
                    chunk_map.vc_to_pcs, chunk_map.vc_home):
            arr.setflags(write=False)

    def __eq__(self, other):
        if not isinstance(other, Layout):
            return NotImplemented
        return (self.config == other.config
                and np.array_equal(self.sizes, other.sizes)
                and np.array_equal(self.chunk_map.vc_to_pcs, other.chunk_map.vc_to_pcs))

    @property
    def F(self) -> int:
        return self.config.F

    def slot_of(self, file_id: int) -> tuple[int, int, int]:
        """Return ``(vc, offset, home)`` for a file."""
        if not 0 <= file_id < self.config.F:
            raise IndexError(f"file_id {file_id} out of range [0, {self.config.F})")
        return (int(self.file_vc[file_id]), int(self.file_offset[file_id]),
                int(self.file_home[file_id]))

    def pc_files(self, pc: int) -> range:
        K = self.config.K
        return range(pc * K, pc * K + K)

    def file_meta(self, file_id: int, trace: "EpochTrace | None" = None,
                  consumed: bool = False) -> FileMeta:
        vc, offset, home = self.slot_of(file_id)
        sn = requester = -1
        if trace is not None:
            sn = int(trace.sn_of_file[file_id])
            requester = int(trace.requesters[sn])
        return FileMeta(file_id, int(self.file_pc[file_id]), vc, offset, home,
                        int(self.sizes[file_id]), sn, requester, consumed)

    def files(self, trace: "EpochTrace | None" = None) -> list[FileMeta]:
        return [self.file_meta(f, trace) for f in range(self.config.F)]

    # text serialization ------------------------------------------------------

    def to_text(self) -> str:
        c = self.config
        out = io.StringIO()
        out.write(f"{LAYOUT_MAGIC} {FORMAT_VERSION} {c.F} {c.K} {c.M} {c.N} {c.P} {c.layout_seed}\n")
        cols = np.column_stack([np.arange(c.F), self.file_pc, self.file_vc,
                                self.file_offset, self.file_home, self.sizes])
        np.savetxt(out, cols, fmt="%d")
        return out.getvalue()

    def write(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def from_text(cls, text: str, remote_vc_budget: int = DEFAULT_REMOTE_VC_BUDGET) -> "Layout":
        lines = text.splitlines()
        if not lines:
            raise ConfigError("empty layout file")
        head = lines[0].split()
        if len(head) != 8 or head[0] != LAYOUT_MAGIC or head[1] != FORMAT_VERSION:
            raise ConfigError(f"bad layout header: {lines[0]!r}")
        F, K, M, N, P, seed = (int(x) for x in head[2:])
        config = LayoutConfig(F, K, M, N, P, seed, remote_vc_budget)
        rows = np.loadtxt(io.StringIO("\n".join(lines[1:])), dtype=np.int64, ndmin=2)
        if rows.shape != (F, 6):
            raise ConfigError(f"layout body has shape {rows.shape}, expected ({F}, 6)")
        layout = build_layout(config, rows[:, 5])
        expected = np.column_stack([np.arange(F), layout.file_pc, layout.file_vc,
                                    layout.file_offset, layout.file_home])
        if not np.array_equal(rows[:, :5], expected):
            bad = int(np.flatnonzero((rows[:, :5] != expected).any(axis=1))[0])
            raise ConfigError(f"layout line for file {bad} disagrees with the placement rule")
        return layout

    @classmethod
    def read(cls, path, **kwargs) -> "Layout":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read layout {path}: {exc.strerror}") from exc
        return cls.from_text(text, **kwargs)


def build_layout(config: LayoutConfig, file_sizes: Sequence[int] | np.ndarray) -> Layout:
    config.validate()
    sizes = np.array(file_sizes, dtype=np.int64)
    if sizes.shape != (config.F,):
        raise ConfigError(f"expected {config.F} file sizes, got {sizes.shape[0] if sizes.ndim else 0}")
    if (sizes <= 0).any():
        raise ConfigError("all file sizes must be > 0")

    F, K, M, N, G = config.F, config.K, config.M, config.N, config.G
    pcs_per_node = F // (N * K)
    vcs_per_node = M // N
    pc = np.arange(F // K, dtype=np.int64)
    node = pc // pcs_per_node
    local_pc = pc % pcs_per_node
    pc_to_vc = node * vcs_per_node + local_pc // G
    # Consecutive blocks make the inverse a plain reshape.
    vc_to_pcs = pc.reshape(M, G).copy()
    vc_home = np.arange(M, dtype=np.int64) // vcs_per_node
    return Layout(config, sizes, ChunkMap(pc_to_vc, vc_to_pcs, vc_home))


@dataclass(frozen=True, eq=False)
class EpochTrace:
    """Global random access order for one epoch.

    Entry ``sn`` requests ``files[sn]`` on behalf of node ``requesters[sn]``.
    """

    epoch_seed: int
    files: np.ndarray
    requesters: np.ndarray
    sn_of_file: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        files = np.ascontiguousarray(self.files, dtype=np.int64)
        reqs = np.ascontiguousarray(self.requesters, dtype=np.int64)
        if files.shape != reqs.shape:
            raise ConfigError("trace files and requesters differ in length")
        object.__setattr__(self, "files", files)
        object.__setattr__(self, "requesters", reqs)
        inv = np.full(files.max() + 1 if len(files) else 0, -1, dtype=np.int64)
        inv[files] = np.arange(len(files), dtype=np.int64)
        object.__setattr__(self, "sn_of_file", inv)

    def __len__(self):
        return len(self.files)

    def __eq__(self, other):
        if not isinstance(other, EpochTrace):
            return NotImplemented
        return (self.epoch_seed == other.epoch_seed
                and np.array_equal(self.files, other.files)
                and np.array_equal(self.requesters, other.requesters))

    @property
    def entries(self) -> list[tuple[int, int, int]]:
        return [(sn, int(r), int(f)) for sn, (r, f) in enumerate(zip(self.requesters, self.files))]

    def node_subsequence(self, node: int) -> np.ndarray:
        return self.files[self.requesters == node]

    def to_text(self) -> str:
        out = io.StringIO()
        out.write(f"{TRACE_MAGIC} {FORMAT_VERSION} {len(self)} {self.epoch_seed}\n")
        np.savetxt(out, np.column_stack([np.arange(len(self)), self.requesters, self.files]),
                   fmt="%d")
        return out.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "EpochTrace":
        lines = text.splitlines()
        head = lines[0].split() if lines else []
        if len(head) != 4 or head[0] != TRACE_MAGIC or head[1] != FORMAT_VERSION:
            raise ConfigError(f"bad trace header: {lines[0] if lines else ''!r}")
        n, seed = int(head[2]), int(head[3])
        rows = np.loadtxt(io.StringIO("\n".join(lines[1:])), dtype=np.int64, ndmin=2)
        if rows.shape != (n, 3) or not np.array_equal(rows[:, 0], np.arange(n)):
            raise ConfigError("trace body malformed: expected consecutive 'sn requester file_id' lines")
        return cls(seed, rows[:, 2], rows[:, 1])


def generate_epoch_trace(config: LayoutConfig, epoch_seed: int) -> EpochTrace:
    """Uniform random permutation of all files; entry i is requested by node i mod N."""
    perm = np.random.default_rng(epoch_seed).permutation(config.F).astype(np.int64)
    requesters = np.arange(config.F, dtype=np.int64) % config.N
    return EpochTrace(int(epoch_seed), perm, requesters)


def make_trace(entries: Iterable[tuple[int, int]], epoch_seed: int = 0) -> EpochTrace:
    """Build a (possibly partial) trace from ``(requester, file_id)`` pairs, for scripted runs."""
    entries = list(entries)
    reqs = [r for r, _ in entries]
    files = [f for _, f in entries]
    return EpochTrace(epoch_seed, np.array(files, dtype=np.int64), np.array(reqs, dtype=np.int64))
