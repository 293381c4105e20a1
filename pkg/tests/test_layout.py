import numpy as np
import pytest
from hypothesis import given, strategies as st

from redox_sim.errors import ConfigError
from redox_sim.layout import (EpochTrace, Layout, LayoutConfig, build_layout,
                              generate_epoch_trace, make_trace)

from conftest import unit_layout


@st.composite
def configs(draw):
    N = draw(st.integers(1, 4))
    M = N * draw(st.integers(1, 4))
    K = draw(st.integers(1, 9))
    G = draw(st.integers(1, 5))
    return LayoutConfig(F=K * G * M, K=K, M=M, N=N, P=draw(st.integers(1, 8)),
                        layout_seed=draw(st.integers(0, 2**31)))


@pytest.mark.parametrize("kw", [
    dict(F=100, K=3, M=2),        # F not a multiple of K*M
    dict(F=24, K=2, M=3, N=2),    # M not a multiple of N
    dict(F=0, K=1, M=1),
    dict(F=8, K=2, M=2, P=0),
])
def test_rejects_bad_divisibility(kw):
    with pytest.raises(ConfigError):
        LayoutConfig(**kw)


def test_derived_counts():
    c = LayoutConfig(F=98304, K=64, M=192, N=3)
    assert (c.G, c.num_pcs) == (8, 1536)


def test_small_placement_by_hand():
    # 2 nodes, 2 VCs, K=4, 4 chunks per VC: node 0 owns files 0..15, node 1 files 16..31
    lay = unit_layout(32, 4, 2, N=2)
    assert lay.slot_of(19) == (1, 3, 1)
    assert lay.slot_of(5) == (0, 1, 0)
    assert list(lay.chunk_map.pcs(1)) == [4, 5, 6, 7]
    assert list(lay.pc_files(5)) == [20, 21, 22, 23]
    with pytest.raises(IndexError):
        lay.slot_of(32)


@given(configs())
def test_placement_properties(cfg):
    lay = build_layout(cfg, np.arange(1, cfg.F + 1))
    cm = lay.chunk_map
    K, G = cfg.K, cfg.G
    # files of a chunk are consecutive; chunk offset is the file offset
    assert np.array_equal(lay.file_pc, np.arange(cfg.F) // K)
    assert np.array_equal(lay.file_offset, np.arange(cfg.F) % K)
    # every VC has exactly G chunks, all on the VC's home node
    assert cm.vc_to_pcs.shape == (cfg.M, G)
    for vc in range(cfg.M):
        pcs = cm.vc_to_pcs[vc]
        assert (cm.pc_to_vc[pcs] == vc).all()
        assert (lay.pc_home[pcs] == cm.vc_home[vc]).all()
    assert np.bincount(cm.vc_home, minlength=cfg.N).tolist() == [cfg.M // cfg.N] * cfg.N
    assert np.bincount(lay.file_home, minlength=cfg.N).tolist() == [cfg.F // cfg.N] * cfg.N
    assert np.array_equal(lay.file_vc, cm.pc_to_vc[lay.file_pc])


@given(configs())
def test_layout_text_round_trip(cfg):
    lay = build_layout(cfg, np.arange(7, cfg.F + 7))
    assert Layout.from_text(lay.to_text()) == lay


def test_layout_text_rejects_tampering():
    lay = unit_layout(16, 4, 1)
    lines = lay.to_text().splitlines()
    lines[3] = "2 0 0 3 0 1"   # file 2 claims offset 3
    with pytest.raises(ConfigError, match="file 2"):
        Layout.from_text("\n".join(lines))
    with pytest.raises(ConfigError):
        Layout.from_text("not-a-layout v1 1 1 1 1 1 0\n0 0 0 0 0 1\n")


def test_sizes_must_be_positive():
    with pytest.raises(ConfigError):
        build_layout(LayoutConfig(F=4, K=2, M=1), [1, 0, 1, 1])
    with pytest.raises(ConfigError):
        build_layout(LayoutConfig(F=4, K=2, M=1), [1, 1, 1])


@given(configs(), st.integers(0, 2**32))
def test_epoch_trace_is_permutation(cfg, seed):
    tr = generate_epoch_trace(cfg, seed)
    assert sorted(tr.files.tolist()) == list(range(cfg.F))
    assert (tr.requesters == np.arange(cfg.F) % cfg.N).all()
    assert tr == generate_epoch_trace(cfg, seed)
    assert EpochTrace.from_text(tr.to_text()) == tr
    assert (tr.sn_of_file[tr.files] == np.arange(cfg.F)).all()


def test_trace_text_parsing_errors():
    with pytest.raises(ConfigError):
        EpochTrace.from_text("redox-trace v1 2 0\n0 0 1\n")
    with pytest.raises(ConfigError):
        EpochTrace.from_text("")


def test_make_trace_and_node_subsequence():
    tr = make_trace([(0, 3), (1, 5), (0, 2)])
    assert tr.node_subsequence(0).tolist() == [3, 2]
    assert tr.entries == [(0, 0, 3), (1, 1, 5), (2, 0, 2)]


def test_file_meta_carries_sn():
    lay = unit_layout(8, 2, 2, N=2)
    tr = make_trace([(1, 6), (0, 1)])
    m = lay.file_meta(6, tr)
    assert (m.pc, m.vc, m.offset, m.home, m.sn, m.requester) == (3, 1, 0, 1, 0, 1)
    assert lay.file_meta(0).sn == -1
