import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from redox_sim import _backend
from redox_sim.engine import Cluster, interleave_order
from redox_sim.errors import ConfigError, ProtocolViolation
from redox_sim.layout import LayoutConfig, build_layout, generate_epoch_trace, make_trace
from redox_sim.metrics import C, MetricsReport

from conftest import BACKENDS, unit_layout

REQUEST_BYTES = 29


@st.composite
def scenarios(draw):
    N = draw(st.integers(1, 4))
    M = N * draw(st.integers(1, 3))
    K = draw(st.integers(1, 8))
    G = draw(st.integers(1, 5))
    P = draw(st.integers(1, 8))
    F = K * G * M
    sizes = np.array(draw(st.lists(st.integers(1, 50), min_size=F, max_size=F)))
    budget = draw(st.sampled_from([0, 30, 200, 10**9]))
    cfg = LayoutConfig(F=F, K=K, M=M, N=N, P=P, remote_vc_budget=budget)
    return dict(layout=build_layout(cfg, sizes), seed=draw(st.integers(0, 2**31)),
                prefetch=draw(st.booleans()), policy=draw(st.sampled_from(["greedy", "random", "first"])),
                schedule=draw(st.sampled_from(["round_robin", "jitter"])))


def make(sc, **extra):
    lay = sc["layout"]
    return Cluster(lay, generate_epoch_trace(lay.config, sc["seed"]), prefetch=sc["prefetch"],
                   policy=sc["policy"], tie_seed=sc["seed"] + 1, schedule=sc["schedule"],
                   schedule_seed=sc["seed"] + 2, **extra)


def expected_network_bytes(cl):
    """Every remote delivery travels once, with a 16-byte entry header, inside some response."""
    lay = cl.layout
    remote = cl.delivered[cl.trace_req != lay.file_home[cl.trace_file]]
    msgs = int(cl.counters[C.REMOTE_REQUESTS])
    P = lay.config.P if cl.prefetch else 1
    return msgs * (REQUEST_BYTES + 7 + (P + 7) // 8) + 16 * len(remote) + int(lay.sizes[remote].sum())


@settings(max_examples=150)
@given(scenarios())
def test_multi_node_epoch_invariants(sc):
    cl = make(sc)
    cl.run("python")
    lay = sc["layout"]
    assert sorted(cl.delivered.tolist()) == list(range(lay.F))
    for arr in (lay.file_vc, lay.file_offset, lay.file_home):
        assert np.array_equal(arr[cl.delivered], arr[cl.trace_file])
    m = cl.metrics()
    assert m.files_read_from_disk == m.files_filled + m.files_wasted
    assert m.refill_waste_sum == m.files_wasted
    assert max(m.per_pc_load_counts) <= lay.config.K
    assert m.bytes_over_network == expected_network_bytes(cl)
    assert m.messages == 2 * m.remote_on_demand_requests
    assert (cl.budget == lay.config.remote_vc_budget).all()   # every prefetched file was read
    assert (cl.rvc_file < 0).all() and (cl.vc_file < 0).all()
    if not sc["prefetch"]:
        assert m.prefetched_files == 0 and m.remote_hits == 0


@pytest.mark.skipif("compiled" not in BACKENDS, reason="extension not built")
@settings(max_examples=150)
@given(scenarios())
def test_backends_agree(sc):
    a = make(sc).run("python")
    b = make(sc).run("compiled")
    assert a.metrics().to_json() == b.metrics().to_json()
    assert np.array_equal(a.delivered, b.delivered)
    assert np.array_equal(a.refill_pc, b.refill_pc)


@pytest.mark.skipif("compiled" not in BACKENDS, reason="extension not built")
def test_backends_can_hand_over_mid_epoch():
    lay = unit_layout(4096, 8, 64, N=4, P=6, sizes=np.arange(1, 4097) % 97 + 1)
    tr = generate_epoch_trace(lay.config, 11)
    ref = Cluster(lay, tr, tie_seed=3).run("python")
    mixed = Cluster(lay, tr, tie_seed=3)
    mixed.run("compiled", stop=1000)
    mixed.run("python", stop=2500)
    mixed.run("compiled")
    assert ref.metrics().to_json() == mixed.metrics().to_json()


def test_budget_never_negative_step_by_step():
    lay = unit_layout(960, 4, 24, N=3, P=8, sizes=np.arange(960) % 13 + 1, budget=25)
    cl = Cluster(lay, generate_epoch_trace(lay.config, 5))
    while not cl.done:
        cl.step()
        assert (cl.budget >= 0).all()
    assert cl.metrics().budget_skips > 0


def test_determinism_and_digest():
    lay = unit_layout(3072, 16, 24, N=3, sizes=np.arange(3072) % 31 + 1)
    tr = generate_epoch_trace(lay.config, 2)
    a = Cluster(lay, tr, tie_seed=9).run().metrics()
    b = Cluster(lay, tr, tie_seed=9).run().metrics()
    assert a.to_json() == b.to_json() and a.digest() == b.digest()
    assert MetricsReport.from_dict(a.to_dict()) == a
    c = Cluster(lay, tr, tie_seed=10).run().metrics()
    assert c.digest() != a.digest()


def test_epoch_time_is_slowest_node():
    lay = unit_layout(3072, 16, 24, N=3, sizes=np.arange(3072) % 31 + 1)
    m = Cluster(lay, generate_epoch_trace(lay.config, 2)).run().metrics()
    totals = [d + n for d, n in zip(m.per_node_disk_time, m.per_node_network_time)]
    assert m.simulated_epoch_time == max(totals)


def test_interleave_keeps_per_node_order():
    req = np.arange(30) % 3
    order = interleave_order(req, 4)
    assert sorted(order.tolist()) == list(range(30))
    for node in range(3):
        mine = [sn for sn in order if req[sn] == node]
        assert mine == sorted(mine)
    assert order.tolist() != list(range(30))


def test_reset_epoch_partial_logs_warning(caplog):
    lay = unit_layout(64, 4, 4, N=2)
    cl = Cluster(lay, generate_epoch_trace(lay.config, 0))
    cl.run(stop=10)
    with caplog.at_level(logging.WARNING):
        res = cl.reset_epoch(generate_epoch_trace(lay.config, 1))
    assert "undelivered" in caplog.text
    assert (res.delivered >= 0).sum() == 10
    assert cl.consumed.sum() == 0 and cl.counters.sum() == 0
    cl.run()
    assert sorted(cl.delivered.tolist()) == list(range(64))
    assert len(cl.history) == 1


def test_served_twice_and_done():
    lay = unit_layout(8, 2, 2)
    cl = Cluster(lay, generate_epoch_trace(lay.config, 0))
    cl.read_file(0)
    with pytest.raises(ProtocolViolation):
        cl.read_file(0)
    cl = Cluster(lay, generate_epoch_trace(lay.config, 0)).run()
    with pytest.raises(IndexError):
        cl.step()


def test_bad_constructor_args():
    lay = unit_layout(8, 2, 2)
    with pytest.raises(ConfigError):
        Cluster(lay, make_trace([(0, 8)]))
    with pytest.raises(ConfigError):
        Cluster(lay, make_trace([(1, 0)]))
    with pytest.raises(ConfigError):
        Cluster(lay, make_trace([(0, 0)]), schedule="fifo")


def test_backend_resolution():
    assert _backend.resolve("python") == "python"
    assert _backend.resolve("auto") == _backend.default()
    with pytest.raises(ValueError):
        _backend.resolve("gpu")


def test_delivery_log_text():
    lay = unit_layout(4, 2, 1)
    cl = Cluster(lay, make_trace([(0, 3), (0, 0), (0, 2), (0, 1)]), policy="first").run()
    text = cl.result().delivery_log_text(epoch=5)
    lines = text.splitlines()
    assert lines[0] == "redox-delivery v1 4 5"
    sn, requested, returned = map(int, lines[1].split())
    assert (sn, requested) == (0, 3) and returned % 2 == 1


@pytest.mark.parametrize("env,expect", [("python", "python"), ("auto", None)])
def test_backend_env_switch(env, expect):
    import os
    import subprocess
    import sys
    out = subprocess.run([sys.executable, "-c", "from redox_sim import _backend; print(_backend.default())"],
                         env={**os.environ, "REDOX_SIM_BACKEND": env}, capture_output=True, text=True,
                         check=True).stdout.strip()
    assert out == (expect or _backend.default())
