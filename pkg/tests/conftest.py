import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from redox_sim import _backend
from redox_sim.layout import LayoutConfig, build_layout

settings.register_profile("default", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

BACKENDS = _backend.available()

_acceptance_lines: list[str] = []


def record_criterion(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {number} ({title}): {detail}"
    _acceptance_lines.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)


def unit_layout(F, K, M, N=1, P=8, sizes=None, budget=1_500_000_000):
    cfg = LayoutConfig(F=F, K=K, M=M, N=N, P=P, remote_vc_budget=budget)
    return build_layout(cfg, np.ones(F, dtype=np.int64) if sizes is None else sizes)


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param
