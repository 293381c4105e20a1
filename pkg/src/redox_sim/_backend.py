"""Selects the compiled epoch loop when it was built, the pure-Python engine otherwise.

``REDOX_SIM_BACKEND=python`` forces the fallback; ``compiled`` makes a missing
extension an import-time error instead of a silent fallback.
"""

import os

try:
    from . import _core
except ImportError:  # extension not built
    _core = None

PYTHON = "python"
COMPILED = "compiled"

_requested = os.environ.get("REDOX_SIM_BACKEND", "auto").lower()
if _requested == COMPILED and _core is None:
    raise ImportError("REDOX_SIM_BACKEND=compiled but redox_sim._core is not built")


def available() -> list[str]:
    return [PYTHON, COMPILED] if _core is not None else [PYTHON]


def default() -> str:
    if _requested == PYTHON or _core is None:
        return PYTHON
    return COMPILED


def resolve(name: str | None) -> str:
    name = (name or default()).lower()
    if name == "auto":
        return default()
    if name not in (PYTHON, COMPILED):
        raise ValueError(f"unknown backend {name!r}")
    if name == COMPILED and _core is None:
        raise RuntimeError("compiled backend requested but redox_sim._core is not built")
    return name
