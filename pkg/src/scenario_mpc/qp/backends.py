"""Kernel selection for the ADMM inner loop.

The compiled extension is preferred when it imports; setting
``SCENARIO_MPC_PURE_PYTHON=1`` forces the NumPy fallback.
"""

import os

from . import _kernel_py

try:
    from . import _kernel as _kernel_ext
except ImportError:  # extension not built
    _kernel_ext = None

COMPILED = "compiled"
PYTHON = "python"


def available() -> list[str]:
    names = [PYTHON]
    if _kernel_ext is not None:
        names.insert(0, COMPILED)
    return names


def default() -> str:
    if _kernel_ext is None or os.environ.get("SCENARIO_MPC_PURE_PYTHON", "") not in ("", "0"):
        return PYTHON
    return COMPILED


def resolve(name: str | None) -> str:
    if name is None:
        return default()
    if name not in (COMPILED, PYTHON):
        raise ValueError(f"unknown QP kernel {name!r}; choose from {available()}")
    if name == COMPILED and _kernel_ext is None:
        raise ImportError("compiled ADMM kernel is not built; reinstall the package with a C compiler")
    return name


def kernel(name: str):
    return _kernel_ext.admm_iterations if name == COMPILED else _kernel_py.admm_iterations
