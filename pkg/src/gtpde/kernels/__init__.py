"""Stepping kernels with a compiled core and a pure-python fallback.

The backend is chosen at import time: the Cython extension if it built,
otherwise the numpy reference implementation.  Both produce bit-identical
results; GTPDE_KERNELS=python|compiled forces a choice, and benchmarks/
compares their speed.
"""

from __future__ import annotations

import os

from . import pyref

try:  # pragma: no cover - depends on the build environment
    from . import _core as _compiled
except ImportError:  # pragma: no cover
    _compiled = None

_active = None


def set_backend(name: str):
    """Select the kernel backend ("python", "compiled" or "auto")."""
    global _active
    if name in ("auto", ""):
        _active = _compiled if _compiled is not None else pyref
    elif name == "python":
        _active = pyref
    elif name == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not available in this install")
        _active = _compiled
    else:
        raise ValueError(f"unknown kernel backend {name!r}")
    return _active


def backend_name() -> str:
    return _active.BACKEND_NAME


def available_backends() -> list:
    out = ["python"]
    if _compiled is not None:
        out.append("compiled")
    return out


def get_module(name: str):
    """Return a specific backend module (for parity tests and benchmarks)."""
    if name == "python":
        return pyref
    if name == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not available in this install")
        return _compiled
    raise ValueError(f"unknown kernel backend {name!r}")


set_backend(os.environ.get("GTPDE_KERNELS", "auto"))


def tooth_drift(pos, offsets, m, coef, cap, wrap, wrap_width=0.0):
    return _active.tooth_drift(pos, offsets, m, coef, cap, wrap, wrap_width)


def step_full_positions(pos, noise, m, coef, L, cap):
    return _active.step_full_positions(pos, noise, m, coef, L, cap)


def step_teeth(pos, counts, noise, left, w, m, coef, frac_anti, frac_down,
               pending_pos, pending_tooth, carry=None):
    return _active.step_teeth(pos, counts, noise, left, w, m, coef,
                              frac_anti, frac_down, pending_pos,
                              pending_tooth, carry)
