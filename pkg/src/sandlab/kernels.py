"""Kernel backend selection.

The compiled Cython core is used when importable; otherwise the pure-Python
reference takes over.  Set SANDLAB_KERNELS=python (or =compiled) to force a
choice, e.g. for the benchmark or for debugging.  Both backends implement
the same contract and produce bit-identical results.
"""

from __future__ import annotations

import os

from . import _kernels_py

try:
    from . import _kernels_cy
except ImportError:  # extension not built
    _kernels_cy = None

_BACKENDS = {"python": _kernels_py}
if _kernels_cy is not None:
    _BACKENDS["compiled"] = _kernels_cy


def get_backend(name: str | None = None):
    """Return a kernel module by name, or the default active one."""
    if name is None:
        name = ACTIVE_BACKEND
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(
            f"unknown kernel backend {name!r}; available: "
            f"{sorted(_BACKENDS)}") from None


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


_forced = os.environ.get("SANDLAB_KERNELS", "").strip().lower()
if _forced:
    if _forced not in _BACKENDS:
        raise ImportError(
            f"SANDLAB_KERNELS={_forced!r} but that backend is unavailable "
            f"(have: {sorted(_BACKENDS)})")
    ACTIVE_BACKEND = _forced
else:
    ACTIVE_BACKEND = "compiled" if _kernels_cy is not None else "python"
