"""Hot per-cell kernels with a compiled core and a numpy fallback.

The compiled Cython module is preferred when importable; otherwise the numpy
implementation is used. Both evaluate the same expressions in the same order,
so their results agree bit for bit. Override with BLOCKSIM_KERNELS=python or
BLOCKSIM_KERNELS=cython (the latter raises if the extension is missing).
"""
import os

_requested = os.environ.get("BLOCKSIM_KERNELS", "").strip().lower()

if _requested == "python":
    from . import _core_py as impl
    BACKEND = "python"
elif _requested == "cython":
    from . import _core_cy as impl  # noqa: F401 - hard requirement
    BACKEND = "cython"
else:
    try:
        from . import _core_cy as impl
        BACKEND = "cython"
    except ImportError:
        from . import _core_py as impl
        BACKEND = "python"


def get_backend(name=None):
    """Return (module, label) for `name` in {None, "python", "cython"}."""
    if name in (None, ""):
        return impl, BACKEND
    if name == "python":
        from . import _core_py
        return _core_py, "python"
    if name == "cython":
        from . import _core_cy
        return _core_cy, "cython"
    raise ValueError(f"unknown kernel backend {name!r}")
