"""Hot-kernel backend selection: compiled Cython core with NumPy fallback.

The compiled extension is preferred when importable; set DESPLAT_BACKEND to
"python" or "compiled" to force one.  Both expose the same functions with
matching accumulation semantics.
"""

import contextlib
import os

from . import _pykern

try:
    from . import _ckern
except ImportError:  # running from source tree without a built extension
    _ckern = None


def get_kernels(which=None):
    which = which or os.environ.get("DESPLAT_BACKEND", "").strip().lower() or None
    if which in (None, "auto"):
        return _ckern if _ckern is not None else _pykern
    if which == "python":
        return _pykern
    if which == "compiled":
        if _ckern is None:
            raise ImportError("compiled backend requested but desplat._ckern is not built")
        return _ckern
    raise ValueError(f"unknown backend '{which}' (expected 'python' or 'compiled')")


kernels = get_kernels()


def backend_name():
    return kernels.name


@contextlib.contextmanager
def use(which):
    """Temporarily switch the active backend (used by tests and benchmarks)."""
    global kernels
    prev = kernels
    kernels = get_kernels(which)
    try:
        yield kernels
    finally:
        kernels = prev
