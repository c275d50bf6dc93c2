"""Kernel backend selection.

Two interchangeable backends implement the same small API over
C-contiguous float64 2-D arrays:

  * ``c``  — compiled Cython extension (BLAS matmul, fused loops)
  * ``py`` — numpy fallback

The compiled backend is preferred when importable. Set ``CMVAE_KERNELS=py``
(or ``c``) to force one; ``use()`` switches at runtime, which the tests and
the benchmark rely on. ``benchmarks/bench_kernels.py`` compares the two.
"""

import os

from ..exceptions import ConfigError
from . import numpy_backend as _py

try:
    from . import _ckern as _c
except ImportError:
    _c = None

_BACKENDS = {"py": _py}
if _c is not None:
    _BACKENDS["c"] = _c


def _select_initial():
    requested = os.environ.get("CMVAE_KERNELS", "")
    if requested == "":
        return _c if _c is not None else _py
    if requested not in ("c", "py"):
        raise ConfigError(f"CMVAE_KERNELS={requested!r}: expected 'c' or 'py'")
    if requested not in _BACKENDS:
        raise ConfigError("CMVAE_KERNELS=c but the compiled extension is not built")
    return _BACKENDS[requested]


_active = _select_initial()


def available():
    """Names of importable backends."""
    return tuple(sorted(_BACKENDS))


def active_name():
    return _active.NAME


def get(name=None):
    """Return a backend module: the active one, or the named one."""
    if name is None:
        return _active
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ConfigError(f"kernel backend {name!r} not available; have {available()}")


def use(name):
    """Switch the active backend for subsequently created tapes."""
    global _active
    _active = get(name)
