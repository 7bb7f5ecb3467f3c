"""Kernel backend switch.

The hot row kernels exist twice: numba-jitted (_kernels_numba) and pure
numpy (_kernels_numpy). The active set is picked once at import from the
SELKD_BACKEND environment variable ("numba" or "numpy"); default is numba
when importable. Set the variable before importing selkd.
"""

import os
import warnings

from . import _kernels_numpy
from .errors import ConfigError

try:
    from . import _kernels_numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    _kernels_numba = None
    HAS_NUMBA = False


def _resolve() -> str:
    choice = os.environ.get("SELKD_BACKEND", "").strip().lower()
    if choice not in ("", "numba", "numpy"):
        raise ConfigError(f"SELKD_BACKEND must be 'numba' or 'numpy', got {choice!r}")
    if choice == "numba" and not HAS_NUMBA:
        raise ConfigError("SELKD_BACKEND=numba but numba is not importable")
    if choice == "":
        if not HAS_NUMBA:
            warnings.warn("numba not available; using pure-numpy kernels")
        choice = "numba" if HAS_NUMBA else "numpy"
    return choice


BACKEND = _resolve()
kernels = _kernels_numba if BACKEND == "numba" else _kernels_numpy


def active_backend() -> str:
    return BACKEND


def warm_up():
    """Trigger JIT compilation of every kernel on tiny inputs."""
    import numpy as np

    x = np.array([[0.1, -0.2, 0.3], [1.0, 2.0, 3.0]])
    g = np.ones_like(x)
    out = kernels.log_softmax_fwd(x)
    kernels.log_softmax_bwd(out, g)
    s = kernels.softmax_fwd(x)
    kernels.softmax_bwd(s, g)
    gain = np.ones(3)
    bias = np.zeros(3)
    y, xhat, inv_std = kernels.layer_norm_fwd(x, gain, bias, 1e-5)
    kernels.layer_norm_bwd(g, xhat, inv_std, gain)
    table = np.zeros((4, 3))
    kernels.embedding_scatter_add_(table, np.array([1, 3], dtype=np.int64), g)
    p = np.zeros(3)
    kernels.adam_update_(p, np.ones(3), np.zeros(3), np.zeros(3), 0.1, 0.9, 0.98, 1e-8, 1)
