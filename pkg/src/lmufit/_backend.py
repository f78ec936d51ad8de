"""Kernel backend selection.

``LMUFIT_BACKEND`` may be ``auto`` (default: compiled if importable),
``compiled`` (fail loudly if missing) or ``python``.
"""
import os

import numpy as np

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    BACKENDS["compiled"] = _ckernels


def _select(name):
    if name == "auto":
        return "compiled" if "compiled" in BACKENDS else "python"
    if name not in ("python", "compiled"):
        raise ValueError(f"unknown backend {name!r}")
    if name not in BACKENDS:
        raise ImportError("compiled kernels requested but lmufit._ckernels is not built")
    return name


_active = _select(os.environ.get("LMUFIT_BACKEND", "auto"))


def active():
    return _active


def set_backend(name):
    """Switch kernels process-wide; returns the previously active backend name."""
    global _active
    prev = _active
    _active = _select(name)
    return prev


def _k(backend):
    return BACKENDS[_select(backend) if backend else _active]


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def scan(A, b, u, m0, backend=None):
    return _k(backend).scan(_f64(A), _f64(b), _f64(u), _f64(m0))


def scan_adjoint(A, b, g, backend=None):
    return _k(backend).scan_adjoint(_f64(A), _f64(b), _f64(g))


def causal_conv(HT, u, backend=None):
    return _k(backend).causal_conv(_f64(HT), _f64(u))


def causal_corr(HT, g, backend=None):
    return _k(backend).causal_corr(_f64(HT), _f64(g))


def fft_rows(x, inverse=False, backend=None):
    x = np.ascontiguousarray(x, dtype=np.complex128)
    return _k(backend).fft_rows(x, inverse)
