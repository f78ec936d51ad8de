"""Three equivalent ways to evaluate the Delay Network state sequence.

Inputs are ``(batch, time, channels)`` arrays. Memory states come back
flattened to ``(batch, time, channels * d)``; channel ``c`` owns the block
``[c*d, (c+1)*d)``.

* :func:`scan_sequential` -- the recurrence, O(n d^2) per channel.
* :func:`conv_dense` -- causal convolution with the impulse response, O(n^2 d).
* :func:`conv_fft` -- the same convolution through zero-padded FFTs, O(n log n d).
* :func:`final_state` -- only the last state, O(n d).

Each path also has an adjoint used for backpropagation. All paths tally
multiply-adds in :data:`counter` so cost scaling can be checked without clocks.
"""
import contextlib
import math
from collections import Counter

import numpy as np

from . import _backend
from .dn import fft_size
from .errors import DimensionError

# cap on complex entries held at once by conv_fft (~64 MB)
_FFT_CHUNK = 1 << 22


class OpCounter:
    def __init__(self):
        self.counts = Counter()
        self.enabled = False

    def add(self, path, ops):
        if self.enabled:
            self.counts[path] += int(ops)

    def reset(self):
        self.counts.clear()


counter = OpCounter()


@contextlib.contextmanager
def counting():
    """Enable and reset the global op counter for the duration of the block."""
    prev = counter.enabled
    counter.reset()
    counter.enabled = True
    try:
        yield counter.counts
    finally:
        counter.enabled = prev


def _fft_ops(rows, size):
    return rows * (size // 2) * int(math.log2(size))


def as_sequence(u, name="u"):
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 3:
        raise DimensionError(f"{name} must be (batch, time, channels), got shape {u.shape}")
    if not np.all(np.isfinite(u)):
        raise ValueError(f"{name} contains non-finite values")
    return u


def _to_rows(u):
    B, n, C = u.shape
    return np.ascontiguousarray(u.transpose(0, 2, 1).reshape(B * C, n))


def _from_rows(rows, B, C):
    K, n, d = rows.shape
    return rows.reshape(B, C, n, d).transpose(0, 2, 1, 3).reshape(B, n, C * d)


def _grad_rows(g, d):
    B, n, Cd = g.shape
    if Cd % d:
        raise DimensionError(f"gradient width {Cd} is not a multiple of d={d}")
    C = Cd // d
    return np.ascontiguousarray(g.reshape(B, n, C, d).transpose(0, 2, 1, 3).reshape(B * C, n, d)), C


def _check_horizon(H, n):
    if H.n < n:
        raise ValueError(f"impulse response horizon {H.n} shorter than sequence length {n}")


def _reject_m0(m0):
    if m0 is not None and np.any(np.asarray(m0) != 0):
        raise ValueError("convolution paths assume a zero initial state; use scan_sequential")


def scan_sequential(sys, u, m0=None):
    """Run ``m_t = Abar m_{t-1} + Bbar u_t`` channel by channel."""
    u = as_sequence(u)
    B, n, C = u.shape
    d = sys.d
    if m0 is None:
        m0_rows = np.zeros((B * C, d))
    else:
        m0 = np.asarray(m0, dtype=np.float64)
        if m0.shape != (B, C * d):
            raise DimensionError(f"m0 must have shape {(B, C * d)}, got {m0.shape}")
        m0_rows = m0.reshape(B * C, d)
    counter.add("scan", B * C * n * (d * d + d))
    return _from_rows(_backend.scan(sys.Abar, sys.b, _to_rows(u), m0_rows), B, C)


def conv_dense(H, u, m0=None):
    """Direct causal convolution with the impulse response (Toeplitz form, never built)."""
    _reject_m0(m0)
    u = as_sequence(u)
    B, n, C = u.shape
    _check_horizon(H, n)
    counter.add("conv_dense", B * C * H.d * n * (n + 1) // 2)
    return _from_rows(_backend.causal_conv(H.HT[:n], _to_rows(u)), B, C)


def final_state(H, u, m0=None):
    """Only ``m_n``: one inner product of the reversed input with the response."""
    _reject_m0(m0)
    u = as_sequence(u)
    B, n, C = u.shape
    _check_horizon(H, n)
    counter.add("final_state", B * C * H.d * n)
    rows = _to_rows(u)
    # reversed view copied: matmul skips BLAS for negative strides
    m = np.ascontiguousarray(rows[:, ::-1]) @ H.HT[:n]
    return m.reshape(B, C * H.d)


def conv_fft(H, u, m0=None):
    """Causal convolution evaluated in the frequency domain.

    Both operands are zero-padded to the next power of two >= 2n - 1, so the
    circular product equals the acyclic convolution; the first n samples are kept.
    """
    _reject_m0(m0)
    u = as_sequence(u)
    B, n, C = u.shape
    _check_horizon(H, n)
    d = H.d
    size = fft_size(n)
    spec_H = H.spectrum(size)[:, None, :] if H.n == n else _spectrum_prefix(H, n, size)
    rows = _to_rows(u)
    K = rows.shape[0]
    counter.add("conv_fft", _fft_ops(K, size) + K * d * size + _fft_ops(K * d, size))
    padded = np.zeros((K, size), dtype=np.complex128)
    padded[:, :n] = rows
    U = _backend.fft_rows(padded)
    out = np.empty((K, n, d))
    step = max(1, _FFT_CHUNK // (d * size))
    for lo in range(0, K, step):
        hi = min(K, lo + step)
        prod = (spec_H.transpose(1, 0, 2) * U[lo:hi, None, :]).reshape(-1, size)
        y = _backend.fft_rows(prod, inverse=True)[:, :n].real
        out[lo:hi] = y.reshape(hi - lo, d, n).transpose(0, 2, 1)
    return _from_rows(out, B, C)


def _spectrum_prefix(H, n, size):
    # H longer than the input: only the first n columns can reach the output
    from .numerics import fft
    return fft(H.H[:, :n], size)[:, None, :]


def scan_adjoint(sys, g):
    """Backpropagate state gradients ``(B, n, C*d)`` through the recurrence.

    Returns ``dL/du`` of shape ``(B, n, C)``.
    """
    g = np.asarray(g, dtype=np.float64)
    B, n, _ = g.shape
    rows, C = _grad_rows(g, sys.d)
    counter.add("scan", B * C * n * (sys.d * sys.d + sys.d))
    gu = _backend.scan_adjoint(sys.Abar, sys.b, rows)
    return gu.reshape(B, C, n).transpose(0, 2, 1)


def corr_dense(H, g):
    """Adjoint of :func:`conv_dense`: correlation with the time-reversed response."""
    g = np.asarray(g, dtype=np.float64)
    B, n, _ = g.shape
    _check_horizon(H, n)
    rows, C = _grad_rows(g, H.d)
    counter.add("conv_dense", B * C * H.d * n * (n + 1) // 2)
    return _backend.causal_corr(H.HT[:n], rows).reshape(B, C, n).transpose(0, 2, 1)


def corr_fft(H, g):
    """Adjoint of :func:`conv_fft`, computed by convolving the time-reversed gradient."""
    g = np.asarray(g, dtype=np.float64)
    B, n, _ = g.shape
    _check_horizon(H, n)
    d = H.d
    rows, C = _grad_rows(g, d)
    K = rows.shape[0]
    size = fft_size(n)
    spec_H = H.spectrum(size) if H.n == n else _spectrum_prefix(H, n, size)[:, 0, :]
    counter.add("conv_fft", _fft_ops(K * d, size) + K * d * size + _fft_ops(K, size))
    out = np.empty((K, n))
    step = max(1, _FFT_CHUNK // (d * size))
    for lo in range(0, K, step):
        hi = min(K, lo + step)
        rev = np.zeros((hi - lo, d, size), dtype=np.complex128)
        rev[:, :, :n] = rows[lo:hi, ::-1, :].transpose(0, 2, 1)
        G = _backend.fft_rows(rev.reshape(-1, size)).reshape(hi - lo, d, size)
        acc = (G * spec_H[None]).sum(axis=1)
        y = _backend.fft_rows(acc, inverse=True)[:, :n].real
        out[lo:hi] = y[:, ::-1]
    return out.reshape(B, C, n).transpose(0, 2, 1)


def final_state_adjoint(H, g_n, n):
    """Adjoint of :func:`final_state`: spreads ``dL/dm_n`` back over all n inputs."""
    g_n = np.asarray(g_n, dtype=np.float64)
    B, Cd = g_n.shape
    d = H.d
    if Cd % d:
        raise DimensionError(f"gradient width {Cd} is not a multiple of d={d}")
    _check_horizon(H, n)
    C = Cd // d
    counter.add("final_state", B * C * d * n)
    gu_rev = g_n.reshape(B * C, d) @ H.H[:, :n]
    return gu_rev[:, ::-1].reshape(B, C, n).transpose(0, 2, 1)


def choose_correlation(n, d):
    """Pick the cheaper adjoint for the parallel path from sizes alone."""
    size = fft_size(n)
    direct = n * (n + 1) / 2 * d
    spectral = (d + 1) * (size / 2) * math.log2(size) + d * size
    return "fft" if spectral < direct else "dense"
