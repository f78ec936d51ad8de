"""Pure numpy implementations of the hot loops.

Same signatures and semantics as the compiled ``_ckernels`` module; used when
the extension is unavailable or ``LMUFIT_BACKEND=python`` is set.
"""
import numpy as np


def scan(A, b, u, m0):
    """out[k, t] = A @ out[k, t-1] + b * u[k, t], starting from m0[k]."""
    K, n = u.shape
    d = A.shape[0]
    out = np.empty((K, n, d))
    m = m0
    At = A.T
    for t in range(n):
        m = m @ At + u[:, t, None] * b
        out[:, t] = m
    return out


def scan_adjoint(A, b, g):
    K, n, d = g.shape
    gu = np.empty((K, n))
    lam = np.zeros((K, d))
    for t in range(n - 1, -1, -1):
        lam = g[:, t] + lam @ A
        gu[:, t] = lam @ b
    return gu


def causal_conv(HT, u):
    K, n = u.shape
    d = HT.shape[1]
    out = np.empty((K, n, d))
    urev = np.ascontiguousarray(u[:, ::-1])
    for t in range(n):
        out[:, t] = urev[:, n - 1 - t:] @ HT[: t + 1]
    return out


def causal_corr(HT, g):
    K, n, d = g.shape
    gu = np.zeros((K, n))
    for j in range(n):
        gu[:, : n - j] += g[:, j:] @ HT[j]
    return gu


def _bit_reverse(N):
    bits = N.bit_length() - 1
    idx = np.arange(N)
    rev = np.zeros(N, dtype=np.intp)
    for k in range(bits):
        rev |= ((idx >> k) & 1) << (bits - 1 - k)
    return rev


def fft_rows(x, inverse=False):
    """Radix-2 decimation-in-time FFT along the last axis, vectorised per stage."""
    x = np.asarray(x, dtype=np.complex128)
    R, N = x.shape
    if N == 0 or R == 0:
        return x.copy()
    if N & (N - 1):
        raise ValueError(f"transform size {N} is not a power of two")
    y = x[:, _bit_reverse(N)]
    sign = 1.0 if inverse else -1.0
    m = 1
    while m < N:
        ang = np.pi * np.arange(m) / m
        tw = np.cos(ang) + 1j * sign * np.sin(ang)
        blocks = y.reshape(R, N // (2 * m), 2, m)
        even = blocks[:, :, 0, :]
        odd = blocks[:, :, 1, :] * tw
        y = np.stack([even + odd, even - odd], axis=2).reshape(R, N)
        m *= 2
    if inverse:
        y /= N
    return y
