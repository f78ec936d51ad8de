"""Numerical primitives: matrix exponential, zero-order-hold block exponential,
radix-2 FFT and seeded random streams.

Matrices are plain float64 ``numpy.ndarray`` objects. Every public function
validates shapes and finiteness instead of relying on broadcasting.
"""
import math
import operator

import numpy as np

from . import _backend
from .errors import DimensionError

# Degree-13 Pade coefficients b_k of exp(x) ~ p(x)/p(-x) and the largest
# 1-norm for which the unscaled approximant reaches double precision.
_PADE13 = (
    64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
    1187353796428800.0, 129060195264000.0, 10559470521600.0,
    670442572800.0, 33522128640.0, 1323241920.0, 40840800.0,
    960960.0, 16380.0, 182.0, 1.0,
)
_THETA13 = 5.371920351148152


def as_matrix(a, name="matrix"):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


def expm(M):
    """Matrix exponential by scaling and squaring with a degree-13 Pade approximant.

    The scaling power ``s`` is the smallest integer with ``||M / 2**s||_1 <= 5.37``.
    """
    M = as_matrix(M, "M")
    n, m = M.shape
    if n != m:
        raise DimensionError(f"expm needs a square matrix, got {M.shape}")
    if n == 0:
        return M.copy()
    norm1 = np.abs(M).sum(axis=0).max()
    if norm1 == 0.0:
        return np.eye(n)
    s = 0
    if norm1 > _THETA13:
        s = max(0, int(math.ceil(math.log2(norm1 / _THETA13))))
    A = M / 2.0**s
    b = _PADE13
    ident = np.eye(n)
    A2 = A @ A
    A4 = A2 @ A2
    A6 = A2 @ A4
    U = A @ (A6 @ (b[13] * A6 + b[11] * A4 + b[9] * A2)
             + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * ident)
    V = A6 @ (b[12] * A6 + b[10] * A4 + b[8] * A2) + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * ident
    R = np.linalg.solve(V - U, V + U)
    for _ in range(s):
        R = R @ R
    if not np.all(np.isfinite(R)):
        raise FloatingPointError("expm overflowed")
    return R


def expm_augmented(A, B):
    """Zero-order-hold discretisation at unit step.

    Returns ``(e^A, A^{-1}(e^A - I) B)`` read off the exponential of the block
    matrix ``[[A, B], [0, 0]]``; ``A`` is never inverted.
    """
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    d = A.shape[0]
    if A.shape != (d, d):
        raise DimensionError(f"A must be square, got {A.shape}")
    if B.shape[0] != d:
        raise DimensionError(f"B has {B.shape[0]} rows, A has {d}")
    k = B.shape[1]
    block = np.zeros((d + k, d + k))
    block[:d, :d] = A
    block[:d, d:] = B
    E = expm(block)
    return E[:d, :d].copy(), E[:d, d:].copy()


def next_pow2(n):
    n = int(n)
    return 1 if n <= 1 else 1 << (n - 1).bit_length()


def fft(v, size=None):
    """Forward transform along the last axis after zero-padding to ``size``.

    ``size`` must be a power of two no smaller than the input length; it
    defaults to the next power of two.
    """
    v = np.asarray(v)
    if v.ndim == 0:
        raise DimensionError("fft needs at least one axis")
    length = v.shape[-1]
    if size is None:
        size = next_pow2(length)
    if size < length:
        raise ValueError(f"transform size {size} is smaller than input length {length}")
    if size & (size - 1):
        raise ValueError(f"transform size {size} is not a power of two")
    lead = v.shape[:-1]
    rows = np.zeros((int(np.prod(lead, dtype=np.int64)), size), dtype=np.complex128)
    rows[:, :length] = v.reshape(-1, length)
    return _backend.fft_rows(rows).reshape(lead + (size,))


def ifft(X, length=None, tol=1e-9):
    """Inverse transform returning the real part (first ``length`` samples).

    Raises if the discarded imaginary residue exceeds ``tol`` relative to the
    largest real magnitude.
    """
    X = np.asarray(X, dtype=np.complex128)
    size = X.shape[-1]
    lead = X.shape[:-1]
    y = _backend.fft_rows(X.reshape(-1, size), inverse=True).reshape(lead + (size,))
    if length is not None:
        if length > size:
            raise ValueError(f"requested {length} samples from a size-{size} transform")
        y = y[..., :length]
    scale = max(1.0, float(np.abs(y.real).max(initial=0.0)))
    resid = float(np.abs(y.imag).max(initial=0.0))
    if resid > tol * scale:
        raise ValueError(f"imaginary residue {resid:.3g} exceeds tolerance")
    return np.ascontiguousarray(y.real)


def fft_convolve(a, b):
    """Acyclic convolution of two real 1-D sequences via zero-padded FFTs."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 1 or b.ndim != 1:
        raise DimensionError("fft_convolve takes 1-D sequences")
    out_len = len(a) + len(b) - 1
    size = next_pow2(out_len)
    return ifft(fft(a, size) * fft(b, size), out_len)


def seeded_rng(seed):
    """Deterministic random stream for a 64-bit seed."""
    seed = operator.index(seed)
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must fit in 64 unsigned bits, got {seed}")
    return np.random.Generator(np.random.PCG64(seed))
