# cython: language_level=3
"""Compiled hot loops: LTI scan, its adjoint, causal convolution/correlation
against a frozen impulse response, and an iterative radix-2 FFT.

Every function mirrors the signature of its counterpart in ``_pykernels``.
Inputs are assumed float64 (complex128 for the FFT) and C-contiguous; the
wrappers in ``_backend`` enforce this.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin, M_PI
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef inline void _gemm_rm(bint ta, bint tb, int m, int n, int k, double alpha,
                          const double* a, int lda, const double* b, int ldb, double beta,
                          double* c, int ldc) noexcept nogil:
    # row-major C(m x n) = alpha op(A) op(B) + beta C, via the column-major
    # identity C^T = op(B)^T op(A)^T
    cdef char tra = b'T' if ta else b'N'
    cdef char trb = b'T' if tb else b'N'
    dgemm(&trb, &tra, &n, &m, &k, &alpha, <double*>b, &ldb, <double*>a, &lda, &beta, c, &ldc)


def scan(const double[:, ::1] A, const double[::1] b, const double[:, ::1] u,
         const double[:, ::1] m0):
    """out[k, t] = A @ out[k, t-1] + b * u[k, t], starting from m0[k]."""
    cdef int K = u.shape[0], n = u.shape[1], d = A.shape[0]
    out_arr = np.empty((K, n, d), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef int t, k, i
    cdef int ld = n * d
    if K == 0 or n == 0:
        return out_arr
    with nogil:
        for t in range(n):
            if t == 0:
                _gemm_rm(False, True, K, d, d, 1.0, &m0[0, 0], d, &A[0, 0], d,
                         0.0, &out[0, 0, 0], ld)
            else:
                _gemm_rm(False, True, K, d, d, 1.0, &out[0, t - 1, 0], ld,
                         &A[0, 0], d, 0.0, &out[0, t, 0], ld)
            for k in range(K):
                for i in range(d):
                    out[k, t, i] += b[i] * u[k, t]
    return out_arr


def scan_adjoint(const double[:, ::1] A, const double[::1] b, const double[:, :, ::1] g):
    """Reverse-time recurrence lam_t = g_t + A^T lam_{t+1}; returns b . lam_t."""
    cdef int K = g.shape[0], n = g.shape[1], d = A.shape[0]
    gu_arr = np.zeros((K, n), dtype=np.float64)
    cdef double[:, ::1] gu = gu_arr
    lam_arr = np.zeros((K, d), dtype=np.float64)
    nxt_arr = np.zeros((K, d), dtype=np.float64)
    cdef double[:, ::1] lam = lam_arr
    cdef double[:, ::1] nxt = nxt_arr
    cdef int t, k, i, one = 1
    cdef double s
    if K == 0 or n == 0:
        return gu_arr
    with nogil:
        for t in range(n - 1, -1, -1):
            for k in range(K):
                for i in range(d):
                    nxt[k, i] = g[k, t, i]
            if t < n - 1:
                _gemm_rm(False, False, K, d, d, 1.0, &lam[0, 0], d, &A[0, 0], d,
                         1.0, &nxt[0, 0], d)
            for k in range(K):
                s = 0.0
                for i in range(d):
                    lam[k, i] = nxt[k, i]
                    s = s + nxt[k, i] * b[i]
                gu[k, t] = s
    return gu_arr


def causal_conv(const double[:, ::1] HT, const double[:, ::1] u):
    """out[k, t] = sum_{j<=t} HT[j] * u[k, t-j]."""
    cdef int K = u.shape[0], n = u.shape[1], d = HT.shape[1]
    out_arr = np.empty((K, n, d), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    urev_arr = np.ascontiguousarray(np.asarray(u)[:, ::-1])
    cdef const double[:, ::1] urev = urev_arr
    cdef int t
    if K == 0 or n == 0:
        return out_arr
    with nogil:
        for t in range(n):
            # urev[:, n-1-t+j] == u[:, t-j]
            _gemm_rm(False, False, K, d, t + 1, 1.0, &urev[0, n - 1 - t], n,
                     &HT[0, 0], d, 0.0, &out[0, t, 0], n * d)
    return out_arr


def causal_corr(const double[:, ::1] HT, const double[:, :, ::1] g):
    """gu[k, t] = sum_{j < n-t} HT[j] . g[k, t+j]  (adjoint of causal_conv)."""
    cdef int K = g.shape[0], n = g.shape[1], d = g.shape[2]
    gu_arr = np.zeros((K, n), dtype=np.float64)
    cdef double[:, ::1] gu = gu_arr
    cdef int tile = 128
    buf_arr = np.empty(tile * max(n, 1), dtype=np.float64)
    cdef double[::1] buf = buf_arr
    cdef int k, t0, t1, i, j, tp
    cdef double* row
    if K == 0 or n == 0 or d == 0:
        return gu_arr
    with nogil:
        for k in range(K):
            t0 = 0
            while t0 < n:
                t1 = min(n, t0 + tile)
                # buf[i, j] = g[k, t0+i] . HT[j] for j < t1; only j <= t0+i is used
                _gemm_rm(False, True, t1 - t0, t1, d, 1.0, &g[k, t0, 0], d,
                         &HT[0, 0], d, 0.0, &buf[0], t1)
                for i in range(t1 - t0):
                    tp = t0 + i
                    row = &buf[i * t1]
                    for j in range(tp + 1):
                        gu[k, tp - j] += row[j]
                t0 = t1
    return gu_arr


def fft_rows(x, bint inverse=False):
    """Radix-2 decimation-in-time FFT along the last axis of a 2-D array."""
    cdef const double complex[:, ::1] src = np.ascontiguousarray(x, dtype=np.complex128)
    cdef int R = src.shape[0], N = src.shape[1]
    out_arr = np.empty((R, N), dtype=np.complex128)
    cdef double complex[:, ::1] y = out_arr
    if N == 0 or R == 0:
        return out_arr
    if N & (N - 1):
        raise ValueError(f"transform size {N} is not a power of two")
    cdef int bits = 0
    while (1 << bits) < N:
        bits += 1
    rev_arr = np.zeros(N, dtype=np.intp)
    cdef Py_ssize_t[::1] rev = rev_arr
    tw_arr = np.empty(max(N // 2, 1), dtype=np.complex128)
    cdef double complex[::1] tw = tw_arr
    cdef int i, j, r, m, start, k, step
    cdef double sign = 1.0 if inverse else -1.0
    cdef double complex e, o, w
    for i in range(N):
        j = 0
        for k in range(bits):
            if i & (1 << k):
                j |= 1 << (bits - 1 - k)
        rev[i] = j
    for k in range(N // 2):
        tw[k] = cos(2.0 * M_PI * k / N) + 1j * sign * sin(2.0 * M_PI * k / N)
    with nogil:
        for r in range(R):
            for i in range(N):
                y[r, rev[i]] = src[r, i]
            m = 1
            while m < N:
                step = N // (2 * m)
                start = 0
                while start < N:
                    for k in range(m):
                        w = tw[k * step]
                        e = y[r, start + k]
                        o = y[r, start + k + m] * w
                        y[r, start + k] = e + o
                        y[r, start + k + m] = e - o
                    start += 2 * m
                m *= 2
            if inverse:
                for i in range(N):
                    y[r, i] = y[r, i] / N
    return out_arr
