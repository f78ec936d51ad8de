"""Delay Network: continuous realisation, ZOH discretisation, Legendre
decoders and the frozen impulse response."""
import hashlib
import math
import threading
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import _backend
from .numerics import expm_augmented, fft, next_pow2

# Feed-through term of the delay realisation; the state alone carries the output.
FEEDTHROUGH = 0.0

_RADIUS_SLACK = 1e-9


def _frozen(a):
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ContinuousLTI:
    d: int
    theta: float
    A: np.ndarray
    B: np.ndarray


@dataclass(frozen=True)
class DiscreteLTI:
    d: int
    theta: float
    Abar: np.ndarray
    Bbar: np.ndarray  # (d, 1)

    @property
    def b(self):
        return self.Bbar[:, 0]


@dataclass(frozen=True)
class DecoderCoefficients:
    d: int
    theta_prime: float
    theta: float
    coeffs: np.ndarray


@dataclass(frozen=True, eq=False)
class ImpulseResponse:
    """Columns ``Abar**j @ Bbar`` for ``j < n``; read-only."""

    d: int
    n: int
    H: np.ndarray
    HT: np.ndarray = field(repr=False)
    _spectra: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def spectrum(self, size):
        """Cached FFT of each state row of H, zero-padded to ``size``."""
        with self._lock:
            S = self._spectra.get(size)
        if S is None:
            S = fft(self.H, size)
            S.setflags(write=False)
            with self._lock:
                S = self._spectra.setdefault(size, S)
        return S


def make_delay_system(d, theta):
    """Pade-optimal delay realisation of order ``d`` with window ``theta`` steps."""
    if int(d) != d or d < 1:
        raise ValueError(f"order d must be a positive integer, got {d}")
    if not theta > 0 or not math.isfinite(theta):
        raise ValueError(f"theta must be positive, got {theta}")
    d = int(d)
    i = np.arange(d)[:, None]
    j = np.arange(d)[None, :]
    sign = np.where(i < j, -1.0, (-1.0) ** (i - j + 1))
    A = (2 * i + 1) * sign / theta
    B = ((2 * np.arange(d) + 1) * (-1.0) ** np.arange(d) / theta)[:, None]
    return ContinuousLTI(d, float(theta), _frozen(A), _frozen(B))


def discretize(sys):
    """Zero-order hold at dt = 1."""
    Abar, Bbar = expm_augmented(sys.A, sys.B)
    radius = float(np.abs(np.linalg.eigvals(Abar)).max())
    if radius > 1.0 + _RADIUS_SLACK:
        raise ArithmeticError(f"discretised system is unstable (spectral radius {radius})")
    return DiscreteLTI(sys.d, sys.theta, _frozen(Abar), _frozen(Bbar))


_lti_cache = {}
_lti_lock = threading.Lock()


def delay_lti(d, theta):
    """Cached ``discretize(make_delay_system(d, theta))``."""
    key = (int(d), float(theta))
    with _lti_lock:
        hit = _lti_cache.get(key)
    if hit is None:
        hit = discretize(make_delay_system(d, theta))
        with _lti_lock:
            hit = _lti_cache.setdefault(key, hit)
    return hit


def _shifted_legendre_sum(d, r):
    # (-1)^i * sum_l C(i, l) C(i+l, l) (-r)^l, summed exactly in rationals
    # and rounded once; r is a float, so Fraction(r) is exact
    q = Fraction(r)
    out = np.empty(d)
    for i in range(d):
        acc = sum(math.comb(i, l) * math.comb(i + l, l) * (-q) ** l for l in range(i + 1))
        out[i] = float((-1) ** i * acc)
    return out


def _shifted_legendre_recurrence(d, r):
    x = 2.0 * r - 1.0
    out = np.empty(d)
    out[0] = 1.0
    if d > 1:
        out[1] = x
    for i in range(1, d - 1):
        out[i + 1] = ((2 * i + 1) * x * out[i] - i * out[i - 1]) / (i + 1)
    return out


def decoder(d, theta_prime, theta):
    """Readout weights recovering ``u(t - theta_prime)`` from the state.

    Entry ``i`` is the shifted Legendre polynomial of degree ``i`` at
    ``theta_prime / theta``. Orders above 20 use the three-term recurrence,
    since the alternating binomial sum cancels badly there.
    """
    if int(d) != d or d < 1:
        raise ValueError(f"order d must be a positive integer, got {d}")
    if not theta > 0:
        raise ValueError(f"theta must be positive, got {theta}")
    if not 0 <= theta_prime <= theta:
        raise ValueError(f"theta_prime={theta_prime} outside [0, {theta}]")
    d = int(d)
    r = theta_prime / theta
    if d <= 20:
        coeffs = _shifted_legendre_sum(d, r)
    else:
        coeffs = _shifted_legendre_recurrence(d, r)
    return DecoderCoefficients(d, float(theta_prime), float(theta), _frozen(coeffs))


_h_cache = {}
_h_lock = threading.Lock()


def _system_key(sys, n):
    digest = hashlib.sha1(sys.Abar.tobytes() + sys.Bbar.tobytes()).hexdigest()
    return (sys.d, sys.theta, int(n), digest)


def impulse_response(sys, n):
    """First ``n`` impulse-response columns, computed by driving the recurrence
    with a unit impulse. Results are cached per system and horizon."""
    if int(n) != n or n < 1:
        raise ValueError(f"impulse response horizon must be >= 1, got {n}")
    key = _system_key(sys, n)
    with _h_lock:
        hit = _h_cache.get(key)
    if hit is not None:
        return hit
    u = np.zeros((1, int(n)))
    u[0, 0] = 1.0
    states = _backend.scan(sys.Abar, sys.b, u, np.zeros((1, sys.d)))[0]
    ir = ImpulseResponse(sys.d, int(n), _frozen(states.T), _frozen(states))
    with _h_lock:
        return _h_cache.setdefault(key, ir)


def fft_size(n):
    """Padded transform length for an acyclic length-n causal convolution."""
    return next_pow2(2 * n - 1)
