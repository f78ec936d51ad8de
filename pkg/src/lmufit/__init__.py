"""Parallelisable Legendre Memory Units on numpy.

The Delay Network memory is a frozen linear time-invariant system, so its
state sequence can be computed by recurrence, by causal convolution with the
impulse response, or through FFTs. Training uses the parallel paths.
"""
__version__ = "0.1.0"

from ._backend import active as active_backend, set_backend  # noqa: E402
from .dn import decoder, delay_lti, discretize, impulse_response, make_delay_system  # noqa: E402
from .layers import Dense, GatedEncoder, LmuFitLayer, OriginalLmuCell, Sequential  # noqa: E402
from .lti import conv_dense, conv_fft, final_state, scan_sequential  # noqa: E402

__all__ = [
    "active_backend", "set_backend",
    "make_delay_system", "discretize", "delay_lti", "decoder", "impulse_response",
    "scan_sequential", "conv_dense", "conv_fft", "final_state",
    "Dense", "GatedEncoder", "LmuFitLayer", "OriginalLmuCell", "Sequential",
]
