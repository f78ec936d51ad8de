"""Layers with explicit forward and backward passes.

Sequence tensors are ``(batch, time, features)``; dense layers also accept
``(batch, features)``. Every layer caches what its backward pass needs during
``forward`` and exposes ``params`` / ``grads`` dictionaries keyed by name.
"""
import numpy as np

from . import lti
from .dn import delay_lti, impulse_response
from .errors import DimensionError, StateError
from .numerics import seeded_rng

ACTIVATIONS = ("identity", "tanh", "relu", "sigmoid", "softmax")


def _sigmoid(a):
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def activate(name, a):
    if name == "identity":
        return a
    if name == "tanh":
        return np.tanh(a)
    if name == "relu":
        return np.maximum(a, 0.0)
    if name == "sigmoid":
        return _sigmoid(a)
    if name == "softmax":
        z = a - a.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)
    raise ValueError(f"unknown activation {name!r}")


def activate_backward(name, a, y, g):
    """Gradient w.r.t. the pre-activation ``a`` given output ``y`` and upstream ``g``."""
    if name == "identity":
        return g
    if name == "tanh":
        return g * (1.0 - y * y)
    if name == "relu":
        return g * (a > 0)
    if name == "sigmoid":
        return g * y * (1.0 - y)
    if name == "softmax":
        return y * (g - (g * y).sum(axis=-1, keepdims=True))
    raise ValueError(f"unknown activation {name!r}")


def _check_activation(name):
    if name not in ACTIVATIONS:
        raise ValueError(f"unknown activation {name!r}; expected one of {ACTIVATIONS}")
    return name


def lecun_uniform(rng, shape, fan_in):
    limit = np.sqrt(3.0 / max(fan_in, 1))
    return rng.uniform(-limit, limit, size=shape)


def _rng(rng):
    if rng is None:
        return seeded_rng(0)
    if isinstance(rng, (int, np.integer)):
        return seeded_rng(int(rng))
    return rng


def _flat(a):
    return a.reshape(-1, a.shape[-1])


class Layer:
    """Shared plumbing; subclasses fill ``params`` and implement the passes."""

    kind = "layer"

    def __init__(self):
        self.params = {}
        self.grads = {}
        self._cache = None

    @property
    def n_params(self):
        return int(sum(p.size for p in self.params.values()))

    def frozen(self):
        return {}

    def config(self):
        raise NotImplementedError

    def zero_grads(self):
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def _need_cache(self):
        if self._cache is None:
            raise StateError(f"{type(self).__name__}.backward called before forward")
        return self._cache


class Dense(Layer):
    """Affine map plus activation applied to the last axis (time-distributed)."""

    kind = "dense"

    def __init__(self, d_in, d_out, activation="identity", rng=None):
        super().__init__()
        self.d_in, self.d_out = int(d_in), int(d_out)
        self.activation = _check_activation(activation)
        rng = _rng(rng)
        self.params = {
            "W": lecun_uniform(rng, (self.d_out, self.d_in), self.d_in),
            "b": np.zeros(self.d_out),
        }

    def config(self):
        return {"d_in": self.d_in, "d_out": self.d_out, "activation": self.activation}

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.d_in:
            raise DimensionError(f"Dense expects {self.d_in} input features, got {x.shape[-1]}")
        a = x @ self.params["W"].T + self.params["b"]
        y = activate(self.activation, a)
        self._cache = (x, a, y)
        return y

    def backward(self, g):
        x, a, y = self._need_cache()
        ga = activate_backward(self.activation, a, y, g)
        self.grads = {"W": _flat(ga).T @ _flat(x), "b": _flat(ga).sum(axis=0)}
        return ga @ self.params["W"]


class GatedEncoder(Layer):
    """Highway-style input encoder: ``f1(W_u x + b_u) * g + x * (1 - g)`` with
    ``g = sigmoid(W_g x + b_g)``; the gate bias starts at -1."""

    kind = "gated_encoder"

    def __init__(self, d_x, f1="identity", gate_bias=-1.0, rng=None):
        super().__init__()
        self.d_x = int(d_x)
        self.f1 = _check_activation(f1)
        rng = _rng(rng)
        self.params = {
            "W_u": lecun_uniform(rng, (self.d_x, self.d_x), self.d_x),
            "b_u": np.zeros(self.d_x),
            "W_g": lecun_uniform(rng, (self.d_x, self.d_x), self.d_x),
            "b_g": np.full(self.d_x, float(gate_bias)),
        }

    def config(self):
        return {"d_x": self.d_x, "f1": self.f1}

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.d_x:
            raise ValueError(f"gated encoder needs d_u == d_x == {self.d_x}, got {x.shape[-1]} inputs")
        p = self.params
        a = x @ p["W_u"].T + p["b_u"]
        h = activate(self.f1, a)
        gate = _sigmoid(x @ p["W_g"].T + p["b_g"])
        u = h * gate + x * (1.0 - gate)
        self._cache = (x, a, h, gate)
        return u

    def backward(self, gu):
        x, a, h, gate = self._need_cache()
        p = self.params
        ga = activate_backward(self.f1, a, h, gu * gate)
        gz = gu * (h - x) * gate * (1.0 - gate)
        self.grads = {
            "W_u": _flat(ga).T @ _flat(x),
            "b_u": _flat(ga).sum(axis=0),
            "W_g": _flat(gz).T @ _flat(x),
            "b_g": _flat(gz).sum(axis=0),
        }
        return ga @ p["W_u"] + gz @ p["W_g"] + gu * (1.0 - gate)


class LmuFitLayer(Layer):
    """Parallelisable LMU layer.

    ``u_t = f1(U_x x_t + b_u)``, ``m_t = Abar m_{t-1} + Bbar u_t`` per input
    channel, ``o_t = f2(W_m m_t + W_x x_t + b_o)``.

    ``mode="sequential"`` runs the recurrence; ``mode="parallel"`` uses the
    FFT (or dense) convolution when ``return_sequences`` is true and the
    single final-state product otherwise. Both modes compute the same
    function. With ``gated=True`` the encoder is a :class:`GatedEncoder`
    (requires ``d_u == d_x``). Abar, Bbar and the impulse response are frozen.
    """

    kind = "lmu_fit"

    def __init__(self, d_x, d_u, d, theta, d_o, f1="identity", f2="tanh",
                 mode="parallel", return_sequences=True, conv="fft", gated=False, rng=None):
        super().__init__()
        if mode not in ("sequential", "parallel"):
            raise ValueError(f"mode must be 'sequential' or 'parallel', got {mode!r}")
        if conv not in ("fft", "dense"):
            raise ValueError(f"conv must be 'fft' or 'dense', got {conv!r}")
        if gated and d_u != d_x:
            raise ValueError(f"gated encoder needs d_u == d_x, got d_u={d_u}, d_x={d_x}")
        self.d_x, self.d_u, self.d, self.d_o = int(d_x), int(d_u), int(d), int(d_o)
        self.theta = float(theta)
        self.f1 = _check_activation(f1)
        self.f2 = _check_activation(f2)
        self.mode = mode
        self.return_sequences = bool(return_sequences)
        self.conv = conv
        self.gated = bool(gated)
        self.dn = delay_lti(self.d, self.theta)
        self._responses = {}
        rng = _rng(rng)
        self.encoder = GatedEncoder(d_x, f1, rng=rng) if self.gated else None
        if self.gated:
            self.params = {"enc." + k: v for k, v in self.encoder.params.items()}
        else:
            self.params = {
                "U_x": lecun_uniform(rng, (self.d_u, self.d_x), self.d_x),
                "b_u": np.zeros(self.d_u),
            }
        self.params["W_m"] = lecun_uniform(rng, (self.d_o, self.d * self.d_u), self.d * self.d_u)
        self.params["W_x"] = lecun_uniform(rng, (self.d_o, self.d_x), self.d_x)
        self.params["b_o"] = np.zeros(self.d_o)

    @staticmethod
    def count_params(d_x, d_u, d, d_o):
        """Parameter count of the ungated layer."""
        return d_u * d_x + d_u + d_o * d * d_u + d_o * d_x + d_o

    def config(self):
        return {
            "d_x": self.d_x, "d_u": self.d_u, "d": self.d, "theta": self.theta,
            "d_o": self.d_o, "f1": self.f1, "f2": self.f2, "mode": self.mode,
            "return_sequences": self.return_sequences, "conv": self.conv,
            "gated": self.gated,
        }

    def response(self, n):
        H = self._responses.get(n)
        if H is None:
            H = self._responses[n] = impulse_response(self.dn, n)
        return H

    def frozen(self):
        out = {"Abar": self.dn.Abar, "Bbar": self.dn.Bbar}
        for n, H in self._responses.items():
            out[f"H{n}"] = H.H
        return out

    def _encode(self, x):
        if self.gated:
            self.encoder.params = {k[4:]: v for k, v in self.params.items() if k.startswith("enc.")}
            return None, self.encoder.forward(x)
        a_u = x @ self.params["U_x"].T + self.params["b_u"]
        return a_u, activate(self.f1, a_u)

    def forward(self, x):
        x = lti.as_sequence(x, "x")
        if x.shape[-1] != self.d_x:
            raise DimensionError(f"layer expects d_x={self.d_x}, got {x.shape[-1]}")
        n = x.shape[1]
        p = self.params
        a_u, u = self._encode(x)
        if self.mode == "sequential":
            M = lti.scan_sequential(self.dn, u)
            if not self.return_sequences:
                M = M[:, -1]
        elif self.return_sequences:
            H = self.response(n)
            M = lti.conv_fft(H, u) if self.conv == "fft" else lti.conv_dense(H, u)
        else:
            M = lti.final_state(self.response(n), u)
        x_out = x if self.return_sequences else x[:, -1]
        a_o = M @ p["W_m"].T + x_out @ p["W_x"].T + p["b_o"]
        o = activate(self.f2, a_o)
        self._cache = (x, a_u, u, M, a_o, o)
        return o

    def _memory_adjoint(self, g_M, n):
        if self.mode == "sequential":
            if not self.return_sequences:
                full = np.zeros((g_M.shape[0], n, g_M.shape[1]))
                full[:, -1] = g_M
                g_M = full
            return lti.scan_adjoint(self.dn, g_M)
        H = self.response(n)
        if not self.return_sequences:
            return lti.final_state_adjoint(H, g_M, n)
        if lti.choose_correlation(n, self.d) == "fft":
            return lti.corr_fft(H, g_M)
        return lti.corr_dense(H, g_M)

    def backward(self, g):
        x, a_u, u, M, a_o, o = self._need_cache()
        p = self.params
        n = x.shape[1]
        g_ao = activate_backward(self.f2, a_o, o, np.asarray(g, dtype=np.float64))
        x_out = x if self.return_sequences else x[:, -1]
        grads = {
            "W_m": _flat(g_ao).T @ _flat(M),
            "W_x": _flat(g_ao).T @ _flat(x_out),
            "b_o": _flat(g_ao).sum(axis=0),
        }
        g_u = self._memory_adjoint(g_ao @ p["W_m"], n)
        g_xo = g_ao @ p["W_x"]
        if self.gated:
            g_x = self.encoder.backward(g_u)
            grads.update({"enc." + k: v for k, v in self.encoder.grads.items()})
        else:
            g_au = activate_backward(self.f1, a_u, u, g_u)
            grads["U_x"] = _flat(g_au).T @ _flat(x)
            grads["b_u"] = _flat(g_au).sum(axis=0)
            g_x = g_au @ p["U_x"]
        if self.return_sequences:
            g_x = g_x + g_xo
        else:
            g_x[:, -1] += g_xo
        self.grads = {k: grads[k] for k in p}
        return g_x


class OriginalLmuCell(Layer):
    """The original coupled LMU cell, run strictly step by step.

    ``u_t = e_x.x_t + e_h.h_{t-1} + e_m.m_{t-1}`` (scalar),
    ``m_t = Abar m_{t-1} + Bbar u_t``,
    ``h_t = f(W_x x_t + W_h h_{t-1} + W_m m_t)``.
    """

    kind = "original_lmu"

    def __init__(self, d_x, d_h, d, theta, f="tanh", return_sequences=True, rng=None):
        super().__init__()
        self.d_x, self.d_h, self.d = int(d_x), int(d_h), int(d)
        self.theta = float(theta)
        self.f = _check_activation(f)
        self.return_sequences = bool(return_sequences)
        self.dn = delay_lti(self.d, self.theta)
        rng = _rng(rng)
        self.params = {
            "e_x": lecun_uniform(rng, (self.d_x,), self.d_x),
            "e_h": lecun_uniform(rng, (self.d_h,), self.d_h),
            "e_m": np.zeros(self.d),
            "W_x": lecun_uniform(rng, (self.d_h, self.d_x), self.d_x),
            "W_h": lecun_uniform(rng, (self.d_h, self.d_h), self.d_h),
            "W_m": lecun_uniform(rng, (self.d_h, self.d), self.d),
        }

    def config(self):
        return {"d_x": self.d_x, "d_h": self.d_h, "d": self.d, "theta": self.theta,
                "f": self.f, "return_sequences": self.return_sequences}

    def frozen(self):
        return {"Abar": self.dn.Abar, "Bbar": self.dn.Bbar}

    def step(self, x_t, h_prev, m_prev):
        p = self.params
        u = x_t @ p["e_x"] + h_prev @ p["e_h"] + m_prev @ p["e_m"]
        m = m_prev @ self.dn.Abar.T + u[:, None] * self.dn.b
        a = x_t @ p["W_x"].T + h_prev @ p["W_h"].T + m @ p["W_m"].T
        return activate(self.f, a), m, a

    def forward(self, x, h0=None, m0=None):
        x = lti.as_sequence(x, "x")
        B, n, d_x = x.shape
        if d_x != self.d_x:
            raise DimensionError(f"cell expects d_x={self.d_x}, got {d_x}")
        h = np.zeros((B, self.d_h)) if h0 is None else np.asarray(h0, dtype=np.float64)
        m = np.zeros((B, self.d)) if m0 is None else np.asarray(m0, dtype=np.float64)
        if h.shape != (B, self.d_h) or m.shape != (B, self.d):
            raise DimensionError("initial state shapes do not match the cell")
        hs = np.empty((B, n + 1, self.d_h))
        ms = np.empty((B, n + 1, self.d))
        As = np.empty((B, n, self.d_h))
        hs[:, 0], ms[:, 0] = h, m
        for t in range(n):
            h, m, a = self.step(x[:, t], h, m)
            hs[:, t + 1], ms[:, t + 1], As[:, t] = h, m, a
        self._cache = (x, hs, ms, As)
        return hs[:, 1:] if self.return_sequences else hs[:, -1]

    def backward(self, g):
        """Backpropagation through time over the whole cached sequence."""
        x, hs, ms, As = self._need_cache()
        p = self.params
        Abar, b = self.dn.Abar, self.dn.b
        B, n, _ = x.shape
        g = np.asarray(g, dtype=np.float64)
        if not self.return_sequences:
            full = np.zeros((B, n, self.d_h))
            full[:, -1] = g
            g = full
        grads = {k: np.zeros_like(v) for k, v in p.items()}
        gx = np.empty_like(x)
        gh_next = np.zeros((B, self.d_h))
        gm_next = np.zeros((B, self.d))
        for t in range(n - 1, -1, -1):
            h_prev, m_prev, m_t, h_t = hs[:, t], ms[:, t], ms[:, t + 1], hs[:, t + 1]
            ga = activate_backward(self.f, As[:, t], h_t, g[:, t] + gh_next)
            grads["W_x"] += ga.T @ x[:, t]
            grads["W_h"] += ga.T @ h_prev
            grads["W_m"] += ga.T @ m_t
            gm = ga @ p["W_m"] + gm_next
            gu = gm @ b
            grads["e_x"] += gu @ x[:, t]
            grads["e_h"] += gu @ h_prev
            grads["e_m"] += gu @ m_prev
            gx[:, t] = ga @ p["W_x"] + gu[:, None] * p["e_x"]
            gh_next = ga @ p["W_h"] + gu[:, None] * p["e_h"]
            gm_next = gm @ Abar + gu[:, None] * p["e_m"]
        self.grads = grads
        return gx


def original_lmu_step(cell, x_t, h_prev, m_prev):
    """One update of the original cell; returns ``(h_t, m_t)``."""
    x_t = np.atleast_2d(np.asarray(x_t, dtype=np.float64))
    h_prev = np.atleast_2d(np.asarray(h_prev, dtype=np.float64))
    m_prev = np.atleast_2d(np.asarray(m_prev, dtype=np.float64))
    if x_t.shape[1] != cell.d_x or h_prev.shape[1] != cell.d_h or m_prev.shape[1] != cell.d:
        raise DimensionError("state or input width does not match the cell")
    h, m, _ = cell.step(x_t, h_prev, m_prev)
    return h, m


LAYER_TYPES = {cls.kind: cls for cls in (Dense, GatedEncoder, LmuFitLayer, OriginalLmuCell)}


class Sequential:
    """A stack of layers trained end to end."""

    def __init__(self, layers):
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    __call__ = forward

    def backward(self, g):
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    def parameters(self):
        return {f"{i}.{k}": v for i, layer in enumerate(self.layers) for k, v in layer.params.items()}

    def gradients(self):
        return {f"{i}.{k}": v for i, layer in enumerate(self.layers) for k, v in layer.grads.items()}

    def frozen(self):
        return {f"{i}.{k}": v for i, layer in enumerate(self.layers) for k, v in layer.frozen().items()}

    @property
    def n_params(self):
        return sum(layer.n_params for layer in self.layers)

    def set_mode(self, mode):
        """Switch every LMU layer between sequential and parallel execution."""
        for layer in self.layers:
            if isinstance(layer, LmuFitLayer):
                layer.mode = mode
