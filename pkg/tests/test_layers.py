import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lmufit import lti
from lmufit.dn import decoder, delay_lti
from lmufit.data import delay_task
from lmufit.errors import DimensionError, StateError
from lmufit.layers import (ACTIVATIONS, Dense, GatedEncoder, LmuFitLayer, OriginalLmuCell, Sequential,
                           activate, activate_backward, original_lmu_step)
from lmufit.numerics import seeded_rng
from lmufit.train import grad_check, nrmse

TOL = 1e-4


def rand(shape, seed=0):
    return seeded_rng(seed).standard_normal(shape)


@pytest.mark.parametrize("name", ACTIVATIONS)
def test_activation_backward_matches_difference(name):
    a = rand((3, 5), 1)
    g = rand((3, 5), 2)
    y = activate(name, a)
    got = activate_backward(name, a, y, g)
    eps = 1e-6
    num = np.zeros_like(a)
    for idx in np.ndindex(a.shape):
        up, dn = a.copy(), a.copy()
        up[idx] += eps
        dn[idx] -= eps
        num[idx] = np.sum(g * (activate(name, up) - activate(name, dn))) / (2 * eps)
    assert np.allclose(got, num, atol=1e-7)


def test_unknown_activation():
    with pytest.raises(ValueError):
        Dense(2, 2, "swish")


def test_sigmoid_extremes():
    y = activate("sigmoid", np.array([-800.0, 0.0, 800.0]))
    assert y.tolist() == [0.0, 0.5, 1.0]


def test_softmax_normalised():
    y = activate("softmax", 50 * rand((7, 10)))
    assert np.max(np.abs(y.sum(axis=-1) - 1.0)) < 1e-12


def test_dense_identity():
    layer = Dense(4, 4)
    layer.params["W"] = np.eye(4)
    x = rand((2, 6, 4))
    assert np.array_equal(layer.forward(x), x)


def test_dense_bad_width():
    with pytest.raises(DimensionError):
        Dense(3, 2).forward(np.zeros((2, 4)))


@pytest.mark.parametrize("act", ["identity", "tanh", "relu", "sigmoid"])
def test_dense_gradients(act):
    model = Sequential([Dense(3, 4, act, rng=1), Dense(4, 2, rng=2)])
    report = grad_check(model, rand((5, 3), 3), rand((5, 2), 4))
    assert report["max_rel_error"] < TOL


def test_backward_before_forward():
    for layer in (Dense(2, 2), GatedEncoder(2), LmuFitLayer(1, 1, 4, 5, 3), OriginalLmuCell(1, 2, 3, 4)):
        with pytest.raises(StateError):
            layer.backward(np.zeros((1, 1)))


def test_param_count_formula():
    layer = LmuFitLayer(3, 2, 5, 10.0, 7)
    assert layer.n_params == LmuFitLayer.count_params(3, 2, 5, 7) == 2 * 3 + 2 + 7 * 5 * 2 + 7 * 3 + 7


def test_full_scale_param_count():
    # single-input memory sized like the large psMNIST configuration
    n = LmuFitLayer.count_params(1, 1, 468, 346) + 346 * 10 + 10
    assert abs(n - 165_000) / 165_000 < 0.01


@pytest.mark.parametrize("kw", [dict(mode="scan"), dict(conv="toeplitz"), dict(gated=True, d_u=2)])
def test_bad_options(kw):
    args = dict(d_x=1, d_u=1, d=4, theta=5.0, d_o=2)
    args.update(kw)
    with pytest.raises(ValueError):
        LmuFitLayer(**args)


def test_wrong_input_width():
    with pytest.raises(DimensionError):
        LmuFitLayer(2, 1, 4, 5, 3).forward(np.zeros((1, 4, 3)))


def test_zero_input_zero_output():
    layer = LmuFitLayer(3, 2, 8, 20, 5, f1="tanh", f2="tanh", rng=4)
    assert not layer.forward(np.zeros((2, 30, 3))).any()


@pytest.mark.parametrize("conv", ["fft", "dense"])
def test_sequential_equals_parallel_full(conv):
    kw = dict(d_x=4, d_u=2, d=16, theta=60.0, d_o=8, f1="tanh", f2="tanh", conv=conv)
    seq = LmuFitLayer(mode="sequential", rng=5, **kw)
    par = LmuFitLayer(mode="parallel", rng=5, **kw)
    x = rand((3, 200, 4), 6)
    assert np.max(np.abs(seq.forward(x) - par.forward(x))) < 1e-9


def test_sequential_equals_parallel_final():
    kw = dict(d_x=2, d_u=3, d=10, theta=40.0, d_o=6, return_sequences=False)
    seq = LmuFitLayer(mode="sequential", rng=7, **kw)
    par = LmuFitLayer(mode="parallel", rng=7, **kw)
    x = rand((4, 150, 2), 8)
    out = par.forward(x)
    assert out.shape == (4, 6)
    assert np.max(np.abs(seq.forward(x) - out)) < 1e-9


def test_final_mode_pairs_last_input():
    layer = LmuFitLayer(2, 1, 4, 10.0, 3, f2="identity", return_sequences=False, rng=1)
    layer.params["W_m"][:] = 0.0
    x = rand((2, 12, 2), 2)
    assert np.allclose(layer.forward(x), x[:, -1] @ layer.params["W_x"].T)


def test_decoder_weights_delay_signal():
    d, theta = 12, 50
    layer = LmuFitLayer(1, 1, d, theta, 1, f1="identity", f2="identity", rng=0)
    layer.params["U_x"][:] = 1.0
    layer.params["W_x"][:] = 0.0
    layer.params["W_m"][0] = decoder(d, theta, theta).coeffs
    data = delay_task(3, 1000, theta, samples=4)
    out = layer.forward(data.inputs)
    assert nrmse(out[:, theta:], data.targets[:, theta:]) < 0.05


def test_decoder_weights_per_channel():
    d, theta = 8, 30
    layer = LmuFitLayer(2, 2, d, theta, 2, f2="identity", rng=0)
    layer.params["U_x"] = np.eye(2)
    layer.params["W_x"][:] = 0.0
    W = np.zeros((2, 2 * d))
    W[0, :d] = W[1, d:] = decoder(d, theta, theta).coeffs
    layer.params["W_m"] = W
    x = rand((1, 400, 2), 1)
    out = layer.forward(x)
    for c in range(2):
        want = lti.scan_sequential(delay_lti(d, theta), x[:, :, c:c + 1])[0] @ decoder(d, theta, theta).coeffs
        assert np.allclose(out[0, :, c], want, atol=1e-12)


CASES = [
    dict(mode="parallel", return_sequences=True, conv="fft"),
    dict(mode="parallel", return_sequences=True, conv="dense"),
    dict(mode="parallel", return_sequences=False),
    dict(mode="sequential", return_sequences=True),
    dict(mode="sequential", return_sequences=False),
    dict(mode="parallel", return_sequences=True, gated=True, d_u=2),
]


@pytest.mark.parametrize("case", CASES, ids=lambda c: "-".join(f"{k}={v}" for k, v in c.items()))
def test_lmu_gradients(case):
    kw = dict(d_x=2, d_u=3, d=4, theta=6.0, d_o=5, f1="tanh", f2="tanh", rng=3)
    kw.update(case)
    head = Dense(5, 2, rng=4)
    model = Sequential([LmuFitLayer(**kw), head])
    x = rand((3, 10, 2), 5)
    y = rand((3, 10, 2) if kw["return_sequences"] else (3, 2), 6)
    assert grad_check(model, x, y)["max_rel_error"] < TOL


def test_lmu_cross_entropy_gradients():
    model = Sequential([LmuFitLayer(1, 2, 4, 10.0, 6, f1="relu", f2="relu", return_sequences=False, rng=1),
                        Dense(6, 3, "softmax", rng=2)])
    x = rand((4, 10, 1), 3)
    y = np.array([0, 2, 1, 2])
    assert grad_check(model, x, y, loss="cross_entropy")["max_rel_error"] < TOL


def test_input_gradient():
    layer = LmuFitLayer(2, 2, 4, 5.0, 3, f1="tanh", rng=1)
    x = rand((2, 8, 2), 2)
    g = rand((2, 8, 3), 3)
    layer.forward(x)
    gx = layer.backward(g)
    eps = 1e-6
    num = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        up, dn = x.copy(), x.copy()
        up[idx] += eps
        dn[idx] -= eps
        num[idx] = np.sum(g * (layer.forward(up) - layer.forward(dn))) / (2 * eps)
    assert np.allclose(gx, num, atol=1e-7)


def test_zero_upstream_zero_grads():
    layer = LmuFitLayer(2, 2, 4, 5.0, 3, f1="tanh", rng=1)
    layer.forward(rand((2, 8, 2)))
    layer.backward(np.zeros((2, 8, 3)))
    assert all(not g.any() for g in layer.grads.values())


def test_double_upstream_doubles_grads():
    layer = LmuFitLayer(2, 2, 4, 5.0, 3, f1="tanh", f2="tanh", rng=1)
    layer.forward(rand((2, 8, 2)))
    g = rand((2, 8, 3), 1)
    layer.backward(g)
    once = {k: v.copy() for k, v in layer.grads.items()}
    layer.backward(2 * g)
    for k in once:
        assert np.allclose(layer.grads[k], 2 * once[k], rtol=1e-13, atol=1e-15)


def test_no_gradient_into_frozen():
    layer = LmuFitLayer(1, 1, 4, 5.0, 2, rng=0)
    layer.forward(rand((1, 9, 1)))
    layer.backward(rand((1, 9, 2)))
    assert set(layer.grads) == set(layer.params)
    assert not set(layer.frozen()) & set(layer.params)


def test_gate_saturated_closed():
    enc = GatedEncoder(3, "tanh", rng=0)
    enc.params["W_g"][:] = 0.0
    enc.params["b_g"][:] = -800.0
    x = rand((2, 5, 3))
    assert np.allclose(enc.forward(x), x, atol=1e-300)


def test_gate_half_open():
    enc = GatedEncoder(3, "tanh", rng=0)
    enc.params["W_g"][:] = 0.0
    enc.params["b_g"][:] = 0.0
    x = rand((2, 5, 3))
    h = np.tanh(x @ enc.params["W_u"].T + enc.params["b_u"])
    assert np.allclose(enc.forward(x), 0.5 * h + 0.5 * x, atol=1e-15)


def test_gate_initial_bias():
    enc = GatedEncoder(2, rng=0)
    assert enc.params["b_g"].tolist() == [-1.0, -1.0]


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31))
def test_gate_in_unit_interval(seed):
    enc = GatedEncoder(4, "relu", rng=seed)
    x = 20 * rand((2, 3, 4), seed)
    enc.forward(x)
    gate = enc._cache[3]
    assert np.all(gate >= 0.0) and np.all(gate <= 1.0)


def test_gate_dimension_mismatch():
    with pytest.raises(ValueError):
        GatedEncoder(3).forward(np.zeros((1, 2, 4)))


def test_gated_encoder_gradients():
    model = Sequential([GatedEncoder(3, "tanh", rng=1), Dense(3, 2, rng=2)])
    assert grad_check(model, rand((2, 4, 3), 3), rand((2, 4, 2), 4))["max_rel_error"] < TOL


def detached_pair(d=6, d_h=4, d_x=2, theta=12.0, f="identity"):
    cell = OriginalLmuCell(d_x, d_h, d, theta, f=f, rng=1)
    cell.params["e_h"][:] = 0.0
    cell.params["e_m"][:] = 0.0
    cell.params["W_h"][:] = 0.0
    layer = LmuFitLayer(d_x, 1, d, theta, d_h, f1="identity", f2=f, mode="sequential", rng=2)
    layer.params["U_x"] = cell.params["e_x"][None, :].copy()
    layer.params["W_m"] = cell.params["W_m"].copy()
    layer.params["W_x"] = cell.params["W_x"].copy()
    return cell, layer


def test_cell_reduces_to_layer():
    cell, layer = detached_pair()
    cell.params["W_x"][:] = 0.0
    layer.params["W_x"][:] = 0.0
    x = rand((3, 25, 2), 3)
    assert np.max(np.abs(cell.forward(x) - layer.forward(x))) < 1e-10


@pytest.mark.parametrize("f", ["tanh", "identity"])
def test_cell_zero_input(f):
    cell = OriginalLmuCell(2, 3, 4, 5.0, f=f, rng=0)
    h, m = original_lmu_step(cell, np.zeros((1, 2)), np.zeros((1, 3)), np.zeros((1, 4)))
    assert not h.any() and not m.any()


def test_cell_memory_follows_scan():
    cell = OriginalLmuCell(1, 3, 6, 15.0, rng=0)
    cell.params["e_x"][:] = 1.0
    cell.params["e_h"][:] = 0.0
    cell.params["e_m"][:] = 0.0
    x = rand((2, 40, 1), 1)
    cell.forward(x)
    ms = cell._cache[2][:, 1:]
    assert np.max(np.abs(ms - lti.scan_sequential(cell.dn, x))) < 1e-12


def test_cell_step_shape_check():
    cell = OriginalLmuCell(2, 3, 4, 5.0)
    with pytest.raises(DimensionError):
        original_lmu_step(cell, np.zeros((1, 2)), np.zeros((1, 4)), np.zeros((1, 4)))


@pytest.mark.parametrize("return_sequences", [True, False])
def test_cell_bptt_gradients(return_sequences):
    cell = OriginalLmuCell(2, 5, 4, 6.0, return_sequences=return_sequences, rng=3)
    cell.params["e_m"] = rand(4, 9) * 0.3
    model = Sequential([cell, Dense(5, 1, rng=4)])
    x = rand((2, 8, 2), 5)
    y = rand((2, 8, 1) if return_sequences else (2, 1), 6)
    assert grad_check(model, x, y)["max_rel_error"] < TOL


def test_cell_single_step_gradients():
    cell = OriginalLmuCell(2, 3, 4, 5.0, f="tanh", return_sequences=False, rng=1)
    cell.params["e_m"] = rand(4, 2)
    x = rand((2, 1, 2), 3)
    g = rand((2, 3), 4)
    cell.forward(x)
    cell.backward(g)
    p = cell.params
    u = x[:, 0] @ p["e_x"]
    m = u[:, None] * cell.dn.b
    ga = g * (1 - np.tanh(x[:, 0] @ p["W_x"].T + m @ p["W_m"].T) ** 2)
    gu = (ga @ p["W_m"]) @ cell.dn.b
    assert np.allclose(cell.grads["W_x"], ga.T @ x[:, 0], atol=1e-14)
    assert np.allclose(cell.grads["W_m"], ga.T @ m, atol=1e-14)
    assert np.allclose(cell.grads["e_x"], gu @ x[:, 0], atol=1e-14)
    assert not cell.grads["W_h"].any() and not cell.grads["e_h"].any() and not cell.grads["e_m"].any()


def test_detached_cell_matches_layer_gradients():
    cell, layer = detached_pair(f="tanh")
    x = rand((2, 12, 2), 7)
    g = rand((2, 12, 4), 8)
    cell.forward(x)
    gx_cell = cell.backward(g)
    layer.forward(x)
    gx_layer = layer.backward(g)
    assert np.allclose(cell.grads["e_x"], layer.grads["U_x"][0], atol=1e-12)
    assert np.allclose(cell.grads["W_m"], layer.grads["W_m"], atol=1e-12)
    assert np.allclose(cell.grads["W_x"], layer.grads["W_x"], atol=1e-12)
    assert np.allclose(gx_cell, gx_layer, atol=1e-12)


def test_sequential_set_mode():
    model = Sequential([LmuFitLayer(1, 1, 6, 20.0, 4, rng=1), Dense(4, 1, rng=2)])
    x = rand((2, 64, 1), 3)
    par = model.forward(x)
    model.set_mode("sequential")
    assert model.layers[0].mode == "sequential"
    assert np.max(np.abs(model.forward(x) - par)) < 1e-9

