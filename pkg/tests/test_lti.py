import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lmufit import lti
from lmufit.dn import delay_lti, impulse_response
from lmufit.errors import DimensionError
from lmufit.numerics import seeded_rng


def power_sum(sys, u):
    """Closed form m_t = sum_{j<=t} Abar^{t-j} Bbar u_j for one channel."""
    n = len(u)
    out = np.zeros((n, sys.d))
    powers = [sys.Bbar[:, 0]]
    for _ in range(n - 1):
        powers.append(sys.Abar @ powers[-1])
    for t in range(n):
        out[t] = sum(powers[t - j] * u[j] for j in range(t + 1))
    return out


def setup(d, theta, n, shape, seed=0):
    s = delay_lti(d, theta)
    return s, impulse_response(s, n), seeded_rng(seed).standard_normal(shape)


def test_zero_input(backend):
    s = delay_lti(6, 12)
    assert not lti.scan_sequential(s, np.zeros((2, 30, 3))).any()


def test_single_step(backend):
    s = delay_lti(5, 9)
    u = np.array([[[2.0, -1.0]]])
    m = lti.scan_sequential(s, u)
    assert m.shape == (1, 1, 10)
    assert np.array_equal(m[0, 0, :5], s.Bbar[:, 0] * 2.0)
    assert np.array_equal(m[0, 0, 5:], s.Bbar[:, 0] * -1.0)


def test_scan_matches_power_sum(backend):
    s = delay_lti(8, 30)
    u = seeded_rng(1).standard_normal(128)
    got = lti.scan_sequential(s, u[None, :, None])[0]
    assert np.max(np.abs(got - power_sum(s, u))) < 1e-10


def test_scan_initial_state(backend):
    s = delay_lti(4, 10)
    m0 = seeded_rng(2).standard_normal((1, 4))
    m = lti.scan_sequential(s, np.zeros((1, 3, 1)), m0)
    assert np.allclose(m[0, 2], np.linalg.matrix_power(s.Abar, 3) @ m0[0], atol=1e-15)


def test_scan_bad_m0_shape():
    with pytest.raises(DimensionError):
        lti.scan_sequential(delay_lti(4, 10), np.zeros((1, 3, 2)), np.zeros((1, 4)))


@pytest.mark.parametrize("fn", [lti.conv_dense, lti.conv_fft, lti.final_state])
def test_convolutions_reject_m0(fn):
    s, H, u = setup(3, 5, 8, (1, 8, 1))
    with pytest.raises(ValueError):
        fn(H, u, m0=np.ones((1, 3)))


@pytest.mark.parametrize("fn", [lti.conv_dense, lti.conv_fft, lti.final_state])
def test_short_horizon(fn):
    s, H, u = setup(3, 5, 8, (1, 9, 1))
    with pytest.raises(ValueError):
        fn(H, u)


def test_bad_rank():
    with pytest.raises(DimensionError):
        lti.scan_sequential(delay_lti(2, 2), np.zeros((1, 2, 3, 4)))


def test_non_finite_input():
    u = np.zeros((1, 5, 1))
    u[0, 2, 0] = np.nan
    with pytest.raises(ValueError):
        lti.scan_sequential(delay_lti(2, 2), u)


@pytest.mark.parametrize("fn", [lti.conv_dense, lti.conv_fft])
def test_impulse_gives_columns(backend, fn):
    s, H, _ = setup(7, 20, 64, (1,))
    u = np.zeros((1, 64, 1))
    u[0, 0, 0] = 1.0
    assert np.max(np.abs(fn(H, u)[0] - H.HT)) < 1e-9


@pytest.mark.parametrize("d,n", [(4, 17), (16, 256), (32, 1024)])
def test_dense_matches_scan(backend, d, n):
    s, H, u = setup(d, n / 2, n, (2, n, 3), seed=d)
    assert np.max(np.abs(lti.conv_dense(H, u) - lti.scan_sequential(s, u))) < 1e-10


def test_channels_independent(backend):
    s, H, u = setup(6, 15, 50, (2, 50, 2))
    both = lti.conv_dense(H, u)
    for c in range(2):
        alone = lti.conv_dense(H, u[:, :, c:c + 1])
        assert np.array_equal(both[:, :, c * 6:(c + 1) * 6], alone)


def test_final_state_is_last_dense(backend):
    s, H, u = setup(10, 40, 200, (3, 200, 2))
    assert np.max(np.abs(lti.final_state(H, u) - lti.conv_dense(H, u)[:, -1])) < 1e-12


def test_final_state_impulse():
    s, H, _ = setup(6, 10, 5, (1,))
    u = np.zeros((1, 5, 1))
    u[0, 0, 0] = 1.0
    want = np.linalg.matrix_power(s.Abar, 4) @ s.Bbar[:, 0]
    assert np.allclose(lti.final_state(H, u)[0], want, atol=1e-15)


def test_final_state_dc_limit():
    s, H, _ = setup(1, 1, 200, (1,))
    assert lti.final_state(H, np.ones((1, 200, 1)))[0, 0] == pytest.approx(1.0, abs=1e-14)


@pytest.mark.parametrize("n", [1, 2, 17, 256, 4096])
def test_fft_matches_dense(backend, n):
    s, H, u = setup(32, max(n / 3, 1), n, (1, n, 2), seed=n)
    assert np.max(np.abs(lti.conv_fft(H, u) - lti.conv_dense(H, u))) < 1e-9


def test_fft_shorter_input_than_horizon(backend):
    s, H, u = setup(8, 20, 300, (2, 120, 1))
    assert np.max(np.abs(lti.conv_fft(H, u) - lti.scan_sequential(s, u))) < 1e-9
    g = seeded_rng(9).standard_normal((2, 120, 8))
    assert np.max(np.abs(lti.corr_fft(H, g) - lti.scan_adjoint(s, g))) < 1e-9


def test_fft_causality(backend):
    s, H, u = setup(12, 30, 256, (2, 256, 1))
    full = lti.conv_fft(H, u)
    for t in (0, 77, 200):
        cut = u.copy()
        cut[:, t + 1:] = 0.0
        assert np.max(np.abs(lti.conv_fft(H, cut)[:, :t + 1] - full[:, :t + 1])) < 1e-9


@pytest.mark.parametrize("path", ["scan", "dense", "fft"])
def test_linearity(path):
    s, H, u = setup(9, 25, 100, (2, 100, 2))
    v = seeded_rng(4).standard_normal(u.shape)
    run = {"scan": lambda x: lti.scan_sequential(s, x),
           "dense": lambda x: lti.conv_dense(H, x),
           "fft": lambda x: lti.conv_fft(H, x)}[path]
    assert np.max(np.abs(run(1.5 * u - 2 * v) - (1.5 * run(u) - 2 * run(v)))) < 1e-9


@settings(max_examples=25, deadline=None)
@given(batch=st.integers(1, 4), d=st.integers(1, 32), du=st.integers(1, 8),
       n=st.sampled_from([1, 2, 17, 256]), seed=st.integers(0, 2**32))
def test_three_way_equivalence(batch, d, du, n, seed):
    s, H, u = setup(d, 1.0 + seed % 500, n, (batch, n, du), seed)
    ref = lti.scan_sequential(s, u)
    assert np.max(np.abs(lti.conv_dense(H, u) - ref)) <= 1e-9
    assert np.max(np.abs(lti.conv_fft(H, u) - ref)) <= 1e-9
    assert np.max(np.abs(lti.final_state(H, u) - ref[:, -1])) <= 1e-9


def numeric_adjoint(run, u, g):
    # the maps are linear, so <g, run(e_i)> gives the adjoint exactly
    out = np.zeros(u.shape)
    for idx in np.ndindex(u.shape):
        e = np.zeros(u.shape)
        e[idx] = 1.0
        out[idx] = np.sum(g * run(e))
    return out


def test_adjoints_are_transposes(backend):
    s, H, u = setup(5, 8, 12, (2, 12, 2))
    g = seeded_rng(3).standard_normal((2, 12, 10))
    want = numeric_adjoint(lambda x: lti.scan_sequential(s, x), u, g)
    for got in (lti.scan_adjoint(s, g), lti.corr_dense(H, g), lti.corr_fft(H, g)):
        assert np.max(np.abs(got - want)) < 1e-12
    gn = g[:, -1]
    want_n = numeric_adjoint(lambda x: lti.final_state(H, x), u, gn)
    assert np.max(np.abs(lti.final_state_adjoint(H, gn, 12) - want_n)) < 1e-12


@pytest.mark.parametrize("n", [300, 1024])
def test_adjoint_paths_agree(backend, n):
    s, H, _ = setup(16, n / 4, n, (1,))
    g = seeded_rng(n).standard_normal((2, n, 32))
    ref = lti.scan_adjoint(s, g)
    assert np.max(np.abs(lti.corr_dense(H, g) - ref)) < 1e-9
    assert np.max(np.abs(lti.corr_fft(H, g) - ref)) < 1e-9


def test_counts():
    s, H, u = setup(8, 10, 64, (2, 64, 3))
    with lti.counting() as c:
        lti.scan_sequential(s, u)
        lti.conv_dense(H, u)
        lti.final_state(H, u)
        lti.conv_fft(H, u)
    K = 6
    assert c["scan"] == K * 64 * (64 + 8)
    assert c["conv_dense"] == K * 8 * 64 * 65 // 2
    assert c["final_state"] == K * 8 * 64
    N = 128
    assert c["conv_fft"] == K * (N // 2) * 7 + K * 8 * N + K * 8 * (N // 2) * 7


def test_counter_off_by_default():
    s, H, u = setup(4, 10, 16, (1, 16, 1))
    lti.counter.reset()
    lti.scan_sequential(s, u)
    assert sum(lti.counter.counts.values()) == 0


@pytest.mark.parametrize("n,d,want", [(8, 4, "dense"), (4096, 64, "fft")])
def test_choose_correlation(n, d, want):
    assert lti.choose_correlation(n, d) == want
