import numpy as np
import pytest

from monoforecast.lstm import Lstm, LstmConfig, _sigmoid
from monoforecast.numerics import finite_difference_check, make_rng


def make_lstm(F=3, H=4, layers=1, window=5, seed=0):
    return Lstm(LstmConfig(F, H, layers, window), make_rng(seed))


def test_sigmoid_matches_reference_and_is_stable():
    z = np.array([-800.0, -2.0, 0.0, 2.0, 800.0])
    out = _sigmoid(z)
    assert np.allclose(out[1:4], 1.0 / (1.0 + np.exp(-z[1:4])), atol=1e-15)
    assert out[0] == 0.0 and out[-1] == 1.0


def test_block_shapes_and_forget_bias():
    lstm = make_lstm(F=3, H=4, layers=2)
    names = [b.name for b in lstm.params]
    assert names == ["lstm.0.w", "lstm.0.u", "lstm.0.b",
                     "lstm.1.w", "lstm.1.u", "lstm.1.b"]
    assert lstm.params[0].values.shape == (16, 3)
    assert lstm.params[3].values.shape == (16, 4)
    b0 = lstm.params[2].values
    assert np.all(b0[4:8] == 1.0)
    assert np.all(b0[:4] == 0.0)


def test_zero_weights_give_zero_embedding():
    lstm = make_lstm()
    for p in lstm.params:
        p.values[:] = 0.0
    x = make_rng(1).standard_normal((2, 5, 3))
    emb, _ = lstm.forward(x)
    assert np.allclose(emb, 0.0)


def test_forward_is_pure():
    lstm = make_lstm()
    x = make_rng(2).standard_normal((3, 5, 3))
    a, _ = lstm.forward(x)
    b, _ = lstm.forward(x)
    assert np.array_equal(a, b)


def test_single_step_matches_hand_recurrence():
    # one layer, one timestep: h = o * tanh(i * g) with c0 = 0
    lstm = make_lstm(F=2, H=3, window=1, seed=4)
    w, u, b = lstm._layers[0]
    x = make_rng(5).standard_normal((1, 1, 2))
    z = x[0, 0] @ w.values.T + b.values
    H = 3
    i = 1 / (1 + np.exp(-z[:H]))
    f = 1 / (1 + np.exp(-z[H:2 * H]))
    g = np.tanh(z[2 * H:3 * H])
    o = 1 / (1 + np.exp(-z[3 * H:]))
    expect = o * np.tanh(i * g)
    emb, _ = lstm.forward(x)
    assert np.allclose(emb[0], expect, atol=1e-12)


def test_rejects_bad_shapes_and_nonfinite():
    lstm = make_lstm()
    with pytest.raises(ValueError):
        lstm.forward(np.zeros((2, 4, 3)))  # wrong window
    with pytest.raises(ValueError):
        lstm.forward(np.zeros((2, 5, 2)))  # wrong feature count
    bad = np.zeros((1, 5, 3))
    bad[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        lstm.forward(bad)
    with pytest.raises(ValueError):
        lstm.backward(None, np.zeros((1, 4)))


@pytest.mark.parametrize("layers", [1, 2])
def test_bptt_matches_finite_differences(layers):
    rng = make_rng(9)
    lstm = Lstm(LstmConfig(4, 8, layers, 8), rng)
    x = rng.standard_normal((3, 8, 4))
    gy = rng.standard_normal((3, 8))

    def loss():
        return float(np.sum(lstm.forward(x)[0] * gy))

    _, cache = lstm.forward(x)
    lstm.backward(cache, gy)
    assert finite_difference_check(loss, lstm.params, h=1e-5) < 1e-4


def test_input_gradient_matches_finite_differences():
    rng = make_rng(10)
    lstm = make_lstm(F=2, H=3, window=4, seed=10)
    x = rng.standard_normal((2, 4, 2))
    gy = rng.standard_normal((2, 3))
    _, cache = lstm.forward(x)
    gx = lstm.backward(cache, gy)
    assert gx.shape == x.shape
    h = 1e-6
    worst = 0.0
    for n in range(2):
        for t in range(4):
            for f in range(2):
                xp = x.copy(); xp[n, t, f] += h
                xm = x.copy(); xm[n, t, f] -= h
                num = (np.sum(lstm.forward(xp)[0] * gy)
                       - np.sum(lstm.forward(xm)[0] * gy)) / (2 * h)
                worst = max(worst, abs(gx[n, t, f] - num))
    assert worst < 1e-6
