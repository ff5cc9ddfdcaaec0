import math

import numpy as np
import pytest

from ebsde import nn


def test_zero_network_outputs_zero():
    p = nn.init_mlp((1, 21, 21, 1), zero=True)
    assert np.all(nn.predict(p, np.linspace(-3, 3, 7)) == 0)


def test_hand_evaluated_toy():
    p = nn.MlpParams((1, 1, 1, 1), [np.ones((1, 1)), np.zeros(1), np.ones((1, 1)), np.zeros(1),
                                    np.ones((1, 1)), np.zeros(1)])
    assert nn.predict(p, [0.5])[0, 0] == pytest.approx(math.tanh(math.tanh(0.5)), rel=1e-15)


def test_init_deterministic_and_glorot_std():
    a, b = nn.init_mlp((1, 22, 22, 2), seed=5), nn.init_mlp((1, 22, 22, 2), seed=5)
    assert all(np.array_equal(x, y) for x, y in zip(a.arrays, b.arrays))
    assert all(np.all(bias == 0) for bias in a.arrays[1::2])
    big = nn.init_mlp((100, 100, 100, 100), seed=3)
    for w in big.arrays[0::2]:
        assert w.std() == pytest.approx(math.sqrt(2 / 200), rel=0.05)


def _loss(p, v, g):
    return float(np.sum(nn.predict(p, v) * g))


def test_backward_matches_finite_differences(rng):
    p = nn.init_mlp((1, 22, 22, 2), seed=1)
    v = rng.normal(size=17)
    g = rng.normal(size=(17, 2))
    _, cache = nn.forward(p, v)
    grads = np.concatenate([x.ravel() for x in nn.backward(p, cache, g)])
    flat = p.flat()
    for idx in rng.choice(len(flat), 100, replace=False):
        eps = 1e-5
        f = flat.copy()
        f[idx] += eps
        p.set_flat(f)
        lp = _loss(p, v, g)
        f[idx] -= 2 * eps
        p.set_flat(f)
        lm = _loss(p, v, g)
        p.set_flat(flat)
        fd = (lp - lm) / (2 * eps)
        assert abs(fd - grads[idx]) <= 1e-5 * max(abs(fd), abs(grads[idx]), 1e-6)


def test_backward_linear_in_grad_out(rng):
    p = nn.init_mlp((1, 21, 21, 1), seed=2)
    v = rng.normal(size=9)
    _, cache = nn.forward(p, v)
    g1, g2 = rng.normal(size=(2, 9, 1))
    a, b, c = nn.backward(p, cache, g1), nn.backward(p, cache, g2), nn.backward(p, cache, g1 + g2)
    assert all(np.allclose(x + y, z) for x, y, z in zip(a, b, c))
    assert all(np.all(x == 0) for x in nn.backward(p, cache, np.zeros((9, 1))))


def test_adam_zero_gradient_keeps_params():
    p = nn.init_mlp((1, 21, 21, 1), seed=2)
    st = nn.TrainState([p.copy()], 0.1, lr=1e-3, K=1.0)
    nn.adam_step(st, [[np.zeros_like(a) for a in p.arrays]], 0.0)
    assert st.step == 1 and st.lambda_bar == 0.1
    assert all(np.array_equal(a, b) for a, b in zip(st.nets[0].arrays, p.arrays))


def test_adam_first_step_is_minus_lr():
    p = nn.MlpParams((1, 1, 1, 1), [np.zeros((1, 1)) if k % 2 == 0 else np.zeros(1) for k in range(6)])
    st = nn.TrainState([p], 0.0, lr=1e-3, K=1.0)
    grads = [[np.ones_like(a) for a in p.arrays]]
    nn.adam_step(st, grads, 1.0)
    assert st.lambda_bar == pytest.approx(-1e-3 / (1 + 1e-8), rel=1e-12)
    assert st.nets[0].arrays[0][0, 0] == pytest.approx(-1e-3 / (1 + 1e-8), rel=1e-12)


def test_lambda_clamped():
    p = nn.init_mlp((1, 21, 21, 1), zero=True)
    st = nn.TrainState([p], 0.4999, lr=0.1, K=0.5)
    for _ in range(5):
        nn.adam_step(st, [[np.zeros_like(a) for a in p.arrays]], -1.0)
        assert st.lambda_bar <= 0.5
    assert st.lambda_bar == 0.5


def test_lr_decay():
    st = nn.TrainState([nn.init_mlp((1, 2, 2, 1))], lr=1.0, lr_decay=True)
    st.step = 5000
    assert st.current_lr() == 0.25


def test_checkpoint_round_trip(tmp_path, rng):
    nets = [nn.init_mlp((1, 21, 21, 1), 1), nn.init_mlp((1, 21, 21, 1), 2)]
    st = nn.TrainState(nets, 0.123456789012345678, lr=3e-4, K=0.6)
    for _ in range(3):
        nn.adam_step(st, [[rng.normal(size=a.shape) for a in n.arrays] for n in nets], rng.normal())
    nn.save_checkpoint(st, tmp_path / "c.json", {"solver": "laebsde"})
    back, meta = nn.load_checkpoint(tmp_path / "c.json")
    assert meta == {"solver": "laebsde"}
    assert back.lambda_bar == st.lambda_bar and back.step == 3 and back.m_lambda == st.m_lambda
    for n1, n2 in zip(st.nets, back.nets):
        assert all(np.array_equal(a, b) for a, b in zip(n1.arrays, n2.arrays))
    for m1, m2 in zip(st.v, back.v):
        assert all(np.array_equal(a, b) for a, b in zip(m1, m2))


def test_checkpoint_version_rejected(tmp_path):
    (tmp_path / "c.json").write_text('{"version": 99}')
    with pytest.raises(ValueError):
        nn.load_checkpoint(tmp_path / "c.json")
