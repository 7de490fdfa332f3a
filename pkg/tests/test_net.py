from __future__ import annotations

import numpy as np
import pytest

from neurosplit.net import (
    Architecture,
    DivergenceError,
    Network,
    OptimizerState,
    adam_step,
    forward,
    forward_with_tangent,
    grad_input,
    grad_params,
    init_params,
    load_network,
    save_network,
)


def random_arch(rng) -> Architecture:
    return Architecture(
        depth=int(rng.integers(2, 5)),
        width=int(rng.integers(2, 9)),
        activation=str(rng.choice(["tanh", "sin"])),
        out_dim=int(rng.integers(1, 4)),
        fourier=int(rng.integers(0, 3)),
        adaptive_slope=bool(rng.integers(0, 2)),
    )


def randomized(arch: Architecture, seed: int) -> Network:
    net = init_params(arch, seed)
    rng = np.random.default_rng(seed + 1000)
    net.theta[:] += 0.3 * rng.standard_normal(net.theta.size)
    return net


def quad_loss(target, target_d, wd=0.5):
    def fn(x, dx):
        r, rd = x - target, dx - target_d
        return float(np.sum(r * r) + wd * np.sum(rd * rd)), 2 * r, 2 * wd * rd

    return fn


def fd_param_grad_check(net, t, loss_fn, h=1e-5):
    loss, g = grad_params(net, t, loss_fn)
    mask = net.slope_mask()
    fd = np.zeros_like(g)
    for k in range(net.theta.size):
        if mask[k] == 0:
            continue
        old = net.theta[k]
        net.theta[k] = old + h
        lp = loss_fn(*forward_with_tangent(net, t)[:2])[0]
        net.theta[k] = old - h
        lm = loss_fn(*forward_with_tangent(net, t)[:2])[0]
        net.theta[k] = old
        fd[k] = (lp - lm) / (2 * h)
    return g, fd


def test_init_determinism_and_shapes():
    arch = Architecture(5, 40)
    a, b = init_params(arch, 7), init_params(arch, 7)
    assert a.theta.tobytes() == b.theta.tobytes()
    assert len(a.weights) == 5
    assert all(W.shape == (40, 40) for W in a.weights[1:-1])
    assert np.any(init_params(arch, 8).theta != a.theta)


def test_zero_weight_network():
    net = init_params(Architecture(3, 5), 0)
    net.theta[:] = 0.0
    net.slopes[:] = 1.0
    net.biases[-1][:] = 2.5
    for t in (-1.0, 0.3, 0.9):
        assert forward(net, t)[0] == 2.5
        assert grad_input(net, t)[0] == 0.0


def test_batch_is_map():
    net = randomized(Architecture(3, 6, out_dim=2, fourier=1), 3)
    t = np.array([-0.4, 0.7])
    out = forward(net, t)
    np.testing.assert_allclose(out[0], forward(net, -0.4), rtol=0, atol=1e-15)
    np.testing.assert_allclose(out[1], forward(net, 0.7), rtol=0, atol=1e-15)


def test_hand_set_tanh_net():
    net = Network(Architecture(2, 1), np.array([1.0, 0.0, 1.0, 0.0, 1.0]))
    assert forward(net, 0.0)[0] == 0.0
    assert forward(net, 0.5)[0] == pytest.approx(np.tanh(0.5))


def test_grad_params_matches_finite_differences():
    rng = np.random.default_rng(0)
    worst = 0.0
    for case in range(20):
        arch = random_arch(rng)
        net = randomized(arch, case)
        t = rng.uniform(-1, 1, 4)
        fn = quad_loss(rng.standard_normal((4, arch.out_dim)), rng.standard_normal((4, arch.out_dim)))
        g, fd = fd_param_grad_check(net, t, fn)
        worst = max(worst, np.max(np.abs(g - fd)) / max(np.max(np.abs(fd)), 1e-12))
    assert worst < 1e-5


def test_grad_params_structure():
    net = randomized(Architecture(3, 4, out_dim=2), 1)
    t = np.linspace(-1, 1, 5)

    def only_first(x, dx):
        return float(np.sum(x[:, 0] ** 2)), np.column_stack([2 * x[:, 0], 0 * x[:, 1]]), 0 * dx

    _, g = grad_params(net, t, only_first)
    # the second output row of the last layer does not affect the loss
    last_w = net.weights[-1]
    offset = net.arch.n_params - (net.arch.depth - 1) - last_w.size - 2
    assert np.all(g[offset + last_w.shape[1]: offset + 2 * last_w.shape[1]] == 0.0)
    fn = quad_loss(np.ones((5, 2)), np.zeros((5, 2)))
    l1, g1 = grad_params(net, t, fn)
    l2, g2 = grad_params(net, t, lambda x, dx: tuple(2 * v for v in fn(x, dx)))
    assert l2 == pytest.approx(2 * l1)
    np.testing.assert_allclose(g2, 2 * g1, rtol=1e-14)


def test_grad_params_nonfinite_raises():
    net = init_params(Architecture(2, 3), 0)
    with pytest.raises(DivergenceError):
        grad_params(net, np.zeros(2), lambda x, dx: (np.nan, x, dx))


def test_grad_input_matches_finite_differences():
    rng = np.random.default_rng(5)
    worst = 0.0
    for case in range(100):
        arch = random_arch(rng)
        net = randomized(arch, 100 + case)
        t = float(rng.uniform(-0.9, 0.9))
        h = 1e-6
        fd = (forward(net, t + h) - forward(net, t - h)) / (2 * h)
        d = grad_input(net, t)
        worst = max(worst, np.max(np.abs(d - fd)) / max(np.max(np.abs(fd)), 1e-3))
    assert worst < 1e-4


def test_fourier_channel_derivative():
    # pick out the sin(2 pi t) feature with an identity-like tail
    arch = Architecture(2, 1, fourier=1)
    net = Network(arch, np.zeros(arch.n_params))
    net.weights[0][0] = [0.0, 1.0, 0.0]
    net.weights[1][0] = [1.0]
    net.slopes[:] = 1.0
    t = 0.2
    z = np.sin(2 * np.pi * t)
    expected = (1 - np.tanh(z) ** 2) * 2 * np.pi * np.cos(2 * np.pi * t)
    assert grad_input(net, t)[0] == pytest.approx(expected, rel=1e-12)


def test_frozen_slopes_equal_plain_network():
    base = randomized(Architecture(4, 5), 2)
    adaptive = Network(Architecture(4, 5, adaptive_slope=True), base.theta.copy())
    t = np.linspace(-1, 1, 7)
    np.testing.assert_array_equal(forward(base, t), forward(adaptive, t))


def test_adam_first_step():
    net = init_params(Architecture(2, 3), 0)
    before = net.theta.copy()
    opt = OptimizerState("adam", lr=1e-4)
    adam_step(opt, net, np.ones_like(net.theta))
    np.testing.assert_allclose(before - net.theta, 1e-4, rtol=1e-6)


def test_adamax_first_step_exact():
    net = init_params(Architecture(2, 3), 0)
    before = net.theta.copy()
    opt = OptimizerState("adamax", lr=1e-3)
    adam_step(opt, net, np.ones_like(net.theta))
    np.testing.assert_allclose(before - net.theta, 1e-3, rtol=1e-12)


def test_optimizer_identities():
    net = init_params(Architecture(2, 3), 0)
    before = net.theta.copy()
    opt = OptimizerState("adam", lr=1e-3)
    adam_step(opt, net, np.zeros_like(net.theta))
    np.testing.assert_array_equal(net.theta, before)
    assert opt.step == 1
    opt0 = OptimizerState("adam", lr=0.0)
    adam_step(opt0, net, np.random.default_rng(0).standard_normal(net.theta.size))
    np.testing.assert_array_equal(net.theta, before)


def test_learning_rate_schedule():
    opt = OptimizerState(lr=1.0, gamma=0.5, decay_every=10)
    opt.step = 25
    assert opt.current_lr == 0.25


def test_save_load_roundtrip(tmp_path):
    net = randomized(Architecture(3, 4, "sin", out_dim=2, fourier=1, adaptive_slope=True), 9)
    path = save_network(net, tmp_path / "net.txt")
    back = load_network(path)
    assert back.arch == net.arch
    assert back.theta.tobytes() == net.theta.tobytes()
