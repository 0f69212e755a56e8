import math

import numpy as np
import pytest

from gradcheck import assert_grads_match, numeric_grad
from uavlora.nn import (
    Adam,
    FrozenStack,
    GRUCell,
    Linear,
    RecurrentNet,
    Tensor,
    as_tensor,
    categorical_entropy,
    categorical_log_prob,
    concat,
    gru_sequence,
    load_checkpoint,
    maximum,
    minimum,
    no_grad,
    orthogonal,
    sample_action,
    save_checkpoint,
    softmax,
    stack,
)

SEEDS = range(20)


def check(loss_of, leaves, seed=0):
    """Backprop ``loss_of()`` and compare every leaf gradient with central differences."""
    for t in leaves:
        t.grad = None
    loss_of().backward()
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in leaves]
    with no_grad():
        numeric = numeric_grad(lambda: float(loss_of().data), [t.data for t in leaves], np.random.default_rng(seed))
    assert_grads_match(analytic, numeric)


def param(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


@pytest.mark.parametrize("seed", SEEDS)
def test_mlp_gradients(seed):
    rng = np.random.default_rng(seed)
    l1, l2 = Linear(4, 6, rng), Linear(6, 3, rng)
    l1.b.data[:] = rng.standard_normal(6)
    x = param(rng, 5, 4)
    w = rng.standard_normal((5, 3))
    check(lambda: ((l2(l1(x).tanh()) * w).sum()), [x] + l1.parameters() + l2.parameters(), seed)


@pytest.mark.parametrize("seed", SEEDS)
def test_gru_cell_gradients(seed):
    rng = np.random.default_rng(seed)
    cell = GRUCell(3, 4, rng)
    for p in cell.parameters():
        p.data[:] = rng.standard_normal(p.data.shape) * 0.5
    x, h = param(rng, 2, 3), param(rng, 2, 4)
    w = rng.standard_normal((2, 4))
    check(lambda: (cell(x, cell(x, h)) * w).sum(), [x, h] + cell.parameters(), seed)


@pytest.mark.parametrize("seed", SEEDS)
def test_gru_sequence_gradients(seed):
    rng = np.random.default_rng(seed)
    cell = GRUCell(3, 4, rng)
    for p in cell.parameters():
        p.data[:] = rng.standard_normal(p.data.shape) * 0.5
    L, B = 5, 2
    xp, h0 = param(rng, L * B, 12), param(rng, B, 4)
    w = rng.standard_normal((L * B, 4))
    check(lambda: (gru_sequence(cell, xp, h0, L) * w).sum(), [xp, h0, cell.W_h, cell.b_h], seed)


@pytest.mark.parametrize("seed", range(5))
def test_fused_sequence_matches_step_by_step(seed):
    rng = np.random.default_rng(seed)
    net = RecurrentNet(5, 4, [3, 2], rng)
    xs, h0 = rng.standard_normal((6, 3, 5)), rng.standard_normal((3, 4))
    fused = net.sequence(xs, h0)
    loss = sum((o * o).sum() for o in fused)
    net.zero_grad()
    loss.backward()
    g_fused = [p.grad.copy() for p in net.parameters()]
    h, outs = Tensor(h0), [[], []]
    for t in range(6):
        heads, h = net.step(xs[t], h)
        for k in range(2):
            outs[k].append(heads[k])
    loop = [stack(o).reshape(18, -1) for o in outs]
    for a, b in zip(fused, loop):
        np.testing.assert_allclose(a.data, b.data, rtol=0, atol=1e-14)
    net.zero_grad()
    sum((o * o).sum() for o in loop).backward()
    for a, p in zip(g_fused, net.parameters()):
        np.testing.assert_allclose(a, p.grad, rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("seed", SEEDS)
def test_log_prob_and_entropy_gradients(seed):
    rng = np.random.default_rng(seed)
    logits = [param(rng, 4, n) for n in (17, 6, 5)]
    actions = np.stack([rng.integers(n, size=4) for n in (17, 6, 5)], axis=1)
    w = rng.standard_normal(4)
    check(lambda: (categorical_log_prob(logits, actions) * w).sum(), logits, seed)
    check(lambda: (categorical_entropy(logits) * w).sum(), logits, seed)


@pytest.mark.parametrize("seed", range(5))
def test_elementwise_op_gradients(seed):
    rng = np.random.default_rng(seed)
    a, b = param(rng, 3, 4), param(rng, 4)
    m = param(rng, 4, 2)
    pos = Tensor(rng.uniform(0.5, 2.0, (3, 4)), requires_grad=True)
    w = rng.standard_normal((3, 4))

    def f():
        y = (a * b + a / pos - pos.log() + a.exp() * 0.1 + a.sigmoid() - b) * w
        y = y + a.clip(-0.5, 0.5) * 2.0 + minimum(a, pos) + maximum(a, -pos)
        z = concat([y[:, :2], y[:, 2:].square()], axis=1)
        return z.sum(axis=0).mean() + (a @ m).sum() + stack([a, pos]).sum(axis=(0, 1)).sum() + (1.0 - a).sum()

    check(f, [a, b, m, pos], seed)


def test_quadratic_and_constant_losses():
    p = Tensor(np.array([1.0, -2.0, 3.5]), requires_grad=True)
    (p * p).sum().backward()
    np.testing.assert_array_equal(p.grad, 2 * p.data)
    q = Tensor(np.ones(3), requires_grad=True)
    ((q * 0.0).sum() + 3.0).backward()
    np.testing.assert_array_equal(q.grad, np.zeros(3))


def test_backward_twice_raises():
    p = Tensor(np.ones(2), requires_grad=True)
    loss = (p * p).sum()
    loss.backward()
    with pytest.raises(RuntimeError):
        loss.backward()


def test_no_grad_builds_no_graph():
    p = Tensor(np.ones(2), requires_grad=True)
    with no_grad():
        y = (p * 2).sum()
    assert not y.requires_grad


def test_zero_weight_gru_is_finite_and_pure():
    cell = GRUCell(3, 4, np.random.default_rng(0))
    for p in cell.parameters():
        p.data[:] = 0.0
    x, h = Tensor(np.ones((1, 3))), Tensor(np.full((1, 4), 0.8))
    h1 = cell(x, h)
    # r = z = 1/2 and n = 0, so h' = h / 2
    np.testing.assert_allclose(h1.data, 0.4)
    assert np.array_equal(h1.data, cell(x, h).data)


def test_gru_shape_mismatch():
    cell = GRUCell(3, 4, np.random.default_rng(0))
    with pytest.raises(ValueError):
        cell(Tensor(np.ones((1, 2))), Tensor(np.ones((1, 4))))


def test_orthogonal_init():
    W = orthogonal(np.random.default_rng(0), 6, 4, gain=2.0)
    np.testing.assert_allclose(W.T @ W, 4.0 * np.eye(4), atol=1e-12)


def test_frozen_stack_matches_nets():
    rng = np.random.default_rng(2)
    nets = [RecurrentNet(7, 8, [3, 2], rng) for _ in range(2)]
    fs = FrozenStack(nets)
    x, h = rng.standard_normal((2, 3, 7)), rng.standard_normal((2, 3, 8))
    heads, h_new = fs.step(x, h)
    for k, net in enumerate(nets):
        ref_heads, ref_h = net.step(Tensor(x[k]), Tensor(h[k]))
        np.testing.assert_allclose(h_new[k], ref_h.data, atol=1e-14)
        for a, b in zip(heads, ref_heads):
            np.testing.assert_allclose(a[k], b.data, atol=1e-14)


def test_sampling_saturation_and_entropy():
    rng = np.random.default_rng(0)
    logits = np.zeros((1000, 6))
    logits[:, 3] = 1e9
    actions, logp, ent = sample_action([logits, np.zeros((1000, 6))], rng)
    assert np.all(actions[:, 0] == 3)
    np.testing.assert_allclose(ent, math.log(6), atol=1e-12)
    np.testing.assert_allclose(logp, -math.log(6), atol=1e-12)
    with pytest.raises(FloatingPointError):
        sample_action([np.array([[np.nan, 0.0]])], rng)


def test_sampling_frequencies_match_softmax():
    rng = np.random.default_rng(1)
    lg = np.array([0.5, -1.0, 2.0, 0.0, 1.0])
    n = 100_000
    actions, _, _ = sample_action([np.tile(lg, (n, 1))], rng)
    p = softmax(lg)
    freq = np.bincount(actions[:, 0], minlength=5) / n
    assert np.all(np.abs(freq - p) <= 3 * np.sqrt(p * (1 - p) / n))


def test_sampled_log_prob_matches_tensor_log_prob():
    rng = np.random.default_rng(3)
    logits = [rng.standard_normal((4, n)) for n in (17, 6, 6, 5)]
    actions, logp, ent = sample_action(logits, rng)
    np.testing.assert_allclose(logp, categorical_log_prob([Tensor(l) for l in logits], actions).data, atol=1e-12)
    np.testing.assert_allclose(ent, categorical_entropy([Tensor(l) for l in logits]).data, atol=1e-12)
    for l in logits:
        np.testing.assert_allclose(softmax(l).sum(axis=-1), 1.0, atol=1e-12)


def test_adam_minimises_quadratic_and_clips():
    p = Tensor(np.array([5.0, -3.0]), requires_grad=True)
    opt = Adam([p], lr=0.1, max_grad_norm=1.0)
    for _ in range(500):
        opt.zero_grad()
        (p * p).sum().backward()
        norm = opt.step()
    assert np.all(np.abs(p.data) < 1e-2)
    p.data[:] = [300.0, 400.0]
    opt.zero_grad()
    (p * p).sum().backward()
    assert opt.step() == pytest.approx(1000.0)


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    a, b = RecurrentNet(5, 4, [3], rng), RecurrentNet(5, 4, [3], rng)
    path = tmp_path / "ck.npz"
    save_checkpoint(path, {"net": a})
    load_checkpoint(path, {"net": b})
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb and np.array_equal(pa.data, pb.data)


def test_as_tensor_passthrough():
    t = Tensor(np.ones(2))
    assert as_tensor(t) is t and isinstance(as_tensor([1.0]), Tensor)
