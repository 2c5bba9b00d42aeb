from __future__ import annotations

import numpy as np
import pytest

from behavior_transfer.intrinsic import inverse_dynamics_loss_and_grads, make_embedding, make_rnd, rnd_loss_and_grads
from behavior_transfer.nets import Adam, init_mlp, mlp_backward, mlp_forward

from oracles import central_difference, relative_error


def test_mlp_backward_matches_finite_differences():
    rng = np.random.default_rng(0)
    params = init_mlp(rng, 3, 5, 2)
    x = rng.normal(size=(4, 3))
    w = rng.normal(size=(4, 2))

    def f():
        return float(np.sum(mlp_forward(params, x)[0] * w))

    out, cache = mlp_forward(params, x)
    grads, gx = mlp_backward(params, cache, w)
    num = central_difference(f, params, h=1e-6)
    for k in params:
        assert relative_error(grads[k], num[k]) < 1e-6, k
    num_x = central_difference(f, {"x": x}, h=1e-6)["x"]
    assert relative_error(gx, num_x) < 1e-6


@pytest.mark.parametrize("kind", ["mlp", "linear"])
def test_rnd_predictor_gradients(kind):
    rnd = make_rnd(4, 3, hidden=6, predictor_kind=kind, seed=1)
    x = np.random.default_rng(2).normal(size=(5, 4))
    _, grads = rnd_loss_and_grads(rnd, x)
    num = central_difference(lambda: rnd_loss_and_grads(rnd, x)[0], rnd.predictor_params, h=1e-5)
    for k in grads:
        assert relative_error(grads[k], num[k]) < 1e-4, k


def test_inverse_dynamics_gradients():
    f = make_embedding("inverse_dynamics", 4, 3, n_actions=3, hidden=6, seed=3)
    rng = np.random.default_rng(4)
    s, s2, a = rng.normal(size=(6, 4)), rng.normal(size=(6, 4)), rng.integers(3, size=6)
    _, g_emb, g_head = inverse_dynamics_loss_and_grads(f, s, a, s2)
    num_emb = central_difference(lambda: inverse_dynamics_loss_and_grads(f, s, a, s2)[0], f.params, h=1e-5)
    num_head = central_difference(lambda: inverse_dynamics_loss_and_grads(f, s, a, s2)[0], f.head_params, h=1e-5)
    for k in g_emb:
        assert relative_error(g_emb[k], num_emb[k]) < 1e-4, k
    for k in g_head:
        assert relative_error(g_head[k], num_head[k]) < 1e-4, k


def test_adam_first_step_is_lr_times_sign():
    p = {"w": np.array([1.0, -2.0, 0.5])}
    opt = Adam(lr=0.1, eps=1e-12)
    opt.step(p, {"w": np.array([3.0, -0.2, 0.0])})
    # bias-corrected m/sqrt(v) is sign(g) on the first step
    assert np.allclose(p["w"], [0.9, -1.9, 0.5])
    assert opt.t == 1


def test_adam_minimizes_quadratic():
    p = {"w": np.array([5.0, -3.0])}
    opt = Adam(lr=0.05)
    for _ in range(2000):
        opt.step(p, {"w": 2 * p["w"]})
    assert np.max(np.abs(p["w"])) < 1e-2
