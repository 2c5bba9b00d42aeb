"""Small fully connected networks with hand-written gradients, and Adam.

Parameters are kept in plain ``dict[str, np.ndarray]`` so they can be
copied, digested and checkpointed without ceremony. The hidden
nonlinearity is ``tanh`` everywhere.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

Params = dict[str, np.ndarray]


def init_dense(rng: np.random.Generator, n_in: int, n_out: int, prefix: str, scale: Optional[float] = None) -> Params:
    scale = 1.0 / np.sqrt(n_in) if scale is None else scale
    return {
        f"{prefix}_W": rng.normal(0.0, scale, size=(n_out, n_in)),
        f"{prefix}_b": np.zeros(n_out),
    }


def init_mlp(rng: np.random.Generator, n_in: int, n_hidden: int, n_out: int) -> Params:
    params = init_dense(rng, n_in, n_hidden, "l1")
    params.update(init_dense(rng, n_hidden, n_out, "l2"))
    return params


def mlp_forward(params: Params, x: np.ndarray) -> tuple[np.ndarray, tuple]:
    """``x`` is ``(batch, n_in)``; returns outputs and a cache for backprop."""
    h = np.tanh(x @ params["l1_W"].T + params["l1_b"])
    out = h @ params["l2_W"].T + params["l2_b"]
    return out, (x, h)


def mlp_backward(params: Params, cache: tuple, grad_out: np.ndarray) -> tuple[Params, np.ndarray]:
    """Gradients w.r.t. parameters and w.r.t. the input."""
    x, h = cache
    grads = {
        "l2_W": grad_out.T @ h,
        "l2_b": grad_out.sum(axis=0),
    }
    grad_h = grad_out @ params["l2_W"]
    grad_pre = grad_h * (1.0 - h * h)
    grads["l1_W"] = grad_pre.T @ x
    grads["l1_b"] = grad_pre.sum(axis=0)
    grad_x = grad_pre @ params["l1_W"]
    return grads, grad_x


def copy_params(params: Params) -> Params:
    return {k: v.copy() for k, v in params.items()}


class Adam:
    """Adam over a parameter dict; moments are keyed like the parameters."""

    def __init__(self, lr: float = 2e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-4):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: Params = {}
        self.v: Params = {}
        self.t = 0

    def step(self, params: Params, grads: Params) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1**self.t
        corr2 = 1.0 - b2**self.t
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(params[k])
                self.v[k] = np.zeros_like(params[k])
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            params[k] -= self.lr * (m / corr1) / (np.sqrt(v / corr2) + self.eps)

    def reset(self) -> None:
        self.m.clear()
        self.v.clear()
        self.t = 0
