"""NGU intrinsic reward: episodic k-NN novelty, RND life-long novelty, and
the clamped modulation that combines them.

Running statistics are exact count-weighted streaming moments, not
exponential averages.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import UsageError, ValidationError
from .nets import Adam, Params, copy_params, init_dense, init_mlp, mlp_backward, mlp_forward


@dataclass
class NGUConfig:
    k: int = 10
    c: float = 0.001
    eps_kernel: float = 0.001
    xi: float = 0.008
    s_m: float = 8.0
    L: float = 5.0
    d2m_floor: float = 1e-9

    def __post_init__(self):
        if self.k < 1:
            raise ValidationError("k must be >= 1")
        if self.L < 1:
            raise ValidationError("L must be >= 1")
        if self.eps_kernel <= 0:
            raise ValidationError("eps_kernel must be > 0")
        if self.c < 0 or self.xi < 0 or self.s_m <= 0 or self.d2m_floor <= 0:
            raise ValidationError("c, xi must be >= 0; s_m, d2m_floor must be > 0")


class RunningMeanStd:
    """Exact streaming mean and (population) variance over scalars."""

    def __init__(self):
        self.count = 0
        self.mean = 0.0
        self._m2 = 0.0

    def update(self, values) -> None:
        x = np.asarray(values, dtype=float).ravel()
        n = x.size
        if n == 0:
            return
        b_mean = float(x.mean())
        b_m2 = float(((x - b_mean) ** 2).sum())
        total = self.count + n
        delta = b_mean - self.mean
        self.mean += delta * n / total
        self._m2 += b_m2 + delta * delta * self.count * n / total
        self.count = total

    @property
    def var(self) -> float:
        return self._m2 / self.count if self.count else 0.0

    @property
    def std(self) -> float:
        return math.sqrt(self.var)

    def copy(self) -> "RunningMeanStd":
        out = RunningMeanStd()
        out.count, out.mean, out._m2 = self.count, self.mean, self._m2
        return out

    def state(self) -> tuple[int, float, float]:
        return self.count, self.mean, self._m2


class EpisodicMemory:
    """Embeddings of the states visited in the current episode.

    ``reset`` empties the store; the running mean of k-NN squared
    distances (``d2_running_mean``) persists for the whole run.
    """

    def __init__(self, dim: int, initial_capacity: int = 64):
        self.dim = dim
        self._buf = np.empty((initial_capacity, dim))
        self._n = 0
        self.d2_stats = RunningMeanStd()

    def __len__(self) -> int:
        return self._n

    @property
    def embeddings(self) -> np.ndarray:
        return self._buf[: self._n]

    @property
    def d2_running_mean(self) -> float:
        return self.d2_stats.mean

    @property
    def count_updates(self) -> int:
        return self.d2_stats.count

    def reset(self) -> None:
        self._n = 0

    def add(self, e: np.ndarray) -> None:
        if self._n == len(self._buf):
            grown = np.empty((2 * len(self._buf), self.dim))
            grown[: self._n] = self._buf[: self._n]
            self._buf = grown
        self._buf[self._n] = e
        self._n += 1

    def knn_sq_distances(self, e: np.ndarray, k: int) -> np.ndarray:
        """Squared distances to the (up to) ``k`` nearest stored embeddings, ascending."""
        if self._n == 0:
            return np.empty(0)
        diff = self.embeddings - e
        d2 = np.einsum("ij,ij->i", diff, diff)
        if self._n > k:
            d2 = np.partition(d2, k - 1)[:k]
        return np.sort(d2)


def episodic_reward(mem: EpisodicMemory, e: np.ndarray, cfg: NGUConfig) -> float:
    """Episodic novelty of embedding ``e`` against ``mem``.

    Updates the running mean of neighbor distances; the caller appends ``e``
    to the memory afterwards.
    """
    d_k = mem.knn_sq_distances(np.asarray(e, dtype=float), cfg.k)
    if d_k.size == 0:
        return 1.0 / cfg.c if cfg.c > 0 else 1.0 / cfg.eps_kernel
    mem.d2_stats.update(d_k)
    d2m = mem.d2_running_mean
    if d2m < cfg.d2m_floor:
        d_n = np.zeros_like(d_k)
    else:
        d_n = d_k / d2m
    d_n = np.maximum(d_n - cfg.xi, 0.0)
    k_v = cfg.eps_kernel / (d_n + cfg.eps_kernel)
    s = math.sqrt(float(k_v.sum())) + cfg.c
    if s > cfg.s_m:
        return 0.0
    return 1.0 / s


def kernel(x: np.ndarray, y: np.ndarray, d2m: float, cfg: NGUConfig) -> float:
    """Inverse kernel used for pseudo-counts; ``kernel(x, x) == 1``."""
    d2 = float(np.sum((np.asarray(x) - np.asarray(y)) ** 2))
    d_n = d2 / d2m if d2m >= cfg.d2m_floor else 0.0
    d_n = max(d_n - cfg.xi, 0.0)
    return cfg.eps_kernel / (d_n + cfg.eps_kernel)


def ngu_reward(r_epi: float, alpha: float, L: float) -> float:
    return r_epi * min(max(alpha, 1.0), L)


# --- embeddings -----------------------------------------------------------

EMBEDDING_MODES = ("identity", "random_projection", "inverse_dynamics")


@dataclass
class EmbeddingFn:
    mode: str
    dim_in: int
    dim_out: int
    params: Params = field(default_factory=dict)
    head_params: Params = field(default_factory=dict)
    n_actions: int = 0
    rng_seed: int = 0
    step_size: float = 1e-3
    _opt: Optional[Adam] = field(default=None, repr=False)


def make_embedding(
    mode: str,
    dim_in: int,
    dim_out: Optional[int] = None,
    *,
    n_actions: int = 0,
    hidden: int = 32,
    seed: int = 0,
    step_size: float = 1e-3,
) -> EmbeddingFn:
    if mode not in EMBEDDING_MODES:
        raise ValidationError(f"unknown embedding mode {mode!r}")
    dim_out = dim_in if dim_out is None else dim_out
    rng = np.random.default_rng(seed)
    f = EmbeddingFn(mode, dim_in, dim_out, n_actions=n_actions, rng_seed=seed, step_size=step_size)
    if mode == "identity":
        if dim_out != dim_in:
            raise ValidationError("identity embedding requires dim_out == dim_in")
    elif mode == "random_projection":
        f.params = {"W": rng.normal(0.0, 1.0 / np.sqrt(dim_in), size=(dim_out, dim_in))}
        f.params["W"].setflags(write=False)
    else:
        if n_actions < 2:
            raise ValidationError("inverse_dynamics embedding needs n_actions >= 2")
        f.params = init_mlp(rng, dim_in, hidden, dim_out)
        f.head_params = init_mlp(rng, 2 * dim_out, hidden, n_actions)
        f._opt = Adam(lr=step_size)
    return f


def embed(f: EmbeddingFn, s: np.ndarray) -> np.ndarray:
    """Embed one observation (1-D) or a batch (2-D)."""
    x = np.asarray(s, dtype=float)
    if x.shape[-1] != f.dim_in:
        raise ValidationError(f"observation dimension {x.shape[-1]} != embedding input {f.dim_in}")
    if f.mode == "identity":
        return x.copy()
    if f.mode == "random_projection":
        return x @ f.params["W"].T
    out, _ = mlp_forward(f.params, np.atleast_2d(x))
    return out[0] if x.ndim == 1 else out


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(z)
    return p / p.sum(axis=1, keepdims=True)


def inverse_dynamics_loss_and_grads(
    f: EmbeddingFn, s: np.ndarray, a: np.ndarray, s_next: np.ndarray
) -> tuple[float, Params, Params]:
    """Mean cross-entropy of predicting ``a`` from ``(f(s), f(s_next))`` and its gradients."""
    s = np.atleast_2d(np.asarray(s, dtype=float))
    s_next = np.atleast_2d(np.asarray(s_next, dtype=float))
    a = np.asarray(a, dtype=int).ravel()
    B = len(a)
    e1, c1 = mlp_forward(f.params, s)
    e2, c2 = mlp_forward(f.params, s_next)
    z = np.concatenate([e1, e2], axis=1)
    logits, ch = mlp_forward(f.head_params, z)
    p = _softmax(logits)
    loss = float(-np.mean(np.log(p[np.arange(B), a] + 1e-300)))
    g_logits = p.copy()
    g_logits[np.arange(B), a] -= 1.0
    g_logits /= B
    g_head, g_z = mlp_backward(f.head_params, ch, g_logits)
    d = f.dim_out
    g1, _ = mlp_backward(f.params, c1, g_z[:, :d])
    g2, _ = mlp_backward(f.params, c2, g_z[:, d:])
    g_emb = {k: g1[k] + g2[k] for k in g1}
    return loss, g_emb, g_head


def train_inverse_dynamics(f: EmbeddingFn, s: np.ndarray, a: np.ndarray, s_next: np.ndarray) -> float:
    """One Adam step on the embedding and action head; returns the pre-step loss."""
    if f.mode != "inverse_dynamics":
        raise UsageError(f"{f.mode} embeddings are frozen")
    if len(np.atleast_1d(a)) == 0:
        raise ValidationError("empty batch")
    loss, g_emb, g_head = inverse_dynamics_loss_and_grads(f, s, a, s_next)
    grads = {f"emb.{k}": v for k, v in g_emb.items()}
    grads.update({f"head.{k}": v for k, v in g_head.items()})
    params = {f"emb.{k}": v for k, v in f.params.items()}
    params.update({f"head.{k}": v for k, v in f.head_params.items()})
    f._opt.step(params, grads)  # arrays are updated in place
    return loss


# --- random network distillation ------------------------------------------


@dataclass
class RNDState:
    target_params: Params
    predictor_params: Params
    embed_dim: int
    obs_dim: int
    predictor_kind: str = "mlp"
    step_size: float = 1e-3
    sigma_floor: float = 1e-8
    stats: RunningMeanStd = field(default_factory=RunningMeanStd)
    _opt: Optional[Adam] = field(default=None, repr=False)

    @property
    def mu_e(self) -> float:
        return self.stats.mean

    @property
    def sigma_e(self) -> float:
        return self.stats.std

    def snapshot(self) -> "RNDState":
        """Read-only copy for actors (no optimizer state)."""
        return RNDState(
            self.target_params,
            copy_params(self.predictor_params),
            self.embed_dim,
            self.obs_dim,
            self.predictor_kind,
            self.step_size,
            self.sigma_floor,
            self.stats.copy(),
        )


def make_rnd(
    obs_dim: int,
    embed_dim: int = 16,
    *,
    hidden: int = 32,
    predictor_kind: str = "mlp",
    step_size: float = 1e-3,
    sigma_floor: float = 1e-8,
    seed: int = 0,
    predictor_equals_target: bool = False,
) -> RNDState:
    rng = np.random.default_rng(seed)
    target = init_mlp(rng, obs_dim, hidden, embed_dim)
    for v in target.values():
        v.setflags(write=False)
    if predictor_equals_target:
        if predictor_kind != "mlp":
            raise ValidationError("predictor_equals_target requires an mlp predictor")
        predictor = copy_params(target)
    elif predictor_kind == "mlp":
        predictor = init_mlp(rng, obs_dim, hidden, embed_dim)
    elif predictor_kind == "linear":
        predictor = init_dense(rng, obs_dim, embed_dim, "l1")
    else:
        raise ValidationError(f"unknown predictor kind {predictor_kind!r}")
    return RNDState(
        target, predictor, embed_dim, obs_dim, predictor_kind, step_size, sigma_floor,
        _opt=Adam(lr=step_size),
    )


def _predict(rnd: RNDState, x: np.ndarray) -> tuple[np.ndarray, tuple]:
    if rnd.predictor_kind == "linear":
        return x @ rnd.predictor_params["l1_W"].T + rnd.predictor_params["l1_b"], (x,)
    return mlp_forward(rnd.predictor_params, x)


def rnd_target(rnd: RNDState, s: np.ndarray) -> np.ndarray:
    out, _ = mlp_forward(rnd.target_params, np.atleast_2d(np.asarray(s, dtype=float)))
    return out


def rnd_error(rnd: RNDState, s: np.ndarray):
    """Squared prediction error; scalar for one observation, array for a batch."""
    x = np.asarray(s, dtype=float)
    xb = np.atleast_2d(x)
    pred, _ = _predict(rnd, xb)
    diff = pred - rnd_target(rnd, xb)
    err = np.einsum("ij,ij->i", diff, diff)
    return float(err[0]) if x.ndim == 1 else err


def rnd_loss_and_grads(rnd: RNDState, batch: np.ndarray) -> tuple[float, Params]:
    x = np.atleast_2d(np.asarray(batch, dtype=float))
    B = len(x)
    pred, cache = _predict(rnd, x)
    diff = pred - rnd_target(rnd, x)
    loss = float(np.einsum("ij,ij->", diff, diff) / B)
    g_out = 2.0 * diff / B
    if rnd.predictor_kind == "linear":
        grads = {"l1_W": g_out.T @ x, "l1_b": g_out.sum(axis=0)}
    else:
        grads, _ = mlp_backward(rnd.predictor_params, cache, g_out)
    return loss, grads


def rnd_train(rnd: RNDState, batch: np.ndarray) -> float:
    """One step on the predictor; folds the pre-step errors into the running stats."""
    x = np.atleast_2d(np.asarray(batch, dtype=float))
    if len(x) == 0:
        raise ValidationError("empty batch")
    rnd.stats.update(rnd_error(rnd, x))
    loss, grads = rnd_loss_and_grads(rnd, x)
    if rnd._opt is None:
        rnd._opt = Adam(lr=rnd.step_size)
    rnd._opt.step(rnd.predictor_params, grads)
    return loss


def lifelong_modulator(rnd: RNDState, err: float) -> float:
    return (err - rnd.mu_e) / max(rnd.sigma_e, rnd.sigma_floor)


def rnd_reward(rnd: RNDState, err: float) -> float:
    return err / max(rnd.sigma_e, rnd.sigma_floor)
