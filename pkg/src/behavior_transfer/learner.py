"""Action-value functions and multi-step off-policy backups.

A :class:`QFunction` is an encoder followed by a linear head over the
(optionally extended) action set. In ``tabular`` mode the encoder is the
implicit one-hot map and the head is the Q-table; in ``encoder_head`` mode
the encoder is ``tanh(W x + b)`` and the head is affine.

Backups:

* Peng's Q(lambda), used for learning with task rewards:
  ``G_t = r_t + gamma * [(1 - lam) * max_a Qbar(s_{t+1}, a) + lam * G_{t+1}]``,
  no bootstrap after a terminal step, ``G_T = max_a Qbar(s_T, a)`` at a cut
  or after a step truncated by the episode limit.
* Retrace(lambda), used for reward-free pre-training:
  ``target_t = Qbar(s_t, a_t) + sum_j gamma^(j-t) (prod_i c_i) delta_j`` with
  ``c_i = lam * min(1, pi(a_i|s_i) / mu(a_i|s_i))``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .envs import Transition
from .errors import ValidationError
from .nets import Adam, Params, copy_params

REPR_MODES = ("tabular", "encoder_head")
INIT_MODES = ("scratch", "partial", "full")


@dataclass
class QFunction:
    repr_mode: str
    n_inputs: int
    n_actions_base: int
    has_extra_action: bool
    encoder_params: Params = field(default_factory=dict)
    head_params: Params = field(default_factory=dict)
    hidden: int = 0

    @property
    def n_outputs(self) -> int:
        return self.n_actions_base + (1 if self.has_extra_action else 0)

    @property
    def extra_action(self) -> Optional[int]:
        return self.n_actions_base if self.has_extra_action else None

    @property
    def tabular(self) -> bool:
        return self.repr_mode == "tabular"

    def params(self) -> Params:
        out = {f"encoder.{k}": v for k, v in self.encoder_params.items()}
        out.update({f"head.{k}": v for k, v in self.head_params.items()})
        return out

    def copy(self) -> "QFunction":
        return QFunction(
            self.repr_mode, self.n_inputs, self.n_actions_base, self.has_extra_action,
            copy_params(self.encoder_params), copy_params(self.head_params), self.hidden,
        )

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(f"{self.repr_mode}:{self.n_inputs}:{self.n_actions_base}:{self.has_extra_action}".encode())
        for k, v in sorted(self.params().items()):
            h.update(k.encode())
            h.update(np.ascontiguousarray(v, dtype="<f8").tobytes())
        return h.hexdigest()


def make_qfunction(
    repr_mode: str,
    n_inputs: int,
    n_actions: int,
    *,
    has_extra_action: bool = False,
    hidden: int = 32,
    rng: Optional[np.random.Generator] = None,
    init_value: float = 0.0,
) -> QFunction:
    """Fresh Q-function: ``init_value`` everywhere in tabular mode (zeros by
    default); random encoder and a head biased to ``init_value`` otherwise."""
    if repr_mode not in REPR_MODES:
        raise ValidationError(f"unknown repr_mode {repr_mode!r}")
    n_out = n_actions + (1 if has_extra_action else 0)
    if repr_mode == "tabular":
        return QFunction(repr_mode, n_inputs, n_actions, has_extra_action, {}, {"table": np.full((n_inputs, n_out), float(init_value))})
    rng = np.random.default_rng() if rng is None else rng
    qf = QFunction(repr_mode, n_inputs, n_actions, has_extra_action, hidden=hidden)
    qf.encoder_params = {
        "W": rng.normal(0.0, 1.0 / np.sqrt(n_inputs), size=(hidden, n_inputs)),
        "b": rng.normal(0.0, 0.1, size=hidden),
    }
    qf.head_params = _fresh_head(rng, hidden, n_out)
    qf.head_params["b"] += init_value
    return qf


def _fresh_head(rng: np.random.Generator, hidden: int, n_out: int) -> Params:
    return {"W": rng.normal(0.0, 0.1 / np.sqrt(hidden), size=(n_out, hidden)), "b": np.zeros(n_out)}


def features(qf: QFunction, obs: np.ndarray) -> np.ndarray:
    """Encoder output for a batch of observation vectors."""
    return np.tanh(obs @ qf.encoder_params["W"].T + qf.encoder_params["b"])


def q_batch(qf: QFunction, obs) -> np.ndarray:
    """Q-values for a batch: state ids (tabular) or observation rows."""
    if qf.tabular:
        return qf.head_params["table"][np.asarray(obs, dtype=int)]
    obs = np.asarray(obs, dtype=float)
    flat = obs.reshape(-1, obs.shape[-1])
    out = features(qf, flat) @ qf.head_params["W"].T + qf.head_params["b"]
    return out.reshape(obs.shape[:-1] + (qf.n_outputs,))


def q_values(qf: QFunction, s) -> np.ndarray:
    if qf.tabular:
        return qf.head_params["table"][int(s)].copy()
    return q_batch(qf, np.asarray(s, dtype=float)[None, :])[0]


def set_q_value(qf: QFunction, s: int, a: int, value: float) -> None:
    """Direct write into a tabular Q-function (test hook)."""
    if not qf.tabular:
        raise ValidationError("direct writes are only defined for tabular Q-functions")
    qf.head_params["table"][int(s), int(a)] = value


def greedy(q: np.ndarray) -> int:
    """Argmax with ties broken toward the lowest index."""
    return int(np.argmax(q))


# --- backups ----------------------------------------------------------------


def check_sequence(seq: Sequence[Transition]) -> None:
    if len(seq) == 0:
        raise ValidationError("empty sequence")
    for i in range(len(seq) - 1):
        if seq[i].terminal:
            raise ValidationError(f"sequence crosses an episode boundary after step {i}")
        if seq[i].next_state != seq[i + 1].state:
            raise ValidationError(f"sequence is not contiguous at step {i}")


def peng_batch(
    rewards: np.ndarray,
    terminals: np.ndarray,
    boot_max: np.ndarray,
    lengths: np.ndarray,
    gamma: float,
    lam: float,
) -> np.ndarray:
    """Peng's Q(lambda) targets on padded ``(B, T)`` arrays.

    ``boot_max[b, t]`` is ``max_a Qbar(s_{t+1}, a)``; entries past ``lengths``
    are ignored.
    """
    B, T = rewards.shape
    G = np.zeros((B, T))
    cont = gamma * (1.0 - terminals)
    nxt = boot_max[:, T - 1].copy()
    for t in range(T - 1, -1, -1):
        nxt = np.where(t + 1 < lengths, nxt, boot_max[:, t])
        G[:, t] = rewards[:, t] + cont[:, t] * ((1.0 - lam) * boot_max[:, t] + lam * nxt)
        nxt = G[:, t]
    return G


def retrace_batch(
    rewards: np.ndarray,
    terminals: np.ndarray,
    q_taken: np.ndarray,
    exp_next: np.ndarray,
    pi_taken: np.ndarray,
    mu_taken: np.ndarray,
    lengths: np.ndarray,
    gamma: float,
    lam: float,
) -> np.ndarray:
    """Retrace targets on padded ``(B, T)`` arrays.

    ``q_taken[b, t] = Qbar(s_t, a_t)``, ``exp_next[b, t] = E_pi Qbar(s_{t+1}, .)``,
    ``pi_taken``/``mu_taken`` are target/behavior probabilities of ``a_t``.
    """
    B, T = rewards.shape
    valid = np.arange(T)[None, :] < lengths[:, None]
    if np.any(mu_taken[valid] <= 0):
        raise ValidationError("behavior probability of a taken action must be > 0")
    delta = rewards + gamma * (1.0 - terminals) * exp_next - q_taken
    ratio = np.where(valid, pi_taken / np.where(valid, mu_taken, 1.0), 0.0)
    c = lam * np.minimum(1.0, ratio)
    adv = np.zeros((B, T))
    carry = np.zeros(B)
    for t in range(T - 1, -1, -1):
        if t + 1 < T:
            carry = np.where(t + 1 < lengths, gamma * c[:, t + 1] * adv[:, t + 1], 0.0)
        else:
            carry = np.zeros(B)
        adv[:, t] = delta[:, t] + carry
    return q_taken + adv


def _seq_arrays(seq: Sequence[Transition], reward: str):
    r = np.array([getattr(tr, reward) for tr in seq], dtype=float)[None, :]
    term = np.array([tr.terminal and not tr.truncated for tr in seq], dtype=float)[None, :]
    return r, term


def _obs(qf: QFunction, states, obs_table: Optional[np.ndarray]):
    return states if qf.tabular or obs_table is None else obs_table[states]


def peng_targets(
    seq: Sequence[Transition],
    qf_target: QFunction,
    gamma: float,
    lam: float,
    *,
    reward: str = "reward_ext",
    obs_table: Optional[np.ndarray] = None,
) -> np.ndarray:
    check_sequence(seq)
    r, term = _seq_arrays(seq, reward)
    nxt = np.array([tr.next_state for tr in seq])
    boot = q_batch(qf_target, _obs(qf_target, nxt, obs_table)).max(axis=-1)[None, :]
    return peng_batch(r, term, boot, np.array([len(seq)]), gamma, lam)[0]


def retrace_targets(
    seq: Sequence[Transition],
    qf_target: QFunction,
    pi_target,
    mu_behavior: Sequence[float],
    gamma: float,
    lam: float,
    *,
    reward: str = "reward_ext",
    obs_table: Optional[np.ndarray] = None,
) -> np.ndarray:
    """``pi_target(q_row) -> probabilities`` maps a row of target Q-values to a distribution."""
    check_sequence(seq)
    r, term = _seq_arrays(seq, reward)
    s = np.array([tr.state for tr in seq])
    a = np.array([tr.action for tr in seq])
    nxt = np.array([tr.next_state for tr in seq])
    q_s = q_batch(qf_target, _obs(qf_target, s, obs_table))
    q_n = q_batch(qf_target, _obs(qf_target, nxt, obs_table))
    pi_s = np.array([pi_target(row) for row in q_s])
    pi_n = np.array([pi_target(row) for row in q_n])
    q_taken = q_s[np.arange(len(seq)), a][None, :]
    exp_next = np.einsum("ij,ij->i", pi_n, q_n)[None, :]
    pi_taken = pi_s[np.arange(len(seq)), a][None, :]
    mu = np.asarray(mu_behavior, dtype=float)[None, :]
    return retrace_batch(r, term, q_taken, exp_next, pi_taken, mu, np.array([len(seq)]), gamma, lam)[0]


def greedy_probs(q) -> np.ndarray:
    """Deterministic greedy distribution (lowest-index ties); works row-wise."""
    q = np.asarray(q)
    out = np.zeros(q.shape)
    idx = np.argmax(q, axis=-1)
    np.put_along_axis(out, np.expand_dims(idx, -1), 1.0, axis=-1)
    return out


# --- learner state and updates ------------------------------------------------


@dataclass
class LearnerState:
    online: QFunction
    target: QFunction
    update_count: int = 0
    target_period: int = 1500
    gamma: float = 0.99
    lambda_q: float = 0.7
    lambda_retrace: float = 0.95
    step_size: float = 2e-4
    optimizer: str = "adam"
    priority_eta: float = 0.9
    adam_eps: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    _adam: Optional[Adam] = field(default=None, repr=False)

    def __post_init__(self):
        if self.optimizer not in ("adam", "sgd"):
            raise ValidationError("optimizer must be 'adam' or 'sgd'")
        if self._adam is None:
            self._adam = Adam(self.step_size, self.beta1, self.beta2, self.adam_eps)

    @property
    def optimizer_moments(self) -> tuple[Params, Params]:
        return self._adam.m, self._adam.v


def make_learner(online: QFunction, **kwargs) -> LearnerState:
    return LearnerState(online=online, target=online.copy(), **kwargs)


def sync_target(ls: LearnerState) -> None:
    ls.target = ls.online.copy()


def loss_and_grads(qf: QFunction, obs, actions: np.ndarray, targets: np.ndarray) -> tuple[float, Params, np.ndarray]:
    """``0.5 * mean((Q(s, a) - y)^2)``, parameter gradients, and TD errors ``y - Q``."""
    actions = np.asarray(actions, dtype=int)
    N = len(actions)
    if qf.tabular:
        s = np.asarray(obs, dtype=int)
        q_sa = qf.head_params["table"][s, actions]
        td = targets - q_sa
        g = np.zeros_like(qf.head_params["table"])
        np.add.at(g, (s, actions), -td / N)
        return 0.5 * float(np.mean(td * td)), {"head.table": g}, td
    x = np.asarray(obs, dtype=float)
    h = features(qf, x)
    q = h @ qf.head_params["W"].T + qf.head_params["b"]
    q_sa = q[np.arange(N), actions]
    td = targets - q_sa
    g_q = np.zeros_like(q)
    g_q[np.arange(N), actions] = -td / N
    grads = {"head.W": g_q.T @ h, "head.b": g_q.sum(axis=0)}
    g_pre = (g_q @ qf.head_params["W"]) * (1.0 - h * h)
    grads["encoder.W"] = g_pre.T @ x
    grads["encoder.b"] = g_pre.sum(axis=0)
    return 0.5 * float(np.mean(td * td)), grads, td


def sequence_priorities(td: np.ndarray, seq_index: np.ndarray, n_sequences: int, eta: float) -> np.ndarray:
    """``eta * max|td| + (1 - eta) * mean|td|`` per sequence."""
    a = np.abs(td)
    mx = np.zeros(n_sequences)
    np.maximum.at(mx, seq_index, a)
    sm = np.bincount(seq_index, weights=a, minlength=n_sequences)
    cnt = np.bincount(seq_index, minlength=n_sequences)
    mean = np.divide(sm, cnt, out=np.zeros(n_sequences), where=cnt > 0)
    return eta * mx + (1.0 - eta) * mean


def apply_update(
    ls: LearnerState,
    obs,
    actions: np.ndarray,
    targets: np.ndarray,
    seq_index: Optional[np.ndarray] = None,
    n_sequences: Optional[int] = None,
) -> np.ndarray:
    """One optimizer step on the online network; returns per-sequence priorities.

    With ``optimizer='sgd'`` in tabular mode each visited entry moves by
    ``step_size`` times the mean TD error of its samples.
    """
    actions = np.asarray(actions, dtype=int)
    targets = np.asarray(targets, dtype=float)
    n = len(actions)
    if len(targets) != n or len(obs) != n:
        raise ValidationError("obs, actions and targets must have the same length")
    if seq_index is None:
        seq_index = np.zeros(n, dtype=int)
        n_sequences = 1
    seq_index = np.asarray(seq_index, dtype=int)
    if len(seq_index) != n:
        raise ValidationError("seq_index must match the batch length")
    if n_sequences is None:
        n_sequences = int(seq_index.max()) + 1 if n else 0
    qf = ls.online
    if ls.optimizer == "sgd" and qf.tabular:
        s = np.asarray(obs, dtype=int)
        table = qf.head_params["table"]
        td = targets - table[s, actions]
        flat = s * table.shape[1] + actions
        sums = np.bincount(flat, weights=td, minlength=table.size)
        cnts = np.bincount(flat, minlength=table.size)
        hit = cnts > 0
        table.ravel()[hit] += ls.step_size * sums[hit] / cnts[hit]
    else:
        _, grads, td = loss_and_grads(qf, obs, actions, targets)
        params = qf.params()
        if ls.optimizer == "sgd":
            for k, g in grads.items():
                params[k] -= ls.step_size * g
        else:
            ls._adam.step(params, grads)
    ls.update_count += 1
    if ls.update_count % ls.target_period == 0:
        sync_target(ls)
    return sequence_priorities(td, seq_index, n_sequences, ls.priority_eta)


def init_from_checkpoint(qf_new: QFunction, ckpt, mode: str, rng: Optional[np.random.Generator] = None) -> QFunction:
    """Weight transfer: ``scratch`` keeps ``qf_new``, ``partial`` copies the
    encoder, ``full`` copies encoder and head. The source is never modified."""
    if mode not in INIT_MODES:
        raise ValidationError(f"init mode must be one of {INIT_MODES}")
    src: QFunction = ckpt.to_qfunction() if hasattr(ckpt, "to_qfunction") else ckpt
    out = qf_new.copy()
    if mode == "scratch":
        return out
    if src.repr_mode != qf_new.repr_mode:
        raise ValidationError(f"encoder mismatch: {src.repr_mode} checkpoint vs {qf_new.repr_mode} network")
    if src.n_inputs != qf_new.n_inputs or src.hidden != qf_new.hidden:
        raise ValidationError("encoder shape mismatch between checkpoint and network")
    for k, v in src.encoder_params.items():
        if k not in out.encoder_params or out.encoder_params[k].shape != v.shape:
            raise ValidationError(f"encoder shape mismatch in {k}")
        out.encoder_params[k] = v.copy()
    if mode == "full":
        for k, v in src.head_params.items():
            if k not in out.head_params or out.head_params[k].shape != v.shape:
                raise ValidationError(
                    f"head shape mismatch in {k}: checkpoint {v.shape} vs network "
                    f"{out.head_params[k].shape if k in out.head_params else None}"
                )
            out.head_params[k] = v.copy()
    elif not qf_new.tabular:
        rng = np.random.default_rng() if rng is None else rng
        out.head_params = _fresh_head(rng, qf_new.hidden, qf_new.n_outputs)
    return out
