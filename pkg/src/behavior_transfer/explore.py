"""Action selection: epsilon-greedy, repeat-action flights, and behavior
transfer through flights handed to a frozen policy and an extra action.

The extra action is always the last index of the extended action set,
``n_actions`` for a base set of size ``n_actions``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple, Optional

import numpy as np

from .envs import Transition
from .errors import IntegrityError, ValidationError
from .learner import QFunction, greedy, q_batch

MODES = ("eps_greedy", "ez_greedy_repeat", "bt_flights", "bt_action", "bt_full")
EXTRA_ACTION_MODES = ("bt_action", "bt_full")
PRETRAINED_MODES = ("bt_flights", "bt_action", "bt_full")


class FrozenPolicy:
    """Black-box observation -> primitive action map, immutable after construction.

    ``greedy_from_checkpoint`` acts greedily (over the base actions) with a
    snapshot of a Q-function; ``scripted`` looks the action up in a table
    indexed by state id.
    """

    def __init__(self, kind: str, qf: Optional[QFunction] = None, table=None, obs_table: Optional[np.ndarray] = None):
        if kind == "greedy_from_checkpoint":
            if qf is None:
                raise ValidationError("greedy_from_checkpoint needs a Q-function")
            self._qf = qf.copy()
            for v in self._qf.params().values():
                v.setflags(write=False)
            self.n_actions = qf.n_actions_base
            if qf.tabular:
                self._actions = np.argmax(qf.head_params["table"][:, : qf.n_actions_base], axis=1)
            else:
                if obs_table is None:
                    raise ValidationError("encoder_head policies need the observation table")
                q = q_values_batch_base(self._qf, obs_table)
                self._actions = np.argmax(q, axis=1)
        elif kind == "scripted":
            if table is None:
                raise ValidationError("scripted policy needs an action table")
            self._qf = None
            self._actions = np.asarray(table, dtype=int).copy()
            self.n_actions = int(self._actions.max()) + 1
        else:
            raise ValidationError(f"unknown frozen policy kind {kind!r}")
        self._actions.setflags(write=False)
        self.kind = kind
        self._digest = self._compute_digest()

    def act(self, s: int) -> int:
        return int(self._actions[s])

    __call__ = act

    @property
    def action_table(self) -> np.ndarray:
        return self._actions

    def _compute_digest(self) -> str:
        h = hashlib.sha256(self.kind.encode())
        h.update(np.ascontiguousarray(self._actions, dtype="<i8").tobytes())
        if self._qf is not None:
            h.update(self._qf.digest().encode())
        return h.hexdigest()

    def digest(self) -> str:
        """Recomputed from the current parameters (compare against ``initial_digest``)."""
        return self._compute_digest()

    @property
    def initial_digest(self) -> str:
        return self._digest


def q_values_batch_base(qf: QFunction, obs_table: np.ndarray) -> np.ndarray:
    return q_batch(qf, obs_table)[:, : qf.n_actions_base]


# --- distributions ----------------------------------------------------------------


@lru_cache(maxsize=32)
def _zeta_cdf(mu: float, cap: int) -> np.ndarray:
    w = np.arange(1, cap + 1, dtype=float) ** (-mu)
    cdf = np.cumsum(w)
    return cdf / cdf[-1]


def zeta_pmf(mu: float, cap: int) -> np.ndarray:
    """``P(N = n)`` for ``n = 1..cap`` under the truncated Zeta law."""
    w = np.arange(1, cap + 1, dtype=float) ** (-mu)
    return w / w.sum()


def sample_zeta(rng: np.random.Generator, mu: float, cap: int, size=None):
    if np.isinf(mu):
        return 1 if size is None else np.ones(size, dtype=int)
    cdf = _zeta_cdf(float(mu), int(cap))
    u = rng.random(size)
    n = np.searchsorted(cdf, u, side="right") + 1
    n = np.minimum(n, cap)
    return int(n) if size is None else n


def sample_log_uniform(rng: np.random.Generator, low: float, high: float, size=None):
    return np.exp(rng.uniform(np.log(low), np.log(high), size))


def epsilon_ladder(n_actors: int, eps_max: float = 0.4, alpha: float = 7.0) -> list[float]:
    """Per-actor epsilons ``eps_max ** (1 + alpha * i / (N - 1))``."""
    if n_actors == 1:
        return [eps_max]
    return [eps_max ** (1.0 + alpha * i / (n_actors - 1)) for i in range(n_actors)]


# --- flight controller ------------------------------------------------------------


@dataclass
class FlightController:
    mode: str = "eps_greedy"
    eps: float = 0.01
    n_actions: int = 3
    eps_levy: float = 0.0
    eps_levy_min: float = 1e-4
    eps_levy_max: float = 0.1
    n_remaining: int = 0
    repeat_action: Optional[int] = None
    zeta_mu: float = 2.0
    zeta_cap: int = 1000
    seed: int = 0
    rng: np.random.Generator = field(default=None, repr=False)
    flights_started: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValidationError(f"exploration mode must be one of {MODES}")
        if not 0.0 <= self.eps <= 1.0:
            raise ValidationError("eps must lie in [0, 1]")
        if self.rng is None:
            self.rng = np.random.default_rng(self.seed)

    @property
    def uses_extra_action(self) -> bool:
        return self.mode in EXTRA_ACTION_MODES

    @property
    def uses_flights(self) -> bool:
        return self.mode in ("ez_greedy_repeat", "bt_flights", "bt_full")

    @property
    def q_size(self) -> int:
        return self.n_actions + (1 if self.uses_extra_action else 0)


def begin_episode(fc: FlightController) -> None:
    fc.n_remaining = 0
    fc.repeat_action = None
    if fc.uses_flights:
        fc.eps_levy = float(sample_log_uniform(fc.rng, fc.eps_levy_min, fc.eps_levy_max))
    else:
        fc.eps_levy = 0.0


def sample_flight_length(fc: FlightController) -> int:
    return sample_zeta(fc.rng, fc.zeta_mu, fc.zeta_cap)


class ActionChoice(NamedTuple):
    action: int
    primitive: int
    from_pretrained: bool
    in_flight: bool
    behavior_prob: float


def _eps_greedy(fc: FlightController, q: np.ndarray, size: int) -> tuple[int, float]:
    best = greedy(q[:size])
    if fc.rng.random() < fc.eps:
        a = int(fc.rng.integers(size))
    else:
        a = best
    prob = fc.eps / size + (1.0 - fc.eps) * (a == best)
    return a, prob


def select_action(fc: FlightController, q: np.ndarray, pi_p: Optional[FrozenPolicy], s: int) -> ActionChoice:
    """One step of action selection in the controller's mode.

    ``q`` has ``|A| + 1`` entries in the extra-action modes and ``|A|``
    otherwise; ``s`` is the state id handed to ``pi_p``.
    """
    q = np.asarray(q)
    if len(q) != fc.q_size:
        raise ValidationError(f"{fc.mode} expects {fc.q_size} Q-values, got {len(q)}")
    if fc.mode in PRETRAINED_MODES and pi_p is None:
        raise ValidationError(f"{fc.mode} needs a pre-trained policy")
    if fc.uses_flights:
        if fc.n_remaining == 0 and fc.rng.random() < fc.eps_levy:
            fc.n_remaining = sample_flight_length(fc)
            fc.flights_started += 1
            if fc.mode == "ez_greedy_repeat":
                fc.repeat_action = int(fc.rng.integers(fc.n_actions))
        if fc.n_remaining > 0:
            fc.n_remaining -= 1
            if fc.mode == "ez_greedy_repeat":
                a = fc.repeat_action
                return ActionChoice(a, a, False, True, 1.0)
            a = pi_p.act(s)
            return ActionChoice(a, a, True, True, 1.0)
    a, prob = _eps_greedy(fc, q, fc.q_size)
    if fc.uses_extra_action and a == fc.n_actions:
        return ActionChoice(a, pi_p.act(s), True, False, prob)
    return ActionChoice(a, a, False, False, prob)


def relabel(tr: Transition, n_actions: int) -> list[Transition]:
    """Training transitions for one collected transition.

    An extra-action transition is duplicated with the primitive action the
    frozen policy took; everything else passes through unchanged.
    """
    if tr.from_pretrained and tr.action == n_actions:
        if tr.primitive_action is None or not 0 <= tr.primitive_action < n_actions:
            raise IntegrityError("extra-action transition without a resolved primitive action")
        dup = Transition(
            tr.state, tr.primitive_action, tr.primitive_action, tr.reward_ext, tr.reward_int,
            tr.next_state, tr.terminal, tr.from_pretrained, tr.in_flight, tr.behavior_prob, tr.truncated,
        )
        return [tr, dup]
    return [tr]


def relabel_mask(actions: np.ndarray, from_pretrained: np.ndarray, n_actions: int) -> np.ndarray:
    """Boolean mask of entries that :func:`relabel` would duplicate."""
    return (np.asarray(actions) == n_actions) & np.asarray(from_pretrained, dtype=bool)
