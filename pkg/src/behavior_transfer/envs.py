"""Finite MDP environments and an exact value-iteration oracle.

Three layouts are provided, all over a finite set of cells with
deterministic dynamics:

* ``chain``: cells ``0..size-1``, actions ``left, right, noop``; start at 0,
  goal at ``size-1``.
* ``four_rooms``: a ``size x size`` grid split into four rooms by a wall
  row and a wall column with two doorways each; actions ``up, down, left,
  right``; start in the top-left corner, goal in the bottom-right corner.
* ``dense_line``: same geometry as the chain but with a dense per-step
  reward (+1 right, -1 left) in the ``standard`` variant.

Reward variants:

* ``standard`` / ``sparse_easy``: only the goal pays ``goal_reward``.
  (``dense_line`` in ``standard`` additionally carries its shaping.)
* ``deceptive_hard``: a one-time ``distractor_reward`` per episode, paid
  when the agent steps back toward the start into a cell within distance 1
  of it. The environment state then carries a "collected" flag so the
  explicit MDP stays Markov: ``state = cell + n_cells * flag``.

Observations are one-hot encodings of the cell, with the flag appended as
an extra coordinate in flagged environments (``env.features[state]``).
"""

from __future__ import annotations

import dataclasses
import io
import json
from collections import deque
from dataclasses import dataclass
from typing import Optional, TextIO

import numpy as np

from .errors import ConfigError, UsageError, ValidationError

KINDS = ("chain", "four_rooms", "dense_line")
REWARD_VARIANTS = ("standard", "sparse_easy", "deceptive_hard")

# chain / dense_line actions
LEFT, RIGHT, NOOP = 0, 1, 2
# four_rooms actions
UP, DOWN, WEST, EAST = 0, 1, 2, 3


@dataclass
class EnvSpec:
    kind: str = "chain"
    size: int = 10
    reward_variant: str = "standard"
    distractor_reward: Optional[float] = None
    goal_reward: float = 1.0
    episode_limit: Optional[int] = None
    seed: int = 0

    def resolved(self) -> "EnvSpec":
        """Return a validated copy with defaults filled in."""
        if self.kind not in KINDS:
            raise ConfigError(f"env.kind must be one of {KINDS}, got {self.kind!r}")
        if self.reward_variant not in REWARD_VARIANTS:
            raise ConfigError(
                f"env.reward_variant must be one of {REWARD_VARIANTS}, got {self.reward_variant!r}"
            )
        if int(self.size) < 2:
            raise ConfigError("invariant violated: size >= 2")
        if self.kind == "four_rooms" and int(self.size) < 5:
            raise ConfigError("invariant violated: four_rooms requires size >= 5")
        limit = 4 * int(self.size) if self.episode_limit is None else int(self.episode_limit)
        if limit < int(self.size):
            raise ConfigError("invariant violated: episode_limit >= size")
        distractor = self.distractor_reward
        if self.reward_variant == "deceptive_hard":
            if distractor is None:
                raise ConfigError(
                    "invariant violated: deceptive_hard requires distractor_reward"
                )
        else:
            distractor = 0.0
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        return dataclasses.replace(
            self,
            size=int(self.size),
            episode_limit=limit,
            distractor_reward=float(distractor),
            goal_reward=float(self.goal_reward),
            seed=int(self.seed),
        )


@dataclass(frozen=True)
class Transition:
    """One environment step as seen by replay and the learner.

    ``action`` lives in the extended action set (the extra action is index
    ``n_actions``); ``primitive_action`` is what the environment executed.
    ``truncated`` marks a terminal step caused by the episode limit rather
    than by reaching the goal; learners bootstrap through it.
    """

    state: int
    action: int
    primitive_action: int
    reward_ext: float
    reward_int: float
    next_state: int
    terminal: bool
    from_pretrained: bool = False
    in_flight: bool = False
    behavior_prob: float = 1.0
    truncated: bool = False

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)


@dataclass
class Mdp:
    """Explicit tables: ``P[s, a, s']``, ``R[s, a, s']``, ``d0[s]``."""

    n_states: int
    n_actions: int
    P: np.ndarray
    R: np.ndarray
    d0: np.ndarray
    terminal_mask: np.ndarray

    def validate(self, atol: float = 1e-12) -> None:
        S, A = self.n_states, self.n_actions
        if self.P.shape != (S, A, S) or self.R.shape != (S, A, S):
            raise ValidationError("P and R must have shape (S, A, S)")
        if self.d0.shape != (S,) or self.terminal_mask.shape != (S,):
            raise ValidationError("d0 and terminal_mask must have shape (S,)")
        if np.any(self.P < 0) or np.any(self.d0 < 0):
            raise ValidationError("probabilities must be non-negative")
        rows = self.P.sum(axis=2)
        if np.max(np.abs(rows - 1.0)) > atol:
            raise ValidationError("every row of P must sum to 1")
        if abs(self.d0.sum() - 1.0) > atol:
            raise ValidationError("d0 must sum to 1")


def bellman_backup(mdp: Mdp, Q: np.ndarray, gamma: float) -> np.ndarray:
    """One application of the Bellman optimality operator."""
    v = np.where(mdp.terminal_mask, 0.0, Q.max(axis=1))
    expected_r = np.einsum("ijk,ijk->ij", mdp.P, mdp.R)
    return expected_r + gamma * mdp.P @ v


def value_iteration(mdp: Mdp, gamma: float, tol: float = 1e-10, max_iter: int = 1_000_000) -> np.ndarray:
    """Optimal action values of ``mdp`` to accuracy ``tol`` in max-norm."""
    if tol <= 0:
        raise ValidationError("tol must be positive")
    if not 0.0 <= gamma < 1.0:
        raise ValidationError("gamma must lie in [0, 1)")
    mdp.validate()
    Q = np.zeros((mdp.n_states, mdp.n_actions))
    for _ in range(max_iter):
        Q_next = bellman_backup(mdp, Q, gamma)
        residual = np.max(np.abs(Q_next - Q))
        Q = Q_next
        # ||Q_{k+1} - Q*|| <= gamma / (1 - gamma) * ||Q_{k+1} - Q_k||
        if residual * gamma < tol * (1.0 - gamma):
            return Q
    raise ValidationError("value iteration did not converge")


def write_mdp(mdp: Mdp, fh: TextIO) -> None:
    """Text export.

    Line 1: ``n_states n_actions``. Line 2: d0. Line 3: terminal mask (0/1).
    Then ``n_states * n_actions`` rows of P in (s, a) row-major order, then
    the same number of rows of R. Values are space separated ``repr`` floats.
    """
    S, A = mdp.n_states, mdp.n_actions
    fh.write(f"{S} {A}\n")
    fh.write(" ".join(repr(float(x)) for x in mdp.d0) + "\n")
    fh.write(" ".join(str(int(x)) for x in mdp.terminal_mask) + "\n")
    for table in (mdp.P, mdp.R):
        for s in range(S):
            for a in range(A):
                fh.write(" ".join(repr(float(x)) for x in table[s, a]) + "\n")


def read_mdp(fh: TextIO) -> Mdp:
    lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    S, A = (int(x) for x in lines[0].split())
    if len(lines) != 3 + 2 * S * A:
        raise ValidationError("truncated MDP text")
    d0 = np.array([float(x) for x in lines[1].split()])
    term = np.array([bool(int(x)) for x in lines[2].split()])
    rows = np.array([[float(x) for x in ln.split()] for ln in lines[3:]])
    P = rows[: S * A].reshape(S, A, S)
    R = rows[S * A :].reshape(S, A, S)
    mdp = Mdp(S, A, P, R, d0, term)
    mdp.validate()
    return mdp


def mdp_to_text(mdp: Mdp) -> str:
    buf = io.StringIO()
    write_mdp(mdp, buf)
    return buf.getvalue()


class GridEnv:
    """Deterministic finite environment over a set of cells.

    Subclasses define the cell layout and ``_move``; everything else
    (rewards, flag handling, MDP export) is shared.
    """

    action_names: tuple[str, ...] = ()

    def __init__(self, spec: EnvSpec):
        self.spec = spec.resolved()
        self.n_actions = len(self.action_names)
        self.cells: list = self._layout()
        self.cell_index = {c: i for i, c in enumerate(self.cells)}
        self.n_cells = len(self.cells)
        self.start_cell = self.cell_index[self._start()]
        self.goal_cell = self.cell_index[self._goal()]
        self._next_cell = np.array(
            [[self.cell_index[self._move(c, a)] for a in range(self.n_actions)] for c in self.cells]
        )
        self.start_distance = self._bfs(self.start_cell)
        self.distractor_cells = frozenset(
            i for i in range(self.n_cells) if self.start_distance[i] <= 1
        )
        self.flagged = self.spec.reward_variant == "deceptive_hard" and self.spec.distractor_reward != 0.0
        self.n_states = self.n_cells * (2 if self.flagged else 1)
        self.obs_dim = self.n_cells + (1 if self.flagged else 0)
        self.features = np.zeros((self.n_states, self.obs_dim))
        for s in range(self.n_states):
            cell, flag = self.decode(s)
            self.features[s, cell] = 1.0
            if self.flagged:
                self.features[s, -1] = float(flag)
        self.rng = np.random.default_rng(self.spec.seed)
        self._state: Optional[int] = None
        self._t = 0
        self._done = True

    # layout hooks
    def _layout(self) -> list:
        raise NotImplementedError

    def _start(self):
        raise NotImplementedError

    def _goal(self):
        raise NotImplementedError

    def _move(self, cell, action: int):
        raise NotImplementedError

    def _bfs(self, src: int) -> np.ndarray:
        dist = np.full(self.n_cells, -1)
        dist[src] = 0
        queue = deque([src])
        while queue:
            c = queue.popleft()
            for nxt in self._next_cell[c]:
                if dist[nxt] < 0:
                    dist[nxt] = dist[c] + 1
                    queue.append(nxt)
        return dist

    def decode(self, state: int) -> tuple[int, int]:
        return state % self.n_cells, state // self.n_cells

    def encode(self, cell: int, flag: int = 0) -> int:
        return cell + self.n_cells * flag if self.flagged else cell

    def is_goal(self, state: int) -> bool:
        return self.decode(state)[0] == self.goal_cell

    @property
    def start_state(self) -> int:
        return self.encode(self.start_cell, 0)

    def _shaping(self, cell: int, action: int, nxt: int) -> float:
        return 0.0

    def transition(self, state: int, action: int) -> tuple[int, float]:
        """Deterministic dynamics: ``(next_state, reward)``."""
        cell, flag = self.decode(state)
        nxt = int(self._next_cell[cell, action])
        reward = 0.0
        if nxt == self.goal_cell:
            reward += self.spec.goal_reward
        else:
            reward += self._shaping(cell, action, nxt)
        if (
            self.flagged
            and not flag
            and nxt in self.distractor_cells
            and self.start_distance[nxt] < self.start_distance[cell]
        ):
            reward += self.spec.distractor_reward
            flag = 1
        return self.encode(nxt, flag), reward

    def reset(self) -> int:
        self._state = self.start_state
        self._t = 0
        self._done = False
        return self._state

    def step(self, action: int) -> tuple[int, float, bool]:
        if self._done:
            raise UsageError("step() called on a terminated episode; call reset()")
        if not 0 <= action < self.n_actions:
            raise UsageError(f"action {action} is not a primitive action")
        nxt, reward = self.transition(self._state, int(action))
        self._t += 1
        terminal = self.is_goal(nxt) or self._t >= self.spec.episode_limit
        self._state = nxt
        self._done = terminal
        return nxt, reward, terminal

    @property
    def state(self) -> Optional[int]:
        return self._state

    @property
    def steps(self) -> int:
        return self._t

    def to_mdp(self) -> Mdp:
        """Explicit tables (time limit not represented; goal states absorbing)."""
        S, A = self.n_states, self.n_actions
        P = np.zeros((S, A, S))
        R = np.zeros((S, A, S))
        term = np.zeros(S, dtype=bool)
        for s in range(S):
            if self.is_goal(s):
                term[s] = True
                P[s, :, s] = 1.0
                continue
            for a in range(A):
                nxt, r = self.transition(s, a)
                P[s, a, nxt] = 1.0
                R[s, a, nxt] = r
        d0 = np.zeros(S)
        d0[self.start_state] = 1.0
        return Mdp(S, A, P, R, d0, term)


class ChainEnv(GridEnv):
    action_names = ("left", "right", "noop")

    def _layout(self):
        return list(range(self.spec.size))

    def _start(self):
        return 0

    def _goal(self):
        return self.spec.size - 1

    def _move(self, cell, action):
        if action == LEFT:
            return max(cell - 1, 0)
        if action == RIGHT:
            return min(cell + 1, self.spec.size - 1)
        return cell


class DenseLineEnv(ChainEnv):
    def _shaping(self, cell, action, nxt):
        if self.spec.reward_variant != "standard":
            return 0.0
        return float(nxt - cell)


class FourRoomsEnv(GridEnv):
    action_names = ("up", "down", "left", "right")

    def _walls(self) -> set:
        n = self.spec.size
        m = n // 2
        doors_v = {m // 2, m + 1 + (n - m - 1) // 2}
        doors_h = {m // 2, m + 1 + (n - m - 1) // 2}
        walls = {(r, m) for r in range(n) if r not in doors_v}
        walls |= {(m, c) for c in range(n) if c not in doors_h}
        return walls

    def _layout(self):
        n = self.spec.size
        self._wall_set = self._walls()
        return [(r, c) for r in range(n) for c in range(n) if (r, c) not in self._wall_set]

    def _start(self):
        return (0, 0)

    def _goal(self):
        n = self.spec.size
        return (n - 1, n - 1)

    def _move(self, cell, action):
        r, c = cell
        dr, dc = ((-1, 0), (1, 0), (0, -1), (0, 1))[action]
        nr, nc = r + dr, c + dc
        n = self.spec.size
        if not (0 <= nr < n and 0 <= nc < n) or (nr, nc) in self._wall_set:
            return cell
        return (nr, nc)


_ENV_CLASSES = {"chain": ChainEnv, "four_rooms": FourRoomsEnv, "dense_line": DenseLineEnv}


def make_env(spec: EnvSpec) -> GridEnv:
    spec = spec.resolved()
    return _ENV_CLASSES[spec.kind](spec)


def distractor_value(env: GridEnv) -> float:
    """Undiscounted return of a policy that collects the distractor and never reaches the goal."""
    return env.spec.distractor_reward if env.flagged else 0.0
