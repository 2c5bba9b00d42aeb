"""Prioritized replay of fixed-length, episode-bounded transition sequences."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .envs import Transition
from .errors import IntegrityError, ValidationError


class SumTree:
    """Binary sum tree over ``capacity`` leaves (root at index 1)."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        # at least two leaves so the root is never a leaf
        n = 2
        while n < capacity:
            n *= 2
        self.n_leaves = n
        self.tree = np.zeros(2 * n)

    @property
    def total(self) -> float:
        return float(self.tree[1])

    def __getitem__(self, idx):
        return self.tree[self.n_leaves + np.asarray(idx)]

    def update(self, idx, values) -> None:
        # parents are recomputed from children, so no drift accumulates
        if np.ndim(idx) == 0:
            pos = int(idx) + self.n_leaves
            tree = self.tree
            tree[pos] = values
            pos //= 2
            while pos >= 1:
                tree[pos] = tree[2 * pos] + tree[2 * pos + 1]
                pos //= 2
            return
        pos = np.asarray(idx, dtype=np.int64) + self.n_leaves
        if pos.size == 0:
            return
        self.tree[pos] = values
        pos = np.unique(pos // 2)
        while True:
            self.tree[pos] = self.tree[2 * pos] + self.tree[2 * pos + 1]
            if pos[0] == 1:
                break
            pos = np.unique(pos // 2)

    def find(self, u: np.ndarray) -> np.ndarray:
        """Leaf indices whose prefix-sum interval contains each ``u``."""
        u = np.array(u, dtype=float)
        node = np.ones(len(u), dtype=np.int64)
        while node[0] < self.n_leaves:
            left = 2 * node
            left_sum = self.tree[left]
            go_right = u >= left_sum
            u = np.where(go_right, u - left_sum, u)
            node = np.where(go_right, left + 1, left)
        return node - self.n_leaves


@dataclass(frozen=True)
class SequenceRecord:
    transitions: tuple
    episode_id: int
    start_index: int
    record_id: int
    arrays: dict = field(compare=False, repr=False)

    def __len__(self) -> int:
        return len(self.transitions)


def _record_arrays(trs, pad_to: int) -> dict:
    """Per-field arrays zero-padded to ``pad_to`` (behavior_prob padded with 1)."""

    def col(values, dtype, fill=0):
        out = np.full(pad_to, fill, dtype=dtype)
        out[: len(values)] = values
        return out

    return {
        "state": col([t.state for t in trs], np.int64),
        "action": col([t.action for t in trs], np.int64),
        "primitive": col([t.primitive_action for t in trs], np.int64),
        "next_state": col([t.next_state for t in trs], np.int64),
        "reward_ext": col([t.reward_ext for t in trs], float),
        "reward_int": col([t.reward_int for t in trs], float),
        "terminal": col([t.terminal for t in trs], float),
        # 1.0 where there is no bootstrap past the step (goal reached)
        "absorbing": col([t.terminal and not t.truncated for t in trs], float),
        "from_pretrained": col([t.from_pretrained for t in trs], bool),
        "behavior_prob": col([t.behavior_prob for t in trs], float, 1.0),
    }


@dataclass
class SampledBatch:
    ids: np.ndarray
    records: list
    weights: np.ndarray

    def __len__(self) -> int:
        return len(self.records)


@dataclass
class _Stream:
    episode_id: int
    transitions: list = field(default_factory=list)
    next_start: int = 0


class SequenceBuffer:
    """Ring buffer of :class:`SequenceRecord` with proportional sampling.

    A record is emitted every ``stride = sequence_length * (1 - overlap)``
    steps once a full window is available, and a shorter tail record covers
    whatever remains at episode end. Sampling probability is
    ``p_i ** priority_exponent`` over the live records.
    """

    def __init__(
        self,
        capacity: int = 4096,
        sequence_length: int = 16,
        overlap: float = 0.5,
        priority_exponent: float = 0.9,
        is_exponent: float = 0.0,
    ):
        if capacity < 1 or sequence_length < 1 or not 0.0 <= overlap < 1.0:
            raise ValidationError("invalid replay geometry")
        self.capacity = capacity
        self.sequence_length = sequence_length
        self.overlap = overlap
        self.stride = max(1, int(round(sequence_length * (1.0 - overlap))))
        self.priority_exponent = priority_exponent
        self.is_exponent = is_exponent
        self._tree = SumTree(capacity)
        self._records: list[Optional[SequenceRecord]] = [None] * capacity
        self._priorities = np.zeros(capacity)
        self._live = np.zeros(capacity, dtype=bool)
        self._next_id = 0
        self._size = 0
        self._streams: dict[int, _Stream] = {}
        self._closed: dict[int, int] = {}
        self._lock = threading.RLock()
        self.evictions = 0
        self.stale_updates = 0

    def __len__(self) -> int:
        return self._size

    # -- insertion -------------------------------------------------------------

    def append(self, tr: Transition, episode_id: int, stream: int = 0) -> None:
        with self._lock:
            st = self._streams.get(stream)
            if st is None or st.episode_id != episode_id:
                last = st.episode_id if st is not None else self._closed.get(stream)
                if last is not None and episode_id <= last:
                    raise IntegrityError(
                        f"episode id {episode_id} arrived after episode {last} on stream {stream}"
                    )
                if st is not None:
                    self._flush_tail(st)
                st = _Stream(episode_id)
                self._streams[stream] = st
            st.transitions.append(tr)
            L = self.sequence_length
            while len(st.transitions) >= st.next_start + L:
                self._emit(st, st.next_start, st.next_start + L)
                st.next_start += self.stride
            if tr.terminal:
                self._flush_tail(st)
                self._closed[stream] = episode_id
                del self._streams[stream]

    def end_episode(self, stream: int = 0) -> None:
        """Flush a stream whose episode ended without a terminal transition."""
        with self._lock:
            st = self._streams.pop(stream, None)
            if st is not None:
                self._flush_tail(st)
                self._closed[stream] = st.episode_id

    def _flush_tail(self, st: _Stream) -> None:
        if st.next_start < len(st.transitions):
            self._emit(st, st.next_start, len(st.transitions))
        st.next_start = len(st.transitions)

    def _emit(self, st: _Stream, start: int, stop: int) -> None:
        trs = tuple(st.transitions[start:stop])
        rid = self._next_id
        self._next_id += 1
        slot = rid % self.capacity
        # new records enter at the maximum priority among live records
        p = float(self._priorities[self._live].max()) if self._size else 1.0
        if self._live[slot]:
            self.evictions += 1
        else:
            self._size += 1
            self._live[slot] = True
        self._records[slot] = SequenceRecord(trs, st.episode_id, start, rid, _record_arrays(trs, self.sequence_length))
        self._set_priority(slot, p)

    def _set_priority(self, slot: int, p: float) -> None:
        self._priorities[slot] = p
        self._tree.update(slot, p**self.priority_exponent)

    # -- sampling --------------------------------------------------------------

    def sample(self, batch_size: int, rng: np.random.Generator) -> SampledBatch:
        """Proportional sample (uniform when every priority is zero); an empty batch signals an empty buffer."""
        with self._lock:
            if self._size == 0:
                return SampledBatch(np.empty(0, dtype=np.int64), [], np.empty(0))
            total = self._tree.total
            if total <= 0:
                # all priorities equal (zero): uniform over live records
                slots = rng.choice(np.flatnonzero(self._live), size=batch_size)
            else:
                slots = self._tree.find(rng.random(batch_size) * total)
                bad = self._tree[slots] <= 0
                while np.any(bad):
                    slots[bad] = self._tree.find(rng.random(int(bad.sum())) * total)
                    bad = self._tree[slots] <= 0
            records = [self._records[s] for s in slots]
            ids = np.array([r.record_id for r in records], dtype=np.int64)
            if self.is_exponent == 0.0:
                weights = np.ones(len(slots))
            elif total <= 0:
                weights = np.ones(len(slots))
            else:
                probs = self._tree[slots] / total
                weights = (self._size * probs) ** (-self.is_exponent)
                weights /= weights.max()
            return SampledBatch(ids, records, weights)

    def update_priorities(self, record_ids, priorities) -> None:
        priorities = np.asarray(priorities, dtype=float)
        if np.any(priorities < 0) or not np.all(np.isfinite(priorities)):
            raise ValidationError("priorities must be finite and non-negative")
        ids = np.asarray(record_ids, dtype=np.int64)
        with self._lock:
            slots = ids % self.capacity
            live = np.array(
                [self._records[s] is not None and self._records[s].record_id == r for s, r in zip(slots, ids)],
                dtype=bool,
            )
            self.stale_updates += int((~live).sum())
            slots, p = slots[live], priorities[live]
            self._priorities[slots] = p
            self._tree.update(slots, p**self.priority_exponent)

    # -- inspection ------------------------------------------------------------

    def priority(self, record_id: int) -> Optional[float]:
        slot = record_id % self.capacity
        rec = self._records[slot]
        return float(self._priorities[slot]) if rec is not None and rec.record_id == record_id else None

    def live_records(self) -> list[SequenceRecord]:
        return [r for r in self._records if r is not None]

    @property
    def priority_mass(self) -> float:
        return self._tree.total

    def stats(self) -> dict:
        return {
            "size": self._size,
            "priority_mass": self.priority_mass,
            "evictions": self.evictions,
            "stale_updates": self.stale_updates,
        }
