from __future__ import annotations

import threading

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from behavior_transfer.envs import Transition
from behavior_transfer.errors import IntegrityError, ValidationError
from behavior_transfer.replay import SequenceBuffer, SumTree


def episode(n, tag=0):
    return [Transition(10 * tag + i, 0, 0, float(i), 0.0, 10 * tag + i + 1, i == n - 1) for i in range(n)]


def fill(buf, ep_id, n, stream=0):
    for tr in episode(n, ep_id):
        buf.append(tr, ep_id, stream)


def frequencies(buf, n_draws, seed=0):
    b = buf.sample(n_draws, np.random.default_rng(seed))
    ids, counts = np.unique(b.ids, return_counts=True)
    return dict(zip(ids.tolist(), (counts / n_draws).tolist()))


def two_records(beta):
    buf = SequenceBuffer(capacity=8, sequence_length=4, priority_exponent=beta)
    fill(buf, 0, 3)
    fill(buf, 1, 3)
    buf.update_priorities([0, 1], [1.0, 3.0])
    return buf


# --- sum tree -------------------------------------------------------------------


def test_sum_tree_find_matches_prefix_sums():
    t = SumTree(5)
    vals = np.array([1.0, 0.0, 2.0, 0.5, 3.0])
    t.update(np.arange(5), vals)
    assert t.total == pytest.approx(6.5)
    edges = np.concatenate([[0], np.cumsum(vals)])
    u = np.linspace(0, 6.499, 500)
    assert np.array_equal(t.find(u), np.searchsorted(edges, u, side="right") - 1)


# --- windowing ------------------------------------------------------------------


def test_window_starts_by_enumeration():
    buf = SequenceBuffer(capacity=32, sequence_length=4, overlap=0.5)
    fill(buf, 0, 8)
    recs = sorted(buf.live_records(), key=lambda r: r.start_index)
    # stride 2: complete windows start at 0, 2, 4 and the tail covers what follows the last start
    assert [(r.start_index, len(r)) for r in recs] == [(0, 4), (2, 4), (4, 4), (6, 2)]
    ep = episode(8, 0)
    for r in recs:
        assert list(r.transitions) == ep[r.start_index : r.start_index + len(r)]


def test_short_episode_gives_one_short_record():
    buf = SequenceBuffer(capacity=8, sequence_length=4)
    fill(buf, 0, 2)
    assert [len(r) for r in buf.live_records()] == [2]
    arr = buf.live_records()[0].arrays
    assert arr["state"].shape == (4,)
    assert list(arr["behavior_prob"][2:]) == [1.0, 1.0]


def test_end_episode_flushes_without_terminal():
    buf = SequenceBuffer(capacity=8, sequence_length=4)
    for tr in episode(3)[:2]:
        buf.append(tr, 0)
    assert len(buf) == 0
    buf.end_episode()
    assert len(buf) == 1
    with pytest.raises(IntegrityError):
        buf.append(episode(1)[0], 0)


def test_eviction_is_oldest_first():
    buf = SequenceBuffer(capacity=3, sequence_length=4)
    for e in range(5):
        fill(buf, e, 2)
    assert len(buf) == 3
    assert sorted(r.episode_id for r in buf.live_records()) == [2, 3, 4]
    assert buf.stats()["evictions"] == 2


def test_out_of_order_episode_ids():
    buf = SequenceBuffer(capacity=8, sequence_length=4)
    fill(buf, 5, 2)
    with pytest.raises(IntegrityError):
        fill(buf, 3, 2)
    fill(buf, 3, 2, stream=1)  # streams are independent


# --- sampling -------------------------------------------------------------------


def test_proportional_sampling_beta_one():
    f = frequencies(two_records(1.0), 100_000)
    assert f[1] / f[0] == pytest.approx(3.0, rel=0.02)


def test_proportional_sampling_beta_point_nine():
    f = frequencies(two_records(0.9), 100_000)
    assert 3**0.9 == pytest.approx(2.688, abs=1e-3)
    assert f[1] / f[0] == pytest.approx(3**0.9, rel=0.02)


def test_beta_zero_is_uniform():
    f = frequencies(two_records(0.0), 100_000)
    assert f[1] / f[0] == pytest.approx(1.0, rel=0.02)


def test_priority_swap_shifts_distribution():
    buf = two_records(1.0)
    buf.update_priorities([0, 1], [3.0, 1.0])
    f = frequencies(buf, 100_000, seed=1)
    assert f[0] / f[1] == pytest.approx(3.0, rel=0.02)


def test_zero_priority_never_sampled():
    buf = two_records(0.9)
    buf.update_priorities([0], [0.0])
    assert set(buf.sample(5000, np.random.default_rng(0)).ids.tolist()) == {1}


def test_new_records_enter_at_max_priority():
    buf = two_records(0.9)
    fill(buf, 2, 2)
    assert buf.priority(2) == 3.0
    assert SequenceBuffer().sample(4, np.random.default_rng(0)).records == []


def test_negative_priority_and_stale_ids():
    buf = SequenceBuffer(capacity=2, sequence_length=4)
    for e in range(3):
        fill(buf, e, 2)
    with pytest.raises(ValidationError):
        buf.update_priorities([1], [-1.0])
    mass = buf.priority_mass
    buf.update_priorities([0], [7.0])  # evicted
    assert buf.stale_updates == 1 and buf.priority_mass == mass


def test_unit_weights_without_importance_sampling():
    b = two_records(0.9).sample(64, np.random.default_rng(0))
    assert np.array_equal(b.weights, np.ones(64))


def test_sampling_is_deterministic_given_seed():
    def run():
        buf = SequenceBuffer(capacity=16, sequence_length=4)
        rng = np.random.default_rng(3)
        out = []
        for e in range(20):
            fill(buf, e, 1 + e % 7)
            b = buf.sample(8, rng)
            buf.update_priorities(b.ids, rng.random(8))
            out.append(b.ids.tolist())
        return out

    assert run() == run()


# --- properties -----------------------------------------------------------------


@given(st.integers(0, 2**31), st.integers(1, 8), st.sampled_from([0.0, 0.25, 0.5, 0.75]))
def test_records_never_cross_episodes(seed, L, overlap):
    rng = np.random.default_rng(seed)
    buf = SequenceBuffer(capacity=64, sequence_length=L, overlap=overlap)
    for e in range(30):
        n = int(rng.integers(1, 3 * L + 2))
        trs = [Transition(e, 0, 0, 0.0, 0.0, e, i == n - 1) for i in range(n)]
        for tr in trs:
            buf.append(tr, e, stream=int(rng.integers(1)))
    for r in buf.sample(200, rng).records:
        assert {tr.state for tr in r.transitions} == {r.episode_id}
        assert all(not tr.terminal for tr in r.transitions[:-1])
        assert 1 <= len(r) <= L


@given(st.integers(0, 2**31))
def test_priority_mass_matches_live_records(seed):
    rng = np.random.default_rng(seed)
    buf = SequenceBuffer(capacity=int(rng.integers(1, 20)), sequence_length=3, priority_exponent=0.9)
    ep = 0
    for _ in range(200):
        op = rng.random()
        if op < 0.5:
            fill(buf, ep, int(rng.integers(1, 6)), stream=ep % 2)
            ep += 1
        elif len(buf):
            b = buf.sample(4, rng)
            buf.update_priorities(b.ids, rng.exponential(size=len(b)) * (rng.random(len(b)) > 0.2))
    want = sum(buf.priority(r.record_id) ** 0.9 for r in buf.live_records())
    assert buf.priority_mass == pytest.approx(want, abs=1e-9)
    assert len(buf) == len(buf.live_records()) <= buf.capacity


def test_concurrent_producers_and_consumer():
    buf = SequenceBuffer(capacity=256, sequence_length=4)

    def producer(stream):
        for e in range(200):
            fill(buf, e, 5, stream=stream)

    threads = [threading.Thread(target=producer, args=(i,)) for i in range(3)]
    for t in threads:
        t.start()
    rng = np.random.default_rng(0)
    while any(t.is_alive() for t in threads):
        b = buf.sample(8, rng)
        if len(b):
            buf.update_priorities(b.ids, rng.random(len(b)))
    for t in threads:
        t.join()
    want = sum(buf.priority(r.record_id) ** 0.9 for r in buf.live_records())
    assert buf.priority_mass == pytest.approx(want, abs=1e-9)
    assert buf.stats()["evictions"] == 3 * 200 * 2 - 256


@pytest.mark.parametrize("capacity", [1, 2, 3])
def test_tiny_capacities(capacity):
    t = SumTree(capacity)
    t.update(np.arange(capacity), np.arange(1.0, capacity + 1))
    assert t.total == sum(range(1, capacity + 1))
    t.update(0, 5.0)
    assert t.total == 5.0 + sum(range(2, capacity + 1))


def test_all_zero_priorities_sample_uniformly():
    buf = two_records(1.0)
    buf.update_priorities([0, 1], [0.0, 0.0])
    f = frequencies(buf, 20_000)
    assert f[0] == pytest.approx(0.5, abs=0.02)
    fill(buf, 2, 2)
    assert buf.priority(2) == 0.0 and len(buf.sample(10, np.random.default_rng(0))) == 10
