import numpy as np
import pytest

from misc_rl.ndmath import make_rng
from misc_rl.replay import ReplayBuffer, TrajectoryRecord


def _traj(n, rng, goal=False, sd=4):
    return TrajectoryRecord(
        rng.normal(size=(n + 1, sd)),
        rng.uniform(-0.05, 0.05, (n, 2)),
        rng.integers(0, 2, n).astype(float),
        None,
        rng.uniform(-1, 1, 2) if goal else None,
    )


def test_record_shapes_validated():
    rng = make_rng(0)
    with pytest.raises(ValueError, match="one more state"):
        TrajectoryRecord(np.zeros((3, 4)), np.zeros((3, 2)))
    rec = _traj(5, rng)
    assert len(rec) == 5
    tr = rec.transition(2)
    assert np.array_equal(tr.s_tp1, rec.states[3])
    fr = rec.fraction(4)
    assert np.array_equal(fr.s_t, rec.states[4]) and np.array_equal(fr.s_tp1, rec.states[5])


def test_sampled_transitions_are_adjacent_pairs():
    rng = make_rng(1)
    buf = ReplayBuffer(1000)
    recs = [_traj(n, rng) for n in (3, 7, 1, 10)]
    for r in recs:
        buf.store(r)
    b = buf.sample_batch(500, rng)
    for k in range(len(b)):
        rec = recs[b.traj_index[k]]
        t = b.t_index[k]
        assert np.array_equal(b.s[k], rec.states[t])
        assert np.array_equal(b.s2[k], rec.states[t + 1])
        assert np.array_equal(b.a[k], rec.actions[t])
        assert b.r[k] == rec.rewards[t]


def test_uniform_covers_all_transitions():
    rng = make_rng(2)
    buf = ReplayBuffer(1000)
    for n in (2, 3, 5):
        buf.store(_traj(n, rng))
    idx = buf.sample_indices(20_000, rng)
    counts = np.bincount(idx, minlength=10)
    assert np.all(np.abs(counts / 20_000 - 0.1) < 0.01)


def test_capacity_evicts_oldest():
    rng = make_rng(3)
    buf = ReplayBuffer(10)
    first = _traj(4, rng)
    buf.store(first)
    buf.store(_traj(4, rng))
    buf.store(_traj(4, rng))
    assert len(buf) == 8 and buf.n_trajectories == 2
    assert all(r is not first for r in buf.records)
    with pytest.raises(ValueError, match="capacity"):
        buf.store(_traj(11, rng))


def test_store_rejects_mismatches():
    rng = make_rng(4)
    buf = ReplayBuffer(100)
    buf.store(_traj(3, rng))
    with pytest.raises(ValueError, match="dimensions"):
        buf.store(_traj(3, rng, sd=6))
    with pytest.raises(ValueError, match="goal"):
        buf.store(_traj(3, rng, goal=True))
    with pytest.raises(ValueError, match="empty"):
        ReplayBuffer(10).sample_indices(1, rng)


def test_prioritized_proportional_to_priority():
    rng = make_rng(5)
    buf = ReplayBuffer(1000, refresh_interval=5)
    for _ in range(3):
        buf.store(_traj(4, rng))
    scores = np.array([1.0, 3.0, 0.0])
    buf.refresh_priorities(lambda recs: [scores[buf.records.index(r)] for r in recs])
    assert [r.priority for r in buf.records] == [1.0, 3.0, 1e-3]
    b = buf.sample_batch(40_000, rng, prioritized=True)
    freq = np.bincount(b.traj_index, minlength=3) / 40_000
    expected = np.array([1.0, 3.0, 1e-3]) / 4.001
    assert np.allclose(freq, expected, atol=0.01)


def test_priority_refresh_is_lazy():
    rng = make_rng(6)
    buf = ReplayBuffer(1000, refresh_interval=2)
    calls = []

    def fn(recs):
        calls.append(len(recs))
        return [0.5] * len(recs)

    buf.store(_traj(4, rng))
    buf.sample_indices(4, rng, True, fn)
    assert calls == [1]
    buf.tick()
    buf.tick()
    buf.sample_indices(4, rng, True, fn)
    assert calls == [1]
    buf.tick()
    buf.store(_traj(4, rng))
    buf.sample_indices(4, rng, True, fn)
    assert calls == [1, 2]


def test_nonfinite_priority_falls_to_floor():
    rng = make_rng(7)
    buf = ReplayBuffer(100, priority_floor=0.01)
    buf.store(_traj(3, rng))
    buf.refresh_priorities(lambda recs: [np.nan])
    assert buf.records[0].priority == 0.01


def test_snapshot_roundtrip(tmp_path):
    rng = make_rng(8)
    buf = ReplayBuffer(500)
    for n in (3, 9, 2):
        buf.store(_traj(n, rng, goal=True))
    buf.refresh_priorities(lambda recs: [0.2, 0.7, 0.4])
    path = tmp_path / "buf.bin"
    buf.save(path)
    assert path.read_bytes()[:8] == b"MISCBUF1"
    back = ReplayBuffer.load(path)
    assert back.capacity == 500 and len(back) == len(buf)
    for a, b in zip(buf.records, back.records):
        assert np.array_equal(a.states, b.states)
        assert np.array_equal(a.actions, b.actions)
        assert np.array_equal(a.rewards, b.rewards)
        assert np.array_equal(a.goal, b.goal)
        assert a.priority == b.priority and a.priority_age == b.priority_age


def test_snapshot_rejects_garbage(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(b"NOTABUF0" + bytes(40))
    with pytest.raises(ValueError, match="MISCBUF1"):
        ReplayBuffer.load(p)


def test_pair_views():
    rng = make_rng(9)
    buf = ReplayBuffer(100)
    buf.store(_traj(6, rng))
    for tr, fr in buf.sample_uniform(10, rng) + buf.sample_prioritized(10, rng):
        assert np.array_equal(tr.s_t, fr.s_t) and np.array_equal(tr.s_tp1, fr.s_tp1)
