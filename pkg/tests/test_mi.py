import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from conftest import gaussian_mi, plugin_mi, sample_discrete
from misc_rl import mi
from misc_rl.ndmath import DivergenceError, make_rng

finite = st.floats(-50, 50, allow_nan=False)


class ConstNet:
    """Statistics stand-in returning fixed scores by pair position."""

    def __init__(self, goal_dim, ctrl_dim, table):
        self.goal_dim, self.ctrl_dim, self.table = goal_dim, ctrl_dim, table

    def scores(self, g, c):
        return np.asarray(self.table(np.atleast_2d(g), np.atleast_2d(c)), dtype=np.float64)


SPLIT = mi.StateSplit((0, 1), ((2, 3),))


def test_state_split_validation():
    with pytest.raises(ValueError, match="exclusive|overlap|disjoint"):
        mi.StateSplit((0, 1), ((1, 2),))
    with pytest.raises(ValueError):
        mi.StateSplit((0, 0), ((2,),))
    with pytest.raises(ValueError):
        SPLIT.validate(3)
    SPLIT.validate(4)
    two = mi.StateSplit((0, 1), ((2, 3), (4, 5)))
    assert two.n_groups == 2


def test_dv_examples():
    assert mi.dv_lower_bound([0, 0], [0, 0]) == 0.0
    assert mi.dv_lower_bound([1.0, 2.0], [0.0, 0.0]) == pytest.approx(1.5, abs=1e-15)
    with pytest.raises(ValueError):
        mi.dv_lower_bound([], [1.0])
    with pytest.raises(ValueError):
        mi.dv_lower_bound([1.0], [np.nan])


def test_dv_stable_for_large_scores():
    v = mi.dv_lower_bound([800.0], [800.0, 800.0])
    assert v == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=300)
@given(arrays(np.float64, st.integers(1, 30), elements=finite))
def test_dv_jensen(v):
    assert mi.dv_lower_bound(v, v) <= 1e-12


def test_shuffle_two_is_swap():
    assert mi.shuffle_marginal(["a", "b"], make_rng(0)) == ["b", "a"]
    with pytest.raises(ValueError):
        mi.shuffle_marginal([1], make_rng(0))


def test_shuffle_seeded_length_five():
    # frozen from a seed-0 PCG64 stream
    assert mi.marginal_permutation(5, make_rng(0)).tolist() == FROZEN_PERM5


FROZEN_PERM5 = [2, 4, 3, 0, 1]


@settings(max_examples=200)
@given(st.integers(2, 40), st.integers(0, 2**31))
def test_shuffle_is_nonidentity_permutation(n, seed):
    items = list(range(n))
    out = mi.shuffle_marginal(items, make_rng(seed))
    assert sorted(out) == items
    assert out != items


def test_transition_reward_examples():
    cfg1 = mi.MiRewardConfig(alpha=1.0)
    s_t, s_tp1 = np.array([0.0, 0.0, 5.0, 5.0]), np.array([1.0, 0.0, 6.0, 5.0])
    # rows: joint (t), joint (t+1), swap (g_t, c_t+1), swap (g_t+1, c_t)
    net = ConstNet(2, 2, lambda g, c: np.array([1.0, 2.0, 0.0, 0.0]))
    frac = mi.TrajectoryFraction(s_t, s_tp1)
    assert mi.transition_mi_raw(s_t, s_tp1, SPLIT, net)[0] == pytest.approx(1.5)
    assert mi.transition_reward(frac, SPLIT, net, cfg1) == 1.0
    const = ConstNet(2, 2, lambda g, c: np.full(len(g), 3.7))
    assert mi.transition_reward(frac, SPLIT, const, mi.MiRewardConfig()) == 0.0


def test_agent_static_gives_zero_reward():
    stat = mi.StatisticsNet(2, 2, rng=make_rng(1))
    s_t = np.array([0.1, 0.2, 0.3, 0.4])
    s_tp1 = np.array([0.1, 0.2, 0.9, -0.4])
    raw = mi.transition_mi_raw(s_t, s_tp1, SPLIT, stat)[0]
    assert raw <= 1e-15
    assert mi.transition_reward(mi.TrajectoryFraction(s_t, s_tp1), SPLIT, stat, mi.MiRewardConfig()) == 0.0


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, 8, elements=st.floats(-1e3, 1e3)), st.integers(0, 1000))
def test_reward_in_unit_interval(x, seed):
    stat = mi.StatisticsNet(2, 2, rng=make_rng(seed))
    stat.net.params[:] *= 1 + seed % 50
    r = mi.transition_reward(mi.TrajectoryFraction(x[:4], x[4:]), SPLIT, stat, mi.MiRewardConfig())
    assert 0.0 <= r <= 1.0


def test_multi_group_additivity():
    split = mi.StateSplit((0, 1), ((2, 3), (4, 5)))
    nets = mi.make_statistics_nets(split, rng=make_rng(2))
    rng = make_rng(3)
    s_t, s_tp1 = rng.normal(size=(7, 6)), rng.normal(size=(7, 6))
    total = mi.transition_mi_raw(s_t, s_tp1, split, nets)
    parts = [
        mi.transition_mi_raw(s_t[:, [0, 1, 2 + 2 * k, 3 + 2 * k]], s_tp1[:, [0, 1, 2 + 2 * k, 3 + 2 * k]], SPLIT, nets[k])
        for k in range(2)
    ]
    assert np.array_equal(total, parts[0] + parts[1])
    with pytest.raises(ValueError, match="statistics networks"):
        mi.transition_mi_raw(s_t, s_tp1, split, nets[0])


def test_two_state_trajectory_equals_raw_reward():
    stat = mi.StatisticsNet(2, 2, rng=make_rng(4))
    rng = make_rng(5)
    traj = rng.normal(size=(2, 4))
    raw = mi.transition_mi_raw(traj[0], traj[1], SPLIT, stat)[0]
    assert mi.trajectory_mi(traj, SPLIT, stat, rng) == pytest.approx(raw, abs=1e-12)
    with pytest.raises(ValueError):
        mi.trajectory_mi(traj[:1], SPLIT, stat, rng)


def test_trajectory_mi_many_matches_single():
    stat = mi.StatisticsNet(2, 2, rng=make_rng(6))
    trajs = [make_rng(k).normal(size=(n, 4)) for k, n in enumerate((2, 5, 9))]
    many = mi.trajectory_mi_many(trajs, SPLIT, stat, make_rng(7))
    rng = make_rng(7)
    single = [mi.trajectory_mi(t, SPLIT, stat, rng) for t in trajs]
    assert np.allclose(many, single, atol=1e-12)


def test_estimator_step_reports_pre_step_raw():
    stat = mi.StatisticsNet(2, 2, rng=make_rng(8))
    rng = make_rng(9)
    s_t, s_tp1 = rng.normal(size=(16, 4)), rng.normal(size=(16, 4))
    before = mi.transition_mi_raw(s_t, s_tp1, SPLIT, stat)
    _, raw = mi.estimator_step((s_t, s_tp1), SPLIT, stat, "log")
    assert np.array_equal(raw, before)
    assert not np.array_equal(mi.transition_mi_raw(s_t, s_tp1, SPLIT, stat), before)


@pytest.mark.parametrize("surrogate", mi.SURROGATES)
def test_train_estimator_independent_data_stays_near_zero(surrogate):
    rng = make_rng(10)
    stat = mi.StatisticsNet(2, 2, rng=make_rng(11))
    for _ in range(2000):
        s_t, s_tp1 = rng.normal(size=(64, 4)), rng.normal(size=(64, 4))
        mi.train_estimator((s_t, s_tp1), SPLIT, stat, surrogate=surrogate)
    trajs = [rng.normal(size=(50, 4)) for _ in range(100)]
    assert abs(np.mean(mi.trajectory_mi_many(trajs, SPLIT, stat, rng))) < 0.1


def test_train_estimator_rejects_bad_input():
    stat = mi.StatisticsNet(2, 2, rng=make_rng(0))
    with pytest.raises(ValueError):
        mi.train_estimator([], SPLIT, stat)
    with pytest.raises(ValueError, match="surrogate"):
        mi.train_estimator((np.zeros((2, 4)), np.ones((2, 4))), SPLIT, stat, surrogate="nwj")
    stat.net.params[:] = np.nan
    with pytest.raises((DivergenceError, ValueError, FloatingPointError)):
        mi.train_estimator((np.zeros((2, 4)), np.ones((2, 4))), SPLIT, stat)


def test_train_estimator_copy_channel_approaches_ln4():
    # s^g = s^c, one-hot of 4 uniform symbols; pairs are independent draws
    rng = make_rng(12)
    split = mi.StateSplit((0, 1, 2, 3), ((4, 5, 6, 7),))
    stat = mi.StatisticsNet(4, 4, rng=make_rng(13))
    eye = np.eye(4)

    def states(n):
        sym = rng.integers(0, 4, n)
        return np.concatenate([eye[sym], eye[sym]], axis=1)

    for _ in range(1500):
        mi.train_estimator((states(128), states(128)), split, stat)
    held = [states(64) for _ in range(50)]
    est = float(np.mean(mi.trajectory_mi_many(held, split, stat, rng)))
    assert np.log(4) - 0.15 <= est <= np.log(4) + 0.05


def test_coupled_trajectories_score_above_independent():
    rng = make_rng(14)
    stat = mi.StatisticsNet(2, 2, rng=make_rng(15))

    def coupled(n):
        c = rng.uniform(-1, 1, (n, 2))
        return np.concatenate([c, c], axis=1)

    for _ in range(800):
        a, b = coupled(128), coupled(128)
        mi.train_estimator((a, b), SPLIT, stat)
    pair = [coupled(50) for _ in range(20)]
    indep = [rng.uniform(-1, 1, (50, 4)) for _ in range(20)]
    assert np.mean(mi.trajectory_mi_many(pair, SPLIT, stat, rng)) > np.mean(mi.trajectory_mi_many(indep, SPLIT, stat, rng))


def test_constant_goal_trajectory_estimate_small():
    # trained on random-walk trajectories whose goal state never moves
    rng = make_rng(16)
    stat = mi.StatisticsNet(2, 2, rng=make_rng(17))

    def traj():
        c = np.cumsum(rng.normal(0, 0.05, (50, 2)), axis=0) + rng.uniform(-0.5, 0.5, 2)
        g = np.repeat(rng.uniform(-1, 1, (1, 2)), 50, axis=0)
        return np.concatenate([c, g], axis=1)

    data = [traj() for _ in range(100)]
    for _ in range(500):
        idx = rng.integers(0, 100, 128)
        t = rng.integers(0, 49, 128)
        mi.train_estimator((np.stack([data[i][k] for i, k in zip(idx, t)]), np.stack([data[i][k + 1] for i, k in zip(idx, t)])), SPLIT, stat)
    held = [traj() for _ in range(100)]
    assert np.mean(mi.trajectory_mi_many(held, SPLIT, stat, rng)) <= 0.05


# -- generic pairwise estimates ---------------------------------------------------------


def test_estimate_pairs_length_checks():
    with pytest.raises(ValueError, match="length"):
        mi.estimate_mi_pairs(np.zeros((100, 1)), np.zeros((99, 1)))
    with pytest.raises(ValueError, match="100"):
        mi.estimate_mi_pairs(np.zeros((50, 1)), np.zeros((50, 1)))


def test_estimate_pairs_independent_below_threshold():
    rng = make_rng(18)
    x, y = rng.normal(size=(4000, 1)), rng.normal(size=(4000, 1))
    assert mi.estimate_mi_pairs(x, y, steps=1500, seed=0) < 0.1


@pytest.mark.slow
def test_estimate_pairs_copy8():
    rng = make_rng(19)
    sym = rng.integers(0, 8, 6000)
    x = np.eye(8)[sym]
    est = mi.estimate_mi_pairs(x, x.copy(), seed=0)
    assert np.log(8) - 0.2 <= est <= np.log(8) + 0.05


@pytest.mark.slow
def test_estimate_pairs_affine_grows():
    rng = make_rng(20)
    x = rng.normal(size=(6000, 1))
    assert mi.estimate_mi_pairs(x, 2 * x + 1, seed=0) > 2.0


def test_oracles_agree_with_closed_forms():
    # sanity of the test oracles themselves
    assert plugin_mi(np.eye(4) / 4) == pytest.approx(np.log(4))
    assert plugin_mi(np.full((3, 3), 1 / 9)) == pytest.approx(0.0, abs=1e-15)
    assert gaussian_mi(0.9) == pytest.approx(0.8304, abs=1e-4)
    x, y = sample_discrete(np.eye(4) / 4, 100, make_rng(0))
    assert np.array_equal(x, y)


def test_estimate_pairs_singleton_groups_rejected():
    rng = make_rng(21)
    x = rng.normal(size=(200, 1))
    with pytest.raises(ValueError, match="one sample each"):
        mi.estimate_mi_pairs(x, x, steps=5, groups=np.arange(200))
