import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_mdp
from regime.mdp import ConfigurationError, MarkovPolicy, Trajectory, sample_trajectory
from regime.preference import (
    ActionQuery,
    TrajectoryQuery,
    action_preference,
    action_preference_prob,
    action_record,
    comparison_arrays,
    kappa,
    label_differences,
    read_records,
    sigmoid,
    trajectory_preference,
    trajectory_preference_prob,
    trajectory_record,
    write_records,
)

SIGMA_1 = 0.7310585786300049  # mpmath, 30 digits
SIGMA_HALF = 0.6224593312018546


def traj(phi):
    phi = np.asarray(phi, dtype=float)
    n = len(phi)
    return Trajectory(np.zeros(n, int), np.zeros(n, int), np.zeros(n, int), phi)


def test_identical_trajectories_coin_flip():
    t = traj([1.0, 2.0])
    assert trajectory_preference_prob(np.array([0.3, -1.0]), TrajectoryQuery(t, t)) == 0.5


def test_saturated_preference():
    rng = np.random.default_rng(0)
    q = TrajectoryQuery(traj([0.0]), traj([1e6]))
    labels = [trajectory_preference(np.array([1.0]), q, rng) for _ in range(10_000)]
    assert np.mean(labels) >= 0.999


def test_unit_reward_difference_frequency():
    rng = np.random.default_rng(1)
    q = TrajectoryQuery(traj([0.0]), traj([1.0]))
    labels = [trajectory_preference(np.array([1.0]), q, rng) for _ in range(100_000)]
    assert abs(np.mean(labels) - SIGMA_1) <= 0.01
    assert trajectory_preference_prob(np.array([1.0]), q) == pytest.approx(SIGMA_1, abs=1e-15)


def test_dimension_mismatch():
    with pytest.raises(ConfigurationError):
        trajectory_preference_prob(np.zeros(3), TrajectoryQuery(traj([1.0]), traj([2.0])))
    with pytest.raises(ConfigurationError):
        TrajectoryQuery(traj([1.0]), traj([2.0, 3.0]))


def test_action_preference():
    adv = np.zeros((1, 1, 2))
    adv[0, 0, 0] = -0.5
    assert action_preference_prob(adv, ActionQuery(0, 0, 1, 1)) == 0.5
    q = ActionQuery(0, 0, 0, 1)
    assert action_preference_prob(adv, q) == pytest.approx(SIGMA_HALF, abs=1e-15)
    swapped = ActionQuery(0, 0, 1, 0)
    assert action_preference_prob(adv, swapped) == pytest.approx(1 - action_preference_prob(adv, q), abs=1e-15)
    rng = np.random.default_rng(2)
    freq = np.mean([action_preference(adv, q, rng) for _ in range(100_000)])
    assert abs(freq - SIGMA_HALF) <= 0.01


def test_kappa_values():
    assert kappa(0.0) == 4.0
    assert kappa(1.0) == pytest.approx(9.524391382167263, rel=1e-14)
    with pytest.raises(ConfigurationError):
        kappa(-1.0)


@pytest.mark.parametrize("bound", [0.1, 0.5, 2.0, 4.0])
def test_kappa_is_inverse_slope_sup(bound):
    x = np.linspace(-2 * bound, 2 * bound, 10_001)  # differences of values in [-b, b]
    s = 1 / (1 + np.exp(-x))
    assert kappa(bound) == pytest.approx(float((1 / (s * (1 - s))).max()), rel=1e-9)


def test_sigmoid_clamped_no_overflow():
    with np.errstate(over="raise"):
        assert sigmoid(1e308) == pytest.approx(1.0)
        assert sigmoid(-1e308) == pytest.approx(0.0, abs=1e-12)


def test_record_roundtrip(rng):
    mdp = random_mdp(rng, d=3)
    pi = MarkovPolicy.random(3, 4, 3, rng)
    recs, dphis = [], []
    for i in range(5):
        q = TrajectoryQuery(sample_trajectory(mdp, pi, rng), sample_trajectory(mdp, pi, rng))
        recs.append(trajectory_record(i, q, trajectory_preference(mdp.theta, q, rng), seed=7))
        dphis.append(q.dphi)
    buf = io.StringIO()
    write_records(recs, buf)
    buf.seek(0)
    back = list(read_records(buf))
    assert back == recs
    dphi, labels = comparison_arrays(back, mdp.features)
    np.testing.assert_array_equal(dphi, np.array(dphis))
    np.testing.assert_array_equal(labels, [r.label for r in recs])
    with pytest.raises(ConfigurationError):
        comparison_arrays([action_record(0, ActionQuery(0, 0, 0, 1), 1)], mdp.features)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=6), st.integers(0, 2**32 - 1))
def test_complement_symmetry(values, seed):
    rng = np.random.default_rng(seed)
    a, b = traj(values), traj(rng.standard_normal(len(values)))
    theta = rng.standard_normal(len(values))
    total = trajectory_preference_prob(theta, TrajectoryQuery(a, b)) + trajectory_preference_prob(theta, TrajectoryQuery(b, a))
    assert total == pytest.approx(1.0, abs=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_seeded_determinism(seed):
    logits = np.linspace(-3, 3, 50)
    np.testing.assert_array_equal(label_differences(logits, np.random.default_rng(seed)),
                                  label_differences(logits, np.random.default_rng(seed)))


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 20), st.floats(0, 20))
def test_kappa_monotone(b1, b2):
    lo, hi = sorted((b1, b2))
    assert kappa(lo) <= kappa(hi)
