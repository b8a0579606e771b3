import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import chain_mdp, random_mdp
from regime.mdp import (
    ConfigurationError,
    MarkovPolicy,
    TabularMDP,
    cumulative_reward_range,
    deterministic_policies,
    evaluate,
    feature_expectation,
    occupancy,
    optimal_policy,
    performance_difference_audit,
    policy_value,
    sample_trajectory,
)

seeds = st.integers(0, 2**32 - 1)


def always(action, H=2, S=2, A=2):
    return MarkovPolicy.deterministic(np.full((H, S), action), A)


def test_occupancy_deterministic_chain(chain):
    d = occupancy(chain, always(1))
    expected = np.zeros((2, 2, 2))
    expected[0, 0, 1] = 1.0
    expected[1, 1, 1] = 1.0
    np.testing.assert_array_equal(d, expected)


def test_occupancy_first_step_is_product(rng):
    mdp = random_mdp(rng, H=1)
    pi = MarkovPolicy.random(1, 4, 3, rng)
    np.testing.assert_allclose(occupancy(mdp, pi)[0], mdp.init[:, None] * pi.probs[0], atol=1e-15)


def test_occupancy_dimension_mismatch(chain):
    with pytest.raises(ConfigurationError):
        occupancy(chain, MarkovPolicy.uniform(3, 2, 2))


def test_feature_expectation_single_path(chain):
    phi = feature_expectation(chain, always(1))
    path = np.concatenate([chain.features[0, 0, 1], chain.features[1, 1, 1]])
    np.testing.assert_array_equal(phi, path)


def test_feature_expectation_ignores_unreachable_states(chain):
    # differ only at state 1, step 0, which is unreachable at step 0
    a = np.ones((2, 2), dtype=int)
    b = a.copy()
    b[0, 1] = 0
    np.testing.assert_array_equal(
        feature_expectation(chain, MarkovPolicy.deterministic(a, 2)),
        feature_expectation(chain, MarkovPolicy.deterministic(b, 2)),
    )


def test_feature_expectation_matches_monte_carlo():
    rng = np.random.default_rng(7)
    mdp = random_mdp(rng, S=4, A=2, H=3, d=3)
    pi = MarkovPolicy.uniform(3, 4, 2)
    draws = np.array([sample_trajectory(mdp, pi, rng).phi for _ in range(100_000)])
    se = draws.std(axis=0, ddof=1) / np.sqrt(len(draws))
    assert np.all(np.abs(draws.mean(axis=0) - feature_expectation(mdp, pi)) <= 3 * se + 1e-12)


def test_policy_value_chain(chain):
    assert policy_value(chain, always(1)) == pytest.approx(1.0, abs=1e-12)


def test_zero_reward_value(chain, rng):
    zero = np.zeros((2, 2, 2))
    for pi in (always(0), always(1), MarkovPolicy.random(2, 2, 2, rng)):
        assert policy_value(chain, pi, zero) == 0.0


def test_value_linear_in_reward(rng):
    mdp = random_mdp(rng)
    pi = MarkovPolicy.random(3, 4, 3, rng)
    r = rng.standard_normal((3, 4, 3))
    assert policy_value(mdp, pi, r) == pytest.approx(policy_value(mdp, pi, 2 * r) / 2, abs=1e-12)


def test_optimal_policy_chain(chain):
    pi, v = optimal_policy(chain)
    assert v == pytest.approx(1.0)
    np.testing.assert_array_equal(pi.actions(), np.ones((2, 2)))
    assert pi.is_deterministic


def test_optimal_zero_reward(chain):
    pi, v = optimal_policy(chain, np.zeros((2, 2, 2)))
    assert v == 0.0
    np.testing.assert_array_equal(pi.actions(), 0)  # ties go to the lowest index


def test_optimal_dominates_enumeration(rng):
    mdp = random_mdp(rng, S=2, A=2, H=3)
    _, v = optimal_policy(mdp)
    for pi in deterministic_policies(3, 2, 2):
        assert policy_value(mdp, pi) <= v + 1e-12


def test_action_independent_shift(rng):
    mdp = random_mdp(rng)
    r = rng.standard_normal((3, 4, 3))
    shift = np.zeros_like(r)
    c = rng.standard_normal(4)
    shift[0] = c[:, None]
    pi, v = optimal_policy(mdp, r)
    pi2, v2 = optimal_policy(mdp, r + shift)
    np.testing.assert_array_equal(pi.actions(), pi2.actions())
    assert v2 - v == pytest.approx(mdp.init @ c, abs=1e-12)


def test_performance_difference_examples(rng, chain):
    mdp = random_mdp(rng)
    pi = MarkovPolicy.random(3, 4, 3, rng)
    assert performance_difference_audit(mdp, None, pi, pi) == 0.0
    assert performance_difference_audit(mdp, None, pi, MarkovPolicy.random(3, 4, 3, rng)) <= 1e-9
    assert performance_difference_audit(chain, None, always(1), always(0)) <= 1e-9


def test_construction_validates_bounds():
    mdp = chain_mdp()
    with pytest.raises(ConfigurationError):
        TabularMDP(mdp.P, mdp.init, mdp.features * 2, mdp.theta, R=1.0)
    with pytest.raises(ConfigurationError):
        TabularMDP(mdp.P, mdp.init, mdp.features, mdp.theta * 5, B=1.0)
    with pytest.raises(ConfigurationError):
        TabularMDP(mdp.P, mdp.init, mdp.features, mdp.theta, r_max=0.5)
    bad = mdp.P.copy()
    bad[0, 0, 0] = [0.5, 0.4]
    with pytest.raises(ConfigurationError):
        TabularMDP(bad, mdp.init, mdp.features, mdp.theta)


def test_cumulative_range_matches_enumeration(rng):
    mdp = random_mdp(rng, S=2, A=2, H=3)
    P = mdp.P.copy()
    P[P < 0.3] = 0.0
    P /= P.sum(axis=-1, keepdims=True)
    mdp = mdp.with_dynamics(P)
    r = mdp.reward_table()
    totals = []
    import itertools
    for states in itertools.product(range(2), repeat=3):
        for actions in itertools.product(range(2), repeat=3):
            if mdp.init[states[0]] == 0:
                continue
            if any(P[h, states[h], actions[h], states[h + 1]] == 0 for h in range(2)):
                continue
            totals.append(sum(r[h, states[h], actions[h]] for h in range(3)))
    lo, hi = cumulative_reward_range(mdp)
    assert lo == pytest.approx(min(totals), abs=1e-12)
    assert hi == pytest.approx(max(totals), abs=1e-12)


def test_serialization_roundtrip(rng):
    mdp = random_mdp(rng, d=3)
    back = TabularMDP.loads(mdp.dumps())
    np.testing.assert_array_equal(back.P, mdp.P)
    np.testing.assert_array_equal(back.features, mdp.features)
    np.testing.assert_array_equal(back.theta, mdp.theta)
    assert (back.B, back.R, back.r_max) == (mdp.B, mdp.R, mdp.r_max)


def test_log_linear_policy(rng):
    phi = rng.standard_normal((2, 3, 4, 5))
    zeta = rng.standard_normal((2, 5))
    pi = MarkovPolicy.log_linear(phi, zeta)
    logits = np.einsum("hsad,hd->hsa", phi, zeta)
    expected = np.exp(logits) / np.exp(logits).sum(axis=-1, keepdims=True)
    np.testing.assert_allclose(pi.probs, expected, atol=1e-14)


# -- properties ---------------------------------------------------------------------

@settings(max_examples=60, deadline=None)
@given(seeds)
def test_occupancy_normalized(seed):
    rng = np.random.default_rng(seed)
    S, A, H = (int(x) for x in rng.integers(1, 6, size=3))
    mdp = random_mdp(rng, S, A, H)
    d = occupancy(mdp, MarkovPolicy.random(H, S, A, rng))
    np.testing.assert_allclose(d.sum(axis=(1, 2)), 1.0, atol=1e-10)
    assert np.all(d >= 0)


@settings(max_examples=60, deadline=None)
@given(seeds)
def test_value_feature_duality(seed):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng, S=3, A=2, H=4, d=3)
    pi = MarkovPolicy.random(4, 3, 2, rng)
    theta = rng.standard_normal(12)
    assert policy_value(mdp, pi, theta) == pytest.approx(feature_expectation(mdp, pi) @ theta, abs=1e-10)


@settings(max_examples=100, deadline=None)
@given(seeds)
def test_performance_difference_identity(seed):
    rng = np.random.default_rng(seed)
    S, A, H = (int(x) for x in rng.integers(1, 5, size=3))
    mdp = random_mdp(rng, S, A, H)
    r = rng.uniform(-1, 1, size=(H, S, A))
    res = performance_difference_audit(mdp, r, MarkovPolicy.random(H, S, A, rng), MarkovPolicy.random(H, S, A, rng))
    assert res <= 1e-9


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_trajectory_feature_norm(seed):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng, d=4)
    tau = sample_trajectory(mdp, MarkovPolicy.random(3, 4, 3, rng), rng)
    assert np.linalg.norm(tau.phi) <= mdp.R * np.sqrt(mdp.H) + 1e-12
    np.testing.assert_array_equal(tau.phi, mdp.features[np.arange(3), tau.states, tau.actions].ravel())


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_q_consistent_with_value(seed):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng)
    pi = MarkovPolicy.random(3, 4, 3, rng)
    Q, V = evaluate(mdp, pi)
    np.testing.assert_allclose((Q * pi.probs).sum(-1), V[:-1], atol=1e-12)
