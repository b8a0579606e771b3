import numpy as np
import pytest

from conftest import chain_mdp, random_mdp
from regime.driver import (
    EventLog,
    RegimeReport,
    design_tabular,
    run_regime_action,
    run_regime_lin,
    run_regime_tabular,
    run_uniform_baseline,
    split_streams,
)
from regime.instances import (
    anisotropic_mdp,
    gap_separated_mdp,
    linear_instance,
    random_tabular_mdp,
)
from regime.mdp import ConfigurationError, MarkovPolicy, TabularMDP, cumulative_reward_range, one_hot_features


def test_zero_reward_has_zero_gap(rng):
    mdp = chain_mdp(reward=0.0)
    rep = run_regime_tabular(mdp, 20, 8.0, rng)
    assert rep.gap == 0.0


def test_chain_learns_to_move(rng):
    rep = run_regime_tabular(chain_mdp(), 200, 8.0, rng)
    assert rep.gap <= 1e-12


def test_counts_and_phase_separation(rng):
    rep = run_regime_tabular(random_tabular_mdp(3, 2, 2, rng, r_max=2.0), 15, 16.0, rng)
    assert rep.n_hum == 15 and rep.n_tra == 30
    assert rep.events.phase_separated()
    assert len(rep.objectives) == 15
    assert all(b >= a for a, b in zip(rep.logdets, rep.logdets[1:]))


def test_event_log_detects_interleaving():
    log = EventLog()
    log.mark("rollout", 2)
    log.mark("label")
    assert log.phase_separated()
    log.mark("rollout", 2)
    assert not log.phase_separated()


def test_reproducible(rng):
    mdp = random_tabular_mdp(3, 2, 3, np.random.default_rng(1), r_max=2.0)
    a = run_regime_tabular(mdp, 30, 24.0, np.random.default_rng(7))
    b = run_regime_tabular(mdp, 30, 24.0, np.random.default_rng(7))
    np.testing.assert_array_equal(a.params, b.params)
    assert a.gap == b.gap


def test_no_data_baseline(rng):
    mdp = random_tabular_mdp(3, 2, 3, rng, r_max=2.0)
    a = run_regime_tabular(mdp, 0, 24.0, np.random.default_rng(3))
    b = run_uniform_baseline(mdp, 0, np.random.default_rng(3), lam=24.0)
    assert a.status == "no-data" and a.n_hum == 0
    np.testing.assert_array_equal(a.params, 0.0)
    np.testing.assert_array_equal(a.policy.probs, b.policy.probs)
    assert a.gap == b.gap


def test_single_action_gap_zero(rng):
    H, S = 3, 3
    P = rng.dirichlet(np.ones(S), size=(H, S, 1))
    theta = rng.uniform(-0.3, 0.3, size=(H, S))
    mdp = TabularMDP(P, np.full(S, 1 / 3), one_hot_features(H, S, 1), theta, B=1.0, R=1.0, r_max=1.0)
    rep = run_regime_tabular(mdp, 10, 12.0, rng)
    assert rep.gap == 0.0


def test_prefix_design_matches_fresh_run():
    mdp = random_tabular_mdp(3, 2, 3, np.random.default_rng(2), r_max=2.0)
    long = design_tabular(mdp, 40, 24.0, split_streams(np.random.default_rng(5))["design"])
    fresh = run_regime_tabular(mdp, 25, 24.0, np.random.default_rng(5))
    shared = run_regime_tabular(mdp, 25, 24.0, np.random.default_rng(5), design=long)
    np.testing.assert_array_equal(fresh.params, shared.params)
    assert fresh.sigma_error == pytest.approx(shared.sigma_error, rel=1e-9)


def test_bad_inputs(rng):
    mdp = random_tabular_mdp(3, 2, 3, rng, r_max=2.0)
    with pytest.raises(ConfigurationError):
        run_regime_tabular(mdp, -1, 24.0, rng)
    with pytest.raises(ConfigurationError):
        run_regime_tabular(mdp, 5, 0.0, rng)
    with pytest.raises(ConfigurationError):
        run_regime_lin(linear_instance(3, 4, 2, 2, rng), 5, 0, 1.0, rng)


def test_negative_gap_rejected():
    with pytest.raises(AssertionError):
        RegimeReport("tabular", MarkovPolicy.uniform(1, 1, 1), np.zeros((1, 1)), -1.0, 0.0, 1.0, 0, 0)


def test_reward_free_mode(rng):
    mdp = random_tabular_mdp(3, 2, 2, rng, r_max=2.0)
    rep = run_regime_tabular(mdp, 20, 16.0, rng, transitions="reward-free", rf_budget=500)
    assert rep.extras["transitions"] == "ok"
    assert 0 < rep.eps_audited < 2


def test_markov_candidates(rng):
    mdp = random_tabular_mdp(4, 3, 3, rng, r_max=2.0)
    rep = run_regime_tabular(mdp, 20, 24.0, rng, candidates="markov")
    assert rep.n_hum == 20 and np.isfinite(rep.sigma_error)


def test_linear_pipeline(rng):
    lmdp = linear_instance(3, 5, 2, 3, rng)
    rep = run_regime_lin(lmdp, 30, 200, 1.0, rng, n_candidates=8)
    assert rep.mode == "linear"
    assert rep.n_hum == 30
    assert rep.gap >= 0
    assert np.isfinite(rep.extras["phi_error"])


def test_action_pipeline():
    mdp = gap_separated_mdp(3, 2, 2, np.random.default_rng(0))
    rep = run_regime_action(mdp, 400, 1.0, np.random.default_rng(0), B_adv=0.5, B=max(mdp.B, 1.0))
    assert rep.mode == "action"
    assert rep.kappa_adv < rep.kappa
    assert rep.extras["recovered"]


def test_instances_respect_bounds():
    rng = np.random.default_rng(0)
    mdp = random_tabular_mdp(4, 3, 3, rng, r_max=2.0)
    lo, hi = cumulative_reward_range(mdp)
    assert max(abs(lo), abs(hi)) == pytest.approx(2.0)
    lock = anisotropic_mdp(6, 3, 4, rng)
    assert lock.r_max == pytest.approx(2.0)
    with pytest.raises(ConfigurationError):
        anisotropic_mdp(3, 3, 4, rng)
