import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from regime.mdp import ConfigurationError
from regime.mle import (
    SolverConfig,
    covariance_error,
    fit_theta,
    fit_xi,
    nll,
    project_ball_halfspaces,
    project_blocks,
)
from regime.preference import label_differences

NEG_LOG_SIGMA_1 = 0.31326168751822283  # mpmath


def test_nll_at_zero():
    dphi = np.random.default_rng(0).standard_normal((17, 4))
    labels = np.arange(17) % 2
    assert nll(np.zeros(4), dphi, labels) == pytest.approx(17 * np.log(2), rel=1e-14)


def test_nll_single_record():
    assert nll(np.array([1.0]), np.array([[1.0]]), np.array([1])) == pytest.approx(NEG_LOG_SIGMA_1, rel=1e-14)


def test_nll_empty():
    assert nll(np.zeros(3), np.zeros((0, 3)), np.zeros(0)) == 0.0


def test_nll_rejects_bad_labels():
    with pytest.raises(ConfigurationError):
        nll(np.zeros(1), np.ones((1, 1)), np.array([2]))


@pytest.mark.parametrize("p", [0.1, 0.37, 0.5, 0.9])
def test_one_dimensional_closed_form(p):
    n = 2000
    labels = (np.arange(n) < round(p * n)).astype(int)
    dphi = np.zeros((n, 3))
    dphi[:, 1] = 1.0
    est = fit_theta(dphi, labels, 100.0, 1)
    assert est.converged
    assert est.flat @ dphi[0] == pytest.approx(np.log(p / (1 - p)), abs=1e-4)


def test_null_labels_give_small_logits():
    rng = np.random.default_rng(3)
    dphi = rng.standard_normal((10_000, 4))
    dphi /= np.linalg.norm(dphi, axis=1, keepdims=True)
    labels = label_differences(np.zeros(10_000), rng)
    est = fit_theta(dphi, labels, 10.0, 2)
    assert np.abs(dphi @ est.flat).max() <= 0.1


def test_separable_data_saturates_ball():
    rng = np.random.default_rng(4)
    dphi = rng.standard_normal((200, 6))
    w = np.array([1.0, -2.0, 0.5, 0.0, 1.0, 1.0])
    labels = (dphi @ w > 0).astype(int)
    est = fit_theta(dphi, labels, 2.0, 2, config=SolverConfig(max_iter=20_000))
    # no finite minimizer exists, so some block must sit on its boundary
    assert np.linalg.norm(est.theta, axis=1).max() == pytest.approx(2.0, abs=1e-6)


def test_fit_theta_errors_and_audit():
    with pytest.raises(ConfigurationError):
        fit_theta(np.zeros((0, 4)), np.zeros(0), 1.0, 2)
    with pytest.raises(ConfigurationError):
        fit_theta(np.ones((3, 5)), np.ones(3), 1.0, 2)
    with pytest.raises(ConfigurationError):
        fit_theta(np.full((3, 4), np.nan), np.ones(3), 1.0, 2)
    est = fit_theta(np.ones((3, 4)), np.ones(3, int), 1.0, 2, r_max=0.5, trajectory_features=np.ones((2, 4)))
    assert est.r_max_violation == pytest.approx(np.abs(np.ones(4) @ est.flat) - 0.5)


def test_non_convergence_status():
    rng = np.random.default_rng(5)
    dphi = rng.standard_normal((100, 4))
    est = fit_theta(dphi, rng.integers(0, 2, 100), 5.0, 1, config=SolverConfig(max_iter=2))
    assert est.status == "max_iter"
    assert est.iterations == 2


def test_fit_xi_null_labels():
    rng = np.random.default_rng(6)
    grid = np.eye(4)
    idx = rng.integers(0, 4, size=(10_000, 2))
    dphi = grid[idx[:, 1]] - grid[idx[:, 0]]
    labels = label_differences(np.zeros(10_000), rng)
    est = fit_xi(dphi, labels, 2.0, 0.5, grid)
    assert np.abs(dphi @ est.xi).max() <= 0.1


def test_fit_xi_recovers_gap():
    rng = np.random.default_rng(7)
    g = 0.4
    dphi = np.tile([-1.0, 1.0], (10_000, 1))  # a1 = action 1 vs a0 = action 0
    labels = label_differences(np.full(10_000, g), rng)
    est = fit_xi(dphi, labels, 2.0, 0.5, np.eye(2))
    assert est.xi[1] - est.xi[0] == pytest.approx(g, abs=0.05)
    assert est.max_advantage <= 0.5 + 1e-6


def test_fit_xi_constraint_active():
    rng = np.random.default_rng(8)
    dphi = np.tile([-1.0, 1.0], (2000, 1))
    labels = label_differences(np.full(2000, 3.0), rng)  # unconstrained optimum is far outside
    grid = np.eye(2)
    est = fit_xi(dphi, labels, 10.0, 0.5, grid)
    assert (grid @ est.xi).max() <= 0.5 + 1e-6
    assert np.linalg.norm(est.xi) <= 10.0 + 1e-9


def test_fit_xi_general_rows_use_dykstra():
    rng = np.random.default_rng(9)
    grid = rng.standard_normal((6, 3))
    dphi = rng.standard_normal((500, 3))
    labels = label_differences(dphi @ np.array([2.0, -1.0, 0.5]), rng)
    est = fit_xi(dphi, labels, 1.5, 0.3, grid)
    assert (grid @ est.xi).max() <= 0.3 + 1e-6
    assert np.linalg.norm(est.xi) <= 1.5 + 1e-9


def test_fit_xi_infeasible():
    with pytest.raises(ConfigurationError):
        fit_xi(np.ones((2, 2)), np.ones(2, int), 1.0, -2.0, np.eye(2))


def test_covariance_error():
    rng = np.random.default_rng(10)
    a, b = rng.standard_normal(5), rng.standard_normal(5)
    assert covariance_error(a, a, np.eye(5)) == 0.0
    assert covariance_error(a, b, np.eye(5)) == pytest.approx(np.linalg.norm(a - b), rel=1e-14)
    M = rng.standard_normal((5, 5))
    sigma = M.T @ M + np.eye(5)
    assert covariance_error(a, b, sigma) == pytest.approx(np.sqrt((a - b) @ sigma @ (a - b)), abs=1e-12)
    with pytest.raises(ConfigurationError):
        covariance_error(a, b, -np.eye(5))
    with pytest.raises(ConfigurationError):
        covariance_error(a, b, M)


def test_projection_ball_box_matches_dykstra():
    rng = np.random.default_rng(11)
    for _ in range(20):
        x = rng.standard_normal(5) * 3
        G = np.eye(5)
        closed = project_ball_halfspaces(x, 1.0, G, 0.2)
        generic = project_ball_halfspaces(x, 1.0, G + 1e-300 * rng.standard_normal((5, 5)), 0.2)
        np.testing.assert_allclose(closed, generic, atol=1e-7)


# -- properties ------------------------------------------------------------------------

@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_convexity_midpoint(seed):
    rng = np.random.default_rng(seed)
    dphi = rng.standard_normal((30, 5))
    labels = rng.integers(0, 2, 30)
    t1, t2 = rng.standard_normal(5) * 4, rng.standard_normal(5) * 4
    assert nll((t1 + t2) / 2, dphi, labels) <= (nll(t1, dphi, labels) + nll(t2, dphi, labels)) / 2 + 1e-12


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_training_optimality(seed):
    rng = np.random.default_rng(seed)
    H, d = 2, 3
    theta = rng.standard_normal((H, d))
    theta *= rng.uniform(0, 1) / np.linalg.norm(theta, axis=1, keepdims=True)
    dphi = rng.standard_normal((200, H * d))
    labels = label_differences(dphi @ theta.ravel(), rng)
    est = fit_theta(dphi, labels, 1.0, H)
    assert est.nll <= nll(theta, dphi, labels) + 1e-6
    assert np.all(np.linalg.norm(est.theta, axis=1) <= 1.0 + 1e-9)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.2, 5.0))
def test_scale_equivariance(seed, c):
    rng = np.random.default_rng(seed)
    dphi = rng.standard_normal((150, 4))
    labels = label_differences(dphi @ np.array([0.5, -0.5, 0.2, 0.0]), rng)
    a = fit_theta(dphi, labels, 0.8, 2, config=SolverConfig(tol=1e-10))
    b = fit_theta(c * dphi, labels, 0.8 / c, 2, config=SolverConfig(tol=1e-10))
    np.testing.assert_allclose(dphi @ a.flat, c * dphi @ b.flat, atol=1e-6)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_block_projection(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(12) * 3
    p = project_blocks(x, 3, 1.0)
    assert np.all(np.linalg.norm(p.reshape(3, 4), axis=1) <= 1.0 + 1e-12)
    np.testing.assert_allclose(project_blocks(p, 3, 1.0), p)


def test_consistency_trend():
    H, d = 2, 3
    rng = np.random.default_rng(12)
    theta = rng.standard_normal((H, d))
    theta *= 0.8 / np.linalg.norm(theta, axis=1, keepdims=True)
    medians = []
    for n in (100, 1000, 10_000):
        errs = []
        for seed in range(10):
            r = np.random.default_rng(seed)
            dphi = r.standard_normal((n, H * d))
            labels = label_differences(dphi @ theta.ravel(), r)
            errs.append(np.linalg.norm(fit_theta(dphi, labels, 1.0, H).flat - theta.ravel()))
        medians.append(np.median(errs))
    assert medians[0] >= medians[1] >= medians[2]
