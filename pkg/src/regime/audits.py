"""Randomised property audits for the bounds the algorithms rely on.

Each audit returns an ``AuditResult``; ``hard`` audits are exact inequalities
that must never fail, the rest are empirical frequencies with a threshold.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .design import elliptical_potential_audit, leverage_sum
from .linear import generate_linear_mdp, regime_exploration, regime_planning, sandwich_audit, soft_value_iteration, theorem_beta
from .mdp import MarkovPolicy, TabularMDP, one_hot_features, optimal_policy, performance_difference_audit, policy_value
from .mle import fit_theta, nll
from .preference import label_differences
from .reward_free import feature_gap_audit, perturb_model, visitation_error_audit


@dataclass
class AuditResult:
    name: str
    passed: bool
    trials: int
    failures: int
    worst: float  # largest observed slack violation (or the frequency for soft audits)
    hard: bool = True
    detail: str = ""

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag} {self.name}: trials={self.trials} failures={self.failures} worst={self.worst:.6g} {self.detail}"


def random_mdp(S: int, A: int, H: int, rng: np.random.Generator, d: int | None = None) -> TabularMDP:
    """Small random instance with Gaussian unit features (one-hot when ``d`` is None)."""
    P = rng.dirichlet(np.ones(S), size=(H, S, A))
    init = rng.dirichlet(np.ones(S))
    if d is None:
        phi = one_hot_features(H, S, A)
    else:
        phi = rng.standard_normal((H, S, A, d))
        phi /= np.linalg.norm(phi, axis=-1, keepdims=True)
    theta = rng.standard_normal((H, phi.shape[-1]))
    theta /= np.maximum(1.0, np.linalg.norm(theta, axis=-1, keepdims=True))
    return TabularMDP(P, init, phi, theta, B=1.0, R=1.0)


def elliptical_audit(rng: np.random.Generator, trials: int = 100, N: int = 1000, dims=(1, 4, 8),
                     sabotage: bool = False) -> AuditResult:
    failures, worst = 0, -np.inf
    for t in range(trials):
        d = dims[t % len(dims)]
        xs = rng.standard_normal((N, d))
        xs /= np.linalg.norm(xs, axis=1, keepdims=True)
        xs *= rng.uniform(0.0, 1.0, size=(N, 1)) ** (1.0 / d)
        R_x = float(np.linalg.norm(xs, axis=1).max())
        lhs, rhs, ok = elliptical_potential_audit(R_x**2, xs, R_x, sabotage=sabotage)
        failures += not ok
        worst = max(worst, lhs - rhs)
    return AuditResult("elliptical_potential", failures == 0, trials, failures, worst)


def harmonic_check(N: int = 1000) -> float:
    """``|lhs - H_N|`` for ``d = 1``, ``lambda = 1``, ``x_n = 1``."""
    lhs, _, _ = elliptical_potential_audit(1.0, np.ones((N, 1)), 1.0)
    return abs(lhs - float(np.sum(1.0 / np.arange(1, N + 1))))


def leverage_audit(rng: np.random.Generator, trials: int = 100) -> AuditResult:
    failures, worst = 0, -np.inf
    for _ in range(trials):
        n, d = int(rng.integers(1, 200)), int(rng.integers(1, 12))
        phis = rng.standard_normal((n, d)) * rng.uniform(0.1, 3.0)
        lam = float(10 ** rng.uniform(-3, 1))
        excess = leverage_sum(lam, phis) - d
        failures += excess > 1e-9
        worst = max(worst, excess)
    return AuditResult("leverage_bound", failures == 0, trials, failures, worst)


def performance_difference_trials(rng: np.random.Generator, trials: int = 100) -> AuditResult:
    failures, worst = 0, 0.0
    for _ in range(trials):
        S, A, H = (int(x) for x in rng.integers(2, 6, size=3))
        mdp = random_mdp(S, A, H, rng)
        r = rng.uniform(-1, 1, size=(H, S, A))
        res = performance_difference_audit(mdp, r, MarkovPolicy.random(H, S, A, rng), MarkovPolicy.random(H, S, A, rng))
        failures += res > 1e-9
        worst = max(worst, res)
    return AuditResult("performance_difference", failures == 0, trials, failures, worst)


def propagation_audit(rng: np.random.Generator, eps: float = 0.05, policies: int = 20,
                      directions: int = 50, instances: int = 4) -> tuple[AuditResult, AuditResult]:
    """Visitation-error and feature-gap bounds for models at row L1 distance exactly ``eps``."""
    vis_fail = gap_fail = 0
    vis_worst = gap_worst = -np.inf
    n_vis = n_gap = 0
    for i in range(instances):
        H = 2 + i % 4  # H in 2..5
        S, A = 4, 3
        mdp = random_mdp(S, A, H, rng, d=3)
        model = perturb_model(mdp, eps, rng)
        for _ in range(policies):
            pi = MarkovPolicy.random(H, S, A, rng) if rng.random() < 0.5 else \
                MarkovPolicy.random_deterministic(H, S, A, rng)
            tv, ok = visitation_error_audit(mdp, model, pi, eps)
            n_vis += 1
            vis_fail += not ok
            vis_worst = max(vis_worst, float((tv - eps * np.arange(1, H + 1)).max()))
            for _ in range(directions):
                v = rng.standard_normal((H, mdp.d))
                v *= 2 * mdp.B * rng.uniform(0, 1, size=(H, 1)) / np.linalg.norm(v, axis=1, keepdims=True)
                gap, bound, ok = feature_gap_audit(mdp, model, pi, v, eps)
                n_gap += 1
                gap_fail += not ok
                gap_worst = max(gap_worst, gap - bound)
    return (AuditResult("visitation_propagation", vis_fail == 0, n_vis, vis_fail, vis_worst),
            AuditResult("feature_gap", gap_fail == 0, n_gap, gap_fail, gap_worst))


def soft_vi_audit(rng: np.random.Generator, mdps: int = 50, alphas=(0.01, 0.1, 1.0)) -> AuditResult:
    failures, worst, n = 0, -np.inf, 0
    for _ in range(mdps):
        S, A, H = (int(x) for x in rng.integers(2, 6, size=3))
        mdp = random_mdp(S, A, H, rng)
        r = rng.uniform(-1, 1, size=(H, S, A))
        greedy, v_star = optimal_policy(mdp, r)
        for alpha in alphas:
            soft, _, _ = soft_value_iteration(mdp, r, alpha)
            excess = v_star - policy_value(mdp, soft, r) - alpha * H * np.log(A)
            n += 1
            failures += excess > 1e-12
            worst = max(worst, excess)
    return AuditResult("soft_vi_bias", failures == 0, n, failures, worst)


def sandwich_frequency(rng: np.random.Generator, seeds: int = 40, K: int = 300, d: int = 4, S: int = 6,
                       A: int = 3, H: int = 3, delta: float = 0.1, beta_scale: float = 1.0,
                       threshold: float = 0.95) -> AuditResult:
    """Fraction of (seed, grid point) pairs where ``Q <= Q_hat <= r + P V_hat + 2 b`` holds."""
    hits, total = 0, 0
    for _ in range(seeds):
        lmdp = generate_linear_mdp(d, S, A, H, rng)
        beta = theorem_beta(d, H, lmdp.mdp.R, K, delta, beta_scale)
        data = regime_exploration(lmdp, K, beta, 1.0, rng)
        pi = MarkovPolicy.random(H, S, A, rng)
        r = lmdp.mdp.reward_table()
        res = regime_planning(data, lmdp.features, pi, r, beta, 1.0)
        ok = sandwich_audit(lmdp, res, r, pi)
        hits += int(ok.sum())
        total += ok.size
    freq = hits / total
    return AuditResult("sandwich_frequency", freq >= threshold, total, total - hits, freq, hard=False,
                       detail=f"frequency={freq:.4f} threshold={threshold}")


def mle_audit(rng: np.random.Generator, datasets: int = 20, pairs: int = 100) -> AuditResult:
    """Closed-form 1-d logit, convexity midpoints and training optimality against the truth."""
    failures, worst, n = 0, -np.inf, 0
    # one effective dimension: dphi = e_1, fraction p of positive labels
    for p in (0.2, 0.5, 0.73):
        M = 1000
        labels = (np.arange(M) < round(p * M)).astype(int)
        dphi = np.zeros((M, 2))
        dphi[:, 0] = 1.0
        est = fit_theta(dphi, labels, 100.0, 1)
        err = abs(est.flat[0] - np.log(p / (1 - p)))
        n += 1
        failures += err > 1e-4
        worst = max(worst, err - 1e-4)
    for _ in range(pairs):
        dphi = rng.standard_normal((50, 6))
        labels = rng.integers(0, 2, size=50)
        t1, t2 = rng.standard_normal(6) * 3, rng.standard_normal(6) * 3
        excess = nll((t1 + t2) / 2, dphi, labels) - 0.5 * (nll(t1, dphi, labels) + nll(t2, dphi, labels))
        n += 1
        failures += excess > 1e-12
        worst = max(worst, excess - 1e-12)
    for _ in range(datasets):
        H, d = 2, 3
        theta = rng.standard_normal((H, d))
        theta /= np.linalg.norm(theta, axis=1, keepdims=True)
        dphi = rng.standard_normal((300, H * d))
        labels = label_differences(dphi @ theta.ravel(), rng)
        est = fit_theta(dphi, labels, 1.0, H)
        excess = est.nll - nll(theta, dphi, labels)
        n += 1
        failures += excess > 1e-6
        worst = max(worst, excess - 1e-6)
    return AuditResult("mle_correctness", failures == 0, n, failures, worst)


def run_audits(rng: np.random.Generator, trials: int = 100, sabotage: bool = False,
               sandwich_seeds: int = 40) -> list[AuditResult]:
    """Every registered audit; a hard failure anywhere means the property suite failed."""
    results = [
        elliptical_audit(rng, trials, sabotage=sabotage),
        leverage_audit(rng, trials),
        performance_difference_trials(rng, trials),
        *propagation_audit(rng),
        soft_vi_audit(rng),
        mle_audit(rng),
        sandwich_frequency(rng, seeds=sandwich_seeds),
    ]
    h = harmonic_check()
    results.insert(1, AuditResult("harmonic_sum", h <= 1e-10, 1, int(h > 1e-10), h))
    return results
