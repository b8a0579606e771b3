"""Linear-MDP machinery: instance generation, bonus-driven exploration,
least-squares policy evaluation, feature-expectation estimation and soft value
iteration.

Steps are 0-indexed, so the horizon-to-go at step ``h`` is ``H - h``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import logsumexp, softmax

from .mdp import (
    ConfigurationError,
    MarkovPolicy,
    TabularMDP,
    cumulative_reward_range,
    one_hot_features,
    sample_trajectory,
)

LAMBDA_FLOOR = 1e-10


@dataclass(frozen=True)
class LinearMDPFactorization:
    """``P_h(s'|s, a) = <phi_h(s, a), mu_h(s')>`` and ``r_h(s, a) = <phi_h(s, a), theta_h>``.

    ``mu`` has shape ``(H, d, S)``: row ``j`` of ``mu[h]`` is the ``j``-th measure.
    ``mdp`` is the tabular realisation used for sampling and exact checks.
    """

    mu: np.ndarray
    mdp: TabularMDP

    @property
    def features(self) -> np.ndarray:
        return self.mdp.features

    @property
    def theta(self) -> np.ndarray:
        return self.mdp.theta

    def transitions(self) -> np.ndarray:
        return np.einsum("hsad,hdt->hsat", self.features, self.mu)


def _with_bounds(P: np.ndarray, init: np.ndarray, features: np.ndarray, theta: np.ndarray) -> TabularMDP:
    """Tabular realisation with ``B``, ``R`` and ``r_max`` read off the parameters."""
    raw = TabularMDP(P, init, features, theta)
    lo, hi = cumulative_reward_range(raw)
    return TabularMDP(P, init, features, theta,
                      B=float(np.linalg.norm(raw.theta, axis=-1).max()),
                      R=float(np.linalg.norm(features, axis=-1).max()),
                      r_max=max(abs(lo), abs(hi)))


def generate_linear_mdp(
    d: int, S: int, A: int, H: int, rng: np.random.Generator, concentration: float = 0.5
) -> LinearMDPFactorization:
    """Random linear MDP with simplex features and distributional measures.

    ``phi_h(s, a) ~ Dirichlet(concentration)`` over ``d`` latent components and
    every ``mu_h`` row is a distribution over states, so the product is
    row-stochastic by construction. Rewards ``theta_h ~ U[0, 1]^d`` lie in [0, 1].
    """
    if d > S * A:
        raise ConfigurationError("need d <= |S||A|")
    features = rng.dirichlet(np.full(d, concentration), size=(H, S, A))
    mu = rng.dirichlet(np.ones(S), size=(H, d))
    theta = rng.random((H, d))
    P = np.einsum("hsad,hdt->hsat", features, mu)
    P /= P.sum(axis=-1, keepdims=True)
    init = rng.dirichlet(np.ones(S))
    return LinearMDPFactorization(mu, _with_bounds(P, init, features, theta))


def tabular_as_linear(mdp: TabularMDP) -> LinearMDPFactorization:
    """One-hot factorisation (``d = |S||A|``) of an arbitrary tabular MDP."""
    H, S, A = mdp.H, mdp.S, mdp.A
    features = one_hot_features(H, S, A)
    mu = mdp.P.reshape(H, S * A, S).copy()
    theta = mdp.reward_table().reshape(H, S * A)
    return LinearMDPFactorization(mu, _with_bounds(mdp.P, mdp.init, features, theta))


# -- exploration -----------------------------------------------------------------

@dataclass
class ExplorationData:
    states: np.ndarray  # (K, H)
    actions: np.ndarray  # (K, H)
    next_states: np.ndarray  # (K, H)
    init_states: np.ndarray  # (K,)
    logdets: np.ndarray | None = None  # (K, H) log det Lambda^k_h before episode k

    @property
    def K(self) -> int:
        return len(self.states)

    def step_features(self, features: np.ndarray, h: int) -> np.ndarray:
        return features[h, self.states[:, h], self.actions[:, h]]

    def to_records(self) -> list[dict]:
        return [
            {"episode": k, "states": self.states[k].tolist(), "actions": self.actions[k].tolist(),
             "next_states": self.next_states[k].tolist(), "init_state": int(self.init_states[k])}
            for k in range(self.K)
        ]


def regime_exploration(
    lmdp: LinearMDPFactorization, K: int, beta: float, lam: float, rng: np.random.Generator
) -> ExplorationData:
    """Optimistic LSVI with the bonus as the only reward; returns ``K`` trajectories and ``K`` initial states."""
    mdp = lmdp.mdp
    H, S, A, d = mdp.H, mdp.S, mdp.A, mdp.d
    lam = max(lam, LAMBDA_FLOOR)
    phi = mdp.features
    states = np.zeros((K, H), dtype=int)
    actions = np.zeros((K, H), dtype=int)
    nexts = np.zeros((K, H), dtype=int)
    logdets = np.zeros((K, H))
    inv = np.stack([np.eye(d) / lam] * H)
    logdet = np.full(H, d * np.log(lam))
    Phi = np.zeros((H, K, d))
    for k in range(K):
        logdets[k] = logdet
        V_next = np.zeros(S)
        pi = np.zeros((H, S), dtype=int)
        for h in range(H - 1, -1, -1):
            cap = H - h
            lev = np.einsum("sad,de,sae->sa", phi[h], inv[h], phi[h])
            b = np.minimum(beta * np.sqrt(np.maximum(lev, 0.0)), cap)
            if k:
                w = inv[h] @ (Phi[h, :k].T @ V_next[nexts[:k, h]])
            else:
                w = np.zeros(d)
            Q = np.clip(np.clip(phi[h] @ w + b / H, 0.0, cap) + b, 0.0, cap)
            pi[h] = Q.argmax(axis=-1)
            V_next = Q.max(axis=-1)
        tau = sample_trajectory(mdp, MarkovPolicy.deterministic(pi, A), rng)
        states[k], actions[k], nexts[k] = tau.states, tau.actions, tau.next_states
        for h in range(H):
            x = phi[h, tau.states[h], tau.actions[h]]
            Phi[h, k] = x
            sx = inv[h] @ x
            q = float(x @ sx)
            inv[h] -= np.outer(sx, sx) / (1.0 + q)
            logdet[h] += np.log1p(q)
    init_states = np.array([np.searchsorted(np.cumsum(mdp.init), u, side="right") for u in rng.random(K)],
                           dtype=int).clip(max=S - 1)
    return ExplorationData(states, actions, nexts, init_states, logdets)


# -- planning --------------------------------------------------------------------

@dataclass
class PlanningResult:
    values: np.ndarray  # (M,) averaged over D_in
    Q: np.ndarray  # (M, H, S, A)
    V: np.ndarray  # (M, H+1, S)
    bonus: np.ndarray  # (H, S, A)

    @property
    def value(self) -> float:
        return float(self.values[0])


class LSVIState:
    """Per-step covariances ``Lambda_h = lam I + sum_i phi_i phi_i^T`` over a frozen dataset."""

    def __init__(self, data: ExplorationData, features: np.ndarray, lam: float):
        if data.K == 0:
            raise ConfigurationError("exploration dataset is empty")
        self.data = data
        self.features = features
        self.lam = max(lam, LAMBDA_FLOOR)
        H, d = features.shape[0], features.shape[3]
        self.Phi = [data.step_features(features, h) for h in range(H)]
        self.Lambda = np.stack([self.lam * np.eye(d) + X.T @ X for X in self.Phi])
        self.chol = [cho_factor(L) for L in self.Lambda]
        self.leverage = np.stack([
            np.einsum("sad,sad->sa", features[h], cho_solve(self.chol[h], features[h].reshape(-1, d).T)
                      .T.reshape(features[h].shape))
            for h in range(H)
        ])

    def bonus(self, beta: float) -> np.ndarray:
        H = self.features.shape[0]
        caps = 2.0 * (H - np.arange(H))
        return np.minimum(beta * np.sqrt(np.maximum(self.leverage, 0.0)), caps[:, None, None])

    def regress(self, h: int, targets: np.ndarray) -> np.ndarray:
        """Weights ``Lambda_h^{-1} sum_i phi_i y_i`` for targets ``(M, K)``; returns ``(d, M)``."""
        return cho_solve(self.chol[h], self.Phi[h].T @ targets.T)


def regime_planning(
    data: ExplorationData | LSVIState,
    features: np.ndarray,
    policy: MarkovPolicy,
    reward: np.ndarray,
    beta: float,
    lam: float,
    bonus_sign: float = 1.0,
) -> PlanningResult:
    """Least-squares policy evaluation with a clipped optimism bonus.

    ``reward`` is a table ``(H, S, A)`` or a batch ``(M, H, S, A)``; per-step
    values are expected in [-1, 1].  ``bonus_sign=-1`` is an ablation switch.
    """
    lsvi = data if isinstance(data, LSVIState) else LSVIState(data, features, lam)
    reward = np.asarray(reward, dtype=float)
    single = reward.ndim == 3
    r = reward[None] if single else reward
    M, H, S, A = r.shape
    b = lsvi.bonus(beta)
    pi = policy.probs
    nexts = lsvi.data.next_states
    Q = np.empty((M, H, S, A))
    V = np.zeros((M, H + 1, S))
    for h in range(H - 1, -1, -1):
        cap = float(H - h)
        if h == H - 1:
            fitted = np.zeros((M, S, A))
        else:
            w = lsvi.regress(h, V[:, h + 1, nexts[:, h]])
            fitted = np.einsum("sad,dm->msa", features[h], w)
        Q[:, h] = np.clip(np.clip(fitted + r[:, h], -cap, cap) + bonus_sign * b[h], -cap, cap)
        V[:, h] = np.einsum("msa,sa->ms", Q[:, h], pi[h])
    values = V[:, 0, lsvi.data.init_states].mean(axis=1)
    return PlanningResult(values, Q, V, b)


def coordinate_rewards(features: np.ndarray, R: float) -> np.ndarray:
    """Rewards ``r^{h,j}`` for every ``(h, j)``: ``phi_h(s, a)_j / R`` at step ``h``, zero elsewhere."""
    H, S, A, d = features.shape
    out = np.zeros((H, d, H, S, A))
    for h in range(H):
        out[h, :, h] = np.moveaxis(features[h], -1, 0) / R
    return out.reshape(H * d, H, S, A)


def estimate_feature_expectations(
    data: ExplorationData | LSVIState,
    features: np.ndarray,
    policy: MarkovPolicy,
    R: float,
    beta: float = 0.0,
    lam: float = 1.0,
) -> np.ndarray:
    """``phi_hat(pi)_{h,j} = R * V_hat^pi(r^{h,j})`` from one batched planning pass."""
    lsvi = data if isinstance(data, LSVIState) else LSVIState(data, features, lam)
    res = regime_planning(lsvi, features, policy, coordinate_rewards(features, R), beta, lam)
    return R * res.values


def sandwich_audit(
    lmdp: LinearMDPFactorization, result: PlanningResult, reward: np.ndarray, policy: MarkovPolicy
) -> np.ndarray:
    """Boolean grid ``(H, S, A)``: ``Q^pi_h <= Q_hat_h <= r_h + P*_h V_hat_{h+1} + 2 b_h``."""
    from .mdp import evaluate

    mdp = lmdp.mdp
    Q_true, _ = evaluate(mdp, policy, reward)
    Q_hat, V_hat = result.Q[0], result.V[0]
    upper = reward + np.einsum("hsat,ht->hsa", mdp.P, V_hat[1:]) + 2.0 * result.bonus
    tol = 1e-9
    return (Q_true <= Q_hat + tol) & (Q_hat <= upper + tol)


def theorem_beta(d: int, H: int, R: float, K: int, delta: float, C: float = 1.0, log_cover: float = 0.0) -> float:
    """``C d H R sqrt(log(d K H R / delta) + log N)``."""
    return C * d * H * R * np.sqrt(np.log(max(d * K * H * R / delta, np.e)) + log_cover)


# -- candidate policies from the exploration data -----------------------------------------

def lsvi_control(
    lsvi: LSVIState, reward: np.ndarray, alpha: float | None = None
) -> MarkovPolicy:
    """Greedy (``alpha=None``) or softmax policy from unclipped least-squares value iteration.

    With ``reward = <phi, theta>`` and no clipping, ``Q_h = <phi_h, theta_h + w_h>``,
    so the softmax policy is log-linear with ``zeta_h = (theta_h + w_h) / alpha``.
    """
    features = lsvi.features
    H, S, A, _ = features.shape
    nexts = lsvi.data.next_states
    V_next = np.zeros(S)
    probs = np.empty((H, S, A))
    for h in range(H - 1, -1, -1):
        fitted = features[h] @ lsvi.regress(h, V_next[nexts[:, h]][None])[:, 0] if h < H - 1 else 0.0
        Q = reward[h] + fitted
        if alpha is None:
            probs[h] = np.eye(A)[Q.argmax(axis=-1)]
            V_next = Q.max(axis=-1)
        else:
            probs[h] = softmax(Q / alpha, axis=-1)
            V_next = alpha * logsumexp(Q / alpha, axis=-1)
    return MarkovPolicy(probs)


# -- entropy regularisation ---------------------------------------------------------------

def soft_value_iteration(
    mdp: TabularMDP, reward, alpha: float, model=None
) -> tuple[MarkovPolicy, np.ndarray, np.ndarray]:
    """Entropy-regularised optimal policy ``pi_h(a|s) ∝ exp(Q_h(s, a) / alpha)``.

    Returns the policy, ``Q (H, S, A)`` and the soft values ``V (H+1, S)``.
    """
    from .mdp import _dynamics, _reward

    if alpha <= 0:
        raise ConfigurationError("alpha must be positive")
    P, _ = _dynamics(mdp, model)
    r = _reward(mdp, reward)
    Q = np.empty_like(r)
    V = np.zeros((mdp.H + 1, mdp.S))
    for h in range(mdp.H - 1, -1, -1):
        Q[h] = r[h] + P[h] @ V[h + 1]
        V[h] = alpha * logsumexp(Q[h] / alpha, axis=-1)
    return MarkovPolicy(softmax(Q / alpha, axis=-1)), Q, V


def soft_optimal_zeta(lmdp: LinearMDPFactorization, alpha: float) -> np.ndarray:
    """Log-linear parameters ``zeta_h = (theta_h + mu_h V*_{alpha, h+1}) / alpha`` of the soft-optimal policy."""
    _, _, V = soft_value_iteration(lmdp.mdp, None, alpha)
    w = lmdp.theta + np.einsum("hdt,ht->hd", lmdp.mu, V[1:])
    return w / alpha
