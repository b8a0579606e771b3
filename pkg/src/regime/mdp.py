"""Exact finite-horizon MDP machinery.

Everything here is exact dynamic programming over explicit tables, so the same
routines act both as the simulation environment and as the ground-truth oracle
for the learning components.

Array conventions (0-indexed steps ``h = 0..H-1``):

* ``P``        transitions, shape ``(H, S, A, S)``
* ``init``     initial distribution, shape ``(S,)``
* ``features`` shape ``(H, S, A, d)``
* ``theta``    reward parameters, shape ``(H, d)``; flattened it is ``(H*d,)``
* policies     ``(H, S, A)`` conditional action probabilities
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

PROB_TOL = 1e-12


class ConfigurationError(ValueError):
    """Raised when inputs have inconsistent shapes or violate a declared bound."""


def _check_stochastic(arr: np.ndarray, name: str, tol: float = PROB_TOL) -> None:
    if np.any(arr < -tol):
        raise ConfigurationError(f"{name} has negative entries")
    sums = arr.sum(axis=-1)
    if not np.allclose(sums, 1.0, atol=tol, rtol=0.0):
        raise ConfigurationError(f"{name} rows must sum to 1 (max error {np.abs(sums - 1).max():.3g})")


@dataclass(frozen=True)
class TabularMDP:
    P: np.ndarray
    init: np.ndarray
    features: np.ndarray
    theta: np.ndarray
    B: float = np.inf
    R: float = np.inf
    r_max: float = np.inf

    def __post_init__(self) -> None:
        P = np.asarray(self.P, dtype=float)
        init = np.asarray(self.init, dtype=float)
        features = np.asarray(self.features, dtype=float)
        theta = np.asarray(self.theta, dtype=float)
        if P.ndim != 4 or P.shape[1] != P.shape[3]:
            raise ConfigurationError(f"transitions must have shape (H, S, A, S), got {P.shape}")
        H, S, A, _ = P.shape
        if init.shape != (S,):
            raise ConfigurationError(f"initial distribution must have shape ({S},)")
        if features.ndim != 4 or features.shape[:3] != (H, S, A):
            raise ConfigurationError(f"features must have shape ({H}, {S}, {A}, d), got {features.shape}")
        d = features.shape[3]
        theta = theta.reshape(H, d) if theta.size == H * d else theta
        if theta.shape != (H, d):
            raise ConfigurationError(f"theta must have shape ({H}, {d}), got {theta.shape}")
        _check_stochastic(P, "transitions")
        _check_stochastic(init, "initial distribution")
        for name, value in (("P", P), ("init", init), ("features", features), ("theta", theta)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

        feat_norm = np.linalg.norm(features, axis=-1).max()
        theta_norm = np.linalg.norm(theta, axis=-1).max()
        if feat_norm > self.R + 1e-9:
            raise ConfigurationError(f"feature norm {feat_norm:.6g} exceeds R={self.R}")
        if theta_norm > self.B + 1e-9:
            raise ConfigurationError(f"theta block norm {theta_norm:.6g} exceeds B={self.B}")
        if np.isfinite(self.r_max):
            lo, hi = cumulative_reward_range(self, self.reward_table())
            if max(abs(lo), abs(hi)) > self.r_max + 1e-9:
                raise ConfigurationError(
                    f"cumulative reward range [{lo:.6g}, {hi:.6g}] exceeds r_max={self.r_max}"
                )

    @property
    def H(self) -> int:
        return self.P.shape[0]

    @property
    def S(self) -> int:
        return self.P.shape[1]

    @property
    def A(self) -> int:
        return self.P.shape[2]

    @property
    def d(self) -> int:
        return self.features.shape[3]

    def reward_table(self, theta: np.ndarray | None = None) -> np.ndarray:
        """Per-step rewards ``r_h(s, a) = <phi_h(s, a), theta_h>``."""
        theta = self.theta if theta is None else np.asarray(theta, dtype=float).reshape(self.H, self.d)
        return np.einsum("hsad,hd->hsa", self.features, theta)

    def with_theta(self, theta: np.ndarray, **bounds: float) -> "TabularMDP":
        kw = dict(B=self.B, R=self.R, r_max=self.r_max)
        kw.update(bounds)
        return TabularMDP(self.P, self.init, self.features, np.asarray(theta).reshape(self.H, self.d), **kw)

    def with_dynamics(self, P: np.ndarray, init: np.ndarray | None = None) -> "TabularMDP":
        return TabularMDP(P, self.init if init is None else init, self.features, self.theta,
                          B=self.B, R=self.R, r_max=self.r_max)

    # serialization ---------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "horizon": self.H,
            "states": self.S,
            "actions": self.A,
            "dim": self.d,
            "transitions": self.P.ravel().tolist(),
            "initial": self.init.tolist(),
            "features": self.features.ravel().tolist(),
            "theta": self.theta.tolist(),
            "bounds": {"B": _enc(self.B), "R": _enc(self.R), "r_max": _enc(self.r_max)},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TabularMDP":
        H, S, A, d = (int(data[k]) for k in ("horizon", "states", "actions", "dim"))
        bounds = {k: _dec(v) for k, v in data.get("bounds", {}).items()}
        return cls(
            P=np.asarray(data["transitions"], dtype=float).reshape(H, S, A, S),
            init=np.asarray(data["initial"], dtype=float),
            features=np.asarray(data["features"], dtype=float).reshape(H, S, A, d),
            theta=np.asarray(data["theta"], dtype=float).reshape(H, d),
            **bounds,
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> "TabularMDP":
        return cls.from_dict(json.loads(text))


def _enc(x: float) -> float | str:
    return x if np.isfinite(x) else "inf"


def _dec(x: float | str) -> float:
    return float("inf") if x == "inf" else float(x)


@dataclass(frozen=True)
class MarkovPolicy:
    """Per-step conditional action distributions ``probs[h, s, a]``.

    ``zeta`` is set when the policy came from the log-linear family
    ``pi_h(a|s) ∝ exp(<zeta_h, phi_h(s, a)>)``.
    """

    probs: np.ndarray
    zeta: np.ndarray | None = None

    def __post_init__(self) -> None:
        probs = np.asarray(self.probs, dtype=float)
        if probs.ndim != 3:
            raise ConfigurationError(f"policy must have shape (H, S, A), got {probs.shape}")
        _check_stochastic(probs, "policy")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.probs.shape

    @property
    def is_deterministic(self) -> bool:
        return bool(np.all((self.probs == 0.0) | (self.probs == 1.0)))

    def actions(self) -> np.ndarray:
        """Greedy action table ``(H, S)``; exact for deterministic policies."""
        return self.probs.argmax(axis=-1)

    @classmethod
    def deterministic(cls, actions: np.ndarray, n_actions: int) -> "MarkovPolicy":
        actions = np.asarray(actions, dtype=int)
        return cls(np.eye(n_actions)[actions])

    @classmethod
    def uniform(cls, H: int, S: int, A: int) -> "MarkovPolicy":
        return cls(np.full((H, S, A), 1.0 / A))

    @classmethod
    def log_linear(cls, features: np.ndarray, zeta: np.ndarray) -> "MarkovPolicy":
        features = np.asarray(features, dtype=float)
        zeta = np.asarray(zeta, dtype=float).reshape(features.shape[0], features.shape[3])
        logits = np.einsum("hsad,hd->hsa", features, zeta)
        logits -= logits.max(axis=-1, keepdims=True)
        w = np.exp(logits)
        return cls(w / w.sum(axis=-1, keepdims=True), zeta=zeta)

    @classmethod
    def random(cls, H: int, S: int, A: int, rng: np.random.Generator) -> "MarkovPolicy":
        return cls(rng.dirichlet(np.ones(A), size=(H, S)))

    @classmethod
    def random_deterministic(cls, H: int, S: int, A: int, rng: np.random.Generator) -> "MarkovPolicy":
        return cls.deterministic(rng.integers(A, size=(H, S)), A)


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray
    actions: np.ndarray
    next_states: np.ndarray
    phi: np.ndarray = field(repr=False)

    @property
    def H(self) -> int:
        return len(self.states)


def _dynamics(mdp: TabularMDP, model) -> tuple[np.ndarray, np.ndarray]:
    if model is None:
        return mdp.P, mdp.init
    if isinstance(model, tuple):
        return model
    return model.P, model.init


def _check_policy(mdp: TabularMDP, policy: MarkovPolicy) -> np.ndarray:
    if policy.shape != (mdp.H, mdp.S, mdp.A):
        raise ConfigurationError(f"policy shape {policy.shape} does not match MDP {(mdp.H, mdp.S, mdp.A)}")
    return policy.probs


def _reward(mdp: TabularMDP, reward) -> np.ndarray:
    """Accept a per-step reward table ``(H, S, A)`` or linear parameters."""
    if reward is None:
        return mdp.reward_table()
    reward = np.asarray(reward, dtype=float)
    if reward.shape == (mdp.H, mdp.S, mdp.A):
        return reward
    if reward.size == mdp.H * mdp.d:
        return mdp.reward_table(reward)
    raise ConfigurationError(f"cannot interpret reward of shape {reward.shape}")


def occupancy(mdp: TabularMDP, policy: MarkovPolicy, model=None) -> np.ndarray:
    """State-action visitation ``d_h(s, a)`` by forward recursion, shape ``(H, S, A)``."""
    P, init = _dynamics(mdp, model)
    pi = _check_policy(mdp, policy)
    d = np.empty_like(pi)
    state = init
    for h in range(mdp.H):
        d[h] = state[:, None] * pi[h]
        if h + 1 < mdp.H:
            state = np.einsum("sa,sat->t", d[h], P[h])
    return d


def state_occupancy(mdp: TabularMDP, policy: MarkovPolicy, model=None) -> np.ndarray:
    return occupancy(mdp, policy, model).sum(axis=-1)


def feature_expectation(mdp: TabularMDP, policy: MarkovPolicy, model=None) -> np.ndarray:
    """Stacked expected features ``phi(pi)`` in ``R^{H d}``."""
    d = occupancy(mdp, policy, model)
    return np.einsum("hsa,hsad->hd", d, mdp.features).ravel()


def evaluate(mdp: TabularMDP, policy: MarkovPolicy, reward=None, model=None) -> tuple[np.ndarray, np.ndarray]:
    """Backward policy evaluation; returns ``Q (H, S, A)`` and ``V (H+1, S)``."""
    P, _ = _dynamics(mdp, model)
    pi = _check_policy(mdp, policy)
    r = _reward(mdp, reward)
    Q = np.empty_like(r)
    V = np.zeros((mdp.H + 1, mdp.S))
    for h in range(mdp.H - 1, -1, -1):
        Q[h] = r[h] + P[h] @ V[h + 1]
        V[h] = (pi[h] * Q[h]).sum(axis=-1)
    return Q, V


def policy_value(mdp: TabularMDP, policy: MarkovPolicy, reward=None, model=None) -> float:
    _, init = _dynamics(mdp, model)
    _, V = evaluate(mdp, policy, reward, model)
    return float(init @ V[0])


def optimal_q(mdp: TabularMDP, reward=None, model=None) -> tuple[np.ndarray, np.ndarray]:
    """Optimal ``Q* (H, S, A)`` and ``V* (H+1, S)`` by greedy backward DP."""
    P, _ = _dynamics(mdp, model)
    r = _reward(mdp, reward)
    Q = np.empty_like(r)
    V = np.zeros((mdp.H + 1, mdp.S))
    for h in range(mdp.H - 1, -1, -1):
        Q[h] = r[h] + P[h] @ V[h + 1]
        V[h] = Q[h].max(axis=-1)
    return Q, V


def optimal_policy(mdp: TabularMDP, reward=None, model=None) -> tuple[MarkovPolicy, float]:
    """Deterministic greedy policy and its value; ties go to the lowest action index."""
    _, init = _dynamics(mdp, model)
    Q, V = optimal_q(mdp, reward, model)
    return MarkovPolicy.deterministic(Q.argmax(axis=-1), mdp.A), float(init @ V[0])


def advantage(mdp: TabularMDP, reward=None, model=None) -> np.ndarray:
    """Optimal advantage ``A*_h(s, a) = Q*_h(s, a) - V*_h(s)``."""
    Q, V = optimal_q(mdp, reward, model)
    return Q - V[:-1, :, None]


def performance_difference_audit(
    mdp: TabularMDP, reward, policy: MarkovPolicy, other: MarkovPolicy, model=None
) -> float:
    """Residual of ``V^{pi'} - V^{pi} = sum_h E_{pi'}[<Q^pi_h(s, .), pi'_h - pi_h>]``."""
    _, init = _dynamics(mdp, model)
    Q, V = evaluate(mdp, policy, reward, model)
    lhs = policy_value(mdp, other, reward, model) - float(init @ V[0])
    ds = state_occupancy(mdp, other, model)
    rhs = float(np.einsum("hs,hsa,hsa->", ds, Q, other.probs - policy.probs))
    return abs(lhs - rhs)


def cumulative_reward_range(mdp: TabularMDP, reward=None, model=None) -> tuple[float, float]:
    """Exact min/max cumulative reward over all trajectories with positive probability.

    Runs a backward max/min DP restricted to the transition support, which equals
    enumerating every deterministic-policy trajectory support.
    """
    P, init = _dynamics(mdp, model)
    r = _reward(mdp, reward)
    support = P > 0.0
    hi = np.zeros(mdp.S)
    lo = np.zeros(mdp.S)
    for h in range(mdp.H - 1, -1, -1):
        nxt_hi = np.where(support[h], hi[None, None, :], -np.inf).max(axis=-1)
        nxt_lo = np.where(support[h], lo[None, None, :], np.inf).min(axis=-1)
        hi = (r[h] + nxt_hi).max(axis=-1)
        lo = (r[h] + nxt_lo).min(axis=-1)
    start = init > 0.0
    return float(lo[start].min()), float(hi[start].max())


def sample_trajectory(
    mdp: TabularMDP, policy: MarkovPolicy, rng: np.random.Generator, model=None
) -> Trajectory:
    P, init = _dynamics(mdp, model)
    pi = _check_policy(mdp, policy)
    H = mdp.H
    states = np.empty(H, dtype=int)
    actions = np.empty(H, dtype=int)
    nexts = np.empty(H, dtype=int)
    u = rng.random(2 * H + 1)
    s = _draw(init, u[0])
    for h in range(H):
        a = _draw(pi[h, s], u[2 * h + 1])
        s_next = _draw(P[h, s, a], u[2 * h + 2])
        states[h], actions[h], nexts[h] = s, a, s_next
        s = s_next
    phi = mdp.features[np.arange(H), states, actions].ravel()
    return Trajectory(states, actions, nexts, phi)


def _draw(p: np.ndarray, u: float) -> int:
    idx = int(np.searchsorted(np.cumsum(p), u, side="right"))
    return min(idx, len(p) - 1)


def sample_state(mdp: TabularMDP, policy: MarkovPolicy, h: int, rng: np.random.Generator) -> int:
    """State at step ``h`` (0-indexed) when rolling ``policy`` from the start."""
    pi = _check_policy(mdp, policy)
    s = _draw(mdp.init, rng.random())
    for k in range(h):
        a = _draw(pi[k, s], rng.random())
        s = _draw(mdp.P[k, s, a], rng.random())
    return s


def deterministic_policies(H: int, S: int, A: int) -> Iterator[MarkovPolicy]:
    """Every deterministic Markov policy; ``A**(H*S)`` of them."""
    eye = np.eye(A)
    for combo in itertools.product(range(A), repeat=H * S):
        yield MarkovPolicy(eye[np.asarray(combo).reshape(H, S)])


def one_hot_features(H: int, S: int, A: int) -> np.ndarray:
    """``phi_h(s, a) = e_{s*A + a}`` with ``d = S*A``."""
    eye = np.eye(S * A).reshape(S, A, S * A)
    return np.broadcast_to(eye, (H, S, A, S * A)).copy()
