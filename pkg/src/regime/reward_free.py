"""Tabular reward-free model estimation and the error-propagation audits."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from .mdp import (
    MarkovPolicy,
    TabularMDP,
    feature_expectation,
    occupancy,
    optimal_policy,
    sample_trajectory,
)

log = logging.getLogger(__name__)


@dataclass
class EstimatedModel:
    P: np.ndarray  # (H, S, A, S)
    init: np.ndarray  # (S,)
    counts: np.ndarray  # (H, S, A)
    init_counts: np.ndarray  # (S,)
    eps: float = np.nan
    delta: float = np.nan
    status: str = "ok"
    episodes: int = 0

    @classmethod
    def from_counts(cls, transition_counts: np.ndarray, init_counts: np.ndarray, **kw) -> "EstimatedModel":
        """Empirical model; unvisited rows (and an empty initial count) default to uniform."""
        S = transition_counts.shape[-1]
        n = transition_counts.sum(axis=-1)
        P = np.where(n[..., None] > 0, transition_counts / np.maximum(n, 1)[..., None], 1.0 / S)
        n0 = init_counts.sum()
        init = init_counts / n0 if n0 > 0 else np.full(S, 1.0 / S)
        return cls(P, init, n, init_counts.astype(float), **kw)

    @classmethod
    def exact(cls, mdp: TabularMDP) -> "EstimatedModel":
        """Known-transition mode: the model is the true dynamics."""
        return cls(mdp.P.copy(), mdp.init.copy(), np.full((mdp.H, mdp.S, mdp.A), np.inf),
                   np.full(mdp.S, np.inf), eps=0.0, delta=0.0, status="exact")

    def to_dict(self) -> dict:
        H, S, A, _ = self.P.shape
        return {
            "horizon": H, "states": S, "actions": A,
            "transitions": self.P.ravel().tolist(), "initial": self.init.tolist(),
            "counts": np.nan_to_num(self.counts, posinf=-1).ravel().tolist(),
            "init_counts": np.nan_to_num(self.init_counts, posinf=-1).tolist(),
            "eps": None if np.isnan(self.eps) else self.eps,
            "delta": None if np.isnan(self.delta) else self.delta,
            "status": self.status, "episodes": self.episodes,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EstimatedModel":
        H, S, A = data["horizon"], data["states"], data["actions"]
        counts = np.asarray(data["counts"], dtype=float).reshape(H, S, A)
        init_counts = np.asarray(data["init_counts"], dtype=float)
        return cls(
            np.asarray(data["transitions"], dtype=float).reshape(H, S, A, S),
            np.asarray(data["initial"], dtype=float),
            np.where(counts < 0, np.inf, counts), np.where(init_counts < 0, np.inf, init_counts),
            eps=np.nan if data["eps"] is None else data["eps"],
            delta=np.nan if data["delta"] is None else data["delta"],
            status=data["status"], episodes=data["episodes"],
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def explore_and_estimate(
    mdp: TabularMDP,
    eps: float,
    delta: float,
    budget: int,
    rng: np.random.Generator,
    c: float = 2.0,
) -> EstimatedModel:
    """Count-bonus exploration followed by the empirical transition model.

    Each episode plans greedily under the reward ``b / H`` with
    ``b_h(s, a) = min(c sqrt(log(2 S A H budget / delta) / max(1, n_h(s, a))), H)``
    on the current empirical model, then rolls out once in ``mdp``.
    ``eps`` is carried as metadata; the realised accuracy comes from the audits.
    """
    H, S, A = mdp.H, mdp.S, mdp.A
    tcounts = np.zeros((H, S, A, S))
    icounts = np.zeros(S)
    if budget <= 0:
        log.warning("reward-free budget is 0; returning the uniform model")
        model = EstimatedModel.from_counts(tcounts, icounts, eps=eps, delta=delta, status="empty")
        return model
    log_term = np.log(2.0 * S * A * H * budget / delta)
    for _ in range(budget):
        model = EstimatedModel.from_counts(tcounts, icounts)
        n = model.counts
        bonus = np.minimum(c * np.sqrt(log_term / np.maximum(1.0, n)), H)
        policy, _ = optimal_policy(mdp, bonus / H, model)
        tau = sample_trajectory(mdp, policy, rng)
        icounts[tau.states[0]] += 1
        np.add.at(tcounts, (np.arange(H), tau.states, tau.actions, tau.next_states), 1)
    return EstimatedModel.from_counts(tcounts, icounts, eps=eps, delta=delta, status="ok", episodes=budget)


def estimate_with_generative_model(mdp: TabularMDP, n: int, rng: np.random.Generator) -> EstimatedModel:
    """Forced-visitation mode: ``n`` next-state draws for every ``(h, s, a)`` and the initial state."""
    H, S, A = mdp.H, mdp.S, mdp.A
    tcounts = np.empty((H, S, A, S))
    for h in range(H):
        for s in range(S):
            for a in range(A):
                tcounts[h, s, a] = rng.multinomial(n, mdp.P[h, s, a])
    icounts = rng.multinomial(n, mdp.init).astype(float)
    return EstimatedModel.from_counts(tcounts, icounts, status="generative", episodes=n)


def model_error_audit(mdp: TabularMDP, model, policy: MarkovPolicy) -> tuple[float, np.ndarray]:
    """Initial-distribution L1 error and ``E_{pi, P*} ||P_hat_h(.|s,a) - P*_h(.|s,a)||_1`` per step."""
    d = occupancy(mdp, policy)
    row_err = np.abs(model.P - mdp.P).sum(axis=-1)
    init_err = float(np.abs(model.init - mdp.init).sum())
    return init_err, np.einsum("hsa,hsa->h", d, row_err)


def audited_epsilon(mdp: TabularMDP, model, policies) -> float:
    """Worst audited error over a policy panel."""
    worst = 0.0
    for pi in policies:
        init_err, steps = model_error_audit(mdp, model, pi)
        worst = max(worst, init_err, float(steps.max()))
    return worst


def policy_panel(mdp: TabularMDP, rng: np.random.Generator, n_random: int = 20) -> list[MarkovPolicy]:
    """Random stochastic and deterministic policies plus the uniform policy."""
    panel = [MarkovPolicy.uniform(mdp.H, mdp.S, mdp.A)]
    for i in range(n_random):
        make = MarkovPolicy.random if i % 2 else MarkovPolicy.random_deterministic
        panel.append(make(mdp.H, mdp.S, mdp.A, rng))
    return panel


def visitation_error_audit(mdp: TabularMDP, model, policy: MarkovPolicy, eps: float) -> tuple[np.ndarray, bool]:
    """``||d_h - d_hat_h||_1`` per step and whether every step is within ``h * eps`` (1-indexed h)."""
    tv = np.abs(occupancy(mdp, policy) - occupancy(mdp, policy, model)).sum(axis=(1, 2))
    bound = eps * np.arange(1, mdp.H + 1)
    return tv, bool(np.all(tv <= bound + 1e-12))


def feature_gap_audit(
    mdp: TabularMDP, model, policy: MarkovPolicy, v: np.ndarray, eps: float
) -> tuple[float, float, bool]:
    """``|<phi(pi) - phi_hat(pi), v>|`` against ``B R H^2 eps``."""
    gap = abs(float((feature_expectation(mdp, policy) - feature_expectation(mdp, policy, model)) @ np.ravel(v)))
    bound = mdp.B * mdp.R * mdp.H**2 * eps
    return gap, bound, gap <= bound + 1e-12


def perturb_model(mdp: TabularMDP, eps: float, rng: np.random.Generator) -> EstimatedModel:
    """A model whose every row (and initial distribution) is exactly ``eps`` away in L1.

    Moves ``eps / 2`` of mass from a random state holding at least that much to
    a different random state.
    """
    def shift(p: np.ndarray) -> np.ndarray:
        q = p.copy()
        half = eps / 2.0
        donors = np.flatnonzero(p >= half)
        i = rng.choice(donors)
        j = rng.choice(np.delete(np.arange(len(p)), i))
        q[i] -= half
        q[j] += half
        return q

    P = np.empty_like(mdp.P)
    for idx in np.ndindex(mdp.P.shape[:3]):
        P[idx] = shift(mdp.P[idx])
    return EstimatedModel(P, shift(mdp.init), np.zeros((mdp.H, mdp.S, mdp.A)), np.zeros(mdp.S),
                          eps=eps, status="perturbed")
