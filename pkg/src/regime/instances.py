"""Random instance generators with recorded bounds."""
from __future__ import annotations

import numpy as np

from .linear import LinearMDPFactorization, generate_linear_mdp, tabular_as_linear
from .mdp import ConfigurationError, TabularMDP, cumulative_reward_range, one_hot_features


def _bounded(P, init, features, theta, r_max: float | None) -> TabularMDP:
    """Attach ``B``, ``R``, ``r_max``; rescale ``theta`` when a target ``r_max`` is requested."""
    raw = TabularMDP(P, init, features, theta)
    lo, hi = cumulative_reward_range(raw)
    span = max(abs(lo), abs(hi))
    if r_max is not None:
        if span <= 0:
            raise ConfigurationError("cannot rescale an all-zero reward to a positive r_max")
        theta = raw.theta * (r_max / span)
        span = r_max
    theta = np.asarray(theta, dtype=float).reshape(raw.H, raw.d)
    return TabularMDP(P, init, features, theta,
                      B=float(np.linalg.norm(theta, axis=-1).max()),
                      R=float(np.linalg.norm(features, axis=-1).max()),
                      r_max=float(span))


def random_tabular_mdp(
    S: int,
    A: int,
    H: int,
    rng: np.random.Generator,
    features: str = "one_hot",
    d: int | None = None,
    r_max: float | None = None,
    concentration: float = 1.0,
) -> TabularMDP:
    """Dirichlet transitions, Gaussian reward parameters.

    ``features`` is ``"one_hot"`` (``d = S A``) or ``"gaussian"`` (unit-norm
    random vectors of dimension ``d``).
    """
    if min(S, A, H) < 1:
        raise ConfigurationError("S, A and H must be positive")
    P = rng.dirichlet(np.full(S, concentration), size=(H, S, A))
    init = rng.dirichlet(np.ones(S))
    if features == "one_hot":
        phi = one_hot_features(H, S, A)
    elif features == "gaussian":
        if not d:
            raise ConfigurationError("gaussian features need a dimension d")
        phi = rng.standard_normal((H, S, A, d))
        phi /= np.linalg.norm(phi, axis=-1, keepdims=True)
    else:
        raise ConfigurationError(f"unknown feature kind {features!r}")
    theta = rng.standard_normal((H, phi.shape[-1]))
    return _bounded(P, init, phi, theta, r_max)


def anisotropic_mdp(
    S: int, A: int, H: int, rng: np.random.Generator, r_max: float | None = 2.0, noise: float = 0.2
) -> TabularMDP:
    """One-hot combination lock: reachable features are strongly anisotropic.

    States ``0..H-1`` form a lock entered at step 0; at lock state ``h`` only a
    hidden key action advances to lock state ``h+1``, every other action drops
    into the pool of remaining states, which mixes randomly.  A uniformly drawn
    deterministic policy reaches the end of the lock with probability
    ``A^{-(H-1)}``, so random pairs rarely compare behaviour there, while the
    largest rewards sit at the end of the lock.
    """
    if S < H + 1 or A < 2:
        raise ConfigurationError("need S >= H + 1 and A >= 2")
    pool = np.arange(H, S)
    key = rng.integers(0, A, size=H)
    P = np.zeros((H, S, A, S))
    for h in range(H):
        for s in range(S):
            for a in range(A):
                if s == h and a == key[h] and h + 1 < H:
                    P[h, s, a, h + 1] = 1.0
                else:
                    P[h, s, a, pool] = rng.dirichlet(np.ones(len(pool)))
    init = np.zeros(S)
    init[0] = 1.0
    theta = noise * rng.standard_normal((H, S, A))
    theta[H - 1, H - 1, key[H - 1]] = 1.0
    return _bounded(P, init, one_hot_features(H, S, A), theta.reshape(H, S * A), r_max)


def gap_separated_mdp(
    S: int,
    A: int,
    H: int,
    rng: np.random.Generator,
    gap_range: tuple[float, float] = (0.3, 0.5),
    value_range: tuple[float, float] = (0.0, 0.5),
    r_max: float = 4.0,
) -> TabularMDP:
    """One-hot instance with a unique optimal action and every other advantage in ``-gap_range``.

    Built backwards: pick ``V*_h``, an optimal action and per-action gaps, then
    set ``r_h = Q*_h - P_h V*_{h+1}``.
    """
    lo_gap, hi_gap = gap_range
    if not 0 < lo_gap <= hi_gap:
        raise ConfigurationError("need 0 < min gap <= max gap")
    P = rng.dirichlet(np.ones(S), size=(H, S, A))
    init = rng.dirichlet(np.ones(S))
    r = np.empty((H, S, A))
    V_next = np.zeros(S)
    for h in range(H - 1, -1, -1):
        V = rng.uniform(*value_range, size=S)
        Q = V[:, None] - rng.uniform(lo_gap, hi_gap, size=(S, A))
        best = rng.integers(0, A, size=S)
        Q[np.arange(S), best] = V
        r[h] = Q - P[h] @ V_next
        V_next = V
    phi = one_hot_features(H, S, A)
    theta = r.reshape(H, S * A)
    mdp = TabularMDP(P, init, phi, theta)
    lo, hi = cumulative_reward_range(mdp)
    if max(abs(lo), abs(hi)) > r_max:
        raise ConfigurationError(f"cumulative reward range [{lo:.3g}, {hi:.3g}] exceeds r_max={r_max}")
    return TabularMDP(P, init, phi, theta, B=float(np.linalg.norm(theta, axis=-1).max()), R=1.0, r_max=r_max)


def linear_instance(d: int, S: int, A: int, H: int, rng: np.random.Generator) -> LinearMDPFactorization:
    return generate_linear_mdp(d, S, A, H, rng)


def tabular_linear_instance(S: int, A: int, H: int, rng: np.random.Generator,
                            r_max: float | None = None) -> LinearMDPFactorization:
    """Random tabular MDP in one-hot linear form with per-step rewards in [-1, 1]."""
    base = random_tabular_mdp(S, A, H, rng, r_max=r_max)
    r = base.reward_table()
    r = r / max(1.0, float(np.abs(r).max()))
    return tabular_as_linear(base.with_theta(r.reshape(H, -1), B=np.inf, r_max=np.inf))
