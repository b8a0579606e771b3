"""Reward-agnostic experimental design over feature-expectation differences.

The loop keeps ``Sigma = lambda I + sum_n x_n x_n^T`` and its inverse, and each
round picks the policy pair whose feature-expectation difference has the
largest ``||.||_{Sigma^{-1}}`` norm.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .mdp import ConfigurationError

REINVERT_EVERY = 256


@dataclass
class PairRecord:
    round: int
    pair: tuple
    objective: float
    diff: np.ndarray
    logdet: float


class DesignState:
    """Regularised cumulative covariance with an incrementally maintained inverse."""

    def __init__(self, dim: int, lam: float):
        if lam <= 0:
            raise ConfigurationError("regulariser must be positive")
        self.dim = dim
        self.lam = float(lam)
        self.sigma = lam * np.eye(dim)
        self.sigma_inv = np.eye(dim) / lam
        self.logdet = dim * np.log(lam)
        self.history: list[PairRecord] = []
        self._updates = 0

    def mahalanobis(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ConfigurationError(f"expected a vector of length {self.dim}")
        return float(np.sqrt(max(x @ self.sigma_inv @ x, 0.0)))

    def add(self, x: np.ndarray, pair: tuple = (), objective: float | None = None) -> "DesignState":
        """Rank-one update ``Sigma += x x^T`` (Sherman-Morrison on the inverse)."""
        x = np.asarray(x, dtype=float).copy()
        if x.shape != (self.dim,):
            raise ConfigurationError(f"expected a vector of length {self.dim}")
        sx = self.sigma_inv @ x
        q = float(x @ sx)
        self.sigma += np.outer(x, x)
        self.sigma_inv -= np.outer(sx, sx) / (1.0 + q)
        self.logdet += np.log1p(q)
        self._updates += 1
        if self._updates % REINVERT_EVERY == 0:
            self.sigma_inv = np.linalg.inv(self.sigma)
            self.sigma_inv = 0.5 * (self.sigma_inv + self.sigma_inv.T)
        obj = np.sqrt(q) if objective is None else objective
        self.history.append(PairRecord(len(self.history), tuple(pair), float(obj), x, float(self.logdet)))
        return self

    def copy(self) -> "DesignState":
        other = DesignState.__new__(DesignState)
        other.dim, other.lam = self.dim, self.lam
        other.sigma, other.sigma_inv = self.sigma.copy(), self.sigma_inv.copy()
        other.logdet, other._updates = self.logdet, self._updates
        other.history = list(self.history)
        return other

    def history_records(self) -> list[dict]:
        """Pair history as plain records (difference vector, objective, log det)."""
        return [
            {"round": r.round, "pair": list(r.pair), "objective": r.objective,
             "diff": r.diff.tolist(), "logdet": r.logdet}
            for r in self.history
        ]


def mahalanobis(state: DesignState, x: np.ndarray) -> float:
    return state.mahalanobis(x)


def add_pair(state: DesignState, diff: np.ndarray, pair: tuple = ()) -> DesignState:
    return state.add(diff, pair)


def select_pair_exhaustive(state: DesignState, candidates: np.ndarray) -> tuple[tuple[int, int], float]:
    """Exact argmax over unordered candidate pairs; ties go to the lexicographically smallest pair."""
    C = np.asarray(candidates, dtype=float)
    if C.ndim != 2 or len(C) < 2:
        raise ConfigurationError("need at least two candidates")
    G = C @ state.sigma_inv @ C.T
    g = np.diag(G)
    sq = g[:, None] + g[None, :] - 2.0 * G
    iu = np.triu_indices(len(C), k=1)
    vals = np.maximum(sq[iu], 0.0)
    k = int(np.argmax(vals))
    return (int(iu[0][k]), int(iu[1][k])), float(np.sqrt(vals[k]))


@dataclass
class MarkovPairResult:
    first: object
    second: object
    diff: np.ndarray
    objective: float
    traces: list[list[float]] = field(default_factory=list)


Planner = Callable[[np.ndarray], tuple[object, np.ndarray]]
PairPlanner = Callable[[np.ndarray], tuple[object, object, np.ndarray]]


def select_pair_markov(
    state: DesignState,
    planner: Planner | None,
    rng: np.random.Generator,
    restarts: int = 4,
    tol: float = 1e-10,
    max_iter: int = 50,
    warm_starts: Sequence[np.ndarray] = (),
    pair_planner: PairPlanner | None = None,
) -> MarkovPairResult:
    """Alternating linearisation for ``max ||phi(pi0) - phi(pi1)||_{Sigma^-1}``.

    ``planner(u)`` must return ``(policy, phi(policy))`` maximising ``<phi(pi), u>``.
    From a direction ``u`` the pair is re-planned against ``±Sigma^{-1} u`` and
    ``u`` becomes the new difference; the objective never decreases within a
    start because each step maximises a supporting linearisation of a convex
    function.  ``pair_planner(g)`` may instead return ``(pi0, pi1, x)`` with
    ``x`` maximising ``<x, g>`` jointly over pairs.
    """
    if pair_planner is None:
        if planner is None:
            raise ConfigurationError("need a planner")

        def pair_planner(g):
            p0, f0 = planner(g)
            p1, f1 = planner(-g)
            return p0, p1, f0 - f1

    starts = [np.asarray(w, dtype=float) for w in warm_starts if np.any(w)]
    for _ in range(restarts):
        u = rng.standard_normal(state.dim)
        starts.append(u / np.linalg.norm(u))
    if not starts:
        raise ConfigurationError("need at least one start")
    best: MarkovPairResult | None = None
    traces = []
    for u in starts:
        trace: list[float] = []
        pair = None
        for _ in range(max_iter):
            p0, p1, diff = pair_planner(state.sigma_inv @ u)
            obj = state.mahalanobis(diff)
            if trace:
                assert obj >= trace[-1] - 1e-9 * max(1.0, trace[-1]), "alternating objective decreased"
            improved = not trace or obj > trace[-1] + tol
            trace.append(obj)
            if pair is None or obj > pair[3]:
                pair = (p0, p1, diff, obj)
            if not improved or obj == 0.0:
                break
            u = diff
        traces.append(trace)
        if best is None or pair[3] > best.objective + 1e-12:
            best = MarkovPairResult(pair[0], pair[1], pair[2], pair[3])
    best.traces = traces
    return best


def elliptical_potential_audit(
    lam: float, xs: np.ndarray, R_x: float | None = None, sabotage: bool = False
) -> tuple[float, float, bool]:
    """``sum_n ||x_n||^2_{Sigma_n^{-1}}`` against ``2 d log(1 + N/d)``.

    ``sabotage`` freezes the covariance (negative control for the audit harness).
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    N, d = xs.shape
    norm_max = float(np.linalg.norm(xs, axis=1).max()) if N else 0.0
    R_x = norm_max if R_x is None else R_x
    if norm_max > R_x + 1e-12:
        raise ConfigurationError("vectors exceed the declared norm bound")
    if lam < R_x**2 - 1e-12:
        raise ConfigurationError(f"lambda={lam} must be at least R_x^2={R_x**2}")
    inv = np.eye(d) / lam
    lhs = 0.0
    for x in xs:
        sx = inv @ x
        q = float(x @ sx)
        lhs += q
        if not sabotage:
            inv -= np.outer(sx, sx) / (1.0 + q)
    rhs = 2.0 * d * np.log1p(N / d)
    return lhs, rhs, lhs <= rhs


def leverage_sum(lam: float, phis: np.ndarray) -> float:
    """``sum_i phi_i^T Lambda^{-1} phi_i`` with ``Lambda = lam I + sum_i phi_i phi_i^T``."""
    phis = np.atleast_2d(np.asarray(phis, dtype=float))
    Lam = lam * np.eye(phis.shape[1]) + phis.T @ phis
    return float(np.einsum("ij,ij->", phis, np.linalg.solve(Lam, phis.T).T))
