"""End-to-end pipelines.

* ``run_regime_tabular``: trajectory-pair design over (estimated) feature
  expectations, preference labels, constrained MLE and planning.
* ``run_regime_lin``: the same loop on a linear MDP, with exploration data and
  least-squares planning replacing the model.
* ``run_regime_action``: per-step design over action pairs with advantage feedback.
* ``run_uniform_baseline``: the tabular pipeline with uniformly drawn pairs.

Every pipeline splits its generator into independent streams (model, design,
rollouts, labels), so a run with ``N`` rounds reproduces the first ``N``
rounds of any longer run under the same seed.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .design import DesignState, select_pair_exhaustive, select_pair_markov
from .linear import (
    LinearMDPFactorization,
    LSVIState,
    estimate_feature_expectations,
    lsvi_control,
    regime_exploration,
    regime_planning,
    theorem_beta,
)
from .mdp import (
    ConfigurationError,
    MarkovPolicy,
    TabularMDP,
    advantage,
    deterministic_policies,
    feature_expectation,
    optimal_policy,
    policy_value,
    sample_state,
    sample_trajectory,
    state_occupancy,
)
from .mle import SolverConfig, ThetaEstimate, XiEstimate, fit_theta, fit_xi
from .preference import kappa, label_differences
from .reward_free import EstimatedModel, audited_epsilon, explore_and_estimate, policy_panel

log = logging.getLogger(__name__)

ENUMERATION_LIMIT = 4096
STREAMS = ("model", "design", "rollout", "label")


class EventLog:
    """Ordered record of rollout and label events, used to check phase separation."""

    def __init__(self) -> None:
        self.events: list[tuple[str, int]] = []

    def mark(self, kind: str, count: int = 1) -> None:
        if count:
            self.events.append((kind, count))

    def count(self, kind: str) -> int:
        return sum(c for k, c in self.events if k == kind)

    def phase_separated(self) -> bool:
        seen_label = False
        for kind, _ in self.events:
            if kind == "label":
                seen_label = True
            elif kind == "rollout" and seen_label:
                return False
        return True


@dataclass
class RegimeReport:
    mode: str
    policy: MarkovPolicy
    params: np.ndarray  # theta_hat or xi_hat, shape (H, d)
    gap: float
    optimal_value: float
    value: float
    n_tra: int
    n_hum: int
    objectives: list[float] = field(default_factory=list)
    logdets: list[float] = field(default_factory=list)
    eps_audited: float = math.nan
    theta_error: float = math.nan
    sigma_error: float = math.nan
    kappa: float = math.nan
    kappa_adv: float = math.nan
    status: str = "ok"
    seed: int | None = None
    config: dict = field(default_factory=dict)
    events: EventLog = field(default_factory=EventLog)
    extras: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.gap < -1e-9:
            raise AssertionError(f"negative suboptimality gap {self.gap}")

    def summary(self) -> dict:
        out = {
            "mode": self.mode, "gap": self.gap, "optimal_value": self.optimal_value, "value": self.value,
            "n_tra": self.n_tra, "n_hum": self.n_hum, "eps_audited": self.eps_audited,
            "theta_error": self.theta_error, "sigma_error": self.sigma_error,
            "kappa": self.kappa, "kappa_adv": self.kappa_adv, "status": self.status, "seed": self.seed,
            "final_objective": self.objectives[-1] if self.objectives else math.nan,
            "final_logdet": self.logdets[-1] if self.logdets else math.nan,
        }
        out.update({k: v for k, v in self.extras.items() if np.isscalar(v)})
        return out


def split_streams(rng: np.random.Generator, names=STREAMS) -> dict[str, np.random.Generator]:
    seeds = rng.integers(0, 2**63 - 1, size=len(names))
    return {name: np.random.default_rng(int(s)) for name, s in zip(names, seeds)}


def _require_bounds(mdp: TabularMDP) -> None:
    if not (np.isfinite(mdp.B) and np.isfinite(mdp.R) and np.isfinite(mdp.r_max)):
        raise ConfigurationError("instance must declare finite B, R and r_max")


def _check_lambda(lam: float, H: int, R: float) -> None:
    if lam < 4 * H * R**2:
        log.warning("lambda=%g is below 4 H R^2 = %g", lam, 4 * H * R**2)


# -- tabular trajectory design --------------------------------------------------------

def tabular_planner(mdp: TabularMDP, model=None):
    """``u -> (argmax_pi <phi_hat(pi), u>, phi_hat(pi))`` by backward DP under ``model``."""
    def plan(u: np.ndarray):
        reward = np.einsum("hsad,hd->hsa", mdp.features, u.reshape(mdp.H, mdp.d))
        pi, _ = optimal_policy(mdp, reward, model)
        return pi, feature_expectation(mdp, pi, model)
    return plan


def enumeration_feasible(mdp: TabularMDP) -> bool:
    return mdp.A ** (mdp.H * mdp.S) <= ENUMERATION_LIMIT


@dataclass
class DesignResult:
    state: DesignState
    pairs: list[tuple[MarkovPolicy, MarkovPolicy]]

    def prefix_state(self, n: int) -> DesignState:
        """Design state after the first ``n`` rounds."""
        state = DesignState(self.state.dim, self.state.lam)
        for rec in self.state.history[:n]:
            state.add(rec.diff, rec.pair, rec.objective)
        return state


def design_tabular(
    mdp: TabularMDP,
    N: int,
    lam: float,
    rng: np.random.Generator,
    model=None,
    candidates: list[MarkovPolicy] | str = "auto",
    uniform: bool = False,
    restarts: int = 4,
) -> DesignResult:
    """``N`` rounds of pair selection over estimated feature expectations.

    ``candidates`` is an explicit finite policy list, ``"enumerate"`` (all
    deterministic policies), ``"markov"`` (alternating linearisation over
    Markov policies) or ``"auto"`` (enumerate when small enough).
    """
    if isinstance(candidates, str):
        if candidates == "auto":
            candidates = "enumerate" if enumeration_feasible(mdp) else "markov"
        if candidates == "enumerate":
            candidates = list(deterministic_policies(mdp.H, mdp.S, mdp.A))
        elif candidates != "markov":
            raise ConfigurationError(f"unknown candidate mode {candidates!r}")
    finite = not isinstance(candidates, str)
    state = DesignState(mdp.H * mdp.d, lam)
    pairs: list[tuple[MarkovPolicy, MarkovPolicy]] = []
    if finite:
        if not candidates:
            raise ConfigurationError("empty candidate set")
        if len(candidates) == 1:  # e.g. a single action: every query compares a policy with itself
            candidates = [candidates[0], candidates[0]]
        feats = np.array([feature_expectation(mdp, p, model) for p in candidates])
    else:
        plan = tabular_planner(mdp, model)
    prev = None
    for _ in range(N):
        if uniform and finite:
            i, j = sorted(int(k) for k in rng.choice(len(candidates), size=2, replace=False))
            p0, p1, diff, pair = candidates[i], candidates[j], feats[i] - feats[j], (i, j)
            obj = state.mahalanobis(diff)
        elif uniform:
            p0 = MarkovPolicy.random_deterministic(mdp.H, mdp.S, mdp.A, rng)
            p1 = MarkovPolicy.random_deterministic(mdp.H, mdp.S, mdp.A, rng)
            diff = feature_expectation(mdp, p0, model) - feature_expectation(mdp, p1, model)
            pair, obj = (), state.mahalanobis(diff)
        elif finite:
            (i, j), obj = select_pair_exhaustive(state, feats)
            p0, p1, diff, pair = candidates[i], candidates[j], feats[i] - feats[j], (i, j)
        else:
            res = select_pair_markov(state, plan, rng, restarts=restarts,
                                     warm_starts=() if prev is None else (prev,))
            p0, p1, diff, obj, pair = res.first, res.second, res.diff, res.objective, ()
            prev = diff
        state.add(diff, pair, obj)
        pairs.append((p0, p1))
    return DesignResult(state, pairs)


def _estimate_model(mdp, transitions, eps, delta, rf_budget, model, rng):
    if model is not None:
        return model
    if transitions == "exact":
        return EstimatedModel.exact(mdp)
    if transitions == "reward-free":
        return explore_and_estimate(mdp, eps, delta, rf_budget, rng)
    raise ConfigurationError(f"unknown transition mode {transitions!r}")


def _collect_and_fit(mdp, pairs, streams, events, solver, B):
    """Roll out every pair under the true dynamics, then label, then fit."""
    H, d = mdp.H, mdp.d
    taus = []
    for p0, p1 in pairs:
        taus.append((sample_trajectory(mdp, p0, streams["rollout"]),
                     sample_trajectory(mdp, p1, streams["rollout"])))
        events.mark("rollout", 2)
    N = len(taus)
    if events.count("label"):
        raise AssertionError("labels requested before rollouts finished")
    dphi = np.array([t1.phi - t0.phi for t0, t1 in taus]).reshape(N, H * d)
    labels = label_differences(dphi @ mdp.theta.ravel(), streams["label"])
    events.mark("label", N)
    if not events.phase_separated():
        raise AssertionError("rollouts interleaved with labelling")
    if N == 0:
        return ThetaEstimate(np.zeros((H, d)), 0, 0.0, 0.0, "no-data", B), dphi, labels
    traj = np.array([t.phi for pair in taus for t in pair])
    est = fit_theta(dphi, labels, B, H, mdp.r_max, solver, trajectory_features=traj)
    return est, dphi, labels


def run_regime_tabular(
    mdp: TabularMDP,
    N: int,
    lam: float,
    rng: np.random.Generator,
    transitions: str = "exact",
    eps: float = 0.1,
    delta: float = 0.1,
    rf_budget: int = 10_000,
    candidates: list[MarkovPolicy] | str = "auto",
    plan_with_true: bool = False,
    uniform: bool = False,
    restarts: int = 4,
    solver: SolverConfig = SolverConfig(),
    model=None,
    design: DesignResult | None = None,
    audit_policies: int = 20,
    seed: int | None = None,
    config: dict | None = None,
) -> RegimeReport:
    """Trajectory-comparison design on a tabular MDP.

    ``design`` may carry a precomputed (longer) design from the same seed; its
    first ``N`` rounds are used, which is what a fresh run would compute.
    """
    _require_bounds(mdp)
    if N < 0:
        raise ConfigurationError("N must be nonnegative")
    _check_lambda(lam, mdp.H, mdp.R)
    streams = split_streams(rng)
    model = _estimate_model(mdp, transitions, eps, delta, rf_budget, model, streams["model"])
    if model.status == "exact":
        eps_audited = 0.0
    else:
        eps_audited = audited_epsilon(mdp, model, policy_panel(mdp, streams["model"], audit_policies))

    if design is None:
        design = design_tabular(mdp, N, lam, streams["design"], model, candidates, uniform, restarts)
    elif len(design.pairs) < N:
        raise ConfigurationError("precomputed design is shorter than N")
    pairs = design.pairs[:N]
    history = design.state.history[:N]

    events = EventLog()
    est, _, _ = _collect_and_fit(mdp, pairs, streams, events, solver, mdp.B)
    pi_hat, _ = optimal_policy(mdp, est.theta, None if plan_with_true else model)
    _, v_star = optimal_policy(mdp)
    value = policy_value(mdp, pi_hat)
    sigma = design.prefix_state(N).sigma if len(design.pairs) > N else design.state.sigma
    err = est.flat - mdp.theta.ravel()
    return RegimeReport(
        mode="uniform" if uniform else "tabular",
        policy=pi_hat, params=est.theta, gap=v_star - value,
        optimal_value=v_star, value=value, n_tra=2 * N, n_hum=events.count("label"),
        objectives=[r.objective for r in history], logdets=[r.logdet for r in history],
        eps_audited=eps_audited, theta_error=float(np.linalg.norm(err)),
        sigma_error=float(np.sqrt(max(err @ sigma @ err, 0.0))),
        kappa=kappa(mdp.r_max), status=est.status, seed=seed, config=dict(config or {}), events=events,
        extras={"mle_iterations": est.iterations, "r_max_violation": est.r_max_violation
                if est.r_max_violation is not None else math.nan,
                "transitions": model.status},
    )


def run_uniform_baseline(mdp: TabularMDP, N: int, rng: np.random.Generator, lam: float | None = None,
                         **kw) -> RegimeReport:
    """The tabular pipeline with pairs drawn uniformly from the candidate generator."""
    lam = 4 * mdp.H * mdp.R**2 if lam is None else lam
    return run_regime_tabular(mdp, N, lam, rng, uniform=True, **kw)


# -- linear MDPs ---------------------------------------------------------------------------

def log_linear_candidates(
    lsvi: LSVIState, R: float, B: float, n: int, alphas, rng: np.random.Generator
) -> list[MarkovPolicy]:
    """Softmax policies of least-squares value iteration for random reward directions.

    Each one is log-linear in the features; the uniform policy is always included.
    """
    H, S, A, d = lsvi.features.shape
    out = [MarkovPolicy.uniform(H, S, A)]
    for i in range(n - 1):
        theta = rng.standard_normal((H, d))
        theta *= B / np.linalg.norm(theta, axis=1, keepdims=True)
        reward = np.einsum("hsad,hd->hsa", lsvi.features, theta)
        out.append(lsvi_control(lsvi, reward, alphas[i % len(alphas)]))
    return out


def run_regime_lin(
    lmdp: LinearMDPFactorization,
    N: int,
    K: int,
    lam: float,
    rng: np.random.Generator,
    beta_ex: float | None = None,
    beta_pl: float | None = None,
    lam_ex: float = 1.0,
    lam_pl: float = 1.0,
    delta: float = 0.1,
    beta_scale: float = 1.0,
    candidates: list[MarkovPolicy] | None = None,
    n_candidates: int = 32,
    alphas=(0.05, 0.2, 1.0),
    uniform: bool = False,
    solver: SolverConfig = SolverConfig(),
    seed: int | None = None,
    config: dict | None = None,
) -> RegimeReport:
    """Exploration, estimated feature expectations, design over a finite candidate set, MLE, planning."""
    mdp = lmdp.mdp
    _require_bounds(mdp)
    if K < 1:
        raise ConfigurationError("K must be at least 1: planning needs exploration data")
    _check_lambda(lam, mdp.H, mdp.R)
    H, d, R = mdp.H, mdp.d, mdp.R
    default_beta = theorem_beta(d, H, R, K, delta, beta_scale)
    beta_ex = default_beta if beta_ex is None else beta_ex
    beta_pl = default_beta if beta_pl is None else beta_pl
    streams = split_streams(rng)

    data = regime_exploration(lmdp, K, beta_ex, lam_ex, streams["model"])
    lsvi = LSVIState(data, mdp.features, lam_pl)
    if candidates is None:
        candidates = log_linear_candidates(lsvi, R, mdp.B, n_candidates, alphas, streams["design"])
    phis = np.array([estimate_feature_expectations(lsvi, mdp.features, p, R, beta_pl, lam_pl) for p in candidates])
    true_phis = np.array([feature_expectation(mdp, p) for p in candidates])

    state = DesignState(H * d, lam)
    pairs = []
    for _ in range(N):
        if uniform:
            i, j = sorted(int(k) for k in streams["design"].choice(len(candidates), size=2, replace=False))
            obj = state.mahalanobis(phis[i] - phis[j])
        else:
            (i, j), obj = select_pair_exhaustive(state, phis)
        state.add(phis[i] - phis[j], (i, j), obj)
        pairs.append((candidates[i], candidates[j]))

    events = EventLog()
    events.mark("explore", K)
    est, _, _ = _collect_and_fit(mdp, pairs, streams, events, solver, mdp.B)

    reward_hat = mdp.reward_table(est.theta)
    scale = max(1.0, float(np.abs(reward_hat).max()))
    final = list(candidates) + [lsvi_control(lsvi, reward_hat, a) for a in alphas] + [lsvi_control(lsvi, reward_hat)]
    values = np.array([regime_planning(lsvi, mdp.features, p, reward_hat / scale, beta_pl, lam_pl).value
                       for p in final])
    pi_hat = final[int(np.argmax(values))]
    _, v_star = optimal_policy(mdp)
    value = policy_value(mdp, pi_hat)
    err = est.flat - mdp.theta.ravel()
    return RegimeReport(
        mode="linear", policy=pi_hat, params=est.theta, gap=v_star - value, optimal_value=v_star, value=value,
        n_tra=2 * N, n_hum=events.count("label"),
        objectives=[r.objective for r in state.history], logdets=[r.logdet for r in state.history],
        theta_error=float(np.linalg.norm(err)), sigma_error=float(np.sqrt(max(err @ state.sigma @ err, 0.0))),
        kappa=kappa(mdp.r_max), status=est.status, seed=seed, config=dict(config or {}), events=events,
        extras={"phi_error": float(np.abs(phis - true_phis).max()), "K": K,
                "beta_ex": beta_ex, "beta_pl": beta_pl, "n_candidates": len(candidates)},
    )


# -- action comparisons --------------------------------------------------------------------

def action_pair_planner(mdp: TabularMDP, h: int):
    """``g -> (pi0, pi1, x)`` maximising ``<x, g>`` for
    ``x = E_{s ~ d^{pi0}_h}[phi_h(s, pi0) - phi_h(s, pi1)]`` exactly.

    At step ``h`` the pair takes the best and worst action along ``g``; before
    ``h``, ``pi0`` steers toward states where that spread is largest.
    """
    H, S, A = mdp.H, mdp.S, mdp.A
    phi = mdp.features[h]
    states = np.arange(S)

    def plan(g: np.ndarray):
        scores = phi @ g
        hi, lo = scores.argmax(axis=-1), scores.argmin(axis=-1)
        value = scores[states, hi] - scores[states, lo]
        acts = np.zeros((H, S), dtype=int)
        for k in range(h - 1, -1, -1):
            q = mdp.P[k] @ value
            acts[k] = q.argmax(axis=-1)
            value = q.max(axis=-1)
        a0, a1 = acts.copy(), acts.copy()
        a0[h], a1[h] = hi, lo
        p0 = MarkovPolicy.deterministic(a0, A)
        p1 = MarkovPolicy.deterministic(a1, A)
        ds = state_occupancy(mdp, p0)[h]
        return p0, p1, ds @ (phi[states, hi] - phi[states, lo])

    return plan


def run_regime_action(
    mdp: TabularMDP,
    N: int,
    lam: float,
    rng: np.random.Generator,
    B_adv: float,
    B: float | None = None,
    restarts: int = 2,
    solver: SolverConfig = SolverConfig(),
    occupancy_floor: float = 0.01,
    seed: int | None = None,
    config: dict | None = None,
) -> RegimeReport:
    """Per-step action-pair design, advantage feedback, constrained MLE per step, greedy policy."""
    _require_bounds(mdp)
    H, S, A, d = mdp.H, mdp.S, mdp.A, mdp.d
    B = mdp.B if B is None else B
    streams = split_streams(rng)
    adv = advantage(mdp)
    if adv.min() < -B_adv - 1e-9:
        log.warning("optimal advantages reach %g, beyond B_adv=%g", adv.min(), B_adv)

    events = EventLog()
    queries = []  # (h, s, a0, a1)
    objectives, logdets = [], []
    for h in range(H):
        state = DesignState(d, lam)
        plan = action_pair_planner(mdp, h)
        for _ in range(N):
            res = select_pair_markov(state, None, streams["design"], restarts=restarts, pair_planner=plan)
            state.add(res.diff, (), res.objective)
            s = sample_state(mdp, res.first, h, streams["rollout"])
            a0 = int(np.searchsorted(np.cumsum(res.first.probs[h, s]), streams["rollout"].random(), side="right"))
            a1 = int(np.searchsorted(np.cumsum(res.second.probs[h, s]), streams["rollout"].random(), side="right"))
            queries.append((h, s, min(a0, A - 1), min(a1, A - 1)))
            events.mark("rollout")
        objectives.extend(r.objective for r in state.history)
        logdets.extend(r.logdet for r in state.history)

    q = np.array(queries, dtype=int).reshape(-1, 4)
    hs, ss, a0s, a1s = q.T
    labels = label_differences(adv[hs, ss, a1s] - adv[hs, ss, a0s], streams["label"])
    events.mark("label", len(q))
    if not events.phase_separated():
        raise AssertionError("rollouts interleaved with labelling")

    xi = np.zeros((H, d))
    statuses = []
    for h in range(H):
        sel = hs == h
        if not sel.any():
            statuses.append("no-data")
            continue
        dphi = mdp.features[h, ss[sel], a1s[sel]] - mdp.features[h, ss[sel], a0s[sel]]
        est: XiEstimate = fit_xi(dphi, labels[sel], B, B_adv, mdp.features[h].reshape(-1, d), solver)
        xi[h] = est.xi
        statuses.append(est.status)
    scores = np.einsum("hsad,hd->hsa", mdp.features, xi)
    pi_hat = MarkovPolicy.deterministic(scores.argmax(axis=-1), A)

    pi_star, v_star = optimal_policy(mdp)
    value = policy_value(mdp, pi_hat)
    reach = state_occupancy(mdp, pi_star) >= occupancy_floor
    correct = pi_hat.actions() == pi_star.actions()
    status = "converged" if all(s in ("converged", "no-data") for s in statuses) else "max_iter"
    return RegimeReport(
        mode="action", policy=pi_hat, params=xi, gap=v_star - value, optimal_value=v_star, value=value,
        n_tra=int(events.count("rollout")), n_hum=events.count("label"),
        objectives=objectives, logdets=logdets,
        kappa=kappa(mdp.r_max), kappa_adv=kappa(B_adv), status=status, seed=seed,
        config=dict(config or {}), events=events,
        extras={"recovered": bool(np.all(correct[reach])), "reachable_states": int(reach.sum()),
                "wrong_reachable": int((~correct & reach).sum())},
    )
