"""Constrained maximum-likelihood fits for Bradley-Terry comparison data.

Both estimators minimise the logistic negative log-likelihood of labelled
feature differences over a convex set, using accelerated projected gradient with
Armijo backtracking started from the origin.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .mdp import ConfigurationError


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-8
    max_iter: int = 50_000
    step0: float = 1.0
    shrink: float = 0.5


@dataclass
class SolverResult:
    x: np.ndarray
    iterations: int
    grad_norm: float
    objective: float
    converged: bool

    @property
    def status(self) -> str:
        return "converged" if self.converged else "max_iter"


@dataclass
class ThetaEstimate:
    theta: np.ndarray  # (H, d)
    iterations: int
    grad_norm: float
    nll: float
    status: str
    B: float
    r_max_violation: float | None = None

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    @property
    def flat(self) -> np.ndarray:
        return self.theta.ravel()


@dataclass
class XiEstimate:
    xi: np.ndarray  # (d,)
    iterations: int
    grad_norm: float
    nll: float
    status: str
    B: float
    B_adv: float
    max_advantage: float = field(default=np.nan)

    @property
    def converged(self) -> bool:
        return self.status == "converged"


# -- objective -----------------------------------------------------------------

def _signs(labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size and not np.all((labels == 0) | (labels == 1)):
        raise ConfigurationError("labels must be 0 or 1")
    return 2.0 * labels - 1.0


def nll(theta: np.ndarray, dphi: np.ndarray, labels: np.ndarray) -> float:
    """Negative log-likelihood ``-sum_n log sigma(y_n <theta, dphi_n>)`` with ``y = 2o - 1``.

    ``dphi`` rows are ``phi(tau^1) - phi(tau^0)``.
    """
    dphi = np.asarray(dphi, dtype=float)
    if dphi.size == 0:
        return 0.0
    z = dphi @ np.asarray(theta, dtype=float).ravel()
    return float(np.logaddexp(0.0, -_signs(labels) * z).sum())


def _mean_nll_and_grad(dphi: np.ndarray, y: np.ndarray) -> Callable[[np.ndarray], tuple[float, np.ndarray]]:
    n = len(y)

    def fg(x: np.ndarray) -> tuple[float, np.ndarray]:
        m = y * (dphi @ x)
        f = np.logaddexp(0.0, -m).sum() / n
        # sigma(-m) without overflow
        w = np.exp(-np.logaddexp(0.0, m))
        return float(f), -(dphi.T @ (y * w)) / n

    return fg


def projected_gradient(
    fg: Callable[[np.ndarray], tuple[float, np.ndarray]],
    project: Callable[[np.ndarray], np.ndarray],
    x0: np.ndarray,
    config: SolverConfig = SolverConfig(),
) -> SolverResult:
    """Accelerated projected gradient with backtracking and function-value restart.

    Terminates once the gradient mapping ``||x - proj(x - t g)|| / t`` at the
    accepted step falls below ``config.tol``.
    """
    x = project(np.asarray(x0, dtype=float))
    fx, gx = fg(x)
    y, fy, gy = x, fx, gx
    momentum = 1.0
    step = config.step0
    best = (fx, x)
    gnorm = np.inf
    for it in range(1, config.max_iter + 1):
        step = min(config.step0, step * 2.0)
        while True:
            z = project(y - step * gy)
            diff = z - y
            fz, gz = fg(z)
            if fz <= fy + gy @ diff + (diff @ diff) / (2.0 * step) + 1e-15 * abs(fy) or step < 1e-20:
                break
            step *= config.shrink
        gnorm = float(np.linalg.norm(diff) / step)
        if fz < best[0]:
            best = (fz, z)
        if gnorm <= config.tol:
            return SolverResult(z, it, gnorm, fz, True)
        if fz > fx:
            # restart momentum from the last iterate
            momentum = 1.0
            y, fy, gy = x, fx, gx
            continue
        next_momentum = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * momentum**2))
        y = z + ((momentum - 1.0) / next_momentum) * (z - x)
        momentum = next_momentum
        x, fx, gx = z, fz, gz
        fy, gy = fg(y)
    fbest, xbest = best
    return SolverResult(xbest, config.max_iter, gnorm, fbest, False)


# -- projections ------------------------------------------------------------------

def project_blocks(x: np.ndarray, H: int, B: float) -> np.ndarray:
    """Euclidean projection onto ``{theta : ||theta_h|| <= B for every block}``."""
    blocks = x.reshape(H, -1)
    norms = np.linalg.norm(blocks, axis=1)
    scale = np.where(norms > B, B / np.maximum(norms, 1e-300), 1.0)
    return (blocks * scale[:, None]).ravel()


def project_ball(x: np.ndarray, B: float) -> np.ndarray:
    n = np.linalg.norm(x)
    return x if n <= B else x * (B / n)


def _axis_bounds(G: np.ndarray, b: np.ndarray) -> np.ndarray | None:
    """Per-coordinate upper bounds when every constraint row is a positive axis vector."""
    nz = G != 0.0
    if not np.all(nz.sum(axis=1) == 1):
        return None
    cols = nz.argmax(axis=1)
    coef = G[np.arange(len(G)), cols]
    if np.any(coef <= 0):
        return None
    upper = np.full(G.shape[1], np.inf)
    np.minimum.at(upper, cols, b / coef)
    return upper


def _project_ball_box(x: np.ndarray, B: float, upper: np.ndarray) -> np.ndarray:
    # KKT: xi_j = min(x_j / (1 + mu), u_j) for the ball multiplier mu >= 0
    xi = np.minimum(x, upper)
    if np.linalg.norm(xi) <= B:
        return xi
    floor = np.minimum(0.0, upper)
    if np.linalg.norm(floor) > B:
        raise ConfigurationError("constraint set is empty")
    lo, hi = 0.0, 1.0
    while np.linalg.norm(np.minimum(x / (1.0 + hi), upper)) > B:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.linalg.norm(np.minimum(x / (1.0 + mid), upper)) > B:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * (1.0 + hi):
            break
    return np.minimum(x / (1.0 + hi), upper)


def project_ball_halfspaces(
    x: np.ndarray, B: float, G: np.ndarray, b: float | np.ndarray, tol: float = 1e-13, max_iter: int = 100_000
) -> np.ndarray:
    """Euclidean projection onto ``{||xi|| <= B} ∩ {G xi <= b}``.

    Axis-aligned constraint rows (one-hot features) use an exact closed form;
    general rows fall back to Dykstra's alternating projections.
    """
    G = np.atleast_2d(np.asarray(G, dtype=float))
    b = np.broadcast_to(np.asarray(b, dtype=float), (len(G),))
    p = project_ball(x, B)
    if np.all(G @ p <= b + tol):
        return p
    upper = _axis_bounds(G, b)
    if upper is not None:
        return _project_ball_box(x, B, upper)

    gn2 = np.einsum("ij,ij->i", G, G)
    y = x.copy()
    inc = np.zeros((len(G) + 1, len(x)))
    for _ in range(max_iter):
        y_prev = y
        z = project_ball(y + inc[0], B)
        inc[0] = y + inc[0] - z
        y = z
        for i in range(len(G)):
            w = y + inc[i + 1]
            excess = G[i] @ w - b[i]
            z = w - (excess / gn2[i]) * G[i] if excess > 0 and gn2[i] > 0 else w
            inc[i + 1] = w - z
            y = z
        if np.linalg.norm(y - y_prev) <= tol:
            break
    return y


# -- estimators ------------------------------------------------------------------------

def fit_theta(
    dphi: np.ndarray,
    labels: np.ndarray,
    B: float,
    H: int,
    r_max: float | None = None,
    config: SolverConfig = SolverConfig(),
    trajectory_features: np.ndarray | None = None,
) -> ThetaEstimate:
    """Constrained MLE of the stacked reward parameters over per-block balls.

    The trajectory-reward cap ``|<phi(tau), theta>| <= r_max`` is not projected;
    when ``trajectory_features`` are given, its worst violation over those
    trajectories is reported in ``r_max_violation``.
    """
    dphi = np.asarray(dphi, dtype=float)
    if dphi.ndim != 2 or len(dphi) == 0:
        raise ConfigurationError("fit_theta needs at least one comparison")
    if dphi.shape[1] % H:
        raise ConfigurationError(f"feature dimension {dphi.shape[1]} is not a multiple of H={H}")
    if not np.all(np.isfinite(dphi)):
        raise ConfigurationError("non-finite features")
    y = _signs(labels)
    res = projected_gradient(_mean_nll_and_grad(dphi, y), lambda v: project_blocks(v, H, B),
                             np.zeros(dphi.shape[1]), config)
    violation = None
    if r_max is not None and trajectory_features is not None:
        rewards = np.asarray(trajectory_features) @ res.x
        violation = float(np.abs(rewards).max() - r_max)
    return ThetaEstimate(res.x.reshape(H, -1), res.iterations, res.grad_norm,
                         nll(res.x, dphi, labels), res.status, B, violation)


def fit_xi(
    dphi: np.ndarray,
    labels: np.ndarray,
    B: float,
    B_adv: float,
    grid: np.ndarray,
    config: SolverConfig = SolverConfig(),
) -> XiEstimate:
    """Constrained MLE of one step's advantage parameters over ``Z(B, h)``.

    ``grid`` stacks every ``phi_h(s, a)`` of the step as rows; each row gives a
    constraint ``<phi_h(s, a), xi> <= B_adv``.
    """
    dphi = np.asarray(dphi, dtype=float)
    grid = np.asarray(grid, dtype=float).reshape(-1, dphi.shape[1] if dphi.ndim == 2 else np.shape(grid)[-1])
    R = float(np.linalg.norm(grid, axis=1).max())
    if B_adv < -B * R:
        raise ConfigurationError(f"B_adv={B_adv} < -B*R makes the constraint set empty")
    if dphi.ndim != 2 or len(dphi) == 0:
        raise ConfigurationError("fit_xi needs at least one comparison")
    y = _signs(labels)
    res = projected_gradient(_mean_nll_and_grad(dphi, y),
                             lambda v: project_ball_halfspaces(v, B, grid, B_adv),
                             np.zeros(dphi.shape[1]), config)
    return XiEstimate(res.x, res.iterations, res.grad_norm, nll(res.x, dphi, labels), res.status,
                      B, B_adv, float((grid @ res.x).max()))


def covariance_error(theta_hat: np.ndarray, theta_star: np.ndarray, sigma: np.ndarray) -> float:
    """``||theta_hat - theta_star||_Sigma`` for symmetric positive-definite ``Sigma``."""
    sigma = np.asarray(sigma, dtype=float)
    if not np.allclose(sigma, sigma.T, atol=1e-10):
        raise ConfigurationError("Sigma must be symmetric")
    try:
        L = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as exc:
        raise ConfigurationError("Sigma must be positive definite") from exc
    diff = np.ravel(theta_hat) - np.ravel(theta_star)
    return float(np.linalg.norm(L.T @ diff))
