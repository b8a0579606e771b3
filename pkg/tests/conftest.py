import numpy as np
import pytest

from regime.mdp import TabularMDP, one_hot_features


def chain_mdp(H: int = 2, reward: float = 0.5) -> TabularMDP:
    """Two states; action 1 moves 0 -> 1 (and stays at 1), action 0 stays put.

    One-hot features, reward ``reward * 1[a = 1]``.
    """
    S, A = 2, 2
    P = np.zeros((H, S, A, S))
    P[:, 0, 0, 0] = 1.0
    P[:, 0, 1, 1] = 1.0
    P[:, 1, 0, 1] = 1.0
    P[:, 1, 1, 1] = 1.0
    init = np.array([1.0, 0.0])
    phi = one_hot_features(H, S, A)
    theta = np.zeros((H, S * A))
    theta[:, [1, 3]] = reward
    return TabularMDP(P, init, phi, theta, B=1.0, R=1.0, r_max=2.0)


def random_mdp(rng, S=4, A=3, H=3, d=None) -> TabularMDP:
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


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def chain():
    return chain_mdp()


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
