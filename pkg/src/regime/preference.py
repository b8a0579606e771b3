"""Simulated Bradley-Terry feedback over trajectories and over actions."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Iterable, Iterator, TextIO

import numpy as np

from .mdp import ConfigurationError, Trajectory

LOGIT_CLAMP = 30.0


def sigmoid(x):
    x = np.clip(x, -LOGIT_CLAMP, LOGIT_CLAMP)
    return 1.0 / (1.0 + np.exp(-x))


def kappa(bound: float) -> float:
    """``sup_{|x| <= bound} 1 / sigma'(x) = 2 + e^{2b} + e^{-2b}``."""
    if bound < 0:
        raise ConfigurationError("bound must be nonnegative")
    return 2.0 + np.exp(2.0 * bound) + np.exp(-2.0 * bound)


@dataclass(frozen=True)
class TrajectoryQuery:
    first: Trajectory
    second: Trajectory

    def __post_init__(self) -> None:
        if self.first.phi.shape != self.second.phi.shape:
            raise ConfigurationError("trajectories in a query must share feature dimensions")

    @property
    def dphi(self) -> np.ndarray:
        """``phi(tau^1) - phi(tau^0)``."""
        return self.second.phi - self.first.phi


@dataclass(frozen=True)
class ActionQuery:
    h: int
    s: int
    a0: int
    a1: int


def trajectory_preference_prob(theta: np.ndarray, query: TrajectoryQuery) -> float:
    theta = np.asarray(theta, dtype=float).ravel()
    dphi = query.dphi
    if theta.shape != dphi.shape:
        raise ConfigurationError(f"theta has {theta.size} entries, features have {dphi.size}")
    return float(sigmoid(theta @ dphi))


def trajectory_preference(theta: np.ndarray, query: TrajectoryQuery, rng: np.random.Generator) -> int:
    """Draw ``o = 1`` (second trajectory preferred) with probability ``sigma(r(tau^1) - r(tau^0))``."""
    return int(rng.random() < trajectory_preference_prob(theta, query))


def action_preference_prob(adv: np.ndarray, query: ActionQuery) -> float:
    return float(sigmoid(adv[query.h, query.s, query.a1] - adv[query.h, query.s, query.a0]))


def action_preference(adv: np.ndarray, query: ActionQuery, rng: np.random.Generator) -> int:
    return int(rng.random() < action_preference_prob(adv, query))


def label_differences(logits: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Vectorised Bernoulli labels for a batch of reward differences."""
    logits = np.asarray(logits, dtype=float)
    return (rng.random(logits.shape) < sigmoid(logits)).astype(int)


# -- record streams -----------------------------------------------------------

@dataclass
class PreferenceRecord:
    """One labelled comparison.

    ``kind`` is ``"trajectory"`` (payload holds the two state/action sequences)
    or ``"action"`` (payload holds ``h, s, a0, a1``).
    """

    query_id: int
    kind: str
    payload: dict
    label: int
    seed: int | None = None


def trajectory_record(query_id: int, query: TrajectoryQuery, label: int, seed: int | None = None) -> PreferenceRecord:
    payload = {
        "tau0": {"states": query.first.states.tolist(), "actions": query.first.actions.tolist()},
        "tau1": {"states": query.second.states.tolist(), "actions": query.second.actions.tolist()},
    }
    return PreferenceRecord(query_id, "trajectory", payload, int(label), seed)


def action_record(query_id: int, query: ActionQuery, label: int, seed: int | None = None) -> PreferenceRecord:
    payload = {"h": query.h, "s": query.s, "a0": query.a0, "a1": query.a1}
    return PreferenceRecord(query_id, "action", payload, int(label), seed)


def write_records(records: Iterable[PreferenceRecord], fh: TextIO) -> None:
    for rec in records:
        fh.write(json.dumps(asdict(rec), sort_keys=True) + "\n")


def read_records(fh: TextIO) -> Iterator[PreferenceRecord]:
    for line in fh:
        line = line.strip()
        if line:
            yield PreferenceRecord(**json.loads(line))


def comparison_arrays(records: Iterable[PreferenceRecord], features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rebuild ``(dphi, labels)`` from trajectory records and a feature table ``(H, S, A, d)``."""
    dphis, labels = [], []
    H = features.shape[0]
    for rec in records:
        if rec.kind != "trajectory":
            raise ConfigurationError(f"expected trajectory records, got {rec.kind!r}")
        phis = []
        for key in ("tau0", "tau1"):
            s = np.asarray(rec.payload[key]["states"])
            a = np.asarray(rec.payload[key]["actions"])
            phis.append(features[np.arange(H), s, a].ravel())
        dphis.append(phis[1] - phis[0])
        labels.append(rec.label)
    return np.asarray(dphis), np.asarray(labels, dtype=int)
