"""Trajectory densities and their empirical expectation over rollout batches."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable, Iterator

import numpy as np

Labeler = Callable[[object], Iterable[int]]


@dataclass(frozen=True)
class Trajectory:
    """States ``s_0..s_T``, actions and rewards ``0..T-1``."""

    states: tuple
    actions: tuple
    rewards: tuple

    def __post_init__(self):
        if len(self.states) != len(self.actions) + 1 or len(self.actions) != len(self.rewards):
            raise ValueError("a trajectory needs len(states) == len(actions) + 1 == len(rewards) + 1")

    def __len__(self) -> int:
        return len(self.actions)

    def steps(self) -> Iterator[tuple]:
        """(state, action, reward, next_state) tuples; next states chain."""
        for t in range(len(self)):
            yield self.states[t], self.actions[t], self.rewards[t], self.states[t + 1]


@dataclass(frozen=True, eq=False)
class RolloutBatch:
    """A fixed-horizon batch of trajectories stored as stacked arrays.

    ``states`` is (n, T+1, d); ``labels`` holds the region id of ``s_t`` for
    t < T (0 = no region). ``penalized`` is filled by reward shaping and
    ``buckets`` by the policy that generated the batch.
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    labels: np.ndarray | None = None
    buckets: np.ndarray | None = None
    penalized: np.ndarray | None = None

    def __post_init__(self):
        n, T = self.actions.shape
        if n < 1:
            raise ValueError("a batch needs at least one trajectory")
        if self.rewards.shape != (n, T) or self.states.shape[:2] != (n, T + 1):
            raise ValueError("inconsistent batch array shapes")

    @property
    def n(self) -> int:
        return self.actions.shape[0]

    @property
    def horizon(self) -> int:
        return self.actions.shape[1]

    @property
    def shaped_rewards(self) -> np.ndarray:
        return self.rewards if self.penalized is None else self.penalized

    def trajectory(self, i: int) -> Trajectory:
        states = tuple(tuple(int(v) for v in s) if np.ndim(s) else int(s) for s in self.states[i])
        return Trajectory(states, tuple(int(a) for a in self.actions[i]), tuple(float(r) for r in self.rewards[i]))

    @property
    def trajectories(self) -> list[Trajectory]:
        return [self.trajectory(i) for i in range(self.n)]

    def with_penalized(self, penalized: np.ndarray) -> "RolloutBatch":
        return replace(self, penalized=penalized)


def discount_weights(horizon: int, gamma_rho: float) -> np.ndarray:
    if not 0.0 < gamma_rho <= 1.0:
        raise ValueError("gamma_rho must lie in (0, 1]")
    return gamma_rho ** np.arange(horizon, dtype=float)


def trajectory_density(tau: Trajectory, gamma_rho: float, labeler: Labeler, m: int) -> np.ndarray:
    """Discounted count of steps ``t < len(tau)`` at which each region is active."""
    if not 0.0 < gamma_rho <= 1.0:
        raise ValueError("gamma_rho must lie in (0, 1]")
    rho = np.zeros(m)
    g = 1.0
    for t in range(len(tau)):
        for i in labeler(tau.states[t]):
            rho[i - 1] += g
        g *= gamma_rho
    return rho


def densities_from_labels(labels: np.ndarray, m: int, gamma_rho: float = 1.0) -> np.ndarray:
    """Per-trajectory densities (n, m) from single-label ids (n, T)."""
    labels = np.asarray(labels)
    w = discount_weights(labels.shape[1], gamma_rho)
    out = np.empty((labels.shape[0], m))
    for i in range(1, m + 1):
        out[:, i - 1] = ((labels == i) * w).sum(axis=1)
    return out


def mean_density(per_trajectory: np.ndarray) -> np.ndarray:
    # contiguous rows so numpy's pairwise summation runs along trajectories
    per_trajectory = np.asarray(per_trajectory, dtype=float)
    return np.ascontiguousarray(per_trajectory.T).sum(axis=1) / per_trajectory.shape[0]


def empirical_policy_density(batch: RolloutBatch, gamma_rho: float, m: int, labeler: Labeler | None = None) -> np.ndarray:
    """Mean trajectory density over the batch."""
    if batch.n < 1:
        raise ValueError("empty batch")
    if labeler is None:
        if batch.labels is None:
            raise ValueError("batch carries no labels; pass a labeler")
        per = densities_from_labels(batch.labels, m, gamma_rho)
    else:
        per = np.array([trajectory_density(tau, gamma_rho, labeler, m) for tau in batch.trajectories])
    return mean_density(per)


def write_density_csv(rho, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["region", "rho"])
        for i, value in enumerate(np.asarray(rho, dtype=float), start=1):
            writer.writerow([i, repr(float(value))])
