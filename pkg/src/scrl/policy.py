"""Tabular softmax policy over coarse state buckets, trained by policy gradient."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .density import RolloutBatch
from .env import ACTIONS, EnvAction, EnvState


@dataclass(frozen=True)
class StateBucketizer:
    """Maps (x, y, v, heading) to ``((x//s) * ny + y//s) * (v_max+1) * 8 + v * 8 + heading``."""

    width: int
    height: int
    v_max: int
    cell_stride: int = 5

    def __post_init__(self):
        if self.cell_stride < 1:
            raise ValueError("cell_stride must be positive")

    @property
    def nx(self) -> int:
        return -(-self.width // self.cell_stride)

    @property
    def ny(self) -> int:
        return -(-self.height // self.cell_stride)

    @property
    def n_buckets(self) -> int:
        return self.nx * self.ny * (self.v_max + 1) * 8

    def bucket_arrays(self, x, y, v, h):
        cell = (x // self.cell_stride) * self.ny + (y // self.cell_stride)
        return (cell * (self.v_max + 1) + v) * 8 + h

    def __call__(self, s: EnvState) -> int:
        return int(self.bucket_arrays(s.x, s.y, s.v, s.heading))


@dataclass(frozen=True, eq=False)
class PolicyParams:
    theta: np.ndarray  # (n_buckets, n_actions) preferences
    alpha: float = 0.2
    gamma_r: float = 0.99
    baseline: np.ndarray | None = None
    baseline_seen: np.ndarray | None = None
    baseline_rate: float = 0.1

    @classmethod
    def zeros(cls, n_buckets: int, n_actions: int = len(ACTIONS), **kwargs) -> "PolicyParams":
        return cls(np.zeros((n_buckets, n_actions)), **kwargs)

    def __post_init__(self):
        if self.theta.ndim != 2:
            raise ValueError("theta must be (n_buckets, n_actions)")
        if not 0 < self.baseline_rate <= 1:
            raise ValueError("baseline_rate must lie in (0, 1]")
        if self.baseline is None:
            object.__setattr__(self, "baseline", np.zeros(self.theta.shape[0]))
            object.__setattr__(self, "baseline_seen", np.zeros(self.theta.shape[0], dtype=bool))

    def probs(self, buckets=None) -> np.ndarray:
        rows = self.theta if buckets is None else self.theta[buckets]
        return softmax(rows)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def sample_from_probs(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF sampling of one action per row of ``probs``."""
    cdf = np.cumsum(probs, axis=-1)
    idx = (cdf <= u[..., None]).sum(axis=-1)
    return np.minimum(idx, probs.shape[-1] - 1)


def sample_action(params: PolicyParams, state: EnvState, rng: np.random.Generator,
                  bucketizer: StateBucketizer) -> EnvAction:
    probs = params.probs(bucketizer(state))
    return ACTIONS[int(sample_from_probs(probs, np.array(rng.random())))]


def penalize_rewards(batch: RolloutBatch, sigma: np.ndarray) -> RolloutBatch:
    """``r' = r - sigma`` per transition; raw rewards stay on the batch."""
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape != batch.rewards.shape:
        raise ValueError(f"sigma has shape {sigma.shape}, batch rewards {batch.rewards.shape}")
    return batch.with_penalized(batch.rewards - sigma)


def discounted_returns(rewards: np.ndarray, gamma: float) -> np.ndarray:
    """Reward-to-go ``G_t = sum_k gamma^k r_{t+k}`` along axis 1."""
    out = np.empty_like(rewards, dtype=float)
    acc = np.zeros(rewards.shape[0])
    for t in range(rewards.shape[1] - 1, -1, -1):
        acc = rewards[:, t] + gamma * acc
        out[:, t] = acc
    return out


def grad_log_likelihood(theta: np.ndarray, buckets, actions, weights) -> np.ndarray:
    """Gradient of ``sum_t weights_t * log pi(actions_t | buckets_t)`` w.r.t. theta."""
    buckets = np.asarray(buckets).ravel()
    actions = np.asarray(actions).ravel()
    weights = np.asarray(weights, dtype=float).ravel()
    contrib = -softmax(theta[buckets]) * weights[:, None]
    contrib[np.arange(len(actions)), actions] += weights
    grad = np.zeros_like(theta)
    np.add.at(grad, buckets, contrib)
    return grad


def log_likelihood(theta: np.ndarray, buckets, actions, weights) -> float:
    buckets = np.asarray(buckets).ravel()
    actions = np.asarray(actions).ravel()
    z = theta[buckets]
    zmax = z.max(axis=1, keepdims=True)
    logp = z - zmax - np.log(np.exp(z - zmax).sum(axis=1, keepdims=True))
    return float(np.sum(np.asarray(weights, dtype=float).ravel() * logp[np.arange(len(actions)), actions]))


def update_policy(params: PolicyParams, batch: RolloutBatch) -> PolicyParams:
    """One policy-gradient ascent step on the discounted shaped return.

    Advantages are returns minus a per-bucket running mean, scaled to unit
    standard deviation over the batch. Each bucket's step is the mean of its
    samples' score-function terms, so rarely visited buckets move as fast as
    common ones.
    """
    if batch.buckets is None:
        raise ValueError("batch has no bucket ids")
    if not np.all(np.isfinite(batch.shaped_rewards)):
        bad = np.argwhere(~np.isfinite(batch.shaped_rewards))[:5].tolist()
        raise FloatingPointError(f"non-finite shaped reward at (trajectory, step) {bad}")
    returns = discounted_returns(batch.shaped_rewards, params.gamma_r)
    buckets = batch.buckets.ravel()
    actions = batch.actions.ravel()
    G = returns.ravel()

    n_b = params.theta.shape[0]
    counts = np.bincount(buckets, minlength=n_b)
    sums = np.bincount(buckets, weights=G, minlength=n_b)
    visited = counts > 0
    batch_mean = np.zeros(n_b)
    batch_mean[visited] = sums[visited] / counts[visited]
    baseline = params.baseline.copy()
    fresh = visited & ~params.baseline_seen
    old = visited & params.baseline_seen
    baseline[fresh] = batch_mean[fresh]
    baseline[old] += params.baseline_rate * (batch_mean[old] - baseline[old])

    adv = G - baseline[buckets]
    scale = adv.std()
    if scale > 0:
        adv = adv / scale
    grad = grad_log_likelihood(params.theta, buckets, actions, adv)
    step = np.zeros_like(grad)
    step[visited] = grad[visited] / counts[visited, None]
    theta = params.theta + params.alpha * step
    if not np.all(np.isfinite(theta)):
        bad = np.argwhere(~np.isfinite(theta))[:5].tolist()
        raise FloatingPointError(
            f"non-finite policy update at (bucket, action) {bad}; "
            f"return range [{np.nanmin(G)}, {np.nanmax(G)}], advantage scale {scale}"
        )
    return replace(params, theta=theta, baseline=baseline, baseline_seen=params.baseline_seen | visited)


def write_checkpoint(params: PolicyParams, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bucket", "action", "theta"])
        for b in range(params.theta.shape[0]):
            for a in range(params.theta.shape[1]):
                writer.writerow([b, a, repr(float(params.theta[b, a]))])


def read_checkpoint(path, n_buckets: int | None = None, n_actions: int = len(ACTIONS), **kwargs) -> PolicyParams:
    entries = []
    with open(Path(path), newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["bucket", "action", "theta"]:
            raise ValueError(f"{path}: not a policy checkpoint (header {reader.fieldnames})")
        for row in reader:
            entries.append((int(row["bucket"]), int(row["action"]), float(row["theta"])))
    if not entries:
        raise ValueError(f"{path}: empty checkpoint")
    nb = max(e[0] for e in entries) + 1
    na = max(e[1] for e in entries) + 1
    if n_buckets is not None and nb != n_buckets:
        raise ValueError(f"checkpoint has {nb} buckets, configuration expects {n_buckets}")
    if na != n_actions or len(entries) != nb * na:
        raise ValueError(f"checkpoint has {na} actions / {len(entries)} rows, expected {n_actions} actions per bucket")
    theta = np.zeros((nb, na))
    for b, a, v in entries:
        theta[b, a] = v
    return PolicyParams(theta, **kwargs)
