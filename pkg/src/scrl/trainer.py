"""Training loop: rollouts, density estimate, penalty update, reward shaping, policy step."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .constraints import ConstraintFormula, formula_violation, label_violation
from .density import RolloutBatch, densities_from_labels, empirical_policy_density, mean_density
from .env import EnvConfig, draw_initial, label_array, step_arrays
from .penalty import PenaltyLedger, PunitiveTerm, update_ledger
from .policy import PolicyParams, StateBucketizer, penalize_rewards, softmax, update_policy

MODES = ("scrl", "scrl_min", "unconstrained")
RESAMPLE = ("per_call", "per_iteration")

# random stream tags
_ROLLOUT, _SIGMA, _SIGMA_ITER, _EVAL = 0, 1, 2, 3


@dataclass(frozen=True)
class TrainConfig:
    env: EnvConfig
    formula: ConstraintFormula
    mode: str = "scrl"
    seed: int = 0
    beta: float = 0.01
    beta_decay: float = 0.0
    strict_margin: float = 0.0
    gamma_rho: float = 1.0
    alpha: float = 0.2
    gamma_r: float = 0.99
    baseline_rate: float = 0.1
    cell_stride: int = 5
    batch_size: int = 16
    iterations: int = 500
    conv_window: int = 50
    conv_tol: float = 1e-3
    disjunct_resample: str = "per_call"
    workers: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.formula.m != self.env.m:
            raise ValueError(f"formula has {self.formula.m} regions, map has {self.env.m}")
        if self.iterations < 1:
            raise ValueError("iteration budget must be >= 1")
        if self.conv_tol <= 0:
            raise ValueError("convergence tolerance must be positive")
        if self.conv_window < 2:
            raise ValueError("convergence window must be >= 2")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if not 0 <= self.beta_decay <= 1:
            raise ValueError("beta_decay must lie in [0, 1]")
        if self.disjunct_resample not in RESAMPLE:
            raise ValueError(f"disjunct_resample must be one of {RESAMPLE}")

    @property
    def disjunct_mode(self) -> str:
        return "min" if self.mode == "scrl_min" else "probabilistic"

    def bucketizer(self) -> StateBucketizer:
        rm = self.env.region_map
        return StateBucketizer(rm.width, rm.height, self.env.v_max, self.cell_stride)

    def initial_params(self) -> PolicyParams:
        return PolicyParams.zeros(self.bucketizer().n_buckets, alpha=self.alpha, gamma_r=self.gamma_r,
                                  baseline_rate=self.baseline_rate)

    def beta_at(self, iteration: int) -> float:
        if self.iterations == 1:
            return self.beta
        return self.beta * (1.0 - self.beta_decay * iteration / (self.iterations - 1))


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    reward_mean: float
    penalized_mean: float
    consvio: float
    per_clause: tuple[float, ...]
    kappa: tuple[float, ...]
    rho: tuple[float, ...]


@dataclass(frozen=True, eq=False)
class EvalResult:
    reward_mean: float
    consvio: float
    rho: np.ndarray
    reward_std: float = 0.0
    per_clause: tuple[float, ...] = ()
    per_label: dict = field(default_factory=dict)
    episode_consvio: np.ndarray = field(default_factory=lambda: np.zeros(0))
    heatmap: np.ndarray | None = None


def worker_count(requested: int) -> int:
    cap = os.environ.get("SCRL_THREADS")
    n = max(1, int(requested))
    if cap:
        n = min(n, max(1, int(cap)))
    return n


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *key]))


def _rollout_chunk(env: EnvConfig, cdf: np.ndarray, bucketizer: StateBucketizer, gens: list):
    T = env.horizon
    n = len(gens)
    u0 = np.array([g.random() for g in gens])
    ua = np.stack([g.random(T) for g in gens])
    states = np.empty((n, T + 1, 4), dtype=np.int64)
    actions = np.empty((n, T), dtype=np.int64)
    buckets = np.empty((n, T), dtype=np.int64)
    rewards = np.empty((n, T))
    s = draw_initial(env, u0)
    x, y, v, h = s[:, 0], s[:, 1], s[:, 2], s[:, 3]
    states[:, 0] = s
    n_actions = cdf.shape[1]
    for t in range(T):
        b = bucketizer.bucket_arrays(x, y, v, h)
        a = np.minimum((cdf[b] <= ua[:, t, None]).sum(axis=1), n_actions - 1)
        x, y, v, h, r = step_arrays(env, x, y, v, h, a)
        buckets[:, t] = b
        actions[:, t] = a
        rewards[:, t] = r
        states[:, t + 1, 0] = x
        states[:, t + 1, 1] = y
        states[:, t + 1, 2] = v
        states[:, t + 1, 3] = h
    return states, actions, rewards, buckets


def rollout(env: EnvConfig, params: PolicyParams, bucketizer: StateBucketizer, gens: list,
            workers: int = 1) -> RolloutBatch:
    """Roll out one trajectory per generator under a frozen policy snapshot.

    Each trajectory draws only from its own generator, so the batch does not
    depend on how trajectories are split across workers.
    """
    cdf = np.cumsum(softmax(params.theta), axis=1)
    workers = min(worker_count(workers), len(gens))
    if workers == 1:
        parts = [_rollout_chunk(env, cdf, bucketizer, gens)]
    else:
        chunks = [list(c) for c in np.array_split(np.arange(len(gens)), workers)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda idx: _rollout_chunk(env, cdf, bucketizer, [gens[i] for i in idx]), chunks))
    states, actions, rewards, buckets = (np.concatenate(p) for p in zip(*parts))
    labels = label_array(env.region_map, states[:, :-1, 0], states[:, :-1, 1])
    return RolloutBatch(states, actions, rewards, labels=labels, buckets=buckets)


def converged(records: list[IterationRecord], window: int, tol: float) -> bool:
    """Penalized reward and every kappa each vary by at most ``tol`` over the last ``window`` records."""
    if window < 2:
        raise ValueError("window must be >= 2")
    if len(records) < window:
        return False
    recent = records[-window:]
    rewards = np.array([r.penalized_mean for r in recent])
    if rewards.max() - rewards.min() > tol:
        return False
    kappa = np.array([r.kappa for r in recent])
    return bool(kappa.size == 0 or np.all(kappa.max(axis=0) - kappa.min(axis=0) <= tol))


def punitive_loop(
    config: TrainConfig,
    update_punitive: Callable[[Any, np.ndarray, int], Any],
    punitive_term: Callable[[Any, RolloutBatch, int], np.ndarray],
    state: Any,
    params: PolicyParams | None = None,
    on_record: Callable[[IterationRecord], None] | None = None,
):
    """Generic punished-reward scheme.

    Each iteration: fresh rollouts, empirical density, punitive-state update,
    per-transition ``r - sigma``, one policy step; stop at the budget or when
    :func:`converged` holds. ``state`` must expose ``kappa`` (or be an array)
    for logging.
    """
    env, formula = config.env, config.formula
    bucketizer = config.bucketizer()
    params = params if params is not None else config.initial_params()
    records: list[IterationRecord] = []
    rho = np.zeros(env.m)
    for it in range(config.iterations):
        gens = [_stream(config.seed, _ROLLOUT, it, i) for i in range(config.batch_size)]
        batch = rollout(env, params, bucketizer, gens, config.workers)
        rho = empirical_policy_density(batch, config.gamma_rho, env.m)
        state = update_punitive(state, rho, it)
        sigma = punitive_term(state, batch, it)
        batch = penalize_rewards(batch, sigma)
        if not np.all(np.isfinite(batch.penalized)):
            raise FloatingPointError(f"non-finite shaped reward at iteration {it}")
        params = update_policy(params, batch)
        total, per_clause = formula_violation(formula, rho)
        kappa = np.asarray(getattr(state, "kappa", state), dtype=float).ravel()
        record = IterationRecord(
            iteration=it,
            reward_mean=float(batch.rewards.sum(axis=1).mean()),
            penalized_mean=float(batch.penalized.sum(axis=1).mean()),
            consvio=total,
            per_clause=tuple(per_clause),
            kappa=tuple(float(k) for k in kappa),
            rho=tuple(float(r) for r in rho),
        )
        records.append(record)
        if on_record is not None:
            on_record(record)
        if converged(records, config.conv_window, config.conv_tol):
            break
    return params, rho, records


def scrl_pieces(config: TrainConfig):
    """(update_punitive, punitive_term, initial ledger) for the configured mode."""
    formula = config.formula
    n_clauses = len(formula.clauses)

    def update(ledger: PenaltyLedger, rho, it):
        if config.mode == "unconstrained":
            return ledger
        return update_ledger(ledger, formula, rho, beta=config.beta_at(it))

    def term(ledger: PenaltyLedger, batch: RolloutBatch, it):
        if config.mode == "unconstrained":
            return np.zeros(batch.rewards.shape)
        sigma = PunitiveTerm(formula, ledger, config.disjunct_mode)
        uniforms = None
        if config.disjunct_mode == "probabilistic":
            if config.disjunct_resample == "per_call":
                uniforms = np.stack([_stream(config.seed, _SIGMA, it, i).random((batch.horizon, n_clauses))
                                     for i in range(batch.n)])
            else:
                draw = _stream(config.seed, _SIGMA_ITER, it).random(n_clauses)
                uniforms = np.broadcast_to(draw, batch.rewards.shape + (n_clauses,))
        return sigma(batch.labels, uniforms)

    return update, term, PenaltyLedger.zeros(formula, config.beta)


def train(config: TrainConfig, on_record=None):
    """Run the situational-constrained training loop; returns (params, rho, records)."""
    update, term, ledger = scrl_pieces(config)
    return punitive_loop(config, update, term, ledger, on_record=on_record)


def evaluate(params: PolicyParams, config: TrainConfig, n_episodes: int, seed: int | None = None) -> EvalResult:
    """Frozen-policy rollouts scored on raw rewards with undiscounted densities."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    env, formula = config.env, config.formula
    seed = config.seed if seed is None else seed
    gens = [_stream(seed, _EVAL, i) for i in range(n_episodes)]
    batch = rollout(env, params, config.bucketizer(), gens, config.workers)
    per = densities_from_labels(batch.labels, env.m, 1.0)
    rho = mean_density(per)
    total, per_clause = formula_violation(formula, rho)
    returns = batch.rewards.sum(axis=1)
    rm = env.region_map
    heat = np.zeros((rm.height, rm.width), dtype=np.int64)
    np.add.at(heat, (batch.states[:, :-1, 1].ravel(), batch.states[:, :-1, 0].ravel()), 1)
    return EvalResult(
        reward_mean=float(returns.mean()),
        consvio=total,
        rho=rho,
        reward_std=float(returns.std()),
        per_clause=tuple(per_clause),
        per_label=label_violation(formula, rho),
        episode_consvio=np.array([formula_violation(formula, r)[0] for r in per]),
        heatmap=heat,
    )


def train_atomic(config: TrainConfig, on_record=None):
    """The punished-reward scheme for one atomic constraint, ``sigma(s) = w(s) * kappa``.

    Written directly against the atom's coefficients, without the ledger or
    clause machinery, so it can cross-check :func:`train`.
    """
    clauses = config.formula.clauses
    if len(clauses) != 1 or len(clauses[0]) != 1:
        raise ValueError("train_atomic needs a single atomic constraint")
    atom = clauses[0][0]
    a = np.asarray(atom.a, dtype=float)
    norm = np.abs(a).sum()
    # weight per label id; label 0 marks states outside every region
    w = np.concatenate([[0.0], a / norm]) if norm > 0 else np.zeros(len(a) + 1)

    def update(kappa, rho, it):
        if config.mode == "unconstrained":
            return kappa
        vio = float(a @ np.asarray(rho, dtype=float)) - atom.bound
        return np.maximum(0.0, kappa + config.beta_at(it) * vio)

    def term(kappa, batch, it):
        if config.mode == "unconstrained":
            return np.zeros(batch.rewards.shape)
        return w[batch.labels] * kappa[0]

    return punitive_loop(config, update, term, np.zeros(1), on_record=on_record)
