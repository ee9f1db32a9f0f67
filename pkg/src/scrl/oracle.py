"""Exact reference computations on small explicit MDPs.

* :func:`exact_density` propagates the state distribution under a fixed
  policy and accumulates discounted occupancy per region.
* :func:`enumerate_policies` scores every deterministic stationary policy.
* :func:`open_loop_frontier` is a dynamic program over (state, region counts)
  for deterministic MDPs with a point-mass start, giving the best achievable
  reward for every reachable density vector. It covers grid worlds whose
  stationary policy space is far too large to enumerate.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .constraints import ConstraintFormula, formula_violation
from .density import RolloutBatch, empirical_policy_density
from .env import ACTIONS, EnvConfig, reward_for_speed, step_arrays

MAX_STATES = 500
MAX_POLICIES = 10**6


class TinyMDPError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TinyMDP:
    """Explicit finite MDP.

    ``P[s, a, s']`` transition probabilities, ``R[s, a]`` rewards,
    ``labels[s]`` the set of 1-based regions active at ``s``.
    """

    P: np.ndarray
    R: np.ndarray
    labels: tuple[frozenset, ...]
    eta: np.ndarray
    gamma: float
    m: int
    max_states: int = MAX_STATES

    def __post_init__(self):
        P, R, eta = (np.asarray(x, dtype=float) for x in (self.P, self.R, self.eta))
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise TinyMDPError("P must have shape (S, A, S)")
        S, A, _ = P.shape
        if S > self.max_states:
            raise TinyMDPError(f"{S} states exceeds the limit of {self.max_states}")
        if R.shape != (S, A):
            raise TinyMDPError(f"R must have shape ({S}, {A})")
        if np.any(P < 0) or not np.allclose(P.sum(axis=2), 1.0, atol=1e-9):
            raise TinyMDPError("transition rows must be probability distributions")
        if eta.shape != (S,) or np.any(eta < 0) or not np.isclose(eta.sum(), 1.0, atol=1e-9):
            raise TinyMDPError("eta must be a distribution over states")
        if len(self.labels) != S:
            raise TinyMDPError("one label set per state required")
        for lab in self.labels:
            if any(not 1 <= i <= self.m for i in lab):
                raise TinyMDPError(f"labels must lie in 1..{self.m}")
        if not 0 < self.gamma <= 1:
            raise TinyMDPError("gamma must lie in (0, 1]")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "labels", tuple(frozenset(int(i) for i in lab) for lab in self.labels))

    @property
    def n_states(self) -> int:
        return self.P.shape[0]

    @property
    def n_actions(self) -> int:
        return self.P.shape[1]

    @property
    def membership(self) -> np.ndarray:
        M = np.zeros((self.n_states, self.m))
        for s, lab in enumerate(self.labels):
            for i in lab:
                M[s, i - 1] = 1.0
        return M

    def labeler(self, state) -> frozenset:
        return self.labels[int(np.ravel(state)[0])]


def _check_policy(mdp: TinyMDP, policy) -> np.ndarray:
    pi = np.asarray(policy, dtype=float)
    if pi.shape != (mdp.n_states, mdp.n_actions):
        raise TinyMDPError(f"policy must have shape ({mdp.n_states}, {mdp.n_actions})")
    if np.any(pi < 0) or not np.allclose(pi.sum(axis=1), 1.0, atol=1e-9):
        raise TinyMDPError("policy rows must be probability distributions")
    return pi


def _steps_for(gamma: float, horizon: int | None, tol: float) -> int:
    if horizon is not None:
        return int(horizon)
    if gamma >= 1.0:
        raise TinyMDPError("an undiscounted density needs a finite horizon")
    # tail sum gamma^t / (1 - gamma) below tol
    return int(np.ceil(np.log(tol * (1.0 - gamma)) / np.log(gamma))) + 1


def occupancy(mdp: TinyMDP, policy, horizon: int | None = None, gamma: float | None = None,
              tol: float = 1e-12) -> np.ndarray:
    """``sum_t gamma^t Pr(s_t = s)`` for t < horizon (or the discounted series to ``tol``)."""
    pi = _check_policy(mdp, policy)
    gamma = mdp.gamma if gamma is None else gamma
    P_pi = np.einsum("sa,sat->st", pi, mdp.P)
    d = mdp.eta.copy()
    total = np.zeros(mdp.n_states)
    g = 1.0
    for _ in range(_steps_for(gamma, horizon, tol)):
        total += g * d
        d = d @ P_pi
        g *= gamma
    return total


def exact_density(mdp: TinyMDP, policy, horizon: int | None = None, gamma: float | None = None,
                  tol: float = 1e-12) -> np.ndarray:
    return occupancy(mdp, policy, horizon, gamma, tol) @ mdp.membership


def exact_return(mdp: TinyMDP, policy, horizon: int | None = None, gamma: float | None = None,
                 tol: float = 1e-12) -> float:
    pi = _check_policy(mdp, policy)
    d = occupancy(mdp, pi, horizon, gamma, tol)
    return float(d @ (pi * mdp.R).sum(axis=1))


def simulate(mdp: TinyMDP, policy, horizon: int, n: int, rng: np.random.Generator) -> RolloutBatch:
    """Monte-Carlo rollouts; states are stored as shape (n, T+1, 1)."""
    pi = _check_policy(mdp, policy)
    pcdf = np.cumsum(pi, axis=1)
    tcdf = np.cumsum(mdp.P, axis=2)
    s = np.minimum(np.searchsorted(np.cumsum(mdp.eta), rng.random(n), side="right"), mdp.n_states - 1)
    states = np.empty((n, horizon + 1, 1), dtype=np.int64)
    actions = np.empty((n, horizon), dtype=np.int64)
    rewards = np.empty((n, horizon))
    states[:, 0, 0] = s
    for t in range(horizon):
        a = np.minimum((pcdf[s] <= rng.random(n)[:, None]).sum(axis=1), mdp.n_actions - 1)
        nxt = np.minimum((tcdf[s, a] <= rng.random(n)[:, None]).sum(axis=1), mdp.n_states - 1)
        actions[:, t] = a
        rewards[:, t] = mdp.R[s, a]
        s = nxt
        states[:, t + 1, 0] = s
    return RolloutBatch(states, actions, rewards)


def monte_carlo_density(mdp: TinyMDP, policy, horizon: int, n: int, rng: np.random.Generator,
                        gamma: float | None = None) -> np.ndarray:
    batch = simulate(mdp, policy, horizon, n, rng)
    return empirical_policy_density(batch, mdp.gamma if gamma is None else gamma, mdp.m, labeler=mdp.labeler)


@dataclass(frozen=True)
class EnumerationResult:
    policy: tuple[int, ...]
    reward: float
    consvio: float
    feasible: bool
    rho: tuple[float, ...]


def enumerate_policies(mdp: TinyMDP, formula: ConstraintFormula, horizon: int | None = None,
                       order=None, chunk: int = 4096) -> EnumerationResult:
    """Best deterministic stationary policy under ``formula``.

    Returns the highest-reward feasible policy, or the least-violating one
    (flag ``feasible=False``) when none is feasible. Ties go to the
    lexicographically smallest action tuple, so the result does not depend on
    ``order`` (an optional iterable of action tuples to score).
    """
    S, A = mdp.n_states, mdp.n_actions
    if A ** S > MAX_POLICIES:
        raise TinyMDPError(f"{A}^{S} deterministic policies exceeds the limit of {MAX_POLICIES}")
    if formula.m != mdp.m:
        raise TinyMDPError("formula and MDP disagree on the region count")
    policies = itertools.product(range(A), repeat=S) if order is None else iter(order)
    steps = _steps_for(mdp.gamma, horizon, 1e-12)
    M = mdp.membership
    best_key, best = None, None
    while True:
        block = list(itertools.islice(policies, chunk))
        if not block:
            break
        pol = np.array(block, dtype=np.int64)  # (K, S)
        rows = np.arange(S)
        P_pi = mdp.P[rows, pol]  # (K, S, S)
        R_pi = mdp.R[rows, pol]  # (K, S)
        d = np.broadcast_to(mdp.eta, pol.shape).copy()
        D = np.zeros(pol.shape)
        g = 1.0
        for _ in range(steps):
            D += g * d
            d = np.einsum("ks,kst->kt", d, P_pi)
            g *= mdp.gamma
        rhos = D @ M
        rewards = (D * R_pi).sum(axis=1)
        for k, p in enumerate(block):
            vio = formula_violation(formula, rhos[k])[0]
            feasible = vio == 0.0
            # feasible first, then higher reward / lower violation, then lexicographic
            key = (0, -rewards[k], tuple(p)) if feasible else (1, vio, -rewards[k], tuple(p))
            if best_key is None or key < best_key:
                best_key = key
                best = EnumerationResult(tuple(int(a) for a in p), float(rewards[k]), float(vio), feasible,
                                         tuple(float(r) for r in rhos[k]))
    if best is None:
        raise TinyMDPError("no policies to enumerate")
    return best


# ---------------------------------------------------------------------------
# Grid adapter and open-loop dynamic program
# ---------------------------------------------------------------------------


def grid_state_index(env: EnvConfig, x, y, v, h):
    return ((np.asarray(y) * env.region_map.width + x) * (env.v_max + 1) + v) * 8 + h


def grid_to_tinymdp(env: EnvConfig, max_states: int = 4096) -> TinyMDP:
    """Flatten a grid environment into an explicit deterministic TinyMDP (gamma = 1)."""
    rm = env.region_map
    S = rm.width * rm.height * (env.v_max + 1) * 8
    if S > max_states:
        raise TinyMDPError(f"grid flattens to {S} states, limit {max_states}")
    idx = np.arange(S)
    h = idx % 8
    v = (idx // 8) % (env.v_max + 1)
    cell = idx // (8 * (env.v_max + 1))
    x, y = cell % rm.width, cell // rm.width
    A = len(ACTIONS)
    P = np.zeros((S, A, S))
    R = np.zeros((S, A))
    for a in range(A):
        x2, y2, v2, h2, r = step_arrays(env, x, y, v, h, np.full(S, a))
        P[idx, a, grid_state_index(env, x2, y2, v2, h2)] = 1.0
        R[:, a] = r
    labels = tuple(frozenset() if rm.cells[yy, xx] == 0 else frozenset((int(rm.cells[yy, xx]),))
                   for xx, yy in zip(x, y))
    eta = np.zeros(S)
    for s, p in env.eta:
        eta[grid_state_index(env, s.x, s.y, s.v, s.heading)] += p
    return TinyMDP(P, R, labels, eta, 1.0, rm.m, max_states=max_states)


def open_loop_frontier(mdp: TinyMDP, regions: list[int], horizon: int) -> dict[tuple[int, ...], float]:
    """Best total reward for every reachable vector of visit counts.

    Requires deterministic transitions and a point-mass start; counts cover
    states ``s_0..s_{horizon-1}`` in the listed (1-based) regions. The
    optimum over action sequences equals the optimum over all deterministic
    history-dependent policies.
    """
    if not np.all((mdp.P == 0) | (mdp.P == 1)):
        raise TinyMDPError("open-loop search needs deterministic transitions")
    starts = np.flatnonzero(mdp.eta)
    if len(starts) != 1:
        raise TinyMDPError("open-loop search needs a point-mass initial state")
    if len(regions) > 2:
        raise TinyMDPError("at most two tracked regions supported")
    S, A = mdp.n_states, mdp.n_actions
    nxt = mdp.P.argmax(axis=2)
    K1 = horizon + 1
    K = K1 ** len(regions)
    M = mdp.membership
    shift = np.zeros(S, dtype=np.int64)
    for j, region in enumerate(regions):
        shift += M[:, region - 1].astype(np.int64) * K1 ** j
    V = np.full(S * K, -np.inf)
    V[starts[0] * K] = 0.0
    g = 1.0
    for _ in range(horizon):
        live = np.flatnonzero(np.isfinite(V))
        s, k = np.divmod(live, K)
        vals = V[live]
        k2 = k + shift[s]
        new = np.full(S * K, -np.inf)
        for a in range(A):
            np.maximum.at(new, nxt[s, a] * K + k2, vals + g * mdp.R[s, a])
        V = new
        g *= mdp.gamma
    best = V.reshape(S, K).max(axis=0)
    frontier = {}
    for k in np.flatnonzero(np.isfinite(best)):
        counts = tuple(int(k // K1 ** j) % K1 for j in range(len(regions)))
        frontier[counts] = float(best[k])
    return frontier


def best_open_loop(mdp: TinyMDP, formula: ConstraintFormula, horizon: int) -> EnumerationResult:
    """Highest-reward action sequence satisfying ``formula`` (or least violating)."""
    regions = formula.regions()
    frontier = open_loop_frontier(mdp, regions, horizon)
    best_key, best = None, None
    for counts, reward in sorted(frontier.items()):
        rho = np.zeros(mdp.m)
        for region, c in zip(regions, counts):
            rho[region - 1] = c
        vio = formula_violation(formula, rho)[0]
        feasible = vio == 0.0
        key = (0, -reward) if feasible else (1, vio, -reward)
        if best_key is None or key < best_key:
            best_key = key
            best = EnumerationResult((), reward, vio, feasible, tuple(float(r) for r in rho))
    return best


# ---------------------------------------------------------------------------
# Text format
# ---------------------------------------------------------------------------


def parse_tinymdp(text: str) -> TinyMDP:
    """Parse the sectioned TinyMDP text format (see README)."""
    lines = [ln.split("#", 1)[0].strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise TinyMDPError("empty TinyMDP file")
    head = lines[0].split()
    if len(head) != 4 or head[0] != "tinymdp":
        raise TinyMDPError("first line must be 'tinymdp S A m'")
    S, A, m = (int(t) for t in head[1:])
    sections: dict[str, list[str]] = {}
    current = None
    for ln in lines[1:]:
        word = ln.split()[0]
        if word in ("gamma", "eta", "transitions", "rewards", "labels"):
            current = word
            rest = ln.split()[1:]
            sections[current] = [" ".join(rest)] if rest else []
        elif current is None:
            raise TinyMDPError(f"data before any section: {ln!r}")
        else:
            sections[current].append(ln)
    missing = {"gamma", "eta", "transitions", "rewards", "labels"} - set(sections)
    if missing:
        raise TinyMDPError(f"missing sections: {sorted(missing)}")

    def floats(rows):
        return [float(t) for row in rows for t in row.split()]

    gamma = floats(sections["gamma"])
    eta = floats(sections["eta"])
    trans = floats(sections["transitions"])
    rew = floats(sections["rewards"])
    if len(gamma) != 1 or len(eta) != S or len(trans) != S * A * S or len(rew) != S * A:
        raise TinyMDPError("section sizes do not match the header counts")
    label_rows = sections["labels"]
    if len(label_rows) != S:
        raise TinyMDPError(f"expected {S} label rows, found {len(label_rows)}")
    labels = tuple(frozenset() if row == "-" else frozenset(int(t) for t in row.split()) for row in label_rows)
    return TinyMDP(np.array(trans).reshape(S, A, S), np.array(rew).reshape(S, A), labels, np.array(eta),
                   gamma[0], m)


def load_tinymdp(path) -> TinyMDP:
    return parse_tinymdp(Path(path).read_text(encoding="utf-8"))


def format_tinymdp(mdp: TinyMDP) -> str:
    out = [f"tinymdp {mdp.n_states} {mdp.n_actions} {mdp.m}", f"gamma {mdp.gamma!r}", "eta",
           " ".join(repr(float(p)) for p in mdp.eta), "transitions"]
    for s in range(mdp.n_states):
        for a in range(mdp.n_actions):
            out.append(" ".join(repr(float(p)) for p in mdp.P[s, a]))
    out.append("rewards")
    out += [" ".join(repr(float(r)) for r in mdp.R[s]) for s in range(mdp.n_states)]
    out.append("labels")
    out += [" ".join(str(i) for i in sorted(lab)) if lab else "-" for lab in mdp.labels]
    return "\n".join(out) + "\n"


def speed_reward_table(v_max: int) -> np.ndarray:
    return reward_for_speed(np.arange(v_max + 1))
