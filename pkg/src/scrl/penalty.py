"""Penalty factors and the punitive term.

Each atomic disjunct of a formula owns a penalty factor ``kappa >= 0`` raised
by ``beta * Vio`` per iteration. The per-state punitive term is
``w(phi, s) * kappa(phi)`` for an atom, one selected disjunct per clause
(probabilistically by inverse kappa, or by minimum), summed over clauses.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .constraints import AtomicConstraint, ConstraintFormula, atom_violations

KAPPA_FLOOR = 1e-12
MODES = ("probabilistic", "min")


@dataclass(frozen=True)
class PenaltyLedger:
    """Penalty factors in the formula's clause-major atom order."""

    kappa: np.ndarray
    beta: float
    keys: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if len(self.kappa) != len(self.keys):
            raise ValueError("one kappa entry per atomic disjunct required")
        if np.any(self.kappa < 0):
            raise ValueError("kappa entries must be non-negative")

    @classmethod
    def zeros(cls, formula: ConstraintFormula, beta: float) -> "PenaltyLedger":
        return cls(np.zeros(len(formula.keys)), float(beta), tuple(formula.keys))

    def get(self, clause: int, disjunct: int) -> float:
        return float(self.kappa[self.keys.index((clause, disjunct))])

    def clause_slices(self) -> list[slice]:
        slices, start = [], 0
        while start < len(self.keys):
            c = self.keys[start][0]
            end = start
            while end < len(self.keys) and self.keys[end][0] == c:
                end += 1
            slices.append(slice(start, end))
            start = end
        return slices


def update_ledger(ledger: PenaltyLedger, formula: ConstraintFormula, rho, beta: float | None = None) -> PenaltyLedger:
    """One ascent step ``kappa <- max(0, kappa + beta * Vio)`` on every atom.

    ``beta`` overrides the ledger rate for this step (used for decay schedules).
    TRUE atoms stay pinned at zero.
    """
    if tuple(formula.keys) != ledger.keys:
        raise ValueError("ledger keys do not match the formula structure")
    step = ledger.beta if beta is None else beta
    vio = atom_violations(formula, rho)
    kappa = np.maximum(0.0, ledger.kappa + step * vio)
    pinned = np.array([atom.is_true for atom in formula.atoms], dtype=bool)
    kappa[pinned] = 0.0
    return replace(ledger, kappa=kappa)


def weight(phi: AtomicConstraint, active_regions) -> float:
    """Signed share of ``|a|`` carried by the regions active at a state."""
    norm = float(np.sum(np.abs(phi.coeffs)))
    if norm == 0.0:
        return 0.0
    return float(sum(phi.coeffs[i - 1] for i in set(active_regions))) / norm


def sigma_atomic(phi: AtomicConstraint, kappa: float, active_regions) -> float:
    return weight(phi, active_regions) * kappa


def clause_probabilities(kappa) -> np.ndarray | None:
    """Selection probabilities proportional to ``1/kappa``; None if any kappa is 0."""
    kappa = np.asarray(kappa, dtype=float)
    if np.any(kappa <= 0.0):
        return None
    inv = 1.0 / np.maximum(kappa, KAPPA_FLOOR)
    return inv / inv.sum()


def _pick(probs: np.ndarray, u: float) -> int:
    idx = int(np.searchsorted(np.cumsum(probs), u, side="right"))
    return min(idx, len(probs) - 1)


def sigma_clause(clause, kappa, active_regions, mode: str = "probabilistic", u: float | None = None, rng=None) -> float:
    """Punitive term of one disjunctive clause at a state.

    In probabilistic mode the disjunct is drawn from ``u`` (a uniform in
    [0, 1)) or, if absent, from ``rng``.
    """
    if mode not in MODES:
        raise ValueError(f"unknown disjunct mode {mode!r}")
    probs = clause_probabilities(kappa)
    if probs is None:
        return 0.0
    values = [sigma_atomic(phi, k, active_regions) for phi, k in zip(clause, kappa)]
    if mode == "min":
        return min(values)
    if u is None:
        u = (rng or np.random.default_rng()).random()
    return values[_pick(probs, u)]


def sigma_formula(formula: ConstraintFormula, ledger: PenaltyLedger, active_regions,
                  mode: str = "probabilistic", uniforms=None, rng=None) -> float:
    total = 0.0
    for c, sl in enumerate(ledger.clause_slices()):
        u = None if uniforms is None else uniforms[c]
        total += sigma_clause(formula.clauses[c], ledger.kappa[sl], active_regions, mode, u=u, rng=rng)
    return total


class PunitiveTerm:
    """Vectorised punitive term over region labels for a frozen ledger.

    Labels are integer region ids per state (0 = unlabelled), the grid
    encoding where a state carries at most one region.
    """

    def __init__(self, formula: ConstraintFormula, ledger: PenaltyLedger, mode: str = "probabilistic"):
        if mode not in MODES:
            raise ValueError(f"unknown disjunct mode {mode!r}")
        self.formula = formula
        self.ledger = ledger
        self.mode = mode
        A = formula.A
        norm = np.abs(A).sum(axis=1)
        safe = np.where(norm > 0, norm, 1.0)
        # row r = region label r (row 0 = unlabelled)
        self.weights = np.vstack([np.zeros(len(norm)), (A / safe[:, None]).T])
        self.slices = ledger.clause_slices()

    def __call__(self, labels: np.ndarray, uniforms: np.ndarray | None = None) -> np.ndarray:
        """Sigma for every entry of ``labels``; ``uniforms`` has shape labels.shape + (n_clauses,)."""
        labels = np.asarray(labels)
        total = np.zeros(labels.shape)
        W = self.weights[labels]  # (..., n_atoms)
        for c, sl in enumerate(self.slices):
            probs = clause_probabilities(self.ledger.kappa[sl])
            if probs is None:
                continue
            values = W[..., sl] * self.ledger.kappa[sl]
            if self.mode == "min":
                total += values.min(axis=-1)
                continue
            if uniforms is None:
                raise ValueError("probabilistic mode needs uniforms")
            u = uniforms[..., c]
            edges = np.cumsum(probs)
            pick = np.minimum(np.searchsorted(edges, u, side="right"), len(probs) - 1)
            total += np.take_along_axis(values, pick[..., None], axis=-1)[..., 0]
        return total


def write_ledger_csv(ledger: PenaltyLedger, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["clause_idx", "disjunct_idx", "kappa"])
        for (c, d), k in zip(ledger.keys, ledger.kappa):
            writer.writerow([c, d, repr(float(k))])


def read_ledger_csv(path, beta: float) -> PenaltyLedger:
    keys, kappa = [], []
    with open(Path(path), newline="") as fh:
        for row in csv.DictReader(fh):
            keys.append((int(row["clause_idx"]), int(row["disjunct_idx"])))
            kappa.append(float(row["kappa"]))
    return PenaltyLedger(np.array(kappa), beta, tuple(keys))
