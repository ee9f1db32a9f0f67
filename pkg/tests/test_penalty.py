import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scrl.constraints import AtomicConstraint, load_formula, violation_degree
from scrl.density import Trajectory, trajectory_density
from scrl.penalty import (PenaltyLedger, PunitiveTerm, clause_probabilities, read_ledger_csv, sigma_atomic,
                          sigma_clause, sigma_formula, update_ledger, weight, write_ledger_csv)

EQUITY = AtomicConstraint((1.0, -1.0), 0.0)  # rho(i) - rho(j) <= 0


def ledger_for(formula, kappa, beta=0.1):
    return PenaltyLedger(np.asarray(kappa, dtype=float), beta, tuple(formula.keys))


@pytest.mark.parametrize("kappa, vio, expected", [(0.0, 2.0, 0.2), (0.5, -10.0, 0.0), (1.0, 0.0, 1.0)])
def test_update_ledger_examples(kappa, vio, expected):
    f = load_formula(f"rho[1] <= {5.0 - vio}", 1)
    out = update_ledger(ledger_for(f, [kappa]), f, [5.0])
    assert out.kappa[0] == pytest.approx(expected, abs=1e-15)


def test_update_ledger_rejects_mismatch():
    f = load_formula("rho[1] <= 1", 1)
    g = load_formula("rho[1] <= 1 OR rho[1] >= 3", 1)
    with pytest.raises(ValueError):
        update_ledger(PenaltyLedger.zeros(g, 0.1), f, [0.0])


def test_true_atom_pinned():
    f = load_formula("TRUE OR rho[1] <= 0", 1)
    led = ledger_for(f, [0.0, 0.0])
    for _ in range(5):
        led = update_ledger(led, f, [10.0])
    assert led.kappa[0] == 0.0 and led.kappa[1] > 0


@pytest.mark.parametrize("active, expected", [({1}, 0.5), ({2}, -0.5), (set(), 0.0)])
def test_weight_example(active, expected):
    assert weight(EQUITY, active) == expected


@pytest.mark.parametrize("kappa, active, expected", [(4.0, {1}, 2.0), (0.0, {1}, 0.0), (4.0, {2}, -2.0)])
def test_sigma_atomic(kappa, active, expected):
    assert sigma_atomic(EQUITY, kappa, active) == expected


def test_sigma_clause_zero_kappa():
    clause = (AtomicConstraint((1.0, 0.0), 1.0), AtomicConstraint((0.0, 1.0), 1.0))
    for mode in ("probabilistic", "min"):
        assert sigma_clause(clause, [0.0, 2.0], {1}, mode, u=0.3) == 0.0


def test_clause_probabilities():
    assert np.allclose(clause_probabilities([1.0, 3.0]), [0.75, 0.25])
    assert clause_probabilities([1.0, 0.0]) is None
    tiny = clause_probabilities([1e-300, 1.0])
    assert np.all(np.isfinite(tiny)) and tiny[0] > 0.999


def test_sigma_clause_min():
    clause = (AtomicConstraint((1.0, 0.0), 0.0), AtomicConstraint((1.0, 0.0), 0.0))
    assert sigma_clause(clause, [5.0, 1.0], {1}, "min") == 1.0


def test_sigma_formula_min_example():
    f = load_formula("(rho[1] <= 0 OR rho[1] <= 0) AND (rho[1] <= 0 OR rho[1] <= 0) AND (rho[1] <= 0 OR rho[1] <= 0)", 1)
    led = ledger_for(f, [5.0, 1.0, 3.0, 4.0, 0.0, 2.0])
    assert sigma_formula(f, led, {1}, "min") == 4.0


def test_sigma_formula_all_zero():
    f = load_formula("rho[1] <= 0 AND (rho[2] <= 0 OR rho[1] >= 1)", 2)
    led = PenaltyLedger.zeros(f, 0.1)
    assert sigma_formula(f, led, {1}, "probabilistic", uniforms=[0.5, 0.5]) == 0.0


def test_single_singleton_clause_matches_atomic():
    f = load_formula("rho[1] - rho[2] <= 0", 2)
    led = ledger_for(f, [4.0])
    assert sigma_formula(f, led, {2}, "probabilistic", uniforms=[0.9]) == sigma_atomic(f.atoms[0], 4.0, {2})


def test_probabilistic_frequencies():
    clause = (AtomicConstraint((1.0,), 0.0), AtomicConstraint((-1.0,), 0.0))
    rng = np.random.default_rng(0)
    picks = [sigma_clause(clause, [1.0, 3.0], {1}, "probabilistic", rng=rng) for _ in range(20000)]
    rate = np.mean(np.array(picks) == 1.0)
    assert abs(rate - 0.75) < 0.015


def test_punitive_term_matches_scalar():
    f = load_formula("(rho[1] <= 2 OR rho[2] >= 3) AND rho[1] - rho[3] <= 0", 3)
    led = ledger_for(f, [1.0, 3.0, 2.0])
    labels = np.array([[0, 1, 2, 3, 1]])
    rng = np.random.default_rng(3)
    u = rng.random(labels.shape + (2,))
    for mode in ("probabilistic", "min"):
        vec = PunitiveTerm(f, led, mode)(labels, u)
        for t, lab in enumerate(labels[0]):
            active = set() if lab == 0 else {int(lab)}
            assert vec[0, t] == pytest.approx(sigma_formula(f, led, active, mode, uniforms=u[0, t]), abs=1e-15)


def test_ledger_csv_roundtrip(tmp_path):
    f = load_formula("(rho[1] <= 2 OR rho[2] >= 3) AND rho[1] <= 4", 2)
    led = ledger_for(f, [0.1, 1.0 / 3.0, 7.0])
    write_ledger_csv(led, tmp_path / "kappa.csv")
    assert (tmp_path / "kappa.csv").read_text().splitlines()[0] == "clause_idx,disjunct_idx,kappa"
    back = read_ledger_csv(tmp_path / "kappa.csv", 0.1)
    assert back.keys == led.keys and np.array_equal(back.kappa, led.kappa)


@settings(max_examples=200)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=40), st.floats(1e-4, 1.0))
def test_kappa_never_negative(vios, beta):
    f = load_formula("rho[1] <= 0", 1)
    led = PenaltyLedger.zeros(f, beta)
    for v in vios:
        led = update_ledger(led, f, [v])
        assert led.kappa[0] >= 0.0


@settings(max_examples=100)
@given(st.lists(st.integers(1, 3), min_size=1, max_size=4))
def test_satisfied_formula_has_zero_sigma(regions):
    f = load_formula("(rho[1] <= 5 OR rho[2] <= 5) AND rho[3] <= 5", 3)
    led = PenaltyLedger(np.array([0.0, 2.0, 0.0]), 0.1, tuple(f.keys))
    for mode in ("probabilistic", "min"):
        assert sigma_formula(f, led, set(regions), mode, uniforms=[0.5, 0.5]) == 0.0


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_cost_identity(seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, 5))
    T = int(rng.integers(1, 40))
    gamma = float(rng.uniform(0.5, 1.0))
    labels = rng.integers(0, m + 1, size=T + 1)
    tau = Trajectory(tuple(int(x) for x in labels), (0,) * T, (0.0,) * T)
    a = rng.normal(size=m)
    labeler = lambda s: () if s == 0 else (s,)
    cost = sum(gamma ** t * sum(a[i - 1] for i in labeler(labels[t])) for t in range(T))
    rho = trajectory_density(tau, gamma, labeler, m)
    assert abs(a @ rho - cost) <= 1e-10


@settings(max_examples=100)
@given(st.lists(st.integers(-5, 5), min_size=2, max_size=2).filter(any), st.integers(-10, 10),
       st.floats(0.1, 10.0), st.lists(st.integers(0, 20), min_size=2, max_size=2), st.integers(0, 2))
def test_scale_relation(a, b, lam, rho, region):
    phi = AtomicConstraint(tuple(float(x) for x in a), float(b))
    scaled = AtomicConstraint(tuple(lam * x for x in phi.coeffs), lam * b)
    assert violation_degree(scaled, rho) == pytest.approx(lam * violation_degree(phi, rho), rel=1e-12, abs=1e-9)
    active = set() if region == 0 else {region}
    assert weight(scaled, active) == pytest.approx(weight(phi, active), abs=1e-15)
