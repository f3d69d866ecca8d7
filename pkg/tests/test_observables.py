from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mpsprep.observables import (
    ObservableSum,
    PauliString,
    couplings,
    dense_operator,
    energy_density,
    evaluate,
    hamiltonian,
    string_local,
    string_nonlocal,
)
from mpsprep.uniform_mps import DomainError, build_target_tensor, infinite_expectation, product_state, target_state
from oracles import G_GRID, dense_expectation, dense_hamiltonian, dense_ring_state, transfer_eigenvalues, window_letters


def test_couplings_examples():
    assert couplings(1.0) == (0.0, 4.0, 0.0)
    assert couplings(-1.0) == (0.0, 0.0, 4.0)
    assert couplings(0.0) == (2.0, 1.0, 1.0)
    with pytest.raises(DomainError):
        couplings(1.5)


def test_hamiltonian_structure():
    h = hamiltonian(0.3, 7)
    assert len(h) == 21
    letters = {t.letters for t in h.terms}
    assert "ZIIIIIZ" in letters and "XZIIIIZ" in letters
    np.testing.assert_allclose(dense_operator(h), dense_hamiltonian(0.3, 7), atol=1e-12)
    with pytest.raises(ValueError):
        hamiltonian(0.3, 2)


def test_pauli_string_validation():
    with pytest.raises(ValueError):
        PauliString("XQ")
    with pytest.raises(ValueError):
        PauliString("XX", float("nan"))
    assert PauliString("IXY", -0.5).support() == {1: "X", 2: "Y"}


def test_string_constructors():
    assert string_nonlocal(6, "trivial").letters == "IXXXXI"
    assert string_nonlocal(6, "spt").letters == "ZYXXYZ"
    local = string_local(9, "spt")
    assert len(local) == 9 and local.terms[0].letters == "ZYXYZIIII"
    assert local.terms[7].letters == window_letters(9, 7, "ZYXYZ")
    assert string_local(7, "trivial").terms[0].letters == "IXXXXXI"
    for bad in ((4, "trivial"), (6, "other")):
        with pytest.raises(ValueError):
            string_nonlocal(*bad)
    with pytest.raises(ValueError):
        string_local(6, "spt")


@pytest.mark.parametrize(("g", "eta"), [(1.0, -4.0), (0.0, -2.0), (-1.0, -4.0)])
def test_energy_density_endpoints(g, eta):
    assert energy_density(target_state(g, 8), g) == pytest.approx(eta, abs=1e-9)
    psi = dense_ring_state(g, 8)
    dense = np.vdot(psi, dense_hamiltonian(g, 8) @ psi).real / 8
    assert dense == pytest.approx(eta, abs=1e-9)


@pytest.mark.parametrize("g", [-0.5, 0.5])
def test_energy_matches_exact_diagonalization(g):
    n = 10
    ground = np.linalg.eigvalsh(dense_hamiltonian(g, n))[0] / n
    assert abs(energy_density(target_state(g, n), g) - ground) <= 1e-9


def test_endpoint_strings():
    assert evaluate(target_state(1.0, 12), string_nonlocal(12, "trivial")) == pytest.approx(1.0, abs=1e-12)
    assert evaluate(target_state(1.0, 12), string_local(12, "trivial")) == pytest.approx(1.0, abs=1e-12)
    # Sign fixed by brute-force contraction of the cluster ring.
    cluster = dense_ring_state(-1.0, 8)
    oracle = np.mean([dense_expectation(cluster, window_letters(8, q, "ZYXYZ")) for q in range(8)])
    assert oracle == pytest.approx(1.0, abs=1e-12)
    assert evaluate(target_state(-1.0, 8), string_local(8, "spt")) == pytest.approx(oracle, abs=1e-9)


@pytest.mark.parametrize("g", G_GRID)
def test_wrong_phase_string_vanishes(g):
    wrong = "ZYXYZ" if g > 0 else "IXXXXXI"
    mps = build_target_tensor(g)
    assert abs(infinite_expectation(mps, wrong)) <= 1e-10
    # On a finite ring the value is only exponentially small, decaying as lambda^n.
    lam = abs(transfer_eigenvalues(g)[1])
    kind = "spt" if g > 0 else "trivial"
    small, large = (evaluate(target_state(g, n), string_local(n, kind)) for n in (24, 48))
    if abs(large) > 1e-12:
        assert abs(large / small) == pytest.approx(lam**24, rel=0.5)
    assert abs(evaluate(target_state(g, 80), string_local(80, kind))) <= 1e-7


@pytest.mark.parametrize("g", G_GRID)
@pytest.mark.parametrize("n", [8, 12])
def test_local_equals_nonlocal(g, n):
    psi = dense_ring_state(g, n)
    state = target_state(g, n)
    for kind, pattern in (("trivial", "IXXXXXI"), ("spt", "ZYXYZ")):
        local = evaluate(state, string_local(n, kind))
        nonlocal_ = evaluate(state, string_nonlocal(n, kind))
        assert abs(local - nonlocal_) <= 1e-9
        oracle = np.mean([dense_expectation(psi, window_letters(n, q, pattern)) for q in range(n)])
        assert abs(local - oracle) <= 1e-9


def test_dense_and_mps_backends_agree():
    n = 9
    state = target_state(0.3, n)
    vec = state.to_dense()
    for obs in (hamiltonian(0.3, n), string_local(n, "trivial"), PauliString("ZYXIIIIYZ", 2.0)):
        assert evaluate(state, obs) == pytest.approx(evaluate(vec, obs), abs=1e-12)
    with pytest.raises(ValueError):
        evaluate(state, PauliString("XX"))


@pytest.mark.parametrize("g", G_GRID)
def test_variational_bound(g):
    n = 10
    rng = np.random.default_rng(int(1000 * (g + 1)))
    eta = energy_density(target_state(g, n), g)
    for _ in range(100):
        z = rng.normal(size=(n, 2)) + 1j * rng.normal(size=(n, 2))
        s = product_state([v / np.linalg.norm(v) for v in z])
        assert eta <= energy_density(s, g) + 1e-9


def test_phase_indicator_pattern():
    for g in G_GRID:
        finite = target_state(g, 80)
        mps = build_target_tensor(g)
        right = "trivial" if g > 0 else "spt"
        wrong = "IXXXXXI" if g < 0 else "ZYXYZ"
        assert evaluate(finite, string_local(80, right)) > 0.05
        assert abs(infinite_expectation(mps, wrong)) <= 1e-9


@settings(max_examples=25, deadline=None)
@given(
    st.floats(-0.95, 0.95).filter(lambda x: abs(x) > 0.05),
    st.lists(st.sampled_from("IXYZ"), min_size=6, max_size=6),
)
def test_random_strings_against_dense(g, letters):
    term = PauliString("".join(letters))
    expected = dense_expectation(dense_ring_state(g, 6), term.letters)
    assert evaluate(target_state(g, 6), term) == pytest.approx(expected, abs=1e-10)
    assert evaluate(target_state(g, 6), ObservableSum((term, term))) == pytest.approx(2 * expected, abs=1e-10)
