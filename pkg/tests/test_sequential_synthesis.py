from __future__ import annotations

import numpy as np
import pytest

from mpsprep.sequential_synthesis import make_sequential_plan, postselect_probability, synthesize_seq_circuit
from oracles import G_GRID, dense_ring_state, fidelity, simulate, target_matrices


def _left_fixed_point(g: float) -> np.ndarray:
    """Trace-one fixed point of ``X -> sum_i A^i^dag X A^i`` by a direct eigen-solve."""
    a = target_matrices(g)
    sup = sum(np.kron(m.conj().T, m.T) for m in a)  # row-major vec(A^dag X A)
    vals, vecs = np.linalg.eig(sup)
    v = vecs[:, np.argmax(np.abs(vals))].reshape(2, 2)
    v = v / np.trace(v)
    return 0.5 * (v + v.conj().T)


def test_plan_isometry_conditions():
    for g in G_GRID + (0.0, 1.0, -1.0):
        plan = make_sequential_plan(g, 8)
        a, b = plan.right_tensor, plan.left_tensor
        assert np.abs(sum(a[i] @ a[i].conj().T for i in range(2)) - np.eye(2)).max() <= 1e-12
        assert np.abs(sum(b[i].conj().T @ b[i] for i in range(2)) - np.eye(2)).max() <= 1e-12
        assert np.linalg.norm(plan.middle_state) == pytest.approx(1.0)


@pytest.mark.parametrize("n", [4, 6, 8, 12, 14])
@pytest.mark.parametrize("g", G_GRID + (1.0, -1.0))
def test_postselected_output_is_exact(g, n):
    psi, prob = simulate(synthesize_seq_circuit(g, n))
    assert fidelity(psi, dense_ring_state(g, n)) >= 1 - 1e-9
    assert prob == pytest.approx(postselect_probability(g, n), abs=1e-10)


def test_ghz_at_critical_point():
    psi, _ = simulate(synthesize_seq_circuit(0.0, 8))
    ghz = np.zeros(2**8)
    ghz[[0, -1]] = 1 / np.sqrt(2)
    assert fidelity(psi, ghz) >= 1 - 1e-10


def test_odd_or_tiny_ring_rejected():
    with pytest.raises(ValueError):
        synthesize_seq_circuit(0.5, 7)
    with pytest.raises(ValueError):
        synthesize_seq_circuit(0.5, 2)


def test_probability_examples():
    assert postselect_probability(1.0, 8) == pytest.approx(0.25, abs=1e-12)
    assert postselect_probability(0.0, 8) == pytest.approx(0.5, abs=1e-12)
    for g in G_GRID:
        assert postselect_probability(g, 12) > 0


@pytest.mark.parametrize("g", G_GRID)
def test_probability_closed_form(g):
    # Fusing a left-canonical and a right-canonical half succeeds with
    # probability Tr(E^n) / (Tr L Tr L^-1), which never exceeds 1/D^2.
    n = 12
    lfp = _left_fixed_point(g)
    a = target_matrices(g)
    e = sum(np.kron(m, m.conj()) for m in a)
    tr_en = np.trace(np.linalg.matrix_power(e, n)).real
    expected = tr_en / (np.trace(lfp).real * np.trace(np.linalg.inv(lfp)).real)
    assert postselect_probability(g, n) == pytest.approx(expected, rel=1e-10)
    assert postselect_probability(g, n) <= 0.25 * tr_en + 1e-12


def test_gate_counts_and_adjacency():
    n = 10
    c = synthesize_seq_circuit(0.5, n)
    assert c.n == n + 2
    assert c.count("prep") == 1 and c.count("measure_bell") == 1
    assert c.count("isometry") == n
    left = [g for g in c.gates if g.kind == "isometry" and c.meta["units"][g.unit]["side"] == "left"]
    assert len(left) == n // 2
    for g in c.gates:
        if len(g.qubits) == 2:
            a, b = sorted(g.qubits)
            assert b - a == 1 or (a, b) == (0, n + 1)
        if g.kind == "isometry":
            assert g.matrix.shape == (4, 2)


def test_deposit_variant_is_exact():
    n = 12
    psi, _ = simulate(synthesize_seq_circuit(0.5, n, deposits={1, 4, 7, 11}))
    assert fidelity(psi, dense_ring_state(0.5, n)) >= 1 - 1e-9
    with pytest.raises(ValueError):
        synthesize_seq_circuit(0.5, n, deposits={12})
