from __future__ import annotations

import numpy as np
import pytest

from mpsprep.circuit import CX_MATRIX, SWAP_MATRIX, Circuit
from mpsprep.gate_compiler import (
    StructureError,
    check_block_symmetry,
    compile_circuit,
    decompose_isometry_generic,
    decompose_structured_16x4,
    decompose_two_qubit,
    embed_isometry_as_unitary,
)
from mpsprep.rg_synthesis import blocked_tensor, make_plan, polar_decompose, synthesize_rg_circuit
from mpsprep.sequential_synthesis import synthesize_seq_circuit
from mpsprep.uniform_mps import build_target_tensor
from oracles import G_GRID, fidelity, simulate


def _family():
    """Every 16x4 isometry emitted for the grid and the two product endpoints."""
    out = []
    for g in G_GRID + (-1.0, 1.0):
        for layer in make_plan(g, 16, 8).levels:
            out.append(pytest.param(layer.isometry, id=f"g{g:+.1f}-L{layer.level}"))
    return out


def _random_isometry(rng, m, n):
    z = rng.normal(size=(m, n)) + 1j * rng.normal(size=(m, n))
    return np.linalg.qr(z)[0]


def _random_unitary(rng, d):
    return _random_isometry(rng, d, d)


def test_symmetry_certificate_examples():
    v = make_plan(0.5, 16, 4).levels[0].isometry
    cert = check_block_symmetry(v)
    assert cert.is_direct_sum and cert.is_point_symmetric
    gauge = _random_unitary(np.random.default_rng(5), 4)
    cert = check_block_symmetry(v @ gauge)
    assert not (cert.is_direct_sum and cert.is_point_symmetric)
    # Identity embedding with the inputs on the first and last wire, the
    # wire convention of the 16x4 gates: columns |0 0 0 0>, |0 0 0 1>, |1 0 0 0>, |1 0 0 1>.
    ident = np.eye(16)[:, [0, 1, 8, 9]]
    cert = check_block_symmetry(ident)
    assert cert.is_direct_sum and not cert.is_point_symmetric
    with pytest.raises(ValueError):
        check_block_symmetry(np.eye(8)[:, :2])


@pytest.mark.parametrize("v", _family())
def test_family_isometry_paths(v):
    generic = decompose_isometry_generic(v)
    assert np.abs(generic.reconstruct() - v).max() <= 1e-10
    cert = check_block_symmetry(v)
    if not cert.usable:
        # The g=1 product point is the only grid member without the structure.
        with pytest.raises(StructureError):
            decompose_structured_16x4(v)
        return
    structured = decompose_structured_16x4(v)
    assert np.abs(structured.reconstruct() - v).max() <= 1e-10
    sub = decompose_isometry_generic(cert.v1)
    assert np.abs(sub.reconstruct() - cert.v1).max() <= 1e-10
    assert structured.cnot_count == 4 + sub.cnot_count
    assert structured.cnot_count < generic.cnot_count


def test_structured_rejects_generic_isometry():
    v = _random_isometry(np.random.default_rng(9), 16, 4)
    with pytest.raises(StructureError):
        decompose_structured_16x4(v)


def test_gauge_dependence_of_structure():
    rng = np.random.default_rng(21)
    a = build_target_tensor(0.5).tensor
    gauge = _random_unitary(rng, 2)
    gauged = np.einsum("xa,pab,by->pxy", gauge, a, gauge.conj().T)
    t = gauged
    for _ in range(3):
        t = np.einsum("pab,qbc->pqac", t, gauged).reshape(-1, 2, 2)
    v, _ = polar_decompose(t.reshape(16, 4))
    assert not check_block_symmetry(v).usable
    assert np.abs(decompose_isometry_generic(v).reconstruct() - v).max() <= 1e-10
    # Same blocking in the canonical gauge keeps the structure.
    assert check_block_symmetry(polar_decompose(blocked_tensor(build_target_tensor(0.5), 4).matrix)[0]).usable


def test_generic_small_cases():
    rng = np.random.default_rng(1)
    for _ in range(10):
        v = _random_isometry(rng, 4, 2)
        seq = decompose_isometry_generic(v)
        assert seq.cnot_count <= 3
        assert np.abs(seq.reconstruct() - v).max() <= 1e-10
    ident = decompose_isometry_generic(np.eye(16))
    assert ident.cnot_count == 0
    assert np.abs(ident.reconstruct() - np.eye(16)).max() <= 1e-10
    with pytest.raises(ValueError):
        decompose_isometry_generic(np.ones((6, 2)) / np.sqrt(6))


def test_generic_random_three_and_four_qubit():
    rng = np.random.default_rng(2)
    for m, n in ((8, 2), (8, 4), (16, 4), (16, 2)):
        v = _random_isometry(rng, m, n)
        assert np.abs(decompose_isometry_generic(v).reconstruct() - v).max() <= 1e-10


def test_embedding():
    np.testing.assert_array_equal(embed_isometry_as_unitary(np.eye(2)[:, :1]), np.eye(2))
    for v in [p.values[0] for p in _family()]:
        u = embed_isometry_as_unitary(v)
        assert np.abs(u.conj().T @ u - np.eye(16)).max() <= 1e-12
        np.testing.assert_array_equal(u[:, :4], v)
        assert np.array_equal(u, embed_isometry_as_unitary(v.copy()))


def _equal_up_to_phase(a, b, tol):
    k = np.argmax(np.abs(b))
    phase = a.flat[k] / b.flat[k]
    return abs(abs(phase) - 1) < tol and np.abs(a - phase * b).max() < tol


def test_two_qubit_examples():
    assert decompose_two_qubit(np.eye(4)).cnot_count == 0
    assert decompose_two_qubit(CX_MATRIX).cnot_count == 1
    seq = decompose_two_qubit(SWAP_MATRIX)
    assert seq.cnot_count == 3
    assert _equal_up_to_phase(seq.unitary(), SWAP_MATRIX, 1e-9)
    with pytest.raises(ValueError):
        decompose_two_qubit(2 * np.eye(4))


def test_two_qubit_random():
    rng = np.random.default_rng(4)
    for _ in range(20):
        u = _random_unitary(rng, 4)
        seq = decompose_two_qubit(u)
        assert seq.cnot_count <= 3
        assert _equal_up_to_phase(seq.unitary(), u, 1e-9)


@pytest.mark.parametrize(
    "circuit",
    [
        pytest.param(synthesize_rg_circuit(0.5, 8, 4), id="rg-q4"),
        pytest.param(synthesize_rg_circuit(-0.9, 16, 8), id="rg-q8"),
        pytest.param(synthesize_seq_circuit(0.3, 8), id="seq"),
        pytest.param(synthesize_seq_circuit(-0.7, 8), id="seq-neg"),
    ],
)
def test_compiled_circuit_is_equivalent(circuit):
    compiled = compile_circuit(circuit)
    assert {g.kind for g in compiled.gates} <= {"cx", "u", "postselect"}
    a, pa = simulate(circuit)
    b, pb = simulate(compiled)
    assert fidelity(a, b) >= 1 - 1e-9
    assert pa == pytest.approx(pb, abs=1e-10)


def test_circuit_json_round_trip():
    c = compile_circuit(synthesize_seq_circuit(0.5, 6))
    text = c.dumps()
    back = Circuit.loads(text)
    assert back.dumps() == text
    a, _ = simulate(c)
    b, _ = simulate(back)
    assert fidelity(a, b) >= 1 - 1e-12
