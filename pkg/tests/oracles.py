"""Reference computations written independently of the package internals.

Everything here is brute force: explicit traces over all bitstrings, dense
Kronecker products and a direct statevector evaluation that applies
isometries to ``|0>``-padded inputs without completing them to unitaries.
"""

from __future__ import annotations

import itertools

import numpy as np

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULI = {"I": I2, "X": X, "Y": Y, "Z": Z}
PHI_PLUS = np.array([1, 0, 0, 1], dtype=complex) / np.sqrt(2)

G_GRID = (-0.9, -0.7, -0.5, -0.3, -0.1, 0.1, 0.3, 0.5, 0.7, 0.9)


def target_matrices(g: float) -> tuple[np.ndarray, np.ndarray]:
    root = np.sqrt(complex(g))
    a0 = np.array([[0, 0], [root, 1]], dtype=complex) / np.sqrt(1 + abs(g))
    return a0, X @ a0 @ X


def dense_ring_state(g: float, n: int) -> np.ndarray:
    """Normalised ``sum_s Tr(A^s1 ... A^sn) |s>`` by explicit enumeration."""
    mats = target_matrices(g)
    psi = np.empty(2**n, dtype=complex)
    for idx, bits in enumerate(itertools.product((0, 1), repeat=n)):
        m = np.eye(2, dtype=complex)
        for b in bits:
            m = m @ mats[b]
        psi[idx] = np.trace(m)
    return psi / np.linalg.norm(psi)


def kron_all(mats) -> np.ndarray:
    out = np.array([[1.0 + 0j]])
    for m in mats:
        out = np.kron(out, m)
    return out


def pauli_operator(letters: str) -> np.ndarray:
    return kron_all(PAULI[c] for c in letters)


def dense_expectation(psi: np.ndarray, letters: str) -> float:
    n = len(letters)
    out = psi.reshape((2,) * n)
    for site, c in enumerate(letters):
        out = np.moveaxis(np.tensordot(PAULI[c], out, axes=([1], [site])), 0, site)
    val = np.vdot(psi, out.ravel()) / np.vdot(psi, psi)
    assert abs(val.imag) < 1e-10
    return float(val.real)


def window_letters(n: int, start: int, pattern: str) -> str:
    letters = ["I"] * n
    for k, c in enumerate(pattern):
        letters[(start + k) % n] = c
    return "".join(letters)


def dense_hamiltonian(g: float, n: int) -> np.ndarray:
    gzz, gx, gzxz = 2 * (1 - g * g), (1 + g) ** 2, (1 - g) ** 2
    h = np.zeros((2**n, 2**n), dtype=complex)
    for i in range(n):
        h -= gzz * pauli_operator(window_letters(n, i, "ZZ"))
        h -= gx * pauli_operator(window_letters(n, i, "X"))
        h += gzxz * pauli_operator(window_letters(n, i, "ZXZ"))
    return h


def transfer_eigenvalues(g: float) -> np.ndarray:
    a0, a1 = target_matrices(g)
    e = np.kron(a0, a0.conj()) + np.kron(a1, a1.conj())
    vals = np.linalg.eigvals(e)
    return vals[np.argsort(-np.abs(vals))]


def _padded_operator(v: np.ndarray, qubits, inputs) -> np.ndarray:
    """Matrix sending ``|inputs>|0...0>`` to ``v |inputs>`` and every other basis state to 0."""
    k = len(qubits)
    pos = {q: i for i, q in enumerate(qubits)}
    m = np.zeros((2**k, 2**k), dtype=complex)
    for col in range(2**k):
        bits = [(col >> (k - 1 - i)) & 1 for i in range(k)]
        if any(bits[pos[q]] for q in qubits if q not in inputs):
            continue
        c = 0
        for q in inputs:
            c = 2 * c + bits[pos[q]]
        m[:, col] = v[:, c]
    return m


def simulate(circuit, max_qubits: int = 18) -> tuple[np.ndarray, float]:
    """Statevector on ``circuit.outputs`` and the postselection probability.

    Fresh wires of every isometry must be in ``|0>``: the padded operator
    drops any other component, and the norm check below catches that.
    """
    n = circuit.n
    assert n <= max_qubits
    alive = list(range(n))
    psi = np.zeros((2,) * n, dtype=complex)
    psi[(0,) * n] = 1.0
    prob = 1.0

    def apply(psi, op, qs):
        axes = [alive.index(q) for q in qs]
        k = len(qs)
        t = op.reshape((2,) * (2 * k))
        out = np.tensordot(t, psi, axes=(list(range(k, 2 * k)), axes))
        return np.moveaxis(out, list(range(k)), axes)

    def project(psi, vec, qs):
        axes = [alive.index(q) for q in qs]
        out = np.tensordot(vec.conj().reshape((2,) * len(qs)), psi, axes=(list(range(len(qs))), axes))
        for q in qs:
            alive.remove(q)
        return out

    for g in circuit.gates:
        before = np.linalg.norm(psi)
        if g.kind == "isometry":
            psi = apply(psi, _padded_operator(g.matrix, g.qubits, g.inputs), g.qubits)
        elif g.kind == "prep":
            psi = apply(psi, _padded_operator(g.matrix.reshape(4, 1), g.qubits, ()), g.qubits)
        elif g.kind in ("unitary", "u", "cx", "swap", "pauli"):
            psi = apply(psi, g.unitary(), g.qubits)
        elif g.kind == "measure_bell":
            psi = project(psi, PHI_PLUS, g.qubits)
        elif g.kind == "postselect":
            vec = np.zeros(2 ** len(g.qubits), dtype=complex)
            vec[int(g.expected_outcome, 2)] = 1.0
            psi = project(psi, vec, g.qubits)
        else:
            raise ValueError(g.kind)
        after = np.linalg.norm(psi)
        if g.kind in ("isometry", "prep"):
            assert abs(after - before) < 1e-9, "fresh wire was not in |0>"
        elif g.kind in ("measure_bell", "postselect"):
            prob *= (after / before) ** 2
            psi = psi / after
    outputs = list(circuit.outputs)
    for q in [q for q in alive if q not in outputs]:
        before = np.linalg.norm(psi)
        psi = project(psi, np.array([1, 0], dtype=complex), [q])
        assert abs(np.linalg.norm(psi) - before) < 1e-9, "ancilla not returned to |0>"
    psi = np.transpose(psi, [alive.index(q) for q in outputs])
    return psi.reshape(-1), prob


def fidelity(a: np.ndarray, b: np.ndarray) -> float:
    return float(abs(np.vdot(a, b)) / (np.linalg.norm(a) * np.linalg.norm(b)))


def spearman(x, y) -> float:
    rx = np.argsort(np.argsort(x))
    ry = np.argsort(np.argsort(y))
    return float(np.corrcoef(rx, ry)[0, 1])
