"""Circuit container shared by the synthesis, routing and simulation layers.

Qubit 0 is the most significant bit of every matrix index. Multi-qubit
matrices are indexed big-endian over the gate's ``qubits`` list, and an
isometry's column index is big-endian over its ``inputs``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
from numpy.typing import NDArray

SCHEMA_VERSION = 1

GATE_KINDS = frozenset(
    {"prep", "isometry", "unitary", "u", "cx", "swap", "measure_bell", "postselect", "pauli"}
)
TWO_QUBIT_NATIVE = frozenset({"cx", "swap"})


@dataclass(frozen=True)
class Gate:
    """One circuit instruction.

    Attributes:
        kind: One of ``GATE_KINDS``.
        qubits: Qubits the gate acts on, in matrix order.
        matrix: Dense matrix for ``prep`` (column state), ``isometry``,
            ``unitary`` and ``u`` gates.
        inputs: For isometries, the qubits carrying the input state. All other
            qubits of the gate are expected to be in ``|0>``.
        expected_outcome: Postselection label (``"phi+"`` or a bitstring).
        label: Pauli letters for ``pauli`` gates; free-form tag otherwise.
        unit: Index of the protocol unit the gate belongs to (``-1`` if none).
    """

    kind: str
    qubits: tuple[int, ...]
    matrix: NDArray[np.complex128] | None = None
    inputs: tuple[int, ...] | None = None
    expected_outcome: str | None = None
    label: str | None = None
    unit: int = -1

    def __post_init__(self) -> None:
        if self.kind not in GATE_KINDS:
            raise ValueError(f"unknown gate kind {self.kind!r}")
        if len(set(self.qubits)) != len(self.qubits):
            raise ValueError(f"repeated qubit in {self.kind} gate: {self.qubits}")
        if self.kind in ("cx", "swap", "measure_bell", "prep") and len(self.qubits) != 2:
            raise ValueError(f"{self.kind} gate needs two qubits")
        if self.kind == "u" and len(self.qubits) != 1:
            raise ValueError("u gate needs one qubit")
        if self.kind in ("prep", "isometry", "unitary", "u") and self.matrix is None:
            raise ValueError(f"{self.kind} gate needs a matrix")
        if self.kind == "isometry":
            if self.inputs is None or not set(self.inputs) <= set(self.qubits):
                raise ValueError("isometry inputs must be a subset of its qubits")
            if self.matrix.shape != (2 ** len(self.qubits), 2 ** len(self.inputs)):
                raise ValueError("isometry shape does not match qubits/inputs")

    @property
    def is_two_qubit(self) -> bool:
        return len(self.qubits) == 2 and self.kind not in ("measure_bell", "postselect", "pauli")

    def unitary(self) -> NDArray[np.complex128]:
        """Full unitary on ``qubits`` (isometries and preps are completed deterministically)."""
        from .gate_compiler import embed_isometry_as_unitary

        if self.kind in ("unitary", "u"):
            return self.matrix
        if self.kind == "cx":
            return CX_MATRIX
        if self.kind == "swap":
            return SWAP_MATRIX
        if self.kind == "pauli":
            return pauli_matrix(self.label or "")
        if self.kind == "prep":
            return embed_isometry_as_unitary(self.matrix.reshape(4, 1))
        if self.kind == "isometry":
            return isometry_unitary(self.matrix, self.qubits, self.inputs)
        raise ValueError(f"{self.kind} gate has no unitary")

    def with_unit(self, unit: int) -> Gate:
        return replace(self, unit=unit)

    def remapped(self, mapping: Mapping[int, int]) -> Gate:
        inputs = None if self.inputs is None else tuple(mapping[q] for q in self.inputs)
        return replace(self, qubits=tuple(mapping[q] for q in self.qubits), inputs=inputs)


CX_MATRIX = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)
SWAP_MATRIX = np.array([[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=complex)
H_MATRIX = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
PHI_PLUS = np.array([1, 0, 0, 1], dtype=complex) / np.sqrt(2)


def pauli_matrix(letters: str) -> NDArray[np.complex128]:
    from .uniform_mps import PAULI_MATRICES

    out = np.array([[1.0 + 0j]])
    for c in letters:
        out = np.kron(out, PAULI_MATRICES[c])
    return out


def isometry_unitary(
    matrix: NDArray, qubits: Sequence[int], inputs: Sequence[int]
) -> NDArray[np.complex128]:
    """Complete an isometry with inputs on arbitrary wires to a unitary on ``qubits``."""
    from .gate_compiler import embed_isometry_as_unitary

    k = len(qubits)
    order = [q for q in qubits if q not in inputs] + list(inputs)
    perm = [list(qubits).index(q) for q in order]
    # Rows of the isometry re-expressed with the inputs as least significant wires.
    rows = np.asarray(matrix).reshape((2,) * k + (-1,))
    std = np.transpose(rows, perm + [k]).reshape(2**k, -1)
    u_std = embed_isometry_as_unitary(std)
    inv = np.argsort(perm)
    u = u_std.reshape((2,) * (2 * k))
    u = np.transpose(u, list(inv) + [k + i for i in inv])
    return u.reshape(2**k, 2**k)


@dataclass
class Circuit:
    """Ordered gate list over ``n`` qubits.

    Attributes:
        n: Number of qubits.
        gates: Gate sequence in time order.
        outputs: Qubits holding the prepared sites, in site order.
        meta: Protocol metadata (plain JSON values) used by the simulators.
    """

    n: int
    gates: list[Gate] = field(default_factory=list)
    outputs: list[int] = field(default_factory=list)
    meta: dict[str, Any] = field(default_factory=dict)

    def append(self, gate: Gate) -> None:
        if any(q < 0 or q >= self.n for q in gate.qubits):
            raise ValueError(f"gate {gate.kind} on {gate.qubits} outside 0..{self.n - 1}")
        self.gates.append(gate)

    def extend(self, gates: Iterable[Gate]) -> None:
        for gate in gates:
            self.append(gate)

    def count(self, kind: str) -> int:
        return sum(1 for g in self.gates if g.kind == kind)

    def cnot_count(self) -> int:
        return self.count("cx") + 3 * self.count("swap")

    def to_json(self) -> dict:
        return {
            "version": SCHEMA_VERSION,
            "n": self.n,
            "outputs": list(self.outputs),
            "meta": self.meta,
            "gates": [_gate_to_json(g) for g in self.gates],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, payload: Mapping) -> Circuit:
        if payload.get("version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported circuit schema version {payload.get('version')!r}")
        gates = [_gate_from_json(g) for g in payload["gates"]]
        return cls(int(payload["n"]), gates, list(payload.get("outputs", [])), dict(payload.get("meta", {})))

    @classmethod
    def loads(cls, text: str) -> Circuit:
        return cls.from_json(json.loads(text))


def _round(x: float) -> float:
    r = round(float(x), 15)
    return 0.0 if r == 0 else r


def matrix_to_json(m: NDArray) -> list:
    return [[[_round(z.real), _round(z.imag)] for z in row] for row in np.atleast_2d(m)]


def matrix_from_json(rows: Sequence) -> NDArray[np.complex128]:
    return np.array([[complex(re, im) for re, im in row] for row in rows], dtype=complex)


def _gate_to_json(g: Gate) -> dict:
    out: dict[str, Any] = {"kind": g.kind, "qubits": list(g.qubits)}
    if g.matrix is not None:
        m = g.matrix.reshape(-1, 1) if g.kind == "prep" else g.matrix
        out["matrix"] = matrix_to_json(m)
    if g.inputs is not None:
        out["inputs"] = list(g.inputs)
    if g.expected_outcome is not None:
        out["expected_outcome"] = g.expected_outcome
    if g.label is not None:
        out["label"] = g.label
    if g.unit >= 0:
        out["unit"] = g.unit
    return out


def _gate_from_json(d: Mapping) -> Gate:
    matrix = matrix_from_json(d["matrix"]) if "matrix" in d else None
    if matrix is not None and d["kind"] == "prep":
        matrix = matrix.ravel()
    inputs = tuple(d["inputs"]) if "inputs" in d else None
    return Gate(
        d["kind"],
        tuple(d["qubits"]),
        matrix,
        inputs,
        d.get("expected_outcome"),
        d.get("label"),
        int(d.get("unit", -1)),
    )
