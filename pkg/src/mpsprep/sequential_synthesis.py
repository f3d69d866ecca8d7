"""Sequential preparation of the periodic target with two outward staircases.

The ring is cut in the middle and at the ends. The right half uses the
right-canonical tensor ``A``. The left half uses the left-canonical tensor
``A_L = L^(1/2) A L^(-1/2)``, where ``L`` is the fixed point of
``X -> sum_i A^i^dag X A^i``. The two bond qubits start in the state with
coefficient matrix ``L^(1/2)``, and the two end bond qubits are projected onto
the state with coefficients ``L^(-1/2)``. That projection is realised by a
two-qubit rotation onto ``|phi+>`` followed by a Bell measurement postselected
on ``phi+``. When ``L`` is proportional to the identity (``g <= 0``) both
special states are Bell pairs and the rotation is omitted.

Logical qubits: 0 is the left end bond, ``k + 1`` holds site ``k`` and
``n + 1`` is the right end bond.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .circuit import PHI_PLUS, Circuit, Gate
from .gate_compiler import embed_isometry_as_unitary
from .rg_synthesis import psd_sqrt
from .uniform_mps import DomainError, FiniteMps, build_target_tensor, transfer_spectrum


@dataclass(frozen=True)
class SequentialPlan:
    """Tensors and boundary states of the two-staircase construction.

    Attributes:
        left_tensor: ``(2, 2, 2)`` tensor ``B[i, x, y]`` with ``sum_i B^i^dag B^i = I``.
        right_tensor: ``(2, 2, 2)`` tensor ``A`` with ``sum_i A^i A^i^dag = I``.
        middle_state: Normalised coefficients of the two middle bond qubits.
        end_state: Normalised state of the two end bond qubits that is postselected.
    """

    g: float
    n: int
    left_tensor: NDArray[np.complex128]
    right_tensor: NDArray[np.complex128]
    middle_state: NDArray[np.complex128]
    end_state: NDArray[np.complex128]
    postselect_outcome: str = "phi+"

    def exact_state(self) -> FiniteMps:
        """Unnormalised ring MPS left after a successful postselection.

        Its squared norm is the postselection probability.
        """
        m = self.n // 2
        b, a = self.left_tensor, self.right_tensor
        tensors = [b] * m + [a] * m
        mid = self.middle_state.reshape(2, 2)
        tensors[m] = np.einsum("yz,pzw->pyw", mid, a)
        proj = self.end_state.conj().reshape(2, 2)  # [x, w]
        tensors[0] = np.einsum("xw,pxy->pwy", proj, b)
        return FiniteMps(tensors, "periodic")


def _gauge(g: float) -> tuple[NDArray, NDArray, NDArray]:
    """Return ``(B, middle matrix, end matrix)`` before normalisation."""
    mps = build_target_tensor(g)
    a = mps.tensor
    left_gram = sum(a[i].conj().T @ a[i] for i in range(2))
    if np.abs(left_gram - np.eye(2)).max() < 1e-12:
        return a, np.eye(2, dtype=complex), np.eye(2, dtype=complex)
    rho = transfer_spectrum(mps).rho
    w, u = np.linalg.eigh(rho)
    if w.min() > 1e-10:
        root = psd_sqrt(rho)
        inv_root = (u / np.sqrt(w)) @ u.conj().T
        b = np.einsum("xa,pab,by->pxy", root, a, inv_root)
        return b, root, inv_root
    # Singular fixed point: the state is a product and the bond carries nothing.
    b = np.stack([np.eye(2, dtype=complex)] * 2) / np.sqrt(2)
    return b, np.eye(2, dtype=complex), np.eye(2, dtype=complex)


def make_sequential_plan(g: float, n: int) -> SequentialPlan:
    if n % 2 or n < 4:
        raise ValueError(f"sequential preparation needs an even n >= 4, got {n}")
    if not -1.0 <= g <= 1.0:
        raise DomainError(f"g must lie in [-1, 1], got {g}")
    b, mid, end = _gauge(g)
    middle = mid.reshape(4) / np.linalg.norm(mid)
    # <chi| x w> = end[w, x], so chi[x, w] = conj(end[w, x]).
    chi = end.T.conj().reshape(4)
    chi = chi / np.linalg.norm(chi)
    return SequentialPlan(float(g), n, b, build_target_tensor(g).tensor, middle, chi)


def _rotation_to_phi_plus(chi: NDArray) -> NDArray[np.complex128] | None:
    if abs(abs(np.vdot(PHI_PLUS, chi)) - 1) < 1e-13:
        return None
    return embed_isometry_as_unitary(PHI_PLUS.reshape(4, 1)) @ embed_isometry_as_unitary(
        chi.reshape(4, 1)
    ).conj().T


def _site_isometry(tensor: NDArray, side: str, deposit: bool) -> NDArray[np.complex128]:
    """4x2 isometry from the incoming bond to (bond wire, fresh wire) outputs."""
    # Left: out bond x, in bond y, B[i, x, y]. Right: in bond z, out bond w, A[i, z, w].
    t = tensor if side == "left" else np.transpose(tensor, (0, 2, 1))  # t[i, out, in]
    if deposit:
        t = np.transpose(t, (1, 0, 2))  # rows (out bond, phys)
    return t.reshape(4, 2)


def synthesize_seq_circuit(g: float, n: int, deposits: frozenset[int] | set[int] = frozenset()) -> Circuit:
    """Emit the two-staircase circuit on ``n + 2`` qubits.

    Args:
        g: Path parameter in ``[-1, 1]``.
        n: Even number of sites, at least 4.
        deposits: Sites whose gate writes the physical output to the fresh
            wire and keeps the bond in place. Used to fit the staircase onto
            rings with pendant qubits; the default is a plain staircase.
    """
    plan = make_sequential_plan(g, n)
    deposits = frozenset(deposits)
    if not deposits <= set(range(n)):
        raise ValueError("deposit sites must lie in 0..n-1")
    m = n // 2
    right_sites = list(range(m, n))
    left_sites = list(range(m - 1, -1, -1))
    chains = {
        "left": (left_sites, [k + 1 for k in left_sites if k not in deposits] + [0]),
        "right": (right_sites, [k + 1 for k in right_sites if k not in deposits] + [n + 1]),
    }
    units: list[dict] = [{"kind": "mid", "qubits": [chains["left"][1][0], chains["right"][1][0]]}]
    steps: dict[str, list[Gate]] = {"left": [], "right": []}
    for side, (sites, cycle) in chains.items():
        tensor = plan.left_tensor if side == "left" else plan.right_tensor
        bond, pos = cycle[0], 0
        for k in sites:
            unit = len(units)
            if k in deposits:
                wires = (bond, k + 1)
                new_bond = bond
            else:
                if bond != k + 1:
                    raise AssertionError("staircase bookkeeping out of sync")
                pos += 1
                wires = (bond, cycle[pos])
                new_bond = cycle[pos]
            units.append(
                {"kind": "site", "side": side, "site": k, "qubits": list(wires), "bond_out": new_bond}
            )
            v = _site_isometry(tensor, side, k in deposits)
            steps[side].append(Gate("isometry", wires, v, inputs=(bond,), unit=unit))
            bond = new_bond
    circuit = Circuit(
        n + 2,
        outputs=[k + 1 for k in range(n)],
        meta={"protocol": "sequential", "g": float(g), "n_sites": n, "deposits": sorted(deposits)},
    )
    circuit.append(Gate("prep", tuple(units[0]["qubits"]), plan.middle_state.copy(), unit=0))
    for left, right in zip(steps["left"], steps["right"]):
        circuit.append(left)
        circuit.append(right)
    end_unit = len(units)
    units.append({"kind": "end", "qubits": [0, n + 1]})
    rot = _rotation_to_phi_plus(plan.end_state)
    if rot is not None:
        circuit.append(Gate("unitary", (0, n + 1), rot, unit=end_unit))
    circuit.append(Gate("measure_bell", (0, n + 1), expected_outcome="phi+", unit=end_unit))
    circuit.meta["units"] = units
    return circuit


def postselect_probability(g: float, n: int) -> float:
    """Exact probability of the ``phi+`` outcome, from the ring contraction."""
    state = make_sequential_plan(g, n).exact_state()
    return float(state.norm() ** 2)
