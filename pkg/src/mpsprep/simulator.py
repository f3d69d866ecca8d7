"""Exact and noisy execution of preparation circuits.

Backends:
    * ``run_statevector``: dense simulation, up to 22 qubits.
    * ``run_mps``: open-chain MPS with a SWAP network for distant operands.
    * ``run_density_matrix``: exact noisy evolution for tiny circuits (oracle).
    * ``run_trajectories``: stochastic Pauli noise. Circuits that carry unit
      metadata (every circuit emitted by the synthesis modules) use a unit
      engine. Each unit (an RG block, a fixed-point pair, one staircase gate,
      the end projection) is simulated on its own few wires with the sampled
      errors inserted. The resulting tensors are joined into a bond-dimension-2
      ring, so every trajectory is evaluated exactly at any ``n``.

Postselection gates project, renormalise and remove the measured wires, so
the returned state lives on ``circuit.outputs`` in that order.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from numpy.typing import NDArray

from .circuit import PHI_PLUS, Circuit, Gate
from .gate_compiler import compile_circuit
from .observables import ObservableSum, PauliString, evaluate
from .uniform_mps import FiniteMps

MAX_DENSE_QUBITS = 22
PAULI_1Q = ("X", "Y", "Z")
PAULI_2Q = tuple(a + b for a, b in itertools.product("IXYZ", repeat=2) if a + b != "II")


class PostselectionError(ArithmeticError):
    """Raised when a postselected outcome has zero probability."""


@dataclass(frozen=True)
class NoiseModel:
    """Stochastic Pauli noise.

    Attributes:
        two_qubit_depolarizing_p: Probability of a uniformly random non-identity
            two-qubit Pauli after every CNOT.
        idle_depolarizing_p: Probability of a uniformly random single-qubit
            Pauli on every live qubit that sits idle during a CNOT layer. A
            qubit is live from its first CNOT until the end of the circuit.
        readout_flip_r: Bit-flip probability used only by shot sampling.
    """

    two_qubit_depolarizing_p: float = 0.0
    idle_depolarizing_p: float = 0.0
    readout_flip_r: float = 0.0

    def __post_init__(self) -> None:
        for name in ("two_qubit_depolarizing_p", "idle_depolarizing_p", "readout_flip_r"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {v}")

    @property
    def is_noiseless(self) -> bool:
        return self.two_qubit_depolarizing_p == 0 and self.idle_depolarizing_p == 0


@dataclass
class SimResult:
    """Observable estimates from an exact run or a batch of trajectories."""

    mode: str
    estimates: dict[str, tuple[float, float]]
    trajectories: int
    master_seed: int | None = None
    acceptance_rate: float = 1.0
    state: FiniteMps | NDArray | None = None
    extras: dict[str, float] = field(default_factory=dict)

    def mean(self, name: str) -> float:
        return self.estimates[name][0]

    def stderr(self, name: str) -> float:
        return self.estimates[name][1]

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "trajectories": self.trajectories,
            "master_seed": self.master_seed,
            "acceptance_rate": self.acceptance_rate,
            "estimates": {k: {"mean": m, "stderr": s} for k, (m, s) in sorted(self.estimates.items())},
            "extras": dict(sorted(self.extras.items())),
        }


# ---------------------------------------------------------------- dense backend


def _apply(state: NDArray, op: NDArray, axes: Sequence[int]) -> NDArray:
    k = len(axes)
    t = np.tensordot(op.reshape((2,) * (2 * k)), state, axes=(list(range(k, 2 * k)), list(axes)))
    return np.moveaxis(t, list(range(k)), list(axes))


def _gate_op(g: Gate) -> NDArray:
    if g.kind == "postselect":
        raise ValueError("postselect has no unitary")
    return g.unitary()


def _postselect_vector(g: Gate) -> NDArray:
    if g.kind == "measure_bell":
        if g.expected_outcome not in (None, "phi+"):
            raise ValueError(f"unsupported Bell outcome {g.expected_outcome!r}")
        return PHI_PLUS
    bits = g.expected_outcome or "0" * len(g.qubits)
    vec = np.zeros(2 ** len(bits), dtype=complex)
    vec[int(bits, 2)] = 1.0
    return vec


def _dense_run(circuit: Circuit, gates: Sequence[Gate]) -> tuple[NDArray, float]:
    n = circuit.n
    if n > MAX_DENSE_QUBITS:
        raise ValueError(f"dense simulation is capped at {MAX_DENSE_QUBITS} qubits, got {n}")
    state = np.zeros((2,) * n, dtype=complex)
    state[(0,) * n] = 1.0
    alive = list(range(n))
    prob = 1.0
    for g in gates:
        axes = [alive.index(q) for q in g.qubits]
        if g.kind in ("postselect", "measure_bell"):
            vec = _postselect_vector(g).conj().reshape((2,) * len(axes))
            state = np.tensordot(vec, state, axes=(list(range(len(axes))), axes))
            for q in g.qubits:
                alive.remove(q)
            nrm = float(np.linalg.norm(state))
            if nrm < 1e-14:
                raise PostselectionError(f"outcome {g.expected_outcome} on {g.qubits} has zero probability")
            prob *= nrm**2
            state = state / nrm
        else:
            state = _apply(state, _gate_op(g), axes)
    return _collect_outputs(state, alive, circuit.outputs), prob


def _collect_outputs(state: NDArray, alive: list[int], outputs: Sequence[int]) -> NDArray:
    outputs = list(outputs) if outputs else list(alive)
    extra = [q for q in alive if q not in outputs]
    order = [alive.index(q) for q in outputs] + [alive.index(q) for q in extra]
    state = np.transpose(state, order).reshape(2 ** len(outputs), 2 ** len(extra))
    if extra:
        if np.linalg.norm(state[:, 1:]) > 1e-9:
            raise ValueError("non-output qubits are not returned to |0>")
    return state[:, 0].copy()


def run_statevector(circuit: Circuit, return_probability: bool = False):
    """Exact final state on ``circuit.outputs`` (qubit 0 most significant)."""
    state, prob = _dense_run(circuit, circuit.gates)
    return (state, prob) if return_probability else state


# ---------------------------------------------------------------- MPS backend


class _ChainMps:
    """Open MPS with tensors ``(left, phys, right)`` and a movable qubit order.

    The chain is kept in mixed canonical form around ``center``, so every SVD
    sees true Schmidt values and the discarded weight is meaningful.
    """

    def __init__(self, n: int, chi_max: int, cutoff: float = 1e-14):
        self.tensors = [np.array([1.0, 0.0], dtype=complex).reshape(1, 2, 1) for _ in range(n)]
        self.order = list(range(n))
        self.chi_max = chi_max
        self.cutoff = cutoff
        self.truncation = 0.0
        self.center = 0

    def move_center(self, target: int) -> None:
        while self.center < target:
            t = self.tensors[self.center]
            dl, d, dr = t.shape
            q, r = np.linalg.qr(t.reshape(dl * d, dr))
            self.tensors[self.center] = q.reshape(dl, d, q.shape[1])
            self.tensors[self.center + 1] = np.tensordot(r, self.tensors[self.center + 1], axes=([1], [0]))
            self.center += 1
        while self.center > target:
            t = self.tensors[self.center]
            dl, d, dr = t.shape
            q, r = np.linalg.qr(t.reshape(dl, d * dr).conj().T)
            self.tensors[self.center] = q.conj().T.reshape(q.shape[1], d, dr)
            self.tensors[self.center - 1] = np.tensordot(self.tensors[self.center - 1], r.conj().T, axes=([2], [0]))
            self.center -= 1

    def _split(self, block: NDArray, k: int, pos: int) -> None:
        """Split a ``k``-site block left to right; the center ends on its last site."""
        left, right = block.shape[0], block.shape[-1]
        cur = block.reshape(left, 2**k, right)
        new = []
        for j in range(k - 1):
            dl = cur.shape[0]
            u, s, vh = np.linalg.svd(cur.reshape(dl * 2, -1), full_matrices=False)
            total = float(np.sum(s**2))
            keep = int(np.sum(s > self.cutoff * s[0])) if s[0] > 0 else 1
            keep = max(1, min(keep, self.chi_max))
            if total > 0:
                self.truncation += float(np.sum(s[keep:] ** 2)) / total
            new.append(u[:, :keep].reshape(dl, 2, keep))
            cur = (s[:keep, None] * vh[:keep]).reshape(keep, 2 ** (k - 1 - j), right)
        new.append(cur.reshape(cur.shape[0], 2, right))
        self.tensors[pos : pos + k] = new
        self.center = pos + k - 1

    def _merge(self, pos: int, k: int) -> NDArray:
        self.move_center(pos)
        block = self.tensors[pos]
        for j in range(1, k):
            block = np.tensordot(block, self.tensors[pos + j], axes=([-1], [0]))
        return block  # (left, 2, ..., 2, right)

    def swap_adjacent(self, pos: int) -> None:
        block = self._merge(pos, 2)
        self._split(np.transpose(block, (0, 2, 1, 3)), 2, pos)
        self.order[pos], self.order[pos + 1] = self.order[pos + 1], self.order[pos]

    def gather(self, qubits: Sequence[int]) -> int:
        """Move ``qubits`` next to each other, keeping their relative chain order."""
        pos = sorted(self.order.index(q) for q in qubits)
        start = pos[0]
        for j, p in enumerate(pos):
            while p > start + j:
                self.swap_adjacent(p - 1)
                p -= 1
        return start

    def apply(self, op: NDArray, qubits: Sequence[int]) -> None:
        k = len(qubits)
        start = self.gather(qubits)
        chain_q = self.order[start : start + k]
        perm = [list(qubits).index(q) for q in chain_q]
        t = op.reshape((2,) * (2 * k))
        t = np.transpose(t, perm + [k + p for p in perm]).reshape(2**k, 2**k)
        block = self._merge(start, k)
        left, right = block.shape[0], block.shape[-1]
        block = np.einsum("ij,ajb->aib", t, block.reshape(left, 2**k, right))
        self._split(block, k, start)

    def project(self, vec: NDArray, qubits: Sequence[int]) -> float:
        k = len(qubits)
        start = self.gather(qubits)
        chain_q = self.order[start : start + k]
        perm = [list(qubits).index(q) for q in chain_q]
        v = np.transpose(vec.reshape((2,) * k), perm).reshape(-1)
        block = self._merge(start, k)
        left, right = block.shape[0], block.shape[-1]
        mat = np.einsum("j,ajb->ab", v.conj(), block.reshape(left, 2**k, right))
        del self.tensors[start : start + k]
        del self.order[start : start + k]
        if start < len(self.tensors):
            self.tensors[start] = np.einsum("ab,bpc->apc", mat, self.tensors[start])
            self.center = start
        elif self.tensors:
            self.tensors[-1] = np.einsum("apb,bc->apc", self.tensors[-1], mat)
            self.center = len(self.tensors) - 1
        else:
            return float(abs(mat.ravel()[0]) ** 2)
        norm_sq = self.norm_sq()
        if norm_sq < 1e-28:
            raise PostselectionError(f"postselection on {tuple(qubits)} has zero probability")
        self.tensors[self.center] = self.tensors[self.center] / np.sqrt(norm_sq)
        return norm_sq

    def norm_sq(self) -> float:
        return float(np.sum(np.abs(self.tensors[self.center]) ** 2))

    def reorder(self, target: Sequence[int]) -> None:
        rank = {q: i for i, q in enumerate(target)}
        for i in range(len(self.order)):
            for j in range(len(self.order) - 1 - i):
                if rank[self.order[j]] > rank[self.order[j + 1]]:
                    self.swap_adjacent(j)


@dataclass
class MpsRun:
    state: FiniteMps
    truncation_error: float
    probability: float


def run_mps(circuit: Circuit, chi_max: int = 32, tolerance: float = 1e-12) -> MpsRun:
    """Simulate on an open-chain MPS; long-range gates are handled by adjacent SWAPs.

    Raises:
        ArithmeticError: if the accumulated discarded weight exceeds ``tolerance``.
    """
    if chi_max < 16:
        raise ValueError("chi_max must be at least 16")
    chain = _ChainMps(circuit.n, chi_max)
    prob = 1.0
    for g in circuit.gates:
        if g.kind in ("postselect", "measure_bell"):
            prob *= chain.project(_postselect_vector(g), g.qubits)
        else:
            chain.apply(_gate_op(g), g.qubits)
    outputs = list(circuit.outputs) if circuit.outputs else list(chain.order)
    extra = [q for q in chain.order if q not in outputs]
    for q in extra:
        prob_extra = chain.project(np.array([1.0, 0.0], dtype=complex), [q])
        if abs(prob_extra - 1.0) > 1e-9:
            raise ValueError("non-output qubits are not returned to |0>")
    chain.reorder(outputs)
    if chain.truncation > tolerance:
        raise ArithmeticError(f"MPS truncation error {chain.truncation:.2e} exceeds {tolerance:.0e}")
    tensors = [np.transpose(t, (1, 0, 2)) for t in chain.tensors]
    return MpsRun(FiniteMps(tensors, "open").normalized(), chain.truncation, prob)


# ---------------------------------------------------------------- density matrix oracle


def run_density_matrix(circuit: Circuit, noise: NoiseModel, max_qubits: int = 8) -> NDArray:
    """Exact noisy output density matrix on ``circuit.outputs`` (tiny circuits only).

    Uses the same error placement as the trajectory sampler, so it is the
    reference for its statistics.
    """
    compiled = _ensure_compiled(circuit)
    if compiled.n > max_qubits:
        raise ValueError(f"density-matrix oracle is capped at {max_qubits} qubits")
    n = compiled.n
    events = _error_slots(compiled)
    rho = np.zeros((2,) * (2 * n), dtype=complex)
    rho[(0,) * (2 * n)] = 1.0
    alive = list(range(n))

    def conj_apply(r, op, qs):
        axes = [alive.index(q) for q in qs]
        m = len(alive)
        r = _apply(r, op, axes)
        return _apply(r, op.conj(), [m + a for a in axes])

    for item in _merge_events(compiled.gates, events):
        if isinstance(item, _Slot):
            p = noise.two_qubit_depolarizing_p if len(item.qubits) == 2 else noise.idle_depolarizing_p
            if p == 0:
                continue
            letters = PAULI_2Q if len(item.qubits) == 2 else PAULI_1Q
            mixed = sum(conj_apply(rho, _pauli(s), item.qubits) for s in letters) / len(letters)
            rho = (1 - p) * rho + p * mixed
            continue
        g = item
        if g.kind in ("postselect", "measure_bell"):
            k = len(g.qubits)
            ket = _postselect_vector(g).reshape((2,) * k)
            m = len(alive)
            axes = [alive.index(q) for q in g.qubits]
            rho = np.tensordot(ket.conj(), rho, axes=(list(range(k)), axes))
            # Row axes shrank by k, so column axis of position a is now at m - k + a.
            rho = np.tensordot(ket, rho, axes=(list(range(k)), [m - k + a for a in axes]))
            for q in g.qubits:
                alive.remove(q)
            m = len(alive)
            tr = np.trace(rho.reshape(2**m, 2**m)).real
            if tr < 1e-14:
                raise PostselectionError("zero-probability postselection")
            rho = rho / tr
        else:
            rho = conj_apply(rho, g.unitary(), g.qubits)
    m = len(alive)
    outputs = list(compiled.outputs) if compiled.outputs else list(alive)
    order = [alive.index(q) for q in outputs]
    rho = np.transpose(rho, order + [m + i for i in order])
    return rho.reshape(2**m, 2**m)


def _pauli(letters: str) -> NDArray:
    from .circuit import pauli_matrix

    return pauli_matrix(letters)


# ---------------------------------------------------------------- noise placement


@dataclass(frozen=True)
class _Slot:
    """Error opportunity at a time stamp: after a CNOT (2 qubits) or on an idle qubit (1 qubit)."""

    time: float
    qubits: tuple[int, ...]
    unit: int


def schedule(circuit: Circuit) -> list[float]:
    """ASAP time stamps: CNOT layers are integers, other gates sit half a step after their qubits' last CNOT."""
    return _gate_times(circuit.gates)


def _error_slots(circuit: Circuit) -> list[_Slot]:
    times = schedule(circuit)
    cx_times = [t for g, t in zip(circuit.gates, times) if g.kind == "cx"]
    depth = int(max(cx_times, default=0))
    slots: list[_Slot] = []
    busy: dict[int, set[int]] = {}
    first: dict[int, int] = {}
    per_qubit: dict[int, list[tuple[float, int]]] = {}
    for g, t in zip(circuit.gates, times):
        if g.kind == "cx":
            slots.append(_Slot(t + 0.25, g.qubits, g.unit))
            for q in g.qubits:
                busy.setdefault(q, set()).add(int(t))
                first.setdefault(q, int(t))
        if g.kind not in ("postselect", "measure_bell"):
            for q in g.qubits:
                per_qubit.setdefault(q, []).append((t, g.unit))
    for q in sorted(first):
        events = per_qubit[q]
        for layer in range(first[q] + 1, depth + 1):
            if layer in busy[q]:
                continue
            unit = next((u for t, u in events if t > layer), None)
            if unit is None:
                unit = [u for t, u in events if t < layer][-1]
            slots.append(_Slot(float(layer), (q,), unit))
    return slots


def _merge_events(gates: Sequence[Gate], slots: Sequence[_Slot]) -> list:
    return _merge_with_times(gates, _gate_times(gates), slots)


def _gate_times(gates: Sequence[Gate]) -> list[float]:
    level: dict[int, int] = {}
    out = []
    for g in gates:
        if g.kind == "cx":
            t = 1 + max(level.get(q, 0) for q in g.qubits)
            for q in g.qubits:
                level[q] = t
            out.append(float(t))
        elif g.kind in ("postselect", "measure_bell"):
            out.append(float("inf"))
        else:
            out.append(max(level.get(q, 0) for q in g.qubits) + 0.5)
    return out


def _merge_with_times(gates: Sequence[Gate], times: Sequence[float], slots: Sequence[_Slot]) -> list:
    keyed = [((t, 0, i), g) for i, (g, t) in enumerate(zip(gates, times))]
    keyed += [((s.time, 1, j), s) for j, s in enumerate(slots)]
    # Error slots on a qubit must land between that qubit's neighbouring gates;
    # sorting by time achieves this because gates on other qubits commute with them.
    keyed.sort(key=lambda kv: kv[0])
    return [item for _, item in keyed]


def _ensure_compiled(circuit: Circuit) -> Circuit:
    if all(g.kind in ("cx", "u", "postselect", "pauli") for g in circuit.gates):
        return circuit
    return compile_circuit(circuit)


def sample_errors(slots: Sequence[_Slot], noise: NoiseModel, rng: np.random.Generator) -> list[tuple[_Slot, str]]:
    """Draw the Pauli errors of one trajectory."""
    if not slots:
        return []
    probs = np.array(
        [noise.two_qubit_depolarizing_p if len(s.qubits) == 2 else noise.idle_depolarizing_p for s in slots]
    )
    hits = np.flatnonzero(rng.random(len(slots)) < probs)
    out = []
    for i in hits:
        s = slots[i]
        letters = PAULI_2Q if len(s.qubits) == 2 else PAULI_1Q
        out.append((s, letters[int(rng.integers(len(letters)))]))
    return out


def trajectory_circuit(circuit: Circuit, errors: Sequence[tuple[_Slot, str]]) -> Circuit:
    """Compiled circuit with the sampled Pauli errors inserted as gates."""
    slots = [s for s, _ in errors]
    label = {id(s): p for s, p in errors}
    merged = _merge_with_times(circuit.gates, _gate_times(circuit.gates), slots)
    gates = [
        Gate("pauli", item.qubits, label=label[id(item)], unit=item.unit) if isinstance(item, _Slot) else item
        for item in merged
    ]
    return Circuit(circuit.n, gates, list(circuit.outputs), dict(circuit.meta))


# ---------------------------------------------------------------- unit engine


class UnitEngine:
    """Assemble trajectory states from per-unit tensors (bond dimension 2 ring)."""

    def __init__(self, circuit: Circuit):
        self.circuit = circuit
        self.protocol = circuit.meta.get("protocol")
        if self.protocol not in ("rg", "sequential") or "units" not in circuit.meta:
            raise ValueError("unit engine needs protocol unit metadata")
        self.units = circuit.meta["units"]
        self.times = _gate_times(circuit.gates)
        self.unit_gates: list[list[tuple[float, int, Gate]]] = [[] for _ in self.units]
        for i, (g, t) in enumerate(zip(circuit.gates, self.times)):
            if g.unit < 0:
                raise ValueError("every gate needs a unit tag for the unit engine")
            self.unit_gates[g.unit].append((t, i, g))
        self._clean = [self._unit_tensor(u, []) for u in range(len(self.units))]

    # -- per-unit simulation
    def _run_unit(self, u: int, extra: Sequence[tuple[_Slot, str]], wires: list[int], init: NDArray) -> NDArray:
        """Apply unit ``u`` (plus errors) to ``init`` of shape ``(2,)*len(wires) + (batch,)``."""
        items = [((t, 0, i), g) for t, i, g in self.unit_gates[u]]
        items += [((s.time, 1, j), Gate("pauli", s.qubits, label=p)) for j, (s, p) in enumerate(extra)]
        items.sort(key=lambda kv: kv[0])
        state = init
        project = None
        for _, g in items:
            if g.kind in ("postselect", "measure_bell"):
                project = g
                continue
            state = _apply(state, g.unitary(), [wires.index(q) for q in g.qubits])
        if project is not None:
            vec = _postselect_vector(project).conj().reshape((2,) * len(project.qubits))
            axes = [wires.index(q) for q in project.qubits]
            state = np.tensordot(vec, state, axes=(list(range(len(axes))), axes))
        return state

    def _unit_tensor(self, u: int, extra: Sequence[tuple[_Slot, str]]) -> NDArray:
        info = self.units[u]
        kind = info["kind"]
        touched = {q for _, _, g in self.unit_gates[u] for q in g.qubits}
        if kind in ("link", "mid"):
            wires = list(info["qubits"])
            init = np.zeros((2, 2, 1), dtype=complex)
            init[0, 0, 0] = 1.0
            return self._run_unit(u, extra, wires, init)[..., 0].reshape(2, 2)
        if kind == "end":
            wires = list(info["qubits"])
            init = np.eye(4, dtype=complex).reshape(2, 2, 4)
            row = self._run_unit(u, extra, wires, init)  # (4,) amplitudes <00|U|x w>
            return row.reshape(2, 2)
        if kind == "block":
            sites = list(info["qubits"])
            ins = list(info["inputs"])
            wires = sorted(touched | set(sites) | set(ins))
            init = np.zeros((2,) * len(wires) + (4,), dtype=complex)
            for a, b in itertools.product(range(2), repeat=2):
                idx = [0] * len(wires)
                idx[wires.index(ins[0])] = a
                idx[wires.index(ins[1])] = b
                init[tuple(idx) + (2 * a + b,)] = 1.0
            out = self._run_unit(u, extra, wires, init)
            extra_w = [w for w in wires if w not in sites]
            order = [wires.index(q) for q in sites] + [wires.index(q) for q in extra_w]
            out = np.transpose(out, order + [len(wires)]).reshape(2 ** len(sites), 2 ** len(extra_w), 4)
            return out[:, 0, :].reshape(2 ** len(sites), 2, 2)
        if kind == "site":
            wires = list(info["qubits"])
            bond_in = wires[0]
            init = np.zeros((2, 2, 2), dtype=complex)
            for a in range(2):
                idx = [0, 0]
                idx[wires.index(bond_in)] = a
                init[tuple(idx) + (a,)] = 1.0
            out = self._run_unit(u, extra, wires, init)
            phys = self.circuit.outputs[info["site"]]
            order = [wires.index(phys), wires.index(info["bond_out"])]
            return np.transpose(out, order + [2])  # [i, out, in]
        raise ValueError(f"unknown unit kind {kind!r}")

    # -- assembly
    def state(self, errors: Sequence[tuple[_Slot, str]] = ()) -> FiniteMps:
        """Unnormalised ring MPS of one trajectory (norm squared = acceptance probability)."""
        by_unit: dict[int, list] = {}
        for s, p in errors:
            by_unit.setdefault(s.unit, []).append((s, p))
        tensors = [self._unit_tensor(u, by_unit[u]) if u in by_unit else self._clean[u] for u in range(len(self.units))]
        if self.protocol == "rg":
            return self._rg_ring(tensors)
        return self._seq_ring(tensors)

    def _rg_ring(self, tensors: list[NDArray]) -> FiniteMps:
        blocks = [u for u, info in enumerate(self.units) if info["kind"] == "block"]
        links = [u for u, info in enumerate(self.units) if info["kind"] == "link"]
        out = []
        q = len(self.units[blocks[0]]["qubits"])
        for j, bu in enumerate(blocks):
            omega = tensors[links[j]]  # [block j right input, block j+1 left input]
            out.append(np.einsum("pab,bc->pac", tensors[bu], omega))
        return FiniteMps(out, "periodic", (q,) * len(out))

    def _seq_ring(self, tensors: list[NDArray]) -> FiniteMps:
        n = self.circuit.meta["n_sites"]
        site_t: dict[int, NDArray] = {}
        mid = end = None
        for u, info in enumerate(self.units):
            if info["kind"] == "site":
                t = tensors[u]  # [i, out, in]
                site_t[info["site"]] = t if info["side"] == "left" else np.transpose(t, (0, 2, 1))
            elif info["kind"] == "mid":
                mid = tensors[u]
            elif info["kind"] == "end":
                end = tensors[u]  # [x, w]
        m = n // 2
        ring = [site_t[k] for k in range(n)]
        ring[m] = np.einsum("yz,pzw->pyw", mid, ring[m])
        ring[0] = np.einsum("xw,pxy->pwy", end, ring[0])
        return FiniteMps(ring, "periodic")


# ---------------------------------------------------------------- trajectories


Observable = PauliString | ObservableSum


def _trajectory_seed(master_seed: int, t: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), int(t)]))


def _evaluate_all(state, observables: Mapping[str, Observable]) -> dict[str, float]:
    return {name: evaluate(state, obs) for name, obs in observables.items()}


def run_exact(circuit: Circuit, observables: Mapping[str, Observable], backend: str = "auto") -> SimResult:
    """Noiseless observable values from a single exact run."""
    if backend == "auto":
        backend = "units" if "units" in circuit.meta else ("statevector" if circuit.n <= 20 else "mps")
    if backend == "units":
        st = UnitEngine(_ensure_compiled(circuit)).state()
        prob = st.norm() ** 2
        st = st.normalized()
    elif backend == "statevector":
        st, prob = run_statevector(circuit, return_probability=True)
    else:
        run = run_mps(circuit)
        st, prob = run.state, run.probability
    values = _evaluate_all(st, observables)
    return SimResult("exact", {k: (v, 0.0) for k, v in values.items()}, 1, None, prob, st)


def run_trajectories(
    circuit: Circuit,
    noise: NoiseModel,
    k: int,
    master_seed: int,
    observables: Mapping[str, Observable],
    threads: int = 1,
    engine: str = "auto",
) -> SimResult:
    """Monte Carlo over Pauli-error trajectories.

    Each trajectory ``t`` draws its errors from ``SeedSequence([master_seed, t])``
    and its observables are computed exactly on its (pure) state. With
    postselection, trajectories are weighted by their acceptance probability
    (ratio estimator); ``acceptance_rate`` is the fraction of trajectories
    whose sampled Bell outcome was ``phi+``.
    """
    if k < 1:
        raise ValueError("need at least one trajectory")
    compiled = _ensure_compiled(circuit)
    if engine == "auto":
        engine = "units" if "units" in compiled.meta else "statevector"
    slots = _error_slots(compiled)
    unit_engine = UnitEngine(compiled) if engine == "units" else None
    names = list(observables)
    cache: dict[str, tuple[float, dict[str, float]]] = {}

    def one(t: int) -> tuple[float, list[float], bool]:
        rng = _trajectory_seed(master_seed, t)
        errors = sample_errors(slots, noise, rng)
        key = "clean" if not errors else None
        if key and key in cache:
            weight, vals = cache[key]
        else:
            if unit_engine is not None:
                st = unit_engine.state(errors)
                weight = float(st.norm() ** 2)
                vals = _evaluate_all(st.normalized(), observables)
            else:
                st, weight = run_statevector(trajectory_circuit(compiled, errors), return_probability=True)
                vals = _evaluate_all(st, observables)
            if key:
                cache[key] = (weight, vals)
        accepted = bool(rng.random() < weight)
        return weight, [vals[nm] for nm in names], accepted

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(k)))
    else:
        results = [one(t) for t in range(k)]
    w = np.array([r[0] for r in results])
    vals = np.array([r[1] for r in results]).reshape(k, len(names))
    acc = float(np.mean([r[2] for r in results]))
    estimates = {}
    for j, nm in enumerate(names):
        mean, err = _ratio_estimate(vals[:, j], w)
        estimates[nm] = (mean, err)
    return SimResult("trajectories", estimates, k, int(master_seed), acc, extras={"mean_weight": float(w.mean())})


def _ratio_estimate(values: NDArray, weights: NDArray) -> tuple[float, float]:
    """Weighted mean ``sum w x / sum w`` with a delta-method standard error."""
    k = len(values)
    wsum = float(np.sum(weights))
    mean = float(np.sum(weights * values) / wsum)
    if k < 2:
        return mean, 0.0
    resid = weights * (values - mean) / (wsum / k)
    err = float(np.std(resid, ddof=1) / np.sqrt(k))
    return mean, err if err > 1e-15 else 0.0


def sample_pauli_shots(
    state: NDArray, pauli: PauliString, shots: int, rng: np.random.Generator, readout_flip_r: float = 0.0
) -> tuple[float, float]:
    """Shot estimate of a Pauli string on a dense state, with optional readout bit flips."""
    n = len(pauli)
    psi = np.asarray(state, dtype=complex).reshape((2,) * n)
    basis = {
        "X": np.array([[1, 1], [1, -1]]) / np.sqrt(2),
        "Y": np.array([[1, -1j], [1, 1j]]) / np.sqrt(2),
    }
    for site, c in pauli.support().items():
        if c in basis:
            psi = _apply(psi, basis[c], [site])
    probs = np.abs(psi.ravel()) ** 2
    outcomes = rng.choice(probs.size, size=shots, p=probs / probs.sum())
    support = sorted(pauli.support())
    bits = np.array([(outcomes >> (n - 1 - s)) & 1 for s in support]).T if support else np.zeros((shots, 0), int)
    if readout_flip_r > 0:
        bits = bits ^ (rng.random(bits.shape) < readout_flip_r)
    signs = 1 - 2 * (np.sum(bits, axis=1) % 2)
    return float(pauli.coefficient * signs.mean()), float(abs(pauli.coefficient) * signs.std(ddof=1) / np.sqrt(shots))
