"""Translation-invariant target family and exact ring-MPS contraction.

Tensors are stored with index order ``(physical, left_virtual, right_virtual)``.
A tensor may carry several qubit sites on its physical leg (``2**s`` rows,
big-endian in site order), which lets block-level states from the RG circuits
share the same contraction code as the site-level target.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce
from typing import Mapping, Sequence

import numpy as np
from numpy.typing import NDArray

PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)
IDENTITY = np.eye(2, dtype=complex)
PAULI_MATRICES: dict[str, NDArray[np.complex128]] = {
    "I": IDENTITY,
    "X": PAULI_X,
    "Y": PAULI_Y,
    "Z": PAULI_Z,
}


class DomainError(ValueError):
    """Raised when a parameter lies outside the supported domain."""


@dataclass(frozen=True)
class UniformMps:
    """Bond-dimension-2 translation-invariant MPS tensor ``A`` for one value of g."""

    a0: NDArray[np.complex128]
    a1: NDArray[np.complex128]
    g: float
    bond_dim: int = 2
    phys_dim: int = 2

    def __post_init__(self) -> None:
        if np.max(np.abs(self.a1 - PAULI_X @ self.a0 @ PAULI_X)) > 1e-14:
            raise ValueError("a1 must equal X a0 X")
        gram = self.a0 @ self.a0.conj().T + self.a1 @ self.a1.conj().T
        if np.max(np.abs(gram - np.eye(self.bond_dim))) > 1e-12:
            raise ValueError("tensor is not right-canonical")

    @property
    def tensor(self) -> NDArray[np.complex128]:
        """Rank-3 array of shape (2, 2, 2) indexed (physical, left, right)."""
        return np.stack([self.a0, self.a1])


@dataclass(frozen=True)
class TransferSpectrum:
    """Eigen-data of the transfer matrix ``E = sum_i A^i (x) conj(A^i)``.

    ``rho`` is the trace-normalised fixed point of ``X -> sum_i A^i^dag X A^i``.
    In the right-canonical gauge the opposite fixed point is the identity, so
    ``rho`` carries all of the non-trivial boundary information; it is the
    matrix entering the two-site fixed-point state of the RG protocol.
    """

    eigenvalues: NDArray[np.complex128]
    rho: NDArray[np.complex128]

    @property
    def leading_right_eigmatrix(self) -> NDArray[np.complex128]:
        return self.rho

    @property
    def subleading_modulus(self) -> float:
        return float(abs(self.eigenvalues[1]))


@dataclass
class FiniteMps:
    """Finite MPS on a ring (``periodic``) or a chain (``open``).

    ``sites`` gives the number of qubit sites carried by each tensor; the
    physical dimension of tensor ``k`` must be ``2**sites[k]``.
    """

    tensors: list[NDArray[np.complex128]]
    boundary: str = "periodic"
    sites: tuple[int, ...] = field(default=())

    def __post_init__(self) -> None:
        self.tensors = [np.asarray(t, dtype=complex) for t in self.tensors]
        if not self.sites:
            self.sites = tuple(int(round(np.log2(t.shape[0]))) for t in self.tensors)
        if self.boundary not in ("periodic", "open"):
            raise ValueError(f"unknown boundary {self.boundary!r}")
        if len(self.sites) != len(self.tensors):
            raise ValueError("sites must match the number of tensors")
        for k, (t, s) in enumerate(zip(self.tensors, self.sites)):
            if t.ndim != 3 or t.shape[0] != 2**s:
                raise ValueError(f"tensor {k} has shape {t.shape}, expected physical dim {2**s}")
            nxt = self.tensors[(k + 1) % len(self.tensors)]
            if k + 1 < len(self.tensors) or self.boundary == "periodic":
                if t.shape[2] != nxt.shape[1]:
                    raise ValueError(f"bond mismatch between tensors {k} and {k + 1}")
        if self.boundary == "open" and (self.tensors[0].shape[1] != 1 or self.tensors[-1].shape[2] != 1):
            raise ValueError("open MPS needs trivial outer bonds")

    @property
    def n_sites(self) -> int:
        return int(sum(self.sites))

    def site_offsets(self) -> list[int]:
        return [0, *np.cumsum(self.sites).tolist()]

    def norm(self) -> float:
        return float(np.sqrt(abs(_ring_trace([transfer_matrix(t, t) for t in self.tensors]))))

    def normalized(self) -> FiniteMps:
        nrm = self.norm()
        if nrm == 0:
            raise ValueError("state has zero norm")
        tensors = list(self.tensors)
        tensors[0] = tensors[0] / nrm
        return FiniteMps(tensors, self.boundary, self.sites)

    def to_dense(self) -> NDArray[np.complex128]:
        """Contract to a statevector (site 0 is the most significant qubit)."""
        if self.n_sites > 24:
            raise ValueError("dense conversion is limited to 24 sites")
        d0, dl, _ = self.tensors[0].shape
        acc = self.tensors[0].reshape(d0, dl, -1)
        for t in self.tensors[1:]:
            acc = np.einsum("pab,qbc->pqac", acc, t).reshape(acc.shape[0] * t.shape[0], dl, t.shape[2])
        return np.einsum("paa->p", acc)

    def to_json(self) -> dict:
        return {
            "boundary": self.boundary,
            "sites": list(self.sites),
            "tensors": [
                {"shape": list(t.shape), "data": [[float(z.real), float(z.imag)] for z in t.ravel()]}
                for t in self.tensors
            ],
        }

    @classmethod
    def from_json(cls, payload: Mapping) -> FiniteMps:
        tensors = []
        for entry in payload["tensors"]:
            flat = np.array([complex(re, im) for re, im in entry["data"]])
            tensors.append(flat.reshape(entry["shape"]))
        return cls(tensors, payload["boundary"], tuple(payload["sites"]))


def build_target_tensor(g: float) -> UniformMps:
    """Return the path tensor ``A^0 = [[0, 0], [sqrt(g), 1]] / sqrt(1 + |g|)``, ``A^1 = X A^0 X``.

    For ``g < 0`` the principal branch ``sqrt(g) = i sqrt(|g|)`` is used.
    """
    if not -1.0 <= g <= 1.0:
        raise DomainError(f"g must lie in [-1, 1], got {g}")
    root = np.sqrt(complex(g)) if g < 0 else np.sqrt(g) + 0j
    a0 = np.array([[0, 0], [root, 1]], dtype=complex) / np.sqrt(1 + abs(g))
    return UniformMps(a0=a0, a1=PAULI_X @ a0 @ PAULI_X, g=float(g))


def transfer_spectrum(mps: UniformMps) -> TransferSpectrum:
    a = mps.tensor
    e = sum(np.kron(a[i], a[i].conj()) for i in range(2))
    vals = np.linalg.eigvals(e)
    vals = vals[np.lexsort((-vals.real, -np.abs(vals)))]
    # Fixed point of the dual map, written as a 4x4 eigenproblem on vec(X).
    dual = sum(np.kron(a[i].conj().T, a[i].T) for i in range(2))
    dvals, dvecs = np.linalg.eig(dual)
    vec = dvecs[:, int(np.argmax(dvals.real))]
    rho = vec.reshape(2, 2)
    rho = rho / np.trace(rho)
    rho = 0.5 * (rho + rho.conj().T)
    return TransferSpectrum(eigenvalues=vals, rho=rho)


def correlation_length(g: float) -> float:
    """Closed-form correlation length ``|ln((1 - g) / (1 + g))|^-1``; 0 at ``|g| = 1``."""
    if not -1.0 <= g <= 1.0:
        raise DomainError(f"g must lie in [-1, 1], got {g}")
    if g == 0:
        raise DomainError("correlation length diverges at g = 0")
    if abs(g) == 1:
        return 0.0
    return 1.0 / abs(np.log((1 - g) / (1 + g)))


def target_state(g: float, n: int) -> FiniteMps:
    """Normalised n-site periodic target state of the path."""
    a = build_target_tensor(g).tensor
    return FiniteMps([a] * n, "periodic").normalized()


def product_state(vectors: Sequence[NDArray[np.complex128]]) -> FiniteMps:
    """Periodic bond-1 MPS for a product of single-qubit states."""
    tensors = [np.asarray(v, dtype=complex).reshape(2, 1, 1) for v in vectors]
    return FiniteMps(tensors, "periodic")


def transfer_matrix(bra: NDArray, ket: NDArray) -> NDArray[np.complex128]:
    """Mixed transfer matrix ``sum_p conj(bra[p]) (x) ket[p]``."""
    db, lb, rb = bra.shape
    dk, lk, rk = ket.shape
    if db != dk:
        raise ValueError("physical dimensions differ")
    return np.einsum("pab,pcd->acbd", bra.conj(), ket).reshape(lb * lk, rb * rk)


def _ring_trace(mats: Sequence[NDArray]) -> complex:
    return complex(np.trace(reduce(np.matmul, mats)))


def regroup(state: FiniteMps, sites: Sequence[int]) -> FiniteMps:
    """Merge consecutive tensors so that tensor ``k`` carries ``sites[k]`` qubits."""
    if sum(sites) != state.n_sites:
        raise ValueError("grouping does not cover the chain")
    out, it, pending, pending_sites = [], iter(zip(state.tensors, state.sites)), None, 0
    for want in sites:
        while pending_sites < want:
            t, s = next(it)
            if pending is None:
                pending, pending_sites = t, s
            else:
                merged = np.einsum("pab,qbc->pqac", pending, t)
                pending = merged.reshape(pending.shape[0] * t.shape[0], pending.shape[1], t.shape[2])
                pending_sites += s
        if pending_sites != want:
            raise ValueError("grouping is not compatible with existing tensor boundaries")
        out.append(pending)
        pending, pending_sites = None, 0
    return FiniteMps(out, state.boundary, tuple(sites))


def _common_grouping(a: Sequence[int], b: Sequence[int]) -> list[int]:
    cuts = set(np.cumsum(a).tolist()) & set(np.cumsum(b).tolist())
    edges = [0, *sorted(cuts)]
    return [hi - lo for lo, hi in zip(edges, edges[1:])]


def overlap(a: FiniteMps, b: FiniteMps) -> complex:
    """Normalised inner product ``<a|b> / (|a| |b|)`` via mixed transfer matrices."""
    if a.n_sites != b.n_sites or a.boundary != b.boundary:
        raise ValueError("states differ in size or boundary type")
    common = _common_grouping(a.sites, b.sites)
    ga = regroup(a, common) if tuple(common) != a.sites else a
    gb = regroup(b, common) if tuple(common) != b.sites else b
    raw = _ring_trace([transfer_matrix(x, y) for x, y in zip(ga.tensors, gb.tensors)])
    return raw / (a.norm() * b.norm())


def _apply_site_ops(tensor: NDArray, n_sites: int, ops: Mapping[int, NDArray]) -> NDArray:
    dl, dr = tensor.shape[1:]
    t = tensor.reshape((2,) * n_sites + (dl, dr))
    for local, op in ops.items():
        t = np.moveaxis(np.tensordot(op, t, axes=([1], [local])), 0, local)
    return t.reshape(2**n_sites, dl, dr)


class RingEvaluator:
    """Cached transfer matrices for evaluating many local operators on one state."""

    def __init__(self, state: FiniteMps):
        self.state = state
        self.offsets = state.site_offsets()
        self._owner = np.repeat(np.arange(len(state.sites)), state.sites)
        self.transfers = [transfer_matrix(t, t) for t in state.tensors]
        n = len(self.transfers)
        dim0 = self.transfers[0].shape[0]
        self.prefix = [np.eye(dim0, dtype=complex)]
        for e in self.transfers:
            self.prefix.append(self.prefix[-1] @ e)
        self.suffix = [np.eye(self.transfers[-1].shape[1], dtype=complex)] * (n + 1)
        self.suffix = list(self.suffix)
        for k in range(n - 1, -1, -1):
            self.suffix[k] = self.transfers[k] @ self.suffix[k + 1]
        self.norm_sq = complex(np.trace(self.prefix[-1]))

    def expectation(self, ops: Mapping[int, NDArray]) -> complex:
        """``<psi| prod_site ops |psi> / <psi|psi>`` for operators on a few sites."""
        if not ops:
            return 1.0 + 0j
        n_sites = self.state.n_sites
        touched: dict[int, dict[int, NDArray]] = {}
        for site, op in ops.items():
            site %= n_sites
            k = int(self._owner[site])
            touched.setdefault(k, {})[site - self.offsets[k]] = op
        ks = sorted(touched)
        n = len(self.transfers)
        run = _cyclic_run(ks, n)
        mats = []
        for k in run:
            if k in touched:
                t = self.state.tensors[k]
                mats.append(transfer_matrix(t, _apply_site_ops(t, self.state.sites[k], touched[k])))
            else:
                mats.append(self.transfers[k])
        window = reduce(np.matmul, mats)
        start, stop = run[0], run[-1]
        if start <= stop:
            env = self.suffix[stop + 1] @ self.prefix[start]
        else:
            env = reduce(np.matmul, self.transfers[stop + 1 : start], np.eye(window.shape[1], dtype=complex))
        return complex(np.trace(window @ env)) / self.norm_sq


def _cyclic_run(ks: list[int], n: int) -> list[int]:
    """Shortest cyclic range of tensor indices covering ``ks``."""
    if len(ks) == 1:
        return ks
    gaps = [((ks[(i + 1) % len(ks)] - ks[i]) % n, i) for i in range(len(ks))]
    _, i = max(gaps)
    first = ks[(i + 1) % len(ks)]
    length = (ks[i] - first) % n + 1
    return [(first + j) % n for j in range(length)]


def expectation_pauli(state: FiniteMps, pauli) -> float:
    """Exact ``<psi|P|psi> / <psi|psi>`` for a Pauli string of length ``n``.

    ``pauli`` is a letter string or any object with ``letters`` and
    ``coefficient`` attributes.
    """
    letters = getattr(pauli, "letters", pauli)
    coeff = getattr(pauli, "coefficient", 1.0)
    if len(letters) != state.n_sites:
        raise ValueError(f"Pauli string has length {len(letters)}, state has {state.n_sites} sites")
    ops = {k: PAULI_MATRICES[c] for k, c in enumerate(letters) if c != "I"}
    value = RingEvaluator(state).expectation(ops)
    if abs(value.imag) > 1e-10:
        raise ArithmeticError(f"expectation has imaginary part {value.imag:.3e}")
    return float(coeff * value.real)


def infinite_expectation(mps: UniformMps, pattern: str) -> float:
    """Expectation of a Pauli window on the infinite chain (thermodynamic limit).

    Uses the leading left and right eigenvectors of the transfer matrix, so
    only normal (non-degenerate) tensors give a unique answer.
    """
    a = mps.tensor
    e = transfer_matrix(a, a)
    vals, right = np.linalg.eig(e)
    lvals, left = np.linalg.eig(e.T)
    if np.sum(np.isclose(np.abs(vals), np.abs(vals).max(), atol=1e-10)) > 1:
        raise DomainError("transfer matrix has a degenerate leading eigenvalue")
    r = right[:, int(np.argmax(np.abs(vals)))]
    l = left[:, int(np.argmax(np.abs(lvals)))]
    vec = l.copy()
    for c in pattern:
        vec = vec @ transfer_matrix(a, _apply_site_ops(a, 1, {0: PAULI_MATRICES[c]}))
    val = complex(vec @ r) / complex(l @ r) / float(np.max(np.abs(vals))) ** len(pattern)
    if abs(val.imag) > 1e-10:
        raise ArithmeticError(f"expectation has imaginary part {val.imag:.3e}")
    return float(val.real)
