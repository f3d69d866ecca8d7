"""RG-based preparation: blocking, polar decomposition, fixed point and circuit emission."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .circuit import Circuit, Gate
from .uniform_mps import (
    DomainError,
    FiniteMps,
    UniformMps,
    build_target_tensor,
    overlap,
    target_state,
    transfer_spectrum,
)

Q0 = 4
SUPPORTED_Q = (4, 8)
# Larger blocks are allowed for error diagnostics but never emitted as circuits.
DIAGNOSTIC_Q = (4, 8, 16)


@dataclass(frozen=True)
class BlockedTensor:
    """``2**q x 4`` matrix: physical rows (big-endian), virtual columns ``2*left + right``."""

    matrix: NDArray[np.complex128]
    q: int

    def __post_init__(self) -> None:
        if self.matrix.shape != (2**self.q, 4):
            raise ValueError(f"blocked tensor for q={self.q} must be {(2**self.q, 4)}")


@dataclass(frozen=True)
class RgLayer:
    level: int
    isometry: NDArray[np.complex128]
    residual_psd: NDArray[np.complex128]

    def residual_tensor(self) -> NDArray[np.complex128]:
        """Residual as a tensor ``P[s, left, right]`` with a renormalised physical index."""
        return self.residual_psd.reshape(4, 2, 2)


@dataclass(frozen=True)
class FixedPointPair:
    omega: NDArray[np.complex128]
    rho: NDArray[np.complex128]


@dataclass(frozen=True)
class RgPlan:
    g: float
    n: int
    q: int
    levels: tuple[RgLayer, ...]
    fixed_point: FixedPointPair
    epsilon: float
    q0: int = Q0

    def block_isometry(self) -> NDArray[np.complex128]:
        """Map from the two block-boundary bond qubits to the ``q`` physical qubits."""
        w = self.levels[0].isometry
        for layer in self.levels[1:]:
            w = np.kron(w, w) @ layer.isometry
        return w


def psd_sqrt(m: NDArray) -> NDArray[np.complex128]:
    """Square root of a Hermitian positive semidefinite matrix via ``eigh``."""
    w, u = np.linalg.eigh(0.5 * (m + np.conj(m).T))
    return (u * np.sqrt(np.clip(w, 0.0, None))) @ u.conj().T


def polar_decompose(m: NDArray) -> tuple[NDArray[np.complex128], NDArray[np.complex128]]:
    """Polar decomposition ``m = V P`` via the SVD.

    For rank-deficient input the left singular vectors of the zero singular
    values are replaced by a Gram-Schmidt completion on the computational
    basis, which keeps ``V`` deterministic.
    """
    m = np.asarray(m, dtype=complex)
    rows, cols = m.shape
    if rows < cols:
        raise ValueError(f"polar_decompose needs rows >= cols, got {m.shape}")
    u, s, wh = np.linalg.svd(m, full_matrices=False)
    rank = int(np.sum(s > 1e-12 * max(s[0], 1e-300))) if s.size else 0
    if rank < cols:
        basis = [u[:, k] for k in range(rank)]
        for k in range(rows):
            if len(basis) == cols:
                break
            e = np.zeros(rows, dtype=complex)
            e[k] = 1.0
            for _ in range(2):
                for c in basis:
                    e = e - np.vdot(c, e) * c
            if np.linalg.norm(e) > 1e-8:
                basis.append(e / np.linalg.norm(e))
        u = np.stack(basis, axis=1)
    v = u @ wh
    p = wh.conj().T @ np.diag(s) @ wh
    return v, 0.5 * (p + p.conj().T)


def blocked_tensor(mps: UniformMps, q: int) -> BlockedTensor:
    a = mps.tensor
    t = a
    for _ in range(q - 1):
        t = np.einsum("pab,qbc->pqac", t, a).reshape(t.shape[0] * 2, 2, 2)
    return BlockedTensor(t.reshape(2**q, 4), q)


def block_and_decompose(mps: UniformMps, q0: int = Q0) -> RgLayer:
    if 2**q0 < mps.bond_dim**2:
        raise ValueError("blocking must give at least D^2 physical states")
    v, p = polar_decompose(blocked_tensor(mps, q0).matrix)
    return RgLayer(1, v, p)


def rg_step(p: NDArray, level: int = 2) -> RgLayer:
    """Block two residual tensors over their shared bond and decompose again."""
    t = np.asarray(p, dtype=complex).reshape(4, 2, 2)
    c = np.einsum("sab,tbc->stac", t, t).reshape(16, 4)
    v, res = polar_decompose(c)
    return RgLayer(level, v, res)


def _check_normal(mps: UniformMps) -> None:
    mods = np.abs(transfer_spectrum(mps).eigenvalues)
    if mods[0] - mods[1] < 1e-8:
        raise DomainError("transfer matrix is degenerate; the input is long-range correlated")


def fixed_point_state(mps: UniformMps) -> FixedPointPair:
    """Two-qubit state ``(I (x) sqrt(rho)) (|00> + |11>)``, normalised.

    The first qubit attaches to the right bond of one block, the second to the
    left bond of the next block.
    """
    _check_normal(mps)
    rho = transfer_spectrum(mps).rho
    omega = np.kron(np.eye(2), psd_sqrt(rho)) @ np.array([1, 0, 0, 1], dtype=complex)
    omega = omega / np.linalg.norm(omega)
    return FixedPointPair(omega, rho)


def residual_fixed_point(mps: UniformMps) -> NDArray[np.complex128]:
    """Closed-form limit ``P_inf = I (x) sqrt(rho)`` of the residual iteration."""
    rho = transfer_spectrum(mps).rho
    return np.kron(np.eye(2), psd_sqrt(rho)).astype(complex)


def _validate(g: float, n: int, q: int, allowed: tuple[int, ...] = SUPPORTED_Q) -> None:
    if q not in allowed:
        raise ValueError(f"q must be one of {allowed}, got {q}")
    if n % q or n < 2 * q:
        raise ValueError(f"n={n} must be a multiple of q={q} with at least two blocks")
    if not -1.0 <= g <= 1.0 or g == 0:
        raise DomainError(f"g must lie in [-1, 0) or (0, 1], got {g}")


def _plan_layers(g: float, q: int) -> tuple[tuple[RgLayer, ...], FixedPointPair]:
    mps = build_target_tensor(g)
    fp = fixed_point_state(mps)
    layers = [block_and_decompose(mps, Q0)]
    while Q0 * 2 ** (len(layers) - 1) < q:
        layers.append(rg_step(layers[-1].residual_psd, len(layers) + 1))
    return tuple(layers), fp


def _approx_from(layers, fp: FixedPointPair, n: int, q: int) -> FiniteMps:
    w = layers[0].isometry
    for layer in layers[1:]:
        w = np.kron(w, w) @ layer.isometry
    tensor = np.einsum("pab,bc->pac", w.reshape(2**q, 2, 2), fp.omega.reshape(2, 2))
    return FiniteMps([tensor] * (n // q), "periodic", (q,) * (n // q))


def make_plan(g: float, n: int, q: int) -> RgPlan:
    """Layers, fixed point and approximation error; ``q = 16`` is accepted for diagnostics."""
    _validate(g, n, q, DIAGNOSTIC_Q)
    layers, fp = _plan_layers(g, q)
    approx = _approx_from(layers, fp, n, q)
    eps = 1.0 - abs(overlap(target_state(g, n), approx))
    return RgPlan(float(g), n, q, layers, fp, float(max(eps, 0.0)))


def approximated_state(plan: RgPlan) -> FiniteMps:
    """Ring MPS prepared by the noiseless RG circuit (one tensor per block)."""
    return _approx_from(plan.levels, plan.fixed_point, plan.n, plan.q).normalized()


def approximation_error(g: float, n: int, q: int) -> float:
    """``1 - |<target|approx>|`` by exact transfer-matrix contraction."""
    return make_plan(g, n, q).epsilon


def error_bound_diagnostic(n: int, q: int, xi: float, gamma: float) -> float:
    """Scaling form ``(n / q) exp(-gamma q / xi)`` with unit prefactor (diagnostic only)."""
    if xi <= 0:
        raise DomainError("correlation length must be positive")
    if not 0 < gamma < 0.5:
        raise DomainError("gamma must lie in (0, 1/2)")
    if n <= 0 or q <= 0:
        raise DomainError("n and q must be positive")
    return (n / q) * float(np.exp(-gamma * q / xi))


def synthesize_rg_circuit(g: float, n: int, q: int) -> Circuit:
    """Emit the RG preparation circuit on ``n`` qubits (qubit k holds site k).

    Gate order: all fixed-point pair preparations, then for ``q = 8`` the
    level-2 isometries, then the level-1 isometries. Every isometry is
    ``16 x 4`` with its inputs on the first and last of its four wires.
    Units ``0..n/q-1`` are blocks, ``n/q..2n/q-1`` the fixed-point pairs.
    """
    _validate(g, n, q)
    layers, fp = _plan_layers(g, q)
    nb = n // q
    blocks = [list(range(j * q, (j + 1) * q)) for j in range(nb)]
    links = [[j * q + q - 1, ((j + 1) * q) % n] for j in range(nb)]
    c = Circuit(
        n,
        outputs=list(range(n)),
        meta={
            "protocol": "rg",
            "g": float(g),
            "n_sites": n,
            "q": q,
            "units": [{"kind": "block", "qubits": b, "inputs": [b[0], b[-1]]} for b in blocks]
            + [{"kind": "link", "qubits": link} for link in links],
        },
    )
    for j, link in enumerate(links):
        c.append(Gate("prep", tuple(link), fp.omega.copy(), unit=nb + j))
    if q == 8:
        v8 = layers[1].isometry
        for j, b in enumerate(blocks):
            wires = (b[0], b[3], b[4], b[7])
            c.append(Gate("isometry", wires, v8.copy(), inputs=(b[0], b[7]), unit=j))
    v4 = layers[0].isometry
    for j, b in enumerate(blocks):
        for start in range(0, q, 4):
            wires = tuple(b[start : start + 4])
            c.append(Gate("isometry", wires, v4.copy(), inputs=(wires[0], wires[3]), unit=j))
    return c
