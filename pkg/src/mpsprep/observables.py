"""Hamiltonian of the path and the string-order observables."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np
from numpy.typing import NDArray

from .uniform_mps import PAULI_MATRICES, DomainError, FiniteMps, RingEvaluator


@dataclass(frozen=True)
class PauliString:
    letters: str
    coefficient: float = 1.0

    def __post_init__(self) -> None:
        if set(self.letters) - set("IXYZ"):
            raise ValueError(f"invalid Pauli letters in {self.letters!r}")
        if not np.isfinite(self.coefficient):
            raise ValueError("coefficient must be finite")

    def __len__(self) -> int:
        return len(self.letters)

    def support(self) -> dict[int, str]:
        return {k: c for k, c in enumerate(self.letters) if c != "I"}

    def compact(self) -> str:
        return f"{self.coefficient:+.17g}*{self.letters}"


@dataclass(frozen=True)
class ObservableSum:
    terms: tuple[PauliString, ...]

    @property
    def n(self) -> int:
        return len(self.terms[0]) if self.terms else 0

    def __len__(self) -> int:
        return len(self.terms)


def _window(n: int, start: int, pattern: str, coefficient: float) -> PauliString:
    letters = ["I"] * n
    for offset, c in enumerate(pattern):
        letters[(start + offset) % n] = c
    return PauliString("".join(letters), coefficient)


def couplings(g: float) -> tuple[float, float, float]:
    """Return ``(g_zz, g_x, g_zxz)`` along the path."""
    if not -1.0 <= g <= 1.0:
        raise DomainError(f"g must lie in [-1, 1], got {g}")
    return 2 * (1 - g**2), (g + 1) ** 2, (1 - g) ** 2


def hamiltonian(g: float, n: int) -> ObservableSum:
    if n < 3:
        raise ValueError("the Hamiltonian needs at least 3 sites")
    gzz, gx, gzxz = couplings(g)
    terms: list[PauliString] = []
    for i in range(n):
        terms.append(_window(n, i, "ZZ", -gzz))
        terms.append(_window(n, i, "X", -gx))
        terms.append(_window(n, i, "ZXZ", gzxz))
    return ObservableSum(tuple(terms))


def string_nonlocal(n: int, kind: str) -> PauliString:
    """``I X ... X I`` (trivial) or ``Z Y X ... X Y Z`` (spt) across the whole chain."""
    if n < 5:
        raise ValueError("nonlocal strings need n >= 5")
    if kind == "trivial":
        return PauliString("I" + "X" * (n - 2) + "I")
    if kind == "spt":
        return PauliString("ZY" + "X" * (n - 4) + "YZ")
    raise ValueError(f"unknown string kind {kind!r}")


LOCAL_PATTERNS = {"trivial": "IXXXXXI", "spt": "ZYXYZ"}


def string_local(n: int, kind: str) -> ObservableSum:
    """Translation-averaged local string windows with periodic indices."""
    if n < 7:
        raise ValueError("local strings need n >= 7")
    if kind not in LOCAL_PATTERNS:
        raise ValueError(f"unknown string kind {kind!r}")
    return ObservableSum(tuple(_window(n, q, LOCAL_PATTERNS[kind], 1.0 / n) for q in range(n)))


def _dense_pauli(vec: NDArray, term: PauliString) -> complex:
    n = len(term)
    psi = vec.reshape((2,) * n)
    out = psi
    for site, c in term.support().items():
        out = np.moveaxis(np.tensordot(PAULI_MATRICES[c], out, axes=([1], [site])), 0, site)
    return complex(np.vdot(psi.ravel(), out.ravel()) / np.vdot(vec, vec))


def evaluate(state: FiniteMps | NDArray, observable: PauliString | ObservableSum) -> float:
    """Expectation value of a Pauli string or a sum of them.

    Ring MPS states go through cached transfer-matrix contraction, dense
    vectors through direct tensor application.
    """
    terms: Iterable[PauliString]
    terms = observable.terms if isinstance(observable, ObservableSum) else (observable,)
    total = 0j
    if isinstance(state, FiniteMps):
        evaluator = RingEvaluator(state)
        for term in terms:
            if len(term) != state.n_sites:
                raise ValueError("observable length differs from the state")
            ops = {k: PAULI_MATRICES[c] for k, c in term.support().items()}
            total += term.coefficient * evaluator.expectation(ops)
    else:
        vec = np.asarray(state, dtype=complex)
        for term in terms:
            if 2 ** len(term) != vec.size:
                raise ValueError("observable length differs from the state")
            total += term.coefficient * _dense_pauli(vec, term)
    if abs(total.imag) > 1e-9:
        raise ArithmeticError(f"expectation has imaginary part {total.imag:.3e}")
    return float(total.real)


def energy_density(state: FiniteMps | NDArray, g: float) -> float:
    n = state.n_sites if isinstance(state, FiniteMps) else int(np.log2(np.asarray(state).size))
    return evaluate(state, hamiltonian(g, n)) / n


def dense_operator(observable: PauliString | ObservableSum) -> NDArray[np.complex128]:
    """Dense matrix of an observable (small n only; used by the diagonalisation oracle)."""
    terms = observable.terms if isinstance(observable, ObservableSum) else (observable,)
    n = len(terms[0])
    out = np.zeros((2**n, 2**n), dtype=complex)
    for term in terms:
        mat = np.array([[1.0 + 0j]])
        for c in term.letters:
            mat = np.kron(mat, PAULI_MATRICES[c])
        out += term.coefficient * mat
    return out
