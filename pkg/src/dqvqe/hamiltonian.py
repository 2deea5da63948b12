"""Hamiltonians as weighted Pauli strings, with small exact-diagonalization oracles."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import reduce

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh

PAULI_CHARS = frozenset("IXYZ")
MAX_EXACT_QUBITS = 12
_DENSE_LIMIT = 10

_MATS = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


class HamiltonianError(ValueError):
    pass


def check_pauli(text: str) -> str:
    if not text or set(text) - PAULI_CHARS:
        raise HamiltonianError(f"bad Pauli string {text!r}")
    return text


@dataclass(frozen=True)
class PauliHamiltonian:
    terms: tuple[tuple[float, str], ...]

    def __post_init__(self) -> None:
        if not self.terms:
            raise HamiltonianError("a Hamiltonian needs at least one term")
        width = len(self.terms[0][1])
        for coeff, pauli in self.terms:
            check_pauli(pauli)
            if len(pauli) != width:
                raise HamiltonianError(f"term {pauli!r} has length {len(pauli)}, expected {width}")
            if not math.isfinite(coeff):
                raise HamiltonianError(f"non-finite coefficient for {pauli!r}")

    @property
    def num_qubits(self) -> int:
        return len(self.terms[0][1])

    @property
    def coefficients(self) -> np.ndarray:
        return np.array([c for c, _ in self.terms])

    @property
    def paulis(self) -> list[str]:
        return [p for _, p in self.terms]

    def __len__(self) -> int:
        return len(self.terms)


def parse_hamiltonian(text: str) -> PauliHamiltonian:
    terms = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise HamiltonianError(f"line {lineno}: expected '<coeff> <pauli>'")
        try:
            coeff = float(parts[0])
        except ValueError as exc:
            raise HamiltonianError(f"line {lineno}: bad coefficient {parts[0]!r}") from exc
        try:
            terms.append((coeff, check_pauli(parts[1].upper())))
        except HamiltonianError as exc:
            raise HamiltonianError(f"line {lineno}: {exc}") from exc
    return PauliHamiltonian(tuple(terms))


def format_hamiltonian(h: PauliHamiltonian) -> str:
    return "".join(f"{coeff!r} {pauli}\n" for coeff, pauli in h.terms)


def pauli_matrix(pauli: str) -> np.ndarray:
    """Dense Kronecker product; qubit 0 is the leftmost factor."""
    return reduce(np.kron, (_MATS[ch] for ch in check_pauli(pauli)))


def _masks(pauli: str) -> tuple[int, int, int]:
    n = len(pauli)
    flip = phase = 0
    ys = 0
    for k, ch in enumerate(pauli):
        bit = 1 << (n - 1 - k)
        if ch in "XY":
            flip |= bit
        if ch in "YZ":
            phase |= bit
        if ch == "Y":
            ys += 1
    return flip, phase, ys


def _parity(values: np.ndarray) -> np.ndarray:
    bits = np.unpackbits(values.astype(">u8").view(np.uint8).reshape(-1, 8), axis=1)
    return (bits.sum(axis=1) & 1).astype(np.int64)


def apply_pauli(pauli: str, state: np.ndarray) -> np.ndarray:
    """P|psi> via bit flips and signs, without building a matrix."""
    n = len(pauli)
    state = np.asarray(state, dtype=complex)
    if state.shape[0] != 2**n:
        raise HamiltonianError(f"state dimension {state.shape[0]} does not match {n} qubits")
    flip, phase, ys = _masks(pauli)
    idx = np.arange(2**n, dtype=np.int64)
    signs = 1 - 2 * _parity(idx & phase)
    # P|x> = i^ys (-1)^{popcount(x & phase)} |x ^ flip>
    out = np.empty_like(state)
    out[idx ^ flip] = (1j**ys) * signs * state
    return out


def pauli_expectation(pauli: str, state: np.ndarray) -> float:
    state = np.asarray(state, dtype=complex)
    return float(np.real(np.vdot(state, apply_pauli(pauli, state))))


def expectation(h: PauliHamiltonian, state: np.ndarray) -> float:
    state = np.asarray(state, dtype=complex)
    if state.shape[0] != 2**h.num_qubits:
        raise HamiltonianError(f"state dimension {state.shape[0]} does not match {h.num_qubits} qubits")
    return float(sum(coeff * pauli_expectation(pauli, state) for coeff, pauli in h.terms))


def sparse_matrix(h: PauliHamiltonian) -> sp.csr_matrix:
    n = h.num_qubits
    dim = 2**n
    idx = np.arange(dim, dtype=np.int64)
    total = sp.csr_matrix((dim, dim), dtype=complex)
    for coeff, pauli in h.terms:
        flip, phase, ys = _masks(pauli)
        vals = coeff * (1j**ys) * (1 - 2 * _parity(idx & phase))
        total = total + sp.csr_matrix((vals, (idx ^ flip, idx)), shape=(dim, dim))
    return total


def dense_matrix(h: PauliHamiltonian) -> np.ndarray:
    return sparse_matrix(h).toarray()


def exact_ground_energy(h: PauliHamiltonian) -> float:
    n = h.num_qubits
    if n > MAX_EXACT_QUBITS:
        raise HamiltonianError(f"exact diagonalization is limited to {MAX_EXACT_QUBITS} qubits, got {n}")
    if n <= _DENSE_LIMIT:
        return float(np.linalg.eigvalsh(dense_matrix(h))[0])
    vals = eigsh(sparse_matrix(h), k=1, which="SA", return_eigenvectors=False)
    return float(vals[0])
