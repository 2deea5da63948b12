"""Statevector execution of layered circuits.

Qubit order is big-endian: the first qubit in ``SimState.qubits`` is the most
significant bit of a basis index. Amplitudes are stored as a tensor with one
axis per qubit plus a trailing batch axis, so the same kernels evaluate either
a single state or every column of a unitary at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .circuit import (
    Circuit,
    ClassicalComm,
    ClassicallyControlled,
    Controlled,
    EntGen,
    Gate,
    Measure,
    QubitId,
    Single,
    single_matrix,
)

ZERO_TOL = 1e-9


class SimulationError(RuntimeError):
    pass


@dataclass
class SimState:
    """Mutable simulator state, single owner.

    ``forced`` pins measurement outcomes by register name, which is how tests
    walk every branch of a protocol.
    """

    qubits: tuple[QubitId, ...]
    tensor: np.ndarray
    registers: dict[tuple[int, str], int] = field(default_factory=dict)
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    forced: dict[str, int] = field(default_factory=dict)
    measurements: list[tuple[str, int]] = field(default_factory=list)

    @classmethod
    def zero(cls, qubits: Iterable[QubitId], seed: int | np.random.Generator = 0, batch: int = 1) -> "SimState":
        qubits = tuple(sorted(set(qubits)))
        tensor = np.zeros((2,) * len(qubits) + (batch,), dtype=complex)
        tensor[(0,) * len(qubits)] = 1.0
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        return cls(qubits, tensor, rng=rng)

    @classmethod
    def from_vector(cls, qubits: Sequence[QubitId], vector: np.ndarray, seed: int = 0) -> "SimState":
        qubits = tuple(qubits)
        if list(qubits) != sorted(set(qubits)):
            raise SimulationError("qubits must be sorted and distinct")
        vector = np.asarray(vector, dtype=complex)
        if vector.shape[0] != 2 ** len(qubits):
            raise SimulationError("vector length does not match qubit count")
        tensor = vector.reshape((2,) * len(qubits) + (-1,))
        return cls(qubits, tensor.copy(), rng=np.random.default_rng(seed))

    @property
    def index(self) -> dict[QubitId, int]:
        return {qb: i for i, qb in enumerate(self.qubits)}

    @property
    def vector(self) -> np.ndarray:
        """Amplitudes of batch column 0."""
        return self.tensor.reshape(-1, self.tensor.shape[-1])[:, 0]

    def matrix(self) -> np.ndarray:
        return self.tensor.reshape(-1, self.tensor.shape[-1])

    def norm(self) -> float:
        return float(np.linalg.norm(self.vector))

    def prob_one(self, qb: QubitId) -> float:
        axis = self.index[qb]
        sub = np.take(self.tensor, 1, axis=axis)
        return float(np.sum(np.abs(sub[..., 0]) ** 2))

    def reduced(self, keep: Sequence[QubitId]) -> np.ndarray:
        """State vector over ``keep`` after checking every other qubit is |0>."""
        idx = self.index
        drop = [qb for qb in self.qubits if qb not in set(keep)]
        for qb in drop:
            if self.prob_one(qb) > ZERO_TOL:
                raise SimulationError(f"qubit {qb} is not in |0>")
        sel = [slice(None)] * len(self.qubits) + [0]
        for qb in drop:
            sel[idx[qb]] = 0
        sub = self.tensor[tuple(sel)]
        remaining = [qb for qb in self.qubits if qb not in drop]
        order = [remaining.index(qb) for qb in keep]
        return np.transpose(sub, order).reshape(-1)


def _apply_matrix(tensor: np.ndarray, axis: int, mat: np.ndarray, controls: Sequence[int] = ()) -> np.ndarray:
    if not controls:
        out = np.tensordot(mat, tensor, axes=([1], [axis]))
        return np.moveaxis(out, 0, axis)
    sel: list = [slice(None)] * tensor.ndim
    for c in controls:
        sel[c] = 1
    sel_t = tuple(sel)
    sub = tensor[sel_t]
    sub_axis = axis - sum(1 for c in controls if c < axis)
    new = np.moveaxis(np.tensordot(mat, sub, axes=([1], [sub_axis])), 0, sub_axis)
    out = tensor.copy()
    out[sel_t] = new
    return out


def apply_gate(state: SimState, gate: Gate, index: Mapping[QubitId, int] | None = None) -> None:
    idx = index if index is not None else state.index
    try:
        if isinstance(gate, Single):
            state.tensor = _apply_matrix(state.tensor, idx[gate.target], single_matrix(gate))
        elif isinstance(gate, Controlled):
            ctl = [idx[c] for c in gate.controls]
            state.tensor = _apply_matrix(state.tensor, idx[gate.target], single_matrix(gate.base), ctl)
        elif isinstance(gate, Measure):
            _measure(state, gate, idx)
        elif isinstance(gate, ClassicallyControlled):
            key = (gate.target.qpu, gate.register)
            if key not in state.registers:
                raise SimulationError(f"register {gate.register} is not available on QPU {gate.target.qpu}")
            if state.registers[key]:
                state.tensor = _apply_matrix(state.tensor, idx[gate.target], single_matrix(gate.inner))
        elif isinstance(gate, EntGen):
            for qb in (gate.a, gate.b):
                if state.prob_one(qb) > ZERO_TOL:
                    raise SimulationError(f"entanglement target {qb} is not in |0>")
            a, b = idx[gate.a], idx[gate.b]
            state.tensor = _apply_matrix(state.tensor, a, single_matrix(Single("H", gate.a)))
            state.tensor = _apply_matrix(state.tensor, b, single_matrix(Single("X", gate.b)), [a])
        elif isinstance(gate, ClassicalComm):
            key = (gate.src, gate.register)
            if key not in state.registers:
                raise SimulationError(f"register {gate.register} is not available on QPU {gate.src}")
            state.registers[(gate.dst, gate.register)] = state.registers[key]
        else:  # pragma: no cover
            raise SimulationError(f"unsupported gate {gate!r}")
    except KeyError as exc:
        raise SimulationError(f"qubit {exc.args[0]} is not part of the simulated register") from exc


def _measure(state: SimState, gate: Measure, idx: Mapping[QubitId, int]) -> None:
    if state.tensor.shape[-1] != 1:
        raise SimulationError("measurement needs a single state, not a batch")
    axis = idx[gate.target]
    p1 = float(np.sum(np.abs(np.take(state.tensor, 1, axis=axis)) ** 2))
    total = float(np.sum(np.abs(state.tensor) ** 2))
    p1 = min(max(p1 / total, 0.0), 1.0)
    if gate.register in state.forced:
        bit = state.forced[gate.register]
        if (p1 if bit else 1.0 - p1) < ZERO_TOL:
            raise SimulationError(f"forced outcome {bit} on {gate.register} has zero probability")
    else:
        bit = int(state.rng.random() < p1)
    keep = np.take(state.tensor, bit, axis=axis)
    prob = p1 if bit else 1.0 - p1
    collapsed = np.zeros_like(state.tensor)
    sel: list = [slice(None)] * state.tensor.ndim
    sel[axis] = bit
    collapsed[tuple(sel)] = keep / np.sqrt(prob * total)
    state.tensor = collapsed
    state.registers[(gate.target.qpu, gate.register)] = bit
    state.measurements.append((gate.register, bit))


def run_circuit(c: Circuit, state: SimState, check_norm: bool = False) -> SimState:
    """Apply ``c`` layer by layer, in each layer's deterministic gate order."""
    idx = state.index
    missing = [qb for qb in c.qubits() if qb not in idx]
    if missing:
        raise SimulationError(f"circuit qubits {missing} are outside the simulated register")
    for layer in c.layers:
        for gate in layer:
            apply_gate(state, gate, idx)
            if check_norm and state.tensor.shape[-1] == 1:
                n = state.norm()
                if abs(n - 1.0) > 1e-9:
                    raise SimulationError(f"norm drifted to {n}")
    return state


def simulate(c: Circuit, qubits: Iterable[QubitId] | None = None, seed: int = 0, forced: Mapping[str, int] | None = None) -> SimState:
    """Run ``c`` from |0...0> over ``qubits`` (default: those the circuit touches)."""
    state = SimState.zero(c.qubits() if qubits is None else qubits, seed)
    state.forced = dict(forced or {})
    return run_circuit(c, state)


def circuit_unitary(c: Circuit, qubits: Sequence[QubitId] | None = None) -> np.ndarray:
    """Dense matrix of a unitary-only circuit over ``qubits`` (big-endian)."""
    if not c.is_unitary():
        raise SimulationError("circuit_unitary needs a unitary-only circuit")
    qubits = tuple(sorted(set(c.qubits()))) if qubits is None else tuple(qubits)
    order = sorted(qubits)
    state = SimState.from_vector(order, _permute_identity(qubits, order))
    run_circuit(c, state)
    mat = state.matrix()
    return _permute_rows(mat, order, qubits)


def _permute_identity(qubits: Sequence[QubitId], order: Sequence[QubitId]) -> np.ndarray:
    """Columns are basis states of ``qubits``, expressed in ``order`` layout."""
    n = len(qubits)
    eye = np.eye(2**n, dtype=complex).reshape((2,) * n + (2**n,))
    perm = [list(qubits).index(qb) for qb in order]
    return np.transpose(eye, perm + [n]).reshape(2**n, 2**n)


def _permute_rows(mat: np.ndarray, order: Sequence[QubitId], qubits: Sequence[QubitId]) -> np.ndarray:
    n = len(order)
    t = mat.reshape((2,) * n + (mat.shape[-1],))
    perm = [list(order).index(qb) for qb in qubits]
    return np.transpose(t, perm + [n]).reshape(2**n, mat.shape[-1])


def channel_unitary(
    c: Circuit,
    data: Sequence[QubitId],
    ancillas: Sequence[QubitId] = (),
    seed: int = 0,
) -> np.ndarray:
    """Action of a circuit with mid-circuit measurements on ``data``.

    Each basis column is simulated separately with the ancillas in |0>; the
    ancillas must return to |0> and the data output must not depend on the
    branch taken, otherwise a ``SimulationError`` is raised by ``reduced``.
    """
    data = tuple(data)
    if c.is_unitary() and set(c.qubits()) <= set(data):
        return circuit_unitary(c, data)
    everything = tuple(sorted(set(data) | set(ancillas) | set(c.qubits())))
    rng = np.random.default_rng(seed)
    cols = []
    for k in range(2 ** len(data)):
        bits = [(k >> (len(data) - 1 - i)) & 1 for i in range(len(data))]
        state = SimState.zero(everything, rng)
        for qb, bit in zip(data, bits):
            if bit:
                apply_gate(state, Single("X", qb))
        run_circuit(c, state)
        cols.append(state.reduced(data))
    return np.stack(cols, axis=1)
