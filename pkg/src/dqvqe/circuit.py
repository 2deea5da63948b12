"""Layered circuit IR shared by the placement, remapping, scheduling and simulation code.

Qubits are addressed as ``QubitId(qpu, local)``. A monolithic circuit keeps
everything on QPU 0. Gates are small frozen dataclasses, and a ``Circuit`` is a
tuple of layers in which no qubit appears twice.

Rotation conventions (radians):

* ``RX/RY/RZ(t) = exp(-i t P / 2)``
* ``R(l1, l2, l3) = RZ(l3) @ RY(l2) @ RZ(l1)``
* ``Z(a) = diag(1, exp(-i a))``. A ``Z`` gate with no parameter is Pauli Z.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Iterator, Sequence, Union

import numpy as np

if TYPE_CHECKING:
    from .placement import ClusterSpec


class CircuitError(ValueError):
    """Raised for malformed circuits, bad qubit references and parse failures."""


@dataclass(frozen=True, order=True)
class QubitId:
    qpu: int
    local: int

    def __post_init__(self) -> None:
        if self.qpu < 0 or self.local < 0:
            raise CircuitError(f"negative qubit id {self.qpu}:{self.local}")

    def __str__(self) -> str:
        return f"{self.qpu}:{self.local}"

    @classmethod
    def parse(cls, text: str) -> "QubitId":
        try:
            qpu, local = text.split(":")
            return cls(int(qpu), int(local))
        except ValueError as exc:
            raise CircuitError(f"bad qubit id {text!r}, expected <qpu>:<local>") from exc


def q(local: int, qpu: int = 0) -> QubitId:
    """Shorthand for monolithic addressing."""
    return QubitId(qpu, local)


@dataclass(frozen=True)
class Param:
    """Symbolic reference to entry ``index`` of a parameter vector, times ``scale``."""

    index: int
    scale: float = 1.0

    def __neg__(self) -> "Param":
        return Param(self.index, -self.scale)

    def bind(self, values: Sequence[float]) -> float:
        return self.scale * float(values[self.index])

    def __str__(self) -> str:
        if self.scale == 1.0:
            return f"${self.index}"
        if self.scale == -1.0:
            return f"-${self.index}"
        return f"{self.scale!r}*${self.index}"


Angle = Union[float, Param]

# name -> allowed parameter counts
_ARITY = {
    "X": (0,),
    "Y": (0,),
    "Z": (0, 1),
    "H": (0,),
    "RX": (1,),
    "RY": (1,),
    "RZ": (1,),
    "R": (3,),
}
SELF_ADJOINT = frozenset({"X", "Y", "H"})


@dataclass(frozen=True)
class Single:
    name: str
    target: QubitId
    params: tuple[Angle, ...] = ()

    def __post_init__(self) -> None:
        if self.name not in _ARITY:
            raise CircuitError(f"unknown gate {self.name!r}")
        if len(self.params) not in _ARITY[self.name]:
            raise CircuitError(f"{self.name} takes {_ARITY[self.name]} parameters, got {len(self.params)}")

    @property
    def qubits(self) -> tuple[QubitId, ...]:
        return (self.target,)

    @property
    def controls(self) -> tuple[QubitId, ...]:
        return ()

    @property
    def base(self) -> "Single":
        return self


@dataclass(frozen=True)
class Controlled:
    """``inner`` applied when ``control`` is 1. Nesting gives multi-controlled gates."""

    inner: Union[Single, "Controlled"]
    control: QubitId

    def __post_init__(self) -> None:
        if self.control in self.inner.qubits:
            raise CircuitError(f"control {self.control} collides with target qubits")

    @property
    def target(self) -> QubitId:
        return self.inner.target

    @property
    def controls(self) -> tuple[QubitId, ...]:
        return (self.control,) + self.inner.controls

    @property
    def base(self) -> Single:
        return self.inner.base

    @property
    def qubits(self) -> tuple[QubitId, ...]:
        return self.controls + (self.target,)


@dataclass(frozen=True)
class Measure:
    target: QubitId
    register: str

    @property
    def qubits(self) -> tuple[QubitId, ...]:
        return (self.target,)


@dataclass(frozen=True)
class ClassicallyControlled:
    inner: Single
    register: str

    @property
    def target(self) -> QubitId:
        return self.inner.target

    @property
    def qubits(self) -> tuple[QubitId, ...]:
        return (self.inner.target,)


@dataclass(frozen=True)
class EntGen:
    a: QubitId
    b: QubitId

    def __post_init__(self) -> None:
        if self.a.qpu == self.b.qpu:
            raise CircuitError("entanglement generation needs two different QPUs")

    @property
    def qubits(self) -> tuple[QubitId, ...]:
        return (self.a, self.b)


@dataclass(frozen=True)
class ClassicalComm:
    src: int
    dst: int
    register: str

    def __post_init__(self) -> None:
        if self.src == self.dst:
            raise CircuitError("classical communication needs two different QPUs")

    @property
    def qubits(self) -> tuple[QubitId, ...]:
        return ()


Gate = Union[Single, Controlled, Measure, ClassicallyControlled, EntGen, ClassicalComm]
UNITARY_KINDS = (Single, Controlled)


def gate_qpus(gate: Gate) -> tuple[int, ...]:
    """QPUs a gate involves, in first-seen order."""
    if isinstance(gate, ClassicalComm):
        return (gate.src, gate.dst)
    seen: list[int] = []
    for qb in gate.qubits:
        if qb.qpu not in seen:
            seen.append(qb.qpu)
    return tuple(seen)


def register_reads(gate: Gate) -> tuple[tuple[int, str], ...]:
    """Classical registers read, keyed by the QPU whose copy is read."""
    if isinstance(gate, ClassicallyControlled):
        return ((gate.target.qpu, gate.register),)
    if isinstance(gate, ClassicalComm):
        return ((gate.src, gate.register),)
    return ()


def register_writes(gate: Gate) -> tuple[tuple[int, str], ...]:
    if isinstance(gate, Measure):
        return ((gate.target.qpu, gate.register),)
    if isinstance(gate, ClassicalComm):
        return ((gate.dst, gate.register),)
    return ()


def _sort_key(gate: Gate) -> tuple:
    qubits = gate.qubits
    if qubits:
        low = min(qubits)
        return (low.qpu, low.local, format_gate(gate))
    assert isinstance(gate, ClassicalComm)
    return (gate.src, -1, format_gate(gate))


@dataclass(frozen=True)
class Circuit:
    layers: tuple[tuple[Gate, ...], ...]
    num_qubits: int
    cluster: "ClusterSpec | None" = field(default=None, compare=False)

    def __post_init__(self) -> None:
        layers = tuple(tuple(sorted(layer, key=_sort_key)) for layer in self.layers)
        object.__setattr__(self, "layers", layers)
        for i, layer in enumerate(layers):
            seen: set[QubitId] = set()
            for gate in layer:
                for qb in gate.qubits:
                    if qb in seen:
                        raise CircuitError(f"qubit {qb} used twice in layer {i}")
                    seen.add(qb)
                    _check_range(qb, self.cluster)

    def __iter__(self) -> Iterator[tuple[Gate, ...]]:
        return iter(self.layers)

    def __len__(self) -> int:
        return len(self.layers)

    def gates(self) -> list[Gate]:
        return [g for layer in self.layers for g in layer]

    def qubits(self) -> tuple[QubitId, ...]:
        return tuple(sorted({qb for g in self.gates() for qb in g.qubits}))

    def is_unitary(self) -> bool:
        return all(isinstance(g, UNITARY_KINDS) for g in self.gates())

    def then(self, other: "Circuit") -> "Circuit":
        """Sequential composition keeping both layerings."""
        return Circuit(self.layers + other.layers, max(self.num_qubits, other.num_qubits), self.cluster or other.cluster)

    def bind(self, values: Sequence[float]) -> "Circuit":
        def bind_gate(gate: Gate) -> Gate:
            if isinstance(gate, Single):
                if any(isinstance(p, Param) for p in gate.params):
                    params = tuple(p.bind(values) if isinstance(p, Param) else p for p in gate.params)
                    return Single(gate.name, gate.target, params)
                return gate
            if isinstance(gate, Controlled):
                return Controlled(bind_gate(gate.inner), gate.control)
            if isinstance(gate, ClassicallyControlled):
                return ClassicallyControlled(bind_gate(gate.inner), gate.register)
            return gate

        return Circuit(tuple(tuple(bind_gate(g) for g in layer) for layer in self.layers), self.num_qubits, self.cluster)

    def parameter_count(self) -> int:
        top = -1
        for gate in self.gates():
            base = getattr(gate, "base", None) or getattr(gate, "inner", None)
            if isinstance(base, Single):
                for p in base.params:
                    if isinstance(p, Param):
                        top = max(top, p.index)
        return top + 1


def _check_range(qb: QubitId, cluster: "ClusterSpec | None") -> None:
    if cluster is None:
        return
    sizes = cluster.qpu_sizes
    if qb.qpu >= len(sizes) or qb.local >= sizes[qb.qpu]:
        raise CircuitError(f"qubit {qb} outside cluster {list(sizes)}")


def layerize(gates: Iterable[Gate], num_qubits: int | None = None, cluster: "ClusterSpec | None" = None) -> Circuit:
    """Greedy ASAP layering.

    Each gate lands in the first layer after every earlier gate sharing a qubit.
    Classical registers are tracked per (QPU, name) copy so that a read follows
    its write and a write follows earlier reads.
    """
    gates = list(gates)
    qubit_ready: dict[QubitId, int] = {}
    last_write: dict[tuple[int, str], int] = {}
    last_read: dict[tuple[int, str], int] = {}
    layers: list[list[Gate]] = []
    for gate in gates:
        for qb in gate.qubits:
            if num_qubits is not None and cluster is None and (qb.qpu != 0 or qb.local >= num_qubits):
                raise CircuitError(f"qubit {qb} outside a {num_qubits}-qubit monolithic circuit")
            _check_range(qb, cluster)
        slot = max((qubit_ready.get(qb, 0) for qb in gate.qubits), default=0)
        for reg in register_reads(gate):
            slot = max(slot, last_write.get(reg, -1) + 1)
        for reg in register_writes(gate):
            slot = max(slot, last_write.get(reg, -1) + 1, last_read.get(reg, -1) + 1)
        while len(layers) <= slot:
            layers.append([])
        layers[slot].append(gate)
        for qb in gate.qubits:
            qubit_ready[qb] = slot + 1
        for reg in register_reads(gate):
            last_read[reg] = max(last_read.get(reg, -1), slot)
        for reg in register_writes(gate):
            last_write[reg] = slot
    if num_qubits is None:
        num_qubits = len({qb for g in gates for qb in g.qubits})
    return Circuit(tuple(tuple(layer) for layer in layers), num_qubits, cluster)


def adjoint(gate: Gate) -> Gate:
    if isinstance(gate, Controlled):
        return Controlled(adjoint(gate.inner), gate.control)
    if not isinstance(gate, Single):
        raise CircuitError(f"{type(gate).__name__} has no adjoint")
    if gate.name in SELF_ADJOINT or (gate.name == "Z" and not gate.params):
        return gate
    if gate.name == "R":
        l1, l2, l3 = gate.params
        return Single("R", gate.target, (-l3, -l2, -l1))
    return Single(gate.name, gate.target, tuple(-p for p in gate.params))


def dagger(c: Circuit) -> Circuit:
    if not c.is_unitary():
        raise CircuitError("dagger needs a unitary-only circuit")
    return Circuit(tuple(tuple(adjoint(g) for g in layer) for layer in reversed(c.layers)), c.num_qubits, c.cluster)


def lift_control(c: Circuit, ctl: QubitId) -> Circuit:
    if not c.is_unitary():
        raise CircuitError("lift_control needs a unitary-only circuit")
    if ctl in c.qubits():
        raise CircuitError(f"control {ctl} is already used by the circuit")
    # every lifted gate shares the new control, so each gets its own layer
    return Circuit(tuple((Controlled(g, ctl),) for g in c.gates()), c.num_qubits, c.cluster)


# ---------------------------------------------------------------- matrices

_X = np.array([[0, 1], [1, 0]], dtype=complex)
_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
_Z = np.array([[1, 0], [0, -1]], dtype=complex)
_H = np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2)


def rx(t: float) -> np.ndarray:
    c, s = math.cos(t / 2), math.sin(t / 2)
    return np.array([[c, -1j * s], [-1j * s, c]])


def ry(t: float) -> np.ndarray:
    c, s = math.cos(t / 2), math.sin(t / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


def rz(t: float) -> np.ndarray:
    return np.diag([np.exp(-0.5j * t), np.exp(0.5j * t)])


def single_matrix(gate: Single) -> np.ndarray:
    if any(isinstance(p, Param) for p in gate.params):
        raise CircuitError(f"unbound parameter in {format_gate(gate)}")
    name, params = gate.name, gate.params
    if name == "X":
        return _X
    if name == "Y":
        return _Y
    if name == "H":
        return _H
    if name == "Z":
        return _Z if not params else np.diag([1.0, np.exp(-1j * params[0])])
    if name == "RX":
        return rx(params[0])
    if name == "RY":
        return ry(params[0])
    if name == "RZ":
        return rz(params[0])
    l1, l2, l3 = params
    return rz(l3) @ ry(l2) @ rz(l1)


# ---------------------------------------------------------------- text format

_TEXT_NAMES = {"x": "X", "y": "Y", "z": "Z", "h": "H", "rx": "RX", "ry": "RY", "rz": "RZ", "r": "R"}
LAYER_BREAK = "--"


def _format_angle(p: Angle) -> str:
    return str(p) if isinstance(p, Param) else repr(float(p))


def _parse_angle(text: str) -> Angle:
    try:
        if "$" in text:
            scale_text, _, index = text.partition("$")
            scale = {"": 1.0, "-": -1.0}.get(scale_text)
            if scale is None:
                scale = float(scale_text.rstrip("*"))
            return Param(int(index), scale)
        return float(text)
    except ValueError as exc:
        raise CircuitError(f"bad angle {text!r}") from exc


def _format_unitary(gate: Single | Controlled) -> str:
    base = gate.base
    name = "c" * len(gate.controls) + base.name.lower()
    parts = [name] + [str(c) for c in gate.controls] + [str(base.target)] + [_format_angle(p) for p in base.params]
    return " ".join(parts)


def format_gate(gate: Gate) -> str:
    if isinstance(gate, (Single, Controlled)):
        return _format_unitary(gate)
    if isinstance(gate, Measure):
        return f"measure {gate.target} -> {gate.register}"
    if isinstance(gate, ClassicallyControlled):
        return f"if {gate.register} {_format_unitary(gate.inner)}"
    if isinstance(gate, EntGen):
        return f"entgen {gate.a} {gate.b}"
    return f"ccomm {gate.src} -> {gate.dst} {gate.register}"


def _parse_unitary(tokens: list[str]) -> Single | Controlled:
    word = tokens[0].lower()
    stripped = word.lstrip("c")
    n_controls = len(word) - len(stripped)
    if stripped not in _TEXT_NAMES:
        raise CircuitError(f"unknown gate {tokens[0]!r}")
    name = _TEXT_NAMES[stripped]
    qubit_tokens = tokens[1 : 2 + n_controls]
    if len(qubit_tokens) != n_controls + 1:
        raise CircuitError(f"{word} needs {n_controls + 1} qubits")
    qubits = [QubitId.parse(t) for t in qubit_tokens]
    params = tuple(_parse_angle(t) for t in tokens[2 + n_controls :])
    gate: Single | Controlled = Single(name, qubits[-1], params)
    for ctl in reversed(qubits[:-1]):
        gate = Controlled(gate, ctl)
    return gate


def parse_gate(line: str) -> Gate:
    tokens = line.split()
    if not tokens:
        raise CircuitError("empty gate line")
    head = tokens[0].lower()
    if head == "measure":
        if len(tokens) != 4 or tokens[2] != "->":
            raise CircuitError(f"bad measure line {line!r}")
        return Measure(QubitId.parse(tokens[1]), tokens[3])
    if head == "if":
        if len(tokens) < 4:
            raise CircuitError(f"bad conditional line {line!r}")
        inner = _parse_unitary(tokens[2:])
        if not isinstance(inner, Single):
            raise CircuitError("classically controlled gates must be single-qubit")
        return ClassicallyControlled(inner, tokens[1])
    if head == "entgen":
        if len(tokens) != 3:
            raise CircuitError(f"bad entgen line {line!r}")
        return EntGen(QubitId.parse(tokens[1]), QubitId.parse(tokens[2]))
    if head == "ccomm":
        if len(tokens) != 5 or tokens[2] != "->":
            raise CircuitError(f"bad ccomm line {line!r}")
        try:
            return ClassicalComm(int(tokens[1]), int(tokens[3]), tokens[4])
        except ValueError as exc:
            raise CircuitError(f"bad ccomm line {line!r}") from exc
    return _parse_unitary(tokens)


def parse_circuit(text: str, cluster: "ClusterSpec | None" = None) -> Circuit:
    """Parse the line format.

    Without ``--`` separators the gates are layered ASAP. With separators each
    block between them becomes exactly one layer, which lets distributed
    circuits round-trip with their layering intact.
    """
    num_qubits: int | None = None
    blocks: list[list[Gate]] = [[]]
    explicit = False
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            if line == LAYER_BREAK:
                explicit = True
                blocks.append([])
                continue
            if line.lower().startswith("qubits"):
                parts = line.split()
                if len(parts) != 2:
                    raise CircuitError("header must be 'qubits <n>'")
                num_qubits = int(parts[1])
                continue
            blocks[-1].append(parse_gate(line))
        except (CircuitError, ValueError) as exc:
            raise CircuitError(f"line {lineno}: {exc}") from exc
    if num_qubits is None:
        raise CircuitError("missing 'qubits <n>' header")
    if not explicit:
        return layerize(blocks[0], num_qubits, cluster)
    layers = tuple(tuple(b) for b in blocks if b)
    return Circuit(layers, num_qubits, cluster)


def format_circuit(c: Circuit, keep_layers: bool = True) -> str:
    lines = [f"qubits {c.num_qubits}"]
    for i, layer in enumerate(c.layers):
        if keep_layers and i:
            lines.append(LAYER_BREAK)
        lines.extend(format_gate(g) for g in layer)
    return "\n".join(lines) + "\n"
