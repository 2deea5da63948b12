"""Random circuit and qubit-map generators shared by several test files."""

from __future__ import annotations

from pathlib import Path

import numpy as np

import dqvqe
from dqvqe.circuit import Circuit, Controlled, QubitId, Single, layerize, q
from dqvqe.placement import ClusterSpec
from dqvqe.remap import QubitMap

ROTATIONS = ("RX", "RY", "RZ")
CONTROLLED = ("X", "Z", "RZ", "RY")


def random_circuit(rng: np.random.Generator, n: int, two_qubit: int, singles: int = 8) -> Circuit:
    gates = []
    slots = ["two"] * two_qubit + ["one"] * singles
    rng.shuffle(slots)
    for kind in slots:
        if kind == "two" and n > 1:
            a, b = (int(x) for x in rng.choice(n, 2, replace=False))
            name = str(rng.choice(CONTROLLED))
            params = (float(rng.uniform(-np.pi, np.pi)),) if name.startswith("R") else ()
            gates.append(Controlled(Single(name, q(b), params), q(a)))
        else:
            a = int(rng.integers(n))
            gates.append(Single(str(rng.choice(ROTATIONS)), q(a), (float(rng.uniform(-np.pi, np.pi)),)))
    return layerize(gates, n)


def random_map(rng: np.random.Generator, n: int, qpus: int) -> tuple[QubitMap, ClusterSpec]:
    """Scatter n logical qubits over ``qpus`` QPUs, each with two comm qubits."""
    owner = [int(x) for x in rng.integers(0, qpus, n)]
    cursor = [0] * qpus
    data = []
    for j in owner:
        data.append(QubitId(j, cursor[j]))
        cursor[j] += 1
    comm = {j: [cursor[j], cursor[j] + 1] for j in range(qpus)}
    sizes = tuple(cursor[j] + 2 for j in range(qpus))
    return QubitMap.build(data, comm), ClusterSpec(sizes)


def fidelity(a: np.ndarray, b: np.ndarray) -> float:
    return float(abs(np.vdot(a, b)) ** 2)


def product_input(rng: np.random.Generator, n: int) -> Circuit:
    """Random single-qubit rotations so equivalence is checked off the |0> state."""
    layer = tuple(Single("RY", q(k), (float(rng.uniform(0, np.pi)),)) for k in range(n))
    layer2 = tuple(Single("RZ", q(k), (float(rng.uniform(0, np.pi)),)) for k in range(n))
    return Circuit((layer, layer2), n)


DATA = Path(dqvqe.__file__).parent / "data"


def read_data(name: str) -> str:
    return (DATA / name).read_text()
