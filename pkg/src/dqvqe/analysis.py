"""Weighted-runtime comparison of execution strategies and Ansatz capacity curves.

The runtime model counts gate classes, not real circuits. A Pauli estimate
costs ``gates(n)`` blocks of one CNOT, one single-qubit gate and one
measurement; a block inside a split Ansatz also pays for a full cat
entangle/disentangle exchange. Every round finishes with an output merge per
participating QPU. Only orderings and feasibility cutoffs are meaningful.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Sequence

from .placement import ClusterSpec, PlacementError, greedy_round, max_ansatz_size
from .schedule import GateTimeTable

STRATEGIES = ("parallel", "one_qpu", "distributed")


@dataclass(frozen=True)
class RuntimeModel:
    pauli_constant: float = 1.0
    gate_constant: float = 1.0

    def paulis(self, n: int) -> int:
        return max(1, math.ceil(self.pauli_constant * n**4))

    def gates(self, n: int) -> int:
        return max(1, math.ceil(self.gate_constant * math.log2(n)))


@dataclass(frozen=True)
class RuntimeRow:
    n: int
    paulis: int
    parallel: float | None
    one_qpu: float | None
    distributed: float | None

    def as_dict(self) -> dict:
        return {"n": self.n, "paulis": self.paulis, "parallel": self.parallel, "one_qpu": self.one_qpu, "distributed": self.distributed}


def block_cost(times: GateTimeTable) -> float:
    return times.duration("cnot") + times.duration("single") + times.duration("measure")


def cat_cost(times: GateTimeTable) -> float:
    """Extra time a non-local CNOT pays: pair, two measurements, two messages, three corrections."""
    return (
        times.duration("entgen")
        + 2 * times.duration("measure")
        + 2 * times.duration("ccomm")
        + 3 * times.duration("single")
        + times.duration("cnot")
    )


def weighted_runtime(cluster: ClusterSpec, n: int, times: GateTimeTable | None = None, model: RuntimeModel | None = None) -> RuntimeRow:
    if n < 2:
        raise PlacementError("runtime model needs n >= 2")
    times = times or GateTimeTable()
    model = model or RuntimeModel()
    p = model.paulis(n)
    g = model.gates(n)
    local = g * block_cost(times)
    split = g * (block_cost(times) + cat_cost(times))
    merge = times.duration("merge")

    # every QPU runs its own whole Ansatz copy, no entanglement between QPUs
    parallel = None
    if n + 1 <= min(cluster.qpu_sizes):
        m = len(cluster)
        parallel = math.ceil(p / m) * (local + merge * m)

    # one monolithic QPU as large as the whole cluster, one Pauli at a time
    one_qpu = None
    if n + 1 <= cluster.total:
        one_qpu = p * (local + merge)

    distributed = None
    template, _ = greedy_round(cluster, n, list(range(min(p, cluster.total))))
    if template:
        def round_time(allocs) -> float:
            used = {j for a in allocs for j in a.qpus}
            return max(split if a.is_split else local for a in allocs) + merge * len(used)

        full, rest = divmod(p, len(template))
        distributed = full * round_time(template) + (round_time(template[:rest]) if rest else 0.0)
    return RuntimeRow(n, p, parallel, one_qpu, distributed)


def runtime_table(cluster: ClusterSpec, ns: Sequence[int], times: GateTimeTable | None = None, model: RuntimeModel | None = None) -> list[RuntimeRow]:
    return [weighted_runtime(cluster, n, times, model) for n in ns]


def max_ansatz_curve(qpu_size: int, max_qpus: int) -> list[tuple[int, int]]:
    """(QPU count, largest Ansatz) for 1..max_qpus identical QPUs."""
    if qpu_size <= 2:
        raise PlacementError("QPU size must exceed 2")
    if max_qpus < 1:
        raise PlacementError("need at least one QPU")
    return [(m, max_ansatz_size(ClusterSpec((qpu_size,) * m))) for m in range(1, max_qpus + 1)]


def _fmt(value: float | None) -> str:
    return "" if value is None else f"{value:g}"


def runtime_csv(rows: Sequence[RuntimeRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["n", "paulis", *STRATEGIES])
    for r in rows:
        writer.writerow([r.n, r.paulis, _fmt(r.parallel), _fmt(r.one_qpu), _fmt(r.distributed)])
    return buf.getvalue()


def capacity_csv(series: Sequence[tuple[int, Sequence[tuple[int, int]]]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["qpu_size", "qpus", "max_ansatz"])
    for size, rows in series:
        for m, best in rows:
            writer.writerow([size, m, best])
    return buf.getvalue()
