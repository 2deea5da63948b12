"""Rewrite monolithic circuits for a multi-QPU layout.

Controlled gates whose control and target sit on different QPUs are replaced
by a cat-entangler / cat-disentangler session that uses one Bell pair and two
classical bits:

    slot 0       CNOT control -> e1                    (QPU i)
    slot 1       measure e1 -> a
    slot 2       send a from i to s; X on e1 if a       (reset e1)
    slot 3       X on e2 if a                           (e2 now mirrors the control)
    slot 4       the gate with e2 as its control        (QPU s)
    slot 4+k     folded follow-up gates sharing the control
    slot 5+n     H on e2
    slot 6+n     measure e2 -> b
    slot 7+n     X on e2 if b (reset); send b from s to i
    slot 8+n     Z on the original control if b

The Bell pair itself is generated in the layer just before the session.
Slot 7+n holds the reset and the send back; they are kept one layer after the
measurement so that every layer reads only registers written earlier.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .circuit import (
    Circuit,
    CircuitError,
    ClassicalComm,
    ClassicallyControlled,
    Controlled,
    EntGen,
    Gate,
    Measure,
    QubitId,
    Single,
    dagger,
    lift_control,
)
from .placement import COMM_PER_QPU, AnsatzAllocation, ClusterSpec


class RemapError(ValueError):
    pass


@dataclass(frozen=True)
class QubitMap:
    """Where each monolithic qubit lives on the cluster.

    Monolithic qubit ``k < len(data)`` maps to ``data[k]``. Monolithic qubit
    ``len(data)`` is the QPE ancilla when ``qpe`` is set.
    """

    data: tuple[QubitId, ...]
    comm: tuple[tuple[int, tuple[int, ...]], ...] = ()
    qpe: QubitId | None = None

    def __post_init__(self) -> None:
        used = list(self.data) + ([self.qpe] if self.qpe else [])
        used += [QubitId(j, loc) for j, locs in self.comm for loc in locs]
        if len(set(used)) != len(used):
            raise RemapError("qubit map is not injective")

    @classmethod
    def build(cls, data: Sequence[QubitId], comm: Mapping[int, Sequence[int]] | None = None, qpe: QubitId | None = None) -> "QubitMap":
        comm = comm or {}
        return cls(tuple(data), tuple(sorted((j, tuple(v)) for j, v in comm.items())), qpe)

    @property
    def comm_qubits(self) -> dict[int, tuple[int, ...]]:
        return dict(self.comm)

    @property
    def num_data(self) -> int:
        return len(self.data)

    def resolve(self, qb: QubitId) -> QubitId:
        if qb.qpu != 0:
            raise RemapError(f"{qb} is not a monolithic address")
        if qb.local < len(self.data):
            return self.data[qb.local]
        if qb.local == len(self.data) and self.qpe is not None:
            return self.qpe
        raise RemapError(f"qubit {qb} is not covered by the map")

    def all_qubits(self) -> tuple[QubitId, ...]:
        extra = [QubitId(j, loc) for j, locs in self.comm for loc in locs]
        return tuple(sorted(set(self.data) | set(extra) | ({self.qpe} if self.qpe else set())))

    def comm_list(self) -> tuple[QubitId, ...]:
        return tuple(QubitId(j, loc) for j, locs in self.comm for loc in locs)

    def qpus(self) -> tuple[int, ...]:
        return tuple(sorted({qb.qpu for qb in self.all_qubits()}))

    def to_json(self) -> dict:
        return {
            "data": [str(qb) for qb in self.data],
            "comm": {str(j): list(locs) for j, locs in self.comm},
            "qpe": str(self.qpe) if self.qpe else None,
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "QubitMap":
        try:
            qpe = data.get("qpe")
            return cls.build(
                [QubitId.parse(t) for t in data["data"]],
                {int(j): [int(x) for x in locs] for j, locs in data.get("comm", {}).items()},
                QubitId.parse(qpe) if qpe else None,
            )
        except (KeyError, TypeError, CircuitError) as exc:
            raise RemapError(f"bad qubit map: {exc}") from exc


def layout_round(cluster: ClusterSpec, allocations: Sequence[AnsatzAllocation]) -> list[QubitMap]:
    """Concrete, disjoint qubit maps for every allocation in one round.

    Data qubits fill the allocation's QPUs in chain order, then come the QPE
    ancilla and two communication qubits on every QPU of a split.
    """
    cursor = [0] * len(cluster)
    maps = []
    for alloc in allocations:
        data: list[QubitId] = []
        for j in alloc.qpus:
            for _ in range(alloc.per_qpu[j]):
                data.append(QubitId(j, cursor[j]))
                cursor[j] += 1
        qpe = QubitId(alloc.qpe_qpu, cursor[alloc.qpe_qpu])
        cursor[alloc.qpe_qpu] += 1
        comm: dict[int, list[int]] = {}
        if alloc.is_split:
            for j in alloc.qpus:
                comm[j] = list(range(cursor[j], cursor[j] + COMM_PER_QPU))
                cursor[j] += COMM_PER_QPU
        maps.append(QubitMap.build(data, comm, qpe))
    for j, (used, cap) in enumerate(zip(cursor, cluster.qpu_sizes)):
        if used > cap:
            raise RemapError(f"round needs {used} qubits on QPU {j}, which has {cap}")
    return maps


# --------------------------------------------------------------------------- remapping


def _translate(gate: Gate, qmap: QubitMap) -> Gate:
    if isinstance(gate, Single):
        return Single(gate.name, qmap.resolve(gate.target), gate.params)
    if isinstance(gate, Controlled):
        return Controlled(_translate(gate.inner, qmap), qmap.resolve(gate.control))
    if isinstance(gate, Measure):
        return Measure(qmap.resolve(gate.target), gate.register)
    raise RemapError(f"cannot remap {type(gate).__name__}; input must be monolithic unitary gates or measurements")


def _replace_controls(gate: Controlled, swap: Mapping[QubitId, QubitId]) -> Controlled:
    inner = gate.inner
    if isinstance(inner, Controlled):
        inner = _replace_controls(inner, swap)
    return Controlled(inner, swap.get(gate.control, gate.control))


def _is_remote(gate: Gate) -> bool:
    return isinstance(gate, Controlled) and any(c.qpu != gate.target.qpu for c in gate.controls)


def _series_scan(
    layers: Sequence[Sequence[Gate]],
    after: int,
    remote_qpu: int,
    control: QubitId,
    blocked: Iterable[QubitId] = (),
) -> list[tuple[int, Gate]]:
    """Follow-up gates that can reuse the cat copy of ``control``.

    Scanning stops at the first later gate that touches ``control`` without
    being a single-control gate on it with a free target on ``remote_qpu``.
    Gates that do not touch the control are stepped over, and their qubits
    become unavailable as targets so that ordering on those qubits is kept.
    """
    found: list[tuple[int, Gate]] = []
    blocked = set(blocked)
    for li in range(after + 1, len(layers)):
        for gate in layers[li]:
            touches = control in gate.qubits
            if (
                touches
                and isinstance(gate, Controlled)
                and gate.controls == (control,)
                and gate.target.qpu == remote_qpu
                and gate.target not in blocked
            ):
                found.append((li, gate))
                continue
            if touches:
                return found
            blocked.update(gate.qubits)
    return found


def get_series_cgates(c: Circuit | Sequence[Sequence[Gate]], after_layer: int, remote_qpu: int, control: QubitId) -> list[Gate]:
    layers = c.layers if isinstance(c, Circuit) else c
    if not 0 <= after_layer < len(layers):
        raise RemapError(f"layer {after_layer} out of range")
    return [g for _, g in _series_scan(layers, after_layer, remote_qpu, control)]


@dataclass
class _CommPool:
    free: dict[int, list[int]]
    capacity: dict[int, int] = field(init=False)

    def __post_init__(self) -> None:
        self.capacity = {j: len(v) for j, v in self.free.items()}

    def need(self, gate: Controlled) -> dict[int, int]:
        demand: dict[int, int] = {}
        for c in gate.controls:
            if c.qpu != gate.target.qpu:
                demand[c.qpu] = demand.get(c.qpu, 0) + 1
                demand[gate.target.qpu] = demand.get(gate.target.qpu, 0) + 1
        return demand

    def can_ever(self, demand: Mapping[int, int]) -> bool:
        return all(self.capacity.get(j, 0) >= k for j, k in demand.items())

    def try_take(self, demand: Mapping[int, int]) -> bool:
        return all(len(self.free.get(j, [])) >= k for j, k in demand.items())

    def take(self, qpu: int) -> QubitId:
        return QubitId(qpu, self.free[qpu].pop(0))

    def give(self, qb: QubitId) -> None:
        self.free[qb.qpu].append(qb.local)
        self.free[qb.qpu].sort()


def distributed_remap(c: Circuit, qmap: QubitMap, cluster: ClusterSpec | None = None) -> Circuit:
    """Distributed equivalent of a monolithic circuit under ``qmap``."""
    work: list[list[Gate]] = [[_translate(g, qmap) for g in layer] for layer in c.layers]
    pool = _CommPool({j: list(locs) for j, locs in qmap.comm})
    out: list[list[Gate]] = [[]]  # placeholder that can receive the first Bell pairs
    counter = itertools.count()
    li = 0
    while li < len(work):
        layer = work[li]
        accepted: list[Gate] = []
        deferred: list[Gate] = []
        reserved: dict[int, int] = {}
        for gate in layer:
            if not _is_remote(gate):
                accepted.append(gate)
                continue
            demand = pool.need(gate)
            if not pool.can_ever(demand):
                missing = {j: k for j, k in demand.items() if pool.capacity.get(j, 0) < k}
                raise RemapError(f"not enough communication qubits on QPUs {sorted(missing)} for {gate}")
            total = {j: reserved.get(j, 0) + k for j, k in demand.items()}
            if all(len(pool.free.get(j, [])) >= k for j, k in total.items()):
                reserved = {**reserved, **total}
                accepted.append(gate)
            else:
                deferred.append(gate)
        if deferred:
            # gates of one layer commute, so the overflow runs in an extra layer
            work.insert(li + 1, deferred)
        _emit_layer(work, li, accepted, pool, out, counter)
        li += 1
    layers = tuple(tuple(layer) for layer in out if layer)
    return Circuit(layers, c.num_qubits, cluster)


def _emit_layer(
    work: list[list[Gate]],
    li: int,
    gates: Sequence[Gate],
    pool: _CommPool,
    out: list[list[Gate]],
    counter: Iterable[int],
) -> None:
    slots: dict[int, list[Gate]] = {}

    def put(slot: int, gate: Gate) -> None:
        slots.setdefault(slot, []).append(gate)

    touched = {qb for g in gates for qb in g.qubits}
    pending_pairs: list[EntGen] = []
    released: list[QubitId] = []
    for gate in gates:
        if not _is_remote(gate):
            put(0, gate)
            continue
        assert isinstance(gate, Controlled)
        s = gate.target.qpu
        sessions = []
        for ctl in gate.controls:
            if ctl.qpu == s:
                continue
            e1, e2 = pool.take(ctl.qpu), pool.take(s)
            a, b = next(counter), next(counter)
            sessions.append((ctl, e1, e2, f"cat{a}", f"cat{b}"))
        folded: list[Gate] = []
        if len(gate.controls) == 1:
            ctl = gate.control
            own = {gate.target}
            hits = _series_scan(work, li, s, ctl, touched - own - {ctl})
            for hit_layer, hit in hits:
                work[hit_layer].remove(hit)
                folded.append(hit)
                touched.add(hit.target)
        swap = {ctl: e2 for ctl, _, e2, _, _ in sessions}
        n = len(folded)
        for ctl, e1, e2, a, b in sessions:
            pending_pairs.append(EntGen(e1, e2))
            put(0, Controlled(Single("X", e1), ctl))
            put(1, Measure(e1, a))
            put(2, ClassicalComm(ctl.qpu, s, a))
            put(2, ClassicallyControlled(Single("X", e1), a))
            put(3, ClassicallyControlled(Single("X", e2), a))
            put(5 + n, Single("H", e2))
            put(6 + n, Measure(e2, b))
            put(7 + n, ClassicallyControlled(Single("X", e2), b))
            put(7 + n, ClassicalComm(s, ctl.qpu, b))
            put(8 + n, ClassicallyControlled(Single("Z", ctl), b))
            released.extend((e1, e2))
        put(4, _replace_controls(gate, swap))
        for k, extra in enumerate(folded, 1):
            put(4 + k, _replace_controls(extra, swap))
    if pending_pairs:
        prev = out[-1]
        prev_qubits = {qb for g in prev for qb in g.qubits}
        if all(not (set(p.qubits) & prev_qubits) for p in pending_pairs):
            prev.extend(pending_pairs)
        else:
            out.append(list(pending_pairs))
    for slot in range(max(slots, default=-1) + 1):
        out.append(slots.get(slot, []))
    for qb in released:
        pool.give(qb)


# --------------------------------------------------------------------------- alpha-QPE building blocks


def _phase_ladder(controls: Sequence[QubitId], target: QubitId) -> list[list[Gate]]:
    """Multi-controlled Z on ``target`` from a Gray-code ladder of controlled phases.

    Subsets of the controls are visited in Gray-code order; the parity of the
    current subset is accumulated with CNOTs on its lowest-index control, and a
    controlled phase of +-pi/2^(k-1) is applied from that qubit. All controls are
    restored at the end.
    """
    k = len(controls)
    if k == 0:
        return [[Single("Z", target)]]
    angle = math.pi / 2 ** (k - 1)
    layers: list[list[Gate]] = []
    prev = 0
    for i in range(1, 2**k):
        gray = i ^ (i >> 1)
        members = [j for j in range(k) if gray >> (k - 1 - j) & 1]
        acc = members[0]
        if prev:
            changed = (gray ^ prev).bit_length() - 1
            flipped = k - 1 - changed
            prev_members = [j for j in range(k) if prev >> (k - 1 - j) & 1]
            if prev_members[0] == acc:
                layers.append([Controlled(Single("X", controls[acc]), controls[flipped])])
            else:
                layers.append([Controlled(Single("X", controls[acc]), controls[prev_members[0]])])
        # Z(a) = diag(1, e^{-ia}); odd subsets add +angle of phase, even subsets remove it
        sign = -1.0 if len(members) % 2 else 1.0
        layers.append([Controlled(Single("Z", target, (sign * angle,)), controls[acc])])
        prev = gray
    return layers


def build_reflection(n: int) -> Circuit:
    """I - 2|0..0><0..0| on qubits 0..n-1, as X . multi-controlled Z . X."""
    if n < 1:
        raise RemapError("reflection needs at least one qubit")
    qs = [QubitId(0, k) for k in range(n)]
    flips = [Single("X", qb) for qb in qs]
    layers = [flips] + _phase_ladder(qs[:-1], qs[-1]) + [list(flips)]
    return Circuit(tuple(tuple(layer) for layer in layers), n)


def pauli_layer(pauli: str, qubits: Sequence[QubitId]) -> Circuit:
    if len(pauli) != len(qubits):
        raise RemapError(f"Pauli string {pauli!r} does not match {len(qubits)} qubits")
    gates = [Single(ch, qb) for ch, qb in zip(pauli, qubits) if ch != "I"]
    return Circuit((tuple(gates),) if gates else (), len(qubits))


def compose_u(r: Circuit, r_dag: Circuit, pi: Circuit, p_layer: Circuit) -> Circuit:
    """U = R Pi R^dag P R Pi R^dag P, written in time order."""
    out = p_layer
    for part in (r_dag, pi, r, p_layer, r_dag, pi, r):
        out = out.then(part)
    return out


def build_u(r: Circuit, pauli: str, n: int) -> Circuit:
    if len(pauli) != n:
        raise RemapError(f"Pauli string {pauli!r} does not act on {n} qubits")
    qs = [QubitId(0, k) for k in range(n)]
    return compose_u(r, dagger(r), build_reflection(n), pauli_layer(pauli, qs))


def build_controlled_u(r: Circuit, pauli: str, n: int) -> Circuit:
    """c-U with the QPE ancilla at monolithic index n; only the reflections are controlled."""
    qs = [QubitId(0, k) for k in range(n)]
    cpi = lift_control(build_reflection(n), QubitId(0, n))
    return compose_u(r, dagger(r), cpi, pauli_layer(pauli, qs))


def build_controlled_pi(n: int, qmap: QubitMap, cluster: ClusterSpec | None = None) -> Circuit:
    if qmap.qpe is None:
        raise RemapError("controlled reflection needs a QPE qubit in the map")
    lifted = lift_control(build_reflection(n), QubitId(0, n))
    return distributed_remap(lifted, qmap, cluster)


@dataclass(frozen=True)
class DistributedParts:
    """Remapped pieces of one Ansatz copy."""

    qmap: QubitMap
    r: Circuit
    r_dag: Circuit
    controlled_pi: Circuit

    def p_layer(self, pauli: str) -> Circuit:
        return pauli_layer(pauli, self.qmap.data)

    def controlled_u(self, pauli: str) -> Circuit:
        return compose_u(self.r, self.r_dag, self.controlled_pi, self.p_layer(pauli))


def distribute_parts(r: Circuit, qmap: QubitMap, cluster: ClusterSpec | None = None) -> DistributedParts:
    n = qmap.num_data
    return DistributedParts(
        qmap,
        distributed_remap(r, qmap, cluster),
        distributed_remap(dagger(r), qmap, cluster),
        build_controlled_pi(n, qmap, cluster),
    )
