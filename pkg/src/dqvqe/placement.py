"""Ansatz placement across a cluster of QPUs.

Two solvers produce round-based schedules. ``greedy_distribute`` is the
round-robin largest-first heuristic. ``cp_distribute`` and ``cp_schedule`` solve
the exact constraint program by memoised backtracking.

Each placed Ansatz needs its ``n`` data qubits plus one QPE ancilla. When it is
split over k > 1 QPUs, every QPU it touches also reserves two communication
qubits. The split QPUs are joined by a chain of k - 1 links.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

COMM_PER_QPU = 2


class PlacementError(ValueError):
    """The instance cannot be solved."""


@dataclass(frozen=True)
class ClusterSpec:
    qpu_sizes: tuple[int, ...]

    def __post_init__(self) -> None:
        sizes = tuple(int(s) for s in self.qpu_sizes)
        object.__setattr__(self, "qpu_sizes", sizes)
        if not sizes:
            raise PlacementError("a cluster needs at least one QPU")
        if any(s < 1 for s in sizes):
            raise PlacementError(f"QPU sizes must be positive, got {list(sizes)}")

    @classmethod
    def parse(cls, text: str) -> "ClusterSpec":
        body = ",".join(line.split("#", 1)[0].strip() for line in text.splitlines()).strip(",")
        try:
            return cls(tuple(int(tok) for tok in body.replace(" ", "").split(",") if tok))
        except ValueError as exc:
            raise PlacementError(f"bad cluster description {text!r}") from exc

    def __len__(self) -> int:
        return len(self.qpu_sizes)

    @property
    def total(self) -> int:
        return sum(self.qpu_sizes)


@dataclass(frozen=True)
class AnsatzAllocation:
    pauli_index: int
    per_qpu: tuple[int, ...]
    qpe_qpu: int
    comm_pairs: tuple[tuple[int, int], ...] = ()

    @property
    def qpus(self) -> tuple[int, ...]:
        """QPUs holding data qubits, QPE QPU first, then chain order."""
        if not self.comm_pairs:
            return (self.qpe_qpu,)
        order = [self.comm_pairs[0][0]]
        for a, b in self.comm_pairs:
            order.append(b)
        return tuple(order)

    @property
    def is_split(self) -> bool:
        return bool(self.comm_pairs)

    def usage(self) -> list[int]:
        """Qubits this allocation occupies on each QPU (data + QPE + comm)."""
        use = list(self.per_qpu)
        use[self.qpe_qpu] += 1
        for j in {j for pair in self.comm_pairs for j in pair}:
            use[j] += COMM_PER_QPU
        return use

    def to_json(self) -> dict:
        return {
            "pauliIndex": self.pauli_index,
            "perQpu": list(self.per_qpu),
            "qpeQpu": self.qpe_qpu,
            "commPairs": [list(p) for p in self.comm_pairs],
        }

    @classmethod
    def from_json(cls, data: dict) -> "AnsatzAllocation":
        return cls(
            int(data["pauliIndex"]),
            tuple(int(x) for x in data["perQpu"]),
            int(data["qpeQpu"]),
            tuple((int(a), int(b)) for a, b in data.get("commPairs", [])),
        )


@dataclass(frozen=True)
class Schedule:
    cluster: ClusterSpec
    ansatz_size: int
    rounds: tuple[tuple[AnsatzAllocation, ...], ...] = field(default=())

    @property
    def round_counts(self) -> tuple[int, ...]:
        return tuple(len(r) for r in self.rounds)

    @property
    def pauli_count(self) -> int:
        return sum(self.round_counts)

    def allocations(self) -> list[AnsatzAllocation]:
        return [a for r in self.rounds for a in r]

    def idle_qubits(self) -> list[int]:
        """Unused qubits per round."""
        return [self.cluster.total - sum(sum(a.usage()) for a in r) for r in self.rounds]

    def to_json(self) -> dict:
        return {
            "cluster": list(self.cluster.qpu_sizes),
            "ansatzSize": self.ansatz_size,
            "rounds": [[a.to_json() for a in r] for r in self.rounds],
        }

    @classmethod
    def from_json(cls, data: dict) -> "Schedule":
        return cls(
            ClusterSpec(tuple(data["cluster"])),
            int(data["ansatzSize"]),
            tuple(tuple(AnsatzAllocation.from_json(a) for a in r) for r in data["rounds"]),
        )


# ------------------------------------------------------------------ greedy


def split_capacity(sizes: Sequence[int], j: int) -> int:
    """Data qubits a prefix of ``j`` QPUs can host."""
    if j == 1:
        return sizes[0] - 1
    return (sizes[0] - 3) + sum(s - 2 for s in sizes[1:j])


def does_not_fit(sorted_sizes: Sequence[int], n: int) -> bool:
    return all(split_capacity(sorted_sizes, j) < n for j in range(1, len(sorted_sizes) + 1))


def _place_one(free: dict[int, int], n: int, pauli_index: int, m: int) -> AnsatzAllocation | None:
    """Place a single Ansatz on the largest QPUs, mutating ``free``."""
    order = sorted(free, key=lambda j: (-free[j], j))
    sizes = [free[j] for j in order]
    if does_not_fit(sizes, n):
        return None
    for j in range(1, len(order) + 1):
        if split_capacity(sizes, j) >= n:
            break
    chosen = order[:j]
    per_qpu = [0] * m
    if j == 1:
        per_qpu[chosen[0]] = n
        free[chosen[0]] -= n + 1
        return AnsatzAllocation(pauli_index, tuple(per_qpu), chosen[0])
    remaining = n
    for k, qpu in enumerate(chosen):
        reserve = 3 if k == 0 else 2
        take = min(remaining, free[qpu] - reserve)
        if take <= 0:
            # degenerate capacities where a prefix QPU cannot host any data qubit
            return None
        per_qpu[qpu] = take
        remaining -= take
    for k, qpu in enumerate(chosen):
        free[qpu] -= per_qpu[qpu] + (3 if k == 0 else 2)
    pairs = tuple(zip(chosen[:-1], chosen[1:]))
    return AnsatzAllocation(pauli_index, tuple(per_qpu), chosen[0], pairs)


def greedy_round(cluster: ClusterSpec, n: int, pending: Sequence[int]) -> tuple[list[AnsatzAllocation], list[int]]:
    """One round: place what fits, return (placed, deferred)."""
    m = len(cluster)
    free = {j: s for j, s in enumerate(cluster.qpu_sizes)}
    placed: list[AnsatzAllocation] = []
    for pos, idx in enumerate(pending):
        alloc = _place_one(free, n, idx, m)
        if alloc is None:
            # capacity only shrinks inside a round, so nothing later fits either
            return placed, list(pending[pos:])
        placed.append(alloc)
        for j in [j for j, s in free.items() if s == 0]:
            del free[j]
    return placed, []


def greedy_distribute(cluster: ClusterSpec, n: int, p: int) -> Schedule:
    if n < 1:
        raise PlacementError("Ansatz size must be at least 1")
    if p < 0:
        raise PlacementError("Pauli count must be non-negative")
    pending = list(range(1, p + 1))
    rounds = []
    while pending:
        placed, pending = greedy_round(cluster, n, pending)
        if not placed:
            raise PlacementError(f"a {n}-qubit Ansatz does not fit cluster {list(cluster.qpu_sizes)}")
        rounds.append(tuple(placed))
    return Schedule(cluster, n, tuple(rounds))


# ------------------------------------------------------------------ exact CP


@dataclass(frozen=True)
class CpResult:
    feasible: bool
    allocations: tuple[AnsatzAllocation, ...] = ()
    sum_x: int = 0
    sum_z: int = 0


def _compositions(total: int, parts: int, caps: Sequence[int]) -> Iterable[tuple[int, ...]]:
    """Positive compositions of ``total`` with part k bounded by caps[k]."""
    if parts == 1:
        if 1 <= total <= caps[0]:
            yield (total,)
        return
    for first in range(1, min(total - parts + 1, caps[0]) + 1):
        for rest in _compositions(total - first, parts - 1, caps[1:]):
            yield (first,) + rest


@lru_cache(maxsize=64)
def _shapes(sizes: tuple[int, ...], n: int) -> tuple[tuple[int, tuple[int, ...], AnsatzAllocation], ...]:
    """All single-Ansatz placements as (comm cost, usage vector, allocation).

    Sorted by cost, then by allocation so that the search visits them in a
    fixed order.
    """
    m = len(sizes)
    out = []
    for k in range(1, m + 1):
        for subset in itertools.combinations(range(m), k):
            comm = COMM_PER_QPU if k > 1 else 0
            for qpe in subset:
                caps = [sizes[j] - comm - (1 if j == qpe else 0) for j in subset]
                if min(caps) < 1:
                    continue
                for parts in _compositions(n, k, caps):
                    per_qpu = [0] * m
                    for j, x in zip(subset, parts):
                        per_qpu[j] = x
                    others = [j for j in subset if j != qpe]
                    chain = (qpe,) + tuple(others)
                    pairs = tuple(zip(chain[:-1], chain[1:]))
                    alloc = AnsatzAllocation(0, tuple(per_qpu), qpe, pairs)
                    cost = 4 * (k - 1)  # z counted over ordered QPU pairs, 2 qubits each side
                    out.append((cost, tuple(alloc.usage()), alloc))
    out.sort(key=lambda s: (s[0], tuple(-x for x in s[2].per_qpu), s[2].qpe_qpu))
    return tuple(out)


def cp_distribute(cluster: ClusterSpec, n: int, m: int) -> CpResult:
    """Exact solution of the placement program for ``m`` Ansatz copies.

    With every Ansatz fully placed the data-qubit total is fixed at m*n, so the
    search minimises communication qubits and returns the lexicographically
    first optimum in shape order.
    """
    if n < 1 or m < 1:
        raise PlacementError("Ansatz size and count must be at least 1")
    sizes = cluster.qpu_sizes
    if m * (n + 1) > cluster.total:
        return CpResult(False)
    shapes = _shapes(sizes, n)
    if not shapes:
        return CpResult(False)
    min_cost = shapes[0][0]
    inf = math.inf

    @lru_cache(maxsize=None)
    def best(start: int, free: tuple[int, ...], left: int) -> tuple[float, tuple[int, ...]]:
        if left == 0:
            return 0, ()
        if sum(free) < left * (n + 1):
            return inf, ()
        top: tuple[float, tuple[int, ...]] = (inf, ())
        for s in range(start, len(shapes)):
            cost, use, _ = shapes[s]
            if cost + (left - 1) * min_cost >= top[0]:
                # shapes are sorted by cost, later ones cannot improve
                break
            if any(u > f for u, f in zip(use, free)):
                continue
            rest = tuple(f - u for f, u in zip(free, use))
            sub_cost, sub_path = best(s, rest, left - 1)
            if cost + sub_cost < top[0]:
                top = (cost + sub_cost, (s,) + sub_path)
        return top

    cost, path = best(0, sizes, m)
    if cost == inf:
        return CpResult(False)
    allocs = tuple(
        AnsatzAllocation(i + 1, shapes[s][2].per_qpu, shapes[s][2].qpe_qpu, shapes[s][2].comm_pairs)
        for i, s in enumerate(path)
    )
    return CpResult(True, allocs, m * n, int(cost))


def cp_max_fit(cluster: ClusterSpec, n: int, limit: int) -> CpResult:
    """Largest feasible copy count up to ``limit``, by binary search."""
    hi = min(limit, cluster.total // (n + 1))
    lo, best = 0, CpResult(False)
    while lo < hi:
        mid = (lo + hi + 1) // 2
        res = cp_distribute(cluster, n, mid)
        if res.feasible:
            lo, best = mid, res
        else:
            hi = mid - 1
    return best


def cp_schedule(cluster: ClusterSpec, n: int, p: int) -> Schedule:
    if p < 0:
        raise PlacementError("Pauli count must be non-negative")
    rounds = []
    next_index = 1
    remaining = p
    while remaining:
        res = cp_max_fit(cluster, n, remaining)
        if not res.feasible:
            raise PlacementError(f"a {n}-qubit Ansatz does not fit cluster {list(cluster.qpu_sizes)}")
        count = len(res.allocations)
        rounds.append(
            tuple(
                AnsatzAllocation(next_index + k, a.per_qpu, a.qpe_qpu, a.comm_pairs)
                for k, a in enumerate(res.allocations)
            )
        )
        next_index += count
        remaining -= count
    return Schedule(cluster, n, tuple(rounds))


def distribute(cluster: ClusterSpec, n: int, p: int, solver: str = "greedy") -> Schedule:
    if solver == "greedy":
        return greedy_distribute(cluster, n, p)
    if solver == "cp":
        return cp_schedule(cluster, n, p)
    raise PlacementError(f"unknown solver {solver!r}")


# ------------------------------------------------------------------ checks


def max_ansatz_size(cluster: ClusterSpec) -> int:
    sizes = cluster.qpu_sizes
    if len(sizes) == 1:
        return sizes[0] - 1
    if any(s <= 2 for s in sizes):
        raise PlacementError("every QPU needs more than 2 qubits to take part in a split")
    return sum(sizes) - 2 * len(sizes) - 1


def allocation_violations(alloc: AnsatzAllocation, n: int, m: int) -> list[str]:
    """Per-Ansatz constraints: one QPE qubit, full coverage, connectivity."""
    errs = []
    tag = f"pauli {alloc.pauli_index}"
    if len(alloc.per_qpu) != m:
        return [f"{tag}: perQpu has {len(alloc.per_qpu)} entries for {m} QPUs"]
    if any(x < 0 for x in alloc.per_qpu):
        errs.append(f"{tag}: negative qubit count")
    if sum(alloc.per_qpu) != n:
        errs.append(f"{tag}: {sum(alloc.per_qpu)} data qubits placed, need {n}")
    if not 0 <= alloc.qpe_qpu < m or alloc.per_qpu[alloc.qpe_qpu] <= 0:
        errs.append(f"{tag}: QPE qubit not co-located with Ansatz qubits")
    used = {j for j, x in enumerate(alloc.per_qpu) if x > 0}
    pairs = {tuple(sorted(p)) for p in alloc.comm_pairs}
    if any(a == b for a, b in pairs):
        errs.append(f"{tag}: self-paired QPU")
    if len(used) == 1:
        if pairs:
            errs.append(f"{tag}: single-QPU Ansatz reserves communication qubits")
    else:
        if len(used) - 1 != len(pairs):
            errs.append(f"{tag}: {len(used)} QPUs used but {len(pairs)} communication pairs")
        touched = {j for p in pairs for j in p}
        if touched != used:
            errs.append(f"{tag}: communication pairs do not match the QPUs used")
        elif not _connected(used, pairs):
            errs.append(f"{tag}: communication pairs do not connect the split")
    return errs


def _connected(nodes: set[int], pairs: Iterable[tuple[int, int]]) -> bool:
    nodes = set(nodes)
    adj: dict[int, set[int]] = {j: set() for j in nodes}
    for a, b in pairs:
        adj.setdefault(a, set()).add(b)
        adj.setdefault(b, set()).add(a)
    start = next(iter(nodes))
    seen, stack = {start}, [start]
    while stack:
        for nxt in adj[stack.pop()] - seen:
            seen.add(nxt)
            stack.append(nxt)
    return nodes <= seen


def validate_schedule(schedule: Schedule, p: int | None = None) -> list[str]:
    """All placement constraints over every round; empty list means valid."""
    cluster, n = schedule.cluster, schedule.ansatz_size
    m = len(cluster)
    errs: list[str] = []
    seen: list[int] = []
    for r, allocs in enumerate(schedule.rounds, 1):
        load = [0] * m
        for alloc in allocs:
            errs.extend(f"round {r}: {e}" for e in allocation_violations(alloc, n, m))
            if len(alloc.per_qpu) == m:
                load = [a + b for a, b in zip(load, alloc.usage())]
            seen.append(alloc.pauli_index)
        for j, (used, cap) in enumerate(zip(load, cluster.qpu_sizes)):
            if used > cap:
                errs.append(f"round {r}: QPU {j} uses {used} of {cap} qubits")
    if p is not None and sorted(seen) != list(range(1, p + 1)):
        errs.append("Pauli indices do not cover 1..p exactly once")
    elif len(seen) != len(set(seen)):
        errs.append("a Pauli index appears more than once")
    return errs
