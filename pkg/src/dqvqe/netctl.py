"""Discrete-event control plane for running per-QPU schedules.

Nodes are actors that only talk through ``Bus`` messages. The one shared
object is the quantum fabric, a ``SimState`` standing in for the physical
qubits: gates land on it in the same order as a direct ``run_circuit`` pass
when clocks agree, so measurement outcomes match under a shared seed.
"""

from __future__ import annotations

import heapq
import itertools
import json
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from .circuit import ClassicallyControlled, EntGen, Measure, QubitId
from .schedule import GateTimeTable, TimedCommand, _command_class
from .statevector import SimState, SimulationError, apply_gate

QUANTUM_COMMANDS = frozenset({"SINGLE", "TWO_QUBIT", "SEND_ENT", "REC_ENT"})
CLASSICAL_COMMANDS = frozenset({"SEND_CLA", "REC_CLA"})


class NetError(ValueError):
    pass


# ------------------------------------------------------------------ config


@dataclass(frozen=True)
class Faults:
    drop: frozenset[int] = frozenset()  # global send counters to lose
    nack: frozenset[str] = frozenset()  # node ids that refuse instructions
    reject_vendor: frozenset[int] = frozenset()
    unreachable_vendor: frozenset[int] = frozenset()
    flip_validation: Mapping[int, tuple[int, ...]] = field(default_factory=dict)  # vendor -> flipped pair positions

    @classmethod
    def from_json(cls, data: Mapping) -> "Faults":
        return cls(
            frozenset(int(k) for k in data.get("drop", ())),
            frozenset(data.get("nack", ())),
            frozenset(int(k) for k in data.get("reject_vendor", ())),
            frozenset(int(k) for k in data.get("unreachable_vendor", ())),
            {int(k): tuple(v) for k, v in data.get("flip_validation", {}).items()},
        )


@dataclass(frozen=True)
class Vendor:
    capacity: int = 1 << 30
    latest_start: float = 1e9
    times: GateTimeTable | None = None


@dataclass(frozen=True)
class Scenario:
    topology: str = "centralized"
    latency: float = 0.0
    local_latency: float = 0.0
    link_latency: Mapping[tuple[str, str], float] = field(default_factory=dict)
    timeout: float = 50.0
    start_margin: float = 1.0
    beacon_period: float | None = None
    clock_residual: Mapping[int, float] = field(default_factory=dict)
    drift: Mapping[int, float] = field(default_factory=dict)
    vendors: Mapping[int, Vendor] = field(default_factory=dict)
    validation_pairs: int = 100
    validation_checked: int = 20
    faults: Faults = field(default_factory=Faults)

    def __post_init__(self) -> None:
        if self.topology not in ("centralized", "decentralized"):
            raise NetError(f"unknown topology {self.topology!r}")
        if self.timeout <= 0:
            raise NetError("timeout must be positive")

    @classmethod
    def from_json(cls, data: Mapping) -> "Scenario":
        links = {}
        for key, value in data.get("link_latency", {}).items():
            src, _, dst = key.partition("->")
            links[(src.strip(), dst.strip())] = float(value)
        vendors = {}
        for key, v in data.get("vendors", {}).items():
            times = GateTimeTable.parse(v["times"]) if "times" in v else None
            vendors[int(key)] = Vendor(int(v.get("capacity", 1 << 30)), float(v.get("latest_start", 1e9)), times)
        clock = data.get("clock", {})
        return cls(
            data.get("topology", "centralized"),
            float(data.get("latency", 0.0)),
            float(data.get("local_latency", 0.0)),
            links,
            float(data.get("timeout", 50.0)),
            float(data.get("start_margin", 1.0)),
            clock.get("beacon_period"),
            {int(k): float(v) for k, v in clock.get("residual", {}).items()},
            {int(k): float(v) for k, v in clock.get("drift", {}).items()},
            vendors,
            int(data.get("validation", {}).get("pairs", 100)),
            int(data.get("validation", {}).get("checked", 20)),
            Faults.from_json(data.get("faults", {})),
        )


# ------------------------------------------------------------------ bus


@dataclass(frozen=True)
class Message:
    seq: int
    src: str
    dst: str
    kind: str
    payload: Any
    sent: float


class Bus:
    """Events ordered by (time, deliveries first, command order, sequence)."""

    def __init__(self, scenario: Scenario, trace: list[dict]):
        self.scenario = scenario
        self.trace = trace
        self.now = 0.0
        self._heap: list = []
        self._seq = itertools.count()
        self._sent = 0
        self._last: dict[tuple[str, str], float] = {}
        self.nodes: dict[str, "Node"] = {}

    def latency(self, src: str, dst: str) -> float:
        if (src, dst) in self.scenario.link_latency:
            return self.scenario.link_latency[(src, dst)]
        same = self.nodes[src].qpu is not None and self.nodes[src].qpu == self.nodes[dst].qpu
        return self.scenario.local_latency if same else self.scenario.latency

    def send(self, src: str, dst: str, kind: str, payload: Any = None) -> None:
        count = self._sent
        self._sent += 1
        if count in self.scenario.faults.drop:
            self.trace.append({"t": self.now, "event": "drop", "src": src, "dst": dst, "kind": kind})
            return
        if dst not in self.nodes:
            self.trace.append({"t": self.now, "event": "undeliverable", "src": src, "dst": dst, "kind": kind})
            return
        # per-link FIFO even if latencies were to change
        when = max(self.now + self.latency(src, dst), self._last.get((src, dst), 0.0))
        self._last[(src, dst)] = when
        msg = Message(next(self._seq), src, dst, kind, payload, self.now)
        heapq.heappush(self._heap, (when, 0, 0, msg.seq, msg))

    def call_at(self, when: float, order: int, fn: Callable[[], None]) -> None:
        heapq.heappush(self._heap, (max(when, self.now), 1, order, next(self._seq), fn))

    def run(self) -> None:
        while self._heap:
            when, _, _, _, item = heapq.heappop(self._heap)
            self.now = when
            if isinstance(item, Message):
                self.trace.append({"t": when, "event": "recv", "src": item.src, "dst": item.dst, "kind": item.kind})
                self.nodes[item.dst].receive(item)
            else:
                item()


# ------------------------------------------------------------------ fabric


class Fabric:
    """Physical qubits, shared by every QPU the way real hardware would be."""

    def __init__(self, qubits: Iterable[QubitId], seed: int):
        self.state = SimState.zero(qubits, seed)
        self.measurements: list[tuple[str, int]] = []

    def apply(self, gate) -> int | None:
        apply_gate(self.state, gate)
        if isinstance(gate, Measure):
            bit = self.state.measurements[-1][1]
            self.measurements.append((gate.register, bit))
            return bit
        return None


# ------------------------------------------------------------------ nodes


class Node:
    role = "node"

    def __init__(self, node_id: str, qpu: int | None, net: "Network"):
        self.id = node_id
        self.qpu = qpu
        self.net = net
        self.halted = False

    @property
    def bus(self) -> Bus:
        return self.net.bus

    def send(self, dst: str, kind: str, payload: Any = None) -> None:
        self.bus.send(self.id, dst, kind, payload)

    def log(self, event: str, **detail: Any) -> None:
        self.net.trace.append({"t": self.bus.now, "event": event, "node": self.id, **detail})

    def receive(self, msg: Message) -> None:
        if msg.kind == "Abort":
            if not self.halted:
                self.halted = True
                self.log("halt", reason=msg.payload)
            self.on_abort(msg)
            return
        if self.halted:
            return
        getattr(self, "on_" + msg.kind, self.on_unknown)(msg)

    def on_abort(self, msg: Message) -> None:
        pass

    def on_unknown(self, msg: Message) -> None:
        self.log("ignored", kind=msg.kind)


class Executor(Node):
    """Shared behaviour of QGN and CCN nodes: accept instructions, run them on time."""

    def __init__(self, node_id: str, qpu: int, net: "Network", boss: str):
        super().__init__(node_id, qpu, net)
        self.boss = boss
        self.commands: list[TimedCommand] = []
        self.done = 0
        self.regs: dict[str, int] = {}
        self.last_sync = 0.0

    @property
    def residual(self) -> float:
        return self.net.scenario.clock_residual.get(self.qpu, 0.0)

    @property
    def drift(self) -> float:
        return self.net.scenario.drift.get(self.qpu, 0.0)

    def global_time(self, local: float) -> float:
        # local(t) = t + residual + drift * (t - last_sync)
        return (local - self.residual + self.drift * self.last_sync) / (1.0 + self.drift)

    def on_InstructionSet(self, msg: Message) -> None:
        if self.id in self.net.scenario.faults.nack:
            self.send(msg.src, "Nack", f"{self.id} refused its instructions")
            return
        self.commands = list(msg.payload)
        self.send(msg.src, "Ack", self.id)

    def on_ClockBeacon(self, msg: Message) -> None:
        self.last_sync = self.bus.now

    def on_StartTime(self, msg: Message) -> None:
        start = float(msg.payload)
        if not self.commands:
            self.finish()
        for cmd in self.commands:
            when = self.global_time(start + cmd.time)
            self.bus.call_at(when, cmd.link, lambda cmd=cmd: self._run(cmd))

    def on_RegisterUpdate(self, msg: Message) -> None:
        reg, bit = msg.payload
        if bit is None:
            self.regs.pop(reg, None)
        else:
            self.regs[reg] = bit

    def _run(self, cmd: TimedCommand) -> None:
        if self.halted:
            return
        self.log("exec", command=cmd.command, args=list(cmd.args), link=cmd.link)
        try:
            complete = self.execute(cmd)
        except (SimulationError, NetError) as exc:
            self.fail(str(exc))
            return
        if complete:
            self.step_done()

    def step_done(self) -> None:
        self.done += 1
        if self.done == len(self.commands):
            self.finish()

    def fail(self, reason: str) -> None:
        self.log("fail", reason=reason)
        self.halted = True
        self.send(self.boss, "Nack", reason)

    def wait_for(self, link: int, check: Callable[[], bool]) -> None:
        def expire() -> None:
            if not self.halted and not check():
                self.fail(f"rendezvous for command {link} timed out")

        self.bus.call_at(self.bus.now + self.net.scenario.timeout, 1 << 30, expire)

    def execute(self, cmd: TimedCommand) -> bool:  # pragma: no cover
        raise NotImplementedError

    def finish(self) -> None:  # pragma: no cover
        raise NotImplementedError


class QuantumGatesNode(Executor):
    role = "QuantumGates"

    def __init__(self, node_id: str, qpu: int, net: "Network", boss: str):
        super().__init__(node_id, qpu, net, boss)
        self.pairs: set[int] = set()
        self.waiting: dict[int, TimedCommand] = {}
        self.results: list[tuple[str, int]] = []

    def execute(self, cmd: TimedCommand) -> bool:
        gate = cmd.gate
        if cmd.command in ("SEND_ENT", "REC_ENT"):
            self.send(self.net.qgn(int(cmd.args[0])), "EntHalf", cmd.link)
            if cmd.link in self.pairs:
                self._pair_ready(cmd)
                return True
            self.waiting[cmd.link] = cmd
            self.wait_for(cmd.link, lambda: cmd.link not in self.waiting)
            return False
        for other in self.waiting.values():
            if set(other.qubits) & set(cmd.qubits):
                raise NetError(f"{cmd.command} {' '.join(cmd.args)} needs a pair that is not established yet")
        if isinstance(gate, ClassicallyControlled):
            if gate.register not in self.regs:
                raise NetError(f"register {gate.register} has not reached {self.id}")
            if self.regs[gate.register]:
                self.net.fabric.apply(gate.inner)
            return True
        bit = self.net.fabric.apply(gate)
        if isinstance(gate, Measure):
            self.regs[gate.register] = bit
            self.results.append((gate.register, bit))
            self.send(self.net.ccn(self.qpu), "RegisterUpdate", (gate.register, bit))
        return True

    def on_EntHalf(self, msg: Message) -> None:
        link = msg.payload
        self.pairs.add(link)
        cmd = self.waiting.pop(link, None)
        if cmd is not None:
            try:
                self._pair_ready(cmd)
            except SimulationError as exc:
                self.fail(str(exc))
                return
            self.step_done()

    def _pair_ready(self, cmd: TimedCommand) -> None:
        # both halves have checked in; the receiving side owns pair creation
        if cmd.command == "REC_ENT":
            self.net.fabric.apply(cmd.gate)

    def finish(self) -> None:
        self.send(self.boss, "MeasurementResults", (self.qpu, list(self.results)))


class ClassicalCommNode(Executor):
    role = "ClassicalComm"

    def __init__(self, node_id: str, qpu: int, net: "Network", boss: str):
        super().__init__(node_id, qpu, net, boss)
        self.inbox: dict[int, tuple[str, int]] = {}
        self.waiting: set[int] = set()

    def execute(self, cmd: TimedCommand) -> bool:
        reg = cmd.args[1]
        if cmd.command == "SEND_CLA":
            if reg not in self.regs:
                raise NetError(f"register {reg} is not available on {self.id}")
            self.send(self.net.ccn(int(cmd.args[0])), "ClassicalBit", (cmd.link, reg, self.regs[reg]))
            return True
        if cmd.link in self.inbox:
            self._deliver(cmd.link)
            return True
        # a stale value from an earlier exchange must not be used meanwhile
        self.regs.pop(reg, None)
        self.send(self.net.qgn(self.qpu), "RegisterUpdate", (reg, None))
        self.waiting.add(cmd.link)
        self.wait_for(cmd.link, lambda: cmd.link not in self.waiting)
        return False

    def on_ClassicalBit(self, msg: Message) -> None:
        link, reg, bit = msg.payload
        self.inbox[link] = (reg, bit)
        if link in self.waiting:
            self.waiting.discard(link)
            self._deliver(link)
            self.step_done()

    def _deliver(self, link: int) -> None:
        reg, bit = self.inbox[link]
        self.regs[reg] = bit
        self.send(self.net.qgn(self.qpu), "RegisterUpdate", (reg, bit))

    def finish(self) -> None:
        self.send(self.boss, "Done", self.qpu)


class TimeRefNode(Node):
    role = "TimeRef"

    def __init__(self, node_id: str, qpu: int | None, net: "Network", targets: Sequence[str]):
        super().__init__(node_id, qpu, net)
        self.targets = list(targets)

    def beacon(self) -> None:
        if self.halted or self.net.status != "running":
            return
        for t in self.targets:
            self.send(t, "ClockBeacon", self.bus.now)
        period = self.net.scenario.beacon_period
        if period:
            self.bus.call_at(self.bus.now + period, -1, self.beacon)


class Controller(Node):
    """Centralized controller: hands out instructions, starts, collects, aborts."""

    role = "Controller"

    def __init__(self, node_id: str, net: "Network", per_qpu: Mapping[int, Sequence[TimedCommand]], qpu: int | None = None, boss: str | None = None):
        super().__init__(node_id, qpu, net)
        self.per_qpu = per_qpu
        self.boss = boss
        self.acks: set[str] = set()
        self.reports: set[str] = set()
        self.results: dict[int, list] = {}
        self.started = False

    def workers(self) -> list[str]:
        return [w for j in self.per_qpu for w in (self.net.qgn(j), self.net.ccn(j))]

    def dispatch(self) -> None:
        for j, cmds in self.per_qpu.items():
            self.send(self.net.qgn(j), "InstructionSet", [c for c in cmds if c.command in QUANTUM_COMMANDS])
            self.send(self.net.ccn(j), "InstructionSet", [c for c in cmds if c.command in CLASSICAL_COMMANDS])
        self.bus.call_at(self.bus.now + self.net.scenario.timeout, -1, self._ack_deadline)

    def _ack_deadline(self) -> None:
        if not self.halted and len(self.acks) < len(self.workers()):
            self.abort("instruction acknowledgements timed out")

    def on_Ack(self, msg: Message) -> None:
        self.acks.add(msg.src)
        if len(self.acks) == len(self.workers()):
            self.ready()

    def ready(self) -> None:
        self.start(self.bus.now + self.net.scenario.start_margin)

    def start(self, when: float) -> None:
        self.started = True
        for w in self.workers():
            self.send(w, "StartTime", when)
        horizon = max((c.end for cmds in self.per_qpu.values() for c in cmds), default=0.0)
        self.bus.call_at(when + horizon + self.net.scenario.timeout, -1, self._run_deadline)

    def _run_deadline(self) -> None:
        if not self.halted and len(self.reports) < len(self.workers()):
            self.abort("execution did not complete in time")

    def on_Nack(self, msg: Message) -> None:
        self.abort(str(msg.payload))

    def on_MeasurementResults(self, msg: Message) -> None:
        qpu, results = msg.payload
        self.results[qpu] = results
        self._report(msg.src)

    def on_Done(self, msg: Message) -> None:
        self._report(msg.src)

    def _report(self, src: str) -> None:
        self.reports.add(src)
        if len(self.reports) == len(self.workers()):
            self.complete()

    def complete(self) -> None:
        self.net.finish("completed")

    def abort(self, reason: str) -> None:
        if self.halted:
            return
        self.halted = True
        self.log("abort", reason=reason)
        for w in self.workers():
            self.send(w, "Abort", reason)
        self.net.finish("aborted", reason)


class VendorController(Controller):
    """Per-QPU controller in the decentralized topology."""

    def __init__(self, node_id: str, net: "Network", qpu: int, cmds: Sequence[TimedCommand], user: str):
        super().__init__(node_id, net, {qpu: list(cmds)}, qpu=qpu, boss=user)
        self.vendor = net.scenario.vendors.get(qpu, Vendor())
        self.pair_bits: dict[int, np.ndarray] = {}
        self.validation: dict[int, dict] = {}

    def on_GateTimeQuery(self, msg: Message) -> None:
        if self.qpu in self.net.scenario.faults.unreachable_vendor:
            self.log("silent")
            return
        times = self.vendor.times or GateTimeTable()
        self.send(msg.src, "GateTimes", dict(times.durations))

    def on_ScheduleProposal(self, msg: Message) -> None:
        if self.qpu in self.net.scenario.faults.unreachable_vendor:
            return
        problem = self._check(msg.payload)
        if problem:
            self.send(self.boss, "Nack", f"vendor {self.qpu}: {problem}")
            return
        self.per_qpu = {self.qpu: list(msg.payload)}
        self.dispatch()

    def _check(self, cmds: Sequence[TimedCommand]) -> str | None:
        if self.qpu in self.net.scenario.faults.reject_vendor:
            return "plan rejected"
        used = {qb for c in cmds for qb in c.qubits if int(qb.split(":")[0]) == self.qpu}
        if len(used) > self.vendor.capacity:
            return f"plan needs {len(used)} qubits, capacity is {self.vendor.capacity}"
        times = self.vendor.times or GateTimeTable()
        for c in cmds:
            if c.duration < times.duration(_command_class(c), [self.qpu]):
                return f"{c.command} at {c.time} is shorter than this QPU's gate time"
        return None

    def ready(self) -> None:
        self.send(self.boss, "Ack", (self.qpu, self.vendor.latest_start))

    def on_ValidateWith(self, msg: Message) -> None:
        peer = int(msg.payload)
        sc = self.net.scenario
        mine, theirs = entangled_bits(sc.validation_pairs, self.net.rng_for(1, self.qpu, peer))
        flips = sc.faults.flip_validation.get(peer, ())
        theirs = theirs.copy()
        theirs[list(flips)] ^= 1
        self.pair_bits[peer] = mine
        self.net.vendor_ctl(peer).pair_bits[self.qpu] = theirs  # the other halves, physically delivered
        rng = self.net.rng_for(2, self.qpu, peer)
        positions = sorted(rng.choice(sc.validation_pairs, sc.validation_checked, replace=False).tolist())
        self.validation[peer] = {"positions": positions}
        self.send(self.net.vendor(peer), "EntValidationMsg", ("check", positions, mine[positions].tolist()))
        self.bus.call_at(self.bus.now + sc.timeout, -1, lambda: self._validation_deadline(peer))

    def on_EntValidationMsg(self, msg: Message) -> None:
        stage, positions, values = msg.payload
        peer = self.net.qpu_of(msg.src)
        mine = self.pair_bits[peer][positions].tolist()
        if stage == "check":
            self.send(msg.src, "EntValidationMsg", ("reply", positions, mine))
            if mine != values:
                self.send(self.boss, "Nack", f"vendor {self.qpu}: entanglement with {peer} failed validation")
            return
        ok = mine == values
        self.validation[peer]["verdict"] = ok
        self.send(self.boss, "ContractMsg", (self.qpu, peer, ok))

    def _validation_deadline(self, peer: int) -> None:
        if not self.halted and "verdict" not in self.validation.get(peer, {}):
            self.send(self.boss, "Nack", f"vendor {self.qpu}: validation with {peer} timed out")

    def on_ClockSync(self, msg: Message) -> None:
        self.net.timeref(self.qpu).beacon()

    def on_StartTime(self, msg: Message) -> None:
        self.start(float(msg.payload))

    def on_Abort_forward(self, reason: str) -> None:
        for w in self.workers():
            self.send(w, "Abort", reason)

    def on_abort(self, msg: Message) -> None:
        self.on_Abort_forward(str(msg.payload))

    def abort(self, reason: str) -> None:
        # vendors escalate to the user, who decides for everyone
        if not self.halted:
            self.send(self.boss, "Nack", reason)

    def complete(self) -> None:
        self.send(self.boss, "Results", (self.qpu, self.results.get(self.qpu, [])))


class UserNode(Node):
    """Drives the decentralized agreement and start negotiation."""

    role = "User"

    def __init__(self, node_id: str, net: "Network", vendors: Sequence[int], pairs: Sequence[tuple[int, int]]):
        super().__init__(node_id, None, net)
        self.vendors = list(vendors)
        self.pairs = list(pairs)
        self.phase = "query"
        self.got: dict[str, dict] = defaultdict(dict)

    def begin(self) -> None:
        for j in self.vendors:
            self.send(self.net.vendor(j), "GateTimeQuery")
        self._deadline("query")

    def _deadline(self, phase: str) -> None:
        def check() -> None:
            if not self.halted and self.phase == phase:
                self.abort(f"no complete response during {phase}")

        self.bus.call_at(self.bus.now + self.net.scenario.timeout, -1, check)

    def on_GateTimes(self, msg: Message) -> None:
        self.got["times"][msg.src] = msg.payload
        if self.phase == "query" and len(self.got["times"]) == len(self.vendors):
            self.phase = "propose"
            for j in self.vendors:
                self.send(self.net.vendor(j), "ScheduleProposal", self.net.per_qpu[j])
            self._deadline("propose")

    def on_Ack(self, msg: Message) -> None:
        qpu, latest = msg.payload
        self.got["acks"][qpu] = latest
        if self.phase == "propose" and len(self.got["acks"]) == len(self.vendors):
            self.phase = "validate"
            if not self.pairs:
                self._sync()
                return
            for a, b in self.pairs:
                self.send(self.net.vendor(a), "ValidateWith", b)
            self._deadline("validate")

    def on_ContractMsg(self, msg: Message) -> None:
        a, b, ok = msg.payload
        if not ok:
            self.abort(f"entanglement between {a} and {b} failed validation")
            return
        self.got["valid"][(a, b)] = ok
        if self.phase == "validate" and len(self.got["valid"]) == len(self.pairs):
            self._sync()

    def _sync(self) -> None:
        self.phase = "sync"
        for j in self.vendors:
            self.send(self.net.vendor(j), "ClockSync")
        start = min(self.got["acks"].values())
        earliest = self.bus.now + self.net.scenario.start_margin
        if start < earliest:
            self.abort(f"latest common start {start} is already past")
            return
        self.phase = "run"
        self.log("contract", start=start)
        for j in self.vendors:
            self.send(self.net.vendor(j), "StartTime", start)
        self._deadline_run(start)

    def _deadline_run(self, start: float) -> None:
        horizon = max((c.end for cmds in self.net.per_qpu.values() for c in cmds), default=0.0)

        def check() -> None:
            if not self.halted and self.phase == "run":
                self.abort("execution did not complete in time")

        self.bus.call_at(start + horizon + self.net.scenario.timeout, -1, check)

    def on_Results(self, msg: Message) -> None:
        qpu, results = msg.payload
        self.got["results"][qpu] = results
        if len(self.got["results"]) == len(self.vendors):
            self.phase = "done"
            self.net.finish("completed")

    def on_Nack(self, msg: Message) -> None:
        self.abort(str(msg.payload))

    def abort(self, reason: str) -> None:
        if self.halted:
            return
        self.halted = True
        self.phase = "aborted"
        self.log("abort", reason=reason)
        for j in self.vendors:
            self.send(self.net.vendor(j), "Abort", reason)
        self.net.finish("aborted", reason)


# ------------------------------------------------------------------ network


@dataclass
class ExecutionTrace:
    status: str
    reason: str | None
    entries: list[dict]
    measurements: list[tuple[str, int]]
    state: SimState

    def executed(self) -> list[dict]:
        return [e for e in self.entries if e["event"] == "exec"]

    def to_jsonl(self) -> str:
        lines = [json.dumps(e, sort_keys=True) for e in self.entries]
        lines.append(json.dumps({"event": "status", "status": self.status, "reason": self.reason, "measurements": self.measurements}))
        return "\n".join(lines) + "\n"


class Network:
    def __init__(self, per_qpu: Mapping[int, Sequence[TimedCommand]], scenario: Scenario, seed: int = 0):
        self.per_qpu = {int(k): list(v) for k, v in per_qpu.items()}
        self.scenario = scenario
        self.seed = seed
        self.trace: list[dict] = []
        self.bus = Bus(scenario, self.trace)
        qubits = {QubitId.parse(qb) for cmds in self.per_qpu.values() for c in cmds for qb in c.qubits}
        self.fabric = Fabric(qubits, seed)
        self.status = "running"
        self.reason: str | None = None

    @staticmethod
    def qgn(j: int) -> str:
        return f"qgn{j}"

    @staticmethod
    def ccn(j: int) -> str:
        return f"ccn{j}"

    @staticmethod
    def vendor(j: int) -> str:
        return f"ctl{j}"

    def timeref(self, j: int) -> TimeRefNode:
        return self.bus.nodes[f"trn{j}"]  # type: ignore[return-value]

    def vendor_ctl(self, j: int) -> VendorController:
        return self.bus.nodes[self.vendor(j)]  # type: ignore[return-value]

    def qpu_of(self, node_id: str) -> int:
        return self.bus.nodes[node_id].qpu  # type: ignore[return-value]

    def rng_for(self, *key: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, *key])

    def add(self, node: Node) -> Node:
        self.bus.nodes[node.id] = node
        return node

    def finish(self, status: str, reason: str | None = None) -> None:
        if self.status == "running":
            self.status = status
            self.reason = reason
            self.trace.append({"t": self.bus.now, "event": "status", "status": status, "reason": reason})

    def result(self) -> ExecutionTrace:
        return ExecutionTrace(self.status, self.reason, self.trace, list(self.fabric.measurements), self.fabric.state)


def run_centralized(per_qpu: Mapping[int, Sequence[TimedCommand]], scenario: Scenario | None = None, seed: int = 0) -> ExecutionTrace:
    scenario = scenario or Scenario()
    net = Network(per_qpu, scenario, seed)
    ctl = net.add(Controller("controller", net, net.per_qpu))
    workers = []
    for j in net.per_qpu:
        workers.append(net.add(QuantumGatesNode(net.qgn(j), j, net, ctl.id)).id)
        workers.append(net.add(ClassicalCommNode(net.ccn(j), j, net, ctl.id)).id)
    trn = net.add(TimeRefNode("timeref", None, net, workers))
    net.bus.call_at(0.0, -1, trn.beacon)  # type: ignore[attr-defined]
    net.bus.call_at(0.0, 0, ctl.dispatch)  # type: ignore[attr-defined]
    net.bus.run()
    return net.result()


def entangled_pairs_between(per_qpu: Mapping[int, Sequence[TimedCommand]]) -> list[tuple[int, int]]:
    pairs = set()
    for j, cmds in per_qpu.items():
        for c in cmds:
            if c.command == "SEND_ENT":
                peer = int(c.args[0])
                pairs.add((min(j, peer), max(j, peer)))
    return sorted(pairs)


def run_decentralized(per_qpu: Mapping[int, Sequence[TimedCommand]], scenario: Scenario | None = None, seed: int = 0) -> ExecutionTrace:
    scenario = scenario or Scenario(topology="decentralized")
    net = Network(per_qpu, scenario, seed)
    user = net.add(UserNode("user", net, sorted(net.per_qpu), entangled_pairs_between(net.per_qpu)))
    for j, cmds in net.per_qpu.items():
        ctl = net.add(VendorController(net.vendor(j), net, j, cmds, user.id))
        qg = net.add(QuantumGatesNode(net.qgn(j), j, net, ctl.id))
        cc = net.add(ClassicalCommNode(net.ccn(j), j, net, ctl.id))
        net.add(TimeRefNode(f"trn{j}", j, net, [qg.id, cc.id]))
    net.bus.call_at(0.0, 0, user.begin)  # type: ignore[attr-defined]
    net.bus.run()
    return net.result()


def run_scenario(per_qpu: Mapping[int, Sequence[TimedCommand]], scenario: Scenario, seed: int = 0) -> ExecutionTrace:
    if scenario.topology == "centralized":
        return run_centralized(per_qpu, scenario, seed)
    return run_decentralized(per_qpu, scenario, seed)


# ------------------------------------------------------------------ protocol 1


def entangled_bits(n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Generate n Bell pairs and measure both halves in Z."""
    a, b = QubitId(0, 0), QubitId(1, 0)
    left = np.empty(n, dtype=np.int64)
    right = np.empty(n, dtype=np.int64)
    for k in range(n):
        state = SimState.zero((a, b), rng)
        apply_gate(state, EntGen(a, b))
        apply_gate(state, Measure(a, "a"))
        apply_gate(state, Measure(b, "b"))
        left[k] = state.registers[(0, "a")]
        right[k] = state.registers[(1, "b")]
    return left, right


@dataclass(frozen=True)
class ValidationOutcome:
    status: str  # ack, nack or abort
    positions: tuple[int, ...]
    mismatches: tuple[int, ...]


def entanglement_validation(
    n: int,
    t: int,
    seed: int = 0,
    flips: Iterable[int] = (),
    lose_reply: bool = False,
) -> ValidationOutcome:
    """Check t randomly chosen pairs out of n; any disagreement means nack."""
    if not 1 <= t < n:
        raise NetError(f"need 1 <= t < n, got t={t}, n={n}")
    rng = np.random.default_rng(seed)
    mine, theirs = entangled_bits(n, rng)
    theirs = theirs.copy()
    flips = list(flips)
    if flips:
        theirs[flips] ^= 1
    positions = tuple(sorted(rng.choice(n, t, replace=False).tolist()))
    if lose_reply:
        return ValidationOutcome("abort", positions, ())
    bad = tuple(p for p in positions if mine[p] != theirs[p])
    return ValidationOutcome("nack" if bad else "ack", positions, bad)


# ------------------------------------------------------------------ clocks


@dataclass(frozen=True)
class ClockModel:
    offsets: tuple[float, ...]
    drifts: tuple[float, ...]
    beacon_period: float | None = None
    residuals: tuple[float, ...] | None = None  # correction error left after each beacon

    def __post_init__(self) -> None:
        if len(self.offsets) != len(self.drifts):
            raise NetError("offsets and drifts must have one entry per node")
        if self.beacon_period is not None and self.beacon_period <= 0:
            raise NetError("beacon period must be positive")
        if self.residuals is not None and len(self.residuals) != len(self.offsets):
            raise NetError("residuals must have one entry per node")


def clock_sync(model: ClockModel, duration: float) -> float:
    """Largest pairwise clock disagreement over [0, duration].

    Errors grow linearly between beacons and reset to the residual at each
    beacon (the first at t=0), so checking both ends of every interval is exact.
    """
    offsets = np.array(model.offsets, dtype=float)
    drifts = np.array(model.drifts, dtype=float)
    if model.beacon_period is None:
        ends = [offsets, offsets + drifts * duration]
        return float(max(np.ptp(e) for e in ends))
    reset = np.zeros_like(offsets) if model.residuals is None else np.array(model.residuals, dtype=float)
    worst = 0.0
    t = 0.0
    while t < duration or t == 0.0:
        span = min(model.beacon_period, duration - t)
        worst = max(worst, float(np.ptp(reset)), float(np.ptp(reset + drifts * span)))
        t += model.beacon_period
        if duration <= 0:
            break
    return worst
