"""Per-QPU timestamped command schedules for distributed circuits."""

from __future__ import annotations

import csv
import io
import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .circuit import (
    Circuit,
    ClassicalComm,
    ClassicallyControlled,
    Controlled,
    EntGen,
    Gate,
    Measure,
    Single,
    format_gate,
    gate_qpus,
    parse_gate,
)

GATE_CLASSES = ("cnot", "single", "measure", "entgen", "ccomm", "merge")
DEFAULT_DURATIONS = {"cnot": 5.0, "single": 1.0, "measure": 2.0, "entgen": 8.0, "ccomm": 2.0, "merge": 3.0}
UNITS = ("weight", "ns")
_ALIASES = {"control": "cnot", "two_qubit": "cnot", "measurement": "measure", "classical": "ccomm"}

PAIRED = {"SEND_ENT": "REC_ENT", "SEND_CLA": "REC_CLA"}


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class GateTimeTable:
    durations: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_DURATIONS))
    unit: str = "weight"
    overrides: Mapping[tuple[str, int], float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.unit not in UNITS:
            raise ScheduleError(f"unknown unit {self.unit!r}")
        for key, value in list(self.durations.items()) + list(self.overrides.items()):
            if not value > 0:
                raise ScheduleError(f"duration for {key} must be positive, got {value}")

    def duration(self, cls: str, qpus: Iterable[int] = ()) -> float:
        if cls not in self.durations:
            raise ScheduleError(f"gate class {cls!r} has no duration")
        base = self.durations[cls]
        # a shared gate lasts as long as its slowest participant
        return max([self.overrides.get((cls, j), base) for j in qpus] or [base])

    @classmethod
    def parse(cls, text: str) -> "GateTimeTable":
        unit = "weight"
        durations: dict[str, float] = {}
        overrides: dict[tuple[str, int], float] = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.lower().startswith("unit:"):
                unit = line.split(":", 1)[1].strip().lower()
                continue
            if "=" not in line:
                raise ScheduleError(f"line {lineno}: expected 'class=duration'")
            key, value = (s.strip() for s in line.split("=", 1))
            name, _, qpu = key.lower().partition("@")
            name = _ALIASES.get(name, name)
            if name not in GATE_CLASSES:
                raise ScheduleError(f"line {lineno}: unknown gate class {name!r}")
            try:
                duration = float(value)
                if qpu:
                    overrides[(name, int(qpu))] = duration
                else:
                    durations[name] = duration
            except ValueError as exc:
                raise ScheduleError(f"line {lineno}: bad value in {line!r}") from exc
        merged = dict(DEFAULT_DURATIONS)
        merged.update(durations)
        return cls(merged, unit, overrides)

    def format(self) -> str:
        lines = [f"unit: {self.unit}"]
        lines += [f"{k}={v!r}" for k, v in self.durations.items()]
        lines += [f"{k}@{j}={v!r}" for (k, j), v in sorted(self.overrides.items())]
        return "\n".join(lines) + "\n"


def gate_class(gate: Gate) -> str:
    if isinstance(gate, Controlled):
        if len(gate_qpus(gate)) > 1:
            raise ScheduleError(f"non-local gate {format_gate(gate)} must be remapped before scheduling")
        return "cnot"
    if isinstance(gate, (Single, ClassicallyControlled)):
        return "single"
    if isinstance(gate, Measure):
        return "measure"
    if isinstance(gate, EntGen):
        return "entgen"
    if isinstance(gate, ClassicalComm):
        return "ccomm"
    raise ScheduleError(f"unsupported gate {gate!r}")  # pragma: no cover


@dataclass(frozen=True)
class TimedCommand:
    """One schedule row; ``link`` is the index of the global command it came from."""

    command: str
    args: tuple[str, ...]
    qpus: tuple[int, ...]
    time: float
    duration: float
    link: int
    gate: Gate | None = None
    qubits: tuple[str, ...] = ()

    @property
    def end(self) -> float:
        return self.time + self.duration

    def to_json(self) -> dict:
        out = {
            "command": self.command,
            "args": list(self.args),
            "qpus": list(self.qpus),
            "time": self.time,
            "duration": self.duration,
            "link": self.link,
            "qubits": list(self.qubits),
        }
        if self.gate is not None:
            out["gate"] = format_gate(self.gate)
        return out

    @classmethod
    def from_json(cls, data: Mapping) -> "TimedCommand":
        gate = parse_gate(data["gate"]) if data.get("gate") else None
        return cls(
            data["command"], tuple(data["args"]), tuple(data["qpus"]), float(data["time"]),
            float(data["duration"]), int(data["link"]), gate, tuple(data.get("qubits", ())),
        )


def _global_command(gate: Gate) -> tuple[str, tuple[str, ...]]:
    if isinstance(gate, Controlled):
        return "TWO_QUBIT", (gate.base.name,) + tuple(str(q) for q in gate.qubits)
    if isinstance(gate, ClassicallyControlled):
        return "TWO_QUBIT", (gate.inner.name, gate.register, str(gate.inner.target))
    if isinstance(gate, Single):
        return "SINGLE", (gate.name, str(gate.target))
    if isinstance(gate, Measure):
        return "SINGLE", ("MEASURE", str(gate.target))
    if isinstance(gate, EntGen):
        return "GEN_ENT", (str(gate.a), str(gate.b))
    if isinstance(gate, ClassicalComm):
        return "CLASSICAL", (gate.register,)
    raise ScheduleError(f"unsupported gate {gate!r}")  # pragma: no cover


@dataclass(frozen=True)
class GlobalSchedule:
    commands: tuple[TimedCommand, ...]
    layer_ends: tuple[float, ...]

    @property
    def makespan(self) -> float:
        return self.layer_ends[-1] if self.layer_ends else 0.0


def build_global_schedule(c: Circuit, times: GateTimeTable | None = None) -> GlobalSchedule:
    """Every gate of a layer starts when the slowest gate of the previous layer ends."""
    times = times or GateTimeTable()
    commands = []
    ends = []
    now = 0.0
    for layer in c.layers:
        longest = 0.0
        for gate in layer:
            dur = times.duration(gate_class(gate), gate_qpus(gate))
            name, args = _global_command(gate)
            commands.append(
                TimedCommand(name, args, gate_qpus(gate), now, dur, len(commands), gate, tuple(str(q) for q in gate.qubits))
            )
            longest = max(longest, dur)
        now += longest
        ends.append(now)
    return GlobalSchedule(tuple(commands), tuple(ends))


def split_per_qpu(schedule: GlobalSchedule) -> dict[int, list[TimedCommand]]:
    out: dict[int, list[TimedCommand]] = defaultdict(list)
    for cmd in schedule.commands:
        gate = cmd.gate
        if isinstance(gate, EntGen):
            a, b = gate.a, gate.b
            out[a.qpu].append(TimedCommand("SEND_ENT", (str(b.qpu), str(a.local)), cmd.qpus, cmd.time, cmd.duration, cmd.link, gate, (str(a),)))
            out[b.qpu].append(TimedCommand("REC_ENT", (str(a.qpu), str(b.local)), cmd.qpus, cmd.time, cmd.duration, cmd.link, gate, (str(b),)))
        elif isinstance(gate, ClassicalComm):
            out[gate.src].append(TimedCommand("SEND_CLA", (str(gate.dst), gate.register), cmd.qpus, cmd.time, cmd.duration, cmd.link, gate))
            out[gate.dst].append(TimedCommand("REC_CLA", (str(gate.src), gate.register), cmd.qpus, cmd.time, cmd.duration, cmd.link, gate))
        else:
            out[cmd.qpus[0]].append(cmd)
    return dict(sorted(out.items()))


def validate_per_qpu(per_qpu: Mapping[int, Sequence[TimedCommand]], times: GateTimeTable | None = None) -> list[str]:
    """Problem constraints: paired send/receive times, no qubit overlap, free operands at start."""
    times = times or GateTimeTable()
    problems: list[str] = []
    halves: dict[int, list[tuple[int, TimedCommand]]] = defaultdict(list)
    for qpu, cmds in per_qpu.items():
        for cmd in cmds:
            if cmd.time < 0:
                problems.append(f"QPU {qpu}: {cmd.command} starts at negative time {cmd.time}")
            if cmd.command in PAIRED or cmd.command in PAIRED.values():
                halves[cmd.link].append((qpu, cmd))
    for link, items in sorted(halves.items()):
        kinds = sorted(c.command for _, c in items)
        if len(items) != 2 or kinds not in (["REC_ENT", "SEND_ENT"], ["REC_CLA", "SEND_CLA"]):
            problems.append(f"constraint 1: command {link} has unmatched halves {kinds}")
            continue
        (qa, a), (qb, b) = items
        if a.time != b.time:
            problems.append(f"constraint 1: {a.command}@{a.time} on QPU {qa} and {b.command}@{b.time} on QPU {qb} differ")
        if int(a.args[0]) != qb or int(b.args[0]) != qa:
            problems.append(f"constraint 1: command {link} names the wrong peer QPU")
    for qpu, cmds in per_qpu.items():
        busy: dict[str, list[tuple[float, float, TimedCommand]]] = defaultdict(list)
        for cmd in cmds:
            dur = times.duration(_command_class(cmd), cmd.qpus)
            for qb in cmd.qubits:
                if int(qb.split(":")[0]) == qpu:
                    busy[qb].append((cmd.time, cmd.time + dur, cmd))
        for qb, spans in busy.items():
            spans.sort(key=lambda s: (s[0], s[1]))
            for (s0, e0, c0), (s1, _, c1) in zip(spans, spans[1:]):
                if s1 < e0:
                    problems.append(f"constraint 2: QPU {qpu} qubit {qb}: {c0.command}@{s0} overlaps {c1.command}@{s1}")
            for start, _, cmd in spans:
                if cmd.command != "TWO_QUBIT":
                    continue
                for s, e, other in spans:
                    if other is not cmd and s < start < e:
                        problems.append(f"constraint 3: qubit {qb} is busy when {cmd.command}@{start} starts")
    return problems


def _command_class(cmd: TimedCommand) -> str:
    if cmd.gate is not None:
        return gate_class(cmd.gate)
    return {"SEND_ENT": "entgen", "REC_ENT": "entgen", "GEN_ENT": "entgen", "SEND_CLA": "ccomm", "REC_CLA": "ccomm", "CLASSICAL": "ccomm"}.get(
        cmd.command, "cnot" if cmd.command == "TWO_QUBIT" else "single"
    )


def command_multiset(cmds: Iterable[TimedCommand]) -> Counter:
    return Counter((c.command, c.args, c.time) for c in cmds)


def expand_global(schedule: GlobalSchedule) -> Counter:
    """Global commands with each two-QPU command replaced by its send/receive halves."""
    split = split_per_qpu(schedule)
    return command_multiset(c for cmds in split.values() for c in cmds)


def per_qpu_to_csv(per_qpu: Mapping[int, Sequence[TimedCommand]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["qpu", "command", "args", "qpus", "time"])
    for qpu, cmds in per_qpu.items():
        for cmd in cmds:
            writer.writerow([qpu, cmd.command, " ".join(cmd.args), " ".join(map(str, cmd.qpus)), f"{cmd.time:g}"])
    return buf.getvalue()


def per_qpu_to_json(per_qpu: Mapping[int, Sequence[TimedCommand]]) -> str:
    return json.dumps({str(k): [c.to_json() for c in v] for k, v in per_qpu.items()}, indent=2)


def per_qpu_from_json(text: str) -> dict[int, list[TimedCommand]]:
    data = json.loads(text)
    return {int(k): [TimedCommand.from_json(c) for c in v] for k, v in data.items()}
