import json
from collections import Counter
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dqvqe.circuit import Circuit, ClassicalComm, Controlled, EntGen, QubitId, Single, gate_qpus, parse_circuit
from dqvqe.remap import QubitMap, distributed_remap
from dqvqe.schedule import (
    DEFAULT_DURATIONS,
    GateTimeTable,
    ScheduleError,
    build_global_schedule,
    command_multiset,
    gate_class,
    per_qpu_from_json,
    per_qpu_to_csv,
    per_qpu_to_json,
    split_per_qpu,
    validate_per_qpu,
)

from helpers import random_circuit, random_map, read_data


def shared_control_distributed():
    c = parse_circuit(read_data("shared_control_circuit.txt"))
    return distributed_remap(c, QubitMap.from_json(json.loads(read_data("shared_control_map.json"))))


def expected_halves(glob):
    """Global commands with two-QPU commands traced into their halves by hand."""
    out = Counter()
    for cmd in glob.commands:
        g = cmd.gate
        if isinstance(g, EntGen):
            out[("SEND_ENT", (str(g.b.qpu), str(g.a.local)), cmd.time)] += 1
            out[("REC_ENT", (str(g.a.qpu), str(g.b.local)), cmd.time)] += 1
        elif isinstance(g, ClassicalComm):
            out[("SEND_CLA", (str(g.dst), g.register), cmd.time)] += 1
            out[("REC_CLA", (str(g.src), g.register), cmd.time)] += 1
        else:
            out[(cmd.command, cmd.args, cmd.time)] += 1
    return out


def test_default_weights():
    assert DEFAULT_DURATIONS == {"cnot": 5, "single": 1, "measure": 2, "entgen": 8, "ccomm": 2, "merge": 3}


def test_cnot_then_h():
    g = build_global_schedule(parse_circuit("qubits 2\ncx 0:0 0:1\n--\nh 0:1\n"))
    assert [(c.command, c.time) for c in g.commands] == [("TWO_QUBIT", 0.0), ("SINGLE", 5.0)]
    assert g.makespan == 6.0


def test_layer_waits_for_slowest_gate():
    g = build_global_schedule(parse_circuit("qubits 3\ncx 0:0 0:1\nrz 0:2 0.1\n--\nh 0:2\n"))
    assert [c.time for c in g.commands] == [0.0, 0.0, 5.0]


def test_empty_circuit():
    g = build_global_schedule(Circuit((), 0))
    assert g.commands == () and g.makespan == 0.0
    assert split_per_qpu(g) == {}


def test_non_local_gate_must_be_remapped():
    with pytest.raises(ScheduleError):
        build_global_schedule(Circuit(((Controlled(Single("X", QubitId(1, 0)), QubitId(0, 0)),),), 0))


def test_entgen_split_into_send_and_receive():
    c = Circuit(((Single("H", QubitId(0, 0)),), (EntGen(QubitId(0, 4), QubitId(1, 4)),)), 0)
    g = build_global_schedule(c, GateTimeTable(dict(DEFAULT_DURATIONS, single=8.0)))
    per = split_per_qpu(g)
    send = [x for x in per[0] if x.command == "SEND_ENT"]
    rec = [x for x in per[1] if x.command == "REC_ENT"]
    assert [(x.args, x.time) for x in send] == [(("1", "4"), 8.0)]
    assert [(x.args, x.time) for x in rec] == [(("0", "4"), 8.0)]


def test_local_circuit_single_schedule():
    c = parse_circuit("qubits 3\nh 0:0\n--\ncx 0:0 0:1\n--\nmeasure 0:2 -> m\n")
    g = build_global_schedule(c)
    assert split_per_qpu(g) == {0: list(g.commands)}


def test_shared_control_schedule_split_and_valid():
    d = shared_control_distributed()
    g = build_global_schedule(d)
    per = split_per_qpu(g)
    assert sorted(per) == [0, 1]
    union = command_multiset(c for cmds in per.values() for c in cmds)
    assert union == expected_halves(g)
    assert validate_per_qpu(per) == []


def test_overlap_fault_reported():
    g = build_global_schedule(parse_circuit("qubits 1\nh 0:0\n--\nx 0:0\n"))
    per = split_per_qpu(g)
    per[0][1] = replace(per[0][1], time=0.5)
    assert any(p.startswith("constraint 2") for p in validate_per_qpu(per))


def test_unpaired_timestamp_fault_reported():
    g = build_global_schedule(parse_circuit("qubits 0\nmeasure 0:0 -> a\n--\nccomm 0 -> 1 a\n"))
    per = split_per_qpu(g)
    assert validate_per_qpu(per) == []
    rec = next(i for i, c in enumerate(per[1]) if c.command == "REC_CLA")
    send = next(c for c in per[0] if c.command == "SEND_CLA")
    per[0] = [replace(c, time=3.0) if c is send else c for c in per[0]]
    per[1][rec] = replace(per[1][rec], time=4.0)
    assert any(p.startswith("constraint 1") for p in validate_per_qpu(per))
    per[1].pop(rec)
    assert any("unmatched" in p for p in validate_per_qpu(per))


def test_busy_operand_fault_reported():
    g = build_global_schedule(parse_circuit("qubits 2\nh 0:1\n--\ncx 0:0 0:1\n"))
    per = split_per_qpu(g)
    per[0][0] = replace(per[0][0], time=0.5)  # H still running when the CNOT starts at 1
    problems = validate_per_qpu(per)
    assert any(p.startswith("constraint 3") for p in problems)


def test_time_table_parse_and_aliases():
    t = GateTimeTable.parse("unit: ns\n# comment\ncontrol=40\nsingle=10\nentgen@1=900\n")
    assert t.unit == "ns" and t.duration("cnot") == 40 and t.duration("measure") == 2
    assert t.duration("entgen", (0, 1)) == 900 and t.duration("entgen", (0,)) == 8
    assert GateTimeTable.parse(t.format()) == t
    assert GateTimeTable.parse(read_data("times.txt")) == GateTimeTable()


@pytest.mark.parametrize("text", ["teleport=3", "cnot=abc", "cnot", "cnot=0", "unit: years"])
def test_time_table_rejects(text):
    with pytest.raises(ScheduleError):
        GateTimeTable.parse(text)


def test_missing_class_is_an_error():
    with pytest.raises(ScheduleError):
        GateTimeTable({"single": 1.0}).duration("cnot")


def test_per_qpu_override_slows_shared_gate():
    c = Circuit(((EntGen(QubitId(0, 0), QubitId(1, 0)),), (Single("H", QubitId(0, 0)),)), 0)
    g = build_global_schedule(c, GateTimeTable(overrides={("entgen", 1): 20.0}))
    assert g.commands[1].time == 20.0


def test_csv_and_json_outputs():
    per = split_per_qpu(build_global_schedule(shared_control_distributed()))
    rows = per_qpu_to_csv(per).splitlines()
    assert rows[0] == "qpu,command,args,qpus,time"
    assert len(rows) == 1 + sum(len(v) for v in per.values())
    assert per_qpu_from_json(per_qpu_to_json(per)) == per


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 5), st.integers(1, 3))
def test_remapped_circuits_schedule_cleanly(seed, n, qpus):
    rng = np.random.default_rng(seed)
    c = random_circuit(rng, n, 5, 5)
    qm, cluster = random_map(rng, n, qpus)
    d = distributed_remap(c, qm, cluster)
    times = GateTimeTable(dict(DEFAULT_DURATIONS, cnot=float(rng.integers(1, 9)), ccomm=float(rng.integers(1, 9))))
    g = build_global_schedule(d, times)
    per = split_per_qpu(g)
    assert validate_per_qpu(per, times) == []
    assert g.makespan == sum(max(times.duration(gate_class(x), gate_qpus(x)) for x in layer) for layer in d.layers)
    assert command_multiset(x for cmds in per.values() for x in cmds) == expected_halves(g)

