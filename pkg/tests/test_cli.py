import json
import subprocess
import sys

import pytest

from dqvqe.cli import main

from helpers import DATA


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_distribute_h2_instance(capsys):
    code, out, err = run(capsys, "distribute", "--cluster", str(DATA / "cluster_3x9.txt"), "--ansatz-size", "4", "--paulis", "15")
    assert code == 0
    assert [len(r) for r in json.loads(out)["rounds"]] == [4, 4, 4, 3]
    manifest = json.loads(err)["manifest"]
    assert manifest["subcommand"] == "distribute" and "cluster" in manifest["inputs"]


def test_distribute_infeasible(capsys):
    code, _, err = run(capsys, "distribute", "--cluster", "3", "--ansatz-size", "5", "--paulis", "1")
    assert code == 1 and "does not fit" in err


def test_distribute_csv(capsys):
    code, out, _ = run(capsys, "distribute", "--cluster", "9,9,9", "--ansatz-size", "4", "--paulis", "4", "--solver", "cp", "--format", "csv")
    assert code == 0 and out.splitlines()[0] == "round,pauli,per_qpu,qpe_qpu,comm_pairs"


def test_capacity_curve(capsys):
    code, out, _ = run(capsys, "analyze", "capacity", "--qpu-size", "10", "--max-qpus", "15")
    assert code == 0 and out.splitlines()[-1] == "15,119"


def test_capacity_needs_size(capsys):
    code, _, _ = run(capsys, "analyze", "capacity")
    assert code == 2


def test_runtime_table(capsys):
    code, out, _ = run(capsys, "analyze", "runtime", "--n-min", "8", "--n-max", "11")
    rows = [line.split(",") for line in out.splitlines()]
    assert code == 0 and rows[0][0] == "n" and rows[2][2] != "" and rows[3][2] == ""


def test_remap_schedule_netsim_pipeline(capsys, tmp_path):
    code, out, _ = run(capsys, "remap", "--circuit", str(DATA / "shared_control_circuit.txt"), "--map", str(DATA / "shared_control_map.json"))
    assert code == 0 and "entgen 0:2 1:2" in out and "ccomm 0 -> 1" in out
    remapped = tmp_path / "remapped.txt"
    remapped.write_text(out)

    code, out, _ = run(capsys, "schedule", "--circuit", str(remapped), "--times", str(DATA / "times.txt"), "--output", str(tmp_path / "sched"))
    assert code == 0 and out == ""
    sched = tmp_path / "sched" / "schedule.json"
    manifest = json.loads((tmp_path / "sched" / "manifest.json").read_text())
    assert set(manifest["outputs"]) == {"schedule.json"}

    for scenario in ("scenario_centralized.json", "scenario_decentralized.json"):
        code, out, _ = run(capsys, "netsim", "--scenario", str(DATA / scenario), "--schedule", str(sched), "--seed", "1")
        assert code == 0
        assert json.loads(out.splitlines()[-1])["status"] == "completed"


def test_schedule_csv(capsys, tmp_path):
    code, out, _ = run(capsys, "schedule", "--circuit", str(DATA / "shared_control_circuit.txt"), "--format", "csv")
    assert code == 0 and out.splitlines()[0] == "qpu,command,args,qpus,time"


def test_netsim_abort_exit_code(capsys, tmp_path):
    run(capsys, "remap", "--circuit", str(DATA / "shared_control_circuit.txt"), "--map", str(DATA / "shared_control_map.json"), "--output", str(tmp_path / "r"))
    run(capsys, "schedule", "--circuit", str(tmp_path / "r" / "remapped.txt"), "--output", str(tmp_path / "s"))
    scenario = tmp_path / "faulty.json"
    scenario.write_text(json.dumps({"topology": "centralized", "faults": {"nack": ["ccn1"]}}))
    code, _, err = run(capsys, "netsim", "--scenario", str(scenario), "--schedule", str(tmp_path / "s" / "schedule.json"), "--seed", "0")
    assert code == 1 and "aborted" in err


def test_vqe_small_instance(capsys):
    code, out, err = run(
        capsys, "vqe", "--cluster", "3,3", "--hamiltonian", str(DATA / "h_2q.txt"), "--ansatz", str(DATA / "ansatz_2q.txt"),
        "--seed", "1", "--sweeps", "2",
    )
    report = json.loads(out)
    assert code == 0 and report["energy"] == pytest.approx(-1.118, abs=0.05)
    assert report["circuitInvocations"] > 0 and len(report["estimates"]) == 2
    assert "warning" not in err


def test_vqe_output_is_reproducible(capsys):
    argv = ["vqe", "--cluster", "2", "--hamiltonian", str(DATA / "h_2q.txt"), "--ansatz", str(DATA / "ansatz_2q.txt"), "--sweeps", "1"]
    code, first, err = run(capsys, *argv)
    # a 2-qubit Ansatz plus its QPE qubit needs 3 qubits
    assert code == 1
    argv[2] = "3"
    _, first, err = run(capsys, *argv)
    _, second, _ = run(capsys, *argv)
    assert first == second and "no --seed" in err


def test_missing_file_is_exit_two(capsys):
    code, _, err = run(capsys, "schedule", "--circuit", "/nonexistent/c.txt")
    assert code == 2 and "cannot read" in err


def test_parse_error_is_exit_two(capsys, tmp_path):
    bad = tmp_path / "h.txt"
    bad.write_text("1.0 XQ\n")
    code, _, _ = run(capsys, "vqe", "--cluster", "3", "--hamiltonian", str(bad), "--ansatz", str(DATA / "ansatz_2q.txt"), "--seed", "0")
    assert code == 2


def test_unknown_subcommand_and_flag(capsys):
    assert run(capsys, "frobnicate")[0] == 2
    assert run(capsys, "distribute", "--cluster", "3", "--ansatz-size", "1", "--paulis", "1", "--bogus")[0] == 2


def test_console_script_runs():
    proc = subprocess.run(
        [sys.executable, "-m", "dqvqe.cli", "analyze", "capacity", "--qpu-size", "50", "--max-qpus", "2"],
        capture_output=True, text=True, check=False,
    )
    assert proc.returncode == 0 and proc.stdout.splitlines()[-1] == "2,95"
