"""Command-line entry point: distribute, remap, schedule, vqe, netsim, analyze."""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from . import __version__
from .analysis import RuntimeModel, capacity_csv, max_ansatz_curve, runtime_csv, runtime_table
from .circuit import CircuitError, format_circuit, parse_circuit
from .estimation import AqpeConfig, EstimationError, OptimizerConfig, RfpeParams, distributed_avqe
from .hamiltonian import HamiltonianError, parse_hamiltonian
from .netctl import NetError, Scenario, run_scenario
from .placement import ClusterSpec, PlacementError, distribute, validate_schedule
from .remap import QubitMap, RemapError, distributed_remap
from .schedule import (
    GateTimeTable,
    ScheduleError,
    build_global_schedule,
    per_qpu_from_json,
    per_qpu_to_csv,
    per_qpu_to_json,
    split_per_qpu,
    validate_per_qpu,
)
from .statevector import SimulationError

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


class InputError(Exception):
    """Unreadable or unparseable input; maps to exit code 2."""


@dataclass
class RunManifest:
    subcommand: str
    inputs: dict[str, dict] = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    seed: int | None = None
    version: str = __version__
    outputs: dict[str, str] = field(default_factory=dict)

    def add_input(self, role: str, path: str, text: str) -> None:
        self.inputs[role] = {"path": path, "sha256": _digest(text)}

    def to_json(self) -> dict:
        return {
            "subcommand": self.subcommand,
            "inputs": self.inputs,
            "config": self.config,
            "seed": self.seed,
            "version": self.version,
            "outputs": self.outputs,
        }


def _digest(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def _read(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror or exc}") from exc


def _cluster(arg: str, manifest: RunManifest) -> ClusterSpec:
    """A path to a cluster file, or a literal list such as "9,9,9"."""
    if os.path.exists(arg):
        text = _read(arg)
        manifest.add_input("cluster", arg, text)
    else:
        text = arg
        manifest.config["cluster"] = arg
    try:
        return ClusterSpec.parse(text)
    except PlacementError as exc:
        raise InputError(str(exc)) from exc


def _json(path: str, manifest: RunManifest, role: str):
    text = _read(path)
    manifest.add_input(role, path, text)
    try:
        return json.loads(text), text
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: {exc}") from exc


def _seed(args: argparse.Namespace, manifest: RunManifest) -> int:
    if args.seed is None:
        print("warning: no --seed given, using 0", file=sys.stderr)
        args.seed = 0
    manifest.seed = args.seed
    return args.seed


# ------------------------------------------------------------------ handlers
# Each handler returns {file name: content}; the first entry is the primary output.


def cmd_distribute(args: argparse.Namespace, manifest: RunManifest) -> dict[str, str]:
    cluster = _cluster(args.cluster, manifest)
    manifest.config.update(ansatz_size=args.ansatz_size, paulis=args.paulis, solver=args.solver)
    schedule = distribute(cluster, args.ansatz_size, args.paulis, args.solver)
    problems = validate_schedule(schedule, args.paulis)
    if problems:
        raise PlacementError("; ".join(problems))
    if args.format == "csv":
        rows = ["round,pauli,per_qpu,qpe_qpu,comm_pairs"]
        for r, rnd in enumerate(schedule.rounds, 1):
            for a in rnd:
                pairs = " ".join(f"{x}-{y}" for x, y in a.comm_pairs)
                rows.append(f"{r},{a.pauli_index},{' '.join(map(str, a.per_qpu))},{a.qpe_qpu},{pairs}")
        return {"schedule.csv": "\n".join(rows) + "\n"}
    return {"schedule.json": json.dumps(schedule.to_json(), indent=2) + "\n"}


def cmd_remap(args: argparse.Namespace, manifest: RunManifest) -> dict[str, str]:
    text = _read(args.circuit)
    manifest.add_input("circuit", args.circuit, text)
    cluster = _cluster(args.cluster, manifest) if args.cluster else None
    data, _ = _json(args.map, manifest, "map")
    try:
        circuit = parse_circuit(text)
        qmap = QubitMap.from_json(data)
    except (CircuitError, RemapError) as exc:
        raise InputError(str(exc)) from exc
    out = distributed_remap(circuit, qmap, cluster)
    return {"remapped.txt": format_circuit(out)}


def _times(args: argparse.Namespace, manifest: RunManifest) -> GateTimeTable:
    if not args.times:
        return GateTimeTable()
    text = _read(args.times)
    manifest.add_input("times", args.times, text)
    try:
        return GateTimeTable.parse(text)
    except ScheduleError as exc:
        raise InputError(str(exc)) from exc


def cmd_schedule(args: argparse.Namespace, manifest: RunManifest) -> dict[str, str]:
    text = _read(args.circuit)
    manifest.add_input("circuit", args.circuit, text)
    times = _times(args, manifest)
    try:
        circuit = parse_circuit(text)
    except CircuitError as exc:
        raise InputError(str(exc)) from exc
    per_qpu = split_per_qpu(build_global_schedule(circuit, times))
    problems = validate_per_qpu(per_qpu, times)
    if problems:
        raise ScheduleError("; ".join(problems))
    if args.format == "csv":
        return {"schedule.csv": per_qpu_to_csv(per_qpu)}
    return {"schedule.json": per_qpu_to_json(per_qpu) + "\n"}


def cmd_vqe(args: argparse.Namespace, manifest: RunManifest) -> dict[str, str]:
    seed = _seed(args, manifest)
    cluster = _cluster(args.cluster, manifest)
    htext = _read(args.hamiltonian)
    atext = _read(args.ansatz)
    manifest.add_input("hamiltonian", args.hamiltonian, htext)
    manifest.add_input("ansatz", args.ansatz, atext)
    try:
        h = parse_hamiltonian(htext)
        ansatz = parse_circuit(atext)
    except (HamiltonianError, CircuitError) as exc:
        raise InputError(str(exc)) from exc
    rfpe = RfpeParams(alpha=args.alpha, sigma_target=args.sigma_target, max_iters=args.max_iters)
    config = AqpeConfig(rfpe=rfpe, delta=args.delta, epsilon=args.epsilon, workers=args.workers)
    optimizer = OptimizerConfig(sweeps=args.sweeps)
    manifest.config.update(
        alpha=args.alpha, solver=args.solver, sigma_target=args.sigma_target, max_iters=args.max_iters,
        delta=args.delta, epsilon=args.epsilon, sweeps=args.sweeps,
    )
    result = distributed_avqe(cluster, h, ansatz, config, optimizer, args.solver, seed)
    return {"vqe.json": json.dumps(result.to_json(), indent=2) + "\n"}


def cmd_netsim(args: argparse.Namespace, manifest: RunManifest) -> dict[str, str]:
    seed = _seed(args, manifest)
    data, _ = _json(args.scenario, manifest, "scenario")
    stext = _read(args.schedule)
    manifest.add_input("schedule", args.schedule, stext)
    try:
        scenario = Scenario.from_json(data)
        per_qpu = per_qpu_from_json(stext)
    except (NetError, ScheduleError, CircuitError, KeyError, ValueError) as exc:
        raise InputError(f"bad netsim input: {exc}") from exc
    trace = run_scenario(per_qpu, scenario, seed)
    outputs = {"trace.jsonl": trace.to_jsonl()}
    if trace.status != "completed":
        print(f"execution aborted: {trace.reason}", file=sys.stderr)
        args._exit = EXIT_INVALID
    return outputs


def cmd_analyze(args: argparse.Namespace, manifest: RunManifest) -> dict[str, str]:
    if args.what == "capacity":
        manifest.config.update(qpu_size=args.qpu_size, max_qpus=args.max_qpus)
        series = [(size, max_ansatz_curve(size, args.max_qpus)) for size in args.qpu_size]
        return {"capacity.csv": capacity_csv(series) if len(series) > 1 else _single_capacity(series[0][1])}
    cluster = _cluster(args.cluster, manifest)
    times = _times(args, manifest)
    model = RuntimeModel(args.pauli_constant, args.gate_constant)
    manifest.config.update(n_min=args.n_min, n_max=args.n_max, pauli_constant=args.pauli_constant, gate_constant=args.gate_constant)
    rows = runtime_table(cluster, range(args.n_min, args.n_max + 1), times, model)
    return {"runtime.csv": runtime_csv(rows)}


def _single_capacity(rows) -> str:
    return "qpus,max_ansatz\n" + "".join(f"{m},{best}\n" for m, best in rows)


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dqvqe", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, formats: Sequence[str] = ()) -> None:
        p.add_argument("--output", help="directory for outputs and the run manifest")
        if formats:
            p.add_argument("--format", choices=formats, default=formats[0])

    p = sub.add_parser("distribute", help="place Ansatz copies on a cluster")
    p.add_argument("--cluster", required=True, help="cluster file or literal such as 9,9,9")
    p.add_argument("--ansatz-size", type=int, required=True)
    p.add_argument("--paulis", type=int, required=True)
    p.add_argument("--solver", choices=("greedy", "cp"), default="greedy")
    common(p, ("json", "csv"))
    p.set_defaults(handler=cmd_distribute)

    p = sub.add_parser("remap", help="rewrite non-local gates with entanglement and classical messages")
    p.add_argument("--circuit", required=True)
    p.add_argument("--map", required=True, help="JSON qubit map: data, comm, qpe")
    p.add_argument("--cluster")
    common(p)
    p.set_defaults(handler=cmd_remap)

    p = sub.add_parser("schedule", help="timestamped per-QPU command lists")
    p.add_argument("--circuit", required=True)
    p.add_argument("--times")
    common(p, ("json", "csv"))
    p.set_defaults(handler=cmd_schedule)

    p = sub.add_parser("vqe", help="run the distributed variational loop in simulation")
    p.add_argument("--cluster", required=True)
    p.add_argument("--hamiltonian", required=True)
    p.add_argument("--ansatz", required=True)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--seed", type=int)
    p.add_argument("--solver", choices=("greedy", "cp"), default="greedy")
    p.add_argument("--sigma-target", type=float, default=1e-3)
    p.add_argument("--max-iters", type=int, default=2000)
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--epsilon", type=float, default=0.02)
    p.add_argument("--sweeps", type=int, default=3)
    p.add_argument("--workers", type=int, default=1)
    common(p)
    p.set_defaults(handler=cmd_vqe)

    p = sub.add_parser("netsim", help="execute a per-QPU schedule on the simulated control plane")
    p.add_argument("--scenario", required=True)
    p.add_argument("--schedule", required=True, help="per-QPU schedule JSON from 'dqvqe schedule'")
    p.add_argument("--seed", type=int)
    common(p)
    p.set_defaults(handler=cmd_netsim)

    p = sub.add_parser("analyze", help="runtime and capacity tables")
    p.add_argument("what", choices=("runtime", "capacity"))
    p.add_argument("--qpu-size", type=int, action="append", help="repeat for several series")
    p.add_argument("--max-qpus", type=int, default=15)
    p.add_argument("--cluster", default="10,10,10,10,10")
    p.add_argument("--times")
    p.add_argument("--n-min", type=int, default=2)
    p.add_argument("--n-max", type=int, default=39)
    p.add_argument("--pauli-constant", type=float, default=1.0)
    p.add_argument("--gate-constant", type=float, default=1.0)
    common(p, ("csv",))
    p.set_defaults(handler=cmd_analyze)
    return parser


def _emit(outputs: dict[str, str], manifest: RunManifest, out_dir: str | None) -> None:
    for name, content in outputs.items():
        manifest.outputs[name] = _digest(content)
    if out_dir:
        target = Path(out_dir)
        try:
            target.mkdir(parents=True, exist_ok=True)
            for name, content in outputs.items():
                (target / name).write_text(content)
            (target / "manifest.json").write_text(json.dumps(manifest.to_json(), indent=2) + "\n")
        except OSError as exc:
            raise InputError(f"cannot write to {out_dir}: {exc.strerror or exc}") from exc
        return
    sys.stdout.write(next(iter(outputs.values())))
    print(json.dumps({"manifest": manifest.to_json()}, sort_keys=True), file=sys.stderr)


INVALID = (PlacementError, RemapError, ScheduleError, EstimationError, NetError, SimulationError)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command == "analyze" and args.what == "capacity" and not args.qpu_size:
        parser.print_usage(sys.stderr)
        print("error: analyze capacity needs --qpu-size", file=sys.stderr)
        return EXIT_IO
    manifest = RunManifest(args.command)
    handler: Callable = args.handler
    try:
        outputs = handler(args, manifest)
        _emit(outputs, manifest, args.output)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except INVALID as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return getattr(args, "_exit", EXIT_OK)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
