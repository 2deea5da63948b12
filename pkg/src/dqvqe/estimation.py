"""Rejection-filter phase estimation, Pauli expectation estimation and the VQE driver.

The simulator shortcut for a phase-estimation shot uses the exact outcome
probability of the single-ancilla circuit, computed from the data-register
block of the controlled unitary. ``rfpe_circuit`` builds the same experiment
gate by gate so the shortcut can be checked against a full run.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import schur

from .circuit import Circuit, Measure, QubitId, Single
from .hamiltonian import PauliHamiltonian, apply_pauli, check_pauli
from .placement import ClusterSpec, Schedule, distribute
from .remap import DistributedParts, QubitMap, distribute_parts, layout_round
from .statevector import SimState, channel_unitary, run_circuit

MIN_ACCEPTED = 5
SIGMA_FLOOR = 1e-6


class EstimationError(ValueError):
    pass


@dataclass(frozen=True)
class RfpeParams:
    alpha: float = 1.0
    mu: float = math.pi / 2
    sigma: float = math.pi / 4
    sample_count: int = 2000
    max_iters: int = 2000
    sigma_target: float = 1e-3

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise EstimationError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not self.sigma > 0:
            raise EstimationError("sigma must be positive")
        if self.sample_count < MIN_ACCEPTED or self.max_iters < 1:
            raise EstimationError("sample_count and max_iters are too small")


@dataclass(frozen=True)
class RfpeResult:
    phi: float
    sigma: float
    iterations: int
    converged: bool
    widened: int = 0


@dataclass(frozen=True)
class EstimationResult:
    pauli_index: int
    pauli: str
    abs_expectation: float
    sign: int
    method: str
    iterations: int
    final_sigma: float
    invocations: int

    @property
    def value(self) -> float:
        return self.sign * self.abs_expectation

    def to_json(self) -> dict:
        return {
            "pauliIndex": self.pauli_index,
            "pauli": self.pauli,
            "absExpectation": self.abs_expectation,
            "sign": self.sign,
            "method": self.method,
            "iterations": self.iterations,
            "finalSigma": self.final_sigma,
            "invocations": self.invocations,
        }


def rfpe_outcome_probability(phi: float, m: int, theta: float) -> float:
    """P(E=0) for the single-ancilla experiment with U^m and phase kick theta."""
    if m < 1 or int(m) != m:
        raise EstimationError(f"M must be a positive integer, got {m}")
    return math.cos(m * (phi - theta) / 2) ** 2


def repetitions(sigma: float, alpha: float) -> int:
    return max(1, math.ceil(1.0 / max(sigma, SIGMA_FLOOR) ** alpha))


# An outcome source takes (M, theta, rng) and returns the measured bit E.
OutcomeSource = Callable[[int, float, np.random.Generator], int]


def phase_source(phi: float) -> OutcomeSource:
    def run(m: int, theta: float, rng: np.random.Generator) -> int:
        return int(rng.random() >= rfpe_outcome_probability(phi, m, theta))

    return run


def spectral_source(u: np.ndarray, state: np.ndarray) -> OutcomeSource:
    """Exact shot sampler for an arbitrary input state, via U's eigendecomposition."""
    # complex Schur form of a unitary is diagonal with an orthonormal basis
    tri, basis = schur(u, output="complex")
    weights = np.abs(basis.conj().T @ state) ** 2
    phases = np.angle(np.diag(tri))

    def run(m: int, theta: float, rng: np.random.Generator) -> int:
        overlap = float(np.sum(weights * np.cos(m * (phases - theta))))
        p0 = min(max((1.0 + overlap) / 2.0, 0.0), 1.0)
        return int(rng.random() >= p0)

    return run


def rfpe_loop(source: OutcomeSource, params: RfpeParams, rng: np.random.Generator) -> RfpeResult:
    mu, sigma = params.mu, params.sigma
    widened = 0
    for it in range(1, params.max_iters + 1):
        m = repetitions(sigma, params.alpha)
        theta = mu - sigma
        bit = source(m, theta, rng)
        accepted = None
        for count in (params.sample_count, 2 * params.sample_count):
            draws = rng.normal(mu, sigma, count)
            p0 = np.cos(m * (draws - theta) / 2) ** 2
            like = p0 if bit == 0 else 1.0 - p0
            hits = draws[rng.random(count) < like]
            if hits.size >= MIN_ACCEPTED:
                accepted = hits
                break
        if accepted is None:
            sigma *= 2.0
            widened += 1
            continue
        mu = float(accepted.mean())
        sigma = max(float(accepted.std(ddof=1)), SIGMA_FLOOR)
        if sigma <= params.sigma_target:
            return RfpeResult(mu, sigma, it, True, widened)
    return RfpeResult(mu, sigma, params.max_iters, False, widened)


def rfpe_circuit(cu: Circuit, control: QubitId, m: int, theta: float, register: str = "E") -> Circuit:
    """H, Z(M theta), c-U repeated M times, H, measure: the single-ancilla experiment."""
    start = Circuit(((Single("H", control),), (Single("Z", control, (m * theta,)),)), cu.num_qubits, cu.cluster)
    out = start
    for _ in range(m):
        out = out.then(cu)
    end = Circuit(((Single("H", control),), (Measure(control, register),)), cu.num_qubits, cu.cluster)
    return out.then(end)


def circuit_source(cu: Circuit, control: QubitId, prep: SimState) -> OutcomeSource:
    """Shot sampler that runs the full circuit from a copy of ``prep``."""

    def run(m: int, theta: float, rng: np.random.Generator) -> int:
        state = SimState(prep.qubits, prep.tensor.copy(), dict(prep.registers), rng)
        run_circuit(rfpe_circuit(cu, control, m, theta), state)
        return state.registers[(control.qpu, "E")]

    return run


def controlled_block(cu: Circuit, data: Sequence[QubitId], control: QubitId, ancillas: Sequence[QubitId] = ()) -> np.ndarray:
    """The data-register unitary applied when ``control`` is |1>."""
    full = channel_unitary(cu, tuple(data) + (control,), ancillas)
    idle = full[0::2, 0::2]
    if not np.allclose(idle, np.eye(idle.shape[0]), atol=1e-9) or not np.allclose(full[0::2, 1::2], 0, atol=1e-9):
        raise EstimationError("circuit does not act as a controlled unitary on its control qubit")
    return full[1::2, 1::2]


def rfpe_estimate(
    cu: Circuit,
    prep: np.ndarray | Circuit,
    data: Sequence[QubitId],
    control: QubitId,
    params: RfpeParams,
    rng: np.random.Generator,
    ancillas: Sequence[QubitId] = (),
    mode: str = "spectral",
) -> RfpeResult:
    """Estimate the eigenphase seen by ``prep`` under the controlled ``cu``.

    ``prep`` is either a data-register vector or a circuit whose output over
    ``data`` (ancillas back in |0>) is the input state.
    """
    data = tuple(data)
    if isinstance(prep, Circuit):
        qubits = sorted(set(data) | set(ancillas) | set(prep.qubits()))
        vec = run_circuit(prep, SimState.zero(qubits, rng)).reduced(data)
    else:
        vec = np.asarray(prep, dtype=complex)
    if mode == "spectral":
        source = spectral_source(controlled_block(cu, data, control, ancillas), vec)
    elif mode == "circuit":
        everything = sorted(set(data) | set(ancillas) | {control} | set(cu.qubits()))
        rest = [qb for qb in everything if qb not in data]
        full = np.kron(vec, _zero_vector(len(rest)))
        order = list(data) + rest
        state = SimState.from_vector(everything, _reorder(full, order, everything))
        source = circuit_source(cu, control, state)
    else:
        raise EstimationError(f"unknown mode {mode!r}")
    return rfpe_loop(source, params, rng)


def _zero_vector(n: int) -> np.ndarray:
    v = np.zeros(2**n, dtype=complex)
    v[0] = 1.0
    return v


def _reorder(vec: np.ndarray, order: Sequence[QubitId], target: Sequence[QubitId]) -> np.ndarray:
    n = len(order)
    t = vec.reshape((2,) * n)
    return np.transpose(t, [list(order).index(qb) for qb in target]).reshape(-1)


def basis_change(pauli: str, qubits: Sequence[QubitId]) -> Circuit:
    """Rotate each non-identity factor so that measuring Z measures it."""
    first, second = [], []
    for ch, qb in zip(pauli, qubits):
        if ch == "X":
            first.append(Single("H", qb))
        elif ch == "Y":
            # S^dag then H maps Y onto Z
            first.append(Single("Z", qb, (math.pi / 2,)))
            second.append(Single("H", qb))
    layers = tuple(tuple(layer) for layer in (first, second) if layer)
    return Circuit(layers, len(pauli))


def sample_pauli(state: np.ndarray, pauli: str, shots: int, rng: np.random.Generator) -> float:
    """Mean of ``shots`` simulated +/-1 measurements of ``pauli``."""
    check_pauli(pauli)
    n = len(pauli)
    if shots < 1:
        raise EstimationError("shots must be at least 1")
    qs = [QubitId(0, k) for k in range(n)]
    rotated = run_circuit(basis_change(pauli, qs), SimState.from_vector(qs, state)).vector
    probs = np.abs(rotated) ** 2
    probs /= probs.sum()
    counts = rng.multinomial(shots, probs)
    mask = sum(1 << (n - 1 - k) for k, ch in enumerate(pauli) if ch != "I")
    signs = np.array([1 - 2 * (bin(i & mask).count("1") & 1) for i in range(2**n)])
    return float(np.dot(counts, signs) / shots)


def hoeffding_margin(shots: int, failure: float) -> float:
    """Two-sided margin for the mean of +/-1 samples at the given failure rate."""
    return math.sqrt(2.0 * math.log(2.0 / failure) / shots)


@dataclass(frozen=True)
class BoundCheck:
    passed: bool
    sign: int
    estimate: float
    margin: float


def sign_and_bound(state: np.ndarray, pauli: str, delta: float, shots: int, rng: np.random.Generator, failure: float = 0.01) -> BoundCheck:
    s = sample_pauli(state, pauli, shots, rng)
    eps = hoeffding_margin(shots, failure)
    passed = abs(s) - eps > delta and abs(s) + eps < 1.0 - delta
    return BoundCheck(passed, 1 if s >= 0 else -1, s, eps)


def collapse(state: np.ndarray, pauli: str, u: np.ndarray) -> tuple[np.ndarray, float]:
    """Project onto the e^{+i phi} eigenvector of ``u`` inside span{psi, P psi}."""
    psi = np.asarray(state, dtype=complex)
    ppsi = apply_pauli(pauli, psi)
    perp = ppsi - np.vdot(psi, ppsi) * psi
    norm = np.linalg.norm(perp)
    if norm < 1e-9:
        raise EstimationError("state is a Pauli eigenstate; the two-dimensional span is degenerate")
    basis = np.stack([psi, perp / norm], axis=1)
    block = basis.conj().T @ u @ basis
    vals, vecs = np.linalg.eig(block)
    pick = int(np.argmax(np.angle(vals)))
    vec = basis @ vecs[:, pick]
    return vec / np.linalg.norm(vec), float(np.angle(vals[pick]))


@dataclass(frozen=True)
class AqpeConfig:
    rfpe: RfpeParams = field(default_factory=lambda: RfpeParams(sigma_target=1e-3))
    delta: float = 0.1
    bound_shots: int = 2000
    bound_failure: float = 0.01
    epsilon: float = 0.02
    workers: int = 1

    @property
    def sampling_shots(self) -> int:
        return math.ceil(1.0 / self.epsilon**2)


@dataclass(frozen=True)
class PauliTask:
    """Everything one Pauli estimate needs, already remapped onto its allocation."""

    pauli_index: int
    pauli: str
    qmap: QubitMap
    prep: Circuit
    controlled_u: Circuit


def estimate_pauli(task: PauliTask, config: AqpeConfig, rng: np.random.Generator) -> EstimationResult:
    qmap = task.qmap
    if set(task.pauli) == {"I"}:
        return EstimationResult(task.pauli_index, task.pauli, 1.0, 1, "sampling", 0, 0.0, 0)
    qubits = qmap.all_qubits()
    psi = run_circuit(task.prep, SimState.zero(qubits, rng)).reduced(qmap.data)
    check = sign_and_bound(psi, task.pauli, config.delta, config.bound_shots, rng, config.bound_failure)
    if check.passed:
        u = controlled_block(task.controlled_u, qmap.data, qmap.qpe, qmap.comm_list())
        chi, _ = collapse(psi, task.pauli, u)
        prior = 2.0 * math.acos(min(abs(check.estimate), 1.0))
        res = rfpe_loop(spectral_source(u, chi), replace(config.rfpe, mu=prior), rng)
        value = min(abs(math.cos(res.phi / 2.0)), 1.0)
        return EstimationResult(
            task.pauli_index, task.pauli, value, check.sign, "aqpe",
            res.iterations, res.sigma, config.bound_shots + res.iterations,
        )
    shots = config.sampling_shots
    s = sample_pauli(psi, task.pauli, shots, rng)
    return EstimationResult(
        task.pauli_index, task.pauli, min(abs(s), 1.0), 1 if s >= 0 else -1, "sampling",
        0, 0.0, config.bound_shots + shots,
    )


def pauli_rng(seed: int, pauli_index: int, evaluation: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, evaluation, pauli_index])


def distributed_aqpe(
    schedule: Schedule,
    coeffs: Sequence[float],
    tasks: Sequence[PauliTask],
    config: AqpeConfig,
    seed: int = 0,
    evaluation: int = 0,
) -> tuple[float, list[EstimationResult]]:
    """Estimate every Pauli round by round and return the weighted sum."""
    placed = sorted(a.pauli_index for rnd in schedule.rounds for a in rnd)
    if len(coeffs) != len(tasks) or placed != list(range(1, len(tasks) + 1)):
        raise EstimationError(f"schedule covers {len(placed)} terms, Hamiltonian has {len(coeffs)}")
    by_index = {t.pauli_index: t for t in tasks}
    results: dict[int, EstimationResult] = {}

    def one(idx: int) -> EstimationResult:
        return estimate_pauli(by_index[idx], config, pauli_rng(seed, idx, evaluation))

    with ThreadPoolExecutor(max_workers=max(1, config.workers)) as pool:
        for rnd in schedule.rounds:
            idxs = [a.pauli_index for a in rnd]
            for idx, res in zip(idxs, pool.map(one, idxs)):
                results[idx] = res
    ordered = [results[i] for i in range(1, len(tasks) + 1)]
    energy = float(sum(c * r.value for c, r in zip(coeffs, ordered)))
    return energy, ordered


@dataclass(frozen=True)
class OptimizerConfig:
    sweeps: int = 3
    lower: float = -math.pi
    upper: float = math.pi
    tolerance: float = 1e-3
    initial: tuple[float, ...] | None = None


def golden_section(f: Callable[[float], float], lo: float, hi: float, tol: float) -> tuple[float, float]:
    inv = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c, d = b - inv * (b - a), a + inv * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - inv * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv * (b - a)
            fd = f(d)
    return (c, fc) if fc <= fd else (d, fd)


def coordinate_descent(f: Callable[[np.ndarray], float], x0: Sequence[float], config: OptimizerConfig) -> np.ndarray:
    x = np.array(x0, dtype=float)
    for _ in range(config.sweeps):
        for k in range(x.size):
            def line(t: float, k: int = k) -> float:
                y = x.copy()
                y[k] = t
                return f(y)

            x[k], _ = golden_section(line, config.lower, config.upper, config.tolerance)
    return x


@dataclass(frozen=True)
class VqeResult:
    energy: float
    parameters: tuple[float, ...]
    schedule: Schedule
    estimates: tuple[EstimationResult, ...]
    evaluations: int
    invocations: int

    def to_json(self) -> dict:
        return {
            "energy": self.energy,
            "parameters": list(self.parameters),
            "rounds": len(self.schedule.rounds),
            "evaluations": self.evaluations,
            "circuitInvocations": self.invocations,
            "estimates": [e.to_json() for e in self.estimates],
            "schedule": self.schedule.to_json(),
        }


def build_tasks(schedule: Schedule, h: PauliHamiltonian, r_template: Circuit) -> tuple[list[DistributedParts], list[QubitMap]]:
    """Remap the Ansatz pieces once per distinct layout, in Hamiltonian term order."""
    cache: dict[QubitMap, DistributedParts] = {}
    parts: list[DistributedParts | None] = [None] * len(h)
    for rnd in schedule.rounds:
        for alloc, qmap in zip(rnd, layout_round(schedule.cluster, rnd)):
            if qmap not in cache:
                cache[qmap] = distribute_parts(r_template, qmap, schedule.cluster)
            parts[alloc.pauli_index - 1] = cache[qmap]
    return parts, [p.qmap for p in parts]  # type: ignore[union-attr]


def distributed_avqe(
    cluster: ClusterSpec,
    h: PauliHamiltonian,
    r_template: Circuit,
    config: AqpeConfig | None = None,
    optimizer: OptimizerConfig | None = None,
    solver: str = "greedy",
    seed: int = 0,
) -> VqeResult:
    config = config or AqpeConfig()
    optimizer = optimizer or OptimizerConfig()
    n = h.num_qubits
    if r_template.num_qubits > n:
        raise EstimationError(f"Ansatz uses {r_template.num_qubits} qubits, Hamiltonian has {n}")
    schedule = distribute(cluster, n, len(h), solver)
    parts, _ = build_tasks(schedule, h, r_template)
    count = r_template.parameter_count()
    coeffs = h.coefficients
    state = {"evaluations": 0, "invocations": 0}

    def evaluate(lam: np.ndarray) -> tuple[float, list[EstimationResult]]:
        values = tuple(float(v) for v in lam)
        tasks = []
        for idx, (pauli, part) in enumerate(zip(h.paulis, parts)):
            tasks.append(PauliTask(idx + 1, pauli, part.qmap, part.r.bind(values), part.controlled_u(pauli).bind(values)))
        energy, res = distributed_aqpe(schedule, coeffs, tasks, config, seed, state["evaluations"])
        state["evaluations"] += 1
        state["invocations"] += sum(r.invocations for r in res)
        return energy, res

    x0 = optimizer.initial if optimizer.initial is not None else (0.0,) * count
    if len(x0) != count:
        raise EstimationError(f"initial point has {len(x0)} values, Ansatz has {count} parameters")
    best = coordinate_descent(lambda lam: evaluate(lam)[0], x0, optimizer) if count else np.zeros(0)
    energy, res = evaluate(best)
    return VqeResult(energy, tuple(float(v) for v in best), schedule, tuple(res), state["evaluations"], state["invocations"])
