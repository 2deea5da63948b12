import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dqvqe.circuit import (
    Circuit,
    ClassicalComm,
    ClassicallyControlled,
    Controlled,
    EntGen,
    Measure,
    QubitId,
    Single,
    dagger,
    layerize,
    lift_control,
    parse_circuit,
    q,
)
from dqvqe.hamiltonian import pauli_matrix
from dqvqe.placement import ClusterSpec, greedy_distribute
from dqvqe.remap import (
    QubitMap,
    RemapError,
    build_controlled_pi,
    build_controlled_u,
    build_reflection,
    build_u,
    distributed_remap,
    get_series_cgates,
    layout_round,
)
from dqvqe.statevector import channel_unitary, circuit_unitary, simulate

from helpers import fidelity, product_input, random_circuit, random_map, read_data


def count(c, kind):
    return sum(isinstance(g, kind) for g in c.gates())


def same_up_to_phase(a, b, tol=1e-10):
    k = np.unravel_index(np.argmax(np.abs(b)), b.shape)
    phase = a[k] / b[k]
    return abs(abs(phase) - 1) < tol and np.allclose(a, phase * b, atol=tol)


def reflection_oracle(n):
    m = np.eye(2**n)
    m[0, 0] = -1
    return m


def two_qpu_map():
    return QubitMap.build([QubitId(0, 0), QubitId(1, 0)], {0: [1, 2], 1: [1, 2]})


def test_local_cnot_unchanged():
    c = parse_circuit("qubits 2\ncx 0:0 0:1\n")
    qm = QubitMap.build([QubitId(0, 0), QubitId(0, 1)], {0: [2, 3]})
    assert distributed_remap(c, qm).layers == ((Controlled(Single("X", QubitId(0, 1)), QubitId(0, 0)),),)


def test_cross_qpu_cnot_flips_target():
    c = parse_circuit("qubits 2\nx 0:0\n--\ncx 0:0 0:1\n")
    qm = two_qpu_map()
    out = simulate(distributed_remap(c, qm), qm.all_qubits(), seed=5)
    vec = out.reduced([QubitId(0, 0), QubitId(1, 0)])  # raises unless comm qubits are |0>
    assert np.allclose(vec, [0, 0, 0, 1])


def test_cross_qpu_gate_accounting():
    d = distributed_remap(parse_circuit("qubits 2\ncx 0:0 0:1\n"), two_qpu_map())
    assert count(d, EntGen) == 1
    assert count(d, Measure) == 2
    assert count(d, ClassicalComm) == 2
    corrections = [g for g in d.gates() if isinstance(g, ClassicallyControlled)]
    # two corrections plus the comm-qubit resets
    assert sorted(g.inner.name for g in corrections) == ["X", "X", "X", "Z"]
    assert sum(isinstance(g, Single) and g.name == "H" for g in d.gates()) == 1
    assert sum(isinstance(g, Controlled) for g in d.gates()) == 2


def test_shared_control_folds_into_one_session():
    c = parse_circuit(read_data("shared_control_circuit.txt"))
    qm = QubitMap.from_json(json.loads(read_data("shared_control_map.json")))
    d = distributed_remap(c, qm)
    assert count(d, EntGen) == 1 and count(d, ClassicalComm) == 2
    remote = [g for g in d.gates() if isinstance(g, Controlled) and g.target.qpu == 1]
    assert [g.target for g in remote] == [QubitId(1, 0), QubitId(1, 1)]
    assert len({g.controls for g in remote}) == 1


def test_missing_comm_qubits_rejected():
    qm = QubitMap.build([QubitId(0, 0), QubitId(1, 0)], {0: [1]})
    with pytest.raises(RemapError):
        distributed_remap(parse_circuit("qubits 2\ncx 0:0 0:1\n"), qm)


def test_qubit_map_validation_and_json():
    with pytest.raises(RemapError):
        QubitMap.build([QubitId(0, 0), QubitId(0, 0)])
    with pytest.raises(RemapError):
        QubitMap.build([QubitId(0, 0)], {0: [0]})
    qm = QubitMap.build([QubitId(0, 0), QubitId(1, 0)], {0: [1, 2], 1: [1, 2]}, QubitId(0, 3))
    assert QubitMap.from_json(json.loads(json.dumps(qm.to_json()))) == qm
    with pytest.raises(RemapError):
        QubitMap.from_json({"comm": {}})


def test_series_scan_examples():
    a, x, y = QubitId(0, 0), QubitId(1, 0), QubitId(1, 1)
    cnot = lambda c, t: Controlled(Single("X", t), c)  # noqa: E731
    layers = [[cnot(a, x)], [cnot(a, y)], [Single("H", a)]]
    assert get_series_cgates(layers, 0, 1, a) == [cnot(a, y)]
    assert get_series_cgates([[cnot(a, x)], [Single("H", a)], [cnot(a, y)]], 0, 1, a) == []
    assert get_series_cgates(layers, 2, 1, a) == []
    with pytest.raises(RemapError):
        get_series_cgates(layers, 3, 1, a)


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5])
def test_reflection_matrix(n):
    u = circuit_unitary(build_reflection(n), [q(k) for k in range(n)])
    assert same_up_to_phase(u, reflection_oracle(n))


def test_reflection_rejects_zero():
    with pytest.raises(RemapError):
        build_reflection(0)


def test_u_with_identity_pauli_and_empty_r():
    u = circuit_unitary(build_u(Circuit((), 2), "II", 2), [q(0), q(1)])
    assert same_up_to_phase(u, np.eye(4))


def test_u_single_qubit_z():
    pi = reflection_oracle(1)
    z = np.diag([1, -1])
    u = circuit_unitary(build_u(Circuit((), 1), "Z", 1), [q(0)])
    assert same_up_to_phase(u, pi @ z @ pi @ z)


def test_u_length_mismatch():
    with pytest.raises(RemapError):
        build_u(Circuit((), 2), "Z", 2)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["ZZ", "XI", "YX", "ZI", "XY"]))
def test_u_eigenphase_encodes_expectation(seed, pauli):
    r = random_circuit(np.random.default_rng(seed), 2, 2, 6)
    qs = [q(0), q(1)]
    rm = circuit_unitary(r, qs)
    psi = rm[:, 0]
    p = pauli_matrix(pauli)
    s = abs(np.vdot(psi, p @ psi))
    if s > 1 - 1e-6:
        return  # span is one-dimensional
    u = circuit_unitary(build_u(r, pauli, 2), qs)
    # orthonormal basis of span{psi, P psi}
    w = p @ psi - np.vdot(psi, p @ psi) * psi
    basis = np.stack([psi, w / np.linalg.norm(w)], axis=1)
    block = basis.conj().T @ u @ basis
    assert np.allclose(u @ basis, basis @ block, atol=1e-9)  # invariant subspace
    lam = np.linalg.eigvals(block)
    assert abs(lam[0] - np.conj(lam[1])) < 1e-8 and abs(lam[0] * lam[1] - 1) < 1e-8  # e^{+i phi}, e^{-i phi}
    assert np.cos(abs(np.angle(lam[0])) / 2) == pytest.approx(s, abs=1e-8)


def test_controlled_pi_single_qpu_is_lift():
    qm = QubitMap.build([q(0), q(1)], {}, q(2))
    assert build_controlled_pi(2, qm) == lift_control(build_reflection(2), q(2))


def controlled_reflection_oracle(n):
    """Data qubits first, control last (least significant)."""
    m = np.eye(2 ** (n + 1))
    m[1, 1] = -1  # |0..0>|1>
    return m


def test_controlled_pi_split_two_plus_two():
    data = [QubitId(0, 0), QubitId(0, 1), QubitId(1, 0), QubitId(1, 1)]
    qpe = QubitId(0, 2)
    qm = QubitMap.build(data, {0: [3, 4], 1: [2, 3]}, qpe)
    c = build_controlled_pi(4, qm)
    assert count(c, EntGen) >= 1
    u = channel_unitary(c, data + [qpe], qm.comm_list(), seed=2)
    assert same_up_to_phase(u, controlled_reflection_oracle(4))
    # control off: identity on the data block
    assert np.allclose(u[0::2, 0::2], u[0, 0] * np.eye(16), atol=1e-10)


def test_three_qpu_toffoli():
    c = layerize([Single("H", q(0)), Single("H", q(1)), Controlled(Controlled(Single("X", q(2)), q(1)), q(0))], 3)
    qm = QubitMap.build([QubitId(0, 0), QubitId(1, 0), QubitId(2, 0)], {j: [1, 2] for j in range(3)})
    u = channel_unitary(distributed_remap(c, qm), list(qm.data), qm.comm_list())
    assert same_up_to_phase(u, circuit_unitary(c, [q(0), q(1), q(2)]))


def test_layout_round_maps_are_disjoint():
    s = greedy_distribute(ClusterSpec((9, 9, 9)), 4, 4)
    maps = layout_round(s.cluster, s.rounds[0])
    seen = [qb for m in maps for qb in m.all_qubits()]
    assert len(seen) == len(set(seen))
    for qm, alloc in zip(maps, s.rounds[0]):
        assert qm.qpe is not None and qm.qpe.qpu == alloc.qpe_qpu
        assert [sum(qb.qpu == j for qb in qm.data) for j in range(3)] == list(alloc.per_qpu)
        for qb in qm.all_qubits():
            assert qb.local < s.cluster.qpu_sizes[qb.qpu]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 6), st.integers(2, 3))
def test_remap_preserves_state(seed, n, qpus):
    rng = np.random.default_rng(seed)
    c = product_input(rng, n).then(random_circuit(rng, n, 6, 4))
    qm, cluster = random_map(rng, n, qpus)
    d = distributed_remap(c, qm, cluster)
    data = [q(k) for k in range(n)]
    ref = simulate(c, data).reduced(data)
    out = simulate(d, qm.all_qubits(), seed=seed).reduced(list(qm.data))  # comm qubits back in |0>
    assert fidelity(ref, out) >= 1 - 1e-10
    # one EntGen per cat session, two classical messages per session
    assert 2 * count(d, EntGen) == count(d, ClassicalComm)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_remap_of_dagger_inverts(seed):
    rng = np.random.default_rng(seed)
    c = random_circuit(rng, 4, 5, 4)
    qm, cluster = random_map(rng, 4, 2)
    both = distributed_remap(c, qm, cluster).then(distributed_remap(dagger(c), qm, cluster))
    u = channel_unitary(both, list(qm.data), qm.comm_list(), seed=seed)
    assert same_up_to_phase(u, np.eye(16))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["ZZ", "XY", "IZ"]))
def test_controlling_only_reflections_controls_all_of_u(seed, pauli):
    r = random_circuit(np.random.default_rng(seed), 2, 2, 5)
    qs = [q(0), q(1), q(2)]
    cu = circuit_unitary(build_controlled_u(r, pauli, 2), qs)
    assert same_up_to_phase(cu, circuit_unitary(lift_control(build_u(r, pauli, 2), q(2)), qs))
