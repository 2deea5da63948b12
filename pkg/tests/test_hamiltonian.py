from functools import reduce

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dqvqe.hamiltonian import (
    HamiltonianError,
    PauliHamiltonian,
    apply_pauli,
    exact_ground_energy,
    expectation,
    format_hamiltonian,
    parse_hamiltonian,
    pauli_matrix,
)

from helpers import read_data

# textbook matrices, built here so the oracle does not share code with the package
_M = {
    "I": np.eye(2),
    "X": np.array([[0, 1], [1, 0]]),
    "Y": np.array([[0, -1j], [1j, 0]]),
    "Z": np.diag([1, -1]),
}


def kron_pauli(p):
    return reduce(np.kron, [_M[c] for c in p])


def kron_hamiltonian(h):
    return sum(c * kron_pauli(p) for c, p in h.terms)


paulis = st.integers(1, 5).flatmap(lambda n: st.text("IXYZ", min_size=n, max_size=n))


def random_state(rng, n):
    v = rng.normal(size=2**n) + 1j * rng.normal(size=2**n)
    return v / np.linalg.norm(v)


def test_parse_two_terms():
    h = parse_hamiltonian("1.0 ZZ\n0.5 XI")
    assert h.terms == ((1.0, "ZZ"), (0.5, "XI")) and h.num_qubits == 2


def test_h2_fixture_has_fifteen_terms():
    h = parse_hamiltonian(read_data("h2_bk.txt"))
    assert len(h) == 15 and h.num_qubits == 4


@pytest.mark.parametrize("text", ["1.0 XY\n1.0 XYZ", "1.0 XQ", "abc ZZ", "1.0", "", "inf Z"])
def test_parse_rejects(text):
    with pytest.raises(HamiltonianError):
        parse_hamiltonian(text)


def test_comments_and_blank_lines_ignored():
    assert len(parse_hamiltonian("# header\n\n1.0 Z  # trailing\n")) == 1


def test_ground_energy_examples():
    assert exact_ground_energy(parse_hamiltonian("1.0 Z")) == pytest.approx(-1.0)
    assert exact_ground_energy(parse_hamiltonian("0.25 II")) == pytest.approx(0.25)
    # dense eigensolve of [[ZZ + 0.5 XI]], frozen
    assert exact_ground_energy(parse_hamiltonian("1.0 ZZ\n0.5 XI")) == pytest.approx(-1.118033988749895, abs=1e-12)


def test_h2_ground_energy_frozen():
    h = parse_hamiltonian(read_data("h2_bk.txt"))
    assert exact_ground_energy(h) == pytest.approx(-1.8510456784448643, abs=1e-10)
    assert exact_ground_energy(h) == pytest.approx(np.linalg.eigvalsh(kron_hamiltonian(h))[0], abs=1e-10)


def test_ground_energy_size_limit():
    with pytest.raises(HamiltonianError):
        exact_ground_energy(PauliHamiltonian(((1.0, "Z" * 13),)))


def test_sparse_path_agrees_with_dense():
    rng = np.random.default_rng(3)
    terms = tuple((float(rng.normal()), "".join(rng.choice(list("IXYZ"), 11))) for _ in range(6))
    h = PauliHamiltonian(terms)
    small = PauliHamiltonian(tuple((c, p[:8]) for c, p in terms))
    assert exact_ground_energy(small) == pytest.approx(np.linalg.eigvalsh(kron_hamiltonian(small))[0], abs=1e-9)
    assert np.isfinite(exact_ground_energy(h))


def test_expectation_examples():
    assert expectation(parse_hamiltonian("1.0 Z"), np.array([1, 0])) == pytest.approx(1.0)
    plus = np.array([1, 1]) / np.sqrt(2)
    assert expectation(parse_hamiltonian("1.0 X"), plus) == pytest.approx(1.0)


def test_expectation_dimension_mismatch():
    with pytest.raises(HamiltonianError):
        expectation(parse_hamiltonian("1.0 ZZ"), np.array([1, 0]))


@settings(max_examples=80, deadline=None)
@given(paulis, st.integers(0, 2**32 - 1))
def test_apply_pauli_matches_kronecker(pauli, seed):
    state = random_state(np.random.default_rng(seed), len(pauli))
    assert np.allclose(apply_pauli(pauli, state), kron_pauli(pauli) @ state, atol=1e-12)
    assert np.allclose(pauli_matrix(pauli), kron_pauli(pauli))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_expectation_matches_dense_oracle(seed):
    rng = np.random.default_rng(seed)
    terms = tuple((float(rng.normal()), "".join(rng.choice(list("IXYZ"), 3))) for _ in range(5))
    h = PauliHamiltonian(terms)
    psi = random_state(rng, 3)
    oracle = float(np.real(np.vdot(psi, kron_hamiltonian(h) @ psi)))
    assert expectation(h, psi) == pytest.approx(oracle, abs=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_expectation_linear_and_bounded_below(seed, a, b):
    rng = np.random.default_rng(seed)
    ps = ["".join(rng.choice(list("IXYZ"), 3)) for _ in range(2)]
    psi = random_state(rng, 3)
    h = PauliHamiltonian(((a, ps[0]), (b, ps[1])))
    parts = [expectation(PauliHamiltonian(((1.0, p),)), psi) for p in ps]
    assert expectation(h, psi) == pytest.approx(a * parts[0] + b * parts[1], abs=1e-10)
    assert expectation(h, psi) >= exact_ground_energy(h) - 1e-9


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(-10, 10, allow_nan=False), st.sampled_from(["IX", "ZZ", "YI", "XY"])), min_size=1, max_size=6))
def test_format_round_trip(terms):
    h = PauliHamiltonian(tuple(terms))
    assert parse_hamiltonian(format_hamiltonian(h)) == h
