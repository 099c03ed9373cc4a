import itertools
from functools import reduce

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stochcancel.errors import ConfigError
from stochcancel.pauli import (
    DENSE_CEILING,
    LocalOperator,
    OperatorMatrix,
    PauliString,
    commutator,
    multiply,
    parse_operator,
    spectral_norm,
    support,
    to_matrix,
)

I2 = np.eye(2)
PAULI = {
    "I": I2,
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]]),
    "Z": np.diag([1.0, -1.0]).astype(complex),
}


def kron_oracle(string: PauliString, n: int) -> np.ndarray:
    """Explicit Kronecker product with site 0 as the leftmost factor."""
    letters = dict(string.sites)
    return reduce(np.kron, [PAULI[letters.get(i, "I")] for i in range(n)])


def op_oracle(op: LocalOperator, n: int) -> np.ndarray:
    out = np.zeros((2**n, 2**n), dtype=complex)
    for c, s in op.terms:
        out += c * kron_oracle(s, n)
    return out


strings = st.dictionaries(st.integers(0, 3), st.sampled_from("XYZ"), max_size=4).map(PauliString.from_mapping)
coefs = st.complex_numbers(max_magnitude=3, allow_nan=False, allow_infinity=False)
operators = st.lists(st.tuples(coefs, strings), max_size=4).map(LocalOperator)


def test_multiply_examples():
    assert multiply(PauliString.single("X", 0), PauliString.single("Y", 0)) == (1j, PauliString.single("Z", 0))
    assert multiply(PauliString.single("Z", 0), PauliString.single("Z", 0)) == (1, PauliString())
    ph, prod = multiply(PauliString.single("X", 0), PauliString.single("Y", 1))
    assert ph == 1 and prod == PauliString.from_mapping({0: "X", 1: "Y"})


def test_commutator_examples():
    X0, Y0, Z0 = (LocalOperator.pauli(l, 0) for l in "XYZ")
    assert commutator(X0, Y0) == LocalOperator.pauli("Z", 0, 2j)
    assert commutator(X0, X0).is_zero
    zz = parse_operator("Z0*Z1")
    got = commutator(zz, X0)
    assert got == parse_operator("(0+2j)*Y0*Z1")
    a, b = op_oracle(zz, 2), op_oracle(X0, 2)
    np.testing.assert_allclose(to_matrix(got, 2).toarray(), a @ b - b @ a, atol=1e-14)


def test_to_matrix_examples():
    np.testing.assert_array_equal(to_matrix(LocalOperator.pauli("X", 0), 1).toarray(), [[0, 1], [1, 0]])
    np.testing.assert_array_equal(to_matrix(LocalOperator.identity(), 2).toarray(), np.eye(4))
    np.testing.assert_array_equal(to_matrix(parse_operator("Z0*Z1"), 2).toarray(), np.diag([1, -1, -1, 1]))


def test_to_matrix_rejects_out_of_range_site():
    with pytest.raises(ValueError):
        to_matrix(LocalOperator.pauli("X", 3), 2)


def test_support_examples():
    assert support(LocalOperator.pauli("Y", 2)) == {2}
    assert support(parse_operator("Z0*Z1 + X3")) == {0, 1, 3}
    assert support(LocalOperator.identity()) == frozenset()


def test_spectral_norm_examples():
    assert spectral_norm(to_matrix(LocalOperator.pauli("X", 0), 1)) == pytest.approx(1.0)
    assert spectral_norm(to_matrix(LocalOperator.identity(2.0), 1)) == pytest.approx(2.0)
    m = to_matrix(parse_operator("Z0*Z1 + X0"), 2)
    oracle = np.linalg.svd(op_oracle(parse_operator("Z0*Z1 + X0"), 2), compute_uv=False)[0]
    assert spectral_norm(m) == pytest.approx(oracle, rel=1e-12)
    assert oracle == pytest.approx(np.sqrt(2), rel=1e-12)


def test_spectral_norm_sparse_path_matches_dense():
    op = parse_operator("Z0*Z1 + 0.3*X2 - 0.7*Y5*Y6 + 0.2*X10")
    n = 11
    assert 2**n > DENSE_CEILING
    sparse = to_matrix(op, n)
    assert sparse.is_sparse
    dense = np.linalg.eigvalsh(to_matrix(op, n, sparse=False).toarray())
    assert spectral_norm(sparse) == pytest.approx(np.max(np.abs(dense)), rel=1e-8)


def test_canonical_form_merges_and_prunes():
    op = LocalOperator([(1.0, PauliString.single("X", 1)), (2.0, PauliString.single("X", 1)),
                        (1e-16, PauliString.single("Z", 0)), (0.5, PauliString.single("Y", 0))])
    assert op.terms == ((0.5, PauliString.single("Y", 0)), (3.0, PauliString.single("X", 1)))
    assert (op - op).is_zero


def test_pauli_string_invariants():
    with pytest.raises(ValueError):
        PauliString(((1, "X"), (0, "Z")))
    with pytest.raises(ValueError):
        PauliString(((0, "Q"),))
    assert PauliString.from_mapping({2: "I", 1: "x"}) == PauliString.single("X", 1)
    assert str(PauliString()) == "I"


def test_operator_matrix_invariants():
    with pytest.raises(ValueError):
        OperatorMatrix(np.zeros((3, 3)))
    with pytest.raises(ValueError):
        OperatorMatrix(np.array([[0, 1], [0, 0]]), hermitian=True)
    assert not OperatorMatrix.wrap(np.array([[0, 1], [0, 0]])).hermitian


@pytest.mark.parametrize("text", ["1.0*Z0*Z1 + 0.5*X3", "-2e-3*Y2 + X0", "(0+1j)*X1 - 0.25*Z0*Y4", "3*I"])
def test_parse_format_round_trip(text):
    op = parse_operator(text)
    assert parse_operator(str(op)) == op


def test_parse_errors():
    for bad in ["", "X", "2*Q0", "1.0*Z0 +"]:
        with pytest.raises(ConfigError):
            parse_operator(bad)


@given(strings, strings)
def test_multiply_matches_matrix_product(a, b):
    ph, c = multiply(a, b)
    assert ph in (1, -1, 1j, -1j)
    np.testing.assert_allclose(kron_oracle(a, 4) @ kron_oracle(b, 4), ph * kron_oracle(c, 4), atol=1e-14)


@given(strings, strings, strings)
def test_multiply_associative(a, b, c):
    p1, ab = multiply(a, b)
    p2, abc1 = multiply(ab, c)
    q1, bc = multiply(b, c)
    q2, abc2 = multiply(a, bc)
    assert abc1 == abc2
    assert p1 * p2 == pytest.approx(q1 * q2)


@given(operators, operators)
def test_to_matrix_homomorphism(a, b):
    np.testing.assert_allclose(to_matrix(a * b, 4).toarray(), to_matrix(a, 4).toarray() @ to_matrix(b, 4).toarray(),
                               atol=1e-10)
    np.testing.assert_allclose(to_matrix(a + b, 4).toarray(), op_oracle(a, 4) + op_oracle(b, 4), atol=1e-12)


@given(operators, operators)
def test_commutator_antisymmetric_and_matches_matrices(a, b):
    assert commutator(a, b) == -commutator(b, a)
    A, B = op_oracle(a, 4), op_oracle(b, 4)
    np.testing.assert_allclose(to_matrix(commutator(a, b), 4).toarray(), A @ B - B @ A, atol=1e-10)


@given(operators)
def test_hermitian_flag_iff_real_coefficients(op):
    m = to_matrix(op, 4)
    assert m.hermitian == op.has_real_coefficients
    if m.hermitian:
        np.testing.assert_allclose(m.toarray(), m.toarray().conj().T, atol=1e-12)


@given(strings, st.floats(-5, 5, allow_nan=False).filter(lambda c: abs(c) > 1e-6))
def test_norm_of_weighted_string(s, c):
    assert spectral_norm(to_matrix(LocalOperator([(c, s)]), 4)) == pytest.approx(abs(c), rel=1e-12)


@given(operators)
def test_sparse_and_dense_agree(op):
    np.testing.assert_array_equal(to_matrix(op, 4, sparse=True).toarray(), to_matrix(op, 4, sparse=False).toarray())


def test_all_two_site_strings_against_kron():
    for la, lb in itertools.product("IXYZ", repeat=2):
        s = PauliString.from_mapping({0: la, 1: lb})
        np.testing.assert_array_equal(to_matrix(LocalOperator([(1.0, s)]), 2).toarray(), np.kron(PAULI[la], PAULI[lb]))
