import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ionherald.qops import (DensityMatrix, HilbertSpace, Operator, StateVector, destroy, embed,
                            expectation, identity, partial_trace, reduced_state, tensor,
                            tensor_all)

SX = np.array([[0, 1], [1, 0]], dtype=complex)
SZ = np.diag([1.0, -1.0]).astype(complex)


def op(m):
    return Operator.from_dense(m)


def rand_matrix(rng, n):
    return rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))


def rand_dm(rng, n):
    a = rand_matrix(rng, n)
    m = a @ a.conj().T
    return m / np.trace(m)


def brute_kron(a, b):
    ra, ca = a.shape
    rb, cb = b.shape
    out = np.zeros((ra * rb, ca * cb), dtype=complex)
    for i in range(ra):
        for j in range(ca):
            for k in range(rb):
                for m in range(cb):
                    out[i * rb + k, j * cb + m] = a[i, j] * b[k, m]
    return out


seeds = st.integers(min_value=0, max_value=2**32 - 1)
dims = st.integers(min_value=2, max_value=4)


# -- hilbert space -----------------------------------------------------------

def test_space_rejects_bad_factors():
    with pytest.raises(ValueError):
        HilbertSpace(())
    with pytest.raises(ValueError):
        HilbertSpace((2, 1))


def test_index_roundtrip():
    sp = HilbertSpace((5, 5, 3, 3))
    for i in (0, 17, 224):
        assert sp.index(sp.labels(i)) == i
    assert sp.index((1, 0, 0, 0)) == 45


def test_state_constructor_checks():
    with pytest.raises(ValueError):
        StateVector(HilbertSpace((2,)), [1, 0, 0])
    with pytest.raises(ValueError):
        StateVector(HilbertSpace((2,)), [1, 1], normalized=True)
    assert StateVector(HilbertSpace((2,)), [1, 1]).unit().norm() == pytest.approx(1.0)


def test_operator_rejects_wrong_shape_and_false_hermitian_flag():
    with pytest.raises(ValueError):
        Operator(HilbertSpace((3,)), np.eye(2))
    with pytest.raises(ValueError):
        Operator.from_dense([[0, 1], [0, 0]], hermitian=True)


def test_space_mismatch_is_an_error():
    with pytest.raises(ValueError):
        identity((2, 3)) @ identity((3, 2))


# -- tensor ------------------------------------------------------------------

def test_identity_tensor_identity():
    out = tensor(identity(2), identity(2))
    assert out.space.factors == (2, 2)
    assert np.array_equal(out.dense(), np.eye(4))


def test_sigma_x_flips_first_factor():
    psi = StateVector.basis((2, 2), (1, 0))
    out = tensor(op(SX), identity(2)) @ psi
    assert np.allclose(out.amplitudes, StateVector.basis((2, 2), (0, 0)).amplitudes)


def test_diagonal_kronecker_against_brute_force():
    a, b = np.diag([1.0, 2.0]), np.diag([3.0, 4.0])
    got = tensor(op(a), op(b)).dense()
    assert np.allclose(got, np.diag([3, 4, 6, 8]))
    assert np.allclose(got, brute_kron(a, b))


def test_tensor_type_mismatch():
    with pytest.raises(TypeError):
        tensor(identity(2), StateVector.basis(2, (0,)))


@settings(max_examples=40, deadline=None)
@given(seeds, dims, dims)
def test_mixed_product_property(seed, n, m):
    rng = np.random.default_rng(seed)
    a, c = rand_matrix(rng, n), rand_matrix(rng, n)
    b, d = rand_matrix(rng, m), rand_matrix(rng, m)
    lhs = (tensor(op(a), op(b)) @ tensor(op(c), op(d))).dense()
    rhs = tensor(op(a @ c), op(b @ d)).dense()
    assert np.max(np.abs(lhs - rhs)) < 1e-12 * max(1.0, np.max(np.abs(rhs)))


@settings(max_examples=30, deadline=None)
@given(seeds, dims, dims, dims)
def test_tensor_all_matches_brute_force(seed, n, m, k):
    rng = np.random.default_rng(seed)
    mats = [rand_matrix(rng, d) for d in (n, m, k)]
    got = tensor_all(op(x) for x in mats).dense()
    ref = brute_kron(brute_kron(mats[0], mats[1]), mats[2])
    assert np.allclose(got, ref, atol=1e-12)


# -- embed -------------------------------------------------------------------

def test_embed_sigma_x_on_first_qubit():
    out = embed(SX, 0, (2, 2)) @ StateVector.basis((2, 2), (0, 0))
    assert np.allclose(out.amplitudes, StateVector.basis((2, 2), (1, 0)).amplitudes)


def test_embed_identity_gives_identity():
    assert np.array_equal(embed(np.eye(3), 1, (2, 3)).dense(), np.eye(6))


def test_embed_annihilator_kills_vacuum():
    sp = HilbertSpace((5, 5, 3, 3))
    a_h = embed(destroy(3), 2, sp)
    out = a_h @ StateVector.basis(sp, (0, 0, 0, 0))
    assert np.all(out.amplitudes == 0)


def test_embed_errors():
    with pytest.raises(IndexError):
        embed(SX, 2, (2, 2))
    with pytest.raises(ValueError):
        embed(np.eye(3), 0, (2, 2))


@settings(max_examples=30, deadline=None)
@given(seeds, dims, dims)
def test_embeds_on_disjoint_factors_commute(seed, n, m):
    rng = np.random.default_rng(seed)
    sp = HilbertSpace((n, m))
    a = embed(rand_matrix(rng, n), 0, sp).dense()
    b = embed(rand_matrix(rng, m), 1, sp).dense()
    assert np.max(np.abs(a @ b - b @ a)) < 1e-12 * max(1.0, np.max(np.abs(a @ b)))


# -- partial trace -----------------------------------------------------------

def test_partial_trace_of_product_state():
    psi = StateVector(HilbertSpace((2, 2)), np.array([0.6, 0, 0, 0.8j]))
    rho = tensor(psi.dm(), StateVector.basis(3, (0,)).dm())
    red = partial_trace(rho, [0, 1])
    assert np.allclose(red.entries, psi.dm().entries)


def test_bell_pair_marginal_is_maximally_mixed():
    bell = StateVector(HilbertSpace((2, 2)), np.array([0, 1, 1, 0]) / np.sqrt(2))
    for keep in (0, 1):
        assert np.allclose(partial_trace(bell.dm(), keep).entries, np.eye(2) / 2)


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_partial_trace_matches_index_summation(seed):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=8) + 1j * rng.normal(size=8)
    psi = StateVector(HilbertSpace((2, 2, 2)), v / np.linalg.norm(v))
    rho = psi.dm().entries.reshape(2, 2, 2, 2, 2, 2)
    ref = np.zeros((2, 2), dtype=complex)
    for i in range(2):
        for j in range(2):
            for a in range(2):
                for b in range(2):
                    ref[i, j] += rho[a, i, b, a, j, b]
    got = partial_trace(psi.dm(), [1]).entries
    assert np.max(np.abs(got - ref)) < 1e-12
    assert np.allclose(reduced_state(psi, None, [1]).entries, ref, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(seeds, dims, dims)
def test_partial_trace_recovers_product_factors(seed, n, m):
    rng = np.random.default_rng(seed)
    a = DensityMatrix(HilbertSpace((n,)), rand_dm(rng, n))
    b = DensityMatrix(HilbertSpace((m,)), rand_dm(rng, m))
    ab = tensor(a, b)
    assert np.allclose(partial_trace(ab, 0).entries, a.entries, atol=1e-12)
    assert np.allclose(partial_trace(ab, 1).entries, b.entries, atol=1e-12)


def test_reduced_state_keeps_factor_order():
    sp = HilbertSpace((2, 3, 2))
    rng = np.random.default_rng(4)
    v = rng.normal(size=12) + 1j * rng.normal(size=12)
    psi = StateVector(sp, v / np.linalg.norm(v))
    assert np.allclose(reduced_state(psi, sp, (0, 2)).entries,
                       partial_trace(psi.dm(), (0, 2)).entries, atol=1e-12)


# -- expectation -------------------------------------------------------------

def test_sigma_z_expectation_on_ground():
    assert expectation(op(SZ), StateVector.basis(2, (0,))) == pytest.approx(1.0)


def test_trace_of_identity_times_rho():
    rho = DensityMatrix(HilbertSpace((3,)), rand_dm(np.random.default_rng(1), 3))
    assert expectation(identity(3), rho) == pytest.approx(1.0)


@settings(max_examples=30, deadline=None)
@given(seeds, st.integers(min_value=2, max_value=12))
def test_expectation_matches_dense(seed, n):
    rng = np.random.default_rng(seed)
    a = rand_matrix(rng, n)
    h = a + a.conj().T
    v = rng.normal(size=n) + 1j * rng.normal(size=n)
    v /= np.linalg.norm(v)
    psi = StateVector(HilbertSpace((n,)), v)
    ref = v.conj() @ h @ v
    assert abs(expectation(op(h), psi) - ref) < 1e-12 * max(1.0, abs(ref))
    assert abs(expectation(op(h), psi.dm()) - ref) < 1e-12 * max(1.0, abs(ref))


def test_density_matrix_check():
    DensityMatrix(HilbertSpace((2,)), np.eye(2) / 2).check()
    with pytest.raises(ValueError):
        DensityMatrix(HilbertSpace((2,)), np.diag([1.5, -0.5])).check()
    with pytest.raises(ValueError):
        DensityMatrix(HilbertSpace((2,)), [[0.5, 1], [0, 0.5]]).check()
