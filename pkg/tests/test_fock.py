import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfbosons.errors import CapacityError, ContractError
from mfbosons.fock import (
    ManyBodyState,
    TwoBodyTensor,
    annihilation_matrix,
    basis_vector,
    condensate_state,
    dgamma_one_body,
    dgamma_two_body,
    effective_potential,
    enumerate_sector,
    fock_annihilation,
    fock_annihilation_along,
    from_triplets,
    hermiticity_residual,
    identity_tensor,
    number_operator,
    sector_dimension,
    symmetrize_tensor,
    truncated_fock_basis,
)

from oracles import annihilation_oracle, one_body_oracle, random_hermitian, random_unit, two_body_oracle

SMALL = [(1, 3), (2, 1), (2, 3), (3, 2), (3, 3), (4, 2)]


def random_tensor(rng, d):
    raw = rng.normal(size=(d,) * 4) + 1j * rng.normal(size=(d,) * 4)
    return symmetrize_tensor(raw)


def test_sector_order_and_dimension():
    b = enumerate_sector(2, 2)
    assert b.states == ((2, 0), (1, 1), (0, 2))
    assert enumerate_sector(3, 2).states[:3] == ((2, 0, 0), (1, 1, 0), (1, 0, 1))
    for d, n in [(1, 5), (2, 4), (3, 3), (4, 2), (5, 0)]:
        assert len(enumerate_sector(d, n)) == math.comb(n + d - 1, d - 1) == sector_dimension(d, n)


def test_truncated_basis_layout():
    fb = truncated_fock_basis(2, 3)
    assert fb.dim == 1 + 2 + 3 + 4
    assert fb.offsets == (0, 1, 3, 6)
    assert list(fb.particle_numbers()) == [0, 1, 1, 2, 2, 2, 3, 3, 3, 3]
    assert fb.index((0, 2)) == 5
    v = fb.embed(1, np.array([1.0, 2.0]))
    assert v[1] == 1.0 and v[2] == 2.0 and np.count_nonzero(v) == 2


def test_capacity_guard():
    with pytest.raises(CapacityError):
        enumerate_sector(10, 10, cap=1000)
    with pytest.raises(CapacityError):
        truncated_fock_basis(6, 6, cap=100)


def test_triplets_merge_duplicates():
    M = from_triplets([0, 0, 1], [1, 1, 0], [1.0, 2.0, 5.0], (2, 2))
    assert M[0, 1] == 3.0 and M[1, 0] == 5.0 and M.nnz == 2


@pytest.mark.parametrize("d,n", [(2, 1), (2, 3), (3, 2), (3, 3)])
def test_annihilation_matches_first_quantization(d, n):
    upper, lower = enumerate_sector(d, n), enumerate_sector(d, n - 1)
    for k in range(d):
        ours = annihilation_matrix(upper, lower, k).toarray()
        ref = annihilation_oracle(d, n, upper.states, lower.states, k)
        assert np.max(np.abs(ours - ref)) < 1e-12


def test_canonical_commutation_relations():
    d, M = 3, 4
    fb = truncated_fock_basis(d, M)
    a = [fock_annihilation(fb, k).toarray() for k in range(d)]
    keep = fb.particle_numbers() < M  # truncation breaks the CCR on the top sector only
    for i in range(d):
        for j in range(d):
            comm = a[i] @ a[j].conj().T - a[j].conj().T @ a[i]
            target = np.eye(fb.dim) if i == j else 0
            assert np.max(np.abs((comm - target)[np.ix_(keep, keep)])) < 1e-12
            assert np.max(np.abs(a[i] @ a[j] - a[j] @ a[i])) < 1e-12


def test_annihilation_along_vector(rng):
    fb = truncated_fock_basis(3, 3)
    f = rng.normal(size=3) + 1j * rng.normal(size=3)
    ref = sum(np.conj(f[k]) * fock_annihilation(fb, k).toarray() for k in range(3))
    assert np.max(np.abs(fock_annihilation_along(fb, f).toarray() - ref)) < 1e-12


@pytest.mark.parametrize("d,n", SMALL)
def test_one_body_second_quantization_oracle(rng, d, n):
    A = random_hermitian(rng, d)
    basis = enumerate_sector(d, n)
    ours = dgamma_one_body(A, basis).toarray()
    assert np.max(np.abs(ours - one_body_oracle(A, d, n, basis.states))) < 1e-12


@pytest.mark.parametrize("d,n", [(2, 2), (2, 4), (3, 2), (3, 3)])
def test_two_body_second_quantization_oracle(rng, d, n):
    w = random_tensor(rng, d)
    basis = enumerate_sector(d, n)
    ours = dgamma_two_body(w, basis).toarray()
    assert np.max(np.abs(ours - two_body_oracle(w.entries, d, n, basis.states))) < 1e-12


def test_second_quantization_on_truncated_space_is_block_diagonal(rng):
    d, N = 2, 3
    A = random_hermitian(rng, d)
    w = random_tensor(rng, d)
    fb = truncated_fock_basis(d, N)
    G1, G2 = dgamma_one_body(A, fb).toarray(), dgamma_two_body(w, fb).toarray()
    for n, sector in enumerate(fb.sectors):
        sl = fb.sector_slice(n)
        assert np.allclose(G1[sl, sl], dgamma_one_body(A, sector).toarray(), atol=1e-13)
        assert np.allclose(G2[sl, sl], dgamma_two_body(w, sector).toarray(), atol=1e-13)
    numbers = fb.particle_numbers()
    off = numbers[:, None] != numbers[None, :]
    assert np.all(G1[off] == 0) and np.all(G2[off] == 0)


def test_number_operator_is_dgamma_identity():
    basis = enumerate_sector(3, 4)
    assert np.allclose(number_operator(basis).toarray(), dgamma_one_body(np.eye(3), basis).toarray())
    assert np.allclose(number_operator(basis).diagonal(), 4)


def test_scaled_identity_counts_pairs():
    d, n, c = 3, 4, 0.7
    w = symmetrize_tensor(identity_tensor(d, c))
    H = dgamma_two_body(w, enumerate_sector(d, n)).toarray()
    assert np.allclose(H, c * n * (n - 1) / 2 * np.eye(H.shape[0]), atol=1e-12)
    assert w.op_norm == pytest.approx(c)


def test_effective_potential_of_identity(rng):
    d, c = 3, 1.3
    phi = random_unit(rng, d)
    # the raw identity gives c * Id exactly
    assert np.allclose(effective_potential(identity_tensor(d, c), phi), c * np.eye(d))
    # its bosonic compression differs by a rank-one term but drives the same Hartree flow
    sym = effective_potential(symmetrize_tensor(identity_tensor(d, c)), phi)
    assert np.allclose(sym, 0.5 * c * (np.eye(d) + np.outer(phi, phi.conj())))
    assert np.allclose(sym @ phi, c * phi)


def test_effective_potential_is_hermitian_and_linear(rng):
    w = random_tensor(rng, 3)
    phi = random_unit(rng, 3)
    V = effective_potential(w, phi)
    assert np.allclose(V, V.conj().T)
    ref = np.einsum("mnpq,n,q->mp", w.entries, phi.conj(), phi)
    assert np.allclose(V, ref)
    with pytest.raises(ContractError):
        effective_potential(w, 2 * phi)


def test_tensor_validation(rng):
    raw = rng.normal(size=(2,) * 4)
    with pytest.raises(ContractError):
        TwoBodyTensor(raw)
    with pytest.raises(ContractError):
        TwoBodyTensor(np.zeros((2, 2, 2)))
    w = symmetrize_tensor(raw)
    e = w.entries
    assert np.allclose(e, e.transpose(1, 0, 3, 2))
    assert np.allclose(e, e.transpose(1, 0, 2, 3))
    assert np.allclose(e, np.conj(e.transpose(2, 3, 0, 1)))
    assert symmetrize_tensor(e).entries == pytest.approx(e)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_symmetrization_does_not_increase_norm(d, seed):
    rng = np.random.default_rng(seed)
    raw = rng.normal(size=(d,) * 4) + 1j * rng.normal(size=(d,) * 4)
    w = symmetrize_tensor(raw)
    assert w.op_norm <= np.linalg.norm(raw.reshape(d * d, d * d), 2) * (1 + 1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.integers(0, 4), st.integers(0, 2**32 - 1))
def test_second_quantized_operators_are_hermitian(d, n, seed):
    rng = np.random.default_rng(seed)
    basis = enumerate_sector(d, n)
    A = random_hermitian(rng, d)
    w = random_tensor(rng, d)
    assert hermiticity_residual(dgamma_one_body(A, basis)) < 1e-12
    assert hermiticity_residual(dgamma_two_body(w, basis)) < 1e-12


def test_condensate_state_amplitudes(rng):
    phi = random_unit(rng, 3)
    basis = enumerate_sector(3, 4)
    psi = condensate_state(phi, basis)
    assert psi.norm == pytest.approx(1.0, abs=1e-14)
    # a(phi) psi = sqrt(N) psi_{N-1}
    lower = enumerate_sector(3, 3)
    a_phi = sum(np.conj(phi[k]) * annihilation_matrix(basis, lower, k) for k in range(3))
    assert np.allclose(a_phi @ psi.amplitudes, 2.0 * condensate_state(phi, lower).amplitudes)
    # every orthogonal direction is empty
    g = np.cross(phi.conj(), random_unit(rng, 3)).conj()
    g -= np.vdot(phi, g) * phi
    a_g = sum(np.conj(g[k]) * annihilation_matrix(basis, lower, k) for k in range(3))
    assert np.max(np.abs(a_g @ psi.amplitudes)) < 1e-12


def test_many_body_state_contract():
    basis = enumerate_sector(2, 2)
    with pytest.raises(ContractError):
        ManyBodyState(basis, np.ones(3))
    with pytest.raises(ContractError):
        ManyBodyState(basis, np.ones(2) / np.sqrt(2))
    psi = ManyBodyState(basis, basis_vector(basis, (1, 1)))
    assert psi.expectation(number_operator(basis)) == pytest.approx(2.0)
