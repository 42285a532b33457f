import math

import numpy as np
import pytest
import scipy.linalg as la
from scipy.sparse.linalg import expm_multiply

from mfbosons.dynamics import (
    MeanFieldModel,
    PropagatorPlan,
    assemble_hamiltonian,
    hartree_substep,
    propagate,
    solve_hartree,
)
from mfbosons.errors import ContractError, IntegrationAccuracyError
from mfbosons.fock import (
    ManyBodyState,
    TwoBodyTensor,
    condensate_state,
    enumerate_sector,
    identity_tensor,
    symmetrize_tensor,
)

from oracles import hartree_reference, random_hermitian, random_state, random_unit


def random_model(rng, d, N, K=1.0, T_norm=1.0):
    raw = rng.normal(size=(d,) * 4) + 1j * rng.normal(size=(d,) * 4)
    w = symmetrize_tensor(raw)
    w = TwoBodyTensor(w.entries * (K / w.op_norm))
    return MeanFieldModel(random_hermitian(rng, d, T_norm), w, N)


def test_model_contract(rng):
    w = TwoBodyTensor.zero(2)
    with pytest.raises(ContractError, match="N >= 2"):
        MeanFieldModel(np.eye(2), w, 1)
    with pytest.raises(ContractError):
        MeanFieldModel(np.array([[0, 1], [0, 0]]), w, 3)
    m = random_model(rng, 2, 4, K=0.5)
    assert m.K == pytest.approx(0.5)
    with pytest.raises(ContractError):
        assemble_hamiltonian(m, enumerate_sector(2, 3))


def test_hamiltonian_scaling(rng):
    m = random_model(rng, 3, 3)
    H = assemble_hamiltonian(m, enumerate_sector(3, 3)).toarray()
    assert np.allclose(H, H.conj().T)
    # pure interaction identity: c N (N - 1) / 2 / (N - 1) = c N / 2
    mi = MeanFieldModel(np.zeros((3, 3)), symmetrize_tensor(identity_tensor(3, 2.0)), 5)
    Hi = assemble_hamiltonian(mi, enumerate_sector(3, 5)).toarray()
    assert np.allclose(Hi, 5.0 * np.eye(Hi.shape[0]))


@pytest.fixture
def system(rng):
    m = random_model(rng, 3, 4)
    basis = enumerate_sector(3, 4)
    H = assemble_hamiltonian(m, basis)
    psi0 = ManyBodyState(basis, random_state(rng, basis.dim))
    return m, H, psi0


def test_dense_propagation_matches_expm(system):
    _, H, psi0 = system
    out = propagate(H, psi0, 0.7)
    ref = la.expm(-1j * 0.7 * H.toarray()) @ psi0.amplitudes
    assert np.max(np.abs(out.amplitudes - ref)) < 1e-12


def test_semigroup_norm_and_energy(system):
    _, H, psi0 = system
    plan = PropagatorPlan.build(H)
    a = propagate(H, propagate(H, psi0, 0.3, plan), 0.45, plan)
    b = propagate(H, psi0, 0.75, plan)
    assert np.max(np.abs(a.amplitudes - b.amplitudes)) < 1e-12
    assert abs(b.norm - 1) < 1e-12
    assert abs(b.expectation(H) - psi0.expectation(H)) < 1e-12
    assert np.array_equal(propagate(H, psi0, 0.0).amplitudes, psi0.amplitudes)
    with pytest.raises(ContractError):
        plan.apply(psi0.amplitudes, -1.0)


def test_krylov_path_agrees_with_dense(rng):
    m = random_model(rng, 3, 6, T_norm=2.0)
    H = assemble_hamiltonian(m, enumerate_sector(3, 6))
    psi0 = random_state(rng, H.shape[0])
    dense = PropagatorPlan.build(H)
    krylov = PropagatorPlan.build(H, dense_limit=0, krylov_dim=12)
    assert dense.method == "dense" and krylov.method == "krylov"
    for t in (0.05, 1.0, 3.3):
        a, b = dense.apply(psi0, t), krylov.apply(psi0, t)
        assert np.max(np.abs(a - b)) < 1e-9
        assert np.max(np.abs(b - expm_multiply(-1j * t * H, psi0))) < 1e-9


def test_non_hermitian_generator_is_rejected():
    with pytest.raises(ContractError):
        PropagatorPlan.build(np.array([[0.0, 1.0], [0.0, 0.0]]))


def test_free_dynamics_keeps_product_form(rng):
    d, N = 3, 4
    T = random_hermitian(rng, d)
    m = MeanFieldModel(T, TwoBodyTensor.zero(d), N)
    basis = enumerate_sector(d, N)
    phi0 = random_unit(rng, d)
    psi0 = condensate_state(phi0, basis)
    t = 0.8
    psi_t = propagate(assemble_hamiltonian(m, basis), psi0, t)
    ref = condensate_state(la.expm(-1j * t * T) @ phi0, basis)
    assert np.max(np.abs(psi_t.amplitudes - ref.amplitudes)) < 1e-12


def test_hartree_linear_case(rng):
    T = random_hermitian(rng, 3)
    m = MeanFieldModel(T, TwoBodyTensor.zero(3), 2)
    phi0 = random_unit(rng, 3)
    times = np.linspace(0, 1.0, 6)
    traj = solve_hartree(m, phi0, times)
    for t, phi in zip(times, traj.vectors):
        assert np.max(np.abs(phi - la.expm(-1j * t * T) @ phi0)) < 1e-10
    assert traj.drift < 1e-10


def test_hartree_scalar_case():
    # one mode: i phi' = (t0 + c |phi|^2) phi, so phi(t) = exp(-i (t0 + c) t)
    t0, c = 0.4, 1.5
    m = MeanFieldModel(np.array([[t0]]), symmetrize_tensor(identity_tensor(1, c)), 3)
    times = np.linspace(0, 2.0, 5)
    traj = solve_hartree(m, np.array([1.0]), times)
    assert np.allclose(traj.vectors[:, 0], np.exp(-1j * (t0 + c) * times), atol=1e-10)


def test_hartree_against_high_order_reference(rng):
    m = random_model(rng, 3, 4)
    phi0 = random_unit(rng, 3)
    times = np.linspace(0, 0.5, 11)
    traj = solve_hartree(m, phi0, times)
    ref = hartree_reference(m.T, m.w.entries, phi0, times)
    assert np.max(np.abs(traj.vectors - ref)) < 1e-10
    assert np.allclose(traj.at(0.25), traj.vectors[5])
    with pytest.raises(ContractError):
        traj.at(0.123)


def test_hartree_preserves_energy(rng):
    m = random_model(rng, 3, 4)
    phi0 = random_unit(rng, 3)
    traj = solve_hartree(m, phi0, np.linspace(0, 1, 5))

    def energy(phi):
        wphi = np.einsum("mnpq,n,q->mp", m.w.entries, phi.conj(), phi)
        return np.vdot(phi, (m.T + 0.5 * wphi) @ phi).real

    e = [energy(p) for p in traj.vectors]
    assert max(e) - min(e) < 1e-10


def test_rk4_is_fourth_order(rng):
    m = random_model(rng, 2, 4, K=2.0, T_norm=2.0)
    phi0 = random_unit(rng, 2)
    times = [0.0, 1.0]
    ref = hartree_reference(m.T, m.w.entries, phi0, np.array(times))[-1]
    # coarse steps on purpose: the drift guard is relaxed to measure the order
    errs = []
    for h in (0.1, 0.05, 0.025):
        errs.append(np.linalg.norm(solve_hartree(m, phi0, times, substep=h, drift_limit=1e-2).vectors[-1] - ref))
    orders = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
    assert min(orders) >= 3.7, orders


def test_default_substep_policy(rng):
    m = random_model(rng, 2, 4, K=1.0, T_norm=1.0)
    assert hartree_substep(m, 1e-2) == pytest.approx(1e-3 / 2.0)
    assert hartree_substep(MeanFieldModel(np.zeros((2, 2)), TwoBodyTensor.zero(2), 2), 1e-2) == 1e-2


def test_drift_guard_raises(rng):
    m = random_model(rng, 3, 4, K=5.0, T_norm=5.0)
    with pytest.raises(IntegrationAccuracyError, match="drift"):
        solve_hartree(m, random_unit(rng, 3), [0.0, 2.0], substep=0.2)


def test_hartree_grid_contract(rng):
    m = random_model(rng, 2, 2)
    with pytest.raises(ContractError):
        solve_hartree(m, np.array([1.0, 1.0]), [0.0, 1.0])
    with pytest.raises(ContractError):
        solve_hartree(m, np.array([1.0, 0.0]), [0.1, 1.0])
