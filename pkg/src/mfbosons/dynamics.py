"""Many-body Schrödinger propagation and the Hartree flow (hbar = 1)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ContractError, IntegrationAccuracyError
from .fock import (
    DENSE_LIMIT,
    ManyBodyState,
    SectorBasis,
    TwoBodyTensor,
    check_one_body,
    dgamma_one_body,
    dgamma_two_body,
    effective_potential,
    hermiticity_residual,
)

HARTREE_DRIFT_LIMIT = 1e-6
HARTREE_ACCURACY = 1e-3
DEFAULT_HARTREE_DT = 1e-2
KRYLOV_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class MeanFieldModel:
    """``H_N = dGamma(T) + dGamma(w) / (N - 1)`` with coupling scale ``K = ||w||``."""

    T: np.ndarray
    w: TwoBodyTensor
    N: int

    def __post_init__(self):
        if self.N < 2:
            raise ContractError(f"mean-field scaling needs N >= 2, got N={self.N}")
        T = check_one_body(self.T, self.w.dim)
        T.setflags(write=False)
        object.__setattr__(self, "T", T)

    @property
    def d(self) -> int:
        return self.w.dim

    @property
    def K(self) -> float:
        return self.w.op_norm

    def hartree_hamiltonian(self, phi) -> np.ndarray:
        return self.T + effective_potential(self.w, phi)


def assemble_hamiltonian(model: MeanFieldModel, basis: SectorBasis) -> sp.csr_matrix:
    """Sparse ``H_N`` on the ``N``-particle sector."""
    if not isinstance(basis, SectorBasis) or basis.particles != model.N or basis.modes != model.d:
        raise ContractError(
            f"Hamiltonian needs the N={model.N} sector over {model.d} modes"
        )
    H = dgamma_one_body(model.T, basis) + dgamma_two_body(model.w, basis) / (model.N - 1)
    return H.tocsr()


# ---------------------------------------------------------------------------
# exact propagation


def _lanczos_step(matvec, v: np.ndarray, dt: float, m_max: int):
    """One short Krylov step of ``exp(-i H dt) v``; returns (result, error estimate)."""
    beta0 = np.linalg.norm(v)
    if beta0 == 0:
        return v.copy(), 0.0
    V = [v / beta0]
    alphas: list[float] = []
    betas: list[float] = []
    for j in range(m_max):
        w = matvec(V[j])
        a = np.vdot(V[j], w).real
        w = w - a * V[j]
        if j > 0:
            w = w - betas[-1] * V[j - 1]
        # full reorthogonalization; subspaces here are tiny
        for u in V:
            w = w - np.vdot(u, w) * u
        alphas.append(a)
        b = float(np.linalg.norm(w))
        if j == 0:
            evals, evecs = np.array(alphas), np.ones((1, 1))
        else:
            evals, evecs = la.eigh_tridiagonal(np.array(alphas), np.array(betas))
        coeff = evecs @ (np.exp(-1j * evals * dt) * evecs[0])
        err = beta0 * b * abs(coeff[-1])
        if b < 1e-14 * beta0 or err <= KRYLOV_TOL * beta0 or j == m_max - 1:
            return beta0 * (np.stack(V, axis=1) @ coeff), err
        betas.append(b)
        V.append(w / b)
    raise AssertionError("unreachable")


@dataclass(eq=False)
class PropagatorPlan:
    """Reusable factorization of a time-independent Hermitian ``H``.

    The dense path stores ``H = V diag(E) V^dagger``; the Krylov path keeps
    the sparse matrix and a step size adapted so the Lanczos residual
    estimate stays below ``1e-10``.
    """

    H: sp.spmatrix | np.ndarray
    method: str
    eigenvalues: np.ndarray | None = None
    eigenvectors: np.ndarray | None = None
    krylov_dim: int = 30
    step: float | None = None
    norm_estimate: float = field(default=0.0)

    @classmethod
    def build(cls, H, dense_limit: int = DENSE_LIMIT, krylov_dim: int = 30) -> "PropagatorPlan":
        scale = max(1.0, float(abs(H).max()) if sp.issparse(H) else float(np.max(np.abs(H))))
        if hermiticity_residual(H) > 1e-12 * scale:
            raise ContractError("propagation needs a Hermitian generator")
        dim = H.shape[0]
        if dim <= dense_limit:
            dense = H.toarray() if sp.issparse(H) else np.asarray(H, dtype=complex)
            try:
                evals, evecs = np.linalg.eigh(dense)
            except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
                raise ContractError(f"eigendecomposition failed: {exc}") from exc
            rec = (evecs * evals) @ evecs.conj().T
            fro = np.linalg.norm(dense)
            if fro > 0 and np.linalg.norm(rec - dense) > 1e-9 * fro:
                raise ContractError("eigendecomposition does not reconstruct H")
            return cls(H, "dense", evals, evecs, norm_estimate=float(np.max(np.abs(evals), initial=0.0)))
        Hs = sp.csr_matrix(H)
        norm = float(spla.norm(Hs, 1))
        return cls(Hs, "krylov", krylov_dim=krylov_dim, step=1.0 / max(norm, 1e-300) * 4.0,
                   norm_estimate=norm)

    def apply(self, psi: np.ndarray, t: float) -> np.ndarray:
        if t < 0:
            raise ContractError(f"propagation time must be non-negative, got {t}")
        psi = np.asarray(psi, dtype=complex)
        if t == 0:
            return psi.copy()
        if self.method == "dense":
            V = self.eigenvectors
            return V @ (np.exp(-1j * self.eigenvalues * t) * (V.conj().T @ psi))
        return self._krylov(psi, t)

    def _krylov(self, psi: np.ndarray, t: float) -> np.ndarray:
        matvec = self.H.dot
        done = 0.0
        h = min(self.step, t)
        v = psi
        while done < t:
            h = min(h, t - done)
            out, err = _lanczos_step(matvec, v, h, self.krylov_dim)
            if err > KRYLOV_TOL * np.linalg.norm(v):
                h *= 0.5
                continue
            v = out
            done += h
            h *= 1.25
        return v


def propagate(H, psi0: ManyBodyState, t: float, plan: PropagatorPlan | None = None) -> ManyBodyState:
    """``exp(-i H t) psi0`` for a time-independent Hermitian ``H``."""
    if not psi0.normalized:
        raise ContractError("propagate expects a normalized initial state")
    plan = plan if plan is not None else PropagatorPlan.build(H)
    out = plan.apply(psi0.amplitudes, t)
    drift = abs(np.linalg.norm(out) - 1.0)
    if drift > 1e-10:
        raise ContractError(f"propagated state lost normalization ({drift:.2e})")
    return ManyBodyState(psi0.basis, out)


# ---------------------------------------------------------------------------
# Hartree equation


@dataclass(frozen=True, eq=False)
class HartreeTrajectory:
    times: np.ndarray
    vectors: np.ndarray  # shape (len(times), d)
    drift: float
    substep: float

    def at(self, t: float, tol: float = 1e-12) -> np.ndarray:
        """Condensate vector at a sampled time."""
        idx = np.flatnonzero(np.abs(self.times - t) <= tol)
        if idx.size == 0:
            raise ContractError(f"time {t} is not on the trajectory grid")
        return self.vectors[idx[0]]


def hartree_substep(model: MeanFieldModel, dt: float = DEFAULT_HARTREE_DT) -> float:
    """Default step policy ``min(dt, 1e-3 / (||T|| + K))``."""
    scale = float(np.linalg.norm(model.T, 2)) + model.K
    return dt if scale == 0 else min(dt, HARTREE_ACCURACY / scale)


def hartree_rhs(model: MeanFieldModel, phi: np.ndarray) -> np.ndarray:
    """``d phi / dt = -i (T + w^phi) phi``, without renormalizing ``phi``."""
    wphi = np.einsum("mnpq,n,q->mp", model.w.entries, phi.conj(), phi)
    return -1j * ((model.T + wphi) @ phi)


def solve_hartree(
    model: MeanFieldModel,
    phi0,
    times: Sequence[float],
    dt: float = DEFAULT_HARTREE_DT,
    substep: float | None = None,
    drift_limit: float = HARTREE_DRIFT_LIMIT,
) -> HartreeTrajectory:
    """Classical RK4 integration of ``i d_t phi = (T + w^phi) phi`` through ``times``.

    Each interval between sample times is split into equal substeps no
    longer than ``substep`` (default :func:`hartree_substep`). The norm is
    never reset; its largest deviation from 1 is recorded as ``drift``.
    """
    phi = np.array(phi0, dtype=complex)
    if phi.shape != (model.d,):
        raise ContractError(f"phi0 has shape {phi.shape}, expected ({model.d},)")
    if abs(np.linalg.norm(phi) - 1.0) > 1e-10:
        raise ContractError("phi0 must be a unit vector")
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0 or times[0] != 0.0 or np.any(np.diff(times) <= 0):
        raise ContractError("time grid must start at 0 and increase strictly")
    h_max = hartree_substep(model, dt) if substep is None else float(substep)

    out = np.empty((times.size, model.d), dtype=complex)
    out[0] = phi
    drift = abs(np.linalg.norm(phi) - 1.0)
    for k in range(1, times.size):
        span = times[k] - times[k - 1]
        steps = max(1, math.ceil(span / h_max - 1e-12))
        h = span / steps
        for _ in range(steps):
            k1 = hartree_rhs(model, phi)
            k2 = hartree_rhs(model, phi + 0.5 * h * k1)
            k3 = hartree_rhs(model, phi + 0.5 * h * k2)
            k4 = hartree_rhs(model, phi + h * k3)
            phi = phi + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        out[k] = phi
        drift = max(drift, abs(np.linalg.norm(phi) - 1.0))
        if drift > drift_limit:
            raise IntegrationAccuracyError(
                f"Hartree norm drift {drift:.2e} exceeds {drift_limit:.0e} at t={times[k]:.6g}; "
                f"use a smaller step than {h:.3e}"
            )
    return HartreeTrajectory(times, out, drift, h_max)
