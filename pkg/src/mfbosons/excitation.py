"""Condensate/excitation split of N-boson states.

The condensate ``phi`` is completed to an orthonormal frame ``e_0 = phi,
e_1, ..., e_{d-1}``. Everything "primed" (sums over excitation modes) runs
over the columns 1..d-1 of that frame. Explicit excitation-map matrices
live on the truncated Fock space ``F^{<=N}`` written in the original mode
basis, with the frame entering only through rotated ladder operators
``a(e_i) = sum_k conj(C_ki) a_k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .dynamics import HartreeTrajectory, MeanFieldModel, PropagatorPlan, assemble_hamiltonian, hartree_rhs
from .errors import CapacityError, ContractError
from .fock import (
    ManyBodyState,
    SectorBasis,
    TruncatedFockBasis,
    annihilation_matrix,
    dgamma_one_body,
    dgamma_two_body,
    enumerate_sector,
    fock_annihilation,
    truncated_fock_basis,
)

EXPLICIT_MAX_MODES = 3
EXPLICIT_MAX_PARTICLES = 5
ORTHOGONALITY_TOL = 1e-10
NORM_TOL = 1e-10


# ---------------------------------------------------------------------------
# frames


def householder_completion(phi) -> np.ndarray:
    """Unitary whose column 0 is ``phi``; columns 1.. span ``phi``'s complement.

    Reflects ``alpha e_0`` onto ``phi`` with ``alpha`` the phase of
    ``phi[0]`` (1 when ``phi[0] == 0``), then rephases column 0.
    """
    phi = np.asarray(phi, dtype=complex)
    d = phi.size
    alpha = phi[0] / abs(phi[0]) if abs(phi[0]) > 0 else 1.0 + 0j
    u = -phi.copy()
    u[0] += alpha
    nu = np.linalg.norm(u)
    H = np.eye(d, dtype=complex)
    if nu > 1e-15:
        u /= nu
        H -= 2.0 * np.outer(u, u.conj())
    H[:, 0] *= alpha
    return H


@dataclass(frozen=True, eq=False)
class CondensateFrame:
    phi: np.ndarray
    Q: np.ndarray = field(init=False)
    completion: np.ndarray = field(init=False)

    def __post_init__(self):
        phi = np.array(self.phi, dtype=complex).ravel()
        if abs(np.linalg.norm(phi) - 1.0) > 1e-10:
            raise ContractError(f"condensate vector must be normalized, |phi| = {np.linalg.norm(phi):.12f}")
        for name, val in (("phi", phi), ("Q", np.eye(phi.size) - np.outer(phi, phi.conj())),
                          ("completion", householder_completion(phi))):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def d(self) -> int:
        return self.phi.size

    def projector_residuals(self) -> dict[str, float]:
        Q, C = self.Q, self.completion
        return {
            "idempotent": float(np.max(np.abs(Q @ Q - Q))),
            "hermitian": float(np.max(np.abs(Q - Q.conj().T))),
            "kills_phi": float(np.max(np.abs(Q @ self.phi))),
            "unitary": float(np.max(np.abs(C.conj().T @ C - np.eye(self.d)))),
            "column0": float(np.max(np.abs(C[:, 0] - self.phi))),
        }

    def rephased(self, theta: float) -> "CondensateFrame":
        return CondensateFrame(np.exp(1j * theta) * self.phi)


# ---------------------------------------------------------------------------
# excitation number and its distribution


def build_nplus(frame: CondensateFrame, basis: SectorBasis) -> sp.csr_matrix:
    """``N_+ = dGamma(Q)`` on a sector (or truncated) basis."""
    if basis.modes != frame.d:
        raise ContractError(f"frame has {frame.d} modes, basis has {basis.modes}")
    return dgamma_one_body(frame.Q, basis)


@dataclass(frozen=True)
class ExcitationDistribution:
    """``p[n]`` is the probability of finding ``n`` particles outside the condensate."""

    probabilities: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=float)
        if np.any(p < -1e-10):
            raise ContractError(f"negative probability {p.min():.3e}")
        if abs(p.sum() - 1.0) > 1e-10:
            raise ContractError(f"probabilities sum to {p.sum():.15f}")
        object.__setattr__(self, "probabilities", p)

    def tail(self, n: int) -> float:
        """``P[N_+ > n]``."""
        return float(self.probabilities[n + 1:].sum())

    def mgf(self, beta) -> np.ndarray:
        beta = np.asarray(beta, dtype=float)
        k = np.arange(self.probabilities.size)
        return np.exp(np.multiply.outer(beta, k)) @ self.probabilities


def _require_normalized(psi: ManyBodyState):
    if abs(psi.norm - 1.0) > NORM_TOL:
        raise ContractError(f"state must be normalized, |psi| = {psi.norm:.12f}")


def excitation_distribution(psi: ManyBodyState, frame: CondensateFrame,
                            nplus: sp.spmatrix | None = None) -> ExcitationDistribution:
    """Excitation probabilities from Lagrange projectors on the nodes ``0..N``.

    ``Pi_n = prod_{m != n} (N_+ - m) / (n - m)`` is exact because the
    spectrum of ``N_+`` on the N-sector is a subset of ``{0, ..., N}``.
    """
    if not isinstance(psi.basis, SectorBasis):
        raise ContractError("excitation distribution needs an N-sector state")
    _require_normalized(psi)
    N = psi.basis.particles
    Np = build_nplus(frame, psi.basis) if nplus is None else nplus
    v = psi.amplitudes
    p = np.empty(N + 1)
    for n in range(N + 1):
        u = v
        for m in range(N + 1):
            if m != n:
                u = (Np @ u - m * u) / (n - m)
        p[n] = np.vdot(v, u).real
    return ExcitationDistribution(p)


@dataclass(frozen=True)
class MGFCurve:
    betas: np.ndarray
    values: np.ndarray

    def invariant_violations(self, slack: float = 1e-8) -> list[str]:
        out = []
        b, g = self.betas, self.values
        if b.size and b[0] == 0 and abs(g[0] - 1.0) > 1e-10:
            out.append(f"g(0) = {g[0]!r} != 1")
        if np.any(np.diff(g) < -slack * np.maximum(1.0, g[1:])):
            out.append("not non-decreasing")
        if b.size >= 3:
            lg = np.log(g)
            h = np.diff(b)
            if np.allclose(h, h[0]):
                if np.any(lg[2:] - 2 * lg[1:-1] + lg[:-2] < -slack):
                    out.append("not log-convex")
        return out


def mgf(psi: ManyBodyState, frame: CondensateFrame, betas) -> MGFCurve:
    """``g(beta) = <psi, exp(beta N_+) psi>`` on a grid of ``beta``."""
    betas = np.atleast_1d(np.asarray(betas, dtype=float))
    dist = excitation_distribution(psi, frame)
    return MGFCurve(betas, dist.mgf(betas))


def initial_mgf_constant(psi0: ManyBodyState, frame0: CondensateFrame, beta: float) -> float:
    """Sharp initial constant ``C_beta = g_N(0, beta)``."""
    return float(excitation_distribution(psi0, frame0).mgf(beta))


# ---------------------------------------------------------------------------
# building initial data from excitations


def _sector_creation(upper: SectorBasis, lower: SectorBasis, f: np.ndarray) -> sp.csr_matrix:
    """``a^*(f) = sum_k f_k a_k^dagger`` from ``lower`` into ``upper``."""
    out = sp.csr_matrix((len(upper), len(lower)), dtype=complex)
    for k, fk in enumerate(f):
        if fk != 0:
            out = out + fk * annihilation_matrix(upper, lower, k).T
    return out.tocsr()


def excitation_vector(frame: CondensateFrame, occupations: Sequence[int]) -> tuple[SectorBasis, np.ndarray]:
    """Normalized state with ``occupations[i - 1]`` particles in frame mode ``e_i``.

    Returns the sector basis (``n = sum(occupations)``) and the vector in the
    original mode coordinates.
    """
    occ = tuple(int(k) for k in occupations)
    if len(occ) != frame.d - 1 or any(k < 0 for k in occ):
        raise ContractError(f"need {frame.d - 1} non-negative excitation occupations, got {occupations}")
    n = sum(occ)
    sectors = [enumerate_sector(frame.d, k) for k in range(n + 1)]
    v = np.ones(1, dtype=complex)
    level = 0
    for i, k in enumerate(occ, start=1):
        for _ in range(k):
            v = _sector_creation(sectors[level + 1], sectors[level], frame.completion[:, i]) @ v
            level += 1
        v /= math.sqrt(math.factorial(k))
    return sectors[n], v


def initial_state_from_excitations(xi: Sequence[np.ndarray], frame0: CondensateFrame,
                                   N: int | None = None) -> ManyBodyState:
    """``Psi_N(0) = U^*(xi_0 + ... + xi_N) = sum_n a^*(phi)^{N-n} xi_n / sqrt((N-n)!)``.

    ``xi[n]`` is a sector-``n`` vector in the original mode coordinates and
    must have no component along ``phi`` in any slot.
    """
    N = len(xi) - 1 if N is None else N
    if len(xi) > N + 1:
        raise ContractError(f"got {len(xi)} excitation sectors for N={N}")
    d = frame0.d
    sectors = [enumerate_sector(d, n) for n in range(N + 1)]
    total = 0.0
    for n, x in enumerate(xi):
        x = np.asarray(x, dtype=complex).ravel()
        if x.size != len(sectors[n]):
            raise ContractError(f"xi[{n}] has {x.size} amplitudes, sector has {len(sectors[n])}")
        if n > 0 and x.any():
            a_phi = _sector_creation(sectors[n], sectors[n - 1], frame0.phi).conj().T
            leak = np.linalg.norm(a_phi @ x)
            if leak > ORTHOGONALITY_TOL:
                raise ContractError(f"xi[{n}] has a component {leak:.3e} along the condensate")
        total += np.vdot(x, x).real
    if abs(total - 1.0) > NORM_TOL:
        raise ContractError(f"sum of |xi_n|^2 is {total:.15f}, expected 1")

    creators = [_sector_creation(sectors[k + 1], sectors[k], frame0.phi) for k in range(N)]
    psi = np.zeros(len(sectors[N]), dtype=complex)
    for n, x in enumerate(xi):
        v = np.asarray(x, dtype=complex).ravel()
        if not v.any():
            continue
        for k in range(n, N):
            v = creators[k] @ v
        psi += v / math.sqrt(math.factorial(N - n))
    return ManyBodyState(sectors[N], psi)


def single_excitation_state(frame0: CondensateFrame, N: int, mode: int = 1) -> ManyBodyState:
    """Symmetrization of ``phi^{(x)(N-1)} (x) e_mode`` (normalized)."""
    occ = [0] * (frame0.d - 1)
    occ[mode - 1] = 1
    _, chi = excitation_vector(frame0, occ)
    xi = [np.zeros(1), chi]
    return initial_state_from_excitations(xi, frame0, N)


# ---------------------------------------------------------------------------
# explicit excitation map


def check_explicit_regime(d: int, N: int):
    if d > EXPLICIT_MAX_MODES or N > EXPLICIT_MAX_PARTICLES:
        raise CapacityError(
            f"explicit excitation-map matrices are limited to d <= {EXPLICIT_MAX_MODES} and "
            f"N <= {EXPLICIT_MAX_PARTICLES} (got d={d}, N={N}); use the sector-level routines "
            f"(excitation_distribution, initial_state_from_excitations) for larger systems"
        )


class FrameFockSpace:
    """Dense ladder algebra on ``F^{<=M}`` for a fixed condensate frame."""

    def __init__(self, frame: CondensateFrame, max_particles: int):
        self.frame = frame
        self.basis: TruncatedFockBasis = truncated_fock_basis(frame.d, max_particles)
        self.M = max_particles
        self.dim = self.basis.dim
        self.numbers = self.basis.particle_numbers()
        self._bare = [fock_annihilation(self.basis, k).toarray() for k in range(frame.d)]

    def annihilator(self, f) -> np.ndarray:
        """``a(f)`` for an arbitrary (not necessarily normalized) mode vector."""
        f = np.asarray(f, dtype=complex)
        return sum(np.conj(fk) * a for fk, a in zip(f, self._bare))

    @cached_property
    def frame_annihilators(self) -> list[np.ndarray]:
        """``a(e_i)`` for every column of the completion (index 0 is ``a(phi)``)."""
        return [self.annihilator(self.frame.completion[:, i]) for i in range(self.frame.d)]

    @cached_property
    def number(self) -> np.ndarray:
        return np.diag(self.numbers.astype(complex))

    def diag(self, values) -> np.ndarray:
        return np.diag(np.asarray(values, dtype=complex))

    def embedding(self, n: int) -> np.ndarray:
        """``W_n``: the n-sector into ``F^{<=M}``."""
        W = np.zeros((self.dim, len(self.basis.sectors[n])), dtype=complex)
        sl = self.basis.sector_slice(n)
        W[sl, :] = np.eye(sl.stop - sl.start)
        return W

    def orthogonal_projector(self, N: int, phi=None) -> np.ndarray:
        """``Q_N = Gamma(1 - |phi><phi|)`` restricted to at most ``N`` particles.

        Uses the normal-ordered series ``sum_k (-1)^k a^*(phi)^k a(phi)^k / k!``,
        which is polynomial in ``phi`` and therefore differentiable in it.
        """
        a0 = self.annihilator(self.frame.phi if phi is None else phi)
        a0d = a0.conj().T
        out = np.zeros((self.dim, self.dim), dtype=complex)
        term = np.eye(self.dim, dtype=complex)
        for k in range(self.M + 1):
            out += term
            term = -(a0d @ term @ a0) / (k + 1)
        mask = (self.numbers <= N).astype(float)
        return mask[:, None] * out * mask[None, :]

    def excitation_map(self, N: int, phi=None) -> np.ndarray:
        """``U_N = sum_n Q_N a(phi)^{N-n} / sqrt((N-n)!) W_N`` as a dense matrix."""
        if N > self.M:
            raise ContractError(f"N={N} exceeds the truncation M={self.M}")
        a0 = self.annihilator(self.frame.phi if phi is None else phi)
        Q = self.orthogonal_projector(N, phi)
        X = self.embedding(N)
        U = Q @ X
        for k in range(1, N + 1):
            X = a0 @ X
            U = U + (Q @ X) / math.sqrt(math.factorial(k))
        return U

    def orthogonal_basis_embedding(self) -> np.ndarray:
        """Isometry from excitation-mode occupation states into ``F^{<=M}``.

        Columns are ``prod_{i>=1} a^*(e_i)^{k_i} / sqrt(k_i!) |vac>`` ordered by
        the truncated basis over the ``d - 1`` excitation modes.
        """
        d = self.frame.d
        vac = np.zeros(self.dim, dtype=complex)
        vac[0] = 1.0
        if d == 1:
            return vac[:, None]
        ortho = truncated_fock_basis(d - 1, self.M)
        creators = [a.conj().T for a in self.frame_annihilators[1:]]
        cols = []
        for sector in ortho.sectors:
            for occ in sector.states:
                v = vac
                for c, k in zip(creators, occ):
                    for _ in range(k):
                        v = c @ v
                    v = v / math.sqrt(math.factorial(k))
                cols.append(v)
        return np.stack(cols, axis=1)


@dataclass(frozen=True, eq=False)
class ExcitationMapMatrices:
    """Explicit ``U_{N,t}``, ``Q_{N,t}`` and ``W_N`` on ``F^{<=N}``."""

    space: FrameFockSpace
    N: int
    U: np.ndarray
    Q: np.ndarray
    W: np.ndarray

    @property
    def sector(self) -> SectorBasis:
        return self.space.basis.sectors[self.N]

    def isometry_residuals(self) -> dict[str, float]:
        UdU = self.U.conj().T @ self.U
        return {
            "UdagU_minus_Id": float(np.linalg.norm(UdU - np.eye(UdU.shape[0]), 2)),
            "UUdag_minus_Q": float(np.linalg.norm(self.U @ self.U.conj().T - self.Q, 2)),
        }

    def apply(self, psi: np.ndarray) -> np.ndarray:
        return self.U @ np.asarray(psi, dtype=complex)

    def apply_adjoint(self, chi: np.ndarray) -> np.ndarray:
        return self.U.conj().T @ np.asarray(chi, dtype=complex)


def build_excitation_map(frame: CondensateFrame, d: int, N: int,
                         space: FrameFockSpace | None = None) -> ExcitationMapMatrices:
    if d != frame.d:
        raise ContractError(f"frame has {frame.d} modes, requested d={d}")
    check_explicit_regime(d, N)
    space = FrameFockSpace(frame, N) if space is None else space
    return ExcitationMapMatrices(space, N, space.excitation_map(N), space.orthogonal_projector(N), space.embedding(N))


def fock_vector(space: FrameFockSpace, xi: Sequence[np.ndarray]) -> np.ndarray:
    """Direct sum ``xi_0 + xi_1 + ...`` as a vector on ``F^{<=M}``."""
    out = np.zeros(space.dim, dtype=complex)
    for n, x in enumerate(xi):
        out[space.basis.sector_slice(n)] = np.asarray(x, dtype=complex).ravel()
    return out


@dataclass(frozen=True)
class ResidualReport:
    residuals: dict[str, float]
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(v <= self.tolerance for v in self.residuals.values())

    @property
    def worst(self) -> float:
        return max(self.residuals.values(), default=0.0)


def verify_conjugation(frame: CondensateFrame, d: int, N: int, tol: float = 1e-10) -> ResidualReport:
    """Residuals of the c-number substitution rules under ``U_N``."""
    check_explicit_regime(d, N)
    if N < 1:
        raise ContractError("conjugation identities need N >= 1")
    space = FrameFockSpace(frame, N)
    top = build_excitation_map(frame, d, N, space)
    low = build_excitation_map(frame, d, N - 1, space)
    left = top.U @ top.W.conj().T
    right = low.W @ low.U.conj().T
    ladders = space.frame_annihilators
    res = {}
    excited = 0.0
    for n in range(1, d):
        ad = ladders[n].conj().T
        excited = max(excited, float(np.linalg.norm(left @ ad @ right - top.Q @ ad @ low.Q, 2)))
    res["creation_excited"] = excited
    root = space.diag(np.sqrt(np.clip(N - space.numbers, 0, None)))
    res["creation_condensate"] = float(np.linalg.norm(
        left @ ladders[0].conj().T @ right - top.Q @ root @ low.Q, 2))
    return ResidualReport(res, tol)


def verify_number_identities(frame: CondensateFrame, d: int, N: int, tol: float = 1e-10) -> ResidualReport:
    """Residuals of ``U N_+ U^* = NQ`` and ``U W^* Num W U^* = N Q``."""
    check_explicit_regime(d, N)
    emap = build_excitation_map(frame, d, N)
    space = emap.space
    U, Q = emap.U, emap.Q
    Np = build_nplus(frame, emap.sector).toarray()
    res = {
        "excitations_to_number": float(np.linalg.norm(U @ Np @ U.conj().T - space.number @ Q, 2)),
        "number_to_N": float(np.linalg.norm(
            U @ emap.W.conj().T @ space.number @ emap.W @ U.conj().T - N * Q, 2)),
    }
    return ResidualReport(res, tol)


# ---------------------------------------------------------------------------
# fluctuation generator


@dataclass(frozen=True, eq=False)
class FluctuationGenerator:
    """Compressed generator ``Q L Q`` and the particle-shift blocks of its interaction part.

    ``blocks[delta]`` maps sector ``k`` to sector ``k - delta``; the closed
    formulas ``A1_dagger`` and ``A2_dagger`` create one and two excitations.
    """

    emap: ExcitationMapMatrices
    L: np.ndarray
    interaction: np.ndarray
    blocks: dict[int, np.ndarray]
    A1_dagger: np.ndarray
    A2_dagger: np.ndarray
    explicit_terms: tuple[np.ndarray, np.ndarray, np.ndarray]
    consistency_residual: float

    def formula_residuals(self) -> dict[str, float]:
        Q = self.emap.Q
        return {
            "A1": float(np.linalg.norm(self.blocks[-1] - Q @ self.A1_dagger @ Q, 2)),
            "A2": float(np.linalg.norm(self.blocks[-2] - Q @ self.A2_dagger @ Q, 2)),
            "A-1": float(np.linalg.norm(self.blocks[1] - Q @ self.A1_dagger.conj().T @ Q, 2)),
            "A-2": float(np.linalg.norm(self.blocks[2] - Q @ self.A2_dagger.conj().T @ Q, 2)),
        }

    def adjoint_residual(self) -> float:
        return max(float(np.max(np.abs(self.blocks[-d] - self.blocks[d].conj().T))) for d in (1, 2))

    def hermiticity_residual(self) -> float:
        return float(np.max(np.abs(self.L - self.L.conj().T)))

    def block_leakage(self) -> float:
        """Largest entry of any block outside its particle-shift pattern."""
        n = self.emap.space.numbers
        shift = n[None, :] - n[:, None]
        return max(float(np.max(np.abs(np.where(shift == d, 0, B)), initial=0.0)) for d, B in self.blocks.items())


def _frame_tensor(model: MeanFieldModel, frame: CondensateFrame) -> np.ndarray:
    return model.w.in_frame(frame.completion)


def build_fluctuation_generator(model: MeanFieldModel, frame: CondensateFrame, phidot=None,
                                fd_step: float = 1e-5) -> FluctuationGenerator:
    """Explicit generator of the fluctuation dynamics at the given frame.

    ``phidot`` (default: the Hartree velocity) feeds an independent
    construction ``i (d_t U) U^* + U H_N U^*`` with ``d_t U`` taken as a
    central difference along ``phidot``; its compressed distance to the
    Hartree-simplified form is ``consistency_residual``.
    """
    d, N = model.d, model.N
    if frame.d != d:
        raise ContractError(f"frame has {frame.d} modes, model has {d}")
    check_explicit_regime(d, N)
    emap = build_excitation_map(frame, d, N)
    space = emap.space
    U, Q = emap.U, emap.Q
    fock = space.basis

    HH = model.hartree_hamiltonian(frame.phi)
    dG_HH = dgamma_one_body(HH, fock).toarray()
    sector = emap.sector
    H_N = assemble_hamiltonian(model, sector).toarray()
    H_H_sector = dgamma_one_body(HH, sector).toarray()
    interaction = U @ (H_N - H_H_sector) @ U.conj().T
    L = Q @ dG_HH @ Q + interaction

    numbers = space.numbers
    shift = numbers[None, :] - numbers[:, None]
    blocks = {delta: np.where(shift == delta, interaction, 0) for delta in range(-2, 3)}

    # closed formulas, primed sums over frame modes 1..d-1
    wf = _frame_tensor(model, frame)
    b = space.frame_annihilators
    bd = [x.conj().T for x in b]
    S = space.diag(np.sqrt(np.clip(N - numbers, 0, None)))
    S1 = space.diag(np.sqrt(np.clip(N - numbers - 1, 0, None)))
    Num = space.number
    ex = range(1, d)
    term1 = sum(wf[m, n, 0, q] * (bd[m] @ bd[n] @ b[q]) for m in ex for n in ex for q in ex) @ S / (N - 1) \
        if d > 1 else np.zeros_like(Num)
    term2 = sum(wf[m, 0, 0, 0] * bd[m] for m in ex) @ Num @ S / (N - 1) if d > 1 else np.zeros_like(Num)
    term3 = sum(wf[m, n, 0, 0] * (bd[m] @ bd[n]) for m in ex for n in ex) @ S1 @ S / (N - 1) \
        if d > 1 else np.zeros_like(Num)
    A1d = term1 - term2
    A2d = 0.5 * term3

    phidot = hartree_rhs(model, frame.phi) if phidot is None else np.asarray(phidot, dtype=complex)
    Up = space.excitation_map(N, frame.phi + fd_step * phidot)
    Um = space.excitation_map(N, frame.phi - fd_step * phidot)
    dU = (Up - Um) / (2 * fd_step)
    L_direct = 1j * dU @ U.conj().T + U @ H_N @ U.conj().T
    consistency = float(np.linalg.norm(Q @ L_direct @ Q - L, 2))

    return FluctuationGenerator(emap, L, interaction, blocks, A1d, A2d, (term1, term2, term3), consistency)


@dataclass(frozen=True)
class DerivativeReport:
    finite_difference: float
    commutator: float
    explicit: float
    relative_error: float
    explicit_agreement: float

    def passed(self, rel_tol: float = 1e-4, explicit_tol: float = 1e-6, abs_floor: float = 1e-8) -> bool:
        ok_fd = abs(self.finite_difference - self.commutator) <= max(abs_floor, rel_tol * abs(self.commutator))
        return ok_fd and self.explicit_agreement <= explicit_tol


def _g_at(plan: PropagatorPlan, psi0: ManyBodyState, phi, t: float, beta: float) -> float:
    psi = ManyBodyState(psi0.basis, plan.apply(psi0.amplitudes, t))
    return float(excitation_distribution(psi, CondensateFrame(phi)).mgf(beta))


def verify_derivative_identity(model: MeanFieldModel, psi0: ManyBodyState, trajectory: HartreeTrajectory,
                               t: float, beta: float, step: float = 1e-4,
                               plan: PropagatorPlan | None = None) -> DerivativeReport:
    """Compare ``d_t g_N`` by central differences with its commutator and explicit forms.

    ``trajectory`` must contain the sample times ``t - step``, ``t`` and
    ``t + step``.
    """
    check_explicit_regime(model.d, model.N)
    if t - step < 0:
        raise ContractError(f"t={t} is too close to 0 for a central difference with step {step}")
    try:
        phis = [trajectory.at(s, tol=1e-12) for s in (t - step, t, t + step)]
    except ContractError as exc:
        raise ContractError(f"trajectory does not cover t={t} +/- {step}") from exc
    if plan is None:
        plan = PropagatorPlan.build(assemble_hamiltonian(model, psi0.basis))
    g_minus = _g_at(plan, psi0, phis[0], t - step, beta)
    g_plus = _g_at(plan, psi0, phis[2], t + step, beta)
    fd = (g_plus - g_minus) / (2 * step)

    frame = CondensateFrame(phis[1])
    gen = build_fluctuation_generator(model, frame)
    psi_t = plan.apply(psi0.amplitudes, t)
    chi = gen.emap.apply(psi_t)
    numbers = gen.emap.space.numbers
    E = np.exp(beta * numbers)
    comm = E[:, None] * gen.L - gen.L * E[None, :]
    commutator = (-1j * np.vdot(chi, comm @ chi)).real

    half = np.exp(0.5 * beta * numbers)
    t1, t2, t3 = gen.explicit_terms
    def im(op):
        return np.vdot(chi, (half[:, None] * op * half[None, :]) @ chi).imag
    explicit = 4 * math.sinh(beta / 2) * im(t1) - 4 * math.sinh(beta / 2) * im(t2) + 2 * math.sinh(beta) * im(t3)

    rel = abs(fd - commutator) / abs(commutator) if commutator != 0 else abs(fd)
    return DerivativeReport(fd, commutator, explicit, rel, abs(explicit - commutator))
