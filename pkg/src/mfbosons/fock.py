"""Occupation-number bases and second-quantized operators over ``d`` modes.

Bases are ordered lexicographically with the largest occupation of mode 0
first, so ``enumerate_sector(2, 2)`` yields ``(2, 0), (1, 1), (0, 2)``.
Sparse operators are plain :class:`scipy.sparse.csr_matrix` objects whose
duplicate entries have been merged and whose indices are sorted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence, Union

import numpy as np
import scipy.sparse as sp

from .errors import CapacityError, ContractError

#: Largest basis (number of occupation vectors) any builder will accept.
MAX_BASIS_STATES = 200_000
#: Operators up to this dimension may be materialized densely.
DENSE_LIMIT = 4096

HERMITIAN_TOL = 1e-12

Occupation = tuple[int, ...]


def sector_dimension(modes: int, particles: int) -> int:
    """Dimension of ``Sym^n(C^d)``, i.e. ``C(n + d - 1, d - 1)``."""
    return math.comb(particles + modes - 1, modes - 1)


def _compositions(modes: int, particles: int) -> Iterator[Occupation]:
    if modes == 1:
        yield (particles,)
        return
    for first in range(particles, -1, -1):
        for rest in _compositions(modes - 1, particles - first):
            yield (first,) + rest


@dataclass(frozen=True, eq=False)
class SectorBasis:
    """Occupation basis of the ``particles``-boson sector over ``modes`` modes."""

    modes: int
    particles: int
    states: tuple[Occupation, ...]
    index_of: dict[Occupation, int] = field(repr=False)

    def __len__(self) -> int:
        return len(self.states)

    @property
    def dim(self) -> int:
        return len(self.states)

    def occupations(self) -> np.ndarray:
        """States as an integer array of shape ``(dim, modes)``."""
        return np.array(self.states, dtype=np.int64).reshape(len(self.states), self.modes)


def enumerate_sector(d: int, n: int, cap: int = MAX_BASIS_STATES) -> SectorBasis:
    """Enumerate all occupation vectors of ``n`` bosons in ``d`` modes."""
    if d < 1 or n < 0:
        raise ContractError(f"need d >= 1 and n >= 0, got d={d}, n={n}")
    size = sector_dimension(d, n)
    if size > cap:
        raise CapacityError(
            f"sector (d={d}, n={n}) has {size} states, above the cap of {cap}"
        )
    states = tuple(_compositions(d, n))
    return SectorBasis(d, n, states, {s: i for i, s in enumerate(states)})


@dataclass(frozen=True, eq=False)
class TruncatedFockBasis:
    """Direct sum of the sectors ``0..max_particles``, concatenated in order."""

    modes: int
    max_particles: int
    sectors: tuple[SectorBasis, ...]
    offsets: tuple[int, ...]

    @property
    def dim(self) -> int:
        return self.offsets[-1] + len(self.sectors[-1])

    def __len__(self) -> int:
        return self.dim

    def sector_slice(self, n: int) -> slice:
        return slice(self.offsets[n], self.offsets[n] + len(self.sectors[n]))

    def index(self, occ: Occupation) -> int:
        n = sum(occ)
        return self.offsets[n] + self.sectors[n].index_of[tuple(occ)]

    def particle_numbers(self) -> np.ndarray:
        """Particle number of every basis vector, in basis order."""
        return np.concatenate(
            [np.full(len(s), s.particles, dtype=np.int64) for s in self.sectors]
        )

    def embed(self, n: int, vector: np.ndarray) -> np.ndarray:
        """Place a sector-``n`` vector into the full truncated space."""
        out = np.zeros(self.dim, dtype=complex)
        out[self.sector_slice(n)] = vector
        return out


def truncated_fock_basis(d: int, N: int, cap: int = MAX_BASIS_STATES) -> TruncatedFockBasis:
    """Build ``F^{<=N}`` over ``d`` modes."""
    if N < 0:
        raise ContractError(f"max particle number must be >= 0, got {N}")
    total = sum(sector_dimension(d, n) for n in range(N + 1))
    if total > cap:
        raise CapacityError(
            f"truncated Fock space (d={d}, N={N}) has {total} states, above the cap of {cap}"
        )
    sectors = tuple(enumerate_sector(d, n, cap) for n in range(N + 1))
    offsets = tuple(int(o) for o in np.cumsum([0] + [len(s) for s in sectors[:-1]]))
    return TruncatedFockBasis(d, N, sectors, offsets)


Basis = Union[SectorBasis, TruncatedFockBasis]


# ---------------------------------------------------------------------------
# sparse plumbing


def from_triplets(rows, cols, vals, shape: tuple[int, int]) -> sp.csr_matrix:
    """Assemble a CSR matrix from coordinate triplets, merging duplicates."""
    mat = sp.coo_matrix(
        (np.asarray(vals, dtype=complex), (np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64))),
        shape=shape,
    ).tocsr()
    mat.sum_duplicates()
    mat.sort_indices()
    return mat


def hermiticity_residual(op) -> float:
    """``max |A - A^dagger|`` for sparse or dense ``op``."""
    if sp.issparse(op):
        diff = op - op.conj().T
        return float(abs(diff).max()) if diff.nnz else 0.0
    op = np.asarray(op)
    return float(np.max(np.abs(op - op.conj().T))) if op.size else 0.0


def is_hermitian(op, tol: float = HERMITIAN_TOL) -> bool:
    return hermiticity_residual(op) <= tol


def to_dense(op) -> np.ndarray:
    if sp.issparse(op):
        if max(op.shape) > DENSE_LIMIT:
            raise CapacityError(
                f"refusing to densify a {op.shape[0]}x{op.shape[1]} operator (limit {DENSE_LIMIT})"
            )
        return op.toarray()
    return np.asarray(op)


def check_one_body(A, dim: int | None = None, hermitian: bool = True) -> np.ndarray:
    """Validate a one-body matrix and return it as a complex array."""
    A = np.asarray(A, dtype=complex)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ContractError(f"one-body operator must be square, got shape {A.shape}")
    if dim is not None and A.shape[0] != dim:
        raise ContractError(f"one-body operator has dimension {A.shape[0]}, expected {dim}")
    if hermitian and hermiticity_residual(A) > HERMITIAN_TOL * max(1.0, float(np.max(np.abs(A)))):
        raise ContractError("one-body operator is not Hermitian")
    return A


# ---------------------------------------------------------------------------
# ladder operators


def annihilation_matrix(basis_n: SectorBasis, basis_nm1: SectorBasis, mode: int) -> sp.csr_matrix:
    """Matrix of ``a_mode`` from the n-sector into the (n-1)-sector.

    The creation operator is the conjugate transpose.
    """
    if basis_n.modes != basis_nm1.modes or basis_nm1.particles != basis_n.particles - 1:
        raise ContractError(
            f"annihilation needs sectors n and n-1 over the same modes, got "
            f"n={basis_n.particles}, m={basis_nm1.particles}"
        )
    if not 0 <= mode < basis_n.modes:
        raise ContractError(f"mode {mode} out of range for {basis_n.modes} modes")
    rows, cols, vals = [], [], []
    for j, occ in enumerate(basis_n.states):
        k = occ[mode]
        if k == 0:
            continue
        target = occ[:mode] + (k - 1,) + occ[mode + 1:]
        rows.append(basis_nm1.index_of[target])
        cols.append(j)
        vals.append(math.sqrt(k))
    return from_triplets(rows, cols, vals, (len(basis_nm1), len(basis_n)))


def fock_annihilation(basis: TruncatedFockBasis, mode: int) -> sp.csr_matrix:
    """``a_mode`` on the truncated Fock space (block-subdiagonal)."""
    blocks = []
    rows, cols, vals = [], [], []
    for n in range(1, basis.max_particles + 1):
        block = annihilation_matrix(basis.sectors[n], basis.sectors[n - 1], mode).tocoo()
        rows.append(block.row + basis.offsets[n - 1])
        cols.append(block.col + basis.offsets[n])
        vals.append(block.data)
        blocks.append(block)
    if not blocks:
        return sp.csr_matrix((basis.dim, basis.dim), dtype=complex)
    return from_triplets(np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), (basis.dim, basis.dim))


def fock_annihilation_along(basis: TruncatedFockBasis, f: np.ndarray) -> sp.csr_matrix:
    """``a(f) = sum_k conj(f_k) a_k`` on the truncated Fock space."""
    f = np.asarray(f, dtype=complex)
    if f.shape != (basis.modes,):
        raise ContractError(f"mode function has shape {f.shape}, expected ({basis.modes},)")
    out = sp.csr_matrix((basis.dim, basis.dim), dtype=complex)
    for k in range(basis.modes):
        if f[k] != 0:
            out = out + np.conj(f[k]) * fock_annihilation(basis, k)
    return out.tocsr()


def number_operator(basis: Basis) -> sp.csr_matrix:
    """Diagonal particle-number operator."""
    if isinstance(basis, SectorBasis):
        diag = np.full(len(basis), basis.particles, dtype=complex)
    else:
        diag = basis.particle_numbers().astype(complex)
    return sp.diags(diag, format="csr")


# ---------------------------------------------------------------------------
# second quantization


def _one_body_triplets(A: np.ndarray, sector: SectorBasis, offset: int):
    d = sector.modes
    rows, cols, vals = [], [], []
    nonzero = [(m, p) for m in range(d) for p in range(d) if A[m, p] != 0]
    for j, occ in enumerate(sector.states):
        for m, p in nonzero:
            kp = occ[p]
            if kp == 0:
                continue
            s = list(occ)
            s[p] -= 1
            s[m] += 1
            amp = math.sqrt(kp) * math.sqrt(s[m])
            rows.append(offset + sector.index_of[tuple(s)])
            cols.append(offset + j)
            vals.append(A[m, p] * amp)
    return rows, cols, vals


def _sectors_of(basis: Basis) -> list[tuple[SectorBasis, int]]:
    if isinstance(basis, SectorBasis):
        return [(basis, 0)]
    return list(zip(basis.sectors, basis.offsets))


def dgamma_one_body(A, basis: Basis) -> sp.csr_matrix:
    """Second quantization ``sum_{m,p} A_mp a_m^dagger a_p`` of a one-body matrix."""
    A = np.asarray(A, dtype=complex)
    if A.shape != (basis.modes, basis.modes):
        raise ContractError(f"one-body operator has shape {A.shape}, basis has {basis.modes} modes")
    rows, cols, vals = [], [], []
    for sector, offset in _sectors_of(basis):
        r, c, v = _one_body_triplets(A, sector, offset)
        rows += r
        cols += c
        vals += v
    return from_triplets(rows, cols, vals, (basis.dim, basis.dim))


def _two_body_triplets(w: np.ndarray, sector: SectorBasis, offset: int):
    # 1/2 sum w_mnpq a_m^+ a_n^+ a_q a_p: remove p then q, add n then m
    d = sector.modes
    rows, cols, vals = [], [], []
    if sector.particles < 2:
        return rows, cols, vals
    pairs_in = [(p, q) for p in range(d) for q in range(d)]
    for j, occ in enumerate(sector.states):
        for p, q in pairs_in:
            s = list(occ)
            if s[p] == 0:
                continue
            c = math.sqrt(s[p])
            s[p] -= 1
            if s[q] == 0:
                continue
            c *= math.sqrt(s[q])
            s[q] -= 1
            for n in range(d):
                s[n] += 1
                cn = c * math.sqrt(s[n])
                for m in range(d):
                    coeff = w[m, n, p, q]
                    if coeff == 0:
                        continue
                    s[m] += 1
                    rows.append(offset + sector.index_of[tuple(s)])
                    cols.append(offset + j)
                    vals.append(0.5 * coeff * cn * math.sqrt(s[m]))
                    s[m] -= 1
                s[n] -= 1
    return rows, cols, vals


def dgamma_two_body(w: "TwoBodyTensor | np.ndarray", basis: Basis) -> sp.csr_matrix:
    """Second quantization ``1/2 sum w_mnpq a_m^+ a_n^+ a_q a_p`` of a pair operator."""
    entries = w.entries if isinstance(w, TwoBodyTensor) else np.asarray(w, dtype=complex)
    d = basis.modes
    if entries.shape != (d, d, d, d):
        raise ContractError(f"two-body tensor has shape {entries.shape}, basis has {d} modes")
    rows, cols, vals = [], [], []
    for sector, offset in _sectors_of(basis):
        r, c, v = _two_body_triplets(entries, sector, offset)
        rows += r
        cols += c
        vals += v
    return from_triplets(rows, cols, vals, (basis.dim, basis.dim))


# ---------------------------------------------------------------------------
# two-body tensors


def _exchange_residual(w: np.ndarray) -> float:
    return max(
        float(np.max(np.abs(w - w.transpose(1, 0, 3, 2)))),
        float(np.max(np.abs(w - w.transpose(0, 1, 3, 2)))),
        float(np.max(np.abs(w - w.transpose(1, 0, 2, 3)))),
    )


def _tensor_hermiticity_residual(w: np.ndarray) -> float:
    return float(np.max(np.abs(w - np.conj(w.transpose(2, 3, 0, 1)))))


@dataclass(frozen=True, eq=False)
class TwoBodyTensor:
    """Coefficients ``w[m, n, p, q] = <e_m (x) e_n, w e_p (x) e_q>``.

    Construction checks Hermiticity and all four bosonic exchange
    equalities; raw arrays should go through :func:`symmetrize_tensor`.
    """

    entries: np.ndarray
    op_norm: float = field(init=False)

    def __post_init__(self):
        w = np.array(self.entries, dtype=complex)
        if w.ndim != 4 or len(set(w.shape)) != 1:
            raise ContractError(f"two-body tensor must have shape (d, d, d, d), got {w.shape}")
        scale = HERMITIAN_TOL * max(1.0, float(np.max(np.abs(w))) if w.size else 1.0)
        if _tensor_hermiticity_residual(w) > scale:
            raise ContractError("two-body tensor is not Hermitian")
        if _exchange_residual(w) > scale:
            raise ContractError("two-body tensor is not exchange symmetric; use symmetrize_tensor")
        w.setflags(write=False)
        object.__setattr__(self, "entries", w)
        object.__setattr__(self, "op_norm", float(np.linalg.norm(self.matrix(), 2)))

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def matrix(self) -> np.ndarray:
        """The ``d^2 x d^2`` reshaping with row ``(m, n)`` and column ``(p, q)``."""
        d = self.entries.shape[0]
        return self.entries.reshape(d * d, d * d)

    def in_frame(self, completion: np.ndarray) -> np.ndarray:
        """Coefficients with respect to the orthonormal columns of ``completion``."""
        C = np.asarray(completion, dtype=complex)
        Cc = C.conj()
        return np.einsum("am,bn,abcd,cp,dq->mnpq", Cc, Cc, self.entries, C, C, optimize=True)

    @classmethod
    def zero(cls, d: int) -> "TwoBodyTensor":
        return cls(np.zeros((d, d, d, d), dtype=complex))


def identity_tensor(d: int, c: complex = 1.0) -> np.ndarray:
    """Raw ``c * Id`` on ``C^d (x) C^d`` as a ``(d, d, d, d)`` array (not compressed)."""
    return c * np.eye(d * d, dtype=complex).reshape(d, d, d, d)


def symmetrize_tensor(raw) -> TwoBodyTensor:
    """Bosonic compression ``P w P`` followed by Hermitian averaging.

    ``P`` is the projector onto symmetric two-particle states, so neither
    step can increase the spectral norm.
    """
    w = np.asarray(raw, dtype=complex)
    if w.ndim == 1 or w.ndim == 2:
        d = round(w.size ** 0.25)
        if d**4 != w.size:
            raise ContractError(f"raw tensor has {w.size} entries, not a fourth power")
        w = w.reshape(d, d, d, d)
    if w.ndim != 4 or len(set(w.shape)) != 1:
        raise ContractError(f"raw tensor must have d^4 entries, got shape {w.shape}")
    s = 0.25 * (w + w.transpose(1, 0, 3, 2) + w.transpose(0, 1, 3, 2) + w.transpose(1, 0, 2, 3))
    h = 0.5 * (s + np.conj(s.transpose(2, 3, 0, 1)))
    return TwoBodyTensor(h)


def effective_potential(w: "TwoBodyTensor | np.ndarray", phi) -> np.ndarray:
    """Mean-field operator ``(w^phi)_mp = sum_{n,q} w_mnpq conj(phi_n) phi_q``.

    Accepts a raw ``(d, d, d, d)`` array as well as a :class:`TwoBodyTensor`.
    """
    entries = w.entries if isinstance(w, TwoBodyTensor) else np.asarray(w, dtype=complex)
    phi = np.asarray(phi, dtype=complex)
    if phi.shape != (entries.shape[0],):
        raise ContractError(f"phi has shape {phi.shape}, tensor dimension is {entries.shape[0]}")
    if abs(np.linalg.norm(phi) - 1.0) > 1e-10:
        raise ContractError(f"phi must be a unit vector, |phi| = {np.linalg.norm(phi):.3e}")
    return np.einsum("mnpq,n,q->mp", entries, phi.conj(), phi)


# ---------------------------------------------------------------------------
# states


@dataclass(frozen=True, eq=False)
class ManyBodyState:
    """Amplitudes over a sector or truncated Fock basis."""

    basis: Basis
    amplitudes: np.ndarray
    normalized: bool = True

    def __post_init__(self):
        amps = np.array(self.amplitudes, dtype=complex)
        if amps.shape != (self.basis.dim,):
            raise ContractError(f"amplitude vector has shape {amps.shape}, basis dimension is {self.basis.dim}")
        if self.normalized and abs(np.linalg.norm(amps) - 1.0) > 1e-10:
            raise ContractError(f"state flagged normalized has norm {np.linalg.norm(amps):.12f}")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def expectation(self, op) -> complex:
        return complex(np.vdot(self.amplitudes, op @ self.amplitudes))


def condensate_state(phi, basis: SectorBasis) -> ManyBodyState:
    """The normalized product state ``phi^{(x) n}`` in the occupation basis.

    Amplitude of occupation ``k`` is ``sqrt(n! / prod k_m!) prod phi_m^{k_m}``.
    """
    phi = np.asarray(phi, dtype=complex)
    if phi.shape != (basis.modes,):
        raise ContractError(f"phi has shape {phi.shape}, basis has {basis.modes} modes")
    occ = basis.occupations()
    n = basis.particles
    log_mult = 0.5 * (math.lgamma(n + 1) - np.array([sum(math.lgamma(k + 1) for k in s) for s in basis.states]))
    powers = np.prod(np.where(occ > 0, phi[None, :] ** occ, 1.0), axis=1)
    amps = np.exp(log_mult) * powers
    norm = np.linalg.norm(amps)
    return ManyBodyState(basis, amps / norm if norm > 0 else amps, normalized=norm > 0)


def basis_vector(basis: Basis, occ: Sequence[int]) -> np.ndarray:
    vec = np.zeros(basis.dim, dtype=complex)
    if isinstance(basis, SectorBasis):
        vec[basis.index_of[tuple(occ)]] = 1.0
    else:
        vec[basis.index(tuple(occ))] = 1.0
    return vec
