"""Closed-form bound quantities and numerical checks of the Gronwall argument.

Every formula takes a generic coupling scale ``K``: ``K = ||w||`` for bounded
pair interactions, ``K = 2 * vv`` for a potential with condensate-weighted
size ``vv`` (see :func:`vv_estimate`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.signal import convolve

from .errors import ContractError, DomainError, RefinementError, ResolutionError


def artanh_exp_neg(s: float) -> float:
    """``artanh(exp(-s))`` for ``s > 0``, accurate for both small and large ``s``."""
    if s <= 0:
        return math.inf
    e = math.exp(-s)
    # log(1 - e): log1p is exact when e is small, log(-expm1) when s is small
    log_one_minus = math.log1p(-e) if s > 0.5 else math.log(-math.expm1(-s))
    return 0.5 * (math.log1p(e) - log_one_minus)


def beta_c(t: float, K: float) -> float:
    """Critical exponent ``-ln tanh(3 K t)``; ``math.inf`` at ``t = 0`` or ``K = 0``.

    Evaluated as ``2 artanh(exp(-6 K t))`` so the exponentially small
    large-time values keep full relative precision.
    """
    if t < 0 or K < 0:
        raise ContractError(f"need t >= 0 and K >= 0, got t={t}, K={K}")
    x = 3.0 * K * t
    if x == 0:
        return math.inf
    return 2.0 * artanh_exp_neg(2.0 * x)


def _check_domain(t: float, beta: float, K: float) -> float:
    if beta < 0:
        raise DomainError(f"beta must be non-negative, got {beta}")
    bc = beta_c(t, K)
    if not beta < bc:
        raise DomainError(f"beta={beta!r} is outside the domain beta < beta_c(t={t!r}) = {bc!r}")
    return bc


def bound_f(t: float, beta: float, K: float) -> float:
    """``((1 - tanh(3Kt) e^-beta) / (1 - tanh(3Kt) e^beta))^(1/3)``."""
    _check_domain(t, beta, K)
    tau = math.tanh(3.0 * K * t)
    return ((1.0 - tau * math.exp(-beta)) / (1.0 - tau * math.exp(beta))) ** (1.0 / 3.0)


def bound_f_unbounded(t: float, beta: float, vv: float) -> float:
    """Bound for a potential interaction, i.e. :func:`bound_f` at ``K = 2 vv``."""
    return bound_f(t, beta, 2.0 * vv)


def tail_bound(n: int, beta: float, C_beta: float, t: float, K: float) -> float:
    """Markov bound ``P[N_+ > n] <= C_beta f(t, beta) e^{-beta n}``."""
    if n < 0:
        raise ContractError(f"n must be non-negative, got {n}")
    return C_beta * bound_f(t, beta, K) * math.exp(-beta * n)


@dataclass(frozen=True)
class BoundParams:
    K: float
    t: float
    beta: float

    def __post_init__(self):
        if self.K < 0 or self.t < 0:
            raise ContractError(f"need K >= 0 and t >= 0, got K={self.K}, t={self.t}")

    @property
    def beta_c(self) -> float:
        return beta_c(self.t, self.K)

    @property
    def f(self) -> float:
        return bound_f(self.t, self.beta, self.K)


# ---------------------------------------------------------------------------
# characteristics of the weakened inequality


def change_of_variables(t: float, beta: float, K: float) -> tuple[float, float, float]:
    """``(X, Y, y0)`` straightening ``(2K sinh b)^-1 d_t + 3 d_b`` into ``d_y``.

    ``beta = 0`` sits at ``X = -inf`` and is rejected together with
    ``beta >= beta_c(t)``.
    """
    if K <= 0:
        raise DomainError("change of variables needs K > 0")
    if beta <= 0:
        raise DomainError(f"change of variables needs beta > 0, got {beta}")
    _check_domain(t, beta, K)
    a = artanh_exp_neg(beta)
    X = 6.0 * K * t - 2.0 * a
    Y = X - beta / 3.0
    z = a - 3.0 * K * t
    if z <= 0:
        raise DomainError(f"logarithm argument tanh({z}) is not positive")
    # ln tanh(z) = -2 artanh(e^{-2z})
    y0 = X - (2.0 / 3.0) * artanh_exp_neg(2.0 * z)
    return X, Y, y0


def inverse_change_of_variables(x: float, y: float, K: float) -> tuple[float, float]:
    """``(T(x, y), B(x, y))`` with ``B = 3 (x - y)``."""
    if K <= 0:
        raise DomainError("change of variables needs K > 0")
    s = 3.0 * (x - y)
    if s <= 0:
        raise DomainError(f"need x > y, got x - y = {x - y}")
    return (x + 2.0 * artanh_exp_neg(s)) / (6.0 * K), s


def gronwall_solution(t: float, beta: float, K: float) -> float:
    """``exp(Y - y0)``, the Gronwall factor along a characteristic."""
    _, Y, y0 = change_of_variables(t, beta, K)
    return math.exp(Y - y0)


# ---------------------------------------------------------------------------
# numerical verification on (t, beta) grids


def _central(g: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Second-order differences; one-sided (second order) on the two boundaries."""
    return np.gradient(g, h, axis=axis, edge_order=2)


def _third_difference_bound(g: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Estimate ``h^2 |g'''| / 6`` per point from the largest nearby third difference."""
    n = g.shape[axis]
    if n < 4:
        return np.full(g.shape, np.inf)
    d3 = np.abs(np.diff(g, n=3, axis=axis)) / h**3
    # each third difference covers 4 nodes; assign the worst one touching a node
    pad = [(0, 0)] * g.ndim
    pad[axis] = (3, 3)
    padded = np.pad(d3, pad, mode="edge")
    stack = [np.take(padded, range(k, k + n), axis=axis) for k in range(4)]
    return (h**2 / 6.0) * np.max(stack, axis=0)


@dataclass(frozen=True)
class GronwallReport:
    times: np.ndarray
    betas: np.ndarray
    dt_g: np.ndarray
    dbeta_g: np.ndarray
    residual: np.ndarray
    sharp_residual: np.ndarray
    fd_error: np.ndarray
    slack: float
    interior: np.ndarray = field(repr=False)

    @property
    def budget(self) -> np.ndarray:
        return self.slack + self.fd_error

    @property
    def failures(self) -> np.ndarray:
        """Interior points whose residual exceeds slack plus the FD estimate."""
        return self.interior & (self.residual > self.budget)

    @property
    def warnings(self) -> np.ndarray:
        """Interior points above the slack but inside the FD error estimate."""
        return self.interior & (self.residual > self.slack) & ~self.failures

    @property
    def passed(self) -> bool:
        return not bool(self.failures.any())

    def rows(self) -> list[dict]:
        out = []
        for j, t in enumerate(self.times):
            for k, b in enumerate(self.betas):
                out.append({
                    "t": float(t), "beta": float(b), "dt_g": float(self.dt_g[j, k]),
                    "dbeta_g": float(self.dbeta_g[j, k]), "residual": float(self.residual[j, k]),
                    "sharp_residual": float(self.sharp_residual[j, k]),
                    "budget": float(self.budget[j, k]), "interior": bool(self.interior[j, k]),
                    "flag": "fail" if self.failures[j, k] else ("warn" if self.warnings[j, k] else "ok"),
                })
        return out


def _uniform_spacing(grid: np.ndarray, name: str) -> float:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 3:
        raise ResolutionError(f"{name} grid needs at least 3 points")
    h = np.diff(grid)
    if np.any(h <= 0) or not np.allclose(h, h[0], rtol=1e-9, atol=0):
        raise ContractError(f"{name} grid must be uniform and increasing")
    return float(h[0])


def gronwall_check(surface, times: Sequence[float], betas: Sequence[float], K: float,
                   slack: float = 1e-3) -> GronwallReport:
    """Residual of ``d_t g <= 6K sinh(b) d_b g + 2K sinh(b) g`` on a sampled surface.

    ``surface[j, k] = g(times[j], betas[k])``. Only interior points can fail;
    boundary rows and columns carry one-sided estimates for reference.
    """
    g = np.asarray(surface, dtype=float)
    times = np.asarray(times, dtype=float)
    betas = np.asarray(betas, dtype=float)
    if g.shape != (times.size, betas.size):
        raise ContractError(f"surface shape {g.shape} does not match grid {(times.size, betas.size)}")
    ht = _uniform_spacing(times, "time")
    hb = _uniform_spacing(betas, "beta")
    if betas[-1] >= beta_c(times[-1], K):
        raise DomainError(f"beta_max={betas[-1]} is not below beta_c(t_max)={beta_c(times[-1], K)}")
    dt_g = _central(g, ht, 0)
    db_g = _central(g, hb, 1)
    sinh_b = np.sinh(betas)[None, :]
    residual = dt_g - 6 * K * sinh_b * db_g - 2 * K * sinh_b * g
    sharp = dt_g - (8 * K * np.sinh(betas / 2)[None, :] + 2 * K * sinh_b) * db_g - 2 * K * sinh_b * g
    fd_t = _third_difference_bound(g, ht, 0)
    fd_b = _third_difference_bound(g, hb, 1)
    fd_error = fd_t + 6 * K * sinh_b * fd_b
    interior = np.zeros(g.shape, dtype=bool)
    interior[1:-1, 1:-1] = True
    if np.any(fd_error[interior] > slack):
        worst = float(np.max(fd_error[interior]))
        raise ResolutionError(
            f"finite-difference error estimate {worst:.2e} exceeds the slack {slack:.0e}; refine the grid"
        )
    return GronwallReport(times, betas, dt_g, db_g, residual, sharp, fd_error, slack, interior)


@dataclass(frozen=True)
class MarginRow:
    t: float
    beta: float
    beta_c: float
    g: float
    C_beta: float
    f: float
    margin: float
    flags: tuple[str, ...] = ()


def bound_margins(g: np.ndarray, C: np.ndarray, times: Sequence[float], betas_per_time,
                  K: float, slack: float = 1e-8, f_scale: float = 1.0) -> list[MarginRow]:
    """``C_beta f(t, beta) - g_N(t, beta)`` for precomputed MGF values.

    ``betas_per_time[j]`` lists the exponents used at ``times[j]``; ``g`` and
    ``C`` are indexed the same way. Out-of-domain points are flagged, not raised.
    """
    rows = []
    for j, t in enumerate(times):
        for k, b in enumerate(betas_per_time[j]):
            bc = beta_c(t, K)
            flags = []
            if b >= bc:
                f = margin = math.nan
                flags.append("beta-out-of-domain")
            else:
                f = bound_f(t, b, K) * f_scale
                margin = C[j][k] * f - g[j][k]
                if margin < -slack:
                    flags.append("margin-violation")
            rows.append(MarginRow(float(t), float(b), bc, float(g[j][k]), float(C[j][k]), f, margin, tuple(flags)))
    rows.sort(key=lambda r: (r.t, r.beta))
    return rows


# ---------------------------------------------------------------------------
# condensate-weighted interaction size


@dataclass(frozen=True)
class UniformGrid:
    """Tensor-product grid ``lower + i * spacing`` along every axis, ``i = 0..points-1``."""

    lower: float
    upper: float
    points: int
    dim: int = 1

    def __post_init__(self):
        if self.points < 2 or self.upper <= self.lower or self.dim < 1:
            raise ContractError(f"invalid grid {self}")

    @property
    def spacing(self) -> float:
        return (self.upper - self.lower) / (self.points - 1)

    def axis(self) -> np.ndarray:
        return np.linspace(self.lower, self.upper, self.points)

    def coordinates(self) -> list[np.ndarray]:
        return np.meshgrid(*([self.axis()] * self.dim), indexing="ij")

    def offsets(self) -> list[np.ndarray]:
        """Coordinates of all differences ``x - y`` of grid points."""
        k = np.arange(-(self.points - 1), self.points) * self.spacing
        return np.meshgrid(*([k] * self.dim), indexing="ij")

    def refined(self) -> "UniformGrid":
        return UniformGrid(self.lower, self.upper, 2 * self.points - 1, self.dim)


@dataclass(frozen=True)
class VvEstimate:
    value: float
    squared: float
    grid: UniformGrid
    history: tuple[tuple[float, float], ...]  # (spacing, value) per evaluation

    @property
    def coupling(self) -> float:
        """``K = 2 vv``."""
        return 2.0 * self.value


def vv_on_grid(V_offsets: np.ndarray, phi: np.ndarray, spacing: float, norm_tol: float = 1e-6) -> tuple[float, float]:
    """``(sqrt(m), m)`` with ``m = max_x sum_y |V(x - y) phi(y)|^2 h^dim``.

    ``V_offsets`` holds ``V`` on the ``(2n - 1)^dim`` difference grid and
    ``phi`` the condensate on the ``n^dim`` grid.
    """
    phi = np.asarray(phi, dtype=complex)
    dim = phi.ndim
    cell = spacing**dim
    density = np.abs(phi) ** 2
    mass = float(density.sum() * cell)
    if abs(mass - 1.0) > norm_tol:
        raise ContractError(f"condensate is not normalized on the grid (mass {mass:.9f})")
    density = density / mass
    v2 = np.abs(np.asarray(V_offsets)) ** 2
    if v2.shape != tuple(2 * s - 1 for s in phi.shape):
        raise ContractError(f"potential samples have shape {v2.shape}, expected the difference grid")
    method = "direct" if dim == 1 else "auto"
    conv = convolve(v2, density, mode="valid", method=method) * cell
    m = float(np.max(conv))
    return math.sqrt(max(m, 0.0)), m


def vv_estimate(V: Callable[..., np.ndarray], phi: Callable[..., np.ndarray], grid: UniformGrid,
                tol: float = 1e-6, norm_tol: float = 1e-6) -> VvEstimate:
    """``vv = sup_x ||V(x - .) phi||_2`` by quadrature, confirmed by one halving of the spacing.

    ``V`` and ``phi`` are vectorized callables taking one coordinate array
    per axis. Raises :class:`RefinementError` if the refined grid moves the
    value by ``tol`` or more.
    """
    history = []
    for g in (grid, grid.refined()):
        val, sq = vv_on_grid(V(*g.offsets()), phi(*g.coordinates()), g.spacing, norm_tol)
        history.append((g.spacing, val, sq))
    (_, coarse, _), (_, fine, fine_sq) = history
    if abs(fine - coarse) >= tol:
        raise RefinementError(f"estimate moved by {abs(fine - coarse):.2e} >= {tol:.0e} under refinement")
    return VvEstimate(fine, fine_sq, grid.refined(), tuple((h, v) for h, v, _ in history))
