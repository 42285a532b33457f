"""Experiment pipelines behind the command line and their CSV tables.

CSV files are UTF-8 with LF line endings, ``.`` as decimal separator and
every float written with 17 significant digits (``format(x, ".17g")``, so
infinities appear as ``inf`` and undefined values as ``nan``). Bound tables
have the fixed header::

    scenario_id,t,beta,beta_c,g_N,C_beta,f,margin,flags[,p_0,...,p_N]

where the probability columns appear only when the scenario asks for the
excitation distribution. ``flags`` is a ``;``-separated list (empty when
nothing is flagged).
"""

from __future__ import annotations

import csv
import io
import itertools
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence, TextIO

import numpy as np

from .bounds import (
    GronwallReport,
    UniformGrid,
    VvEstimate,
    beta_c,
    bound_margins,
    gronwall_check,
    tail_bound,
    vv_estimate,
)
from .config import (
    ScenarioConfig,
    VvConfig,
    PotentialConstant,
    build_condensate,
    build_interaction,
    build_kinetic,
    excitation_amplitudes,
    parse_yaml,
    validate_config,
)
from .dynamics import MeanFieldModel, PropagatorPlan, assemble_hamiltonian, propagate, solve_hartree
from .errors import ConfigError, MFBosonsError
from .excitation import (
    CondensateFrame,
    ExcitationDistribution,
    build_excitation_map,
    build_fluctuation_generator,
    check_explicit_regime,
    excitation_distribution,
    excitation_vector,
    initial_state_from_excitations,
    verify_conjugation,
    verify_derivative_identity,
    verify_number_identities,
)
from .fock import ManyBodyState, enumerate_sector

BOUND_HEADER = ["scenario_id", "t", "beta", "beta_c", "g_N", "C_beta", "f", "margin", "flags"]
ALGEBRA_HEADER = ["scenario_id", "check", "value", "tolerance", "passed"]
VV_HEADER = ["scenario_id", "points", "spacing", "vv", "vv_squared", "coupling_K"]
TAIL_SLACK = 1e-10
# central-difference construction of i (d_t U) U^* uses a step of 1e-5
GENERATOR_FD_TOL = 1e-6

EXIT_OK, EXIT_CHECK_FAILED, EXIT_INPUT, EXIT_NUMERICAL = 0, 1, 2, 3


def fmt(x) -> str:
    return format(float(x), ".17g")


# ---------------------------------------------------------------- scenarios


@dataclass(frozen=True, eq=False)
class Scenario:
    cfg: ScenarioConfig
    model: MeanFieldModel
    phi0: np.ndarray
    frame0: CondensateFrame
    psi0: ManyBodyState
    times: np.ndarray
    betas: list[list[float]]
    tolerances: dict[str, float]

    @property
    def K(self) -> float:
        return self.model.K


def initial_state(cfg: ScenarioConfig, frame0: CondensateFrame) -> ManyBodyState:
    N, d = cfg.N, cfg.d
    xi = [np.zeros(len(enumerate_sector(d, n)), dtype=complex) for n in range(N + 1)]
    for occ, amp in excitation_amplitudes(cfg):
        sector, vec = excitation_vector(frame0, occ)
        xi[sector.particles] += amp * vec
    return initial_state_from_excitations(xi, frame0, N)


def beta_grid(cfg: ScenarioConfig, times: np.ndarray, K: float) -> list[list[float]]:
    """Exponents per time sample under the configured policy."""
    b = cfg.beta
    if b.policy == "explicit":
        return [list(b.values) for _ in times]
    K_ref = b.reference_coupling if b.reference_coupling is not None else K
    if K_ref == 0:
        raise ConfigError("field 'beta': the fractions policy needs K > 0 or beta.reference_coupling")
    positive = [t for t in times if t > 0]
    out = []
    for t in times:
        if t == 0:
            if not positive:
                raise ConfigError("field 'time': the fractions policy needs a positive sample time")
            t = positive[0]
        bc = beta_c(t, K_ref)
        out.append([f * bc for f in b.fractions])
    return out


def build_scenario(cfg: ScenarioConfig, profile: str | None = None) -> Scenario:
    model = MeanFieldModel(build_kinetic(cfg), build_interaction(cfg), cfg.N)
    phi0 = build_condensate(cfg)
    frame0 = CondensateFrame(phi0)
    psi0 = initial_state(cfg, frame0)
    times = cfg.time.grid()
    return Scenario(cfg, model, phi0, frame0, psi0, times, beta_grid(cfg, times, model.K),
                    cfg.tolerances.resolved(profile))


@dataclass(frozen=True)
class ResultRow:
    scenario_id: str
    t: float
    beta: float
    beta_c: float
    g_N: float
    C_beta: float
    f: float
    margin: float
    flags: tuple[str, ...] = ()
    probabilities: tuple[float, ...] | None = None

    def cells(self, n_prob: int = 0) -> list[str]:
        out = [self.scenario_id] + [fmt(x) for x in (self.t, self.beta, self.beta_c, self.g_N,
                                                      self.C_beta, self.f, self.margin)]
        out.append(";".join(self.flags))
        if n_prob:
            p = list(self.probabilities or ())
            out += [fmt(x) for x in p] + [""] * (n_prob - len(p))
        return out


def failure_row(scenario_id: str, exc: BaseException) -> ResultRow:
    nan = math.nan
    msg = f"error:{type(exc).__name__}: {exc}".replace("\n", " ")
    return ResultRow(scenario_id, nan, nan, nan, nan, nan, nan, nan, (msg,))


@dataclass
class SimulationResult:
    scenario: Scenario
    rows: list[ResultRow]
    distributions: dict[float, ExcitationDistribution]
    gronwall: GronwallReport | None = None

    @property
    def violations(self) -> list[ResultRow]:
        return [r for r in self.rows if "margin-violation" in r.flags]


def _trajectory_times(times: Sequence[float]) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    return times if times[0] == 0 else np.concatenate([[0.0], times])


def simulate(cfg: ScenarioConfig, profile: str | None = None, f_scale: float = 1.0) -> SimulationResult:
    """Hartree flow, exact many-body propagation and the bound table of one scenario."""
    sc = build_scenario(cfg, profile)
    model, tol = sc.model, sc.tolerances
    traj = solve_hartree(model, sc.phi0, _trajectory_times(sc.times), dt=cfg.hartree_dt,
                         drift_limit=tol["hartree_drift"])
    H = assemble_hamiltonian(model, sc.psi0.basis)
    plan = PropagatorPlan.build(H)
    dist0 = excitation_distribution(sc.psi0, sc.frame0)

    dists, g, C = {}, [], []
    for j, t in enumerate(sc.times):
        psi_t = propagate(H, sc.psi0, float(t), plan)
        dist = excitation_distribution(psi_t, CondensateFrame(traj.at(float(t))))
        dists[float(t)] = dist
        g.append(dist.mgf(sc.betas[j]))
        C.append(dist0.mgf(sc.betas[j]))
    margins = bound_margins(g, C, sc.times, sc.betas, sc.K, tol["margin_slack"], f_scale)

    rows = []
    for m in margins:
        dist = dists[m.t]
        flags = list(m.flags)
        if math.isfinite(m.f) and any(
            dist.tail(n) > tail_bound(n, m.beta, m.C_beta, m.t, sc.K) * f_scale + TAIL_SLACK
            for n in range(cfg.N + 1)
        ):
            flags.append("tail-violation")
        probs = tuple(float(p) for p in dist.probabilities) if cfg.output.distribution else None
        rows.append(ResultRow(cfg.id, m.t, m.beta, m.beta_c, m.g, m.C_beta, m.f, m.margin, tuple(flags), probs))

    report = None
    if cfg.gronwall is not None:
        report = gronwall_surface_check(sc, plan)
    return SimulationResult(sc, rows, dists, report)


def mgf_surface(sc: Scenario, times: Sequence[float], betas: Sequence[float],
                plan: PropagatorPlan | None = None) -> np.ndarray:
    """``g_N(t_j, beta_k)`` on a rectangular grid."""
    times = np.asarray(times, dtype=float)
    traj = solve_hartree(sc.model, sc.phi0, _trajectory_times(times), dt=sc.cfg.hartree_dt,
                         drift_limit=sc.tolerances["hartree_drift"])
    H = assemble_hamiltonian(sc.model, sc.psi0.basis)
    plan = PropagatorPlan.build(H) if plan is None else plan
    out = np.empty((times.size, len(betas)))
    for j, t in enumerate(times):
        psi_t = propagate(H, sc.psi0, float(t), plan)
        out[j] = excitation_distribution(psi_t, CondensateFrame(traj.at(float(t)))).mgf(betas)
    return out


def gronwall_surface_check(sc: Scenario, plan: PropagatorPlan | None = None) -> GronwallReport:
    gs = sc.cfg.gronwall
    times = np.linspace(0.0, gs.t_max, gs.t_points)
    betas = np.linspace(0.0, gs.beta_max, gs.beta_points)
    surface = mgf_surface(sc, times, betas, plan)
    return gronwall_check(surface, times, betas, sc.K, slack=sc.tolerances["gronwall_slack"])


def check_bound_status(result: SimulationResult) -> int:
    failed = bool(result.violations) or (result.gronwall is not None and not result.gronwall.passed)
    return EXIT_CHECK_FAILED if failed else EXIT_OK


def run_simulate(cfg: ScenarioConfig, profile: str | None = None) -> list[ResultRow]:
    return simulate(cfg, profile).rows


def run_check_bound(cfg: ScenarioConfig, profile: str | None = None,
                    f_scale: float = 1.0) -> tuple[list[ResultRow], int]:
    """Margin table and exit status (nonzero iff some margin is below ``-slack``).

    ``f_scale`` multiplies ``f`` before the comparison; it exists so the
    harness can check that a corrupted bound is caught.
    """
    result = simulate(cfg, profile, f_scale)
    return result.rows, check_bound_status(result)


# ---------------------------------------------------------------- algebra


@dataclass(frozen=True)
class AlgebraCheck:
    check: str
    value: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.value <= self.tolerance)


def run_verify_algebra(cfg: ScenarioConfig, profile: str | None = None) -> list[AlgebraCheck]:
    """Every explicit-matrix identity at the frame ``phi(t)`` of ``cfg.algebra.t``."""
    check_explicit_regime(cfg.d, cfg.N)
    sc = build_scenario(cfg, profile)
    tol = sc.tolerances
    a = cfg.algebra
    if a.t - a.step <= 0:
        raise ConfigError(f"field 'algebra.t': t={a.t} must exceed the step {a.step}")
    traj = solve_hartree(sc.model, sc.phi0, [0.0, a.t - a.step, a.t, a.t + a.step],
                         dt=cfg.hartree_dt, drift_limit=tol["hartree_drift"])
    frame = CondensateFrame(traj.at(a.t))
    d, N = cfg.d, cfg.N
    alg, gen_tol = tol["algebra"], tol["generator"]

    checks = [AlgebraCheck(f"frame.{k}", v, alg) for k, v in frame.projector_residuals().items()]
    emap = build_excitation_map(frame, d, N)
    checks += [AlgebraCheck(f"isometry.{k}", v, alg) for k, v in emap.isometry_residuals().items()]
    checks += [AlgebraCheck(f"conjugation.{k}", v, alg)
               for k, v in verify_conjugation(frame, d, N, alg).residuals.items()]
    checks += [AlgebraCheck(f"number.{k}", v, alg)
               for k, v in verify_number_identities(frame, d, N, alg).residuals.items()]

    gen = build_fluctuation_generator(sc.model, frame)
    checks += [AlgebraCheck(f"generator.block.{k}", v, gen_tol) for k, v in gen.formula_residuals().items()]
    checks += [
        AlgebraCheck("generator.block_adjoints", gen.adjoint_residual(), gen_tol),
        AlgebraCheck("generator.block_leakage", gen.block_leakage(), gen_tol),
        AlgebraCheck("generator.hermiticity", gen.hermiticity_residual(), gen_tol),
        AlgebraCheck("generator.direct_construction", gen.consistency_residual, GENERATOR_FD_TOL),
    ]

    rep = verify_derivative_identity(sc.model, sc.psi0, traj, a.t, a.beta, a.step)
    scale = max(1.0, abs(rep.commutator))
    checks += [
        AlgebraCheck("derivative.fd_vs_commutator", rep.relative_error if abs(rep.commutator) > 1e-8
                     else abs(rep.finite_difference - rep.commutator), tol["derivative_rel"]),
        AlgebraCheck("derivative.explicit_vs_commutator", rep.explicit_agreement, gen_tol * scale),
    ]
    return checks


def algebra_status(checks: Iterable[AlgebraCheck]) -> int:
    return EXIT_OK if all(c.passed for c in checks) else EXIT_CHECK_FAILED


# ---------------------------------------------------------------- vv


def _radius2(xs) -> np.ndarray:
    return sum(np.asarray(x, dtype=float) ** 2 for x in xs)


def vv_inputs(vc: VvConfig) -> tuple[Callable, Callable, UniformGrid]:
    pot, cond = vc.potential, vc.condensate
    if isinstance(pot, PotentialConstant):
        def V(*xs):
            return np.full(np.shape(xs[0]), pot.c, dtype=float)
    else:
        def V(*xs):
            return pot.amplitude * np.exp(-_radius2(xs) / (2 * pot.width**2))
    dim = vc.grid.dim
    sigma = cond.width

    def phi(*xs):
        return (math.pi * sigma**2) ** (-dim / 4) * np.exp(-_radius2(xs) / (2 * sigma**2))

    grid = UniformGrid(vc.grid.lower, vc.grid.upper, vc.grid.points, dim)
    return V, phi, grid


def vv_closed_form(vc: VvConfig) -> float:
    """Exact value on the whole space (grid truncation aside)."""
    pot = vc.potential
    if isinstance(pot, PotentialConstant):
        return abs(pot.c)
    s2, sig2 = pot.width**2, vc.condensate.width**2
    return abs(pot.amplitude) * (s2 / (s2 + sig2)) ** (vc.grid.dim / 4)


def run_estimate_vv(vc: VvConfig) -> VvEstimate:
    V, phi, grid = vv_inputs(vc)
    return vv_estimate(V, phi, grid, tol=vc.tolerance, norm_tol=vc.norm_tolerance)


def vv_rows(vc: VvConfig, est: VvEstimate) -> list[list[str]]:
    rows = []
    points = vc.grid.points
    for h, v in est.history:
        rows.append([vc.id, str(points), fmt(h), fmt(v), fmt(v * v), fmt(2 * v)])
        points = 2 * points - 1
    return rows


# ---------------------------------------------------------------- csv


def csv_writer(stream: TextIO):
    return csv.writer(stream, lineterminator="\n")


def bound_header(max_particles: int | None) -> list[str]:
    extra = [f"p_{n}" for n in range(max_particles + 1)] if max_particles is not None else []
    return BOUND_HEADER + extra


def render_bound_table(rows: Sequence[ResultRow], max_particles: int | None = None) -> str:
    buf = io.StringIO()
    w = csv_writer(buf)
    w.writerow(bound_header(max_particles))
    n_prob = 0 if max_particles is None else max_particles + 1
    for r in rows:
        w.writerow(r.cells(n_prob))
    return buf.getvalue()


def render_table(header: Sequence[str], rows: Iterable[Sequence[str]]) -> str:
    buf = io.StringIO()
    w = csv_writer(buf)
    w.writerow(header)
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def algebra_rows(scenario_id: str, checks: Sequence[AlgebraCheck]) -> list[list[str]]:
    return [[scenario_id, c.check, fmt(c.value), fmt(c.tolerance), "true" if c.passed else "false"]
            for c in checks]


def write_text(text: str, path: str | Path | None):
    """Write to ``path`` (UTF-8, LF) or to standard output when ``path`` is None."""
    if path is None:
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


# ---------------------------------------------------------------- sweeps


def expand_grid(path) -> list[ScenarioConfig]:
    """Scenarios of a grid file: a ``base`` scenario and per-key value lists.

    ``base`` is either an inline scenario mapping or a path relative to the
    grid file; ``parameters`` maps dotted keys (``N``, ``interaction.norm``)
    to lists of values. The cartesian product is taken in the listed key
    order and each scenario id gets a ``[key=value,...]`` suffix.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"grid file {path} does not exist")
    data, _ = parse_yaml(path.read_text(encoding="utf-8"), str(path))
    unknown = set(data) - {"base", "parameters"}
    if unknown:
        raise ConfigError(f"{path}: unknown grid keys {sorted(unknown)}")
    base = data.get("base")
    if isinstance(base, str):
        base_path = (path.parent / base)
        base, _ = parse_yaml(base_path.read_text(encoding="utf-8"), str(base_path))
    if not isinstance(base, dict):
        raise ConfigError(f"{path}: field 'base' must be a scenario mapping or a file path")
    params = data.get("parameters") or {}
    if not isinstance(params, dict) or any(not isinstance(v, list) or not v for v in params.values()):
        raise ConfigError(f"{path}: field 'parameters' must map keys to non-empty lists")
    keys = list(params)
    out = []
    for combo in itertools.product(*(params[k] for k in keys)):
        doc = _deep_copy(base)
        for key, value in zip(keys, combo):
            _set_dotted(doc, key, value)
        if keys:
            doc["id"] = f"{base.get('id', 'scenario')}[" + ",".join(
                f"{k}={v}" for k, v in zip(keys, combo)) + "]"
        out.append(validate_config(doc, source=f"{path} ({doc.get('id')})"))
    return out


def _deep_copy(x):
    if isinstance(x, dict):
        return {k: _deep_copy(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_deep_copy(v) for v in x]
    return x


def _set_dotted(doc: dict, key: str, value):
    parts = key.split(".")
    node = doc
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"grid key '{key}' does not address a mapping")
    node[parts[-1]] = value


@dataclass
class SweepResult:
    rows_written: int = 0
    failures: dict[str, str] = field(default_factory=dict)
    violations: int = 0

    @property
    def exit_code(self) -> int:
        return EXIT_CHECK_FAILED if (self.failures or self.violations) else EXIT_OK


def _run_one(cfg: ScenarioConfig, profile: str | None, f_scale: float) -> list[ResultRow]:
    try:
        return simulate(cfg, profile, f_scale).rows
    except (MFBosonsError, ValueError, ArithmeticError) as exc:
        return [failure_row(cfg.id, exc)]


def run_sweep(configs: Sequence[ScenarioConfig], out: str | Path | TextIO | None = None,
              threads: int = 1, profile: str | None = None, f_scale: float = 1.0,
              runner: Callable[[ScenarioConfig, str | None, float], list[ResultRow]] = _run_one) -> SweepResult:
    """Run independent scenarios, streaming rows in ``(scenario_id, t, beta)`` order.

    Rows of a scenario are written and flushed as soon as it and every
    scenario sorting before it are done, so an interrupted sweep leaves all
    completed prefixes on disk. A scenario that raises is reported as a
    single ``error:`` row instead of stopping the sweep.
    """
    ids = [c.id for c in configs]
    dup = sorted({i for i in ids if ids.count(i) > 1})
    if dup:
        raise ConfigError(f"duplicate scenario ids in sweep: {dup}")
    order = sorted(configs, key=lambda c: c.id)
    max_n = max((c.N for c in order if c.output.distribution), default=None)
    n_prob = 0 if max_n is None else max_n + 1

    own = isinstance(out, (str, Path))
    stream = open(out, "w", encoding="utf-8", newline="") if own else (out or sys.stdout)
    result = SweepResult()
    pool = ThreadPoolExecutor(max_workers=max(1, int(threads)))
    try:
        w = csv_writer(stream)
        w.writerow(bound_header(max_n))
        stream.flush()
        futures = [pool.submit(runner, cfg, profile, f_scale) for cfg in order]
        for cfg, fut in zip(order, futures):
            rows = fut.result()
            for r in rows:
                w.writerow(r.cells(n_prob))
                if any(fl.startswith("error:") for fl in r.flags):
                    result.failures[cfg.id] = r.flags[0]
                if "margin-violation" in r.flags:
                    result.violations += 1
            result.rows_written += len(rows)
            stream.flush()
    finally:
        pool.shutdown(wait=True, cancel_futures=True)
        if own:
            stream.close()
    return result
