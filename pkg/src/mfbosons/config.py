"""Scenario files: YAML documents validated against a strict schema.

Unknown keys are errors. Random presets draw from numpy's ``PCG64`` bit
generator; each preset gets its own stream, derived from the scenario seed
with ``SeedSequence(seed, spawn_key=(k,))`` where ``k`` is 0 for the kinetic
matrix, 1 for the interaction and 2 for the condensate. Uniform variates
``2 * rng.random(shape) - 1`` fill the real parts first, then the imaginary
parts, so a given seed produces the same model on every platform.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Annotated, Any, Literal, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError
from .fock import TwoBodyTensor, identity_tensor, symmetrize_tensor

SEED_MAX = 2**64 - 1
STREAM_KINETIC, STREAM_INTERACTION, STREAM_CONDENSATE = 0, 1, 2

TOLERANCE_PROFILES: dict[str, dict[str, float]] = {
    "default": {
        "margin_slack": 1e-8,
        "algebra": 1e-10,
        "generator": 1e-9,
        "derivative_rel": 1e-4,
        "gronwall_slack": 1e-3,
        "hartree_drift": 1e-6,
    },
    "strict": {
        "margin_slack": 1e-10,
        "algebra": 1e-12,
        "generator": 1e-10,
        "derivative_rel": 1e-5,
        "gronwall_slack": 1e-4,
        "hartree_drift": 1e-8,
    },
}


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


Complex = tuple[float, float]  # (re, im)


# ----------------------------------------------------------------- kinetic


class KineticZero(_Strict):
    preset: Literal["zero"]


class KineticDiagonal(_Strict):
    preset: Literal["diagonal"]
    values: list[float]


class KineticExplicit(_Strict):
    preset: Literal["explicit"]
    real: list[list[float]]
    imag: Optional[list[list[float]]] = None


class KineticRandom(_Strict):
    preset: Literal["random-hermitian"]
    norm: float = Field(1.0, ge=0)


KineticSpec = Annotated[Union[KineticZero, KineticDiagonal, KineticExplicit, KineticRandom],
                        Field(discriminator="preset")]


# ------------------------------------------------------------- interaction


class InteractionZero(_Strict):
    preset: Literal["zero"]


class InteractionIdentity(_Strict):
    preset: Literal["scaled-identity"]
    c: float


class InteractionRandom(_Strict):
    preset: Literal["random-hermitian"]
    norm: float = Field(1.0, ge=0)


class TensorEntry(_Strict):
    index: tuple[int, int, int, int]
    value: Complex


class InteractionExplicit(_Strict):
    preset: Literal["explicit"]
    entries: list[TensorEntry]
    symmetrize: bool = False


InteractionSpec = Annotated[
    Union[InteractionZero, InteractionIdentity, InteractionRandom, InteractionExplicit],
    Field(discriminator="preset"),
]


# --------------------------------------------------------------- condensate


class CondensateBasis(_Strict):
    preset: Literal["basis"]
    mode: int = Field(0, ge=0)


class CondensateExplicit(_Strict):
    preset: Literal["explicit"]
    real: list[float]
    imag: Optional[list[float]] = None
    normalize: bool = False


class CondensateRandom(_Strict):
    preset: Literal["random"]


CondensateSpec = Annotated[Union[CondensateBasis, CondensateExplicit, CondensateRandom],
                           Field(discriminator="preset")]


# -------------------------------------------------------------- excitations


class PureCondensate(_Strict):
    preset: Literal["pure-condensate"]


class SingleExcitation(_Strict):
    preset: Literal["single-excitation"]
    mode: int = Field(1, ge=1)


class ExcitationComponent(_Strict):
    occupations: list[int]
    amplitude: Complex = (1.0, 0.0)

    @field_validator("occupations")
    @classmethod
    def _non_negative(cls, v):
        if any(k < 0 for k in v):
            raise ValueError("occupations must be non-negative")
        return v


class CustomExcitations(_Strict):
    preset: Literal["custom"]
    components: list[ExcitationComponent] = Field(min_length=1)
    normalize: bool = False


ExcitationSpec = Annotated[Union[PureCondensate, SingleExcitation, CustomExcitations],
                           Field(discriminator="preset")]


# -------------------------------------------------------- grids and output


class TimeSpec(_Strict):
    """Either ``t_max`` with ``samples`` (uniform, starting at 0) or explicit ``values``."""

    t_max: Optional[float] = Field(None, gt=0)
    samples: Optional[int] = Field(None, ge=2)
    values: Optional[list[float]] = None

    @model_validator(mode="after")
    def _one_form(self):
        uniform = self.t_max is not None or self.samples is not None
        if uniform == (self.values is not None):
            raise ValueError("give either t_max and samples, or values")
        if uniform and (self.t_max is None or self.samples is None):
            raise ValueError("t_max and samples must be given together")
        if self.values is not None:
            v = self.values
            if not v or v[0] < 0 or any(b <= a for a, b in zip(v, v[1:])):
                raise ValueError("time values must be non-negative and strictly increasing")
        return self

    def grid(self) -> np.ndarray:
        if self.values is not None:
            return np.array(self.values, dtype=float)
        return np.linspace(0.0, self.t_max, self.samples)


class BetaSpec(_Strict):
    """``fractions`` of ``beta_c(t)`` per time sample, or one ``explicit`` grid.

    At ``t = 0`` (where ``beta_c`` is infinite) the fractions refer to
    ``beta_c`` at the next positive sample time. ``reference_coupling``
    replaces ``K`` in that computation, which is needed when ``K = 0``.
    """

    policy: Literal["fractions", "explicit"] = "fractions"
    fractions: list[float] = Field(default_factory=lambda: [0.25, 0.5, 0.75])
    values: Optional[list[float]] = None
    reference_coupling: Optional[float] = Field(None, gt=0)

    @model_validator(mode="after")
    def _check(self):
        if self.policy == "explicit":
            if not self.values:
                raise ValueError("explicit beta policy needs a non-empty 'values' list")
            if any(b < 0 for b in self.values):
                raise ValueError("beta values must be non-negative")
        else:
            if self.values is not None:
                raise ValueError("'values' is only allowed with the explicit policy")
            if not self.fractions or any(not 0 <= f < 1 for f in self.fractions):
                raise ValueError("fractions must lie in [0, 1)")
        return self


class Tolerances(_Strict):
    profile: Literal["default", "strict"] = "default"
    margin_slack: Optional[float] = Field(None, gt=0)
    algebra: Optional[float] = Field(None, gt=0)
    generator: Optional[float] = Field(None, gt=0)
    derivative_rel: Optional[float] = Field(None, gt=0)
    gronwall_slack: Optional[float] = Field(None, gt=0)
    hartree_drift: Optional[float] = Field(None, gt=0)

    def resolved(self, profile: str | None = None) -> dict[str, float]:
        """Profile values with explicit overrides applied on top."""
        base = dict(TOLERANCE_PROFILES[profile or self.profile])
        for key in base:
            v = getattr(self, key)
            if v is not None:
                base[key] = v
        return base


class OutputSpec(_Strict):
    path: Optional[str] = None
    distribution: bool = False


class AlgebraSpec(_Strict):
    """Sample point of the derivative identity and the frame used by verify-algebra."""

    t: float = Field(0.1, gt=0)
    beta: float = Field(0.1, ge=0)
    step: float = Field(1e-4, gt=0)


class GronwallSpec(_Strict):
    """Uniform ``(t, beta)`` grid for the differential-inequality check."""

    t_max: float = Field(gt=0)
    t_points: int = Field(ge=3)
    beta_max: float = Field(gt=0)
    beta_points: int = Field(ge=3)


class ScenarioConfig(_Strict):
    id: str = Field(min_length=1)
    d: int = Field(ge=1)
    N: int
    seed: Optional[int] = Field(None, ge=0, le=SEED_MAX)
    kinetic: KineticSpec = KineticZero(preset="zero")
    interaction: InteractionSpec
    condensate: CondensateSpec = CondensateBasis(preset="basis", mode=0)
    excitations: ExcitationSpec = PureCondensate(preset="pure-condensate")
    time: TimeSpec
    beta: BetaSpec = BetaSpec()
    tolerances: Tolerances = Tolerances()
    output: OutputSpec = OutputSpec()
    hartree_dt: float = Field(1e-2, gt=0)
    algebra: AlgebraSpec = AlgebraSpec()
    gronwall: Optional[GronwallSpec] = None

    @field_validator("N")
    @classmethod
    def _mean_field(cls, v):
        if v < 2:
            raise ValueError("N ≥ 2 is required by the 1/(N-1) mean-field scaling")
        return v

    @model_validator(mode="after")
    def _consistency(self):
        d, N = self.d, self.N
        k = self.kinetic
        if isinstance(k, KineticDiagonal) and len(k.values) != d:
            raise ValueError(f"kinetic.values has {len(k.values)} entries, expected d={d}")
        if isinstance(k, KineticExplicit):
            for name, m in (("real", k.real), ("imag", k.imag)):
                if m is not None and (len(m) != d or any(len(r) != d for r in m)):
                    raise ValueError(f"kinetic.{name} must be a {d}x{d} matrix")
        w = self.interaction
        if isinstance(w, InteractionExplicit):
            for e in w.entries:
                if any(not 0 <= i < d for i in e.index):
                    raise ValueError(f"interaction entry index {e.index} is out of range for d={d}")
        c = self.condensate
        if isinstance(c, CondensateBasis) and c.mode >= d:
            raise ValueError(f"condensate.mode={c.mode} is out of range for d={d}")
        if isinstance(c, CondensateExplicit):
            if len(c.real) != d or (c.imag is not None and len(c.imag) != d):
                raise ValueError(f"condensate vector must have d={d} entries")
        x = self.excitations
        if isinstance(x, SingleExcitation) and not 1 <= x.mode < d:
            raise ValueError(f"excitations.mode must be a frame mode in 1..{d - 1}")
        if isinstance(x, CustomExcitations):
            for comp in x.components:
                if len(comp.occupations) != d - 1:
                    raise ValueError(f"each excitation lists occupations of the {d - 1} frame modes 1..d-1")
                if sum(comp.occupations) > N:
                    raise ValueError(f"excitation {comp.occupations} holds more than N={N} particles")
            occs = [tuple(comp.occupations) for comp in x.components]
            if len(set(occs)) != len(occs):
                raise ValueError("excitation components must have distinct occupations")
        if self.uses_randomness and self.seed is None:
            raise ValueError("seed is required when a random preset is used")
        return self

    @property
    def uses_randomness(self) -> bool:
        return any(isinstance(s, (KineticRandom, InteractionRandom, CondensateRandom))
                   for s in (self.kinetic, self.interaction, self.condensate))

    def with_overrides(self, seed: int | None = None, profile: str | None = None) -> "ScenarioConfig":
        data = self.model_dump()
        if seed is not None:
            data["seed"] = seed
        if profile is not None:
            data["tolerances"]["profile"] = profile
        return validate_config(data)


# ---------------------------------------------------------------- vv files


class PotentialConstant(_Strict):
    kind: Literal["constant"]
    c: float


class PotentialGaussian(_Strict):
    kind: Literal["gaussian"]
    amplitude: float
    width: float = Field(gt=0)


class GaussianCondensate(_Strict):
    kind: Literal["gaussian"]
    width: float = Field(gt=0)


class GridSpec(_Strict):
    lower: float
    upper: float
    points: int = Field(ge=2)
    dim: int = Field(1, ge=1, le=3)

    @model_validator(mode="after")
    def _order(self):
        if self.upper <= self.lower:
            raise ValueError("grid.upper must exceed grid.lower")
        return self


class VvConfig(_Strict):
    id: str = Field(min_length=1)
    potential: Annotated[Union[PotentialConstant, PotentialGaussian], Field(discriminator="kind")]
    condensate: GaussianCondensate
    grid: GridSpec
    tolerance: float = Field(1e-6, gt=0)
    norm_tolerance: float = Field(1e-6, gt=0)
    output: OutputSpec = OutputSpec()


# ------------------------------------------------------------------ loading


def _node_line(root, loc) -> int | None:
    """1-based line of the YAML node addressed by a pydantic error location."""
    node = root
    line = None
    for key in loc:
        if isinstance(node, yaml.MappingNode):
            match = [v for k, v in node.value if k.value == key]
            if not match:
                break
            node = match[0]
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
        else:
            continue  # discriminator tags and the like
        line = node.start_mark.line + 1
    return line


def _format_errors(exc: ValidationError, root=None, source: str = "config") -> str:
    parts = []
    for err in exc.errors():
        loc = tuple(err["loc"])
        field = ".".join(str(x) for x in loc) or "scenario"
        msg = err["msg"].removeprefix("Value error, ")
        line = _node_line(root, loc) if root is not None else None
        where = f"{source}:{line}: " if line else f"{source}: "
        parts.append(f"{where}field '{field}': {msg}")
    return "; ".join(parts)


def parse_yaml(text: str, source: str = "config") -> tuple[Any, Any]:
    try:
        root = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = f":{mark.line + 1}" if mark is not None else ""
        problem = getattr(exc, "problem", None) or str(exc)
        raise ConfigError(f"{source}{line}: YAML parse error: {problem}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    return data, root


def validate_config(data: dict, root=None, source: str = "config") -> ScenarioConfig:
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc, root, source)) from None


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    data, root = parse_yaml(path.read_text(encoding="utf-8"), str(path))
    return validate_config(data, root, str(path))


def load_vv_config(path) -> VvConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    data, root = parse_yaml(path.read_text(encoding="utf-8"), str(path))
    try:
        return VvConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc, root, str(path))) from None


# ------------------------------------------------------------ model inputs


def preset_rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(stream,))))


def _uniform_complex(rng: np.random.Generator, shape) -> np.ndarray:
    re = 2.0 * rng.random(shape) - 1.0
    im = 2.0 * rng.random(shape) - 1.0
    return re + 1j * im


def random_hermitian_matrix(rng: np.random.Generator, d: int, norm: float = 1.0) -> np.ndarray:
    A = _uniform_complex(rng, (d, d))
    H = 0.5 * (A + A.conj().T)
    s = np.linalg.norm(H, 2)
    return H * (norm / s) if s > 0 else H


def random_two_body(rng: np.random.Generator, d: int, norm: float = 1.0) -> TwoBodyTensor:
    """Uniform raw coefficients, symmetrized, then rescaled to spectral norm ``norm``."""
    w = symmetrize_tensor(_uniform_complex(rng, (d, d, d, d)))
    return TwoBodyTensor(w.entries * (norm / w.op_norm)) if w.op_norm > 0 else w


def random_unit_vector(rng: np.random.Generator, d: int) -> np.ndarray:
    v = _uniform_complex(rng, d)
    return v / np.linalg.norm(v)


def build_kinetic(cfg: ScenarioConfig) -> np.ndarray:
    k, d = cfg.kinetic, cfg.d
    if isinstance(k, KineticZero):
        return np.zeros((d, d), dtype=complex)
    if isinstance(k, KineticDiagonal):
        return np.diag(np.array(k.values, dtype=complex))
    if isinstance(k, KineticExplicit):
        T = np.array(k.real, dtype=complex)
        if k.imag is not None:
            T = T + 1j * np.array(k.imag, dtype=float)
        if np.max(np.abs(T - T.conj().T)) > 1e-12 * max(1.0, np.max(np.abs(T))):
            raise ConfigError("field 'kinetic': matrix is not Hermitian")
        return T
    return random_hermitian_matrix(preset_rng(cfg.seed, STREAM_KINETIC), d, k.norm)


def build_interaction(cfg: ScenarioConfig) -> TwoBodyTensor:
    w, d = cfg.interaction, cfg.d
    if isinstance(w, InteractionZero):
        return TwoBodyTensor.zero(d)
    if isinstance(w, InteractionIdentity):
        # the compressed identity acts as c on symmetric pairs
        return symmetrize_tensor(identity_tensor(d, w.c))
    if isinstance(w, InteractionRandom):
        return random_two_body(preset_rng(cfg.seed, STREAM_INTERACTION), d, w.norm)
    arr = np.zeros((d, d, d, d), dtype=complex)
    for e in w.entries:
        arr[e.index] += complex(*e.value)
    if w.symmetrize:
        return symmetrize_tensor(arr)
    try:
        return TwoBodyTensor(arr)
    except ValueError as exc:
        raise ConfigError(f"field 'interaction.entries': {exc}") from None


def build_condensate(cfg: ScenarioConfig) -> np.ndarray:
    c, d = cfg.condensate, cfg.d
    if isinstance(c, CondensateBasis):
        phi = np.zeros(d, dtype=complex)
        phi[c.mode] = 1.0
        return phi
    if isinstance(c, CondensateRandom):
        return random_unit_vector(preset_rng(cfg.seed, STREAM_CONDENSATE), d)
    phi = np.array(c.real, dtype=complex)
    if c.imag is not None:
        phi = phi + 1j * np.array(c.imag, dtype=float)
    norm = np.linalg.norm(phi)
    if norm == 0:
        raise ConfigError("field 'condensate': vector is zero")
    if c.normalize:
        return phi / norm
    if abs(norm - 1.0) > 1e-10:
        raise ConfigError(f"field 'condensate': vector has norm {norm:.12g}; set normalize: true")
    return phi


def excitation_amplitudes(cfg: ScenarioConfig) -> list[tuple[tuple[int, ...], complex]]:
    """``(occupations over frame modes 1..d-1, amplitude)`` pairs of the initial excitations."""
    x = cfg.excitations
    if isinstance(x, PureCondensate):
        return [((0,) * (cfg.d - 1), 1.0 + 0j)]
    if isinstance(x, SingleExcitation):
        occ = [0] * (cfg.d - 1)
        occ[x.mode - 1] = 1
        return [(tuple(occ), 1.0 + 0j)]
    pairs = [(tuple(comp.occupations), complex(*comp.amplitude)) for comp in x.components]
    total = math.sqrt(sum(abs(a) ** 2 for _, a in pairs))
    if total == 0:
        raise ConfigError("field 'excitations.components': all amplitudes vanish")
    if x.normalize:
        return [(o, a / total) for o, a in pairs]
    if abs(total - 1.0) > 1e-10:
        raise ConfigError(f"field 'excitations.components': amplitudes have norm {total:.12g}; "
                          "set normalize: true")
    return pairs
