"""Experiment configuration: schema, parsing and validation.

Configs are TOML (or JSON) documents with four sections::

    [system]      model, N, J, h, boundary, custom_terms, max_sites
    [noise]       variant, delta_prime, gamma, seed, mode, antithetic
    [propagator]  method, tol, max_krylov_dim, dt
    [experiment]  kind, t_max, n_times, times, observable, initial_state,
                  n_realizations, sweep_axis, sweep_values, tail_points

Unknown keys are rejected. Real-valued parameters accept ``"0.2*pi"``
style strings. ``gamma`` accepts ``"inf"``.
"""

from __future__ import annotations

import json
import logging
import math
import os
import re
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, ResourceCeilingError
from .hamiltonian import DEFAULT_MAX_SITES, build_custom, build_heisenberg_chain, LatticeSpec
from .noise import ChiDeformation
from .pauli import DENSE_CEILING, LocalOperator, parse_operator
from .propagator import PropagatorConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

__all__ = [
    "SystemConfig",
    "NoiseConfig",
    "ExperimentSection",
    "ExperimentConfig",
    "KINDS",
    "SWEEP_AXES",
    "parse_real",
    "load_config",
    "config_from_dict",
    "config_to_dict",
    "resolve_observable",
    "ENV_PREFIX",
    "MEMORY_LIMIT_BYTES",
]

KINDS = ("trace", "sweep_N", "sweep_delta", "sweep_R", "sweep_t", "tail", "fg", "fidelity_scaling")
SWEEP_AXES = ("N", "delta", "R", "t")
_KIND_AXIS = {"sweep_N": "N", "sweep_delta": "delta", "sweep_R": "R", "sweep_t": "t", "fidelity_scaling": "N"}
ENV_PREFIX = "SIMV_"
#: Ceiling on the stored reference trajectory per sweep point.
MEMORY_LIMIT_BYTES = 2 * 1024**3
DEFAULT_REALIZATIONS = 200
DEFAULT_TAIL_REALIZATIONS = 2000
#: Flag threshold for sqrt(N) t delta.
SMALL_NOISE_LIMIT = 0.5

_PI = re.compile(r"^\s*([-+]?)\s*((?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)?\s*\*?\s*pi\s*(?:/\s*(\d+\.?\d*))?\s*$")


def parse_real(value) -> float:
    """Float from a number or a string such as ``"2*pi"``, ``"pi/2"`` or ``"inf"``."""
    if isinstance(value, bool):
        raise ConfigError(f"expected a real number, got {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        text = value.strip().lower()
        m = _PI.match(text)
        if m:
            sign = -1.0 if m.group(1) == "-" else 1.0
            coef = float(m.group(2)) if m.group(2) else 1.0
            div = float(m.group(3)) if m.group(3) else 1.0
            return sign * coef * math.pi / div
        try:
            return float(text)
        except ValueError:
            pass
    raise ConfigError(f"cannot interpret {value!r} as a real number")


@dataclass(frozen=True)
class SystemConfig:
    model: str = "heisenberg_chain"
    N: int = 8
    J: float = 0.2 * math.pi
    h: float = 2 * math.pi
    boundary: str = "open"
    custom_terms: tuple[str, ...] = ()
    max_sites: int = DEFAULT_MAX_SITES

    def build(self, N: int | None = None):
        """Return (HamiltonianSpec, PerturbationSet) for this system, optionally resized."""
        N = self.N if N is None else int(N)
        if self.model == "heisenberg_chain":
            if N < 2:
                raise ConfigError(f"system.N must be >= 2 for heisenberg_chain, got {N}")
            if N > self.max_sites:
                raise ResourceCeilingError(f"N = {N} exceeds system.max_sites = {self.max_sites}")
            return build_heisenberg_chain(N, self.J, self.h, self.boundary)
        lattice = LatticeSpec(N, 1, self.boundary, self.max_sites)
        return build_custom(lattice, self.custom_terms)


@dataclass(frozen=True)
class NoiseConfig:
    variant: str = "raw"
    delta_prime: float = 0.01
    gamma: float = math.inf
    seed: int = 0
    mode: str = "random"
    antithetic: bool = False

    def deformation(self, delta_prime: float | None = None) -> ChiDeformation:
        scale = self.delta_prime if delta_prime is None else delta_prime
        return ChiDeformation(self.variant, scale, self.gamma)

    @property
    def modes(self) -> tuple[str, ...]:
        return ("symmetric", "random") if self.mode == "both" else (self.mode,)


@dataclass(frozen=True)
class ExperimentSection:
    kind: str = "trace"
    t_max: float = 5.0
    n_times: int = 400
    times: tuple[float, ...] = ()
    observable: str = "Y1"
    initial_state: str = "zeros"
    n_realizations: int | None = None  # 2000 for tail experiments, 200 otherwise
    sweep_axis: str = ""
    sweep_values: tuple[float, ...] = ()
    tail_points: int = 40


@dataclass(frozen=True)
class ExperimentConfig:
    system: SystemConfig = field(default_factory=SystemConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    propagator: PropagatorConfig = field(default_factory=PropagatorConfig)
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    warnings: tuple[str, ...] = field(default=(), compare=False)

    @property
    def base_seed(self) -> int:
        return self.noise.seed

    @property
    def n_realizations(self) -> int:
        n = self.experiment.n_realizations
        if n is None:
            return DEFAULT_TAIL_REALIZATIONS if self.kind == "tail" else DEFAULT_REALIZATIONS
        return n

    @property
    def kind(self) -> str:
        return self.experiment.kind

    @property
    def sweep_axis(self) -> str:
        return self.experiment.sweep_axis or _KIND_AXIS.get(self.kind, "")

    def time_grid(self) -> np.ndarray:
        ex = self.experiment
        if ex.times:
            return np.asarray(ex.times, dtype=float)
        return np.linspace(0.0, ex.t_max, ex.n_times)

    def with_updates(self, section: str, **changes) -> "ExperimentConfig":
        return validate(replace(self, **{section: replace(getattr(self, section), **changes)}))


def resolve_observable(spec: str, N: int) -> LocalOperator:
    """Observable for an N-site system.

    ``sum:P`` is sum_i P_i and ``mean:P`` is (1/N) sum_i P_i; anything else
    is operator notation.
    """
    m = re.match(r"^(sum|mean):([XYZ])$", spec.strip())
    if m:
        kind, letter = m.groups()
        op = sum((LocalOperator.pauli(letter, i) for i in range(N)), LocalOperator())
        return op * (1.0 / N) if kind == "mean" else op
    op = parse_operator(spec)
    if op.max_site >= N:
        raise ConfigError(f"observable {spec!r} acts on site {op.max_site} outside 0..{N - 1}")
    if not op.has_real_coefficients:
        raise ConfigError(f"observable {spec!r} must be hermitian (real coefficients)")
    return op


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

_SECTIONS = {
    "system": SystemConfig,
    "noise": NoiseConfig,
    "propagator": PropagatorConfig,
    "experiment": ExperimentSection,
}
_REAL_KEYS = {"J", "h", "delta_prime", "gamma", "tol", "dt", "t_max"}
_INT_KEYS = {"N", "seed", "max_krylov_dim", "n_times", "n_realizations", "max_sites", "tail_points"}
_BOOL_KEYS = {"antithetic"}


def _coerce(section: str, key: str, value):
    try:
        if key in _REAL_KEYS:
            if value is None:
                return None
            return parse_real(value)
        if key in _INT_KEYS:
            if value is None and key == "n_realizations":
                return None
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ConfigError(f"{section}.{key} must be an integer")
            return int(value)
        if key in _BOOL_KEYS:
            if isinstance(value, str):
                if value.lower() in ("1", "true", "yes"):
                    return True
                if value.lower() in ("0", "false", "no"):
                    return False
                raise ConfigError(f"{section}.{key} must be a boolean")
            return bool(value)
        if key in ("times", "sweep_values"):
            if isinstance(value, str):
                value = [v for v in value.split(",") if v.strip()]
            return tuple(parse_real(v) for v in value)
        if key == "custom_terms":
            if isinstance(value, str):
                value = [value]
            return tuple(str(v) for v in value)
        return str(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}.{key}: {exc}") from None


def config_from_dict(doc: dict) -> ExperimentConfig:
    unknown = set(doc) - set(_SECTIONS) - {"warnings"}
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")
    parts = {}
    for name, cls in _SECTIONS.items():
        raw = doc.get(name, {}) or {}
        if not isinstance(raw, dict):
            raise ConfigError(f"section {name!r} must be a table")
        allowed = {f.name for f in fields(cls)}
        bad = set(raw) - allowed
        if bad:
            raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(sorted(bad))}")
        try:
            parts[name] = cls(**{k: _coerce(name, k, v) for k, v in raw.items()})
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{name}]: {exc}") from None
    return validate(ExperimentConfig(**parts))


def _jsonable(value):
    if isinstance(value, float) and math.isinf(value):
        return "inf" if value > 0 else "-inf"
    if isinstance(value, tuple):
        return [_jsonable(v) for v in value]
    return value


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """Plain-data echo of a config; re-parses to an equal config."""
    return {
        name: {k: _jsonable(v) for k, v in asdict(getattr(cfg, name)).items()}
        for name in _SECTIONS
    }


def _apply_env(doc: dict, environ) -> dict:
    """Apply ``SIMV_<SECTION>__<KEY>=value`` overrides."""
    doc = {k: dict(v) for k, v in doc.items()}
    for name, value in environ.items():
        if not name.startswith(ENV_PREFIX) or "__" not in name:
            continue
        section, _, key = name[len(ENV_PREFIX):].partition("__")
        section = section.lower()
        if section not in _SECTIONS:
            raise ConfigError(f"environment override {name} names unknown section {section!r}")
        keys = {f.name.lower(): f.name for f in fields(_SECTIONS[section])}
        if key.lower() not in keys:
            raise ConfigError(f"environment override {name} names unknown key {key!r}")
        doc.setdefault(section, {})[keys[key.lower()]] = value
    return doc


def load_config(path, environ=None) -> ExperimentConfig:
    """Read a TOML or JSON config file, applying environment overrides."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        if path.suffix == ".json":
            doc = json.loads(text)
        else:
            doc = tomllib.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from None
    doc = _apply_env(doc, os.environ if environ is None else environ)
    return config_from_dict(doc)


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


def _sweep_sizes(cfg: ExperimentConfig) -> list[int]:
    if cfg.sweep_axis == "N":
        return [int(v) for v in cfg.experiment.sweep_values]
    return [cfg.system.N]


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    """Check invariants, raise on violations and attach soft warnings."""
    ex, sysc, noise = cfg.experiment, cfg.system, cfg.noise
    if ex.kind not in KINDS:
        raise ConfigError(f"experiment.kind must be one of {KINDS}, got {ex.kind!r}")
    if sysc.model not in ("heisenberg_chain", "custom"):
        raise ConfigError(f"system.model must be heisenberg_chain or custom, got {sysc.model!r}")
    if sysc.model == "custom" and not sysc.custom_terms:
        raise ConfigError("system.custom_terms is required for the custom model")
    if sysc.model == "heisenberg_chain" and sysc.N < 2:
        raise ConfigError(f"system.N must be >= 2 for heisenberg_chain, got {sysc.N}")
    if sysc.boundary not in ("open", "periodic"):
        raise ConfigError(f"system.boundary must be open or periodic, got {sysc.boundary!r}")
    if noise.mode not in ("random", "symmetric", "both"):
        raise ConfigError(f"noise.mode must be random, symmetric or both, got {noise.mode!r}")
    noise.deformation()  # validates variant / scale / gamma
    if ex.n_realizations is not None and ex.n_realizations < 1:
        raise ConfigError("experiment.n_realizations must be >= 1")
    if ex.n_times < 1 and not ex.times:
        raise ConfigError("experiment.n_times must be >= 1")
    if ex.t_max < 0:
        raise ConfigError("experiment.t_max must be non-negative")
    axis = cfg.sweep_axis
    if axis and axis not in SWEEP_AXES:
        raise ConfigError(f"experiment.sweep_axis must be one of {SWEEP_AXES}")
    if axis and len(ex.sweep_values) < 1:
        raise ConfigError(f"experiment.sweep_values required for a sweep over {axis}")
    vals = ex.sweep_values
    if any(b <= a for a, b in zip(vals, vals[1:])):
        raise ConfigError("experiment.sweep_values must be strictly increasing")
    if axis == "N" and any(float(v) != int(v) for v in vals):
        raise ConfigError("N sweep values must be integers")
    if ex.initial_state != "zeros" and set(ex.initial_state) - {"0", "1"}:
        raise ConfigError("experiment.initial_state must be 'zeros' or a bit string")

    sizes = _sweep_sizes(cfg)
    for N in sizes:
        if N > sysc.max_sites:
            raise ResourceCeilingError(f"N = {N} exceeds system.max_sites = {sysc.max_sites}")
        if N < 2 and sysc.model == "heisenberg_chain":
            raise ConfigError(f"N must be >= 2 for heisenberg_chain, got N = {N}")
        resolve_observable(ex.observable, N)
        if ex.initial_state != "zeros" and len(ex.initial_state) != N:
            raise ConfigError(f"initial_state has {len(ex.initial_state)} bits but N = {N}")
        if sysc.model == "custom":
            for text in sysc.custom_terms:
                if parse_operator(text).max_site >= N:
                    raise ConfigError(f"custom term {text!r} acts outside the {N}-site lattice")
        dim = 2**N
        n_t = len(cfg.time_grid()) if axis != "t" else len(vals)
        if n_t * dim * 16 > MEMORY_LIMIT_BYTES:
            raise ResourceCeilingError(f"time grid of {n_t} points at N = {N} exceeds the trajectory memory limit")
        if ex.kind in ("fg", "sweep_R") and dim > DENSE_CEILING:
            raise ResourceCeilingError(f"experiment kind {ex.kind} needs dimension <= {DENSE_CEILING}, got 2^{N}")
    if axis == "R" and "random" in noise.modes and not noise.deformation().bounded:
        raise ConfigError("light-cone experiments need bounded noise (finite gamma); use uniform or truncated")

    warnings = []
    deltas = [v for v in vals] if axis == "delta" else [noise.delta_prime]
    slope = max(cfg.noise.deformation(d).slope_bound for d in deltas)
    t_top = max(vals) if axis == "t" else float(np.max(cfg.time_grid(), initial=0.0))
    small = math.sqrt(max(sizes)) * t_top * slope
    if small > SMALL_NOISE_LIMIT:
        msg = f"sqrt(N) t delta = {small:.3g} exceeds {SMALL_NOISE_LIMIT}; outside the small-noise regime"
        log.warning(msg)
        warnings.append(msg)
    return replace(cfg, warnings=tuple(warnings))
