"""Run configuration: a JSON tree with a versioned schema, validated up front.

Sections and their defaults::

    schema      1 (required)
    grid        n_points=1024, length=80*pi
    integrator  dt=1e-3, frame_velocity=c0, midpoint_sweeps=3
    noise       mode_cutoff=N/4, multiplier="bessel_half"
    physics     c0=1, alpha=0.2, c_inf=2**-0.5
    experiment  kind (required) plus the fields of ExperimentSection
    output      directory="out", formats=["csv", "json"]

Every problem found is collected and reported in one :class:`ConfigError`.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Any, Optional

from .action import C_INF, fixed_frame_alpha_limit
from .experiments import ExperimentPlan
from .noise import MULTIPLIERS

SCHEMA_VERSION = 1
KINDS = ("simulate", "exit-scan", "action", "verify-control", "report")
FORMATS = ("csv", "json")


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("invalid configuration:\n  - " + "\n  - ".join(problems))
        self.problems = list(problems)


@dataclass(frozen=True)
class GridSection:
    n_points: int = 1024
    length: float = 80 * math.pi


@dataclass(frozen=True)
class IntegratorSection:
    dt: float = 1e-3
    frame_velocity: Optional[float] = None  # None: co-moving with c0
    midpoint_sweeps: int = 3


@dataclass(frozen=True)
class NoiseSection:
    mode_cutoff: Optional[int] = None  # None: N/4
    multiplier: str = "bessel_half"


@dataclass(frozen=True)
class PhysicsSection:
    c0: float = 1.0
    alpha: float = 0.2
    c_inf: float = C_INF


@dataclass(frozen=True)
class ExperimentSection:
    kind: str = ""
    exit_type: str = "fixed"
    epsilons: tuple = (0.02, 0.03, 0.05, 0.08)
    horizon: float = 5.0
    horizons: tuple = ()  # CDF / action T grid; empty means (horizon,)
    trials: int = 200
    master_seed: int = 0
    chunk_size: int = 50
    threads: int = 1
    epsilon: float = 0.0  # simulate: noise level of the single trajectory
    trial: int = 0  # simulate: trajectory index
    snapshot_every: int = 100  # simulate: steps between snapshots
    m_nodes: int = 128  # action / verify-control
    source: Optional[str] = None  # report: directory holding records.csv


@dataclass(frozen=True)
class OutputSection:
    directory: str = "out"
    formats: tuple = FORMATS


_SECTIONS = {
    "grid": GridSection,
    "integrator": IntegratorSection,
    "noise": NoiseSection,
    "physics": PhysicsSection,
    "experiment": ExperimentSection,
    "output": OutputSection,
}

_FLOAT_FIELDS = {"length", "dt", "frame_velocity", "c0", "alpha", "c_inf", "horizon", "epsilon"}
_INT_FIELDS = {"n_points", "midpoint_sweeps", "mode_cutoff", "trials", "master_seed", "chunk_size", "threads", "trial", "snapshot_every", "m_nodes"}
_FLOAT_LISTS = {"epsilons", "horizons"}
_OPTIONAL = {"frame_velocity", "mode_cutoff", "source"}
_MISSING = object()


@dataclass(frozen=True)
class RunConfig:
    schema: int
    grid: GridSection = field(default_factory=GridSection)
    integrator: IntegratorSection = field(default_factory=IntegratorSection)
    noise: NoiseSection = field(default_factory=NoiseSection)
    physics: PhysicsSection = field(default_factory=PhysicsSection)
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    output: OutputSection = field(default_factory=OutputSection)

    @property
    def kind(self) -> str:
        return self.experiment.kind

    @property
    def mode_cutoff(self) -> int:
        K = self.noise.mode_cutoff
        return self.grid.n_points // 4 if K is None else K

    @property
    def frame_velocity(self) -> float:
        v = self.integrator.frame_velocity
        return self.physics.c0 if v is None else v

    @property
    def horizons(self) -> tuple:
        return self.experiment.horizons or (self.experiment.horizon,)

    def to_plan(self) -> ExperimentPlan:
        e = self.experiment
        return ExperimentPlan(
            c0=self.physics.c0,
            alpha=self.physics.alpha,
            epsilons=e.epsilons,
            horizon=e.horizon,
            trials=e.trials,
            master_seed=e.master_seed,
            exit_type=e.exit_type,
            n_points=self.grid.n_points,
            length=self.grid.length,
            dt=self.integrator.dt,
            midpoint_sweeps=self.integrator.midpoint_sweeps,
            mode_cutoff=self.mode_cutoff,
            multiplier=self.noise.multiplier,
            chunk_size=e.chunk_size,
            threads=e.threads,
        )

    def to_dict(self) -> dict:
        """Fully resolved tree (defaults filled in), as echoed in manifests."""
        out: dict[str, Any] = {"schema": self.schema}
        for name in _SECTIONS:
            sec = dataclasses.asdict(getattr(self, name))
            out[name] = {k: list(v) if isinstance(v, tuple) else v for k, v in sec.items()}
        out["noise"]["mode_cutoff"] = self.mode_cutoff
        out["integrator"]["frame_velocity"] = self.frame_velocity
        return out

    def replace(self, **overrides) -> "RunConfig":
        """Copy with ``section__field=value`` overrides, re-validated."""
        tree = self.to_dict()
        for key, value in overrides.items():
            sec, name = key.split("__")
            tree[sec][name] = value
        return from_dict(tree)


def _coerce(name: str, value: Any, problems: list[str], where: str):
    def bad(what):
        problems.append(f"{where}.{name}: expected {what}, got {value!r}")
        return _MISSING

    if value is None:
        if name in _OPTIONAL:
            return None
        return bad("a value")
    if name in _FLOAT_FIELDS:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            return bad("a number")
        return float(value)
    if name in _INT_FIELDS:
        if isinstance(value, bool) or not isinstance(value, int):
            return bad("an integer")
        return value
    if name in _FLOAT_LISTS:
        if not isinstance(value, list) or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in value):
            return bad("a list of numbers")
        return tuple(float(v) for v in value)
    if name == "formats":
        if not isinstance(value, list) or any(v not in FORMATS for v in value):
            return bad(f"a list drawn from {list(FORMATS)}")
        return tuple(value)
    if not isinstance(value, str):
        return bad("a string")
    return value


def from_dict(tree: Any) -> RunConfig:
    problems: list[str] = []
    if not isinstance(tree, dict):
        raise ConfigError(["top level must be an object"])
    if "schema" not in tree:
        problems.append("missing required field 'schema'")
    elif tree["schema"] != SCHEMA_VERSION:
        problems.append(f"unsupported schema {tree['schema']!r} (this version reads schema {SCHEMA_VERSION})")
    for key in tree:
        if key != "schema" and key not in _SECTIONS:
            problems.append(f"unknown key '{key}'")

    sections = {}
    for name, cls in _SECTIONS.items():
        raw = tree.get(name, {})
        if not isinstance(raw, dict):
            problems.append(f"section '{name}' must be an object")
            raw = {}
        known = {f.name for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, value in raw.items():
            if key not in known:
                problems.append(f"unknown key '{name}.{key}'")
                continue
            v = _coerce(key, value, problems, name)
            if v is not _MISSING:
                kwargs[key] = v
        sections[name] = cls(**kwargs)

    cfg = RunConfig(schema=tree.get("schema", SCHEMA_VERSION), **sections)
    problems.extend(_cross_checks(cfg))
    if problems:
        raise ConfigError(problems)
    return cfg


def _cross_checks(cfg: RunConfig) -> list[str]:
    p: list[str] = []
    e, ph = cfg.experiment, cfg.physics
    n = cfg.grid.n_points
    if e.kind not in KINDS:
        p.append(f"experiment.kind must be one of {list(KINDS)}, got {e.kind!r}")
    if n < 8 or n & (n - 1):
        p.append(f"grid.n_points must be a power of two >= 8, got {n}")
    if not cfg.grid.length > 0:
        p.append("grid.length must be positive")
    K = cfg.mode_cutoff
    if K < 0:
        p.append("noise.mode_cutoff must be >= 0")
    elif 3 * K > n:
        p.append(f"noise.mode_cutoff K={K} violates K <= N/3 = {n / 3:.6g}")
    if cfg.noise.multiplier not in MULTIPLIERS:
        p.append(f"noise.multiplier must be one of {sorted(MULTIPLIERS)}")
    if not cfg.integrator.dt > 0:
        p.append("integrator.dt must be positive")
    if cfg.integrator.midpoint_sweeps < 1:
        p.append("integrator.midpoint_sweeps must be >= 1")
    if cfg.frame_velocity < 0:
        p.append("integrator.frame_velocity must be >= 0")
    if not ph.c0 > 0:
        p.append("physics.c0 must be positive")
    if not ph.alpha > 0:
        p.append("physics.alpha must be positive")
    if not ph.c_inf > 0:
        p.append("physics.c_inf must be positive")
    if e.trials < 1:
        p.append(f"experiment.trials must be >= 1, got {e.trials}")
    if e.chunk_size < 1:
        p.append("experiment.chunk_size must be >= 1")
    if e.threads < 1:
        p.append("experiment.threads must be >= 1")
    if not e.horizon > 0:
        p.append("experiment.horizon must be positive")
    if any(not t > 0 for t in e.horizons):
        p.append("experiment.horizons must be positive")
    if e.kind == "exit-scan" and any(t > e.horizon for t in e.horizons):
        p.append("experiment.horizons must not exceed experiment.horizon")
    if e.exit_type not in ("fixed", "modulated"):
        p.append(f"experiment.exit_type must be 'fixed' or 'modulated', got {e.exit_type!r}")
    if any(x < 0 for x in e.epsilons) or list(e.epsilons) != sorted(e.epsilons):
        p.append("experiment.epsilons must be non-negative and sorted")
    if e.epsilon < 0:
        p.append("experiment.epsilon must be >= 0")
    if e.snapshot_every < 1:
        p.append("experiment.snapshot_every must be >= 1")
    if e.m_nodes < 16:
        p.append("experiment.m_nodes must be >= 16")
    if e.kind == "action" and ph.c0 > 0 and ph.c_inf > 0:
        if ph.alpha >= fixed_frame_alpha_limit(ph.c0, ph.c_inf):
            p.append("physics.alpha must be below 3 c0 / (4 c_inf) for the fixed-frame bound")
        if any(t < 1 for t in cfg.horizons):
            p.append("experiment.horizons must be >= 1 for the fixed-frame bound")
    if e.kind == "exit-scan" and not p:
        try:
            cfg.to_plan()
        except ValueError as exc:
            p.append(str(exc))
    return p


def parse_config(text: str) -> RunConfig:
    """Parse and validate a JSON configuration document."""
    try:
        tree = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"not valid JSON: {exc}"]) from None
    return from_dict(tree)


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())

