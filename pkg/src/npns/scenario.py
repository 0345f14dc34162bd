"""Run configurations and the initial data built from them.

A configuration is one JSON document with ``"schema": 1``.  Unknown keys are
rejected, and every numeric rule is checked before any solver runs, so a bad
file fails fast with a message naming the offending field.
"""
from __future__ import annotations

import json
import math
import typing
from dataclasses import MISSING, asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

import numpy as np

from .elliptic import (
    PhysParams,
    SpeciesSpec,
    as_boundary,
    blocking_normalization,
    selective_normalization,
    solve_poisson_boltzmann,
)
from .errors import ConfigError, DomainError
from .flow import stream_velocity
from .grid import AXES, Grid, integrate
from .simulate import StepOptions
from .transport import State, refresh_potential

SCHEMA = 1
SHAPES = ("trig", "bump", "random")


@dataclass
class GridConfig:
    dim: int = 2
    cells: list = field(default_factory=lambda: [32, 32])
    extents: list = field(default_factory=lambda: [1.0, 1.0])


@dataclass
class PhysicsConfig:
    epsilon: float = 0.1
    nu: float = 1.0
    kbt: float = 1.0


@dataclass
class GammaPatch:
    """γ on one wall, optionally restricted to a box of tangential coordinates."""

    face: str
    value: float
    lower: list | None = None
    upper: list | None = None


@dataclass
class SpeciesConfig:
    valence: float
    diffusivity: float
    bc: str = "blocking"
    bulk: float = 1.0
    gamma: list = field(default_factory=list)
    name: str = ""


@dataclass
class PotentialConfig:
    """Boundary potential W: ``constant`` (value), ``linear`` (offset + gradient·x) or ``table``."""

    kind: str = "constant"
    value: float = 0.0
    gradient: list | None = None
    faces: dict | None = None


@dataclass
class InitialConfig:
    amplitude: float = 1e-3
    shape: str = "trig"
    mode: list | None = None
    velocity_amplitude: float = 0.0
    velocity_mode: list | None = None


@dataclass
class TimeConfig:
    t_end: float = 0.1
    dt: float | None = None
    snapshot_every: float | None = None
    diagnostics_every: int = 1
    max_steps: int | None = None


@dataclass
class FlowConfig:
    enabled: bool = True
    advection: bool = True
    scheme: str = "central"
    ion_advection: str = "logmean"


@dataclass
class RunConfig:
    schema: int
    grid: GridConfig = field(default_factory=GridConfig)
    physics: PhysicsConfig = field(default_factory=PhysicsConfig)
    species: list = field(default_factory=list)
    boundary_potential: PotentialConfig = field(default_factory=PotentialConfig)
    initial: InitialConfig = field(default_factory=InitialConfig)
    time: TimeConfig = field(default_factory=TimeConfig)
    flow: FlowConfig = field(default_factory=FlowConfig)
    C_tilde: float = 1.0
    ck_constant: float = 2.0
    seed: int = 0

    # ------------------------------------------------------------ I/O

    @classmethod
    def from_dict(cls, data):
        cfg = _build(cls, data, "config")
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path):
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc
        return cls.from_dict(data)

    def to_dict(self):
        return asdict(self)

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)

    # ------------------------------------------------------------ checks

    def validate(self):
        if self.schema != SCHEMA:
            raise ConfigError(f"schema: expected {SCHEMA}, got {self.schema!r}")
        g = self.grid
        if g.dim not in (2, 3):
            raise ConfigError(f"grid.dim must be 2 or 3, got {g.dim}")
        if len(g.cells) != g.dim or len(g.extents) != g.dim:
            raise ConfigError("grid.cells and grid.extents need one entry per dimension")
        if any(int(n) != n or n < 3 for n in g.cells):
            raise ConfigError(f"grid.cells must be integers >= 3, got {g.cells}")
        _positive("grid.extents", *g.extents)
        for name in ("epsilon", "nu", "kbt"):
            _positive(f"physics.{name}", getattr(self.physics, name))
        if not self.species:
            raise ConfigError("species: at least two species are required")
        for k, s in enumerate(self.species):
            where = f"species[{k}]"
            _positive(f"{where}.diffusivity", s.diffusivity)
            if s.valence == 0:
                raise ConfigError(f"{where}.valence must be nonzero")
            if s.bc not in ("blocking", "selective"):
                raise ConfigError(f"{where}.bc must be 'blocking' or 'selective', got {s.bc!r}")
            if s.bc == "blocking":
                _positive(f"{where}.bulk", s.bulk)
                if s.gamma:
                    raise ConfigError(f"{where}.gamma given for a blocking species")
            elif not s.gamma:
                raise ConfigError(f"{where}.gamma is required for a selective species")
            for j, patch in enumerate(s.gamma):
                if patch.face not in [AXES[a] + side for a in range(g.dim) for side in "-+"]:
                    raise ConfigError(f"{where}.gamma[{j}].face: unknown face {patch.face!r}")
                _positive(f"{where}.gamma[{j}].value", patch.value)
        z = [s.valence for s in self.species]
        if not (min(z) < 0 < max(z)):
            raise ConfigError("species: need at least one positive and one negative valence")
        seen = False
        for s in self.species:
            seen |= s.bc == "blocking"
            if s.bc == "selective" and seen:
                raise ConfigError("species: list selective species before blocking ones")
        bp = self.boundary_potential
        if bp.kind not in ("constant", "linear", "table"):
            raise ConfigError(f"boundary_potential.kind: unknown {bp.kind!r}")
        if bp.kind == "linear" and (bp.gradient is None or len(bp.gradient) != g.dim):
            raise ConfigError("boundary_potential.gradient needs one entry per dimension")
        if bp.kind == "table" and not bp.faces:
            raise ConfigError("boundary_potential.faces is required for kind 'table'")
        ini = self.initial
        if not ini.amplitude >= 0:
            raise ConfigError(f"initial.amplitude must be >= 0, got {ini.amplitude}")
        if not ini.velocity_amplitude >= 0:
            raise ConfigError(f"initial.velocity_amplitude must be >= 0, got {ini.velocity_amplitude}")
        if ini.shape not in SHAPES:
            raise ConfigError(f"initial.shape must be one of {SHAPES}, got {ini.shape!r}")
        for name in ("mode", "velocity_mode"):
            m = getattr(ini, name)
            if m is not None and (len(m) != g.dim or any(int(v) != v or v < 1 for v in m)):
                raise ConfigError(f"initial.{name} needs {g.dim} positive integers")
        t = self.time
        _positive("time.t_end", t.t_end)
        if t.dt is not None:
            _positive("time.dt", t.dt)
        if t.snapshot_every is not None:
            _positive("time.snapshot_every", t.snapshot_every)
        if t.diagnostics_every < 1:
            raise ConfigError("time.diagnostics_every must be >= 1")
        if self.flow.scheme not in ("central", "upwind"):
            raise ConfigError(f"flow.scheme must be 'central' or 'upwind', got {self.flow.scheme!r}")
        if self.flow.ion_advection not in ("logmean", "upwind"):
            raise ConfigError(f"flow.ion_advection must be 'logmean' or 'upwind', got {self.flow.ion_advection!r}")
        _positive("C_tilde", self.C_tilde)
        _positive("ck_constant", self.ck_constant)

    # ------------------------------------------------------------ derived objects

    def make_grid(self):
        return Grid.box(tuple(int(n) for n in self.grid.cells), self.grid.extents)

    def make_params(self, grid=None):
        grid = grid or self.make_grid()
        species = []
        for k, s in enumerate(self.species):
            gamma = _gamma_arrays(grid, s.gamma) if s.bc == "selective" else None
            try:
                species.append(SpeciesSpec(s.valence, s.diffusivity, s.bc, gamma, s.name or f"s{k + 1}"))
            except DomainError as exc:
                raise ConfigError(f"species[{k}]: {exc}") from exc
        p = self.physics
        return PhysParams(p.epsilon, p.nu, p.kbt, species)

    def make_potential(self, grid):
        bp = self.boundary_potential
        if bp.kind == "constant":
            return as_boundary(grid, bp.value)
        if bp.kind == "linear":
            out = {}
            for key in grid.face_keys():
                xs = grid.boundary_centers(key)
                out[key] = bp.value + sum(gc * x for gc, x in zip(bp.gradient, xs))
            return out
        out = as_boundary(grid, 0.0)
        for key, v in bp.faces.items():
            if key not in out:
                raise ConfigError(f"boundary_potential.faces: unknown face {key!r}")
            try:
                out[key] = np.broadcast_to(np.asarray(v, dtype=float), grid.boundary_shape(key)).copy()
            except ValueError as exc:
                raise ConfigError(f"boundary_potential.faces[{key!r}]: shape mismatch") from exc
        return out

    def step_options(self):
        return StepOptions(
            flow=self.flow.enabled,
            np_advection=self.flow.ion_advection,
            ns_advection=self.flow.advection,
            ns_scheme=self.flow.scheme,
        )


def _positive(name, *vals):
    for v in vals:
        if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
            raise ConfigError(f"{name} must be a positive number, got {v!r}")


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected an object")
    names = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {', '.join(unknown)}")
    hints = typing.get_type_hints(cls)
    kwargs = {}
    for name, f in names.items():
        if name not in data:
            if f.default is MISSING and f.default_factory is MISSING:
                raise ConfigError(f"{path}.{name}: required")
            continue
        kwargs[name] = _coerce(hints[name], data[name], f"{path}.{name}", cls, name)
    return cls(**kwargs)


_NESTED = {
    (RunConfig, "species"): SpeciesConfig,
    (SpeciesConfig, "gamma"): GammaPatch,
}


def _coerce(hint, value, path, owner, name):
    if is_dataclass(hint):
        return _build(hint, value, path)
    inner = _NESTED.get((owner, name))
    if inner is not None:
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list")
        return [_build(inner, v, f"{path}[{k}]") for k, v in enumerate(value)]
    args = set(typing.get_args(hint)) or {hint}
    if value is None:
        if type(None) in args:
            return None
        raise ConfigError(f"{path}: must not be null")
    if bool in args:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false")
        return value
    if int in args and float not in args:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer")
        return value
    if float in args:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number")
        return float(value)
    if str in args:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string")
        return value
    if list in args:
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list")
        return value
    if dict in args:
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected an object")
        return value
    return value


def _gamma_arrays(grid, patches):
    out = {}
    for p in patches:
        a = AXES.index(p.face[0])
        coords = [x for b, x in enumerate(grid.boundary_centers(p.face)) if b != a]
        inside = np.ones(grid.boundary_shape(p.face), dtype=bool)
        for k, x in enumerate(coords):
            if p.lower is not None:
                inside &= x >= p.lower[k]
            if p.upper is not None:
                inside &= x <= p.upper[k]
        arr = out.setdefault(p.face, np.full(grid.boundary_shape(p.face), np.nan))
        arr[inside] = p.value
    return out


# ---------------------------------------------------------------- problem setup


@dataclass
class Problem:
    config: RunConfig
    grid: Grid
    params: PhysParams
    w: dict


def make_problem(config):
    grid = config.make_grid()
    return Problem(config, grid, config.make_params(grid), config.make_potential(grid))


def build_equilibrium(config, problem=None, **solver_kwargs):
    """Equilibrium for the configured boundary family.

    Blocking species get Z_i from their initial masses (bulk × volume);
    selective species get Z_i from the boundary data.  Mixed configurations
    solve the blocking fixed point with the selective Z_i held fixed.
    """
    pb = problem or make_problem(config)
    grid, params = pb.grid, pb.params
    selective = [i for i, s in enumerate(params.species) if s.bc == "selective"]
    if not selective:
        c0 = [np.full(grid.shape, s.bulk) for s in config.species]
        return blocking_normalization(c0, params, grid, pb.w, **solver_kwargs)
    z_sel = selective_normalization(params, grid, pb.w)
    fixed = {i: z_sel[i] for i in selective}
    if len(selective) == params.nspecies:
        return solve_poisson_boltzmann(params, grid, pb.w, np.array(z_sel), **solver_kwargs)
    c0 = [np.full(grid.shape, s.bulk) for s in config.species]
    return blocking_normalization(c0, params, grid, pb.w, fixed=fixed, **solver_kwargs)


def _unit_coords(grid):
    mesh = grid.centers()
    return [(m - o) / L for m, o, L in zip(mesh, grid.origin, grid.lengths)]


def perturbation_shape(grid, kind, index=0, mode=None, seed=0):
    """Smooth O(1) shape on the unit-scaled box (before mean removal)."""
    xs = _unit_coords(grid)
    if kind == "trig":
        mode = mode or [1] * grid.dim
        # shift modes per species so different species are not proportional
        out = np.ones(grid.shape)
        for a, (x, m) in enumerate(zip(xs, mode)):
            out = out * np.cos(np.pi * (m + (index if a == 0 else 0)) * x)
        return out
    if kind == "bump":
        centre = [0.35 + 0.3 * ((index + a) % 2) for a in range(grid.dim)]
        r2 = sum((x - x0) ** 2 for x, x0 in zip(xs, centre))
        return np.exp(-r2 / (2 * 0.12**2))
    rng = np.random.default_rng([seed, index])
    out = np.zeros(grid.shape)
    for _ in range(6):
        k = rng.integers(0, 4, size=grid.dim)
        phase = rng.uniform(0, 2 * np.pi, size=grid.dim)
        term = rng.standard_normal()
        for x, kk, ph in zip(xs, k, phase):
            term = term * np.cos(np.pi * kk * x + ph)
        out += term
    peak = np.max(np.abs(out))
    return out / peak if peak > 0 else out


def wall_factor(grid):
    """Product of sin(pi x_a) over walled axes: vanishes on every wall."""
    out = np.ones(grid.shape)
    for x in _unit_coords(grid):
        out = out * np.sin(np.pi * x)
    return out


def initial_velocity(grid, amplitude, mode=None):
    """No-slip, discretely divergence-free u0 with max |u0| = amplitude."""
    if amplitude == 0:
        return grid.zero_faces()
    mode = mode or [1] * grid.dim

    def psi(*X):
        out = 1.0
        for x, o, L, m in zip(X, grid.origin, grid.lengths, mode):
            s = (x - o) / L
            out = out * np.sin(np.pi * s) * np.sin(m * np.pi * s)
        return out

    u = stream_velocity(grid, psi)
    peak = max(float(np.max(np.abs(ua))) for ua in u)
    return tuple(ua * (amplitude / peak) for ua in u)


def perturbed_initial_data(equilibrium, config, problem=None):
    """c_i(0) = c_i* (1 + a φ_i) and u(0) = a_u curl ψ.

    For blocking species φ_i has zero c_i*-weighted mean, so the masses equal
    the equilibrium masses.  Selective species use shapes that vanish on the
    walls instead.  Negative values (large a) are clamped and the mass
    restored; a correction above 10% is refused.
    """
    pb = problem or make_problem(config)
    grid, params = pb.grid, pb.params
    ini = config.initial
    a = ini.amplitude
    if a < 0:
        raise DomainError("perturbation amplitude must be >= 0")
    c = []
    for i, (s, cs) in enumerate(zip(params.species, equilibrium.c)):
        phi_i = perturbation_shape(grid, ini.shape, i, ini.mode, config.seed)
        if s.bc == "blocking":
            phi_i = phi_i - integrate(cs * phi_i, grid) / integrate(cs, grid)
        else:
            phi_i = phi_i * wall_factor(grid)
        ci = cs * (1.0 + a * phi_i)
        if ci.min() < 0:
            target = integrate(cs * (1.0 + a * phi_i), grid)
            ci = np.maximum(ci, 0.0)
            got = integrate(ci, grid)
            if abs(got - target) > 0.1 * abs(target):
                raise DomainError(f"species {i + 1}: clamping changed the mass by more than 10% (amplitude too large)")
            ci = ci * (target / got)
        c.append(ci)
    u = initial_velocity(grid, ini.velocity_amplitude, ini.velocity_mode)
    phi = refresh_potential(c, params, grid, equilibrium.w)
    return State(0.0, c, u, phi)
