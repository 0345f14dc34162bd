"""Refinement studies: observed orders of the discrete operators and of the time loop.

Each study returns a :class:`Study` with the per-level errors and the observed
orders between consecutive levels (log2 of the error ratio, since the grid or
the step is halved each level).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .elliptic import (
    PhysParams,
    SpeciesSpec,
    blocking_normalization,
    boundary_face_values,
    solve_poisson,
    solve_poisson_boltzmann,
)
from .energetics import diagnostics, projected_force
from .flow import flow_dt, kinetic_energy, step_ns
from .grid import Grid
from .scenario import RunConfig, build_equilibrium, make_problem, perturbed_initial_data
from .simulate import StepOptions, coupled_step, step_limit
from .transport import State


@dataclass
class Study:
    name: str
    sizes: list
    errors: list
    kind: str = "space"
    threshold: float | None = None
    extra: dict = field(default_factory=dict)

    @property
    def orders(self):
        return [math.log2(a / b) if a > 0 and b > 0 else math.inf for a, b in zip(self.errors, self.errors[1:])]

    @property
    def order(self):
        return min(self.orders) if self.orders else math.nan

    @property
    def passed(self):
        return self.threshold is None or self.order >= self.threshold

    def to_json(self):
        return {
            "name": self.name, "kind": self.kind, "sizes": self.sizes, "errors": self.errors,
            "orders": self.orders, "order": self.order, "threshold": self.threshold, "passed": self.passed,
            **self.extra,
        }


def _levels(levels, base):
    if levels < 2:
        raise ValueError("a refinement study needs at least two levels")
    return [base * 2**k for k in range(levels)]


def _dirichlet_data(grid, fn):
    return {k: fn(*grid.boundary_centers(k)) for k in grid.face_keys()}


def poisson_study(levels=3, base=16, epsilon=1.0):
    """-εΔφ = f with φ = sin(πx) sin(2πy) + x y² (nonzero wall data)."""

    def exact(x, y):
        return np.sin(np.pi * x) * np.sin(2 * np.pi * y) + x * y**2

    def rhs(x, y):
        return epsilon * (5 * np.pi**2 * np.sin(np.pi * x) * np.sin(2 * np.pi * y) - 2 * x)

    errs = []
    ns = _levels(levels, base)
    for n in ns:
        g = Grid.box((n, n))
        X, Y = g.centers()
        phi = solve_poisson(rhs(X, Y), _dirichlet_data(g, exact), epsilon, g, rtol=1e-13)
        errs.append(float(np.max(np.abs(phi - exact(X, Y)))))
    return Study("poisson", ns, errs, threshold=1.8)


PB_AMPLITUDE = 0.5


def pb_exact(x, y):
    return PB_AMPLITUDE * np.sin(np.pi * x) * np.sin(np.pi * y) + 0.25 * x


def pb_problem(n, epsilon=0.1):
    """Manufactured PB problem on an n×n grid: (params, grid, w, Z, source, exact)."""
    g = Grid.box((n, n))
    params = PhysParams(epsilon, 1.0, 1.0, [SpeciesSpec(1, 1.0), SpeciesSpec(-1, 1.0)])
    X, Y = g.centers()
    ex = pb_exact(X, Y)
    lap = -2 * np.pi**2 * PB_AMPLITUDE * np.sin(np.pi * X) * np.sin(np.pi * Y)
    charge = np.exp(-ex) - np.exp(ex)
    source = -epsilon * lap - charge
    return params, g, _dirichlet_data(g, pb_exact), np.ones(2), source, ex


def pb_study(levels=3, base=16, epsilon=0.1):
    errs, its, monotone = [], [], True
    ns = _levels(levels, base)
    for n in ns:
        params, g, w, Z, src, ex = pb_problem(n, epsilon)
        eq = solve_poisson_boltzmann(params, g, w, Z, source=src, tol=1e-12)
        errs.append(float(np.max(np.abs(eq.phi - ex))))
        its.append(eq.newton_iterations)
        r = [h[0] for h in eq.newton_history]
        monotone &= all(b < a for a, b in zip(r, r[1:]))
    return Study("poisson_boltzmann", ns, errs, threshold=1.8, extra={"newton_iterations": its, "monotone_residuals": monotone})


def _neutral_params(epsilon=0.1, nu=1.0, D=1.0):
    return PhysParams(epsilon, nu, 1.0, [SpeciesSpec(1, D), SpeciesSpec(-1, D)])


def diffusion_decay_study(levels=3, base=16, D=1.0, t_end=0.02):
    """Both species carry the same cos(πx) perturbation, so Φ stays 0 and each decays at Dπ²."""
    errs = []
    ns = _levels(levels, base)
    rate = D * np.pi**2
    for n in ns:
        g = Grid.box((n, n))
        params = _neutral_params(D=D)
        eq = blocking_normalization([np.ones(g.shape)] * 2, params, g, 0.0)
        X, _ = g.centers()
        c = [1 + 1e-3 * np.cos(np.pi * X) for _ in range(2)]
        st = State(0.0, c, g.zero_faces(), np.zeros(g.shape))
        opts = StepOptions(flow=False)
        dt = 0.5 * step_limit(st, eq, params, g, opts)
        steps = int(math.ceil(t_end / dt))
        dt = t_end / steps
        a0 = float(np.sum((st.c[0] - 1) * np.cos(np.pi * X)))
        for _ in range(steps):
            st, _ = coupled_step(st, eq, params, g, dt, opts, check_dt=False)
        a1 = float(np.sum((st.c[0] - 1) * np.cos(np.pi * X)))
        measured = -math.log(a1 / a0) / t_end
        errs.append(abs(measured - rate) / rate)
    return Study("diffusion_decay", ns, errs)


def stokes_mode(grid, amplitude=1.0):
    """u_x = sin(π y) on a grid periodic in x with walls in y; an exact discrete mode."""
    y = grid.axis_centers(1)
    shape = [1] * grid.dim
    shape[1] = -1
    ux = np.broadcast_to(amplitude * np.sin(np.pi * y).reshape(shape), grid.face_shape(0)).copy()
    rest = tuple(np.zeros(grid.face_shape(a)) for a in range(1, grid.dim))
    return (ux,) + rest


def stokes_decay(n, nu=1.0, t_end=0.02, safety=0.5, record_divergence=False):
    """Measured decay rate of the sin(πy) shear mode and the largest post-projection divergence."""
    g = Grid.box((n, n), periodic=(True, False))
    params = _neutral_params(nu=nu)
    st = State(0.0, [np.ones(g.shape)] * 2, stokes_mode(g), np.zeros(g.shape))
    dt = safety * flow_dt(st.u, params, g)
    steps = int(math.ceil(t_end / dt))
    dt = t_end / steps
    k0 = kinetic_energy(st.u, params, g)
    max_div = 0.0
    for _ in range(steps):
        st, rep = step_ns(st, params, g, dt, force=False)
        max_div = max(max_div, rep.divergence_residual)
    k1 = kinetic_energy(st.u, params, g)
    return -math.log(k1 / k0) / (2 * t_end), max_div


def stokes_decay_study(levels=3, base=16, nu=1.0):
    errs = []
    ns = _levels(levels, base)
    for n in ns:
        rate, _ = stokes_decay(n, nu)
        errs.append(abs(rate - nu * np.pi**2) / (nu * np.pi**2))
    return Study("stokes_decay", ns, errs)


def default_budget_config(cells=32, epsilon=0.1):
    return RunConfig.from_dict(
        {
            "schema": 1,
            "grid": {"cells": [cells, cells]},
            "physics": {"epsilon": epsilon, "nu": 0.5, "kbt": 1.0},
            "boundary_potential": {"kind": "linear", "value": -0.5, "gradient": [1.0, 0.0]},
            "species": [
                {"valence": 1, "diffusivity": 1.0, "bulk": 1.0},
                {"valence": -1, "diffusivity": 0.7, "bulk": 0.5},
            ],
            "initial": {"amplitude": 1e-2, "shape": "trig", "mode": [1, 2], "velocity_amplitude": 1e-2},
        }
    )


def budget_residuals(config, dt, t_end):
    """Per-step |Δtotal/Δt + D + (ν/kT)‖∇u‖²| along a fixed-dt run from the configured data."""
    pb = make_problem(config)
    eq = build_equilibrium(config, pb)
    st = perturbed_initial_data(eq, config, pb)
    opts = config.step_options()
    p, g = pb.params, pb.grid
    steps = int(round(t_end / dt))
    out = []
    rec = diagnostics(st, eq, p, g)
    for _ in range(steps):
        st, _ = coupled_step(st, eq, p, g, dt, opts)
        new = diagnostics(st, eq, p, g)
        out.append(abs((new.total - rec.total) / dt + rec.dissipation_D + p.nu / p.kbt * rec.grad_u_sq))
        rec = new
    return out


def budget_study(levels=3, config=None, t_end=None, safety=0.8):
    """Temporal order of the energy-budget residual across dt, dt/2, dt/4, ..."""
    config = config or default_budget_config()
    pb = make_problem(config)
    eq = build_equilibrium(config, pb)
    st = perturbed_initial_data(eq, config, pb)
    dt0 = safety * step_limit(st, eq, pb.params, pb.grid, config.step_options())
    t_end = t_end or 8 * dt0
    dts = [dt0 / 2**k for k in range(levels)]
    errs = [max(budget_residuals(config, dt, t_end)) for dt in dts]
    return Study("dissipation_budget", dts, errs, kind="time", threshold=0.9)


def projected_force_study(levels=3, base=16, epsilon=0.5):
    """‖𝕡(ρ* grad Φ*)‖₂ at a non-uniform blocking equilibrium under refinement.

    With thin Debye layers (ε = 0.1) the 16→32 pair is still pre-asymptotic
    (observed order ≈ 1.74), hence the thicker default layer.
    """
    errs = []
    ns = _levels(levels, base)
    for n in ns:
        cfg = default_budget_config(n, epsilon)
        pb = make_problem(cfg)
        eq = build_equilibrium(cfg, pb)
        st = State(0.0, eq.c, pb.grid.zero_faces(), eq.phi)
        errs.append(projected_force(st, pb.params, pb.grid))
    return Study("projected_force", ns, errs, threshold=1.8)


def selective_config(cells=32):
    """Both species selective on parts of the x-walls; W linear in x, γ matched to W."""
    return RunConfig.from_dict(
        {
            "schema": 1,
            "grid": {"cells": [cells, cells]},
            "physics": {"epsilon": 0.1, "nu": 0.5, "kbt": 1.0},
            "boundary_potential": {"kind": "linear", "value": 0.0, "gradient": [1.0, 0.0]},
            "species": [
                {"valence": 1, "diffusivity": 1.0, "bc": "selective",
                 "gamma": [{"face": "x-", "value": 1.0, "lower": [0.25], "upper": [0.75]}]},
                {"valence": -1, "diffusivity": 0.8, "bc": "selective",
                 "gamma": [{"face": "x-", "value": 1.0}, {"face": "x+", "value": float(np.e)}]},
            ],
            "initial": {"amplitude": 1e-2, "velocity_amplitude": 1e-2},
        }
    )


def selective_trace_study(levels=3, base=16):
    """Extrapolated equilibrium concentration on S_i versus γ_i."""
    errs = []
    ns = _levels(levels, base)
    for n in ns:
        cfg = selective_config(n)
        pb = make_problem(cfg)
        eq = build_equilibrium(cfg, pb)
        worst = 0.0
        for i, s in enumerate(pb.params.species):
            for key, gam in s.gamma.items():
                mask = np.isfinite(gam)
                trace = boundary_face_values(pb.grid, eq.c[i], key)
                worst = max(worst, float(np.max(np.abs(trace[mask] - gam[mask]))))
        errs.append(worst)
    return Study("selective_trace", ns, errs, threshold=1.8)


STUDIES = {
    "poisson": poisson_study,
    "poisson_boltzmann": pb_study,
    "diffusion_decay": diffusion_decay_study,
    "stokes_decay": stokes_decay_study,
    "projected_force": projected_force_study,
    "selective_trace": selective_trace_study,
}


def run_all(levels=3, config=None):
    out = [fn(levels) for fn in STUDIES.values()]
    out.append(budget_study(levels, config))
    return out
