"""Coupled time loop: Nernst-Planck rates and the momentum update from the same state."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .elliptic import dirichlet_solver
from .energetics import diagnostics, energy
from .errors import CFLViolation, InvariantViolation, NegativeConcentrationError
from .flow import flow_dt, kinetic_energy, step_ns
from .transport import np_rates, refresh_potential, stable_dt

log = logging.getLogger(__name__)

MONOTONE_SLACK = 1e-10


@dataclass
class StepOptions:
    flow: bool = True
    np_advection: str = "logmean"
    ns_advection: bool = True
    ns_scheme: str = "central"


def step_limit(state, equilibrium, params, grid, opts):
    dt = stable_dt(state, params, grid, equilibrium.w)
    if opts.flow:
        dt = min(dt, flow_dt(state.u, params, grid))
    return dt


def coupled_step(state, equilibrium, params, grid, dt, opts=None, check_dt=True, solver=None):
    """Advance (c, u) by one explicit step evaluated at ``state``; then refresh Φ.

    Returns ``(new_state, flow_report_or_None)``.
    """
    opts = opts or StepOptions()
    if check_dt:
        limit = step_limit(state, equilibrium, params, grid, opts)
        if dt > limit * (1 + 1e-12):
            raise CFLViolation(f"dt={dt:.3e} exceeds the stable bound {limit:.3e}")
    rates = np_rates(state, params, grid, equilibrium.w, opts.np_advection if opts.flow else "none")
    report = None
    u = state.u
    if opts.flow:
        moved, report = step_ns(state, params, grid, dt, advection=opts.ns_advection, scheme=opts.ns_scheme, check_dt=False)
        u = moved.u
    c_new = [ci + dt * r for ci, r in zip(state.c, rates)]
    for i, ci in enumerate(c_new):
        if ci.min() < 0:
            raise NegativeConcentrationError(f"species {i + 1}: min concentration {ci.min():.3e} at t={state.time + dt:.6g}")
    phi = refresh_potential(c_new, params, grid, equilibrium.w, solver)
    return replace(state, time=state.time + dt, c=c_new, u=u, phi=phi), report


@dataclass
class RunResult:
    state: object
    records: list
    steps: int
    max_increase: float
    min_c: float
    max_divergence: float
    snapshots: list = field(default_factory=list)


def _next_mark(t, every):
    if not every:
        return math.inf
    return (math.floor(t / every + 1e-9) + 1) * every


def run(
    state,
    equilibrium,
    params,
    grid,
    t_end,
    dt=None,
    opts=None,
    diagnostics_every=1,
    snapshot_every=None,
    on_record=None,
    on_snapshot=None,
    max_steps=None,
    monotone_slack=MONOTONE_SLACK,
    ck_constant=2.0,
    check_monotone=True,
):
    """March from ``state`` to ``t_end``.

    ``dt=None`` picks the stable step afresh each step.  Diagnostics are taken
    every ``diagnostics_every`` steps (plus the first and last state);
    snapshots at multiples of ``snapshot_every`` in simulated time, which the
    step size is clipped to hit exactly.  Total energy is checked after every
    step and a rise beyond ``monotone_slack * max(1, total)`` raises
    :class:`InvariantViolation`.
    """
    opts = opts or StepOptions()
    solver = dirichlet_solver(grid, params.epsilon)
    records = []
    snaps = []

    def record(s, step_dt):
        rec = diagnostics(s, equilibrium, params, grid, dt=step_dt, ck_constant=ck_constant)
        records.append(rec)
        if on_record is not None:
            on_record(rec)
        return rec

    record(state, 0.0)
    if on_snapshot is not None and snapshot_every:
        on_snapshot(state)
        snaps.append(state.time)
    total = kinetic_energy(state.u, params, grid) + energy(state, equilibrium, params, grid)
    max_increase = -math.inf
    min_c = min(float(c.min()) for c in state.c)
    max_div = 0.0
    next_snap = _next_mark(state.time, snapshot_every)
    steps = 0
    last_dt = 0.0
    while state.time < t_end * (1 - 1e-14):
        if max_steps is not None and steps >= max_steps:
            break
        step = dt if dt is not None else step_limit(state, equilibrium, params, grid, opts)
        target = min(t_end, next_snap)
        clipped = False
        if state.time + step >= target * (1 - 1e-14):
            step = target - state.time
            clipped = True
        state, report = coupled_step(state, equilibrium, params, grid, step, opts, check_dt=dt is not None, solver=solver)
        if clipped:
            state.time = target
        steps += 1
        last_dt = step
        if report is not None:
            max_div = max(max_div, report.divergence_residual)
            umax = max(float(np.max(np.abs(ua))) for ua in state.u)
            if report.divergence_residual > 1e-8 * max(1.0, umax):
                raise InvariantViolation(f"divergence {report.divergence_residual:.3e} after step {steps}")
        min_c = min(min_c, min(float(c.min()) for c in state.c))
        new_total = kinetic_energy(state.u, params, grid) + energy(state, equilibrium, params, grid)
        rise = new_total - total
        max_increase = max(max_increase, rise / max(1.0, total))
        if check_monotone and rise > monotone_slack * max(1.0, total):
            rec = record(state, step)
            raise InvariantViolation(
                f"total energy rose by {rise:.3e} at step {steps} (t={state.time:.6g})", record=rec
            )
        total = new_total
        at_end = state.time >= t_end * (1 - 1e-14)
        if (diagnostics_every and steps % diagnostics_every == 0) or at_end:
            record(state, step)
        if snapshot_every and state.time >= next_snap * (1 - 1e-12):
            if on_snapshot is not None:
                on_snapshot(state)
            snaps.append(state.time)
            next_snap = _next_mark(state.time, snapshot_every)
    if records[-1].t != state.time:
        record(state, last_dt)
    return RunResult(state, records, steps, max_increase, min_c, max_div, snaps)
