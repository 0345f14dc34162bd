"""Explicit Nernst-Planck step with Scharfetter-Gummel fluxes.

Fluxes are physical particle fluxes J (positive along +axis), so that
dc/dt = -div J with J = u c - D grad c - z D c grad phi.

Interior faces use the two-point exponential-fitted flux
    J = (D/s) [B(d) c_L - B(-d) c_R],   d = z (phi_R - phi_L),
which vanishes exactly on Boltzmann profiles c ∝ exp(-z phi).  On the
selective portion S_i of a wall the same formula is applied over the half
cell between the boundary value gamma_i (at potential W) and the adjacent
cell.  Advection uses the logarithmic mean of the two cell values so that,
for discretely divergence-free velocities, its entropy production cancels
the work of the electric force in the momentum balance.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .elliptic import dirichlet_solver
from .errors import CFLViolation, NegativeConcentrationError
from .grid import AXES, _sl, log_mean

SAFETY = 0.9


def bernoulli(x):
    """B(x) = x / (exp(x) - 1), B(0) = 1, evaluated without cancellation."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-5
    xs = np.where(small, 1.0, x)
    with np.errstate(over="ignore"):
        exact = xs / np.expm1(xs)
    series = 1.0 - x / 2 + x * x / 12 - x**4 / 720
    out = np.where(small, series, exact)
    return out if out.ndim else float(out)


@dataclass
class State:
    time: float
    c: list
    u: tuple
    phi: np.ndarray
    meta: dict = field(default_factory=dict)

    def copy(self):
        return State(self.time, [ci.copy() for ci in self.c], tuple(ua.copy() for ua in self.u), self.phi.copy(), dict(self.meta))


def face_stencils(grid, species, c, phi, w):
    """Two-point stencils for every active face of one species.

    Yields ``(axis, index, cL, cR, phiL, phiR, dist, mask)``: the values on the
    left/right of the faces selected by ``index`` inside the staggered array of
    ``axis``.  ``mask`` is None for full face sets, or a boolean array for the
    selective boundary portion (other entries of cL/cR are placeholders).
    """
    d = grid.dim
    for a in range(d):
        h = grid.spacing[a]
        if grid.periodic[a]:
            yield a, _sl(d, a, slice(None)), np.roll(c, 1, axis=a), c, np.roll(phi, 1, axis=a), phi, h, None
            continue
        lo, hi = _sl(d, a, slice(None, -1)), _sl(d, a, slice(1, None))
        yield a, _sl(d, a, slice(1, -1)), c[lo], c[hi], phi[lo], phi[hi], h, None
        for side in "-+":
            key = AXES[a] + side
            mask = species.selective_mask(key)
            if mask is None:
                continue
            gamma = np.where(mask, species.gamma[key], 1.0)
            wk = w[key]
            end = 0 if side == "-" else -1
            cb, pb = np.take(c, end, axis=a), np.take(phi, end, axis=a)
            if side == "-":
                yield a, _sl(d, a, 0), gamma, cb, wk, pb, 0.5 * h, mask
            else:
                yield a, _sl(d, a, -1), cb, gamma, pb, wk, 0.5 * h, mask


def np_face_fluxes(state, i, params, grid, w, advection="logmean"):
    """Face fluxes J_i (staggered tuple) of species ``i``; zero on blocking faces."""
    sp_ = params.species[i]
    z, D = sp_.valence, sp_.diffusivity
    c = state.c[i]
    J = [np.zeros(grid.face_shape(a)) for a in range(grid.dim)]
    for a, idx, cL, cR, pL, pR, dist, mask in face_stencils(grid, sp_, c, state.phi, w):
        delta = z * (pR - pL)
        flux = (D / dist) * (bernoulli(delta) * cL - bernoulli(-delta) * cR)
        if mask is not None:
            flux = np.where(mask, flux, 0.0)
        else:
            ua = state.u[a][idx]
            if advection == "logmean":
                flux = flux + ua * log_mean(cL, cR)
            elif advection == "upwind":
                flux = flux + np.where(ua > 0, ua * cL, ua * cR)
            elif advection != "none":
                raise ValueError(f"unknown advection scheme {advection!r}")
        J[a][idx] = flux
    return tuple(J)


def np_rates(state, params, grid, w, advection="logmean"):
    """dc_i/dt = -div J_i for every species."""
    out = []
    for i in range(params.nspecies):
        J = np_face_fluxes(state, i, params, grid, w, advection)
        rate = np.zeros(grid.shape)
        for a in range(grid.dim):
            h = grid.spacing[a]
            if grid.periodic[a]:
                rate -= (np.roll(J[a], -1, axis=a) - J[a]) / h
            else:
                rate -= np.diff(J[a], axis=a) / h
        out.append(rate)
    return out


def stable_dt(state, params, grid, w, safety=SAFETY):
    """Largest explicit step keeping the update monotone (hence positive).

    Combines the per-cell Scharfetter-Gummel outflow bound, the advective
    bound h / |u|_max and the charge-relaxation bound eps / (D_max sum z^2 c).
    """
    bound = np.inf
    for sp_, c in zip(params.species, state.c):
        out = np.zeros(grid.shape)
        for a, idx, cL, cR, pL, pR, dist, mask in face_stencils(grid, sp_, c, state.phi, w):
            delta = sp_.valence * (pR - pL)
            # outflow weight of a cell through this face, on each side
            wl = sp_.diffusivity * bernoulli(delta) / (dist * grid.spacing[a])
            wr = sp_.diffusivity * bernoulli(-delta) / (dist * grid.spacing[a])
            if mask is not None:
                wl, wr = np.where(mask, wl, 0.0), np.where(mask, wr, 0.0)
            if grid.periodic[a]:
                out += np.roll(wl, -1, axis=a) + wr
            elif mask is None:
                out[_sl(grid.dim, a, slice(None, -1))] += wl
                out[_sl(grid.dim, a, slice(1, None))] += wr
            elif idx[a] == 0:
                out[_sl(grid.dim, a, 0)] += wr
            else:
                out[_sl(grid.dim, a, -1)] += wl
        bound = min(bound, 1.0 / out.max())
    umax = max(float(np.max(np.abs(ua))) for ua in state.u)
    if umax > 0:
        bound = min(bound, grid.hmin / umax)
    zsq = sum(s.valence**2 * c for s, c in zip(params.species, state.c))
    charge_rate = params.diffusivities.max() * float(zsq.max()) / params.epsilon
    if charge_rate > 0:
        bound = min(bound, 1.0 / charge_rate)
    return safety * bound


def refresh_potential(c, params, grid, w, solver=None):
    solver = solver or dirichlet_solver(grid, params.epsilon)
    rho = sum(s.valence * ci for s, ci in zip(params.species, c))
    return solver.solve(rho, w)


def step_np(state, equilibrium, params, grid, dt, advection="logmean", check_dt=True, solver=None):
    """One forward-Euler Nernst-Planck step followed by the potential refresh.

    The input state is left untouched.
    """
    w = equilibrium.w
    if check_dt:
        limit = stable_dt(state, params, grid, w)
        if dt > limit * (1 + 1e-12):
            raise CFLViolation(f"dt={dt:.3e} exceeds the stable bound {limit:.3e}")
    rates = np_rates(state, params, grid, w, advection)
    c_new = [ci + dt * r for ci, r in zip(state.c, rates)]
    for i, ci in enumerate(c_new):
        if ci.min() < 0:
            raise NegativeConcentrationError(f"species {i}: min concentration {ci.min():.3e} after step")
    phi = refresh_potential(c_new, params, grid, w, solver)
    return replace(state, time=state.time + dt, c=c_new, phi=phi)
