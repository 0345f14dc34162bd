"""Incompressible Navier-Stokes on a staggered (MAC) grid.

Velocity component ``a`` lives on the faces normal to axis ``a``; wall faces
carry the (zero) normal velocity and tangential no-slip is imposed through
ghost values -u.  A step is Chorin's splitting followed by an exact discrete
projection, so face divergences vanish to linear-solver precision.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .elliptic import leray_project, neumann_solver
from .errors import CFLViolation
from .grid import _sl, face_divergence, face_gradients, face_integrate, log_mean

SAFETY = 0.9


@dataclass
class FlowStepReport:
    divergence_residual: float
    pressure_iterations: int
    force_l2: float
    projected_force_l2: float


def _zero_walls(fa, grid, a):
    if not grid.periodic[a]:
        fa[_sl(grid.dim, a, 0)] = 0.0
        fa[_sl(grid.dim, a, -1)] = 0.0
    return fa


def face_l2(F, grid):
    return math.sqrt(face_integrate(tuple(fa * fa for fa in F), grid))


def electric_force(state, params, grid):
    """Body force -(k_B T) rho grad(phi) on faces.

    The face charge is sum_i z_i L(c_i^left, c_i^right) with L the logarithmic
    mean; on a Boltzmann state this makes the force the exact discrete
    gradient of k_B T sum_i c_i.
    """
    d = grid.dim
    out = []
    for a in range(d):
        h = grid.spacing[a]
        if grid.periodic[a]:
            rho_f = sum(s.valence * log_mean(np.roll(c, 1, axis=a), c) for s, c in zip(params.species, state.c))
            out.append(-params.kbt * rho_f * (state.phi - np.roll(state.phi, 1, axis=a)) / h)
            continue
        lo, hi = _sl(d, a, slice(None, -1)), _sl(d, a, slice(1, None))
        rho_f = sum(s.valence * log_mean(c[lo], c[hi]) for s, c in zip(params.species, state.c))
        fa = np.zeros(grid.face_shape(a))
        fa[_sl(d, a, slice(1, -1))] = -params.kbt * rho_f * np.diff(state.phi, axis=a) / h
        out.append(fa)
    return tuple(out)


def viscous_laplacian(u, grid):
    """Δ_h of each velocity component with no-slip ghosts; zero on wall normal faces."""
    d = grid.dim
    out = []
    for a in range(d):
        ua = u[a]
        lap = np.zeros_like(ua)
        for b in range(d):
            h2 = grid.spacing[b] ** 2
            if grid.periodic[b]:
                lap += (np.roll(ua, -1, axis=b) - 2 * ua + np.roll(ua, 1, axis=b)) / h2
            elif b == a:
                # wall entries of ua are the fixed zero normal velocity
                inner = _sl(d, b, slice(1, -1))
                lap[inner] += (ua[_sl(d, b, slice(2, None))] - 2 * ua[inner] + ua[_sl(d, b, slice(None, -2))]) / h2
            else:
                lo = -np.take(ua, [0], axis=b)
                hi = -np.take(ua, [-1], axis=b)
                g = np.concatenate([lo, ua, hi], axis=b)
                lap += (g[_sl(d, b, slice(2, None))] - 2 * ua + g[_sl(d, b, slice(None, -2))]) / h2
        out.append(_zero_walls(lap, grid, a))
    return tuple(out)


def _to_cells(x, axis, periodic):
    if periodic:
        return 0.5 * (x + np.roll(x, -1, axis=axis))
    n = x.shape[axis]
    return 0.5 * (np.take(x, range(0, n - 1), axis=axis) + np.take(x, range(1, n), axis=axis))


def _to_faces(x, axis, periodic, upwind_by=None):
    """Cell-layout values -> face layout along ``axis``; walls get 0 (no-slip ghost)."""
    if periodic:
        left, right = np.roll(x, 1, axis=axis), x
    else:
        pad = [(0, 0)] * x.ndim
        pad[axis] = (1, 1)
        g = np.pad(x, pad)
        n = g.shape[axis]
        left = np.take(g, range(0, n - 1), axis=axis)
        right = np.take(g, range(1, n), axis=axis)
    if upwind_by is None:
        out = 0.5 * (left + right)
    else:
        out = np.where(upwind_by > 0, left, right)
    if not periodic:
        idx = [slice(None)] * x.ndim
        for end in (0, -1):
            idx[axis] = end
            out[tuple(idx)] = 0.0
    return out


def _diff_to_faces(x, axis, h, periodic):
    """Cell-layout -> face-layout difference; wall faces 0."""
    if periodic:
        return (x - np.roll(x, 1, axis=axis)) / h
    pad = [(0, 0)] * x.ndim
    pad[axis] = (1, 1)
    g = np.diff(x, axis=axis) / h
    return np.pad(g, pad)


def _diff_to_cells(x, axis, h, periodic):
    if periodic:
        return (np.roll(x, -1, axis=axis) - x) / h
    return np.diff(x, axis=axis) / h


def momentum_advection(u, grid, scheme="central"):
    """Discrete div(u ⊗ u) for each component.

    ``central`` is the divergence form with centred interpolation, which
    conserves kinetic energy when div u = 0; ``upwind`` takes the transported
    velocity from the upwind side.
    """
    d = grid.dim
    out = []
    for a in range(d):
        pa = grid.periodic[a]
        total = np.zeros_like(u[a])
        for b in range(d):
            pb = grid.periodic[b]
            if b == a:
                ubar = _to_cells(u[a], a, pa)
                if scheme == "upwind":
                    if pa:
                        q = np.where(ubar > 0, u[a], np.roll(u[a], -1, axis=a))
                    else:
                        n = u[a].shape[a]
                        q = np.where(ubar > 0, np.take(u[a], range(0, n - 1), axis=a), np.take(u[a], range(1, n), axis=a))
                else:
                    q = ubar
                total += _diff_to_faces(ubar * q, a, grid.spacing[a], pa)
            else:
                # transporting velocity u_b moved along a onto the (a-face, b-face) edges
                v = _to_faces(u[b], a, pa)
                q = _to_faces(u[a], b, pb, upwind_by=v if scheme == "upwind" else None)
                total += _diff_to_cells(v * q, b, grid.spacing[b], pb)
        out.append(_zero_walls(total, grid, a))
    return tuple(out)


def kinetic_energy(u, params, grid):
    """(1 / (2 k_B T)) ∫|u|^2."""
    return face_integrate(tuple(ua * ua for ua in u), grid) / (2 * params.kbt)


def grad_u_sq(u, grid):
    """‖∇u‖² as the Dirichlet form -<u, Δ_h u> matching the viscous operator."""
    lap = viscous_laplacian(u, grid)
    return -math.fsum(float(np.sum(ua * la)) for ua, la in zip(u, lap)) * grid.cell_volume


def flow_dt(u, params, grid, safety=SAFETY):
    bound = grid.hmin**2 / (2 * grid.dim * params.nu)
    umax = max(float(np.max(np.abs(ua))) for ua in u)
    if umax > 0:
        bound = min(bound, grid.hmin / umax)
    return safety * bound


def divergence_residual(u, grid):
    return float(np.max(np.abs(face_divergence(u, grid))))


def step_ns(state, params, grid, dt, advection=True, scheme="central", force=True, check_dt=True):
    """Chorin step u† = u + dt(-div(u⊗u) + ν Δu + f), then u = P u†."""
    if check_dt:
        limit = flow_dt(state.u, params, grid)
        if dt > limit * (1 + 1e-12):
            raise CFLViolation(f"dt={dt:.3e} exceeds the flow bound {limit:.3e}")
    lap = viscous_laplacian(state.u, grid)
    f = electric_force(state, params, grid) if force else grid.zero_faces()
    adv = momentum_advection(state.u, grid, scheme) if advection else grid.zero_faces()
    ustar = tuple(
        _zero_walls(ua + dt * (params.nu * la + fa - na), grid, a)
        for a, (ua, la, fa, na) in enumerate(zip(state.u, lap, f, adv))
    )
    solver = neumann_solver(grid)
    u_new = leray_project(ustar, grid, solver)
    pf = leray_project(f, grid, solver) if force else f
    report = FlowStepReport(
        divergence_residual=divergence_residual(u_new, grid),
        pressure_iterations=1,
        force_l2=face_l2(f, grid),
        projected_force_l2=face_l2(pf, grid),
    )
    return replace(state, time=state.time + dt, u=u_new), report


def stream_velocity(grid, psi):
    """Discretely divergence-free face velocity u = curl(psi).

    ``psi(*coords)`` is evaluated on grid nodes; in 3D the same scalar is used
    for all three components of the vector potential.
    """
    d = grid.dim
    if d == 2:
        X, Y = np.meshgrid(grid.axis_nodes(0), grid.axis_nodes(1), indexing="ij")
        P = psi(X, Y)
        ux = np.diff(P, axis=1) / grid.spacing[1]
        uy = -np.diff(P, axis=0) / grid.spacing[0]
        return _zero_walls(ux, grid, 0), _zero_walls(uy, grid, 1)
    comps = []
    for c in range(3):
        coords = [grid.axis_nodes(b) if b != c else grid.axis_centers(b) for b in range(3)]
        comps.append(psi(*np.meshgrid(*coords, indexing="ij")))
    out = []
    for a in range(3):
        b, c = (a + 1) % 3, (a + 2) % 3
        ua = np.diff(comps[c], axis=b) / grid.spacing[b] - np.diff(comps[b], axis=c) / grid.spacing[c]
        out.append(_zero_walls(ua, grid, a))
    return tuple(out)
