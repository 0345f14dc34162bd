"""Linear Poisson solves, the Poisson-Boltzmann steady state and its normalisations,
discrete Leray projection and the Neumann-Poincaré constant.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DomainError, NonConvergedError, NotUniformError, PotentialOverflowError
from .grid import (
    Grid,
    cell_to_faces,
    constant_boundary,
    dirichlet_lift,
    dirichlet_matrix,
    face_divergence,
    face_gradients,
    integrate,
    neumann_matrix,
    parse_key,
)

log = logging.getLogger(__name__)

EXP_LIMIT = 700.0
# above this many cells the cached sparse LU gets expensive; fall back to CG
DIRECT_LIMIT = 20000


@dataclass
class SpeciesSpec:
    """One ionic species.

    ``gamma`` maps boundary keys to arrays over that face set, NaN where the
    face is not part of the selective portion S_i.  Only used when
    ``bc == "selective"``.
    """

    valence: float
    diffusivity: float
    bc: str = "blocking"
    gamma: dict | None = None
    name: str = ""

    def __post_init__(self):
        if not self.diffusivity > 0:
            raise DomainError(f"species {self.name!r}: diffusivity must be positive")
        if self.bc not in ("blocking", "selective"):
            raise DomainError(f"species {self.name!r}: unknown bc family {self.bc!r}")
        if self.bc == "selective":
            if not self.gamma or not any(np.isfinite(g).any() for g in self.gamma.values()):
                raise DomainError(f"species {self.name!r}: selective species needs gamma on some faces")
            for g in self.gamma.values():
                g = np.asarray(g)
                if np.any(g[np.isfinite(g)] <= 0):
                    raise DomainError(f"species {self.name!r}: gamma must be positive")

    def selective_mask(self, key):
        if self.bc != "selective" or key not in self.gamma:
            return None
        mask = np.isfinite(self.gamma[key])
        return mask if mask.any() else None


@dataclass
class PhysParams:
    epsilon: float
    nu: float
    kbt: float
    species: list = field(default_factory=list)

    def __post_init__(self):
        for name in ("epsilon", "nu", "kbt"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be positive")
        z = [s.valence for s in self.species]
        if not (any(v < 0 for v in z) and any(v > 0 for v in z)):
            raise DomainError("need at least one negative and one positive valence")
        seen_blocking = False
        for s in self.species:
            if s.bc == "blocking":
                seen_blocking = True
            elif seen_blocking:
                raise DomainError("selective species must be listed before blocking ones")

    @property
    def valences(self):
        return np.array([s.valence for s in self.species], dtype=float)

    @property
    def diffusivities(self):
        return np.array([s.diffusivity for s in self.species], dtype=float)

    @property
    def nspecies(self):
        return len(self.species)


@dataclass
class EquilibriumSolution:
    phi: np.ndarray
    c: list
    z_norm: np.ndarray
    rho: np.ndarray
    newton_residual: float
    w: dict
    newton_iterations: int = 0
    newton_history: list = field(default_factory=list)
    z_history: list = field(default_factory=list)

    def masses(self, grid):
        return [integrate(ci, grid) for ci in self.c]


def as_boundary(grid, w):
    if w is None:
        return constant_boundary(grid, 0.0)
    if isinstance(w, dict):
        return {k: np.broadcast_to(np.asarray(v, dtype=float), grid.boundary_shape(k)).copy() for k, v in w.items()}
    return constant_boundary(grid, w)


def boltzmann(z_norm, valence, phi):
    """c* = Z^{-1} exp(-z phi)."""
    return np.exp(-valence * phi) / z_norm


# ---------------------------------------------------------------- linear solvers


class DirichletPoisson:
    """Solves -eps Δ_h phi = rho with phi = W on the walls.

    The factorisation is built once and reused; this is the solver used
    inside time loops.
    """

    def __init__(self, grid, epsilon):
        self.grid = grid
        self.epsilon = float(epsilon)
        self.A = (-self.epsilon * dirichlet_matrix(grid)).tocsc()
        self._lu = spla.splu(self.A) if grid.ncells <= DIRECT_LIMIT else None

    def rhs(self, rho, w):
        return rho + self.epsilon * dirichlet_lift(self.grid, as_boundary(self.grid, w))

    def solve(self, rho, w, x0=None, rtol=1e-10, atol=1e-14):
        b = self.rhs(np.asarray(rho, dtype=float), w).ravel()
        if self._lu is not None:
            x = self._lu.solve(b)
        else:
            x = _cg(self.A, b, x0=None if x0 is None else np.ravel(x0), rtol=rtol, atol=atol)
        return x.reshape(self.grid.shape)

    def residual(self, phi, rho, w):
        b = self.rhs(rho, w).ravel()
        return (self.A @ np.ravel(phi) - b).reshape(self.grid.shape)


def _cg(A, b, x0=None, rtol=1e-10, atol=1e-14, maxiter=None, M=None):
    maxiter = maxiter or 10 * A.shape[0]
    x, info = spla.cg(A, b, x0=x0, rtol=rtol, atol=atol, maxiter=maxiter, M=M)
    if info != 0:
        raise NonConvergedError(f"CG did not converge in {maxiter} iterations", last=x)
    return x


def solve_poisson(rho, w, epsilon, grid, rtol=1e-10, atol=1e-14, maxiter=None, x0=None):
    """Conjugate-gradient solve of -eps Δ_h phi = rho, phi|wall = w."""
    if not epsilon > 0:
        raise DomainError("epsilon must be positive")
    A = (-epsilon * dirichlet_matrix(grid)).tocsr()
    b = (np.asarray(rho, dtype=float) + epsilon * dirichlet_lift(grid, as_boundary(grid, w))).ravel()
    x = _cg(A, b, x0=None if x0 is None else np.ravel(x0), rtol=rtol, atol=atol, maxiter=maxiter)
    return x.reshape(grid.shape)


class NeumannSolver:
    """Zero-mean solutions of face_divergence(face_gradient(q)) = r."""

    def __init__(self, grid):
        self.grid = grid
        self.L = neumann_matrix(grid).tocsc()
        if grid.ncells <= DIRECT_LIMIT:
            # pinning the first unknown removes the constant kernel
            self._lu = spla.splu(self.L[1:, 1:].tocsc())
        else:
            self._lu = None

    def solve(self, rhs):
        r = np.asarray(rhs, dtype=float).ravel()
        r = r - r.mean()
        if self._lu is not None:
            q = np.zeros_like(r)
            q[1:] = self._lu.solve(r[1:])
        else:
            q = _cg(-self.L, -r, rtol=1e-13, atol=1e-300)
        q -= q.mean()
        return q.reshape(self.grid.shape)


@lru_cache(maxsize=16)
def neumann_solver(grid):
    return NeumannSolver(grid)


@lru_cache(maxsize=16)
def dirichlet_solver(grid, epsilon):
    return DirichletPoisson(grid, epsilon)


# ---------------------------------------------------------------- Poisson-Boltzmann


def _pb_charge(phi, valences, z_norm):
    zphi = valences[:, None] * phi.ravel()[None, :]
    if np.max(np.abs(zphi)) > EXP_LIMIT:
        raise PotentialOverflowError(f"|z phi| = {np.max(np.abs(zphi)):.3g} exceeds {EXP_LIMIT}")
    e = np.exp(-zphi) / z_norm[:, None]
    return (valences[:, None] * e).sum(axis=0), (valences[:, None] ** 2 * e).sum(axis=0)


def solve_poisson_boltzmann(
    params,
    grid,
    w,
    z_norm,
    phi0=None,
    source=None,
    tol=1e-10,
    max_newton=100,
    linear_solver="cg",
):
    """Damped Newton for -eps Δ_h phi = sum_i z_i Z_i^{-1} exp(-z_i phi) (+ source).

    Each Newton system has the SPD Jacobian -eps Δ_h + diag(sum z_i^2 c_i) and
    is solved by Jacobi-preconditioned CG.  The step is halved until the
    residual 2-norm decreases, so the recorded residuals are monotone.
    """
    z_norm = np.asarray(z_norm, dtype=float)
    if np.any(z_norm <= 0):
        raise DomainError("normalisation constants Z_i must be positive")
    w = as_boundary(grid, w)
    z = params.valences
    eps = params.epsilon
    A = (-eps * dirichlet_matrix(grid)).tocsr()
    lift = eps * dirichlet_lift(grid, w).ravel()
    src = np.zeros(grid.ncells) if source is None else np.asarray(source, dtype=float).ravel()

    if phi0 is None:
        phi = dirichlet_solver(grid, eps).solve(np.zeros(grid.shape), w).ravel()
    else:
        phi = np.array(phi0, dtype=float).ravel()

    def residual(p):
        rho, dq = _pb_charge(p, z, z_norm)
        return A @ p - lift - rho - src, rho, dq

    F, rho, dq = residual(phi)
    r2 = np.linalg.norm(F)
    history = [(r2, float(np.max(np.abs(F))))]

    def converged(F, rho):
        return np.max(np.abs(F)) <= tol * max(1.0, np.max(np.abs(rho + src)))

    it = 0
    while not converged(F, rho):
        if it >= max_newton:
            raise NonConvergedError(f"Poisson-Boltzmann Newton did not converge in {max_newton} steps", last=phi)
        J = (A + sp.diags(dq)).tocsr()
        if linear_solver == "direct":
            step = spla.spsolve(J.tocsc(), -F)
        else:
            M = sp.diags(1.0 / J.diagonal())
            step = _cg(J, -F, rtol=1e-12, atol=0.0, M=M)
        t = 1.0
        while True:
            trial = phi + t * step
            try:
                Ft, rho_t, dq_t = residual(trial)
                rt = np.linalg.norm(Ft)
            except PotentialOverflowError:
                rt = np.inf
            if rt < r2:
                break
            t *= 0.5
            if t < 1e-12:
                raise NonConvergedError("line search failed to reduce the PB residual", last=phi)
        phi, F, rho, dq, r2 = trial, Ft, rho_t, dq_t, rt
        it += 1
        history.append((r2, float(np.max(np.abs(F)))))
        log.debug("PB Newton %d: |F|_2=%.3e step=%.3g", it, r2, t)

    # one polishing step, kept only if it lowers the residual
    J = (A + sp.diags(dq)).tocsr()
    try:
        step = spla.spsolve(J.tocsc(), -F) if linear_solver == "direct" else _cg(
            J, -F, rtol=1e-12, atol=0.0, M=sp.diags(1.0 / J.diagonal())
        )
        Ft, rho_t, _ = residual(phi + step)
        if np.linalg.norm(Ft) < r2:
            phi, F, rho = phi + step, Ft, rho_t
    except (NonConvergedError, PotentialOverflowError):
        pass

    phi = phi.reshape(grid.shape)
    c = [boltzmann(zn, zi, phi) for zn, zi in zip(z_norm, z)]
    rho_star = sum(zi * ci for zi, ci in zip(z, c))
    return EquilibriumSolution(
        phi=phi,
        c=c,
        z_norm=z_norm.copy(),
        rho=rho_star,
        newton_residual=float(np.max(np.abs(F))),
        w=w,
        newton_iterations=it,
        newton_history=history,
    )


def blocking_normalization(c0, params, grid, w, fixed=None, tol=1e-12, max_outer=200, **pb_kwargs):
    """Choose Z_i = (∫c0_i)^{-1} ∫exp(-z_i phi*) self-consistently.

    ``fixed`` optionally maps species index -> Z_i held constant (selective
    species in a mixed configuration).  Each outer step re-solves the PB
    equation, warm-started from the previous potential.
    """
    fixed = dict(fixed or {})
    z = params.valences
    masses = np.array([integrate(ci, grid) if i not in fixed else np.nan for i, ci in enumerate(c0)])
    for i, ci in enumerate(c0):
        if i in fixed:
            continue
        if np.any(np.asarray(ci) < 0) or not masses[i] > 0:
            raise DomainError(f"species {i}: initial concentration must be nonnegative with positive mass")
    Z = np.array([fixed[i] if i in fixed else grid.volume / masses[i] for i in range(len(c0))])
    free = [i for i in range(len(c0)) if i not in fixed]
    phi = None
    history = [Z.copy()]
    for k in range(max_outer):
        eq = solve_poisson_boltzmann(params, grid, w, Z, phi0=phi, **pb_kwargs)
        phi = eq.phi
        Z_new = Z.copy()
        for i in free:
            Z_new[i] = integrate(np.exp(-z[i] * phi), grid) / masses[i]
        change = max((abs(Z_new[i] / Z[i] - 1.0) for i in free), default=0.0)
        history.append(Z_new.copy())
        log.debug("blocking normalisation %d: max rel change %.3e", k, change)
        if change <= tol:
            # eq was solved with Z, so c* = exp(-z phi)/Z matches the masses to ~change
            eq.z_history = history
            return eq
        Z = Z_new
    raise NonConvergedError(f"blocking normalisation did not converge in {max_outer} iterations", last=Z)


def selective_normalization(params, grid, w, uniform_tol=1e-10):
    """Z_i^{-1} = gamma_i exp(z_i W) on S_i for selective species; NaN for the rest."""
    w = as_boundary(grid, w)
    out = []
    for i, s in enumerate(params.species):
        if s.bc != "selective":
            out.append(np.nan)
            continue
        vals = []
        for key, g in s.gamma.items():
            mask = np.isfinite(g)
            if mask.any():
                vals.append(np.log(np.asarray(g)[mask]) + s.valence * w[key][mask])
        vals = np.concatenate(vals)
        spread = float(vals.max() - vals.min())
        if spread > uniform_tol:
            raise NotUniformError(
                f"species {i} ({s.name or 'unnamed'}): log(gamma) + z W varies by {spread:.3g} on S_i"
            )
        out.append(float(np.exp(-vals.mean())))
    return out


# ---------------------------------------------------------------- projection and Poincaré


def leray_project(f, grid, solver=None):
    """Discrete Leray projection onto face fields with zero divergence and zero wall flux.

    ``f`` may be collocated (array of shape (dim, *shape)), in which case it is
    first averaged onto faces.  Returns a staggered tuple.
    """
    if not isinstance(f, (tuple, list)):
        f = cell_to_faces(np.asarray(f, dtype=float), grid)
    f = [np.array(fa, dtype=float) for fa in f]
    for a in range(grid.dim):
        if not grid.periodic[a]:
            idx = [slice(None)] * grid.dim
            for end in (0, -1):
                idx[a] = end
                f[a][tuple(idx)] = 0.0
    solver = solver or neumann_solver(grid)
    q = solver.solve(face_divergence(f, grid))
    g = face_gradients(q, grid)
    return tuple(fa - ga for fa, ga in zip(f, g))


def poincare_constant(grid, tol=1e-13, max_iter=1000, seed=0):
    """Smallest nonzero eigenvalue of -Δ_h with homogeneous Neumann data.

    Inverse power iteration restricted to zero-mean vectors.
    """
    solver = neumann_solver(grid)
    L = solver.L
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(grid.ncells)
    x -= x.mean()
    x /= np.linalg.norm(x)
    lam = np.inf
    for _ in range(max_iter):
        y = -solver.solve(x.reshape(grid.shape)).ravel()
        y -= y.mean()
        x = y / np.linalg.norm(y)
        new = float(-x @ (L @ x))
        if abs(new - lam) <= tol * new:
            return new
        lam = new
    raise NonConvergedError("inverse iteration for the Poincaré constant did not converge", last=lam)


def boundary_face_values(grid, f, key):
    """Extrapolate cell field ``f`` to the faces of boundary ``key``.

    Uses the quadratic through the three nearest cell centres, so the
    extrapolation error is O(h^3) and the trace inherits the O(h^2) error of
    the cell values.
    """
    a, side = parse_key(key)
    idx = (0, 1, 2) if side == "-" else (-1, -2, -3)
    c0, c1, c2 = (np.take(f, k, axis=a) for k in idx)
    return (15.0 * c0 - 10.0 * c1 + 3.0 * c2) / 8.0
