"""Energy, dissipation and the inequalities used by the stability argument.

The discrete energy and dissipation are built from the same face stencils as
the Nernst-Planck fluxes, so that along the semi-discrete flow
``d(kinetic + E)/dt = -(D + nu/kT |grad u|^2)`` holds exactly and only the
time discretization contributes to the budget residual.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.special import rel_entr

from .elliptic import leray_project, neumann_solver, poincare_constant
from .errors import DomainError, MassMismatchError
from .flow import electric_force, face_l2, grad_u_sq, kinetic_energy
from .grid import _sl, gradient, integrate, log_mean
from .transport import bernoulli, face_stencils

CLIP_FLOOR = 1e-300
PINSKER_C = 2.0
MASS_RTOL = 1e-8


def relative_entropy_density(c, c_star):
    """c* (r log r - r + 1) with r = c / c*, i.e. c log(c/c*) - c + c*."""
    c = np.asarray(c, dtype=float)
    c_star = np.asarray(c_star, dtype=float)
    if np.any(c_star <= 0):
        raise DomainError("reference concentration must be positive")
    if np.any(c < 0):
        raise DomainError("concentration must be nonnegative")
    out = rel_entr(c, c_star) - c + c_star
    return out if out.ndim else float(out)


def relative_entropy(c, c_star, grid):
    return integrate(relative_entropy_density(c, c_star), grid)


def _face_diffs(f, grid, bc=0.0):
    """(value, face-area-over-distance weight) pairs for |grad f|^2 with Dirichlet ``bc`` on walls."""
    d = grid.dim
    out = []
    for a in range(d):
        h = grid.spacing[a]
        if grid.periodic[a]:
            out.append(((f - np.roll(f, 1, axis=a)) / h, 1.0))
            continue
        out.append((np.diff(f, axis=a) / h, 1.0))
        # half-cell wall faces: gradient (f - bc)/(h/2) over half a cell
        out.append((2.0 * (np.take(f, [0], axis=a) - bc) / h, 0.5))
        out.append((2.0 * (np.take(f, [-1], axis=a) - bc) / h, 0.5))
    return out


def dirichlet_energy(f, grid):
    """∫|grad f|^2 for a cell field vanishing on the walls (consistent with -Δ_h)."""
    terms = [wgt * math.fsum((g * g).ravel().tolist()) for g, wgt in _face_diffs(f, grid)]
    return math.fsum(terms) * grid.cell_volume


def electrostatic_energy(phi, phi_star, params, grid):
    return 0.5 * params.epsilon * dirichlet_energy(phi - phi_star, grid)


def energy(state, equilibrium, params, grid):
    """E = Σ_i ∫ c_i log(c_i/c_i*) - c_i + c_i*  +  (ε/2) ∫ |grad(Φ - Φ*)|^2."""
    ent = math.fsum(relative_entropy(c, cs, grid) for c, cs in zip(state.c, equilibrium.c))
    return ent + electrostatic_energy(state.phi, equilibrium.phi, params, grid)


def electrochemical_potential(state, equilibrium, params, i):
    """(μ_i - μ_i*, clipped) with μ_i - μ_i* = log(c_i / c_i*) + z_i (Φ - Φ*).

    ``clipped`` marks cells where c_i < 1e-300; the log there uses the floor.
    """
    c = state.c[i]
    clipped = c < CLIP_FLOOR
    mu = np.log(np.maximum(c, CLIP_FLOOR) / equilibrium.c[i]) + params.species[i].valence * (state.phi - equilibrium.phi)
    return mu, clipped


@dataclass
class DissipationDetail:
    total: float
    per_species: list
    clipped_faces: int


def dissipation_detail(state, equilibrium, params, grid):
    """D = Σ_i D_i ∫ c_i |grad(μ_i - μ_i*)|^2 in the face form matching the SG flux.

    On a face with potential jump δ = z(Φ_R - Φ_L) the weight is
    B(δ) L(c_L, c_R e^δ), the exact factor that turns the flux times the
    potential jump into a square.  Faces touching a clipped cell are skipped.
    """
    per = []
    clipped = 0
    for i, sp_ in enumerate(params.species):
        c = state.c[i]
        z = sp_.valence
        parts = []
        for a, idx, cL, cR, pL, pR, dist, mask in face_stencils(grid, sp_, c, state.phi, equilibrium.w):
            area = grid.cell_volume / grid.spacing[a]
            delta = z * (pR - pL)
            ok = (cL >= CLIP_FLOOR) & (cR >= CLIP_FLOOR)
            if mask is not None:
                ok &= mask
            else:
                clipped += int(np.count_nonzero(~ok))
            sL = np.where(ok, cL, 1.0)
            sR = np.where(ok, cR, 1.0)
            jump = np.log(sR) - np.log(sL) + delta
            # log Z_i cancels in the jump; on S_i the boundary side has ψ = 0 by uniformity
            with np.errstate(over="ignore"):
                weight = bernoulli(delta) * log_mean(sL, sR * np.exp(delta))
            val = np.where(ok, weight * jump * jump, 0.0)
            parts.append(math.fsum(val.ravel().tolist()) * area / dist)
        per.append(sp_.diffusivity * math.fsum(parts))
    return DissipationDetail(math.fsum(per), per, clipped)


def dissipation(state, equilibrium, params, grid):
    return dissipation_detail(state, equilibrium, params, grid).total


def deviation_w(state, equilibrium, grid):
    """w = Σ_i ‖c_i - c_i*‖_2^2."""
    return math.fsum(integrate((c - cs) ** 2, grid) for c, cs in zip(state.c, equilibrium.c))


def ck_bound(c, c_star, grid, constant=PINSKER_C):
    """Equal-mass Csiszár-Kullback (Pinsker) bound.

    Returns ``(lhs, rhs, margin)`` with lhs = ‖c - c*‖_1^2 and
    rhs = C α ∫ c log(c/c*) - c + c*, α = ∫c*.
    """
    c = np.asarray(c, dtype=float)
    c_star = np.asarray(c_star, dtype=float)
    m, alpha = integrate(c, grid), integrate(c_star, grid)
    if abs(m - alpha) > MASS_RTOL * max(abs(alpha), 1e-300):
        raise MassMismatchError(f"masses differ ({m!r} vs {alpha!r}); use generalized_ck_bound")
    lhs = integrate(np.abs(c - c_star), grid) ** 2
    rhs = constant * alpha * relative_entropy(c, c_star, grid)
    return lhs, rhs, rhs - lhs


def _gck_profile(m):
    return (1.0 + m) * (math.log1p(m) - 1.0) + 1.0


@dataclass
class GeneralizedCK:
    lhs: float
    rhs: float
    margin: float
    l1_bound: float

    def __iter__(self):
        return iter((self.lhs, self.rhs, self.margin))


def generalized_ck_bound(c, c_star, grid):
    """Mass-free Csiszár-Kullback bound after rescaling so that ∫c* = 1.

    With f = c/α, g = c*/α and m = ‖f - g‖_1, lhs = (1+m)(log(1+m) - 1) + 1 and
    rhs = ∫ f log(f/g) - f + g.  ``l1_bound`` is the largest ‖c - c*‖_1
    compatible with rhs, found by inverting the increasing lhs profile.
    """
    c = np.asarray(c, dtype=float)
    c_star = np.asarray(c_star, dtype=float)
    if np.any(c_star <= 0):
        raise DomainError("reference concentration must be positive")
    alpha = integrate(c_star, grid)
    m = integrate(np.abs(c - c_star), grid) / alpha
    lhs = _gck_profile(m)
    rhs = relative_entropy(c, c_star, grid) / alpha
    if rhs <= 0:
        bound = 0.0
    else:
        hi = 1.0
        while _gck_profile(hi) < rhs:
            hi *= 2.0
        bound = brentq(lambda x: _gck_profile(x) - rhs, 0.0, hi, xtol=1e-15, rtol=1e-14) * alpha
    return GeneralizedCK(lhs, rhs, rhs - lhs, bound)


def species_ck_margin(c, c_star, grid, species, constant=PINSKER_C):
    """CK margin for one species: Pinsker form for blocking species with matching mass, generalized form otherwise."""
    if species.bc == "blocking":
        try:
            return ck_bound(c, c_star, grid, constant)[2]
        except MassMismatchError:
            pass
    return generalized_ck_bound(c, c_star, grid).margin


def face_force(state, params, grid):
    """-k_BT ρ_f grad_f Φ on faces with the arithmetic-mean face charge."""
    rho = sum(s.valence * c for s, c in zip(params.species, state.c))
    d = grid.dim
    out = []
    for a in range(d):
        h = grid.spacing[a]
        if grid.periodic[a]:
            out.append(-params.kbt * 0.5 * (rho + np.roll(rho, 1, axis=a)) * (state.phi - np.roll(state.phi, 1, axis=a)) / h)
            continue
        fa = np.zeros(grid.face_shape(a))
        lo, hi = _sl(d, a, slice(None, -1)), _sl(d, a, slice(1, None))
        fa[_sl(d, a, slice(1, -1))] = -params.kbt * 0.5 * (rho[lo] + rho[hi]) * np.diff(state.phi, axis=a) / h
        out.append(fa)
    return tuple(out)


def projected_force(state, params, grid, layout="mean"):
    """‖k_BT 𝕡(ρ grad Φ)‖_2.

    ``mean`` uses the plain face discretization (arithmetic-mean charge), so
    at a Boltzmann state it measures the O(h^2) defect of the continuum
    identity "ρ* grad Φ* is a gradient".  ``logmean`` uses the flow solver's
    force, which is an exact discrete gradient there and projects to round-off.
    """
    if layout == "logmean":
        f = electric_force(state, params, grid)
    elif layout == "mean":
        f = face_force(state, params, grid)
    else:
        raise ValueError(f"unknown force layout {layout!r}")
    return face_l2(leray_project(f, grid, neumann_solver(grid)), grid)


def grad_phi_norm(phi, grid, p=6):
    g = gradient(phi, grid)
    mag = np.sqrt(np.sum(g * g, axis=0))
    if math.isinf(p):
        return float(mag.max())
    return integrate(mag**p, grid) ** (1.0 / p)


@dataclass
class DiagnosticsRecord:
    t: float
    total: float
    energy_E: float
    kinetic: float
    dissipation_D: float
    grad_u_sq: float
    w: float
    masses: list
    ck_margins: list
    l1_dev: list
    projected_force: float
    phi_inf: float
    grad_phi_6: float
    min_c: float
    dt: float
    clipped_faces: int = 0
    lp_norms: dict = field(default_factory=dict)

    @staticmethod
    def columns(n):
        cols = ["t", "total", "energy_E", "kinetic", "dissipation_D", "grad_u_sq", "w"]
        for name in ("mass", "ck_margin", "l1_dev"):
            cols += [f"{name}_{i + 1}" for i in range(n)]
        return cols + ["projected_force", "phi_inf", "grad_phi_6", "min_c", "dt"]

    def row(self):
        vals = [self.t, self.total, self.energy_E, self.kinetic, self.dissipation_D, self.grad_u_sq, self.w]
        vals += list(self.masses) + list(self.ck_margins) + list(self.l1_dev)
        vals += [self.projected_force, self.phi_inf, self.grad_phi_6, self.min_c, self.dt]
        return [repr(float(v)) for v in vals]

    @classmethod
    def from_row(cls, row, n):
        v = [float(x) for x in row]
        k = 7
        return cls(
            t=v[0], total=v[1], energy_E=v[2], kinetic=v[3], dissipation_D=v[4], grad_u_sq=v[5], w=v[6],
            masses=v[k : k + n], ck_margins=v[k + n : k + 2 * n], l1_dev=v[k + 2 * n : k + 3 * n],
            projected_force=v[k + 3 * n], phi_inf=v[k + 3 * n + 1], grad_phi_6=v[k + 3 * n + 2],
            min_c=v[k + 3 * n + 3], dt=v[k + 3 * n + 4],
        )

    def problems(self, tol=1e-10):
        """Invariant violations as human-readable strings (empty if fine)."""
        out = []
        nums = [self.total, self.energy_E, self.kinetic, self.dissipation_D, self.w, *self.masses, *self.ck_margins]
        if not all(math.isfinite(x) for x in nums):
            out.append("non-finite value")
        for name in ("energy_E", "dissipation_D", "w"):
            # round-off can leave tiny negatives on exact equilibria
            if getattr(self, name) < -tol:
                out.append(f"{name} < 0")
        for i, m in enumerate(self.ck_margins):
            if m < -tol:
                out.append(f"ck_margin_{i + 1} = {m:.3e}")
        if self.min_c < 0:
            out.append(f"min_c = {self.min_c:.3e}")
        return out


def diagnostics(state, equilibrium, params, grid, dt=0.0, ck_constant=PINSKER_C, lp=False):
    E = energy(state, equilibrium, params, grid)
    K = kinetic_energy(state.u, params, grid)
    dd = dissipation_detail(state, equilibrium, params, grid)
    rec = DiagnosticsRecord(
        t=state.time,
        total=K + E,
        energy_E=E,
        kinetic=K,
        dissipation_D=dd.total,
        grad_u_sq=grad_u_sq(state.u, grid),
        w=deviation_w(state, equilibrium, grid),
        masses=[integrate(c, grid) for c in state.c],
        ck_margins=[
            species_ck_margin(c, cs, grid, s, ck_constant) for c, cs, s in zip(state.c, equilibrium.c, params.species)
        ],
        l1_dev=[integrate(np.abs(c - cs), grid) for c, cs in zip(state.c, equilibrium.c)],
        projected_force=projected_force(state, params, grid),
        phi_inf=float(np.max(np.abs(state.phi))),
        grad_phi_6=grad_phi_norm(state.phi, grid, 6),
        min_c=float(min(c.min() for c in state.c)),
        dt=dt,
        clipped_faces=dd.clipped_faces,
    )
    if lp:
        rec.lp_norms = {
            f"c{i + 1}_L{p}": integrate(np.abs(c) ** p, grid) ** (1.0 / p) for i, c in enumerate(state.c) for p in (2, 4, 6)
        }
    return rec


# ---------------------------------------------------------------- smallness thresholds


@dataclass
class SmallnessReport:
    C_Omega: float
    D_minus: float
    D_plus: float
    z_max: float
    C_tilde: float
    H: float
    F_tilde: float
    beta1: float
    beta2: float
    beta3: float
    lam: float
    w_tilde: float
    delta1: float
    delta2: float
    E_K: float
    w0: float
    verdict_EK: bool
    verdict_w0: bool
    ck_constant: float = PINSKER_C

    def to_json(self):
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    @classmethod
    def from_json(cls, d):
        d = dict(d)
        d["lam"] = d.pop("lambda")
        return cls(**d)


def thresholds(C_Omega, D_minus, H, F_tilde):
    """(λ, w̃, δ1, δ2) from the Poincaré constant, D⁻, H and F̃."""
    for name, v in (("C_Omega", C_Omega), ("D_minus", D_minus), ("H", H), ("F_tilde", F_tilde)):
        if not v > 0:
            raise DomainError(f"{name} must be positive, got {v!r}")
    cd = C_Omega * D_minus
    lam = cd / 2
    w_tilde = math.sqrt(cd / (2 * H))
    delta1 = cd**1.5 / math.sqrt(H) / F_tilde / (8 * math.sqrt(2))
    delta2 = math.sqrt(cd) / math.sqrt(H) / (4 * math.sqrt(2))
    return lam, w_tilde, delta1, delta2


def smallness_report(state0, equilibrium, params, grid, C_tilde=1.0, ck_constant=PINSKER_C, C_Omega=None):
    if not C_tilde > 0:
        raise DomainError(f"C_tilde must be positive, got {C_tilde!r}")
    n = params.nspecies
    D = params.diffusivities
    z = float(np.max(np.abs(params.valences)))
    C_Omega = poincare_constant(grid) if C_Omega is None else C_Omega
    cmax = max(float(np.max(cs)) for cs in equilibrium.c)
    grad_star = grad_phi_norm(equilibrium.phi, grid, math.inf)
    H = 2 * n * C_tilde * D.max() * z**8 / params.epsilon**4
    beta1 = cmax**2 / D.min()
    beta2 = D.max() * z**2 * cmax**2
    beta3 = D.max() * z**5 * grad_star**5
    l1_0 = max(integrate(np.abs(c), grid) for c in state0.c)
    F_tilde = 2 * n * C_tilde * max(2 * beta1 * params.kbt, 2 * beta2 / params.epsilon, ck_constant * beta3 * l1_0)
    lam, w_tilde, delta1, delta2 = thresholds(C_Omega, D.min(), H, F_tilde)
    E_K = kinetic_energy(state0.u, params, grid) + energy(state0, equilibrium, params, grid)
    w0 = deviation_w(state0, equilibrium, grid)
    return SmallnessReport(
        C_Omega=C_Omega, D_minus=float(D.min()), D_plus=float(D.max()), z_max=z, C_tilde=C_tilde, H=H,
        F_tilde=F_tilde, beta1=beta1, beta2=beta2, beta3=beta3, lam=lam, w_tilde=w_tilde, delta1=delta1,
        delta2=delta2, E_K=E_K, w0=w0, verdict_EK=bool(E_K <= delta1), verdict_w0=bool(w0 <= delta2),
        ck_constant=ck_constant,
    )


@dataclass
class EnvelopeResult:
    passed: bool
    failures: list
    max_ratio: float

    def __bool__(self):
        return self.passed


def envelope(t, report):
    return report.w0 * math.exp(-report.lam * t) + report.F_tilde / report.lam * report.E_K


def decay_envelope_check(records, report, rel_slack=0.05, abs_slack=1e-8):
    """w(t) ≤ w(0)e^{-λt} + (F̃/λ)E_K + slack and w(t) ≤ w̃ on every record."""
    failures = []
    worst = 0.0
    slack = abs_slack + rel_slack * report.w0
    for k, r in enumerate(records):
        bound = envelope(r.t, report) + slack
        worst = max(worst, r.w / bound if bound > 0 else 0.0)
        if r.w > bound:
            failures.append({"row": k, "t": r.t, "w": r.w, "bound": bound, "kind": "envelope"})
        if r.w > report.w_tilde:
            failures.append({"row": k, "t": r.t, "w": r.w, "bound": report.w_tilde, "kind": "w_tilde"})
    return EnvelopeResult(not failures, failures, worst)

