import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from npns import verification
from npns.elliptic import (
    DirichletPoisson,
    PhysParams,
    SpeciesSpec,
    blocking_normalization,
    boundary_face_values,
    leray_project,
    poincare_constant,
    selective_normalization,
    solve_poisson,
    solve_poisson_boltzmann,
)
from npns.errors import DomainError, NonConvergedError, NotUniformError, PotentialOverflowError
from npns.grid import Grid, face_divergence, face_gradients, face_integrate, integrate


def pair(eps=0.1, d=(1.0, 1.0), z=1):
    return PhysParams(eps, 1.0, 1.0, [SpeciesSpec(z, d[0]), SpeciesSpec(-z, d[1])])


def test_params_validation():
    with pytest.raises(DomainError):
        PhysParams(0.0, 1.0, 1.0, [SpeciesSpec(1, 1.0), SpeciesSpec(-1, 1.0)])
    with pytest.raises(DomainError):
        PhysParams(1.0, 1.0, 1.0, [SpeciesSpec(1, 1.0), SpeciesSpec(2, 1.0)])
    with pytest.raises(DomainError):
        SpeciesSpec(1, -1.0)
    with pytest.raises(DomainError):
        SpeciesSpec(1, 1.0, bc="selective")


def test_poisson_manufactured_order():
    s = verification.poisson_study(3)
    assert s.order > 1.9


def test_poisson_cg_and_direct_agree():
    g = Grid.box((12, 10))
    rho = np.random.default_rng(0).standard_normal(g.shape)
    a = solve_poisson(rho, 0.3, 0.5, g, rtol=1e-13)
    b = DirichletPoisson(g, 0.5).solve(rho, 0.3)
    assert np.allclose(a, b, atol=1e-10)


def test_poisson_zero_data_zero_solution():
    g = Grid.box((8, 8))
    assert np.all(solve_poisson(np.zeros(g.shape), 0.0, 1.0, g) == 0)


def test_symmetric_neutral_equilibrium_is_uniform():
    g = Grid.box((16, 16))
    eq = blocking_normalization([np.full(g.shape, 2.0)] * 2, pair(), g, 0.0)
    assert np.max(np.abs(eq.phi)) < 1e-13
    assert np.allclose(eq.c[0], 2.0, rtol=1e-13)
    assert np.allclose(eq.z_norm, 0.5)


def test_blocking_normalization_matches_masses():
    g = Grid.box((24, 24))
    X, _ = g.centers()
    c0 = [1.0 + 0.3 * np.cos(np.pi * X), np.full(g.shape, 0.5)]
    w = {k: 0.4 * (g.boundary_centers(k)[0] - 0.5) for k in g.face_keys()}
    eq = blocking_normalization(c0, pair(0.05, (1.0, 0.5)), g, w)
    for c, ci in zip(eq.c, c0):
        assert integrate(c, g) == pytest.approx(integrate(ci, g), rel=1e-10)
    assert eq.newton_residual < 1e-9
    # Boltzmann relation
    assert np.allclose(eq.c[0] * eq.z_norm[0], np.exp(-eq.phi), rtol=1e-12)


def test_blocking_normalization_rejects_negative_data():
    g = Grid.box((8, 8))
    c = np.ones(g.shape)
    c[0, 0] = -1
    with pytest.raises(DomainError):
        blocking_normalization([c, np.ones(g.shape)], pair(), g, 0.0)


def test_blocking_normalization_caps_iterations():
    g = Grid.box((16, 16))
    c0 = [np.ones(g.shape), np.full(g.shape, 0.3)]
    with pytest.raises(NonConvergedError):
        blocking_normalization(c0, pair(0.01), g, 0.0, max_outer=2)


def test_pb_newton_monotone_and_accurate():
    params, g, w, Z, src, ex = verification.pb_problem(32)
    eq = solve_poisson_boltzmann(params, g, w, Z, source=src)
    r = [h[0] for h in eq.newton_history]
    assert all(b < a for a, b in zip(r, r[1:]))
    assert eq.newton_iterations <= 15
    assert np.max(np.abs(eq.phi - ex)) < 1e-3


def test_pb_direct_solver_option():
    params, g, w, Z, src, _ = verification.pb_problem(16)
    a = solve_poisson_boltzmann(params, g, w, Z, source=src, linear_solver="direct")
    b = solve_poisson_boltzmann(params, g, w, Z, source=src)
    assert np.allclose(a.phi, b.phi, atol=1e-9)


def test_pb_overflow_detected():
    g = Grid.box((8, 8))
    with pytest.raises((PotentialOverflowError, NonConvergedError)):
        solve_poisson_boltzmann(pair(1.0), g, 800.0, np.ones(2), max_newton=3)


def test_pb_rejects_nonpositive_z():
    g = Grid.box((8, 8))
    with pytest.raises(DomainError):
        solve_poisson_boltzmann(pair(), g, 0.0, np.array([1.0, 0.0]))


def _selective_pair(g, gamma_pos, gamma_neg, key="x-"):
    shape = g.boundary_shape(key)
    return PhysParams(
        0.1,
        1.0,
        1.0,
        [
            SpeciesSpec(1, 1.0, "selective", {key: np.full(shape, gamma_pos)}),
            SpeciesSpec(-1, 1.0, "selective", {key: np.full(shape, gamma_neg)}),
        ],
    )


def test_selective_normalization_unit_z():
    g = Grid.box((8, 8))
    W = 0.7
    params = _selective_pair(g, math.exp(-W), math.exp(W))
    Z = selective_normalization(params, g, W)
    assert Z == pytest.approx([1.0, 1.0], rel=1e-14)


def test_selective_normalization_not_uniform():
    g = Grid.box((8, 8))
    params = _selective_pair(g, 1.0, 1.0)
    w = {k: np.zeros(g.boundary_shape(k)) for k in g.face_keys()}
    w["x-"] = np.linspace(0, 1, 8)
    with pytest.raises(NotUniformError):
        selective_normalization(params, g, w)


def test_selective_species_must_come_first():
    g = Grid.box((8, 8))
    sel = SpeciesSpec(1, 1.0, "selective", {"x-": np.ones(8)})
    with pytest.raises(DomainError):
        PhysParams(0.1, 1.0, 1.0, [SpeciesSpec(-1, 1.0), sel])


@given(st.integers(min_value=0, max_value=10_000))
def test_leray_projection_properties(seed):
    g = Grid.box((6, 7))
    rng = np.random.default_rng(seed)
    F = tuple(rng.standard_normal(g.face_shape(a)) for a in range(2))
    P = leray_project(F, g)
    assert np.max(np.abs(face_divergence(P, g))) < 1e-10
    assert np.all(P[0][0] == 0) and np.all(P[1][:, -1] == 0)
    # idempotent
    PP = leray_project(P, g)
    assert max(np.max(np.abs(a - b)) for a, b in zip(P, PP)) < 1e-10
    # annihilates discrete gradients
    q = rng.standard_normal(g.shape)
    G = leray_project(face_gradients(q, g), g)
    assert max(np.max(np.abs(a)) for a in G) < 1e-10
    # never increases the norm
    assert face_integrate(tuple(p * p for p in P), g) <= face_integrate(tuple(f * f for f in F), g) + 1e-12


def test_leray_projection_periodic_axis():
    g = Grid.box((8, 6), periodic=(True, False))
    rng = np.random.default_rng(1)
    P = leray_project(tuple(rng.standard_normal(g.face_shape(a)) for a in range(2)), g)
    assert np.max(np.abs(face_divergence(P, g))) < 1e-10


def test_poincare_constant_unit_square():
    assert poincare_constant(Grid.box((64, 64))) == pytest.approx(math.pi**2, rel=0.01)


def test_poincare_constant_rectangle_uses_long_side():
    c = poincare_constant(Grid.box((32, 16), lengths=(2.0, 1.0)))
    assert c == pytest.approx((math.pi / 2) ** 2, rel=0.01)


def test_boundary_face_values_exact_for_quadratics():
    g = Grid.box((8, 8))
    X, Y = g.centers()
    f = 1 + X + 2 * X**2
    assert np.allclose(boundary_face_values(g, f, "x-"), 1.0)
    assert np.allclose(boundary_face_values(g, f, "x+"), 4.0)
