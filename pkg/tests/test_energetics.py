import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from npns.elliptic import PhysParams, SpeciesSpec, blocking_normalization
from npns.energetics import (
    DiagnosticsRecord,
    SmallnessReport,
    ck_bound,
    decay_envelope_check,
    diagnostics,
    dissipation,
    dissipation_detail,
    electrochemical_potential,
    electrostatic_energy,
    energy,
    envelope,
    generalized_ck_bound,
    projected_force,
    relative_entropy,
    relative_entropy_density,
    smallness_report,
    thresholds,
)
from npns.errors import DomainError, MassMismatchError
from npns.grid import Grid, gradient, integrate
from npns.transport import State, refresh_potential


def setup_eq(n=16, eps=0.1, W=0.6):
    g = Grid.box((n, n))
    p = PhysParams(eps, 1.0, 1.0, [SpeciesSpec(1, 1.0), SpeciesSpec(-1, 0.5)])
    w = {k: W * (g.boundary_centers(k)[0] - 0.5) for k in g.face_keys()}
    eq = blocking_normalization([np.ones(g.shape), np.full(g.shape, 0.8)], p, g, w)
    return g, p, eq


def eq_state(eq, g):
    return State(0.0, [c.copy() for c in eq.c], g.zero_faces(), eq.phi.copy())


def perturb(g, p, eq, a, seed=0):
    rng = np.random.default_rng(seed)
    c = []
    for cs in eq.c:
        phi = rng.uniform(-1, 1, g.shape)
        phi -= integrate(cs * phi, g) / integrate(cs, g)
        c.append(cs * (1 + a * phi))
    return State(0.0, c, g.zero_faces(), refresh_potential(c, p, g, eq.w))


# ----------------------------------------------------------------- relative entropy


def test_relative_entropy_density_examples():
    assert relative_entropy_density(2.0, 2.0) == 0.0
    assert relative_entropy_density(math.e, 1.0) == pytest.approx(1.0, rel=1e-15)
    assert relative_entropy_density(0.0, 1.0) == 1.0


def test_relative_entropy_density_domain():
    with pytest.raises(DomainError):
        relative_entropy_density(1.0, 0.0)
    with pytest.raises(DomainError):
        relative_entropy_density(-1.0, 1.0)


@given(st.floats(0, 1e6), st.floats(1e-6, 1e6))
def test_relative_entropy_density_nonnegative(c, cs):
    assert relative_entropy_density(c, cs) >= 0


# ----------------------------------------------------------------- energy / dissipation


def test_energy_and_dissipation_vanish_at_equilibrium():
    g, p, eq = setup_eq()
    s = eq_state(eq, g)
    assert abs(energy(s, eq, p, g)) <= 1e-12
    assert abs(dissipation(s, eq, p, g)) <= 1e-12
    mu, clipped = electrochemical_potential(s, eq, p, 0)
    assert np.max(np.abs(mu)) <= 1e-12 and not clipped.any()


def test_energy_single_electrostatic_term():
    g, p, eq = setup_eq()
    X, Y = g.centers()
    bump = np.sin(np.pi * X) * np.sin(np.pi * Y)
    s = eq_state(eq, g)
    s.phi = eq.phi + 0.1 * bump
    assert energy(s, eq, p, g) == pytest.approx(electrostatic_energy(s.phi, eq.phi, p, g), rel=1e-14)
    # continuum value (eps/2) * 0.01 * pi^2 / 2, to discretization accuracy
    assert energy(s, eq, p, g) == pytest.approx(0.5 * p.epsilon * 0.01 * math.pi**2 / 2, rel=0.02)


def test_entropy_quadratic_coefficient():
    g, p, eq = setup_eq()
    a = 1e-3
    rng = np.random.default_rng(3)
    for cs in eq.c:
        phi = rng.uniform(-1, 1, g.shape)
        phi -= integrate(cs * phi, g) / integrate(cs, g)
        expected = 0.5 * a * a * integrate(phi * phi * cs, g)
        assert relative_entropy(cs * (1 + a * phi), cs, g) == pytest.approx(expected, rel=0.01)


def test_energy_is_quadratic_in_amplitude():
    g, p, eq = setup_eq()
    e1 = energy(perturb(g, p, eq, 1e-3), eq, p, g)
    e2 = energy(perturb(g, p, eq, 2e-3), eq, p, g)
    assert e2 / e1 == pytest.approx(4.0, rel=0.01)


def test_electrochemical_potential_shift():
    g, p, eq = setup_eq()
    s = eq_state(eq, g)
    s.c[1] = math.e * eq.c[1]
    mu, _ = electrochemical_potential(s, eq, p, 1)
    assert np.allclose(mu, 1.0, atol=1e-14)


def test_electrochemical_potential_gradient_two_ways():
    errs = []
    for n in (16, 32):
        g = Grid.box((n, n))
        p = PhysParams(0.1, 1.0, 1.0, [SpeciesSpec(2, 1.0), SpeciesSpec(-2, 1.0)])
        X, Y = g.centers()
        c = 1.2 + 0.3 * np.sin(2 * X) * np.cos(Y)
        cs = 1.0 + 0.2 * np.cos(X + Y)
        phi, phis = np.sin(X * Y), 0.5 * X * X
        eq = SimpleNamespace(c=[cs, cs], phi=phis)
        s = State(0.0, [c, c], g.zero_faces(), phi)
        mu, _ = electrochemical_potential(s, eq, p, 0)
        direct = gradient(mu, g)
        alt = gradient(c, g) / c - gradient(cs, g) / cs + 2 * gradient(phi - phis, g)
        errs.append(np.max(np.abs(direct - alt)[:, 1:-1, 1:-1]))
    assert math.log2(errs[0] / errs[1]) > 1.8


def test_clipping_is_flagged():
    g, p, eq = setup_eq(8)
    s = eq_state(eq, g)
    s.c[0] = s.c[0].copy()
    s.c[0][2, 3] = 0.0
    mu, clipped = electrochemical_potential(s, eq, p, 0)
    assert clipped.sum() == 1 and np.all(np.isfinite(mu))
    dd = dissipation_detail(s, eq, p, g)
    assert math.isfinite(dd.total) and dd.total >= 0 and dd.clipped_faces > 0


@given(st.integers(0, 10_000), st.floats(0.0, 0.45))
def test_energy_and_dissipation_nonnegative(seed, a):
    g, p, eq = setup_eq(8)
    s = perturb(g, p, eq, a, seed)
    assert energy(s, eq, p, g) >= -1e-14
    dd = dissipation_detail(s, eq, p, g)
    assert dd.total >= 0 and all(x >= 0 for x in dd.per_species)


# ----------------------------------------------------------------- Csiszár-Kullback


def test_ck_identical_profiles():
    g = Grid.box((4, 4))
    c = np.ones(g.shape)
    assert ck_bound(c, c, g) == (0.0, 0.0, 0.0)


def test_ck_two_level_toy():
    # half the cells at 1.5 and half at 0.5 against c* = 1, total volume 2
    g = Grid((4, 4), (math.sqrt(2) / 4,) * 2)
    c = np.where(np.arange(16).reshape(4, 4) % 2 == 0, 1.5, 0.5)
    lhs, rhs, margin = ck_bound(c, np.ones(g.shape), g)
    assert lhs == pytest.approx(1.0, rel=1e-14)
    exact = 1.5 * math.log(1.5) - 1.5 + 1 + 0.5 * math.log(0.5) - 0.5 + 1
    assert exact == pytest.approx(0.26162, abs=5e-6)
    assert rhs == pytest.approx(4 * exact, rel=1e-13)
    assert rhs == pytest.approx(1.0465, abs=5e-5)
    assert margin > 0


def test_ck_mass_mismatch():
    g = Grid.box((4, 4))
    with pytest.raises(MassMismatchError):
        ck_bound(np.full(g.shape, 2.0), np.ones(g.shape), g)


def test_ck_random_equal_mass_pairs():
    g = Grid.box((5, 4))
    rng = np.random.default_rng(11)
    for _ in range(1000):
        cs = rng.uniform(0.1, 3.0, g.shape)
        c = rng.uniform(0.0, 3.0, g.shape)
        c *= integrate(cs, g) / integrate(c, g)
        assert ck_bound(c, cs, g)[2] >= 0


def test_generalized_ck_examples():
    g = Grid.box((4, 4))
    cs = np.ones(g.shape)
    r = generalized_ck_bound(cs, cs, g)
    assert (r.lhs, r.rhs) == (0.0, 0.0) and r.l1_bound == 0.0
    lhs, rhs, margin = generalized_ck_bound(2 * cs, cs, g)
    assert lhs == pytest.approx(2 * (math.log(2) - 1) + 1, rel=1e-13)
    assert rhs == pytest.approx(0.3862943611, rel=1e-9)
    assert abs(margin) < 1e-12


def test_generalized_ck_random_unequal_masses():
    g = Grid.box((4, 5))
    rng = np.random.default_rng(12)
    for _ in range(1000):
        cs = rng.uniform(0.1, 3.0, g.shape)
        c = rng.uniform(0.0, 3.0, g.shape) * rng.uniform(0.2, 5.0)
        r = generalized_ck_bound(c, cs, g)
        assert r.margin >= -1e-12
        assert integrate(np.abs(c - cs), g) <= r.l1_bound * (1 + 1e-9) + 1e-14


def test_generalized_ck_rejects_nonpositive_reference():
    g = Grid.box((4, 4))
    with pytest.raises(DomainError):
        generalized_ck_bound(np.ones(g.shape), np.zeros(g.shape), g)


# ----------------------------------------------------------------- smallness


def test_thresholds_normalized():
    lam, wt, d1, d2 = thresholds(1.0, 1.0, 1.0, 1.0)
    assert lam == 0.5
    assert d1 == pytest.approx(0.088388, abs=1e-6)
    assert d2 == pytest.approx(0.176777, abs=1e-6)
    assert wt == pytest.approx(1 / math.sqrt(2))


@given(*(st.floats(1e-3, 1e3) for _ in range(4)))
def test_threshold_identities(C, Dm, H, F):
    lam, wt, d1, d2 = thresholds(C, Dm, H, F)
    assert d2 == pytest.approx(2 * d1 * F / (C * Dm), rel=1e-12)
    assert wt * wt * 2 * H == pytest.approx(C * Dm, rel=1e-12)
    assert lam == C * Dm / 2


def test_thresholds_reject_nonpositive():
    with pytest.raises(DomainError):
        thresholds(1.0, 0.0, 1.0, 1.0)


def test_smallness_at_equilibrium():
    g, p, eq = setup_eq()
    rep = smallness_report(eq_state(eq, g), eq, p, g)
    assert abs(rep.E_K) < 1e-12 and rep.w0 == 0.0
    assert rep.verdict_EK and rep.verdict_w0
    assert rep.lam == rep.C_Omega * rep.D_minus / 2
    assert rep.w_tilde**2 * 2 * rep.H == pytest.approx(rep.C_Omega * rep.D_minus, rel=1e-12)
    assert rep.H == pytest.approx(2 * 2 * 1.0 * 1.0 / p.epsilon**4)
    back = SmallnessReport.from_json(rep.to_json())
    assert back == rep and "lambda" in rep.to_json()


def test_smallness_rejects_bad_c_tilde():
    g, p, eq = setup_eq(8)
    with pytest.raises(DomainError):
        smallness_report(eq_state(eq, g), eq, p, g, C_tilde=0.0)


# ----------------------------------------------------------------- records and envelope


def test_record_roundtrip_and_columns():
    g, p, eq = setup_eq(8)
    rec = diagnostics(perturb(g, p, eq, 0.1), eq, p, g, dt=1e-3, lp=True)
    cols = DiagnosticsRecord.columns(2)
    assert cols[:7] == ["t", "total", "energy_E", "kinetic", "dissipation_D", "grad_u_sq", "w"]
    assert cols[-5:] == ["projected_force", "phi_inf", "grad_phi_6", "min_c", "dt"]
    assert len(rec.row()) == len(cols)
    back = DiagnosticsRecord.from_row(rec.row(), 2)
    assert back.row() == rec.row()
    assert rec.problems() == []
    assert set(rec.lp_norms) == {f"c{i}_L{q}" for i in (1, 2) for q in (2, 4, 6)}


def test_record_problems_detected():
    g, p, eq = setup_eq(8)
    rec = diagnostics(eq_state(eq, g), eq, p, g)
    rec.ck_margins[0] = -1e-6
    rec.min_c = -1.0
    msgs = rec.problems()
    assert any("ck_margin_1" in m for m in msgs) and any("min_c" in m for m in msgs)


def test_projected_force_vanishes_under_refinement():
    vals = []
    for n in (16, 32):
        g, p, eq = setup_eq(n, eps=0.5, W=1.0)
        s = eq_state(eq, g)
        vals.append(projected_force(s, p, g))
        assert projected_force(s, p, g, layout="logmean") < 1e-12
    assert vals[1] < vals[0] / 3


def _rec(t, w):
    return SimpleNamespace(t=t, w=w)


def test_envelope_equilibrium_and_monotone():
    g, p, eq = setup_eq(8)
    rep = smallness_report(eq_state(eq, g), eq, p, g)
    assert decay_envelope_check([_rec(t, 0.0) for t in np.linspace(0, 5, 20)], rep).passed
    rep.w0, rep.E_K = 1e-4, 1e-9
    vals = [envelope(t, rep) for t in np.linspace(0, 50, 200)]
    assert all(b <= a for a, b in zip(vals, vals[1:]))
    assert vals[-1] == pytest.approx(rep.F_tilde / rep.lam * rep.E_K, rel=1e-3)


def test_envelope_violation_reported():
    g, p, eq = setup_eq(8)
    rep = smallness_report(perturb(g, p, eq, 1e-3), eq, p, g)
    rep.E_K = 0.0  # isolate the exponential part of the envelope
    recs = [_rec(0.0, rep.w0), _rec(0.001, rep.w0 * 0.99), _rec(10.0, rep.w0 * 2)]
    res = decay_envelope_check(recs, rep)
    assert not res.passed and [f["row"] for f in res.failures] == [2]
    assert res.max_ratio > 1
