import copy
import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from npns.energetics import deviation_w
from npns.errors import ConfigError, DomainError, NotUniformError
from npns.flow import divergence_residual
from npns.grid import integrate
from npns.scenario import (
    RunConfig,
    build_equilibrium,
    initial_velocity,
    make_problem,
    perturbation_shape,
    perturbed_initial_data,
    wall_factor,
)

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def base(**over):
    d = {
        "schema": 1,
        "grid": {"dim": 2, "cells": [16, 16], "extents": [1.0, 1.0]},
        "physics": {"epsilon": 0.1, "nu": 0.5, "kbt": 1.0},
        "species": [
            {"valence": 1, "diffusivity": 1.0, "bulk": 1.0},
            {"valence": -1, "diffusivity": 0.7, "bulk": 1.0},
        ],
        "initial": {"amplitude": 1e-2, "shape": "trig", "mode": [1, 2]},
    }
    d.update(over)
    return d


def selective_dict(W=1.0):
    return base(
        species=[
            {"valence": 1, "diffusivity": 1.0, "bc": "selective", "gamma": [{"face": "x+", "value": math.exp(-W)}]},
            {"valence": -1, "diffusivity": 1.0, "bc": "selective", "gamma": [{"face": "x+", "value": math.exp(W)}]},
        ],
        boundary_potential={"kind": "linear", "value": 0.0, "gradient": [W, 0.0]},
    )


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.json")), ids=lambda p: p.name)
def test_shipped_configs_load_and_roundtrip(path):
    cfg = RunConfig.load(path)
    again = RunConfig.from_dict(json.loads(cfg.dumps()))
    assert again == cfg


def test_defaults_filled():
    cfg = RunConfig.from_dict(base())
    assert cfg.time.diagnostics_every == 1 and cfg.flow.enabled and cfg.C_tilde == 1.0


@pytest.mark.parametrize(
    "mutate, needle",
    [
        (lambda d: d.update(extra=1), "unknown key"),
        (lambda d: d["grid"].update(spacing=0.1), "config.grid: unknown key"),
        (lambda d: d.update(schema=2), "schema"),
        (lambda d: d.pop("schema"), "config.schema: required"),
        (lambda d: d["species"][1].update(diffusivity=-1.0), "species[1].diffusivity"),
        (lambda d: d["physics"].update(epsilon="small"), "physics.epsilon: expected a number"),
        (lambda d: d["grid"].update(cells=[16, 2]), "grid.cells"),
        (lambda d: d["grid"].update(dim=3), "one entry per dimension"),
        (lambda d: d["species"][0].update(valence=-2), "positive and one negative"),
        (lambda d: d["species"][0].update(bc="leaky"), "species[0].bc"),
        (lambda d: d["species"][0].update(gamma=[{"face": "x-", "value": 1.0}]), "blocking species"),
        (lambda d: d["initial"].update(shape="star"), "initial.shape"),
        (lambda d: d["initial"].update(mode=[1]), "initial.mode"),
        (lambda d: d.update(time={"t_end": 0.0}), "time.t_end"),
        (lambda d: d.update(flow={"scheme": "weno"}), "flow.scheme"),
        (lambda d: d.update(flow={"enabled": 1}), "true/false"),
        (lambda d: d.update(boundary_potential={"kind": "table"}), "faces"),
        (lambda d: d.update(C_tilde=0), "C_tilde"),
        (lambda d: d.update(seed=1.5), "expected an integer"),
    ],
)
def test_invalid_configs_name_the_field(mutate, needle):
    d = copy.deepcopy(base())
    mutate(d)
    with pytest.raises(ConfigError) as err:
        RunConfig.from_dict(d)
    assert needle in str(err.value)


def test_selective_must_precede_blocking():
    d = selective_dict()
    d["species"] = [{"valence": -1, "diffusivity": 1.0}, d["species"][0]]
    with pytest.raises(ConfigError, match="selective species before"):
        RunConfig.from_dict(d)


def test_load_reports_bad_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{ not json")
    with pytest.raises(ConfigError, match="invalid JSON"):
        RunConfig.load(p)
    with pytest.raises(ConfigError, match="cannot read"):
        RunConfig.load(tmp_path / "missing.json")


def test_table_potential():
    cfg = RunConfig.from_dict(base(boundary_potential={"kind": "table", "faces": {"x-": 0.5, "y+": list(range(16))}}))
    g = cfg.make_grid()
    w = cfg.make_potential(g)
    assert np.all(w["x-"] == 0.5) and w["y+"][3] == 3.0 and np.all(w["x+"] == 0.0)
    bad = RunConfig.from_dict(base(boundary_potential={"kind": "table", "faces": {"q+": 1.0}}))
    with pytest.raises(ConfigError):
        bad.make_potential(g)


def test_gamma_patch_limits():
    d = selective_dict()
    d["species"][0]["gamma"] = [{"face": "x+", "value": 2.0, "lower": [0.25], "upper": [0.75]}]
    p = RunConfig.from_dict(d).make_params()
    gam = p.species[0].gamma["x+"]
    assert np.isnan(gam[0]) and gam[8] == 2.0


def test_symmetric_config_uniform_equilibrium():
    cfg = RunConfig.from_dict(base())
    eq = build_equilibrium(cfg)
    assert np.max(np.abs(eq.phi)) < 1e-13
    assert all(np.allclose(c, 1.0, rtol=1e-13) for c in eq.c)


def test_selective_config_unit_normalization():
    eq = build_equilibrium(RunConfig.from_dict(selective_dict(1.0)))
    assert np.allclose(eq.z_norm, 1.0, rtol=1e-12)
    assert eq.newton_residual < 1e-9


def test_selective_config_not_uniform():
    d = selective_dict(1.0)
    d["boundary_potential"] = {"kind": "linear", "value": 0.0, "gradient": [1.0, 1.0]}
    with pytest.raises(NotUniformError):
        build_equilibrium(RunConfig.from_dict(d))


def test_mixed_config_builds():
    d = selective_dict(0.5)
    d["species"] = [d["species"][0], {"valence": -1, "diffusivity": 1.0, "bulk": 1.0}]
    eq = build_equilibrium(RunConfig.from_dict(d))
    assert eq.z_norm[0] == pytest.approx(1.0, rel=1e-12)
    assert np.all(np.isfinite(eq.phi))


def test_zero_amplitude_is_exact_equilibrium():
    d = base()
    d["initial"] = {"amplitude": 0.0, "velocity_amplitude": 0.0}
    cfg = RunConfig.from_dict(d)
    pb = make_problem(cfg)
    eq = build_equilibrium(cfg, pb)
    s = perturbed_initial_data(eq, cfg, pb)
    assert all(np.array_equal(a, b) for a, b in zip(s.c, eq.c))
    assert all(np.all(u == 0) for u in s.u)
    assert deviation_w(s, eq, pb.grid) == 0.0


@pytest.mark.parametrize("shape", ["trig", "bump", "random"])
def test_perturbation_preserves_blocking_masses(shape):
    d = base(boundary_potential={"kind": "linear", "value": -0.5, "gradient": [1.0, 0.0]})
    d["initial"] = {"amplitude": 0.2, "shape": shape, "velocity_amplitude": 0.3}
    cfg = RunConfig.from_dict(d)
    pb = make_problem(cfg)
    eq = build_equilibrium(cfg, pb)
    s = perturbed_initial_data(eq, cfg, pb)
    for c, cs in zip(s.c, eq.c):
        assert integrate(c, pb.grid) == pytest.approx(integrate(cs, pb.grid), rel=1e-12)
        assert c.min() >= 0
    assert divergence_residual(s.u, pb.grid) <= 1e-10
    assert max(np.max(np.abs(u)) for u in s.u) == pytest.approx(0.3)


def test_w0_scales_quadratically():
    ws = []
    for a in (1e-3, 2e-3):
        d = base()
        d["initial"] = {"amplitude": a, "shape": "bump"}
        cfg = RunConfig.from_dict(d)
        pb = make_problem(cfg)
        eq = build_equilibrium(cfg, pb)
        ws.append(deviation_w(perturbed_initial_data(eq, cfg, pb), eq, pb.grid))
    assert ws[1] / ws[0] == pytest.approx(4.0, rel=1e-10)


def test_selective_perturbation_vanishes_on_walls():
    d = selective_dict()
    d["initial"] = {"amplitude": 0.1, "shape": "trig"}
    cfg = RunConfig.from_dict(d)
    g = cfg.make_grid()
    assert np.max(np.abs(wall_factor(g)[0])) < np.sin(np.pi / 16) + 1e-12
    pb = make_problem(cfg)
    eq = build_equilibrium(cfg, pb)
    s = perturbed_initial_data(eq, cfg, pb)
    assert np.max(np.abs(s.c[0] / eq.c[0] - 1)) <= 0.1 + 1e-12


def test_large_amplitude_clamp_refused():
    d = base()
    d["initial"] = {"amplitude": 50.0, "shape": "bump"}
    cfg = RunConfig.from_dict(d)
    pb = make_problem(cfg)
    eq = build_equilibrium(cfg, pb)
    with pytest.raises(DomainError, match="10%"):
        perturbed_initial_data(eq, cfg, pb)


def test_random_shape_is_seeded():
    g = RunConfig.from_dict(base()).make_grid()
    a = perturbation_shape(g, "random", 0, seed=3)
    assert np.array_equal(a, perturbation_shape(g, "random", 0, seed=3))
    assert not np.array_equal(a, perturbation_shape(g, "random", 0, seed=4))
    assert not np.array_equal(a, perturbation_shape(g, "random", 1, seed=3))


@given(st.floats(0.0, 3.0), st.sampled_from([[1, 1], [2, 1], [3, 2]]))
def test_initial_velocity_admissible(amp, mode):
    g = RunConfig.from_dict(base()).make_grid()
    u = initial_velocity(g, amp, mode)
    assert divergence_residual(u, g) <= 1e-10 * max(1.0, amp)
    assert np.all(u[0][0] == 0) and np.all(u[1][:, -1] == 0)
