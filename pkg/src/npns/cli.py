"""Command-line driver: ``npns run|steady|verify|convergence``.

Exit status: 0 success, 1 configuration or input error, 2 invariant breach,
3 solver non-convergence.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from .energetics import DiagnosticsRecord, SmallnessReport, decay_envelope_check, smallness_report
from .errors import (
    CFLViolation,
    ConfigError,
    DomainError,
    InvariantViolation,
    NegativeConcentrationError,
    NonConvergedError,
    NotUniformError,
    PotentialOverflowError,
)
from .grid import AXES, write_field
from .scenario import RunConfig, build_equilibrium, make_problem, perturbed_initial_data
from .simulate import run as run_loop

log = logging.getLogger("npns")

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT, EXIT_SOLVER = 0, 1, 2, 3
MONOTONE_SLACK = 1e-10
CK_TOL = 1e-12
MASS_TOL = 1e-12


def exit_code(exc):
    if isinstance(exc, (ConfigError, DomainError, NotUniformError)):
        return EXIT_CONFIG
    if isinstance(exc, (InvariantViolation, CFLViolation, NegativeConcentrationError)):
        return EXIT_INVARIANT
    if isinstance(exc, (NonConvergedError, PotentialOverflowError)):
        return EXIT_SOLVER
    raise exc


def thread_limit():
    """Context capping BLAS/OpenMP threads at $NPNS_THREADS (unset: no cap)."""
    raw = os.environ.get("NPNS_THREADS", "").strip()
    if not raw:
        return nullcontext()
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"NPNS_THREADS must be a positive integer, got {raw!r}") from exc
    if n < 1:
        raise ConfigError(f"NPNS_THREADS must be a positive integer, got {raw!r}")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def _say(args, *parts):
    if not args.quiet:
        print(*parts)


def _field_names(params):
    return [s.name or f"c{i + 1}" for i, s in enumerate(params.species)]


def write_state(directory, state, grid, params):
    directory = Path(directory)
    for name, c in zip(_field_names(params), state.c):
        write_field(directory / f"{name}.fld", c, grid, name)
    write_field(directory / "phi.fld", state.phi, grid, "phi")
    for a, ua in enumerate(state.u):
        write_field(directory / f"u_{AXES[a]}.fld", ua, grid, f"u_{AXES[a]}")


def _time_label(t):
    return f"{t:.6e}"


def cmd_steady(args):
    cfg = RunConfig.load(args.config)
    pb = make_problem(cfg)
    eq = build_equilibrium(cfg, pb)
    out = Path(args.out)
    eqdir = out / "equilibrium"
    for name, c in zip(_field_names(pb.params), eq.c):
        write_field(eqdir / f"{name}.fld", c, pb.grid, name)
    write_field(eqdir / "phi.fld", eq.phi, pb.grid, "phi")
    summary = {
        "Z": [float(z) for z in eq.z_norm],
        "newton_residual": eq.newton_residual,
        "newton_iterations": eq.newton_iterations,
        "masses": eq.masses(pb.grid),
        "phi_inf": float(np.max(np.abs(eq.phi))),
    }
    (out / "steady.json").write_text(json.dumps(summary, indent=2))
    _say(args, f"equilibrium: Z = {summary['Z']}, residual {eq.newton_residual:.3e}, masses {summary['masses']}")
    return EXIT_OK


def cmd_run(args):
    cfg = RunConfig.load(args.config)
    pb = make_problem(cfg)
    grid, params = pb.grid, pb.params
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    eq = build_equilibrium(cfg, pb)
    eqdir = out / "equilibrium"
    for name, c in zip(_field_names(params), eq.c):
        write_field(eqdir / f"{name}.fld", c, grid, name)
    write_field(eqdir / "phi.fld", eq.phi, grid, "phi")
    state = perturbed_initial_data(eq, cfg, pb)
    report = smallness_report(state, eq, params, grid, cfg.C_tilde, cfg.ck_constant)
    small = report.to_json()
    small["blocking"] = [s.bc == "blocking" for s in params.species]
    (out / "smallness.json").write_text(json.dumps(small, indent=2))
    _say(args, f"lambda={report.lam:.4g}  E_K={report.E_K:.3e} (delta1={report.delta1:.3e})  w0={report.w0:.3e} (delta2={report.delta2:.3e})")

    n = params.nspecies
    fh = open(out / "diag.csv", "w", newline="")
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(DiagnosticsRecord.columns(n))
    breach = []

    def on_record(rec):
        problems = rec.problems()
        if problems:
            breach.append((rec, problems))
            raise InvariantViolation(f"t={rec.t!r}: " + "; ".join(problems), record=rec)
        writer.writerow(rec.row())

    def on_snapshot(s):
        write_state(out / "snapshots" / _time_label(s.time), s, grid, params)

    t = cfg.time
    status = EXIT_OK
    message = "ok"
    result = None
    try:
        result = run_loop(
            state, eq, params, grid, t.t_end, dt=t.dt, opts=cfg.step_options(),
            diagnostics_every=t.diagnostics_every, snapshot_every=t.snapshot_every,
            on_record=on_record, on_snapshot=on_snapshot, max_steps=t.max_steps,
            monotone_slack=MONOTONE_SLACK, ck_constant=cfg.ck_constant,
        )
    except (InvariantViolation, CFLViolation, NegativeConcentrationError) as exc:
        status, message = EXIT_INVARIANT, str(exc)
        rec = getattr(exc, "record", None)
        if rec is not None and not breach:
            writer.writerow(rec.row())
    finally:
        fh.close()

    summary = {"status": status, "message": message, "wall_time": time.perf_counter() - started}
    if result is not None:
        last = result.records[-1]
        summary.update(
            steps=result.steps,
            t_final=result.state.time,
            w_final=last.w,
            total_final=last.total,
            monotone=bool(result.max_increase <= MONOTONE_SLACK),
            max_relative_increase=result.max_increase if math.isfinite(result.max_increase) else None,
            min_concentration=result.min_c,
            max_divergence=result.max_divergence,
            snapshots=[_time_label(s) for s in result.snapshots],
        )
        write_state(out / "final", result.state, grid, params)
    else:
        summary["monotone"] = False
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    if status == EXIT_OK:
        _say(args, f"done: {summary['steps']} steps, w={summary['w_final']:.3e}, min c={summary['min_concentration']:.3e}")
    else:
        print(f"invariant breach: {message}", file=sys.stderr)
    return status


def read_diag(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ConfigError(f"{path}: empty file")
    header = rows[0]
    masses = [h for h in header if h.startswith("mass_")]
    n = len(masses)
    if n == 0 or header != DiagnosticsRecord.columns(n):
        raise ConfigError(f"{path}: unexpected header")
    records = []
    for k, row in enumerate(rows[1:], start=2):
        try:
            records.append(DiagnosticsRecord.from_row(row, n))
        except (ValueError, IndexError) as exc:
            raise ConfigError(f"{path}: malformed row {k}") from exc
    return records


def verify_records(records, small=None, blocking=None):
    """List of (check, passed, detail) tuples."""
    checks = []
    bad = None
    for k in range(1, len(records)):
        prev, cur = records[k - 1], records[k]
        if cur.total - prev.total > MONOTONE_SLACK * max(1.0, prev.total):
            bad = (k, cur.t, cur.total - prev.total)
            break
    checks.append(("energy monotone", bad is None, "" if bad is None else f"line {bad[0] + 2} (t={bad[1]:.6g}) rose by {bad[2]:.3e}"))

    worst = min((m for r in records for m in r.ck_margins), default=0.0)
    checks.append(("CK margins", worst >= -CK_TOL, f"min margin {worst:.3e}"))

    n = len(records[0].masses) if records else 0
    blocking = blocking if blocking is not None else [True] * n
    drift = 0.0
    for i in range(n):
        if not blocking[i]:
            continue
        m0 = records[0].masses[i]
        drift = max(drift, max(abs(r.masses[i] - m0) / abs(m0) for r in records))
    checks.append(("mass conservation", drift <= MASS_TOL, f"max relative drift {drift:.3e}"))

    min_c = min((r.min_c for r in records), default=0.0)
    checks.append(("positivity", min_c >= 0, f"min c {min_c:.3e}"))

    if small is None:
        checks.append(("decay envelope", True, "skipped (no smallness report)"))
    elif not (small.verdict_EK and small.verdict_w0) or not all(blocking):
        checks.append(("decay envelope", True, "skipped (smallness verdict false or selective species)"))
    else:
        res = decay_envelope_check(records, small)
        detail = f"max w/bound {res.max_ratio:.3f}"
        if res.failures:
            f = res.failures[0]
            detail += f"; first failure line {f['row'] + 2} (t={f['t']:.6g}, {f['kind']})"
        checks.append(("decay envelope", res.passed, detail))
    return checks


def cmd_verify(args):
    paths = list(args.paths or [])
    if args.out:
        base = Path(args.out)
        diag, small_path = base / "diag.csv", base / "smallness.json"
    elif paths:
        diag = Path(paths[0])
        small_path = Path(paths[1]) if len(paths) > 1 else diag.with_name("smallness.json")
    else:
        raise ConfigError("verify needs --out <run dir> or a diag.csv path")
    if not diag.exists():
        raise ConfigError(f"{diag}: not found")
    records = read_diag(diag)
    small, blocking = None, None
    if small_path.exists():
        try:
            data = json.loads(small_path.read_text())
            blocking = data.pop("blocking", None)
            small = SmallnessReport.from_json(data)
        except (json.JSONDecodeError, TypeError, KeyError) as exc:
            raise ConfigError(f"{small_path}: malformed smallness report") from exc
    checks = verify_records(records, small, blocking)
    width = max(len(c[0]) for c in checks)
    for name, ok, detail in checks:
        print(f"{name:<{width}}  {'PASS' if ok else 'FAIL'}  {detail}")
    return EXIT_OK if all(ok for _, ok, _ in checks) else EXIT_INVARIANT


def cmd_convergence(args):
    from . import verification

    if args.levels < 2:
        raise ConfigError("--levels must be at least 2")
    cfg = RunConfig.load(args.config) if args.config else None
    studies = [fn(args.levels) for fn in verification.STUDIES.values()]
    studies.append(verification.budget_study(args.levels, cfg))
    for s in studies:
        gate = "" if s.threshold is None else f" (need >= {s.threshold})"
        verdict = "info" if s.threshold is None else ("PASS" if s.passed else "FAIL")
        orders = ", ".join(f"{o:.3f}" for o in s.orders)
        _say(args, f"{s.name:<20} {s.kind:<5} orders [{orders}]{gate}  {verdict}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "convergence.json").write_text(json.dumps([s.to_json() for s in studies], indent=2, default=float))
    return EXIT_OK if all(s.passed for s in studies) else EXIT_SOLVER


def build_parser():
    p = argparse.ArgumentParser(prog="npns", description="Nernst-Planck-Navier-Stokes solver and verification harness")
    p.add_argument("--quiet", action="store_true", help="only print errors")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp_, config=True, out=True):
        sp_.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS, help="only print errors")
        if config:
            sp_.add_argument("--config", required=config == "required", help="run configuration (JSON, schema 1)")
        if out:
            sp_.add_argument("--out", help="output directory")

    r = sub.add_parser("run", help="coupled simulation with diagnostics and snapshots")
    common(r, config="required")
    s = sub.add_parser("steady", help="equilibrium solve only")
    common(s, config="required")
    v = sub.add_parser("verify", help="re-check a finished run")
    common(v, config=False)
    v.add_argument("paths", nargs="*", help="diag.csv [smallness.json] (alternative to --out)")
    c = sub.add_parser("convergence", help="refinement studies and observed orders")
    common(c)
    c.add_argument("--levels", type=int, default=3, help="number of refinement levels (>= 2)")
    return p


COMMANDS = {"run": cmd_run, "steady": cmd_steady, "verify": cmd_verify, "convergence": cmd_convergence}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.command in ("run", "steady") and not args.out:
        print("error: --out is required", file=sys.stderr)
        return EXIT_CONFIG
    try:
        with thread_limit():
            return COMMANDS[args.command](args)
    except Exception as exc:  # mapped onto exit statuses; anything else propagates
        code = exit_code(exc)
        print(f"error [{getattr(exc, 'code', 'ERROR')}]: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
