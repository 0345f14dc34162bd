"""Exponential decay of w(t) against the rate lambda = C_Omega D^- / 2.

Runs a small-perturbation blocking configuration for ``--horizon`` multiples of
1/lambda, fits log w(t) over the tail and compares the slope with lambda and
with the envelope bound.  With ``--plot`` a PNG is written (needs matplotlib).
"""
import argparse
import math

import numpy as np

from npns.energetics import decay_envelope_check, envelope, smallness_report
from npns.scenario import RunConfig, build_equilibrium, make_problem, perturbed_initial_data
from npns.simulate import run


def main():
    ap = argparse.ArgumentParser(description="w(t) decay versus the Poincare rate")
    ap.add_argument("--config", default="configs/blocking_small.json")
    ap.add_argument("--cells", type=int, default=None, help="override the grid resolution")
    ap.add_argument("--horizon", type=float, default=6.0, help="simulated time in units of 1/lambda")
    ap.add_argument("--plot", help="PNG output path")
    args = ap.parse_args()

    cfg = RunConfig.load(args.config)
    if args.cells:
        cfg.grid.cells = [args.cells] * cfg.grid.dim
    pb = make_problem(cfg)
    eq = build_equilibrium(cfg, pb)
    s0 = perturbed_initial_data(eq, cfg, pb)
    rep = smallness_report(s0, eq, pb.params, pb.grid, cfg.C_tilde, cfg.ck_constant)
    t_end = args.horizon / rep.lam
    res = run(s0, eq, pb.params, pb.grid, t_end, opts=cfg.step_options(), diagnostics_every=10)

    t = np.array([r.t for r in res.records])
    w = np.array([r.w for r in res.records])
    tail = (t > 0.3 * t_end) & (w > 1e-30)
    slope = -np.polyfit(t[tail], np.log(w[tail]), 1)[0] if tail.sum() > 2 else math.nan
    check = decay_envelope_check(res.records, rep)
    print(f"lambda (discrete C_Omega)   {rep.lam:.4f}")
    print(f"fitted decay rate of w      {slope:.4f}   ratio {slope / rep.lam:.2f}")
    print(f"w(0) = {rep.w0:.3e}, w(end) = {w[-1]:.3e}, steps = {res.steps}")
    print(f"envelope check: {'pass' if check.passed else 'FAIL'} (max w/bound {check.max_ratio:.3f})")

    if args.plot:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.semilogy(t * rep.lam, w, label="w(t)")
        ax.semilogy(t * rep.lam, [envelope(x, rep) for x in t], "--", label="envelope")
        ax.set_xlabel("lambda t")
        ax.legend()
        fig.tight_layout()
        fig.savefig(args.plot, dpi=120)


if __name__ == "__main__":
    main()
