"""Command line driver.

Subcommands: simulate, residual, analyze, gauge, iterate. Exit status is 0 on
success, 2 for configuration problems, 3 for numerical failures and 4 for
I/O errors.
"""
from __future__ import annotations

import argparse
import hashlib
import sys
from pathlib import Path

import numpy as np

from . import analysis as an
from . import dynamics as dy
from . import synthetic as sy
from . import waveform as wf
from .config import RunConfig, load_config
from .errors import (
    ConfigurationError,
    DegenerateFieldError,
    DomainError,
    NumericalError,
    ResourceError,
    SnapshotError,
)
from .reports import write_csv, write_json
from .snapshot import MANIFEST, read_trajectory, write_trajectory

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4


def initial_data(cfg: RunConfig, grid, target, scale=1.0):
    d = cfg.data
    rng = np.random.default_rng(cfg.seed)
    if d.kind == "constant" or d.epsilon * scale == 0:
        return sy.constant_field(grid, target)
    if d.kind == "small":
        return sy.small_data(grid, target, d.epsilon * scale, rng, width=d.width)
    if d.kind == "single_shell":
        return sy.single_shell_data(grid, target, d.shell, d.epsilon * scale)
    if target.eta != 1:
        raise ConfigurationError("data.kind 'great_circle' needs a sphere target")
    modes = list(d.modes)[: grid.n] + [0] * max(0, grid.n - len(d.modes))
    return sy.great_circle_field(grid, modes, d.tilt)


def sim_config(cfg: RunConfig, target, dt=None):
    s = cfg.sim
    return dy.SimConfig(target, s.dt if dt is None else dt, s.T, s.integrator,
                        s.retract_every, s.diagnostics_every)


def _out(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dt_family(text):
    if not text:
        return None
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigurationError(f"--dt-family must be comma separated numbers: {exc}") from exc
    if len(vals) < 2 or any(v <= 0 for v in vals):
        raise ConfigurationError("--dt-family needs at least two positive values")
    return vals


def cmd_simulate(args):
    cfg = load_config(args.config, args.seed)
    grid, target = cfg.make_grid(), cfg.make_target()
    u0 = initial_data(cfg, grid, target)
    traj, rep = dy.evolve(u0, grid, sim_config(cfg, target))
    out = _out(args)
    h = cfg.digest()
    if cfg.io.write_snapshots:
        write_trajectory(out / "trajectory", traj, cfg.io.snapshot_every, {"config_hash": h})
    rows = [
        (float(t), float(e), float(eu), float(r), float(c))
        for t, e, eu, r, c in zip(rep.times, rep.energy, rep.unsigned_energy, rep.relative_drift,
                                  rep.constraint_drift)
    ]
    write_csv(out / "energy.csv", "energy", h,
              ("time", "energy", "unsigned_energy", "relative_drift", "constraint_drift"), rows)
    if "json" in cfg.io.formats:
        write_json(out / "simulate.json", "simulate", h, {
            "frames": traj.nt, "dt": traj.dt, "max_relative_drift": rep.max_relative_drift,
            "max_constraint_drift": rep.max_constraint_drift,
        })
    families = _dt_family(args.dt_family)
    if families:
        conv = wf.residual_convergence(u0, grid, target, cfg.sim.T, families, cfg.sim.integrator)
        write_csv(out / "convergence.csv", "convergence", h, ("dt", "residual_l2t"), list(conv.rows()))
    return EXIT_OK


def cmd_residual(args):
    tdir = Path(args.trajectory) if args.trajectory else None
    cfg = load_config(args.config, args.seed) if args.config else None
    if tdir is None:
        if cfg is None:
            raise ConfigurationError("residual needs --trajectory or --config")
        grid, target = cfg.make_grid(), cfg.make_target()
        traj, _ = dy.evolve(initial_data(cfg, grid, target), grid, sim_config(cfg, target))
        h = cfg.digest()
    else:
        traj = read_trajectory(tdir, require_ut=True)
        h = cfg.digest() if cfg else hashlib.sha256((tdir / MANIFEST).read_bytes()).hexdigest()
    if traj.target is None:
        raise ConfigurationError("trajectory has no target")
    rep = wf.box_residual(traj)
    out = _out(args)
    write_csv(out / "residual.csv", "residual", h, ("time", "total") + wf.GROUPS, list(rep.rows()))
    families = _dt_family(args.dt_family)
    if families:
        conv = wf.residual_convergence(traj.u[0], traj.grid, traj.target, traj.horizon - traj.t0, families)
        write_csv(out / "convergence.csv", "convergence", h, ("dt", "residual_l2t"), list(conv.rows()))
        write_json(out / "convergence.json", "convergence", h, {"slope": conv.slope})
    return EXIT_OK


def cmd_analyze(args):
    cfg = load_config(args.config, args.seed)
    grid, target = cfg.make_grid(), cfg.make_target()
    a = cfg.analysis
    u0 = initial_data(cfg, grid, target)
    ut0 = dy.halfwave_rhs(u0, grid, target)
    env = an.fit_envelope(u0, ut0, grid, a.sigma)
    check0 = an.check_envelope(env, grid, u0, ut0, c0_threshold=a.C0)
    traj, _ = dy.evolve(u0, grid, sim_config(cfg, target))
    check_t = an.check_envelope(env, grid, traj=traj, c0_threshold=a.C0)
    h = cfg.digest()
    out = _out(args)
    rows = [(int(k), float(d), float(c), float(r0), float(rt))
            for k, d, c, r0, rt in zip(env.shells, env.data, env.c, check0.ratios, check_t.ratios)]
    write_csv(out / "envelope.csv", "envelope", h, ("shell", "data_norm", "c_k", "ratio_t0", "ratio_run"), rows)
    payload = {
        "envelope": env.check_conditions(),
        "max_ratio_t0": check0.max_ratio,
        "max_ratio_run": check_t.max_ratio,
        "C0": a.C0,
    }
    if target.eta == 1:
        om = an.orthomicro_residual(u0, grid, a.shell_offset)
        payload["orthomicro"] = {"total": om.total, "offset": om.offset,
                                 "per_shell": {str(k): v for k, v in om.per_shell.items()}}
    write_json(out / "analyze.json", "analyze", h, payload)
    return EXIT_OK


def cmd_gauge(args):
    cfg = load_config(args.config, args.seed)
    grid, target = cfg.make_grid(), cfg.make_target()
    a = cfg.analysis
    rows, residuals = [], []
    for s in a.scales:
        u0 = initial_data(cfg, grid, target, s)
        traj, _ = dy.evolve(u0, grid, sim_config(cfg, target))
        gauges = an.gauge_along(traj, a.k_cut, a.M)
        rows.append(an.gauge_diagnostics(gauges, traj.dt))
        residuals.append(an.gauge_residual(traj, a.k_cut, a.band, a.M, gauges))
    table = an.scaling_table(a.scales, rows)
    h = cfg.digest()
    out = _out(args)
    cols = ("scale",) + an.DIAGNOSTIC_KEYS + ("residual", "baseline", "improvement_ratio")
    csv_rows = [
        (float(s),) + tuple(float(rows[i][k]) for k in an.DIAGNOSTIC_KEYS)
        + (residuals[i].residual, residuals[i].baseline, residuals[i].ratio)
        for i, s in enumerate(a.scales)
    ]
    write_csv(out / "gauge.csv", "gauge", h, cols, csv_rows)
    write_json(out / "gauge.json", "gauge", h, {"slopes": table.slopes, "k_cut": a.k_cut, "band": a.band,
                                                "L2x_substitute_for_Ln-1x": True})
    return EXIT_OK


def cmd_iterate(args):
    cfg = load_config(args.config, args.seed)
    grid, target = cfg.make_grid(), cfg.make_target()
    it = cfg.iterate
    u0 = initial_data(cfg, grid, target)
    ut0 = dy.halfwave_rhs(u0, grid, target)
    traj, log = wf.picard_solve(u0, ut0, grid, target, it.T, it.dt, it.tol,
                                max_outer=it.max_outer, max_inner=it.max_inner)
    h = cfg.digest()
    out = _out(args)
    factors = [float("nan")] + log.contraction_factors
    rows = [
        (j + 1, float(d), float(factors[j]) if j < len(factors) else float("nan"),
         int(log.inner_counts[j]), float(log.constraint_violation[j + 1]))
        for j, d in enumerate(log.outer_differences)
    ]
    write_csv(out / "iterate.csv", "iterate", h,
              ("outer_index", "difference", "contraction_factor", "inner_iterations", "constraint_violation"), rows)
    write_json(out / "iterate.json", "iterate", h, {
        "converged": log.converged, "outer_iterations": log.iterations,
        "differences": log.outer_differences, "contraction_factors": log.contraction_factors,
    })
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "residual": cmd_residual,
    "analyze": cmd_analyze,
    "gauge": cmd_gauge,
    "iterate": cmd_iterate,
}


def build_parser():
    p = argparse.ArgumentParser(prog="hwmap", description="half-wave map simulator and diagnostics")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=name != "residual", help="JSON run configuration")
        s.add_argument("--out", default="hwmap-out", help="output directory")
        s.add_argument("--seed", type=int, default=None, help="override the config seed")
        s.add_argument("--dt-family", default=None, help="comma separated dt values for convergence runs")
        if name == "residual":
            s.add_argument("--trajectory", default=None, help="directory written by simulate")
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return COMMANDS[args.command](args)
    except (ConfigurationError, DomainError, DegenerateFieldError) as exc:
        print(f"hwmap: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, ResourceError) as exc:
        idx = getattr(exc, "index", None)
        where = f" (frame {idx})" if idx is not None else ""
        print(f"hwmap: numerical failure{where}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (SnapshotError, OSError) as exc:
        print(f"hwmap: i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
