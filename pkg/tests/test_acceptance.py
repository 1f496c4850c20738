"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -s`` to see the lines inline; they are
also repeated in the terminal summary.
"""
import json
import math
import time

import numpy as np
import pytest

from hwmap import analysis as an
from hwmap import dynamics as dy
from hwmap import geometry as geo
from hwmap import spectral as sp
from hwmap import synthetic as sy
from hwmap import waveform as wf
from hwmap.cli import EXIT_CONFIG, EXIT_IO, EXIT_NUMERICAL, EXIT_OK, main
from hwmap.geometry import TargetSpec
from hwmap.snapshot import read_snapshot, write_snapshot, write_trajectory
from hwmap.spectral import Grid, SpaceTimeBlock
from hwmap.trajectory import Trajectory

RESULTS = []
SPHERE = TargetSpec.sphere()
HYPER = TargetSpec.hyperbolic()


def report(k, checks):
    """checks: list of (label, ok, measured). Prints and records one line."""
    ok = all(c[1] for c in checks)
    detail = "; ".join(f"{label}={measured}" + ("" if good else " [x]") for label, good, measured in checks)
    line = f"ACCEPTANCE {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def small(grid, target, eps, seed, width=4.0):
    return sy.small_data(grid, target, eps, np.random.default_rng(seed), width=width)


def _g(x):
    return f"{x:.4g}"


def test_01_reformulation_residual():
    g = Grid(1, 128)
    u0 = small(g, SPHERE, 0.01, 1)
    dts = [0.01, 0.005, 0.0025]
    errs, secs = [], []
    for dt in dts:
        t0 = time.perf_counter()
        traj, _ = dy.evolve(u0, g, dy.SimConfig(SPHERE, dt, 0.5))
        errs.append(wf.box_residual(traj).l2_time)
        secs.append(time.perf_counter() - t0)
    slope = sp.fit_loglog_slope(dts, errs)
    report(1, [
        ("slope", abs(slope - 2.0) <= 0.3, _g(slope)),
        ("max_level_seconds", max(secs) <= 60, _g(max(secs))),
    ])


def test_02_conservation():
    g = Grid(1, 128)
    checks = []
    for t in (SPHERE, HYPER):
        traj, rep = dy.evolve(small(g, t, 0.01, 1), g, dy.SimConfig(t, 0.01, 1.0))
        drift = float(np.max(np.abs(rep.relative_drift)))
        cons = float(np.max(np.abs(rep.constraint_drift)))
        checks += [(f"{t.kind}_energy_drift", drift <= 1e-6, _g(drift)),
                   (f"{t.kind}_constraint_drift", cons <= 1e-12, _g(cons))]
        if t.eta == -1:
            checks.append(("upper_sheet", bool(np.all(traj.u[:, 0] > 0)), bool(np.all(traj.u[:, 0] > 0))))
    report(2, checks)


def test_03_equivalence_functional():
    g = Grid(2, 64)
    consts, first = [], []
    for seed in (1, 2):
        u0 = small(g, SPHERE, 0.01, seed, width=6.0)
        traj = wf.wave_evolve(u0, dy.halfwave_rhs(u0, g, SPHERE), g, SPHERE, 0.25, 0.01)
        series = wf.tilde_energy_series(traj)
        first.append(float(series.values[0]))
        consts.append(series.constant)
    spread = abs(consts[0] - consts[1]) / np.mean(consts)
    report(3, [
        ("E_tilde_0", all(v == 0 for v in first), max(map(abs, first))),
        ("C_seed1", math.isfinite(consts[0]), _g(consts[0])),
        ("C_seed2", math.isfinite(consts[1]), _g(consts[1])),
        ("C_spread", spread <= 0.2, _g(spread)),
    ])


def test_04_littlewood_paley_and_transforms():
    rng = np.random.default_rng(4)
    lp_err, rt_err = 0.0, 0.0
    for n, size in ((1, 256), (2, 64), (3, 16)):
        g = Grid(n, size, 2 * math.pi * 3)
        u = rng.standard_normal(g.shape)
        u -= u.mean()
        u = sp.inverse(np.where(g.nyquist_mask, 0, sp.forward(u, g)), g)
        total = sum(sp.lp_decompose(u, g).values())
        lp_err = max(lp_err, float(np.max(np.abs(total - u))))
        rt_err = max(rt_err, float(np.max(np.abs(sp.inverse(sp.forward(u, g), g) - u))))
    g = Grid(1, 32)
    vals = rng.standard_normal((32,) + g.shape)
    vals -= vals.mean(axis=-1, keepdims=True)
    b = SpaceTimeBlock(vals, g, 0.1)
    lo, hi = sp.cone_shells(b)
    piece_sum = sum(2.0 ** (0.3 * j) * math.sqrt(b.dt * g.cell * np.sum(sp.q_project(b, j).values ** 2))
                    for j in range(lo, hi + 1))
    xst_err = abs(sp.xst_norm(b, 0.0, 0.3) - piece_sum) / piece_sum
    q_err = float(np.max(np.abs(sum(sp.q_project(b, j).values for j in range(lo, hi + 1)) - sp.tapered(b))))
    st_rt = float(np.max(np.abs(sp.spacetime_inverse(sp.spacetime_forward(vals, b), b) - vals)))
    report(4, [
        ("partition", lp_err <= 1e-10, _g(lp_err)),
        ("xst_shell_sum_rel", xst_err <= 1e-10, _g(xst_err)),
        ("cone_partition", q_err <= 1e-10, _g(q_err)),
        ("round_trip", max(rt_err, st_rt) <= 1e-12, _g(max(rt_err, st_rt))),
    ])


@pytest.mark.slow
def test_05_commutator_scaling():
    g = Grid(1, 256, 2 * math.pi * 64)
    checks = []
    for variant in ("singlefreq", "singlefreq2"):
        t0 = time.perf_counter()
        rep = sp.commutator_scaling(g, [-5, -4, -3], np.random.default_rng(5), k2=0, variant=variant, samples=8)
        secs = time.perf_counter() - t0
        checks += [(f"{variant}_slope", abs(rep.slope - 1.0) <= 0.2, _g(rep.slope)),
                   (f"{variant}_seconds", secs <= 120, _g(secs))]
    report(5, checks)


def test_06_microlocal_identity():
    worst = 0.0
    for g, modes in ((Grid(1, 64), [3]), (Grid(2, 32), [1, 2])):
        for offset in (10, 2, 0):
            worst = max(worst, an.orthomicro_residual(sy.great_circle_field(g, modes, 0.7), g, offset).total)
    g = Grid(1, 64)
    u = sy.great_circle_field(g, [3], 0.4)
    deltas = [1e-2, 5e-3, 2.5e-3, 1.25e-3]
    vals = [an.orthomicro_residual(math.sqrt(1 + d) * u, g).total for d in deltas]
    slope = sp.fit_loglog_slope(deltas, vals)
    report(6, [
        ("on_sphere_residual", worst <= 1e-10, _g(worst)),
        ("response_slope", abs(slope - 1.0) <= 0.1, _g(slope)),
    ])


def test_07_envelopes():
    g = Grid(1, 128)
    checks, run_max = [], []
    for seed in (1, 2, 3):
        u0 = small(g, SPHERE, 0.05, seed)
        ut0 = dy.halfwave_rhs(u0, g, SPHERE)
        env = an.fit_envelope(u0, ut0, g, 0.25)
        cond = env.check_conditions()
        ok_cond = bool(cond["underneath"] and cond["ratio_bound"])
        r0 = an.check_envelope(env, g, u0, ut0).max_ratio
        traj, _ = dy.evolve(u0, g, dy.SimConfig(SPHERE, 0.02, 1.0))
        run_max.append(an.check_envelope(env, g, traj=traj).max_ratio)
        checks += [(f"conditions_seed{seed}", ok_cond, ok_cond), (f"ratio_t0_seed{seed}", r0 <= 1, _g(r0))]
    spread = (max(run_max) - min(run_max)) / np.mean(run_max)
    finite = all(math.isfinite(r) for r in run_max)
    checks += [("run_max_finite", finite, _g(max(run_max))), ("run_max_spread", spread <= 0.05, _g(spread))]
    report(7, checks)


@pytest.mark.slow
def test_08_gauge():
    g = Grid(1, 128, 2 * math.pi * 16)
    scales = [0.2, 0.1, 0.05, 0.025]
    rows, anti = [], 0.0
    for eps in scales:
        traj, _ = dy.evolve(sy.single_shell_data(g, SPHERE, -3, eps), g, dy.SimConfig(SPHERE, 0.05, 1.0))
        gauges = an.gauge_along(traj, -2)
        for G in gauges:
            for A in G.A.values():
                anti = max(anti, float(np.max(np.abs(A + np.swapaxes(A, -1, -2)))))
        rows.append(an.gauge_diagnostics(gauges, traj.dt))
    table = an.scaling_table(scales, rows)
    orth = table.slopes["orthogonality"]
    defect = table.slopes["transport_defect_L1Linf"]
    ratios = []
    for seed in (1, 2, 3):
        traj, _ = dy.evolve(small(g, SPHERE, 0.05, seed, width=1.0), g, dy.SimConfig(SPHERE, 0.05, 2.0))
        ratios.append(an.gauge_residual(traj, -2).ratio)
    spread = (max(ratios) - min(ratios)) / np.mean(ratios)
    report(8, [
        ("A_antisymmetry", anti <= 1e-14, _g(anti)),
        ("orthogonality_slope", abs(orth - 2.0) <= 0.3, _g(orth)),
        ("transport_defect_slope", defect >= 1.0, _g(defect)),
        ("improvement_ratio", True, _g(float(np.mean(ratios)))),
        ("ratio_spread", spread <= 0.05, _g(spread)),
    ])


@pytest.mark.slow
def test_09_picard():
    g = Grid(1, 64)
    q = sy.constant_field(g, SPHERE)
    _, rest = wf.picard_solve(q, np.zeros_like(q), g, SPHERE, 0.2, 0.02)
    u0 = small(g, SPHERE, 0.1, 1, width=3.0)
    ut0 = dy.halfwave_rhs(u0, g, SPHERE)
    firsts, all_below = [], True
    for horizon in (0.1, 0.2, 0.4):
        traj, log = wf.picard_solve(u0, ut0, g, SPHERE, horizon, 0.01, tol=1e-11)
        factors = log.contraction_factors
        all_below &= log.converged and all(f < 1 for f in factors)
        firsts.append(factors[0])
    ref, _ = dy.evolve(u0, g, dy.SimConfig(SPHERE, 0.01, 0.4))
    diff = max(sp.l2_norm(traj.u[i] - ref.u[i], g) for i in range(ref.nt))
    increasing = all(b > a for a, b in zip(firsts, firsts[1:]))
    report(9, [
        ("rest_iterations", rest.converged and rest.iterations == 1, rest.iterations),
        ("factors_below_one", all_below, all_below),
        ("first_factors_increasing", increasing, "/".join(_g(f) for f in firsts)),
        ("picard_vs_evolve_L2", diff <= 1e-4, _g(diff)),
    ])


def test_10_duhamel():
    g = Grid(1, 64)
    x = g.coordinates()[0]
    dts, errs = [0.1, 0.05, 0.025], []
    for dt in dts:
        traj = wf.duhamel_solve(np.zeros_like(x), 2 * np.sin(x), g, 1.0, dt,
                                forcing=lambda t: -3 * math.sin(2 * t) * np.sin(x))
        exact = np.sin(2 * traj.times)[:, None] * np.sin(x)[None]
        errs.append(float(np.max(np.abs(traj.u - exact))))
    slope = sp.fit_loglog_slope(dts, errs)
    rng = np.random.default_rng(10)
    f = sp.inverse(sp.forward(rng.standard_normal(g.shape), g) * (g.kabs <= 8), g)
    h = sp.inverse(sp.forward(rng.standard_normal(g.shape), g) * (g.kabs <= 8), g)
    free = wf.duhamel_solve(f, h, g, 3.0, 0.05)
    e = np.array([wf.linear_wave_energy(free.u[i], free.u_t[i], g) for i in range(free.nt)])
    drift = float(np.max(np.abs(e - e[0])) / e[0])
    report(10, [
        ("manufactured_slope", abs(slope - 2.0) <= 0.2, _g(slope)),
        ("free_energy_drift", drift <= 1e-10, _g(drift)),
    ])


def _hyperboloid_points(rng, count, spread=2.0):
    xy = rng.uniform(-spread, spread, size=(2, count))
    return np.stack([np.sqrt(1 + np.sum(xy**2, axis=0)), xy[0], xy[1]])


def test_11_hyperbolic_geometry():
    rng = np.random.default_rng(11)
    p, q, r = (_hyperboloid_points(rng, 10_000) for _ in range(3))
    dpq = geo.hyperbolic_distance(p, q)
    zero = float(np.max(geo.hyperbolic_distance(p, p)))
    symmetric = bool(np.array_equal(dpq, geo.hyperbolic_distance(q, p)))
    excess = float(np.max(dpq - geo.hyperbolic_distance(p, r) - geo.hyperbolic_distance(r, q)
                          - 1e-9 * (1 + dpq)))
    g = Grid(1, 64)
    u = small(g, HYPER, 0.2, 0, width=3.0)
    comp = geo.composition_constant(u, g, HYPER, 0.5)
    a, b = rng.standard_normal((2, 3, 1000))
    unit = a / np.linalg.norm(a, axis=0)
    bit_identical = (
        np.array_equal(geo.cross_eta(a, b, 1), np.cross(a, b, axis=0))
        and np.array_equal(geo.dot_eta(a, b, 1), a[0] * b[0] + a[1] * b[1] + a[2] * b[2])
        and np.array_equal(dy.halfwave_rhs(sy.small_data(g, SPHERE, 0.2, np.random.default_rng(0)), g, SPHERE),
                           _euclidean_rhs(sy.small_data(g, SPHERE, 0.2, np.random.default_rng(0)), g))
        and np.array_equal(geo.sphere_distance(unit, unit[:, ::-1]),
                           np.arccos(np.clip(np.sum(unit * unit[:, ::-1], axis=0), -1, 1)))
    )
    report(11, [
        ("zero", zero < 1e-6, _g(zero)),
        ("symmetry", symmetric, symmetric),
        ("triangle_excess", excess <= 0, _g(excess)),
        ("besov_distance", math.isfinite(comp["besov_distance"]), _g(comp["besov_distance"])),
        ("composition_constant", math.isfinite(comp["constant"]), _g(comp["constant"])),
        ("eta_plus_euclidean", bit_identical, bit_identical),
    ])


def _euclidean_rhs(u, g):
    return np.cross(u, sp.half_laplacian(u, g), axis=0)


BASE_CFG = {
    "grid": {"n": 1, "size": 32},
    "sim": {"dt": 0.05, "T": 0.3},
    "data": {"kind": "small", "epsilon": 0.05, "width": 1.0},
    "analysis": {"k_cut": -1, "scales": [1.0, 0.5]},
    "iterate": {"T": 0.1, "dt": 0.02, "tol": 1e-11},
}


def _write_cfg(path, **over):
    raw = json.loads(json.dumps(BASE_CFG))
    for key, val in over.items():
        raw[key] = {**raw.get(key, {}), **val}
    path.write_text(json.dumps(raw))
    return str(path)


def _tree(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def test_12_cli_contract(tmp_path):
    cfg = _write_cfg(tmp_path / "c.json")
    deterministic = True
    for cmd in ("simulate", "analyze", "gauge", "iterate"):
        codes = [main([cmd, "--config", cfg, "--out", str(tmp_path / f"{cmd}{i}"), "--seed", "9"]) for i in (0, 1)]
        deterministic &= codes == [EXIT_OK, EXIT_OK]
        deterministic &= _tree(tmp_path / f"{cmd}0") == _tree(tmp_path / f"{cmd}1")
    rng = np.random.default_rng(12)
    round_trip = True
    for n, size in ((1, 32), (2, 16), (3, 8)):
        grid = Grid(n, size)
        u, ut = rng.standard_normal((2, 3) + grid.shape)
        write_snapshot(tmp_path / "s.hwm", u, grid, -1, 0.5, ut)
        _, u2, ut2 = read_snapshot(tmp_path / "s.hwm")
        round_trip &= u2.tobytes() == u.tobytes() and ut2.tobytes() == ut.tobytes()

    g = Grid(1, 16)
    traj, _ = dy.evolve(sy.constant_field(g, SPHERE), g, dy.SimConfig(SPHERE, 0.1, 0.3))
    write_trajectory(tmp_path / "no_ut", Trajectory(g, traj.dt, traj.u, None, SPHERE))
    bad_json = tmp_path / "bad.json"
    bad_json.write_text("{")
    missing = tmp_path / "missing.json"
    missing.write_text(json.dumps({"grid": {"n": 1, "size": 16}}))
    corrupt = tmp_path / "simulate0" / "trajectory" / "frame_000001.hwm"
    corrupt.write_bytes(corrupt.read_bytes()[:40])
    blocker = tmp_path / "blocker"
    blocker.write_text("")
    injections = {
        "missing_field": (["simulate", "--config", str(missing)], EXIT_CONFIG),
        "bad_json": (["simulate", "--config", str(bad_json)], EXIT_CONFIG),
        "unknown_command": (["explode"], EXIT_CONFIG),
        "residual_without_ut": (["residual", "--trajectory", str(tmp_path / "no_ut")], EXIT_CONFIG),
        "iteration_cap": (["iterate", "--config",
                           _write_cfg(tmp_path / "cap.json", iterate={"max_outer": 1, "tol": 1e-15})], EXIT_NUMERICAL),
        "blow_up": (["simulate", "--config",
                     _write_cfg(tmp_path / "blow.json", target={"kind": "hyperbolic"}, sim={"dt": 0.125, "T": 20.0},
                                data={"epsilon": 8.0})], EXIT_NUMERICAL),
        "corrupt_snapshot": (["residual", "--trajectory", str(corrupt.parent)], EXIT_IO),
        "unwritable_out": (["simulate", "--config", cfg, "--out", str(blocker)], EXIT_IO),
    }
    wrong = []
    for name, (argv, want) in injections.items():
        if "--out" not in argv:
            argv = argv + ["--out", str(tmp_path / "inj")]
        got = main(argv)
        if got != want:
            wrong.append(f"{name}:{got}!={want}")
    report(12, [
        ("deterministic", deterministic, deterministic),
        ("snapshot_round_trip", round_trip, round_trip),
        ("exit_codes", not wrong, ",".join(wrong) or f"{len(injections)} ok"),
    ])
