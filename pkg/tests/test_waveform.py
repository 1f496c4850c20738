import math

import numpy as np
import pytest

from hwmap import dynamics as dy
from hwmap import geometry as geo
from hwmap import spectral as sp
from hwmap import synthetic as sy
from hwmap import waveform as wf
from hwmap.errors import ConfigurationError, DivergenceError, DomainError
from hwmap.geometry import TargetSpec
from hwmap.spectral import Grid
from hwmap.trajectory import Trajectory


def small(grid, target, eps=0.05, seed=0, width=3.0):
    return sy.small_data(grid, target, eps, np.random.default_rng(seed), width=width)


# ---------------------------------------------------------------- wave form


def test_wave_rhs_vanishes_at_rest(target):
    g = Grid(2, 16)
    q = sy.constant_field(g, target)
    assert not np.any(wf.wave_rhs(q, np.zeros_like(q), g, target))


def test_on_shell_rate_identity(target):
    g = Grid(1, 64)
    u = small(g, target, 0.3)
    ut = dy.halfwave_rhs(u, g, target)
    c = geo.cross_eta(sp.half_laplacian(u, g), u, target)
    assert np.allclose(geo.dot_eta(ut, ut, target), geo.dot_eta(c, c, target), atol=1e-10)


def test_projected_groups_are_tangent(target):
    g = Grid(2, 16)
    u = small(g, target, 0.3)
    groups = wf.wave_rhs_groups(u, dy.halfwave_rhs(u, g, target), g, target)
    for key in ("group_ii", "group_iii"):
        assert np.max(np.abs(geo.dot_eta(groups[key], u, target))) < 1e-10


def test_group_i_is_normal(target):
    g = Grid(1, 32)
    u = small(g, target, 0.3)
    gi = wf.quadratic_group(u, dy.halfwave_rhs(u, g, target), g, target)
    assert np.max(np.abs(geo.tangent_project(gi, u, target))) < 1e-12


def test_wave_rhs_rejects_off_target():
    g = Grid(1, 16)
    t = TargetSpec.sphere()
    u = 1.5 * sy.constant_field(g, t)
    with pytest.raises(DomainError):
        wf.wave_rhs(u, np.zeros_like(u), g, t)


# ---------------------------------------------------------------- box residual


def test_box_residual_constant_trajectory(target):
    g = Grid(1, 16)
    traj, _ = dy.evolve(sy.constant_field(g, target), g, dy.SimConfig(target, 0.1, 0.5))
    rep = wf.box_residual(traj)
    assert not np.any(rep.total)
    assert len(rep.times) == traj.nt - 2
    assert rep.times[0] == pytest.approx(traj.dt)


def test_box_residual_needs_three_frames_and_rates():
    g = Grid(1, 16)
    t = TargetSpec.sphere()
    u = sy.constant_field(g, t)
    with pytest.raises(ConfigurationError):
        wf.box_residual(Trajectory(g, 0.1, np.stack([u, u]), np.zeros((2,) + u.shape), t))
    with pytest.raises(ConfigurationError):
        wf.box_residual(Trajectory(g, 0.1, np.stack([u, u, u]), None, t))


def test_box_residual_second_order(target):
    g = Grid(1, 64)
    rep = wf.residual_convergence(small(g, target, 0.05), g, target, 0.2, [0.02, 0.01, 0.005])
    assert rep.slope == pytest.approx(2.0, abs=0.3)
    assert list(rep.rows())[0][0] == 0.02


# ---------------------------------------------------------------- X and tilde energy


def test_x_vanishes_on_exact_flow_data(target):
    g = Grid(2, 16)
    u = small(g, target, 0.3)
    x = wf.x_field(u, dy.halfwave_rhs(u, g, target), g, target)
    assert not np.any(x)
    assert wf.tilde_energy(x, g, target) == 0


def test_tilde_energy_quadratic_in_perturbation():
    g = Grid(2, 16)
    t = TargetSpec.sphere()
    u = small(g, t, 0.3)
    noise = geo.tangent_project(np.random.default_rng(1).standard_normal(u.shape), u, t)
    noise = noise - sp.mean_value(noise, g).reshape(3, 1, 1)
    ut = dy.halfwave_rhs(u, g, t)
    deltas = np.array([1e-2, 5e-3, 2.5e-3])
    vals = [wf.tilde_energy(wf.x_field(u, ut + d * noise, g, t), g, t) for d in deltas]
    assert sp.fit_loglog_slope(deltas, vals) == pytest.approx(2.0, abs=1e-8)


def test_tilde_energy_mean_policy(grid1):
    x = np.ones((3,) + grid1.shape)
    with pytest.raises(DomainError):
        wf.tilde_energy(x, grid1)
    assert wf.tilde_energy(x, grid1, mean="drop") == 0
    with pytest.raises(ConfigurationError):
        wf.tilde_energy(x, grid1, mean="keep")


def test_tilde_energy_exponent_zero_is_half_l2(grid1, rng):
    x = rng.standard_normal((3,) + grid1.shape)
    l2sq = sum(sp.l2_norm(x[c], grid1) ** 2 for c in range(3))
    assert wf.tilde_energy(x, grid1, exponent=0) == pytest.approx(0.5 * l2sq, rel=1e-12)


def test_wave_evolve_keeps_x_small():
    g = Grid(1, 32)
    t = TargetSpec.sphere()
    u0 = small(g, t, 0.05)
    traj = wf.wave_evolve(u0, dy.halfwave_rhs(u0, g, t), g, t, 0.2, 0.02)
    series = wf.tilde_energy_series(traj)
    assert series.values[0] == 0
    assert series.max_value < 1e-6


# ---------------------------------------------------------------- Duhamel


def test_free_wave_closed_form(grid1):
    x = grid1.coordinates()[0]
    traj = wf.duhamel_solve(np.cos(x), np.zeros_like(x), grid1, 2.0, 0.1)
    exact = np.cos(traj.times)[:, None] * np.cos(x)[None]
    assert np.max(np.abs(traj.u - exact)) < 1e-10


def test_constant_forcing_on_zero_mode(grid1):
    F = 0.7
    traj = wf.duhamel_solve(np.zeros(grid1.shape), np.zeros(grid1.shape), grid1, 1.0, 0.1,
                            forcing=lambda t: np.full(grid1.shape, F))
    exact = F * traj.times**2 / 2
    assert np.max(np.abs(traj.u - exact[:, None])) < 1e-12


def test_manufactured_solution_order_two(grid1):
    x = grid1.coordinates()[0]
    # u* = sin(2t) sin(x):  Box u* = -3 sin(2t) sin(x)
    errs, dts = [], [0.1, 0.05, 0.025]
    for dt in dts:
        traj = wf.duhamel_solve(np.zeros_like(x), 2 * np.sin(x), grid1, 1.0, dt,
                                forcing=lambda t: -3 * math.sin(2 * t) * np.sin(x))
        exact = np.sin(2 * traj.times)[:, None] * np.sin(x)[None]
        errs.append(np.max(np.abs(traj.u - exact)))
    assert sp.fit_loglog_slope(dts, errs) == pytest.approx(2.0, abs=0.2)


def test_forcing_samples_checked(grid1):
    z = np.zeros(grid1.shape)
    with pytest.raises(ConfigurationError):
        wf.duhamel_solve(z, z, grid1, 1.0, 0.1, forcing=np.zeros((3,) + grid1.shape))


def test_free_wave_energy_conserved(grid1, rng):
    f = rng.standard_normal((3,) + grid1.shape)
    g = rng.standard_normal((3,) + grid1.shape)
    g = g - g.mean(axis=-1, keepdims=True)
    traj = wf.duhamel_solve(f, g, grid1, 3.0, 0.05)
    e = np.array([wf.linear_wave_energy(traj.u[i], traj.u_t[i], grid1) for i in range(traj.nt)])
    assert np.max(np.abs(e - e[0])) <= 1e-10 * e[0]


# ---------------------------------------------------------------- Picard


def test_picard_rest_state_one_iteration(target):
    g = Grid(1, 32)
    q = sy.constant_field(g, target)
    traj, log = wf.picard_solve(q, np.zeros_like(q), g, target, 0.2, 0.02)
    assert log.converged and log.iterations == 1
    assert log.outer_differences == [0.0]
    assert np.max(np.abs(traj.u - q)) == 0


def test_picard_contracts_geometrically():
    g = Grid(1, 32)
    t = TargetSpec.sphere()
    u0 = small(g, t, 0.1)
    _, log = wf.picard_solve(u0, dy.halfwave_rhs(u0, g, t), g, t, 0.2, 0.02, tol=1e-11)
    assert log.converged
    assert all(0 < r < 1 for r in log.contraction_factors)


def test_picard_cap_raises_with_history():
    g = Grid(1, 32)
    t = TargetSpec.sphere()
    u0 = small(g, t, 0.1)
    with pytest.raises(DivergenceError) as info:
        wf.picard_solve(u0, dy.halfwave_rhs(u0, g, t), g, t, 0.2, 0.02, tol=1e-30, max_outer=2)
    assert len(info.value.history) == 2


def test_proxy_norm_zero_and_homogeneous(grid1, rng):
    w = rng.standard_normal((5, 3) + grid1.shape)
    assert wf.proxy_norm(np.zeros_like(w), grid1, 0.1) == 0
    assert wf.proxy_norm(2 * w, grid1, 0.1) == pytest.approx(2 * wf.proxy_norm(w, grid1, 0.1), rel=1e-12)


def test_sphere_preservation():
    g = Grid(1, 32)
    t = TargetSpec.sphere()
    u0 = small(g, t, 0.02)
    traj, log = wf.picard_solve(u0, dy.halfwave_rhs(u0, g, t), g, t, 0.2, 0.01, tol=1e-11)
    rep = wf.sphere_preservation_check(traj, log)
    assert rep.per_frame[0] < 1e-15
    assert max(rep.per_iterate[1:]) <= 1e-8
    assert rep.monotone_bounded()
    with pytest.raises(ConfigurationError):
        wf.sphere_preservation_check(Trajectory(g, 0.1, traj.u, target=TargetSpec.hyperbolic()))


def test_monotone_bounded_ignores_free_wave():
    rep = wf.PreservationReport(np.zeros(1), 0.0, [1e-3, 1e-9, 1.1e-9, 1.0e-9])
    assert rep.monotone_bounded()
    assert not wf.PreservationReport(np.zeros(1), 0.0, [1e-3, 1e-9, 5e-9]).monotone_bounded()
