"""Time integration of u_t = u x_eta |grad| u.

Stepping is RK4 (default) or implicit midpoint, each followed by a
retraction onto the target. The explicit step is stable for
``dt <= cfl / 2**k_max`` with ``cfl = 2`` (|grad| is first order and RK4's
stability interval on the imaginary axis is about 2.8).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import spectral as sp
from .errors import BlowUpError, ConfigurationError, DomainError, NumericalError
from .geometry import TargetSpec, check_on_target, constraint, cross_eta, retract
from .trajectory import Trajectory

CFL = 2.0
INTEGRATORS = ("rk4", "midpoint")


@dataclass(frozen=True)
class SimConfig:
    target: TargetSpec
    dt: float
    horizon: float
    integrator: str = "rk4"
    retract_every: int = 1
    diagnostics_every: int = 1
    cfl: float = CFL
    midpoint_tol: float = 1e-14
    midpoint_maxiter: int = 60

    def validate(self, grid: sp.Grid):
        if not self.dt > 0:
            raise ConfigurationError("sim.dt must be positive")
        if self.horizon < self.dt:
            raise ConfigurationError("sim.T must be at least dt")
        if self.integrator not in INTEGRATORS:
            raise ConfigurationError(f"sim.integrator must be one of {INTEGRATORS}")
        if self.retract_every < 1 or self.diagnostics_every < 1:
            raise ConfigurationError("cadences must be >= 1")
        cap = self.cfl / 2.0**grid.k_max
        if self.dt > cap * (1 + 1e-12):
            raise ConfigurationError(f"sim.dt = {self.dt:g} exceeds the stability cap {cap:g}")

    def steps(self):
        return max(1, math.ceil(self.horizon / self.dt - 1e-9))


@dataclass
class EnergyReport:
    times: np.ndarray
    energy: np.ndarray
    constraint_drift: np.ndarray
    unsigned_energy: np.ndarray = field(default=None)

    @property
    def relative_drift(self):
        e0 = self.energy[0]
        scale = abs(e0) if e0 != 0 else 1.0
        return np.abs(self.energy - e0) / scale

    @property
    def max_relative_drift(self):
        return float(np.max(self.relative_drift)) if self.energy[0] != 0 else float(
            np.max(np.abs(self.energy - self.energy[0]))
        )

    @property
    def max_constraint_drift(self):
        return float(np.max(self.constraint_drift))


def halfwave_rhs(u, grid: sp.Grid, target, check=True):
    """u x_eta |grad| u."""
    if check:
        check_on_target(u, target)
    return cross_eta(u, sp.half_laplacian(u, grid), target)


def energy(u, grid: sp.Grid, target, signed=True):
    """L^n sum_xi |xi| sum_c eta_c |u_hat_c|^2 (eta_c = eta on component 0)."""
    u_hat = sp.forward(u, grid)
    per = np.sum(grid.kabs * np.abs(u_hat) ** 2, axis=tuple(range(1, grid.n + 1)))
    eta = target.eta if signed else 1
    return grid.volume * float(eta * per[0] + per[1] + per[2])


def _rk4(u, grid, target, dt):
    f = lambda w: halfwave_rhs(w, grid, target, check=False)
    k1 = f(u)
    k2 = f(u + 0.5 * dt * k1)
    k3 = f(u + 0.5 * dt * k2)
    k4 = f(u + dt * k3)
    return u + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def _midpoint(u, grid, target, dt, tol, maxiter):
    new = u + dt * halfwave_rhs(u, grid, target, check=False)
    for _ in range(maxiter):
        nxt = u + dt * halfwave_rhs(0.5 * (u + new), grid, target, check=False)
        change = float(np.max(np.abs(nxt - new)))
        new = nxt
        if change <= tol * max(1.0, float(np.max(np.abs(new)))):
            return new
    raise NumericalError("implicit midpoint iteration did not converge; reduce dt")


def step(u, grid: sp.Grid, config: SimConfig, dt=None, do_retract=True, index=None):
    """One step of size ``dt`` (default ``config.dt``; negative runs backward)."""
    dt = config.dt if dt is None else dt
    target = config.target
    if config.integrator == "rk4":
        new = _rk4(u, grid, target, dt)
    else:
        new = _midpoint(u, grid, target, dt, config.midpoint_tol, config.midpoint_maxiter)
    if not np.all(np.isfinite(new)):
        raise BlowUpError(f"non-finite values at step {index}", index)
    if do_retract:
        try:
            new = retract(new, target)
        except DomainError as exc:
            raise BlowUpError(f"retraction failed at step {index}: {exc}", index) from exc
    return new


def evolve(u0, grid: sp.Grid, config: SimConfig, backward=False):
    """Integrate to ``config.horizon``; returns (Trajectory, EnergyReport).

    The trajectory holds every frame; u_t frames are rhs evaluations. Energy
    and constraint diagnostics are sampled every ``diagnostics_every`` steps
    and at the final frame.
    """
    config.validate(grid)
    target = config.target
    check_on_target(u0, target, what="initial data")
    nsteps = config.steps()
    dt = -config.dt if backward else config.dt
    c0 = constraint(u0, target)
    frames = np.empty((nsteps + 1,) + u0.shape)
    frames[0] = u0
    u = np.array(u0, dtype=float)
    for i in range(1, nsteps + 1):
        u = step(u, grid, config, dt, do_retract=(i % config.retract_every == 0), index=i)
        if target.eta == -1 and np.any(u[0] <= 0):
            raise BlowUpError(f"left the upper sheet at step {i}", i)
        frames[i] = u
    rates = np.stack([halfwave_rhs(f, grid, target, check=False) for f in frames])
    diag_idx = sorted(set(range(0, nsteps + 1, config.diagnostics_every)) | {nsteps})
    times = np.array([i * dt for i in diag_idx])
    e = np.array([energy(frames[i], grid, target) for i in diag_idx])
    eu = np.array([energy(frames[i], grid, target, signed=False) for i in diag_idx])
    drift = np.array([float(np.max(np.abs(constraint(frames[i], target) - c0))) for i in diag_idx])
    if backward:
        frames = frames[::-1]
        rates = rates[::-1]
    traj = Trajectory(grid, config.dt, frames, rates, target,
                      t0=-nsteps * config.dt if backward else 0.0)
    return traj, EnergyReport(times, e, drift, eu)


def final_state(u0, grid, config, backward=False):
    """Run without storing frames; returns the last field."""
    config.validate(grid)
    u = np.array(u0, dtype=float)
    dt = -config.dt if backward else config.dt
    for i in range(1, config.steps() + 1):
        u = step(u, grid, config, dt, do_retract=(i % config.retract_every == 0), index=i)
    return u


def stability_cap(grid: sp.Grid, cfl=CFL):
    return cfl / 2.0**grid.k_max
