"""Second-order (wave) form of the flow, Duhamel propagation and Picard iteration.

With ``D = |grad|``, ``Box = d_tt - Delta`` and the signed algebra of
:mod:`hwmap.geometry`, a solution of ``u_t = u x_eta D u`` satisfies

    Box u = eta (grad u ._eta grad u - u_t ._eta u_t) u             (group i)
          + eta Pi[(u ._eta D u) D u]                              (group ii)
          + Pi[u x_eta D(u x_eta D u) - u x_eta (u x_eta D^2 u)]  (group iii)

where ``Pi`` is the ._eta-orthogonal projection at u and the spatial
gradient pairing sums over directions. For eta = +1 the eta factors
disappear. :func:`box_residual` checks this numerically.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from . import spectral as sp
from .dynamics import SimConfig, evolve
from .errors import ConfigurationError, DivergenceError, DomainError, NumericalError
from .geometry import TargetSpec, check_on_target, cross_eta, dot_eta, tangent_project
from .trajectory import Trajectory

GROUPS = ("group_i", "group_ii", "group_iii")


def _eta(target):
    return target.eta if isinstance(target, TargetSpec) else int(target)


def quadratic_group(u, u_t, grid, target):
    """eta (grad u . grad u - u_t . u_t) u."""
    eta = _eta(target)
    grads = sp.gradient(u, grid)
    gg = sum(dot_eta(grads[d], grads[d], eta) for d in range(grid.n))
    return eta * (gg - dot_eta(u_t, u_t, eta)) * u


def nonlocal_terms(u, grid, target):
    """Unprojected brackets of groups ii and iii, built from u alone."""
    eta = _eta(target)
    du = sp.half_laplacian(u, grid)
    d2u = -sp.laplacian(u, grid)
    ii = eta * dot_eta(u, du, eta) * du
    c = cross_eta(u, du, eta)
    iii = cross_eta(u, sp.half_laplacian(c, grid), eta) - cross_eta(u, cross_eta(u, d2u, eta), eta)
    return ii, iii


def wave_rhs_groups(u, u_t, grid, target, check=True):
    """The three groups as a dict keyed by ``GROUPS``."""
    if check:
        check_on_target(u, target)
    ii, iii = nonlocal_terms(u, grid, target)
    return {
        "group_i": quadratic_group(u, u_t, grid, target),
        "group_ii": tangent_project(ii, u, target),
        "group_iii": tangent_project(iii, u, target),
    }


def wave_rhs(u, u_t, grid, target, check=True):
    g = wave_rhs_groups(u, u_t, grid, target, check)
    return g["group_i"] + g["group_ii"] + g["group_iii"]


def box(frames, dt, grid, i):
    """Centered second difference in time minus spectral Laplacian at frame i."""
    utt = (frames[i + 1] - 2 * frames[i] + frames[i - 1]) / dt**2
    return utt - sp.laplacian(frames[i], grid)


@dataclass
class WaveResidualReport:
    times: np.ndarray
    total: np.ndarray
    groups: dict
    dt: float
    l2_time: float = 0.0

    def rows(self):
        for i, t in enumerate(self.times):
            yield (float(t), float(self.total[i])) + tuple(float(self.groups[g][i]) for g in GROUPS)


def box_residual(traj: Trajectory):
    """Per interior time: ||Box u - wave_rhs||_{L^2}, and each group's L^2 norm."""
    if traj.nt < 3:
        raise ConfigurationError("box residual needs at least three frames")
    if traj.u_t is None:
        raise ConfigurationError("box residual needs u_t frames")
    g = traj.grid
    idx = range(1, traj.nt - 1)
    total = np.empty(len(idx))
    groups = {k: np.empty(len(idx)) for k in GROUPS}
    for j, i in enumerate(idx):
        parts = wave_rhs_groups(traj.u[i], traj.u_t[i], g, traj.target, check=False)
        r = box(traj.u, traj.dt, g, i) - sum(parts.values())
        total[j] = sp.l2_norm(r, g)
        for k in GROUPS:
            groups[k][j] = sp.l2_norm(parts[k], g)
    l2t = math.sqrt(traj.dt * float(np.sum(total**2)))
    return WaveResidualReport(traj.times[1:-1], total, groups, traj.dt, l2t)


@dataclass
class ConvergenceReport:
    dts: np.ndarray
    errors: np.ndarray
    slope: float

    def rows(self):
        for d, e in zip(self.dts, self.errors):
            yield float(d), float(e)


def convergence_slope(dts, errors):
    return sp.fit_loglog_slope(dts, errors)


def residual_convergence(u0, grid, target, horizon, dts, integrator="rk4"):
    """L^2_t residual for each dt and the fitted order."""
    errs = []
    for dt in dts:
        traj, _ = evolve(u0, grid, SimConfig(target, dt, horizon, integrator))
        errs.append(box_residual(traj).l2_time)
    errs = np.array(errs)
    return ConvergenceReport(np.asarray(dts, dtype=float), errs, convergence_slope(dts, errs))


# ---------------------------------------------------------------------------
# X and the tilde energy


def x_field(u, u_t, grid, target):
    """X = u_t - u x_eta D u."""
    return u_t - cross_eta(u, sp.half_laplacian(u, grid), target)


def tilde_energy(x, grid, target=None, exponent=None, mean="reject", signed=True):
    """1/2 L^n sum |xi|^(2e) sum_c eta_c |X_hat_c|^2 with e = (n-3)/4 by default.

    For a negative exponent the zero mode has no finite weight: ``mean='reject'``
    raises :class:`DomainError` on a nonzero mean and ``mean='drop'`` ignores it.
    """
    if exponent is None:
        exponent = (grid.n - 3) / 4
    if mean not in ("reject", "drop"):
        raise ConfigurationError(f"unknown mean policy {mean!r}")
    x_hat = sp.forward(x, grid)
    if exponent < 0 and mean == "reject":
        zero = np.abs(x_hat[(Ellipsis,) + (0,) * grid.n])
        scale = max(float(np.max(np.abs(x))) if x.size else 0.0, 1.0)
        if np.any(zero > sp.MEAN_TOL * scale):
            raise DomainError("negative exponent needs a mean-free X (use mean='drop')")
    w = sp.power_symbol(grid, 2 * exponent) if exponent != 0 else np.ones(grid.shape)
    per = np.sum(w * np.abs(x_hat) ** 2, axis=tuple(range(-grid.n, 0)))
    if per.ndim == 0:
        val = float(per)
    else:
        eta = 1 if (target is None or not signed) else _eta(target)
        signs = np.ones(per.shape[0])
        signs[0] = eta
        val = float(np.sum(signs * per))
    return 0.5 * grid.volume * val


@dataclass
class TildeEnergySeries:
    times: np.ndarray
    values: np.ndarray
    mean_norm: np.ndarray
    dt: float

    @property
    def max_value(self):
        return float(np.max(np.abs(self.values)))

    @property
    def constant(self):
        """max_t |E~(t)| / dt^2."""
        return self.max_value / self.dt**2


def tilde_energy_series(traj: Trajectory, exponent=None):
    """E~ along a trajectory with the X mean dropped and reported separately."""
    g = traj.grid
    vals, means = [], []
    for i in range(traj.nt):
        x = x_field(traj.u[i], traj.u_t[i], g, traj.target)
        vals.append(tilde_energy(x, g, traj.target, exponent, mean="drop"))
        means.append(float(np.linalg.norm(sp.mean_value(x, g))))
    return TildeEnergySeries(traj.times, np.array(vals), np.array(means), traj.dt)


def _mode_solve(u_hat, v_hat, f_hat, omega2, a, dt):
    """Implicit midpoint for u' = v, v' = -omega^2 u + f (f frozen)."""
    denom = 1.0 + a * a * omega2
    v_new = (v_hat * (1.0 - a * a * omega2) - 2 * a * omega2 * u_hat + dt * f_hat) / denom
    u_new = u_hat + a * (v_hat + v_new)
    return u_new, v_new


def wave_evolve(u0, v0, grid, target, horizon, dt, tol=1e-13, maxiter=80):
    """Integrate Box u = wave_rhs(u, u_t) by implicit midpoint, no retraction.

    The linear part is solved mode by mode; the nonlinear forcing, evaluated
    at the midpoint state, is iterated to a fixed point.
    """
    nsteps = max(1, math.ceil(horizon / dt - 1e-9))
    omega2 = grid.kabs**2
    a = dt / 2
    us = np.empty((nsteps + 1,) + u0.shape)
    vs = np.empty_like(us)
    us[0], vs[0] = u0, v0
    u, v = np.array(u0, dtype=float), np.array(v0, dtype=float)
    for i in range(1, nsteps + 1):
        uh, vh = sp.forward(u, grid), sp.forward(v, grid)
        un, vn = u, v
        for _ in range(maxiter):
            f = wave_rhs(0.5 * (u + un), 0.5 * (v + vn), grid, target, check=False)
            uhn, vhn = _mode_solve(uh, vh, sp.forward(f, grid), omega2, a, dt)
            un_new = sp.inverse(uhn, grid)
            vn_new = sp.inverse(vhn, grid)
            change = max(float(np.max(np.abs(un_new - un))), float(np.max(np.abs(vn_new - vn))))
            un, vn = un_new, vn_new
            if change <= tol:
                break
        else:
            raise NumericalError(f"wave_evolve fixed point failed at step {i}")
        if not (np.all(np.isfinite(un)) and np.all(np.isfinite(vn))):
            raise NumericalError(f"wave_evolve produced non-finite values at step {i}")
        u, v = un, vn
        us[i], vs[i] = u, v
    return Trajectory(grid, dt, us, vs, target)


# ---------------------------------------------------------------------------
# Duhamel propagation


def _propagate(u_hat, v_hat, f_hat, omega, dt):
    """Exact per-mode step for u'' + omega^2 u = f with f constant on the step."""
    c = np.cos(omega * dt)
    s = np.sin(omega * dt)
    zero = omega == 0
    w = np.where(zero, 1.0, omega)
    sw = np.where(zero, dt, s / w)
    kernel = np.where(zero, 0.5 * dt * dt, 2.0 * np.sin(0.5 * omega * dt) ** 2 / (w * w))
    u_new = c * u_hat + sw * v_hat + kernel * f_hat
    v_new = -omega * s * u_hat + c * v_hat + sw * f_hat
    return u_new, v_new


ForcingLike = Union[None, np.ndarray, Callable[[float], np.ndarray]]


def duhamel_solve(f, g, grid, horizon, dt, forcing: ForcingLike = None, target=None):
    """Solve Box u = F with data (f, g) by exact per-mode propagation.

    ``forcing`` is ``None``, a callable ``F(t)`` evaluated at half steps, or an
    array of half-step samples with one entry per step. The zero mode is
    integrated polynomially. Global accuracy is O(dt^2) from the midpoint
    forcing; with zero forcing the propagation is exact.
    """
    nsteps = max(1, math.ceil(horizon / dt - 1e-9))
    omega = grid.kabs
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    uh, vh = sp.forward(f, grid), sp.forward(g, grid)
    us = np.empty((nsteps + 1,) + f.shape)
    vs = np.empty_like(us)
    us[0], vs[0] = f, g
    if isinstance(forcing, np.ndarray) and forcing.shape[0] != nsteps:
        raise ConfigurationError("forcing samples must have one entry per step")
    for i in range(nsteps):
        if forcing is None:
            fh = 0.0
        elif callable(forcing):
            fh = sp.forward(np.asarray(forcing((i + 0.5) * dt), dtype=float), grid)
        else:
            fh = sp.forward(forcing[i], grid)
        uh, vh = _propagate(uh, vh, fh, omega, dt)
        us[i + 1] = sp.inverse(uh, grid)
        vs[i + 1] = sp.inverse(vh, grid)
    return Trajectory(grid, dt, us, vs, target)


def linear_wave_energy(u, u_t, grid):
    """1/2 int (u_t^2 + |grad u|^2) summed over components."""
    uh = sp.forward(u, grid)
    vh = sp.forward(u_t, grid)
    return 0.5 * grid.volume * float(np.sum(np.abs(vh) ** 2 + grid.kabs**2 * np.abs(uh) ** 2))


# ---------------------------------------------------------------------------
# Picard iteration


@dataclass
class PicardLog:
    outer_differences: list = field(default_factory=list)
    inner_counts: list = field(default_factory=list)
    inner_differences: list = field(default_factory=list)
    constraint_violation: list = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self):
        return len(self.outer_differences)

    @property
    def contraction_factors(self):
        d = self.outer_differences
        return [d[j] / d[j - 1] for j in range(1, len(d)) if d[j - 1] > 0]


def proxy_norm(w, grid, dt, s=None):
    """max_t H^s(w) + sum_k ||P_k grad w||_{L^2_t L^inf_x}.

    A discrete stand-in for the solution norm used only to measure iterate
    differences. H^s is the inhomogeneous norm so the mean is seen;
    s defaults to (n + 1) / 2.
    """
    if s is None:
        s = (grid.n + 1) / 2
    hs = max(
        math.sqrt(sum(sp.inhomogeneous_sobolev_norm(frame[c], grid, s) ** 2 for c in range(frame.shape[0])))
        for frame in w
    )
    w_hat = sp.forward(w, grid)
    keep = ~grid.nyquist_mask
    weights = np.full(w.shape[0], dt)
    weights[0] = weights[-1] = dt / 2
    strich = 0.0
    for k in grid.shells:
        sym = sp.lp_symbol(grid, k) * keep
        grad = np.stack([sp.inverse(1j * grid.xi[d] * sym * w_hat, grid) for d in range(grid.n)], axis=1)
        mag = np.sqrt(np.sum(grad**2, axis=(1, 2)))
        per_t = mag.reshape(w.shape[0], -1).max(axis=1)
        strich += math.sqrt(float(np.sum(weights * per_t**2)))
    return hs + strich


def _half_step(samples):
    return 0.5 * (samples[1:] + samples[:-1])


def picard_solve(f, g, grid, target, horizon, dt, tol=1e-12, inner_tol=None,
                 max_outer=30, max_inner=60):
    """Two-level Picard iteration for the wave form.

    Outer iterate j uses u^(j-1) inside the nonlocal brackets; the inner
    iterate u^(j,i) solves Box u^(j,i) = group_i(u^(j,i-1)) + Pi_{u^(j,i-1)}
    [brackets(u^(j-1))], starting from the free wave u^(j,0). Forcing is
    sampled at half steps as the average of adjacent frames. Iteration stops
    when successive outer iterates differ by less than ``tol`` in
    :func:`proxy_norm`; a difference that fails to decrease raises
    :class:`DivergenceError` carrying the history.
    """
    if inner_tol is None:
        inner_tol = tol
    free = duhamel_solve(f, g, grid, horizon, dt, target=target)
    log = PicardLog()
    prev = free
    log.constraint_violation.append(_violation(free.u, target))
    for _ in range(max_outer):
        br_ii, br_iii = zip(*(nonlocal_terms(frame, grid, target) for frame in prev.u))
        br_ii, br_iii = np.array(br_ii), np.array(br_iii)
        inner = free
        count = 0
        inner_hist = []
        for count in range(1, max_inner + 1):
            forcing = np.array([
                quadratic_group(inner.u[i], inner.u_t[i], grid, target)
                + tangent_project(br_ii[i] + br_iii[i], inner.u[i], target)
                for i in range(inner.nt)
            ])
            new = duhamel_solve(f, g, grid, horizon, dt, _half_step(forcing), target)
            d = proxy_norm(new.u - inner.u, grid, dt)
            inner_hist.append(d)
            inner = new
            if d < inner_tol:
                break
            if len(inner_hist) > 3 and d > inner_hist[-2] and d > inner_tol * 10:
                raise DivergenceError("inner Picard iteration is not contracting", inner_hist)
        else:
            raise DivergenceError("inner Picard iteration hit its cap", inner_hist)
        log.inner_counts.append(count)
        log.inner_differences.append(inner_hist)
        diff = proxy_norm(inner.u - prev.u, grid, dt)
        log.outer_differences.append(diff)
        log.constraint_violation.append(_violation(inner.u, target))
        prev = inner
        if diff < tol:
            log.converged = True
            return prev, log
        hist = log.outer_differences
        if len(hist) > 2 and hist[-1] > hist[-2] and hist[-2] > hist[-3]:
            raise DivergenceError("outer Picard iteration is not contracting", hist)
    raise DivergenceError("outer Picard iteration hit its cap", log.outer_differences)


def _violation(frames, target):
    eta = _eta(target)
    return float(np.max(np.abs(dot_eta(np.moveaxis(frames, 1, 0), np.moveaxis(frames, 1, 0), eta) - eta)))


@dataclass
class PreservationReport:
    per_frame: np.ndarray
    max_violation: float
    per_iterate: Optional[list] = None

    def monotone_bounded(self, rtol=0.5, atol=1e-12):
        """Nonlinear iterates stay within (1 + rtol) of the first one.

        Entry 0 is the free wave, which leaves the target at first order and is
        not part of the comparison.
        """
        it = (self.per_iterate or [])[1:]
        if not it:
            return True
        return all(v <= it[0] * (1 + rtol) + atol for v in it)


def sphere_preservation_check(traj: Trajectory, log: Optional[PicardLog] = None):
    """max_x |u . u - 1| per frame (and per Picard iterate when a log is given)."""
    if traj.target is None or traj.target.eta != 1:
        raise ConfigurationError("sphere preservation check needs a sphere target")
    per = np.array([float(np.max(np.abs(np.sum(fr * fr, axis=0) - 1.0))) for fr in traj.u])
    return PreservationReport(per, float(per.max()), None if log is None else list(log.constraint_violation))
