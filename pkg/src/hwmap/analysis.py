"""Frequency envelopes, error norms, the microlocal identity and the gauge U.

Matrix fields are stored point-major, shape ``grid.shape + (3, 3)``; vector
fields keep the package convention ``(3,) + grid.shape``. Space-time index
contractions use signature (+, -): ``X_a Y^a = X_t Y_t - sum_i X_i Y_i``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from . import spectral as sp
from .errors import ConfigurationError, SingularGaugeError
from .trajectory import Trajectory

DET_GUARD = 0.1
ENVELOPE_RTOL = 1e-12
# shells whose coefficients are below this fraction of the largest one are roundoff
SHELL_CONTENT_TOL = 1e-14


# ---------------------------------------------------------------------------
# frequency envelopes


def shell_data_norms(f, g, grid: sp.Grid):
    """||P_k f||_{H^{n/2}} + ||P_k g||_{H^{n/2-1}} per shell (homogeneous norms).

    Vector fields use the Euclidean norm over components. ``g`` may be None.
    """
    fh = sp.forward(np.asarray(f, dtype=float), grid)
    gh = None if g is None else sp.forward(np.asarray(g, dtype=float), grid)
    wf = sp.power_symbol(grid, grid.n)
    wg = sp.power_symbol(grid, grid.n - 2)
    out = []
    for k in grid.shells:
        chi2 = sp.lp_symbol(grid, k) ** 2
        a = math.sqrt(grid.volume * float(np.sum(wf * chi2 * np.abs(fh) ** 2)))
        if gh is not None:
            a += math.sqrt(grid.volume * float(np.sum(wg * chi2 * np.abs(gh) ** 2)))
        out.append(a)
    return np.array(out)


@dataclass
class FrequencyEnvelope:
    sigma: float
    epsilon: float
    shells: np.ndarray
    c: np.ndarray
    data: np.ndarray

    @property
    def l2(self):
        return float(np.sqrt(np.sum(self.c**2)))

    @property
    def l2_constant(self):
        """C in ||c||_{l^2} <= C eps."""
        return self.l2 / self.epsilon if self.epsilon > 0 else 0.0

    def as_dict(self):
        return {int(k): float(v) for k, v in zip(self.shells, self.c)}

    def check_conditions(self, rtol=ENVELOPE_RTOL):
        """Underneath condition and the two-sided ratio bound on all shell pairs."""
        under = bool(np.all(self.data <= self.c * (1 + rtol) + 1e-300))
        ratio_ok = True
        worst = 0.0
        pos = self.c > 0
        if np.any(pos) and not np.all(pos):
            ratio_ok = False
        elif np.all(pos):
            dk = np.abs(self.shells[:, None] - self.shells[None, :])
            ratio = self.c[:, None] / self.c[None, :]
            excess = np.log2(ratio) / np.where(dk > 0, dk, 1) * (dk > 0)
            worst = float(np.max(np.abs(excess)))
            bound = 2.0 ** (self.sigma * dk)
            ratio_ok = bool(np.all(ratio <= bound * (1 + rtol)) and np.all(ratio >= (1 - rtol) / bound))
        return {"underneath": under, "ratio_bound": ratio_ok, "max_log_ratio_slope": worst,
                "l2_constant": self.l2_constant}


def fit_envelope(f, g, grid: sp.Grid, sigma, epsilon=None):
    """c_k = sum_{k'} 2^{-sigma|k-k'|} a_{k'} with a_{k'} the shell data norms."""
    if not (0 < sigma <= 0.25):
        raise ConfigurationError("sigma must lie in (0, 1/4]")
    a = shell_data_norms(f, g, grid)
    shells = np.array(list(grid.shells))
    kern = 2.0 ** (-sigma * np.abs(shells[:, None] - shells[None, :]))
    c = kern @ a
    if epsilon is None:
        epsilon = float(np.sqrt(np.sum(a**2)))
    return FrequencyEnvelope(sigma, epsilon, shells, c, a)


@dataclass
class EnvelopeCheck:
    shells: np.ndarray
    ratios: np.ndarray
    max_ratio: float
    threshold: float

    @property
    def passed(self):
        return self.max_ratio <= self.threshold


def _ratios(norms, c):
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(c > 0, norms / np.where(c > 0, c, 1.0), np.where(norms > 0, np.inf, 0.0))
    return r


def check_envelope(env: FrequencyEnvelope, grid: sp.Grid, u=None, u_t=None, traj: Optional[Trajectory] = None,
                   c0_threshold=1.0):
    """Per-shell ratios of a norm proxy to c_k.

    For a single frame the proxy is the shell data norm; for a trajectory it is
    the maximum of that quantity over frames (an L^inf_t energy stand-in for
    the solution norm).
    """
    if traj is not None:
        norms = np.max(
            np.stack([shell_data_norms(traj.u[i], None if traj.u_t is None else traj.u_t[i], grid)
                      for i in range(traj.nt)]),
            axis=0,
        )
    else:
        norms = shell_data_norms(u, u_t, grid)
    r = _ratios(norms, env.c)
    return EnvelopeCheck(env.shells, r, float(np.max(r)) if r.size else 0.0, c0_threshold)


@dataclass
class ErrorNormReport:
    value: float
    threshold: float

    @property
    def passed(self):
        return self.value <= self.threshold


def error_norm(block: sp.SpaceTimeBlock, c_big=1.0, c_small=1.0, epsilon=1.0):
    """||F||_{L^1_t L^2_x} against C0^3 c0 eps."""
    return ErrorNormReport(sp.lplq_norm(block, 1.0, 2.0), c_big**3 * c_small * epsilon)


# ---------------------------------------------------------------------------
# microlocal identity


@dataclass
class OrthomicroReport:
    total: float
    per_shell: dict
    offset: int


def orthomicro_residual(u, grid: sp.Grid, offset=10):
    """L^2 norm of m.m + sum_{|k1-k2|<=off} u_k1.u_k2 + 2 sum u_k1.u_{<k1-off} - 1.

    ``m`` is the mean and ``u_{<k}`` includes it. ``per_shell`` holds
    ||P_k(u . u)||_{L^2} for the localized form.
    """
    u = np.asarray(u, dtype=float)
    mean = sp.mean_value(u, grid).reshape((3,) + (1,) * grid.n)
    shells = list(grid.shells)
    pieces = sp.lp_decompose(u, grid)
    total = np.sum(mean * mean, axis=0) - 1.0
    for k1 in shells:
        for k2 in shells:
            if abs(k1 - k2) <= offset:
                total = total + np.sum(pieces[k1] * pieces[k2], axis=0)
    for k1 in shells:
        low = mean + sum((pieces[k] for k in shells if k < k1 - offset), np.zeros_like(u))
        total = total + 2 * np.sum(pieces[k1] * low, axis=0)
    uu = np.sum(u * u, axis=0)
    per_shell = {k: sp.l2_norm(sp.lp_project(uu, grid, k), grid) for k in shells}
    return OrthomicroReport(sp.l2_norm(total, grid), per_shell, offset)


# ---------------------------------------------------------------------------
# gauge construction


def _pts(v, grid):
    """(3,) + grid.shape -> (P, 3)."""
    return np.ascontiguousarray(np.moveaxis(v, 0, -1).reshape(-1, 3))


def _mats(m):
    return np.ascontiguousarray(m.reshape(-1, 3, 3))


@dataclass
class GaugeField:
    grid: sp.Grid
    U: np.ndarray
    dU: dict
    A: dict
    k_cut: int
    M: int
    shells: tuple
    empty: bool = False
    low: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def directions(self):
        return tuple(self.dU)

    def inverse(self, guard=DET_GUARD):
        inv, det = kernels.inverse3(_mats(self.U))
        if np.any(~np.isfinite(det)) or float(np.min(np.abs(det))) < guard:
            raise SingularGaugeError(f"gauge determinant fell below {guard}")
        return inv.reshape(self.U.shape)


def gauge_shells(grid: sp.Grid, k_cut, M=None):
    if M is None:
        M = 1 - grid.k_min
    lo = max(grid.k_min, -M + 1)
    hi = min(k_cut, grid.k_max)
    return M, tuple(range(lo, hi + 1))


def build_gauge(u, grid: sp.Grid, k_cut, M=None, u_t=None, on_empty="identity"):
    """U = I + sum_{-M<k<=k_cut} U_k with U_k = (u_k u_{<k}^T - u_{<k} u_k^T) U_{<k}.

    ``u_{<k}`` includes the mean of u. Derivatives of U follow from the same
    recursion differentiated exactly (spatial directions spectrally, time from
    ``u_t`` when given). ``A_a = d_a u_{<=k_cut} u_{<=k_cut}^T - transpose``.
    """
    M, shells = gauge_shells(grid, k_cut, M)
    npts = int(np.prod(grid.shape))
    names = [f"x{d}" for d in range(grid.n)] + (["t"] if u_t is not None else [])
    eye = np.broadcast_to(np.eye(3), (npts, 3, 3)).copy()
    if not shells:
        if on_empty != "identity":
            raise ConfigurationError(f"no gauge shells in (-{M}, {k_cut}]")
        zero = np.zeros(grid.shape + (3, 3))
        return GaugeField(grid, eye.reshape(grid.shape + (3, 3)), {a: zero for a in names},
                          {a: zero for a in names}, k_cut, M, shells, empty=True)
    u = np.asarray(u, dtype=float)
    uh = sp.forward(u, grid)
    uth = None if u_t is None else sp.forward(np.asarray(u_t, dtype=float), grid)
    keep = ~grid.nyquist_mask
    zero_idx = (Ellipsis,) + (0,) * grid.n
    mean = uh[zero_idx].real.reshape((3,) + (1,) * grid.n)

    def derivs(coeffs, sym):
        out = {f"x{d}": sp.inverse(1j * grid.xi[d] * keep * sym * coeffs, grid) for d in range(grid.n)}
        if uth is not None:
            out["t"] = sp.inverse(sym * uth, grid)
        return out

    low = np.broadcast_to(mean, u.shape).copy()
    dlow = {a: np.zeros_like(u) for a in names}
    if uth is not None:
        dlow["t"] = np.broadcast_to(uth[zero_idx].real.reshape((3,) + (1,) * grid.n), u.shape).copy()
    Ulow = eye
    dUlow = {a: np.zeros((npts, 3, 3)) for a in names}
    floor = SHELL_CONTENT_TOL * float(np.max(np.abs(uh)))
    floor_t = 0.0 if uth is None else SHELL_CONTENT_TOL * float(np.max(np.abs(uth)))
    for k in shells:
        sym = sp.lp_symbol(grid, k)
        if float(np.max(np.abs(sym * uh))) <= floor and (
            uth is None or float(np.max(np.abs(sym * uth))) <= floor_t
        ):
            continue
        uk = sp.inverse(sym * uh, grid)
        duk = derivs(uh, sym)
        pk, pl = _pts(uk, grid), _pts(low, grid)
        Uk = kernels.wedge_apply(pk, pl, Ulow)
        dUk = {}
        for a in names:
            dpk, dpl = _pts(duk[a], grid), _pts(dlow[a], grid)
            dUk[a] = (kernels.wedge_apply(dpk, pl, Ulow) + kernels.wedge_apply(pk, dpl, Ulow)
                      + kernels.wedge_apply(pk, pl, dUlow[a]))
        Ulow = Ulow + Uk
        for a in names:
            dUlow[a] = dUlow[a] + dUk[a]
            dlow[a] = dlow[a] + duk[a]
        low = low + uk
    A = {}
    pl = _pts(low, grid)
    for a in names:
        dp = _pts(dlow[a], grid)
        outer = dp[:, :, None] * pl[:, None, :]
        A[a] = (outer - np.swapaxes(outer, 1, 2)).reshape(grid.shape + (3, 3))
    shape = grid.shape + (3, 3)
    return GaugeField(grid, Ulow.reshape(shape), {a: dUlow[a].reshape(shape) for a in names}, A,
                      k_cut, M, shells, low=low)


def gauge_along(traj: Trajectory, k_cut, M=None):
    if traj.u_t is None:
        raise ConfigurationError("gauge over a trajectory needs u_t frames")
    return [build_gauge(traj.u[i], traj.grid, k_cut, M, traj.u_t[i]) for i in range(traj.nt)]


def _matmul(a, b):
    return np.einsum("...ij,...jk->...ik", a, b)


def _matvec(a, v):
    """matrix field (grid + (3,3)) times vector field ((3,) + grid)."""
    return np.einsum("...ij,j...->i...", a, v)


def _sup(m):
    return float(np.max(np.abs(m)))


def _trapezoid(values, dt):
    values = np.asarray(values, dtype=float)
    if values.size == 1:
        return float(values[0] * dt)
    return float(dt * (np.sum(values) - 0.5 * (values[0] + values[-1])))


def matrix_laplacian(m, grid):
    mm = np.moveaxis(m, (-2, -1), (0, 1))
    return np.moveaxis(sp.laplacian(mm, grid), (0, 1), (-2, -1))


DIAGNOSTIC_KEYS = (
    "orthogonality", "orthogonality_dt", "sup_U", "sup_Uinv",
    "transport_defect_L1Linf", "dU_LinfLinf", "dU_L2Linf", "boxU_L2L2",
)


def gauge_diagnostics(gauges, dt):
    """Matrix-field bounds along a sequence of gauge frames.

    Sup norms are over entries and points. ``boxU_L2L2`` uses L^2_x in place of
    L^{n-1}_x (ill-posed at n <= 2) and centered differences in time.
    """
    grid = gauges[0].grid
    eye = np.eye(3)
    orth, orth_dt, supu, supinv, defect, dsup, dsq = [], [], [], [], [], [], []
    for G in gauges:
        U = G.U
        inv = G.inverse()
        orth.append(_sup(_matmul(np.swapaxes(U, -1, -2), U) - eye))
        if "t" in G.dU:
            dt_u = G.dU["t"]
            orth_dt.append(_sup(_matmul(np.swapaxes(dt_u, -1, -2), U) + _matmul(np.swapaxes(U, -1, -2), dt_u)))
        supu.append(_sup(U))
        supinv.append(_sup(inv))
        defect.append(sum(_sup(G.dU[a] - _matmul(G.A[a], U)) for a in G.dU))
        dmax = max((_sup(G.dU[a]) for a in G.dU), default=0.0)
        dsup.append(dmax)
        dsq.append(dmax**2)
    box_vals = []
    for i in range(1, len(gauges) - 1):
        utt = (gauges[i + 1].U - 2 * gauges[i].U + gauges[i - 1].U) / dt**2
        bu = utt - matrix_laplacian(gauges[i].U, grid)
        box_vals.append(math.sqrt(grid.cell * float(np.sum(bu**2))))
    return {
        "orthogonality": max(orth),
        "orthogonality_dt": max(orth_dt) if orth_dt else 0.0,
        "sup_U": max(supu),
        "sup_Uinv": max(supinv),
        "transport_defect_L1Linf": _trapezoid(defect, dt),
        "dU_LinfLinf": max(dsup),
        "dU_L2Linf": math.sqrt(_trapezoid(dsq, dt)),
        "boxU_L2L2": math.sqrt(_trapezoid(np.square(box_vals), dt)) if box_vals else 0.0,
    }


@dataclass
class ScalingTable:
    scales: np.ndarray
    values: dict
    slopes: dict

    def monotone(self, key):
        v = np.asarray(self.values[key])
        order = np.argsort(self.scales)
        return bool(np.all(np.diff(v[order]) >= -1e-15))


def scaling_table(scales, rows):
    """rows: list of dicts (one per scale) -> values and fitted log-log slopes."""
    scales = np.asarray(scales, dtype=float)
    keys = rows[0].keys()
    values = {k: np.array([r[k] for r in rows]) for k in keys}
    slopes = {}
    for k, v in values.items():
        slopes[k] = sp.fit_loglog_slope(scales, v) if np.all(v > 0) else float("nan")
    return ScalingTable(scales, values, slopes)


# ---------------------------------------------------------------------------
# gauged residual


def _contract(x, y):
    """sum_a s_a X_a Y_a with s_t = +1 and s_x = -1."""
    total = 0.0
    for a in x:
        sign = 1.0 if a == "t" else -1.0
        total = total + sign * y(a, x[a])
    return total


@dataclass
class GaugeResidualReport:
    residual: float
    baseline: float
    ratio: float
    box_w: float
    box_u0: float
    groups: dict

    @property
    def improvement_ratio(self):
        return self.ratio


def gauge_residual(traj: Trajectory, k_cut, band=0, M=None, gauges=None):
    """Compare Box w with the three gauge groups, w = U^{-1} u0 and u0 = P_band u.

    All space-time norms are L^1_t L^2_x over interior frames. ``baseline`` is
    ||Box u0 - 2 A_a d^a u0|| and ``ratio`` = residual / baseline.
    """
    grid = traj.grid
    if traj.u_t is None:
        raise ConfigurationError("gauge residual needs u_t frames")
    if traj.nt < 3:
        raise ConfigurationError("gauge residual needs at least three frames")
    if gauges is None:
        gauges = gauge_along(traj, k_cut, M)
    dt = traj.dt
    u0 = np.stack([sp.lp_project(f, grid, band) for f in traj.u])
    u0t = np.stack([sp.lp_project(f, grid, band) for f in traj.u_t])
    invs = [G.inverse() for G in gauges]
    w = np.stack([_matvec(invs[i], u0[i]) for i in range(traj.nt)])
    res, base, bw, bu, g1n, g2n, g3n = [], [], [], [], [], [], []
    for i in range(1, traj.nt - 1):
        G, inv = gauges[i], invs[i]
        grads = sp.gradient(u0[i], grid)
        du0 = {f"x{d}": grads[d] for d in range(grid.n)}
        if "t" in G.dU:
            du0["t"] = u0t[i]
        winv_u0 = _matvec(inv, u0[i])
        dw = {a: _matvec(inv, du0[a]) - _matvec(inv, _matvec(G.dU[a], winv_u0)) for a in du0}
        box_w = (w[i + 1] - 2 * w[i] + w[i - 1]) / dt**2 - sp.laplacian(w[i], grid)
        box_u0 = (u0[i + 1] - 2 * u0[i] + u0[i - 1]) / dt**2 - sp.laplacian(u0[i], grid)
        boxU = (gauges[i + 1].U - 2 * G.U + gauges[i - 1].U) / dt**2 - matrix_laplacian(G.U, grid)
        defect = {a: G.dU[a] - _matmul(G.A[a], G.U) for a in du0}
        g1 = -2 * _matvec(inv, _contract(dw, lambda a, v: _matvec(defect[a], v)))
        g2 = 2 * _matvec(inv, _contract({a: winv_u0 for a in du0}, lambda a, v: _matvec(G.A[a], _matvec(G.dU[a], v))))
        g3 = -_matvec(inv, _matvec(boxU, winv_u0))
        r = box_w - (g1 + g2 + g3)
        b = box_u0 - 2 * _contract(du0, lambda a, v: _matvec(G.A[a], v))
        res.append(sp.l2_norm(r, grid))
        base.append(sp.l2_norm(b, grid))
        bw.append(sp.l2_norm(box_w, grid))
        bu.append(sp.l2_norm(box_u0, grid))
        g1n.append(sp.l2_norm(g1, grid))
        g2n.append(sp.l2_norm(g2, grid))
        g3n.append(sp.l2_norm(g3, grid))
    residual = _trapezoid(res, dt)
    baseline = _trapezoid(base, dt)
    return GaugeResidualReport(
        residual, baseline, residual / baseline if baseline > 0 else float("nan"),
        _trapezoid(bw, dt), _trapezoid(bu, dt),
        {"transport": _trapezoid(g1n, dt), "potential": _trapezoid(g2n, dt), "box_U": _trapezoid(g3n, dt)},
    )
