"""Fourier machinery on the periodic lattice.

Normalisation (used everywhere in the package): the forward transform carries
``1/N**n`` so ``u_hat[m]`` is the m-th Fourier coefficient; the inverse carries
``N**n``. With cell volume ``(L/N)**n`` Plancherel reads

    integral |u|^2 dx  ~  (L/N)**n * sum_x |u(x)|^2  =  L**n * sum_m |u_hat[m]|^2.

Fields are numpy arrays. A scalar field has shape ``grid.shape``; a vector field
has a leading component axis, shape ``(3,) + grid.shape``. Transforms act on the
trailing ``n`` axes, so any leading batch axes are allowed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.fft as sfft

from . import kernels
from ._accel import THREADS
from .errors import (
    ConfigurationError,
    DegenerateFieldError,
    DomainError,
    ResourceError,
)

# relative size of a zero mode still accepted as "mean free"
MEAN_TOL = 1e-12


@dataclass(frozen=True)
class Grid:
    """Periodic lattice with ``size`` points per axis and period ``length``."""

    n: int
    size: int
    length: float = 2 * math.pi

    def __post_init__(self):
        if self.n not in (1, 2, 3):
            raise ConfigurationError(f"grid.n must be 1, 2 or 3, got {self.n}")
        if self.size < 8 or self.size & (self.size - 1):
            raise ConfigurationError(
                f"grid.size must be a power of two >= 8, got {self.size}"
            )
        if not (self.length > 0 and math.isfinite(self.length)):
            raise ConfigurationError(f"grid.length must be positive, got {self.length}")

    @property
    def shape(self):
        return (self.size,) * self.n

    @property
    def axes(self):
        return tuple(range(-self.n, 0))

    @property
    def spacing(self):
        return self.length / self.size

    @property
    def cell(self):
        return self.spacing**self.n

    @property
    def volume(self):
        return self.length**self.n

    @cached_property
    def wavenumbers(self):
        """1D array of admissible frequencies 2*pi*m/L in FFT order."""
        return 2 * math.pi * sfft.fftfreq(self.size, d=1.0 / self.size) / self.length

    @cached_property
    def xi(self):
        """Frequency vectors, shape ``(n,) + shape``."""
        return np.stack(np.meshgrid(*([self.wavenumbers] * self.n), indexing="ij"))

    @cached_property
    def kabs(self):
        return np.sqrt(np.sum(self.xi**2, axis=0))

    @cached_property
    def nyquist_mask(self):
        """True on modes whose index is -N/2 along some axis."""
        m = np.zeros(self.shape, dtype=bool)
        for d in range(self.n):
            sl = [slice(None)] * self.n
            sl[d] = self.size // 2
            m[tuple(sl)] = True
        return m

    @property
    def xi_min(self):
        return 2 * math.pi / self.length

    @property
    def xi_max(self):
        return float(self.kabs.max())

    @property
    def k_min(self):
        """Lowest dyadic shell with lattice content."""
        return math.floor(math.log2(self.xi_min))

    @property
    def k_max(self):
        return math.ceil(math.log2(self.xi_max))

    @property
    def shells(self):
        return range(self.k_min, self.k_max + 1)

    def coordinates(self):
        x = np.arange(self.size) * self.spacing
        return np.stack(np.meshgrid(*([x] * self.n), indexing="ij"))


# ---------------------------------------------------------------------------
# transforms


def forward(u, grid: Grid):
    """Fourier coefficients over the trailing ``grid.n`` axes."""
    return sfft.fftn(u, axes=grid.axes, workers=THREADS) / grid.size**grid.n


def inverse(u_hat, grid: Grid, real=True):
    out = sfft.ifftn(u_hat, axes=grid.axes, workers=THREADS) * grid.size**grid.n
    return out.real if real else out


def transform(u, grid: Grid, direction="forward"):
    if direction == "forward":
        return forward(u, grid)
    if direction == "inverse":
        return inverse(u, grid)
    raise ConfigurationError(f"unknown transform direction {direction!r}")


def apply_symbol(u, grid: Grid, symbol):
    return inverse(symbol * forward(u, grid), grid)


def _zero_mode(u_hat, grid):
    return u_hat[(Ellipsis,) + (0,) * grid.n]


def check_mean_free(u, grid: Grid, what="input"):
    u = np.asarray(u)
    mean = np.abs(_zero_mode(forward(u, grid), grid))
    scale = max(float(np.max(np.abs(u))) if u.size else 0.0, 1.0)
    if np.any(mean > MEAN_TOL * scale):
        raise DomainError(f"{what} must have zero mean for a negative-order multiplier")


def power_symbol(grid: Grid, s):
    """|xi|**s with the zero mode set to 0 (any sign of s)."""
    with np.errstate(divide="ignore"):
        sym = np.where(grid.kabs > 0, grid.kabs, 1.0) ** s
    sym[(0,) * grid.n] = 0.0
    return sym


def fractional_laplacian(u, grid: Grid, s):
    """(-Delta)**s via the multiplier |xi|**(2s).

    For ``s < 0`` the input must be mean free; the zero mode is always mapped
    to zero for ``s != 0``.
    """
    if s == 0:
        return np.array(u, dtype=float, copy=True)
    if s < 0:
        check_mean_free(u, grid)
    return apply_symbol(u, grid, power_symbol(grid, 2 * s))


def half_laplacian(u, grid: Grid):
    return apply_symbol(u, grid, grid.kabs)


def gradient(u, grid: Grid):
    """Spectral gradient, shape ``(n,) + u.shape``; Nyquist modes dropped."""
    u_hat = forward(u, grid)
    keep = ~grid.nyquist_mask
    return np.stack([inverse(1j * grid.xi[d] * keep * u_hat, grid) for d in range(grid.n)])


def laplacian(u, grid: Grid):
    return apply_symbol(u, grid, -(grid.kabs**2))


def l2_norm(u, grid: Grid):
    return math.sqrt(grid.cell * float(np.sum(np.abs(u) ** 2)))


def inner_l2(u, v, grid: Grid):
    return grid.cell * float(np.sum(u * v))


# ---------------------------------------------------------------------------
# Littlewood-Paley partition


def _bump(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    pos = s > 0
    out[pos] = np.exp(-1.0 / s[pos])
    return out


def _step(s):
    """Smooth step: 0 for s <= 0, 1 for s >= 1."""
    a = _bump(s)
    b = _bump(1.0 - np.asarray(s, dtype=float))
    return a / (a + b)


def _step_prime(s):
    s = np.asarray(s, dtype=float)
    a, b = _bump(s), _bump(1.0 - s)
    with np.errstate(divide="ignore", invalid="ignore"):
        da = np.where(s > 0, a / np.where(s > 0, s, 1.0) ** 2, 0.0)
        db = np.where(s < 1, b / np.where(s < 1, 1.0 - s, 1.0) ** 2, 0.0)
    return (da * b + a * db) / (a + b) ** 2


def phi(r):
    """Plateau cutoff: 1 on [0, 1], 0 on [2, inf), smooth in between."""
    return np.clip(_step(2.0 - np.abs(r)), 0.0, 1.0)


def phi_prime(r):
    return -_step_prime(2.0 - np.abs(r)) * np.sign(r)


def chi(r):
    """Annulus cutoff supported in [1/2, 2]; sum_k chi(r / 2**k) = 1 for r > 0."""
    return phi(r) - phi(2.0 * np.asarray(r, dtype=float))


def dyadic_symbol(dist, j, j_lo, j_hi, include_zero=True):
    """Shell j of a partition over ``dist`` whose end shells absorb the tails."""
    if j < j_lo or j > j_hi:
        return np.zeros_like(dist)
    if j_lo == j_hi:
        return np.ones_like(dist)
    if j == j_lo:
        sym = phi(dist / 2.0**j)
        if not include_zero:
            sym = np.where(dist > 0, sym, 0.0)
        return sym
    if j == j_hi:
        return 1.0 - phi(dist / 2.0 ** (j - 1))
    return chi(dist / 2.0**j)


def lp_symbol(grid: Grid, k):
    """Symbol of P_k on the lattice (zero mode excluded)."""
    return dyadic_symbol(grid.kabs, k, grid.k_min, grid.k_max, include_zero=False)


def lp_project(u, grid: Grid, k):
    if k < grid.k_min or k > grid.k_max:
        return np.zeros_like(np.asarray(u, dtype=float))
    return apply_symbol(u, grid, lp_symbol(grid, k))


def low_symbol(grid: Grid, k, include_mean=True):
    """Symbol of P_{<=k}, optionally keeping the mean."""
    r = grid.kabs
    if k >= grid.k_max:
        sym = np.ones_like(r)
    elif k < grid.k_min:
        sym = np.zeros_like(r)
    else:
        sym = phi(r / 2.0**k)
    sym = np.where(r > 0, sym, 1.0 if include_mean else 0.0)
    return sym


def low_project(u, grid: Grid, k, include_mean=True):
    return apply_symbol(u, grid, low_symbol(grid, k, include_mean))


def lp_decompose(u, grid: Grid):
    """Mapping shell -> P_k u for every shell on the grid."""
    u_hat = forward(u, grid)
    return {k: inverse(lp_symbol(grid, k) * u_hat, grid) for k in grid.shells}


def mean_value(u, grid: Grid):
    return _zero_mode(forward(u, grid), grid).real


# ---------------------------------------------------------------------------
# spatial norms


@dataclass(frozen=True)
class NormSpec:
    """Which norm to evaluate.

    kind is one of ``sobolev``, ``besov21``, ``lplq``, ``xst``, ``snorm``,
    ``nnorm``. For ``xst`` the ``summation`` is ``l1`` (sum over cone shells)
    or ``sup``.
    """

    kind: str
    s: float = 0.0
    theta: float = 0.0
    p: float = 2.0
    q: float = 2.0
    summation: str = "l1"
    pairs: Optional[tuple] = None
    check_pairing: bool = False

    @classmethod
    def sobolev(cls, s):
        return cls("sobolev", s=s)

    @classmethod
    def besov21(cls, s):
        return cls("besov21", s=s)

    @classmethod
    def lplq(cls, p, q, s=0.0):
        return cls("lplq", p=p, q=q, s=s)

    @classmethod
    def xst(cls, s, theta, summation="l1", check_pairing=False):
        return cls("xst", s=s, theta=theta, summation=summation, check_pairing=check_pairing)

    @classmethod
    def snorm(cls, pairs=None):
        return cls("snorm", pairs=None if pairs is None else tuple(pairs))

    @classmethod
    def nnorm(cls):
        return cls("nnorm")


def sobolev_norm(u, grid: Grid, s):
    """Homogeneous Sobolev norm (L^n sum |xi|^{2s} |u_hat|^2)^(1/2)."""
    u_hat = forward(u, grid)
    if s < 0:
        check_mean_free(u, grid)
    w = power_symbol(grid, 2 * s) if s != 0 else np.ones(grid.shape)
    if s == 0:
        w[(0,) * grid.n] = 0.0
    return math.sqrt(grid.volume * float(np.sum(w * np.abs(u_hat) ** 2)))


def inhomogeneous_sobolev_norm(u, grid: Grid, s):
    u_hat = forward(u, grid)
    w = (1.0 + grid.kabs**2) ** s
    return math.sqrt(grid.volume * float(np.sum(w * np.abs(u_hat) ** 2)))


def besov21_norm(u, grid: Grid, s):
    """sum_k 2**(k s) ||P_k u||_{L^2}."""
    u_hat = forward(u, grid)
    total = 0.0
    for k in grid.shells:
        pk = lp_symbol(grid, k) * u_hat
        total += 2.0 ** (k * s) * math.sqrt(grid.volume * float(np.sum(np.abs(pk) ** 2)))
    return total


def spatial_norm(u, grid: Grid, spec: NormSpec):
    if spec.kind == "sobolev":
        return sobolev_norm(u, grid, spec.s)
    if spec.kind == "besov21":
        return besov21_norm(u, grid, spec.s)
    raise ConfigurationError(f"{spec.kind!r} is not a spatial norm")


# ---------------------------------------------------------------------------
# space-time blocks


@dataclass(frozen=True)
class SpaceTimeBlock:
    """Uniformly sampled space-time function.

    ``values`` has shape ``(nt,) + field_shape``; sample i sits at time
    ``t0 + i*dt``. ``taper`` names the window applied before cone projections
    (``hann`` or ``none``). ``time_derivative`` optionally carries exact
    ``d/dt`` samples; otherwise a second-order finite difference is used.
    """

    values: np.ndarray
    grid: Grid
    dt: float
    t0: float = 0.0
    taper: str = "hann"
    time_derivative: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if self.dt <= 0:
            raise ConfigurationError("block dt must be positive")
        if self.values.shape[-self.grid.n:] != self.grid.shape:
            raise ConfigurationError("block values do not match the grid")
        if self.taper not in ("hann", "none"):
            raise ConfigurationError(f"unknown taper {self.taper!r}")

    @property
    def nt(self):
        return self.values.shape[0]

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(self.nt)

    def with_values(self, values, **changes):
        return replace(self, values=values, **changes)

    def d_dt(self):
        if self.time_derivative is not None:
            return self.time_derivative
        return np.gradient(self.values, self.dt, axis=0, edge_order=2)

    @classmethod
    def from_trajectory(cls, traj, start=0, stop=None, taper="hann"):
        sl = slice(start, stop)
        ut = None if traj.u_t is None else traj.u_t[sl]
        return cls(
            values=traj.u[sl],
            grid=traj.grid,
            dt=traj.dt,
            t0=float(traj.times[sl][0]),
            taper=taper,
            time_derivative=ut,
        )


def taper_window(nt, kind):
    if kind == "none":
        return np.ones(nt)
    return np.hanning(nt)


def tapered(block: SpaceTimeBlock):
    w = taper_window(block.nt, block.taper)
    return block.values * w.reshape((-1,) + (1,) * (block.values.ndim - 1))


def _spacetime_axes(block):
    return (0,) + block.grid.axes


def spacetime_forward(values, block: SpaceTimeBlock):
    g = block.grid
    return sfft.fftn(values, axes=_spacetime_axes(block), workers=THREADS) / (
        block.nt * g.size**g.n
    )


def spacetime_inverse(coeffs, block: SpaceTimeBlock):
    g = block.grid
    out = sfft.ifftn(coeffs, axes=_spacetime_axes(block), workers=THREADS)
    return out.real * (block.nt * g.size**g.n)


def _tau(block):
    return 2 * math.pi * sfft.fftfreq(block.nt, d=block.dt)


def _broadcast_st(block, tau_arr, xi_arr):
    """Shape helper: (nt, 1.., *grid) broadcasting of tau with |xi|."""
    extra = block.values.ndim - 1 - block.grid.n
    t = tau_arr.reshape((-1,) + (1,) * (extra + block.grid.n))
    x = xi_arr.reshape((1,) + (1,) * extra + block.grid.shape)
    return t, x


def cone_distance(block: SpaceTimeBlock):
    t, x = _broadcast_st(block, np.abs(_tau(block)), block.grid.kabs)
    return np.abs(t - x)


def cone_shells(block: SpaceTimeBlock):
    """(j_lo, j_hi) covering every lattice distance to the light cone."""
    dtau = 2 * math.pi / (block.nt * block.dt)
    lo = math.floor(math.log2(min(dtau, block.grid.xi_min) / 2))
    tau_max = math.pi / block.dt
    hi = math.ceil(math.log2(tau_max + block.grid.xi_max))
    return lo, hi


def q_symbol(block: SpaceTimeBlock, j):
    lo, hi = cone_shells(block)
    return dyadic_symbol(cone_distance(block), j, lo, hi, include_zero=True)


def q_project(block: SpaceTimeBlock, j):
    """Q_j of the tapered block; the result carries ``taper='none'``."""
    if block.nt < 8:
        raise ConfigurationError("cone projection needs at least 8 time samples")
    spec = spacetime_forward(tapered(block), block)
    out = spacetime_inverse(q_symbol(block, j) * spec, block)
    return block.with_values(out, taper="none", time_derivative=None)


def _spatial_weight(block, s):
    t, x = _broadcast_st(block, np.zeros(block.nt), power_symbol(block.grid, s) if s else np.ones(block.grid.shape))
    return x


def xst_pieces(block: SpaceTimeBlock, s):
    """Cone-shell indices and the L^2_{t,x} norms of |grad|^s Q_j block."""
    if block.nt < 8:
        raise ConfigurationError("cone projection needs at least 8 time samples")
    spec = spacetime_forward(tapered(block), block)
    if s < 0:
        zero = spec[(Ellipsis,) + (0,) * block.grid.n]
        scale = max(float(np.max(np.abs(spec))), 1e-300)
        if np.any(np.abs(zero) > MEAN_TOL * max(scale, 1.0)):
            raise DomainError("negative spatial order needs spatially mean-free data")
    weighted = np.abs(spec) ** 2 * _spatial_weight(block, 2 * s)
    dist = cone_distance(block)
    lo, hi = cone_shells(block)
    scale = block.nt * block.dt * block.grid.volume
    js = np.arange(lo, hi + 1)
    norms = np.array(
        [math.sqrt(scale * float(np.sum(weighted * dyadic_symbol(dist, j, lo, hi) ** 2))) for j in js]
    )
    return js, norms


def xst_norm(block: SpaceTimeBlock, s, theta, summation="l1", check_pairing=False):
    if check_pairing and not math.isclose(s - block.grid.n / 2, theta - 0.5, abs_tol=1e-12):
        raise ConfigurationError("X^{s,theta} pairing s - n/2 = theta - 1/2 violated")
    js, norms = xst_pieces(block, s)
    weighted = 2.0 ** (js * theta) * norms
    if summation == "l1":
        return float(np.sum(weighted))
    if summation == "sup":
        return float(np.max(weighted))
    raise ConfigurationError(f"unknown summation {summation!r}")


def _pointwise_magnitude(values, n_spatial):
    """Euclidean magnitude over any component axes between time and space."""
    extra = values.ndim - 1 - n_spatial
    if extra == 0:
        return np.abs(values)
    axes = tuple(range(1, 1 + extra))
    return np.sqrt(np.sum(np.abs(values) ** 2, axis=axes))


def _trapezoid_weights(nt, dt):
    w = np.full(nt, dt)
    if nt > 1:
        w[0] = w[-1] = dt / 2
    return w


def lplq_norm(block: SpaceTimeBlock, p, q, s=0.0, values=None):
    """L^p_t L^q_x of |grad|^s applied to the block (no taper).

    L^inf_x is the grid maximum; time integrals use the trapezoid rule.
    """
    vals = block.values if values is None else values
    g = block.grid
    if s != 0:
        if s < 0:
            check_mean_free(vals, g, "block")
        vals = apply_symbol(vals, g, power_symbol(g, s))
    mag = _pointwise_magnitude(vals, g.n)
    flat = mag.reshape(mag.shape[0], -1)
    if math.isinf(q):
        per_t = flat.max(axis=1)
    else:
        per_t = (g.cell * np.sum(flat**q, axis=1)) ** (1.0 / q)
    if math.isinf(p):
        return float(per_t.max())
    w = _trapezoid_weights(flat.shape[0], block.dt)
    return float(np.sum(w * per_t**p) ** (1.0 / p))


def is_admissible(p, q, n):
    """Wave admissibility 1/p + (n-1)/(2q) <= (n-1)/4 with 2 <= p, q <= inf."""
    if p < 2 or q < 2:
        return False
    return 1.0 / p + (n - 1) / (2.0 * q) <= (n - 1) / 4.0 + 1e-15


def admissible_pairs(n):
    """Finite admissible list used for the sup inside the S norm.

    For n >= 4: (inf, 2), (2, q_max) and two interpolants between them.
    For n <= 3 no pair with p = 2 is admissible, so the list is (inf, 2),
    (inf, inf) and the interpolants (inf, 3), (inf, 6).
    """
    inf = math.inf
    if n >= 4:
        qmax = 2.0 * (n - 1) / (n - 3)
        pairs = [(inf, 2.0), (2.0, qmax)]
        for lam in (1.0 / 3.0, 2.0 / 3.0):
            ip = lam / 2.0
            iq = (1 - lam) / 2.0 + lam / qmax
            pairs.append((1.0 / ip, 1.0 / iq))
        return pairs
    return [(inf, 2.0), (inf, 3.0), (inf, 6.0), (inf, inf)]


def _grad_tx(values, dvalues, grid):
    """Stack d/dt and spatial gradient along a new axis 1."""
    spatial = np.moveaxis(gradient(values, grid), 0, 1)
    return np.concatenate([dvalues[:, None], spatial], axis=1)


def s_norm(block: SpaceTimeBlock, pairs=None):
    """Shell-summed Strichartz + X^{n/2-1,1/2,inf} norm of grad_{t,x} P_k u."""
    n = block.grid.n
    if pairs is None:
        pairs = admissible_pairs(n)
    for p, q in pairs:
        if not is_admissible(p, q, n):
            raise ConfigurationError(f"pair (p={p}, q={q}) is not wave admissible for n={n}")
    g = block.grid
    u_hat = forward(block.values, g)
    du_hat = forward(block.d_dt(), g)
    total = 0.0
    for k in g.shells:
        sym = lp_symbol(g, k)
        pk = inverse(sym * u_hat, g)
        dpk = inverse(sym * du_hat, g)
        grad = _grad_tx(pk, dpk, g)
        strich = max(
            2.0 ** ((1.0 / p + n / q - 1.0) * k) * lplq_norm(block, p, q, values=grad)
            for p, q in pairs
        )
        xb = block.with_values(grad, time_derivative=None)
        total += strich + xst_norm(xb, n / 2 - 1, 0.5, summation="sup")
    return total


def n_norm(block: SpaceTimeBlock):
    """Upper bound for sum_k ||P_k F||_{L^1 H^{n/2-1} + X^{n/2-1,-1/2,1}}.

    The sum-space infimum is replaced by the best split
    F = Q_{<j*} F + Q_{>=j*} F over cone thresholds j* (both pieces taken from
    the tapered block).
    """
    g = block.grid
    n = g.n
    s = n / 2 - 1
    lo, hi = cone_shells(block)
    dist = cone_distance(block)
    spec_all = spacetime_forward(tapered(block), block)
    u_hat_sym = {k: lp_symbol(g, k) for k in g.shells}
    w_t = _trapezoid_weights(block.nt, block.dt)
    sw = _spatial_weight(block, 2 * s)
    scale = block.nt * block.dt * g.volume
    total = 0.0
    for k in g.shells:
        spec = spec_all * u_hat_sym[k]
        shell_l2 = [
            math.sqrt(scale * float(np.sum(np.abs(spec) ** 2 * sw * dyadic_symbol(dist, j, lo, hi) ** 2)))
            for j in range(lo, hi + 1)
        ]
        best = math.inf
        for jstar in range(lo, hi + 2):
            low_sym = sum(
                (dyadic_symbol(dist, j, lo, hi) for j in range(lo, jstar)), np.zeros_like(dist)
            )
            low = spacetime_inverse(spec * low_sym, block)
            low_hat = forward(low, g)
            per_t = np.sqrt(
                g.volume
                * np.sum(
                    (np.abs(low_hat) ** 2 * power_symbol(g, 2 * s)).reshape(block.nt, -1), axis=1
                )
            )
            l1h = float(np.sum(w_t * per_t))
            xpart = sum(2.0 ** (-0.5 * j) * shell_l2[j - lo] for j in range(jstar, hi + 1))
            best = min(best, l1h + xpart)
        total += best
    return total


def spacetime_norm(block: SpaceTimeBlock, spec: NormSpec):
    if spec.kind == "lplq":
        return lplq_norm(block, spec.p, spec.q, spec.s)
    if spec.kind == "xst":
        return xst_norm(block, spec.s, spec.theta, spec.summation, spec.check_pairing)
    if spec.kind == "snorm":
        return s_norm(block, spec.pairs)
    if spec.kind == "nnorm":
        return n_norm(block)
    raise ConfigurationError(f"{spec.kind!r} is not a space-time norm")


def l2tx_norm(block: SpaceTimeBlock, values=None):
    """Rectangle-rule L^2_{t,x} (periodic in the window)."""
    vals = block.values if values is None else values
    return math.sqrt(block.dt * block.grid.cell * float(np.sum(np.abs(vals) ** 2)))


# ---------------------------------------------------------------------------
# time localisation


def time_localize(block: SpaceTimeBlock, horizon):
    """Multiply by phi(t/T): identity on |t| <= T, zero for |t| >= 2T."""
    if not horizon > 0:
        raise DomainError("time_localize needs T > 0")
    t = block.times
    w = phi(t / horizon)
    shape = (-1,) + (1,) * (block.values.ndim - 1)
    vals = block.values * w.reshape(shape)
    dvals = None
    if block.time_derivative is not None:
        dw = phi_prime(t / horizon) / horizon
        dvals = block.time_derivative * w.reshape(shape) + block.values * dw.reshape(shape)
    return block.with_values(vals, time_derivative=dvals)


@dataclass
class ScalingReport:
    parameters: np.ndarray
    values: np.ndarray
    slope: float


def fit_loglog_slope(x, y, base=2.0):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    lx = np.log(x) / math.log(base)
    ly = np.log(y) / math.log(base)
    return float(np.polyfit(lx, ly, 1)[0])


def localization_scaling(block: SpaceTimeBlock, horizons, s, theta):
    """Ratios ||phi_T u||_X / ||u||_X over the given horizons and their log-log slope."""
    base = xst_norm(block, s, theta)
    ratios = np.array([xst_norm(time_localize(block, T), s, theta) / base for T in horizons])
    return ScalingReport(np.asarray(horizons, dtype=float), ratios, fit_loglog_slope(horizons, ratios))


# ---------------------------------------------------------------------------
# bilinear Fourier multipliers

MAX_PAIRS = 1 << 24


@dataclass(frozen=True)
class BilinearSymbol:
    """m(xi, eta) restricted to the shells k1 (first factor) and k2 (second).

    ``evaluator(xi, eta)`` receives frequency arrays of shape ``(A, 1, n)``
    and ``(1, B, n)`` and returns an ``(A, B)`` array.
    """

    evaluator: Callable
    k1: int
    k2: int
    bound: Optional[float] = None


def unit_symbol(k1, k2):
    return BilinearSymbol(lambda xi, eta: np.ones(np.broadcast_shapes(xi.shape, eta.shape)[:2]), k1, k2, 1.0)


def _norm_last(a):
    return np.sqrt(np.sum(a**2, axis=-1))


def commutator_symbol(k1, k2, variant="singlefreq"):
    """chi_0(xi+eta)(|xi+eta| - |eta|), times |eta| for ``singlefreq2``."""

    def m(xi, eta):
        zeta = _norm_last(xi + eta)
        e = _norm_last(eta)
        out = chi(zeta) * (zeta - e)
        if variant == "singlefreq2":
            out = out * e
        return out

    if variant not in ("singlefreq", "singlefreq2"):
        raise ConfigurationError(f"unknown commutator variant {variant!r}")
    return BilinearSymbol(m, k1, k2)


def _active_modes(coeffs, grid, tol=0.0):
    """Flat indices (into grid.shape) where any component is nonzero."""
    mag = np.abs(coeffs).reshape(-1, int(np.prod(grid.shape))).max(axis=0)
    return np.nonzero(mag > tol)[0]


def _as_components(u):
    u = np.asarray(u, dtype=float)
    return u


def bilinear_apply(sym: BilinearSymbol, u, v, grid: Grid, max_pairs=MAX_PAIRS):
    """F(u, v) with F_hat(zeta) = sum_{xi+eta=zeta} m chi_k1 u_hat chi_k2 v_hat.

    Sums wrap on the lattice, so the unit symbol reproduces the grid product
    of the two projections. Vector inputs (leading axis 3) are contracted with
    the Euclidean dot product, giving a scalar field.
    """
    u = _as_components(u)
    v = _as_components(v)
    if u.shape != v.shape:
        raise ConfigurationError("bilinear_apply needs fields of the same shape")
    vector = u.ndim == grid.n + 1
    uc = u if vector else u[None]
    vc = v if vector else v[None]
    uh = forward(uc, grid) * lp_symbol(grid, sym.k1)
    vh = forward(vc, grid) * lp_symbol(grid, sym.k2)
    act_a = _active_modes(uh, grid)
    act_b = _active_modes(vh, grid)
    npts = int(np.prod(grid.shape))
    out = np.zeros(npts, dtype=complex)
    if act_a.size == 0 or act_b.size == 0:
        return np.zeros(grid.shape)
    if act_a.size * act_b.size > max_pairs:
        raise ResourceError(
            f"quadratic pass over {act_a.size} x {act_b.size} modes exceeds the cap {max_pairs}"
        )
    idx_a = np.stack(np.unravel_index(act_a, grid.shape), axis=1).astype(np.int64)
    idx_b = np.stack(np.unravel_index(act_b, grid.shape), axis=1).astype(np.int64)
    xi_flat = grid.xi.reshape(grid.n, -1).T
    xi_a = xi_flat[act_a][:, None, :]
    xi_b = xi_flat[act_b][None, :, :]
    m = np.asarray(sym.evaluator(xi_a, xi_b), dtype=complex)
    m = np.ascontiguousarray(np.broadcast_to(m, (act_a.size, act_b.size)))
    for c in range(uc.shape[0]):
        ua = np.ascontiguousarray(uh[c].reshape(-1)[act_a])
        vb = np.ascontiguousarray(vh[c].reshape(-1)[act_b])
        kernels.pair_scatter(out, idx_a, idx_b, grid.size, m, ua, vb)
    return inverse(out.reshape(grid.shape), grid)


@dataclass
class CommutatorReport:
    variant: str
    k2: int
    k1: np.ndarray
    log2_ratio: np.ndarray
    slope: float


def random_shell_field(grid: Grid, k, rng):
    """P_k of white noise: random data living in shell k."""
    return lp_project(rng.standard_normal(grid.shape), grid, k)


def _signed_modes(grid):
    m = np.fft.fftfreq(grid.size, d=1.0 / grid.size).astype(np.int64)
    return np.stack(np.meshgrid(*([m] * grid.n), indexing="ij"))


def dilated_shell_field(grid: Grid, k, rng, k_ref):
    """Random field in shell k that is an exact dilation of a shell-k_ref profile.

    The profile has amplitude chi(|xi| / 2**k_ref) and random phases; mode m is
    moved to m * 2**(k - k_ref). Shape statistics are therefore identical for
    every k >= k_ref, which keeps scaling fits free of mode-count effects.
    """
    if k < k_ref:
        raise ConfigurationError("dilation needs k >= k_ref")
    phases = np.exp(1j * np.angle(np.fft.fftn(rng.standard_normal(grid.shape))))
    base = chi(grid.kabs / 2.0**k_ref) * phases
    base[grid.kabs == 0] = 0.0
    base = np.where(grid.nyquist_mask, 0.0, base)
    factor = 2 ** (k - k_ref)
    modes = _signed_modes(grid)
    src = np.nonzero(np.abs(base) > 0)
    target = modes[(slice(None),) + src] * factor
    inside = np.all(np.abs(target) < grid.size // 2, axis=0)
    out = np.zeros(grid.shape, dtype=complex)
    idx = tuple(np.mod(target[d][inside], grid.size) for d in range(grid.n))
    out[idx] = base[src][inside]
    return inverse(out, grid)


def dilation_generator(k_ref):
    return lambda grid, k, rng: dilated_shell_field(grid, k, rng, k_ref)


def commutator_scaling(grid: Grid, k1_values: Sequence[int], rng, k2=0, variant="singlefreq",
                       generator=None, samples=8):
    """Measured log2 of ||F||_{L^2} / (||u_k1||_{L^inf} ||u_k2||_{L^2}) per k1.

    F is the commutator built from :func:`commutator_symbol`; the log ratios
    are averaged over ``samples`` draws and a line is fitted against k1. The
    default generator dilates one random profile from the lowest k1.
    """
    k1_values = np.asarray(list(k1_values), dtype=int)
    if generator is None:
        generator = dilation_generator(int(k1_values.min()))
    logs = np.zeros(k1_values.size)
    for i, k1 in enumerate(k1_values):
        sym = commutator_symbol(int(k1), k2, variant)
        acc = []
        for _ in range(samples):
            a = generator(grid, int(k1), rng)
            b = generator(grid, k2, rng)
            ua = lp_project(a, grid, int(k1))
            vb = lp_project(b, grid, k2)
            nb = l2_norm(vb, grid)
            if nb == 0:
                raise DegenerateFieldError(f"generator produced an empty shell {k2}")
            na = float(np.max(np.abs(ua)))
            if na == 0:
                acc.append(0.0)
                continue
            f = bilinear_apply(sym, a, b, grid)
            acc.append(l2_norm(f, grid) / (na * nb))
        acc = np.asarray(acc)
        logs[i] = np.mean(np.log2(acc)) if np.all(acc > 0) else -np.inf
    if np.all(np.isfinite(logs)):
        slope = float(np.polyfit(k1_values, logs, 1)[0])
    else:
        slope = float("nan")
    return CommutatorReport(variant, k2, k1_values, logs, slope)
