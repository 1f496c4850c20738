"""Seeded synthetic data.

Random fields use a fixed amplitude profile with random Fourier phases, so
every quantity that depends only on |u_hat| is identical across seeds and
seed-to-seed variation comes from phase interactions alone.
"""
from __future__ import annotations

import math

import numpy as np

from . import spectral as sp
from .geometry import TargetSpec, exp_map, tangent_basis


def random_phases(grid: sp.Grid, rng):
    """Hermitian unit-modulus phase array (angles of the FFT of white noise)."""
    noise = rng.standard_normal(grid.shape)
    return np.exp(1j * np.angle(np.fft.fftn(noise)))


def profile_field(grid: sp.Grid, rng, width=4.0, cutoff=None):
    """Real field with amplitude exp(-|xi|^2 / (2 width^2)) on |xi| <= cutoff."""
    r = grid.kabs
    if cutoff is None:
        cutoff = min(3.0 * width, grid.xi_max / 3.0)
    amp = np.exp(-(r**2) / (2 * width**2)) * (r <= cutoff) * (r > 0)
    amp = amp * ~grid.nyquist_mask
    return sp.inverse(amp * random_phases(grid, rng), grid)


def tangent_perturbation(grid: sp.Grid, target: TargetSpec, eps, rng, width=4.0, cutoff=None,
                         order=None):
    """Tangent field at Q with homogeneous Sobolev norm ``eps`` (order n/2 by default)."""
    if order is None:
        order = grid.n / 2
    basis = tangent_basis(target.q, target)
    coeffs = [profile_field(grid, rng, width, cutoff) for _ in range(2)]
    v = sum(c[None] * b.reshape((3,) + (1,) * grid.n) for c, b in zip(coeffs, basis))
    norm = math.sqrt(sum(sp.sobolev_norm(v[c], grid, order) ** 2 for c in range(3)))
    return v * (eps / norm) if norm > 0 else v


def small_data(grid: sp.Grid, target: TargetSpec, eps, rng, width=4.0, cutoff=None):
    """Map ``exp_Q(v)`` for a random tangent v of size ``eps``."""
    v = tangent_perturbation(grid, target, eps, rng, width, cutoff)
    return exp_map(target.q, v, target)


def shell_profile(grid: sp.Grid, k):
    """Deterministic real field living in shell k, peak amplitude 1."""
    sym = sp.lp_symbol(grid, k) * ~grid.nyquist_mask
    field = sp.inverse(sym.astype(complex), grid)
    peak = float(np.max(np.abs(field)))
    if peak == 0:
        return field
    return field / peak


def single_shell_data(grid: sp.Grid, target: TargetSpec, k, eps):
    """exp_Q(eps * a(x) e_1) with a deterministic shell-k profile a of unit sup norm."""
    e1 = tangent_basis(target.q, target)[0]
    a = shell_profile(grid, k)
    v = eps * a[None] * e1.reshape((3,) + (1,) * grid.n)
    return exp_map(target.q, v, target)


def great_circle_field(grid: sp.Grid, modes, tilt=0.0):
    """cos(tilt) e3 + sin(tilt) (cos(m.x) e1 + sin(m.x) e2).

    Lies on the sphere exactly and has Fourier support on {0, +-m}.
    """
    x = grid.coordinates()
    modes = np.atleast_1d(np.asarray(modes, dtype=float))
    phase = sum(2 * math.pi * modes[d] * x[d] / grid.length for d in range(grid.n))
    s = math.sin(tilt)
    return np.stack([s * np.cos(phase), s * np.sin(phase), np.full(grid.shape, math.cos(tilt))])


def constant_field(grid: sp.Grid, target: TargetSpec):
    return np.broadcast_to(target.q.reshape((3,) + (1,) * grid.n), (3,) + grid.shape).copy()
