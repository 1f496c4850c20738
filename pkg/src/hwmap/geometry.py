"""Target algebra for the sphere (eta = +1) and the hyperboloid (eta = -1).

Points and vectors are arrays whose axis 0 has length 3; trailing axes (the
lattice) broadcast. The signed pairing is ``a . b = eta a0 b0 + a1 b1 + a2 b2``
and the signed cross product scales the first component of ``a x b`` by eta,
so with ``D = diag(eta, 1, 1)`` we have ``a x_eta b = D (a x b)`` and
``a ._eta b = (D a) . b``. Because ``D**2 = I`` the cross product is
``._eta``-orthogonal to both factors.

Signed triple product (checked by brute force in the tests):

    (a x_eta b) x_eta c = eta [ (a ._eta c) b - (b ._eta c) a ]

With ``u ._eta u = eta`` and ``w`` tangent this gives
``u x_eta (u x_eta w) = -w``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DomainError

SPHERE = "sphere"
HYPERBOLIC = "hyperbolic"

ON_TARGET_TOL = 1e-6
SHEET_TOL = 1e-8


def _eta_scale(eta, ndim):
    s = np.ones((3,) + (1,) * (ndim - 1))
    s[0] = eta
    return s


@dataclass(frozen=True)
class TargetSpec:
    """Target manifold with its base point Q.

    ``flip_sheet`` controls what happens when a hyperbolic point lands on the
    lower sheet: ``False`` rejects, ``True`` flips the sign.
    """

    kind: str = SPHERE
    base_point: tuple = field(default=None)
    flip_sheet: bool = False

    def __post_init__(self):
        if self.kind not in (SPHERE, HYPERBOLIC):
            raise ConfigurationError(f"target kind must be 'sphere' or 'hyperbolic', got {self.kind!r}")
        q = self.base_point
        if q is None:
            q = (0.0, 0.0, 1.0) if self.kind == SPHERE else (1.0, 0.0, 0.0)
        q = tuple(float(c) for c in q)
        if len(q) != 3:
            raise ConfigurationError("base point must have three components")
        object.__setattr__(self, "base_point", q)
        qa = np.array(q)
        if abs(dot_eta(qa, qa, self.eta) - self.eta) > 1e-12:
            raise ConfigurationError(f"base point {q} violates the {self.kind} constraint")
        if self.kind == HYPERBOLIC and q[0] <= 0:
            raise ConfigurationError("hyperbolic base point must lie on the upper sheet")

    @property
    def eta(self):
        return 1 if self.kind == SPHERE else -1

    @property
    def q(self):
        return np.array(self.base_point)

    @classmethod
    def sphere(cls, base_point=None):
        return cls(SPHERE, base_point)

    @classmethod
    def hyperbolic(cls, base_point=None, flip_sheet=False):
        return cls(HYPERBOLIC, base_point, flip_sheet)


def _eta_of(target):
    if isinstance(target, TargetSpec):
        return target.eta
    if target in (1, -1):
        return int(target)
    raise ConfigurationError(f"expected a TargetSpec or eta = +-1, got {target!r}")


def dot_eta(a, b, target):
    """eta a0 b0 + a1 b1 + a2 b2 along axis 0."""
    eta = _eta_of(target)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return eta * a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


def cross_eta(a, b, target):
    eta = _eta_of(target)
    out = np.cross(np.asarray(a, dtype=float), np.asarray(b, dtype=float), axis=0)
    if eta != 1:
        out[0] *= eta
    return out


def constraint(u, target):
    """Pointwise u ._eta u."""
    return dot_eta(u, u, target)


def constraint_defect(u, target):
    eta = _eta_of(target)
    return float(np.max(np.abs(constraint(u, target) - eta)))


def check_on_target(u, target, tol=ON_TARGET_TOL, what="field"):
    eta = _eta_of(target)
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise DomainError(f"{what} has non-finite entries")
    if constraint_defect(u, eta) > tol:
        raise DomainError(f"{what} is off the target by more than {tol:g}")
    if eta == -1 and np.any(u[0] <= 0):
        raise DomainError(f"{what} leaves the upper sheet")


def tangent_project(v, u, target):
    """v - (v ._eta u / u ._eta u) u."""
    uu = dot_eta(u, u, target)
    if np.any(np.abs(uu) < 1e-14):
        raise DomainError("tangent projection at a null vector")
    return v - (dot_eta(v, u, target) / uu) * u


def retract(v, target, flip_sheet=None):
    """Nearest-point restoration of the target constraint."""
    eta = _eta_of(target)
    v = np.asarray(v, dtype=float)
    if eta == 1:
        norm = np.sqrt(np.sum(v * v, axis=0))
        if np.any(~(norm > 0)):
            raise DomainError("cannot retract the zero vector onto the sphere")
        return v / norm
    if flip_sheet is None:
        flip_sheet = isinstance(target, TargetSpec) and target.flip_sheet
    m = -dot_eta(v, v, eta)
    if np.any(~(m > 0)):
        raise DomainError("point is not timelike; cannot retract onto the hyperboloid")
    if np.any(v[0] <= 0):
        if not flip_sheet:
            raise DomainError("point lies on the lower sheet")
        v = np.where(v[0] > 0, v, -v)
    return v / np.sqrt(m)


def _pairing_arg(p, q):
    return -dot_eta(p, q, -1)


def hyperbolic_distance(p, q, tol=SHEET_TOL):
    """arccosh of the clamped pairing -p ._eta q on the upper sheet."""
    for name, x in (("p", p), ("q", q)):
        x = np.asarray(x, dtype=float)
        if np.any(np.abs(dot_eta(x, x, -1) + 1.0) > tol) or np.any(x[0] <= 0):
            raise DomainError(f"{name} is not on the upper-sheet hyperboloid")
    return np.arccosh(np.maximum(_pairing_arg(p, q), 1.0))


def arccosh_extension(x):
    """arccosh(x) for x >= 1 and 0 below.

    Continuous on R, smooth away from 1. On-target pairings are >= 1, so
    values below 1 only arise from roundoff and are sent to 0.
    """
    x = np.asarray(x, dtype=float)
    return np.arccosh(np.maximum(x, 1.0))


def sphere_distance(p, q):
    c = np.clip(dot_eta(p, q, 1), -1.0, 1.0)
    return np.arccos(c)


def exp_map(base, v, target):
    """Geodesic exponential at ``base`` of the tangent vector ``v``.

    ``base`` may be a single point (shape (3,)) broadcast against ``v``.
    """
    eta = _eta_of(target)
    v = np.asarray(v, dtype=float)
    base = np.asarray(base, dtype=float)
    if base.ndim < v.ndim:
        base = base.reshape(base.shape + (1,) * (v.ndim - base.ndim))
    r2 = dot_eta(v, v, eta)
    r = np.sqrt(np.maximum(r2, 0.0))
    small = r < 1e-8
    rs = np.where(small, 1.0, r)
    if eta == 1:
        c = np.cos(r)
        sinc = np.where(small, 1.0 - r2 / 6.0, np.sin(rs) / rs)
    else:
        c = np.cosh(r)
        sinc = np.where(small, 1.0 + r2 / 6.0, np.sinh(rs) / rs)
    return c * base + sinc * v


def tangent_basis(q, target):
    """Two ._eta-orthonormal tangent vectors at the point q (shape (3,))."""
    eta = _eta_of(target)
    q = np.asarray(q, dtype=float)
    basis = []
    for cand in np.eye(3):
        w = tangent_project(cand, q, eta)
        for b in basis:
            w = w - dot_eta(w, b, eta) * b
        nrm = dot_eta(w, w, eta)
        if nrm > 1e-8:
            basis.append(w / math.sqrt(nrm))
        if len(basis) == 2:
            break
    return np.array(basis)


def distance_field(u, target):
    """x -> distance from u(x) to the base point Q."""
    if not isinstance(target, TargetSpec):
        raise ConfigurationError("distance_field needs a TargetSpec")
    q = target.q.reshape((3,) + (1,) * (np.ndim(u) - 1))
    if target.eta == -1:
        check_on_target(u, target, tol=SHEET_TOL)
        return arccosh_extension(_pairing_arg(u, q))
    return sphere_distance(u, q)


def distance_field_besov(u, grid, target, s, check_criterion=True):
    """Besov B^s_{2,1} norm of the scalar field d(u(x), Q)."""
    from .spectral import besov21_norm

    if check_criterion and s > grid.n / 2:
        raise DomainError(f"composition needs s <= n/2 = {grid.n / 2}")
    return besov21_norm(distance_field(u, target), grid, s)


def composition_constant(u, grid, target, s):
    """Measured ratio of the distance-field Besov norm to the component norms of u - Q."""
    from .spectral import besov21_norm

    d = distance_field_besov(u, grid, target, s)
    q = target.q.reshape((3,) + (1,) * grid.n)
    comp = sum(besov21_norm((u - q)[c], grid, s) for c in range(3))
    linf = float(np.max(np.abs(u)))
    ratio = d / comp if comp > 0 else 0.0
    return {"besov_distance": d, "besov_components": comp, "sup_norm": linf, "constant": ratio}
