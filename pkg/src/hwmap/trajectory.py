"""Uniformly time-sampled field sequences."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigurationError
from .geometry import TargetSpec
from .spectral import Grid


@dataclass(frozen=True)
class Trajectory:
    """Frames ``u[i]`` (and optionally ``u_t[i]``) at times ``t0 + i*dt``.

    ``u`` has shape ``(nt, 3) + grid.shape`` for maps and ``(nt,) + grid.shape``
    or ``(nt, c) + grid.shape`` for plain wave solutions (then ``target`` may be
    ``None``).
    """

    grid: Grid
    dt: float
    u: np.ndarray
    u_t: Optional[np.ndarray] = None
    target: Optional[TargetSpec] = None
    t0: float = 0.0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.u.shape[-self.grid.n:] != self.grid.shape:
            raise ConfigurationError("trajectory frames do not match the grid")
        if self.u_t is not None and self.u_t.shape != self.u.shape:
            raise ConfigurationError("u_t frames must match u frames")
        if not self.dt > 0:
            raise ConfigurationError("trajectory dt must be positive")

    @property
    def nt(self):
        return self.u.shape[0]

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(self.nt)

    @property
    def horizon(self):
        return self.t0 + self.dt * (self.nt - 1)

    def frame(self, i):
        return self.u[i], (None if self.u_t is None else self.u_t[i])

    def subsample(self, every):
        return Trajectory(
            self.grid, self.dt * every, self.u[::every],
            None if self.u_t is None else self.u_t[::every],
            self.target, self.t0, dict(self.meta),
        )
