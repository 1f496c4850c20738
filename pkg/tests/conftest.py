import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hwmap.geometry import TargetSpec
from hwmap.spectral import Grid

settings.register_profile(
    "hwmap", deadline=None, max_examples=30, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("hwmap")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def grid1():
    return Grid(1, 64)


@pytest.fixture
def grid2():
    return Grid(2, 32)


@pytest.fixture(params=["sphere", "hyperbolic"])
def target(request):
    return TargetSpec(request.param)


def band_limited(grid, rng, cutoff=None, components=None):
    """Random real field with no energy above ``cutoff`` (default a quarter of the band)."""
    cutoff = grid.xi_max / 4 if cutoff is None else cutoff
    shape = grid.shape if components is None else (components,) + grid.shape
    noise = rng.standard_normal(shape)
    hat = np.fft.fftn(noise, axes=grid.axes) * (grid.kabs <= cutoff)
    return np.fft.ifftn(hat, axes=grid.axes).real


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
