import numpy as np
import pytest
from scipy import ndimage

from crossalign import imgio


@pytest.fixture
def rng():
    return np.random.default_rng(20241016)


def smooth_field(rng, shape, sigma=6.0, lo=0.1, hi=0.9):
    """Random smooth texture in [lo, hi]; channel axis (if any) is not smoothed."""
    noise = rng.standard_normal(shape)
    sig = (sigma, sigma) + (0,) * (len(shape) - 2)
    field = ndimage.gaussian_filter(noise, sig)
    field = (field - field.min()) / (field.max() - field.min())
    return lo + (hi - lo) * field


def coded(image):
    """Snap a real image onto the 8-bit grid, as if loaded from disk."""
    return imgio.quantize(image) / 255.0


# acceptance verdicts, printed once at the end of the session
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
