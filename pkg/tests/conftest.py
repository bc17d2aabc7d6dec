import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from dmdhsi.scene import SpectralCube, wavelength_grid

settings.register_profile(
    "fixed",
    derandomize=True,
    max_examples=40,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("fixed")


@st.composite
def small_cubes(draw, max_w=8, max_h=6, max_b=6, min_b=1):
    w = draw(st.integers(1, max_w))
    h = draw(st.integers(1, max_h))
    b = draw(st.integers(min_b, max_b))
    data = draw(
        hnp.arrays(np.float32, (b, h, w), elements=st.floats(0, 1, width=32, allow_subnormal=False))
    )
    return SpectralCube(wavelength_grid(b), data)


def random_cube(rng, bands, height, width):
    return SpectralCube(wavelength_grid(bands), rng.random((bands, height, width)))


def textured_cube(rng, bands, height, width, smooth=1.5):
    """Spatially textured cube with a smooth spectral dimension."""
    from scipy import ndimage

    base = ndimage.gaussian_filter(rng.random((height, width)), smooth)
    base = (base - base.min()) / (base.max() - base.min())
    tilt = np.linspace(0.6, 1.0, bands)[:, None, None]
    return SpectralCube(wavelength_grid(bands), 0.1 + 0.8 * base[None] * tilt)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# --- acceptance reporting ---------------------------------------------------

_criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    if report.when == "call" or (report.when == "setup" and not report.passed):
        _criteria[n] = (title, report.passed)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        title, ok = _criteria[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {title}")


def pytest_collection_modifyitems(items):
    for item in items:
        if getattr(getattr(item, "obj", None), "is_hypothesis_test", False):
            item.add_marker(pytest.mark.property)
