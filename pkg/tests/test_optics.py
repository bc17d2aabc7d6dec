import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import small_cubes
from dmdhsi.errors import RangeError, ShapeError, ValidationError
from dmdhsi.optics import (
    DmdPattern,
    JitterModel,
    SensorParams,
    apply_noise,
    capture_pair,
    disperse,
    export_rgb,
    export_slice,
    make_pattern,
    translate,
)
from dmdhsi.pnm import read_pnm
from dmdhsi.scene import RgbResponse, SpectralCube, rgb_render, wavelength_grid
from dmdhsi.metrics import snr_db


def test_pattern_examples():
    p = make_pattern(0, 1)
    assert list(p.columns) == [0]
    edge = make_pattern(1919, 1)
    assert edge.tilt(1919) == 12 and edge.tilt(0) == -12
    with pytest.raises(RangeError):
        make_pattern(1919, 2)
    with pytest.raises(RangeError):
        make_pattern(0, 0)


def test_mirror_mask():
    m = DmdPattern(3, 2, 8, 4).mirror_mask()
    assert m.shape == (4, 8)
    assert m.sum() == 8 and m[:, 3:5].all()


def test_mirror_groups_map_to_scene_columns():
    assert list(DmdPattern(8, 4).scene_columns(4)) == [2]
    assert list(DmdPattern(6, 4).scene_columns(4)) == [1, 2]


# --- capture_pair ---------------------------------------------------------


def _cube(rng, b=6, h=5, w=7):
    return SpectralCube(wavelength_grid(b), rng.random((b, h, w)))


def test_single_column_readout(rng):
    cube = _cube(rng)
    sl, _ = capture_pair(cube, make_pattern(4, 1))
    np.testing.assert_array_equal(sl.data, cube.data[:, :, 4].T)
    assert sl.spectral_pixels == cube.bands


def test_monochromatic_two_column_slit():
    data = np.zeros((6, 3, 5))
    data[2] = 0.75
    cube = SpectralCube(wavelength_grid(6), data)
    sl, _ = capture_pair(cube, make_pattern(1, 2))
    nz = np.flatnonzero(sl.data.any(axis=0))
    assert list(nz) == [2, 3]
    np.testing.assert_array_equal(sl.data[:, 2:4], np.float32(0.75))


def test_rgb_stripe_is_dark(rng):
    cube = _cube(rng, 10, 6, 9)
    ref = rgb_render(cube, RgbResponse.gaussian(cube.wavelengths))
    _, rgb = capture_pair(cube, make_pattern(3, 2))
    assert rgb.data[:, 3:5].mean() == 0
    keep = np.ones(9, bool)
    keep[3:5] = False
    np.testing.assert_array_equal(rgb.data[:, keep], ref[:, keep])


def test_alpha_attenuates(rng):
    cube = _cube(rng)
    ref = rgb_render(cube, RgbResponse.gaussian(cube.wavelengths))
    _, rgb = capture_pair(cube, make_pattern(2, 1), alpha=0.25)
    np.testing.assert_allclose(rgb.data[:, 2], 0.25 * ref[:, 2])


def test_capture_errors(rng):
    cube = _cube(rng)
    with pytest.raises(RangeError):
        capture_pair(cube, make_pattern(6, 2))
    with pytest.raises(ShapeError):
        capture_pair(cube, make_pattern(0), rgb_resp=RgbResponse.gaussian(wavelength_grid(4)))


@given(small_cubes(max_w=8, min_b=1), st.data())
def test_slit_superposition(cube, data):
    w = data.draw(st.integers(1, cube.width))
    p = data.draw(st.integers(0, cube.width - w))
    wide, _ = capture_pair(cube, make_pattern(p, w))
    assert wide.spectral_pixels - cube.bands == w - 1
    total = np.zeros_like(wide.data)
    for j in range(w):
        single, _ = capture_pair(cube, make_pattern(p + j, 1))
        total[:, j:j + cube.bands] += single.data
    np.testing.assert_array_equal(wide.data, total)


@given(small_cubes(), small_cubes(), st.floats(0, 4), st.data())
def test_slice_linearity(c1, c2, a, data):
    c2 = SpectralCube(c1.wavelengths, np.resize(c2.data, c1.shape))
    w = data.draw(st.integers(1, c1.width))
    pat = make_pattern(0, w)
    combo = SpectralCube(c1.wavelengths, a * c1.data.astype(np.float64) + c2.data)
    lhs = capture_pair(combo, pat)[0].data
    rhs = a * capture_pair(c1, pat)[0].data + capture_pair(c2, pat)[0].data
    np.testing.assert_allclose(lhs, rhs, rtol=1e-5, atol=1e-5)


@given(small_cubes(max_w=8, max_h=6), st.data())
def test_rgb_conservation(cube, data):
    w = data.draw(st.integers(1, cube.width))
    p = data.draw(st.integers(0, cube.width - w))
    ref = rgb_render(cube, RgbResponse.gaussian(cube.wavelengths))
    _, rgb = capture_pair(cube, make_pattern(p, w))
    keep = np.ones(cube.width, bool)
    keep[p:p + w] = False
    np.testing.assert_array_equal(rgb.data[:, keep], ref[:, keep])
    assert not rgb.data[:, ~keep].any()


@given(small_cubes(max_w=8, max_h=6), st.integers(-3, 3), st.integers(-3, 3), st.data())
def test_integer_jitter_commutes(cube, dx, dy, data):
    p = data.draw(st.integers(0, cube.width - 1))
    shifted = SpectralCube(cube.wavelengths, translate(cube.data, dx, dy))
    a, ra = capture_pair(cube, make_pattern(p), (dx, dy))
    b, rb = capture_pair(shifted, make_pattern(p))
    np.testing.assert_array_equal(a.data, b.data)
    np.testing.assert_allclose(ra.data, rb.data, atol=1e-6)


def test_subpixel_jitter_is_bilinear():
    data = np.zeros((1, 3, 6))
    data[0, :, 2] = 1.0
    cube = SpectralCube([500.0], data)
    sl, _ = capture_pair(cube, make_pattern(2), (0.25, 0))
    np.testing.assert_allclose(sl.data[:, 0], 0.75)
    sl, _ = capture_pair(cube, make_pattern(3), (0.25, 0))
    np.testing.assert_allclose(sl.data[:, 0], 0.25)


def test_translate_convention():
    a = np.arange(12.0).reshape(3, 4)
    t = translate(a, 1, -1)
    assert t[0, 1] == a[1, 0]
    assert t[2].sum() == 0 and t[:, 0].sum() == 0


def test_disperse_shape():
    assert disperse(np.ones((5, 2, 3))).shape == (2, 7)


# --- noise ----------------------------------------------------------------


def test_noiseless_full_scale():
    s = SensorParams(read_noise_sigma=0, shot_noise=False)
    assert s.electrons_per_unit == s.full_well
    assert apply_noise(np.ones((2, 2)), s).max() == 255
    assert apply_noise(np.full(3, 7.0), s).tolist() == [255] * 3


def test_zero_input_no_read_noise():
    s = SensorParams(read_noise_sigma=0)
    assert not apply_noise(np.zeros((4, 4)), s).any()


def test_noise_is_deterministic():
    s = SensorParams(seed=4)
    v = np.full((5, 5), 0.4)
    np.testing.assert_array_equal(apply_noise(v, s, 3), apply_noise(v, s, 3))
    assert not np.array_equal(apply_noise(v, s, 3), apply_noise(v, s, 4))
    assert not np.array_equal(apply_noise(v, s, 3, 0), apply_noise(v, s, 3, 1))


def test_quantized_frames_in_range(rng):
    cube = _cube(rng)
    s = SensorParams(bit_depth=10)
    sl, rgb = capture_pair(cube, make_pattern(1, 3), sensor=s)
    assert sl.quantized and rgb.quantized
    assert sl.data.max() < 1024 and rgb.data.max() < 1024
    assert sl.index == rgb.index


@pytest.mark.parametrize("level", [0.5, 0.2])
def test_monte_carlo_snr_matches_variance_law(level):
    # High bit depth keeps quantisation negligible next to shot+read noise.
    s = SensorParams(bit_depth=16, full_well=20000, gain=2000, read_noise_sigma=30, seed=9)
    clean = np.full(10_000, level)
    codes = apply_noise(clean, s)
    measured = snr_db(clean, s.to_radiance(codes))
    analytic = s.analytic_snr_db(level)
    assert abs(10 ** (measured / 10) / 10 ** (analytic / 10) - 1) < 0.10


def test_for_snr_hits_target():
    s = SensorParams.for_snr(20.0)
    assert s.analytic_snr_db(0.5) == pytest.approx(20.0)
    s = SensorParams.for_snr(25.0, read_noise_sigma=3)
    assert s.analytic_snr_db(0.5) == pytest.approx(25.0)


def test_sensor_validation():
    with pytest.raises(ValidationError):
        SensorParams(bit_depth=9)
    with pytest.raises(RangeError):
        SensorParams(exposure_ms=0)
    with pytest.raises(RangeError):
        SensorParams(read_noise_sigma=-1)


# --- jitter ---------------------------------------------------------------


def test_zero_amplitude_walk():
    assert not JitterModel("random-walk", 0.0, seed=3).offsets(50).any()


@pytest.mark.parametrize("kind", ["random-walk", "sinusoid", "uniform"])
def test_jitter_bounds_and_integrality(kind):
    off = JitterModel(kind, 3.0, seed=1).offsets(300)
    assert np.abs(off).max() <= 3
    np.testing.assert_array_equal(off, np.round(off))
    sub = JitterModel(kind, 2.5, subpixel=True, seed=1).offsets(300)
    assert np.abs(sub).max() <= 2.5


def test_jitter_seeded():
    a = JitterModel("random-walk", 3, seed=5).offsets(100)
    np.testing.assert_array_equal(a, JitterModel("random-walk", 3, seed=5).offsets(100))
    with pytest.raises(ValidationError):
        JitterModel("spin")


# --- export ---------------------------------------------------------------


def test_export_round_trip(tmp_path, rng):
    cube = _cube(rng)
    sl, rgb = capture_pair(cube, make_pattern(2, 2), sensor=SensorParams(seed=1))
    export_slice(sl, tmp_path / "s.pgm")
    export_rgb(rgb, tmp_path / "r.ppm")
    s, maxval = read_pnm(tmp_path / "s.pgm")
    r, _ = read_pnm(tmp_path / "r.ppm")
    assert maxval == 255
    np.testing.assert_array_equal(s, sl.data)
    np.testing.assert_array_equal(r, rgb.data)
    assert (tmp_path / "r.ppm").read_bytes()[:2] == b"P6"
    with pytest.raises(ValidationError):
        export_slice(capture_pair(cube, make_pattern(0))[0], tmp_path / "f.pgm")
