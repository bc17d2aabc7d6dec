import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dmdhsi.controller import (
    AcquisitionRecord,
    ScanPlan,
    TimingParams,
    estimate_time,
    full_scan_plan,
    load_record,
    read_plan,
    run_acquisition,
    save_record,
    tile_intervals,
    write_plan,
)
from dmdhsi.errors import EmptyPlanError, InputError, RangeError, ValidationError
from dmdhsi.optics import DmdPattern, JitterModel, SensorParams
from dmdhsi.scene import SpectralCube, wavelength_grid


def test_default_dwell_is_frame_period():
    assert TimingParams().dwell_ms == 40.0
    assert TimingParams(exposure_ms=50, sensor_fps=25).dwell_ms == 50.0
    assert TimingParams(sensor_fps=60, sensor_max_fps=60).dwell_ms == pytest.approx(1000 / 60)
    assert TimingParams(overhead_ms=2).dwell_ms == 42.0


def test_timing_validation():
    with pytest.raises(RangeError):
        TimingParams(sensor_fps=100)
    with pytest.raises(RangeError):
        TimingParams(sensor_min_fps=70)
    with pytest.raises(RangeError):
        TimingParams(exposure_ms=0)


def test_full_scan_examples():
    plan = full_scan_plan(400, 1)
    assert len(plan) == 400
    assert [p.slit_start for p in plan.patterns] == list(range(400))
    assert len(full_scan_plan(400, 4)) == 100
    edge = full_scan_plan(5, 2)
    assert [(p.slit_start, p.slit_width) for p in edge.patterns] == [(0, 2), (2, 2), (4, 1)]
    with pytest.raises(RangeError):
        full_scan_plan(400, 0)


def test_estimate_time_examples():
    assert estimate_time(full_scan_plan(400)) == 16_000
    one = tile_intervals([(3, 4)], 1, 10)
    assert estimate_time(one) == one.dwell_ms


@given(st.integers(1, 600), st.data())
def test_tiling_and_tradeoff(width, data):
    w = data.draw(st.integers(1, width))
    plan = full_scan_plan(width, w)
    cols = plan.columns()
    assert cols == list(range(width))
    assert plan.is_full
    count_1 = len(full_scan_plan(width, 1))
    assert len(plan) == math.ceil(count_1 / w)
    assert estimate_time(plan) <= estimate_time(full_scan_plan(width, 1))


def test_plan_rejects_overlap():
    with pytest.raises(ValidationError):
        ScanPlan((DmdPattern(0, 2), DmdPattern(1, 1)), 2, 40.0, 10)
    with pytest.raises(EmptyPlanError):
        tile_intervals([], 1, 10)


def test_plan_file_round_trip(tmp_path):
    plan = tile_intervals([(2, 9), (20, 23)], 3, 40)
    write_plan(plan, tmp_path / "p.plan")
    again = read_plan(tmp_path / "p.plan")
    assert again == plan


def test_plan_file_errors(tmp_path):
    with pytest.raises(OSError):
        read_plan(tmp_path / "missing.plan")
    (tmp_path / "bad.plan").write_text("scene_width 10\nslit_width 1\ndwell_ms 40\npattern x 1\n")
    with pytest.raises(InputError):
        read_plan(tmp_path / "bad.plan")


# --- acquisition ----------------------------------------------------------


def _scene(seed=0, b=8, h=10, w=12):
    rng = np.random.default_rng(seed)
    return SpectralCube(wavelength_grid(b), rng.random((b, h, w)))


def test_lossless_stack():
    scene = _scene()
    rec = run_acquisition(scene, full_scan_plan(scene.width))
    stacked = np.stack([s.data.T for s in rec.slices], axis=2)
    np.testing.assert_array_equal(stacked, scene.data)
    assert list(rec.timestamps_ms) == [40.0 * i for i in range(scene.width)]


def test_zero_amplitude_log():
    scene = _scene()
    rec = run_acquisition(scene, full_scan_plan(scene.width), jitter=JitterModel("random-walk", 0, seed=2))
    assert not np.asarray(rec.jitter_log).any()


def test_acquisition_is_bitwise_reproducible():
    scene = _scene(3)
    plan = full_scan_plan(scene.width, 2)
    kw = dict(sensor=SensorParams(seed=11), jitter=JitterModel("random-walk", 2, seed=4))
    a = run_acquisition(scene, plan, **kw)
    b = run_acquisition(scene, plan, workers=4, **kw)
    for x, y in zip(a.slices + a.rgbs, b.slices + b.rgbs):
        assert x.data.tobytes() == y.data.tobytes()
    np.testing.assert_array_equal(a.jitter_log, b.jitter_log)


def test_record_invariants():
    scene = _scene()
    rec = run_acquisition(scene, full_scan_plan(scene.width, 3))
    for _, s, r, _ in rec.entries():
        assert s.index == r.index
    with pytest.raises(ValidationError):
        AcquisitionRecord(
            rec.patterns, rec.slices, rec.rgbs, (0.0,) * len(rec), scene.width, scene.height,
            scene.wavelengths, 3, 40.0,
        )


def test_plan_scene_mismatch():
    with pytest.raises(RangeError):
        run_acquisition(_scene(), full_scan_plan(20))


def test_save_and_load(tmp_path):
    scene = _scene(1)
    rec = run_acquisition(
        scene, full_scan_plan(scene.width, 2), sensor=SensorParams(seed=5), jitter=JitterModel("uniform", 2, seed=1)
    )
    save_record(rec, tmp_path / "acq")
    names = sorted(p.name for p in (tmp_path / "acq").iterdir())
    assert "manifest" in names and "jitter.log" in names and "slice_00000.pgm" in names and "rgb_00005.ppm" in names
    back = load_record(tmp_path / "acq")
    assert back.jitter_log is None
    assert back.sensor == rec.sensor and back.patterns == rec.patterns
    assert back.timestamps_ms == rec.timestamps_ms
    for x, y in zip(rec.slices + rec.rgbs, back.slices + back.rgbs):
        np.testing.assert_array_equal(x.data, y.data)
    np.testing.assert_array_equal(load_record(tmp_path / "acq", with_jitter=True).jitter_log, rec.jitter_log)


def test_load_missing(tmp_path):
    with pytest.raises(InputError):
        load_record(tmp_path)


def test_float_records_are_not_saved(tmp_path):
    scene = _scene()
    with pytest.raises(ValidationError):
        save_record(run_acquisition(scene, full_scan_plan(scene.width)), tmp_path)
