"""Scan planning, trigger timing, and the simulated acquisition loop."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

from dmdhsi import pnm
from dmdhsi.errors import EmptyPlanError, InputError, RangeError, ValidationError
from dmdhsi.optics import (
    DMD_HEIGHT,
    DMD_WIDTH,
    DmdPattern,
    JitterModel,
    RgbFrame,
    SensorParams,
    SliceFrame,
    capture_pair,
    export_rgb,
    export_slice,
)
from dmdhsi.scene import RgbResponse, SpectralCube, rgb_render

MANIFEST = "manifest"
JITTER_LOG = "jitter.log"


@dataclass(frozen=True)
class TimingParams:
    exposure_ms: float = 10.0
    sensor_fps: float = 25.0
    sensor_min_fps: float = 25.0
    sensor_max_fps: float = 60.0
    dmd_max_pattern_hz: float = 9523.0
    overhead_ms: float = 0.0

    def __post_init__(self):
        if min(self.exposure_ms, self.sensor_fps, self.sensor_min_fps, self.sensor_max_fps, self.dmd_max_pattern_hz) <= 0:
            raise RangeError("timing parameters must be positive")
        if self.overhead_ms < 0:
            raise RangeError("overhead_ms must be >= 0")
        if self.sensor_min_fps > self.sensor_max_fps:
            raise RangeError("sensor_min_fps must not exceed sensor_max_fps")
        if not self.sensor_min_fps <= self.sensor_fps <= self.sensor_max_fps:
            raise RangeError(
                f"sensor frame rate {self.sensor_fps} outside [{self.sensor_min_fps}, {self.sensor_max_fps}] fps"
            )

    @property
    def dwell_ms(self) -> float:
        """Time per pattern: the slowest of exposure, sensor frame period and DMD pattern period."""
        return max(self.exposure_ms, 1000.0 / self.sensor_fps, 1000.0 / self.dmd_max_pattern_hz) + self.overhead_ms


@dataclass(frozen=True)
class ScanPlan:
    patterns: Tuple[DmdPattern, ...]
    slit_width: int
    dwell_ms: float
    scene_width: int

    def __post_init__(self):
        object.__setattr__(self, "patterns", tuple(self.patterns))
        if self.slit_width < 1:
            raise RangeError("slit width must be >= 1")
        last = -1
        for p in self.patterns:
            if p.slit_start <= last:
                raise ValidationError("plan patterns must be ordered left to right and non-overlapping")
            if p.stop > self.scene_width:
                raise RangeError(f"pattern at {p.slit_start} exceeds scene width {self.scene_width}")
            last = p.stop - 1

    def __len__(self):
        return len(self.patterns)

    def columns(self) -> list:
        return [c for p in self.patterns for c in p.columns]

    @property
    def is_full(self) -> bool:
        return self.columns() == list(range(self.scene_width))


def tile_intervals(
    intervals: Iterable[Tuple[int, int]],
    slit_width: int,
    scene_width: int,
    timing: Optional[TimingParams] = None,
    dmd_dims=(DMD_WIDTH, DMD_HEIGHT),
) -> ScanPlan:
    """Tile half-open column intervals left to right with slits, clipping each interval's last slit."""
    if slit_width < 1:
        raise RangeError(f"slit width must be >= 1, got {slit_width}")
    if scene_width > dmd_dims[0]:
        raise RangeError(f"scene width {scene_width} exceeds DMD width {dmd_dims[0]}")
    timing = timing or TimingParams()
    patterns = []
    for start, stop in sorted(intervals):
        for s in range(start, stop, slit_width):
            patterns.append(DmdPattern(s, min(slit_width, stop - s), dmd_dims[0], dmd_dims[1]))
    if not patterns:
        raise EmptyPlanError("no columns to scan")
    return ScanPlan(tuple(patterns), slit_width, timing.dwell_ms, scene_width)


def full_scan_plan(scene_width: int, slit_width: int = 1, timing: Optional[TimingParams] = None, dmd_dims=(DMD_WIDTH, DMD_HEIGHT)) -> ScanPlan:
    if not 1 <= slit_width <= scene_width:
        raise RangeError(f"slit width must lie in [1, {scene_width}], got {slit_width}")
    return tile_intervals([(0, scene_width)], slit_width, scene_width, timing, dmd_dims)


def estimate_time(plan: ScanPlan, timing: Optional[TimingParams] = None) -> float:
    """Acquisition time in ms (pattern count times dwell)."""
    dwell = plan.dwell_ms if timing is None else timing.dwell_ms
    return len(plan) * dwell


def write_plan(plan: ScanPlan, path) -> None:
    lines = [
        f"scene_width {plan.scene_width}",
        f"slit_width {plan.slit_width}",
        f"dwell_ms {plan.dwell_ms!r}",
    ]
    lines += [f"pattern {p.slit_start} {p.slit_width}" for p in plan.patterns]
    _atomic_text(path, "\n".join(lines) + "\n")


def read_plan(path, dmd_dims=(DMD_WIDTH, DMD_HEIGHT)) -> ScanPlan:
    head = {}
    patterns = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        parts = line.split("#", 1)[0].split()
        if not parts:
            continue
        try:
            if parts[0] == "pattern":
                patterns.append(DmdPattern(int(parts[1]), int(parts[2]), *dmd_dims))
            else:
                head[parts[0]] = float(parts[1])
        except (IndexError, ValueError):
            raise InputError(f"{path}:{lineno}: malformed plan line") from None
    try:
        return ScanPlan(tuple(patterns), int(head["slit_width"]), head["dwell_ms"], int(head["scene_width"]))
    except KeyError as exc:
        raise InputError(f"{path}: missing {exc.args[0]}") from None


@dataclass(frozen=True, eq=False)
class AcquisitionRecord:
    """Synchronised frames of one scan.

    ``jitter_log`` holds the simulated ground-truth offsets; only tests may
    read it. Reconstruction works from the other fields.
    """

    patterns: Tuple[DmdPattern, ...]
    slices: Tuple[SliceFrame, ...]
    rgbs: Tuple[RgbFrame, ...]
    timestamps_ms: Tuple[float, ...]
    scene_width: int
    scene_height: int
    wavelengths: np.ndarray
    slit_width: int
    dwell_ms: float
    sensor: Optional[SensorParams] = None
    alpha: float = 0.0
    jitter_log: object = None

    def __post_init__(self):
        n = len(self.patterns)
        if not (len(self.slices) == len(self.rgbs) == len(self.timestamps_ms) == n):
            raise ValidationError("record fields must have one entry per pattern")
        if any(b <= a for a, b in zip(self.timestamps_ms, self.timestamps_ms[1:])):
            raise ValidationError("timestamps must be strictly increasing")
        for s, r in zip(self.slices, self.rgbs):
            if s.index != r.index:
                raise ValidationError("slice and RGB frames must share a frame index")

    def __len__(self):
        return len(self.patterns)

    @property
    def bands(self) -> int:
        return len(self.wavelengths)

    def entries(self):
        return zip(self.patterns, self.slices, self.rgbs, self.timestamps_ms)


def run_acquisition(
    scene: SpectralCube,
    plan: ScanPlan,
    sensor: Optional[SensorParams] = None,
    jitter: Optional[JitterModel] = None,
    rgb_resp: Optional[RgbResponse] = None,
    alpha: float = 0.0,
    workers: int = 1,
) -> AcquisitionRecord:
    """Capture one (slice, RGB) pair per plan pattern.

    Frame ``i`` is triggered at ``i * dwell`` and sees the scene displaced by
    the ``i``-th jitter offset. ``sensor=None`` gives the noiseless float path.
    """
    if plan.scene_width != scene.width:
        raise RangeError(f"plan is for width {plan.scene_width}, scene has width {scene.width}")
    jitter = jitter or JitterModel()
    rgb_resp = rgb_resp or RgbResponse.gaussian(scene.wavelengths)
    offsets = jitter.offsets(len(plan))
    stamps = tuple(i * plan.dwell_ms for i in range(len(plan)))
    rendered = rgb_render(scene, rgb_resp)

    def shoot(i):
        return capture_pair(
            scene, plan.patterns[i], offsets[i], sensor, rgb_resp, alpha, i, stamps[i], rendered=rendered
        )

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            pairs = list(pool.map(shoot, range(len(plan))))
    else:
        pairs = [shoot(i) for i in range(len(plan))]

    return AcquisitionRecord(
        patterns=plan.patterns,
        slices=tuple(p[0] for p in pairs),
        rgbs=tuple(p[1] for p in pairs),
        timestamps_ms=stamps,
        scene_width=scene.width,
        scene_height=scene.height,
        wavelengths=scene.wavelengths,
        slit_width=plan.slit_width,
        dwell_ms=plan.dwell_ms,
        sensor=sensor,
        alpha=alpha,
        jitter_log=offsets,
    )


# --- persistence ------------------------------------------------------------


def _atomic_text(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def save_record(record: AcquisitionRecord, directory) -> None:
    """Write ``manifest``, ``slice_%05d.pgm``, ``rgb_%05d.ppm`` and ``jitter.log``."""
    if record.sensor is None:
        raise ValidationError("only quantized acquisitions can be saved")
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    lines = [
        "# dmdhsi acquisition manifest",
        f"scene_width = {record.scene_width}",
        f"scene_height = {record.scene_height}",
        f"bands = {record.bands}",
        "wavelengths = " + " ".join(repr(float(w)) for w in record.wavelengths),
        f"slit_width = {record.slit_width}",
        f"dwell_ms = {record.dwell_ms!r}",
        f"alpha = {record.alpha!r}",
    ]
    for f in fields(SensorParams):
        lines.append(f"sensor.{f.name} = {getattr(record.sensor, f.name)!r}")
    lines.append(f"frames = {len(record)}")
    for i, (p, s, r, t) in enumerate(record.entries()):
        lines.append(f"frame {i} {p.slit_start} {p.slit_width} {p.dmd_width} {p.dmd_height} {t!r}")
        export_slice(s, d / f"slice_{i:05d}.pgm")
        export_rgb(r, d / f"rgb_{i:05d}.ppm")
    _atomic_text(d / MANIFEST, "\n".join(lines) + "\n")
    if record.jitter_log is not None:
        log = np.asarray(record.jitter_log)
        _atomic_text(d / JITTER_LOG, "".join(f"{dx!r} {dy!r}\n" for dx, dy in log.tolist()))


def _parse_value(text):
    if text in ("True", "False"):
        return text == "True"
    try:
        return int(text)
    except ValueError:
        return float(text)


def load_record(directory, with_jitter: bool = False) -> AcquisitionRecord:
    """Read a saved record. The jitter log is loaded only when asked for."""
    d = Path(directory)
    manifest = d / MANIFEST
    if not manifest.is_file():
        raise InputError(f"{d}: no acquisition manifest")
    meta, frames = {}, []
    for lineno, line in enumerate(manifest.read_text().splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        try:
            if line.startswith("frame "):
                _, i, start, width, dw, dh, t = line.split()
                frames.append((int(i), DmdPattern(int(start), int(width), int(dw), int(dh)), float(t)))
            else:
                key, value = (s.strip() for s in line.split("=", 1))
                meta[key] = value
        except ValueError:
            raise InputError(f"{manifest}:{lineno}: malformed line") from None
    try:
        sensor = SensorParams(
            **{f.name: _parse_value(meta[f"sensor.{f.name}"]) for f in fields(SensorParams)}
        )
        wavelengths = np.array([float(w) for w in meta["wavelengths"].split()], dtype=np.float32)
        width, height = int(meta["scene_width"]), int(meta["scene_height"])
    except KeyError as exc:
        raise InputError(f"{manifest}: missing key {exc.args[0]}") from None
    if len(frames) != int(meta.get("frames", len(frames))):
        raise InputError(f"{manifest}: frame count mismatch")

    slices, rgbs = [], []
    for i, pattern, t in frames:
        sdata, _ = pnm.read_pnm(d / f"slice_{i:05d}.pgm")
        rdata, _ = pnm.read_pnm(d / f"rgb_{i:05d}.ppm")
        slices.append(SliceFrame(sdata, pattern, i, True, sensor.bit_depth))
        rgbs.append(RgbFrame(rdata, i, t, True, sensor.bit_depth))

    jitter = None
    if with_jitter and (d / JITTER_LOG).is_file():
        jitter = np.loadtxt(d / JITTER_LOG, ndmin=2)
    return AcquisitionRecord(
        patterns=tuple(f[1] for f in frames),
        slices=tuple(slices),
        rgbs=tuple(rgbs),
        timestamps_ms=tuple(f[2] for f in frames),
        scene_width=width,
        scene_height=height,
        wavelengths=wavelengths,
        slit_width=int(meta["slit_width"]),
        dwell_ms=float(meta["dwell_ms"]),
        sensor=sensor,
        alpha=float(meta.get("alpha", 0.0)),
        jitter_log=jitter,
    )
