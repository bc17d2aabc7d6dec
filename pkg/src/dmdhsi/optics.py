"""Instrument forward model.

A slit of DMD columns sends its light through the grating onto the spectral
sensor; everything else reaches the RGB sensor, which therefore sees a dark
stripe where the slit is. Dispersion is one detector pixel per band, so a
slit of width ``w`` produces a shift-and-add of ``w`` column spectra.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np
from scipy import ndimage

from dmdhsi import pnm
from dmdhsi.errors import RangeError, ShapeError, ValidationError
from dmdhsi.scene import RgbResponse, SpectralCube, rgb_render

DMD_WIDTH = 1920
DMD_HEIGHT = 1080
TILT_TO_GRATING = 12.0
TILT_TO_AUX = -12.0

ALLOWED_BIT_DEPTHS = (8, 10, 12, 16)
JITTER_KINDS = ("none", "random-walk", "sinusoid", "uniform")

RNG_STREAM_SLICE = 0
RNG_STREAM_RGB = 1


@dataclass(frozen=True)
class DmdPattern:
    slit_start: int
    slit_width: int = 1
    dmd_width: int = DMD_WIDTH
    dmd_height: int = DMD_HEIGHT

    def __post_init__(self):
        if self.dmd_width < 1 or self.dmd_height < 1:
            raise RangeError("DMD dimensions must be positive")
        if self.slit_width < 1:
            raise RangeError(f"slit width must be >= 1, got {self.slit_width}")
        if self.slit_start < 0 or self.slit_start + self.slit_width > self.dmd_width:
            raise RangeError(
                f"slit [{self.slit_start}, {self.slit_start + self.slit_width}) exceeds DMD width {self.dmd_width}"
            )

    @property
    def stop(self) -> int:
        return self.slit_start + self.slit_width

    @property
    def columns(self) -> range:
        return range(self.slit_start, self.stop)

    def tilt(self, column: int) -> float:
        """Mirror tilt in degrees for a DMD column."""
        return TILT_TO_GRATING if self.slit_start <= column < self.stop else TILT_TO_AUX

    def mirror_mask(self) -> np.ndarray:
        """Boolean (dmd_height, dmd_width) array, True where mirrors face the grating."""
        mask = np.zeros((self.dmd_height, self.dmd_width), dtype=bool)
        mask[:, self.slit_start:self.stop] = True
        return mask

    def scene_columns(self, mirror_group: int = 1) -> range:
        return range(self.slit_start // mirror_group, (self.stop - 1) // mirror_group + 1)


def make_pattern(slit_start: int, slit_width: int = 1, dmd_dims: Tuple[int, int] = (DMD_WIDTH, DMD_HEIGHT)) -> DmdPattern:
    return DmdPattern(int(slit_start), int(slit_width), int(dmd_dims[0]), int(dmd_dims[1]))


@dataclass(frozen=True)
class SensorParams:
    """8-bit CMOS sensor model.

    ``gain`` is electrons per unit radiance per millisecond of exposure; the
    defaults map unit radiance at 10 ms exactly to the full well.
    """

    exposure_ms: float = 10.0
    bit_depth: int = 8
    full_well: float = 10_000.0
    read_noise_sigma: float = 5.0
    gain: float = 1_000.0
    shot_noise: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.bit_depth not in ALLOWED_BIT_DEPTHS:
            raise ValidationError(f"bit depth must be one of {ALLOWED_BIT_DEPTHS}")
        if self.exposure_ms <= 0:
            raise RangeError("exposure_ms must be > 0")
        if self.full_well <= 0 or self.gain < 0 or self.read_noise_sigma < 0:
            raise RangeError("full_well must be > 0, gain and read noise >= 0")

    @property
    def max_code(self) -> int:
        return 2**self.bit_depth - 1

    @property
    def electrons_per_unit(self) -> float:
        return self.gain * self.exposure_ms

    @property
    def noiseless(self) -> "SensorParams":
        return replace(self, shot_noise=False, read_noise_sigma=0.0)

    def to_codes_scale(self) -> float:
        """Code units per unit radiance (before clamping)."""
        return self.electrons_per_unit / self.full_well * self.max_code

    def to_radiance(self, codes) -> np.ndarray:
        return np.asarray(codes, dtype=np.float64) / self.to_codes_scale()

    def analytic_snr_db(self, level: float, quantization: bool = False) -> float:
        """Predicted SNR of a flat field at radiance ``level`` (shot + read, optionally + quantization)."""
        e = self.electrons_per_unit * level
        var = (e if self.shot_noise else 0.0) + self.read_noise_sigma**2
        if quantization:
            step = self.full_well / self.max_code
            var += step**2 / 12.0
        if var == 0:
            return math.inf
        return 10.0 * math.log10(e**2 / var)

    @classmethod
    def for_snr(cls, snr_db: float, level: float = 0.5, read_noise_sigma: float = 0.0, **kw) -> "SensorParams":
        """Sensor whose shot+read SNR at radiance ``level`` equals ``snr_db``; unit radiance hits full scale."""
        k = 10.0 ** (snr_db / 10.0)
        # e^2 = k (e + r^2)  ->  e = (k + sqrt(k^2 + 4 k r^2)) / 2
        e = (k + math.sqrt(k * k + 4.0 * k * read_noise_sigma**2)) / 2.0
        full_well = e / level
        exposure = kw.pop("exposure_ms", 10.0)
        return cls(
            exposure_ms=exposure,
            full_well=full_well,
            gain=full_well / exposure,
            read_noise_sigma=read_noise_sigma,
            **kw,
        )


@dataclass(frozen=True)
class JitterModel:
    """Platform motion model; offsets are (dx, dy) scene translations in pixels.

    ``random-walk`` and ``sinusoid`` start at (0, 0) on the first frame;
    ``uniform`` draws every frame independently from [-amplitude, amplitude]^2.
    """

    kind: str = "none"
    amplitude: float = 0.0
    step_sigma: float = 1.0
    subpixel: bool = False
    period: float = 50.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in JITTER_KINDS:
            raise ValidationError(f"jitter kind must be one of {JITTER_KINDS}, got {self.kind!r}")
        if self.amplitude < 0 or self.step_sigma < 0:
            raise RangeError("amplitude and step_sigma must be >= 0")
        if self.period <= 0:
            raise RangeError("period must be > 0")

    def offsets(self, n: int) -> np.ndarray:
        out = np.zeros((n, 2), dtype=np.float64)
        if n == 0 or self.kind == "none" or self.amplitude == 0:
            return out
        rng = np.random.default_rng(self.seed)
        a = self.amplitude
        if self.kind == "random-walk":
            steps = rng.normal(0.0, self.step_sigma, size=(n, 2))
            pos = np.zeros(2)
            for i in range(1, n):
                pos = np.clip(pos + steps[i], -a, a)
                out[i] = pos if self.subpixel else np.clip(np.round(pos), -math.floor(a), math.floor(a))
            return out
        if self.kind == "sinusoid":
            i = np.arange(n)
            out[:, 0] = a * np.sin(2 * np.pi * i / self.period)
            out[:, 1] = a * np.sin(np.pi * i / self.period)
        else:  # uniform
            if self.subpixel:
                out[:] = rng.uniform(-a, a, size=(n, 2))
            else:
                m = int(math.floor(a))
                out[:] = rng.integers(-m, m + 1, size=(n, 2))
        if not self.subpixel:
            out = np.round(out)
        return out


@dataclass(frozen=True, eq=False)
class SliceFrame:
    """Spatial-spectral readout, ``data[row, detector_column]``."""

    data: np.ndarray
    pattern: DmdPattern
    index: int
    quantized: bool = False
    bit_depth: Optional[int] = None

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def spectral_pixels(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True, eq=False)
class RgbFrame:
    """Auxiliary-sensor image, ``data[row, column, channel]``."""

    data: np.ndarray
    index: int
    timestamp_ms: float = 0.0
    quantized: bool = False
    bit_depth: Optional[int] = None

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def luminance(self) -> np.ndarray:
        return np.asarray(self.data, dtype=np.float64).mean(axis=2)


def translate(data: np.ndarray, dx: float, dy: float) -> np.ndarray:
    """Translate the last two axes (rows, columns) by (dy, dx) with zero fill.

    ``out[..., y, x] = data[..., y - dy, x - dx]``; non-integer offsets use
    bilinear interpolation.
    """
    if float(dx).is_integer() and float(dy).is_integer():
        dx, dy = int(dx), int(dy)
        out = np.zeros_like(data)
        h, w = data.shape[-2:]
        if abs(dx) >= w or abs(dy) >= h:
            return out
        src_y = slice(max(0, -dy), h - max(0, dy))
        dst_y = slice(max(0, dy), h - max(0, -dy))
        src_x = slice(max(0, -dx), w - max(0, dx))
        dst_x = slice(max(0, dx), w - max(0, -dx))
        out[..., dst_y, dst_x] = data[..., src_y, src_x]
        return out
    shift = (0,) * (data.ndim - 2) + (dy, dx)
    return ndimage.shift(data, shift, order=1, mode="grid-constant", cval=0.0, prefilter=False)


def slit_columns(data: np.ndarray, cols: range, dx: float, dy: float) -> np.ndarray:
    """Columns ``cols`` of ``translate(data, dx, dy)`` without translating the whole cube."""
    if not (float(dx).is_integer() and float(dy).is_integer()):
        # Bilinear: translate only a window holding every source column (+1 margin).
        lo = max(0, int(math.floor(cols.start - dx)) - 1)
        hi = min(data.shape[-1], int(math.ceil(cols.stop - dx)) + 1)
        base = min(lo, cols.start) - 2
        wide = np.zeros(data.shape[:-1] + (max(hi, cols.stop) + 2 - base,), dtype=np.float64)
        if lo < hi:
            wide[..., lo - base:hi - base] = data[..., lo:hi]
        return translate(wide, dx, dy)[..., cols.start - base:cols.stop - base]
    dx, dy = int(dx), int(dy)
    h = data.shape[-2]
    out = np.zeros(data.shape[:-1] + (len(cols),), dtype=np.float64)
    y0, y1 = max(0, dy), h + min(0, dy)
    if y0 >= y1:
        return out
    for j, x in enumerate(cols):
        src = x - dx
        if 0 <= src < data.shape[-1]:
            out[..., y0:y1, j] = data[..., y0 - dy:y1 - dy, src]
    return out


def disperse(columns: np.ndarray) -> np.ndarray:
    """Shift-and-add readout of slit columns.

    ``columns`` has shape (bands, rows, w); the result has shape
    (rows, bands + w - 1) with ``out[y, u] = sum_j columns[u - j, y, j]``.
    """
    bands, rows, w = columns.shape
    out = np.zeros((rows, bands + w - 1), dtype=np.float64)
    for j in range(w):
        out[:, j:j + bands] += columns[:, :, j].T
    return out


def apply_noise(values, sensor: SensorParams, index: int = 0, stream: int = 0) -> np.ndarray:
    """Convert radiance to sensor codes with shot and read noise.

    Electrons ``e = gain * exposure * value``; shot noise is Gaussian with
    variance ``e``, read noise has standard deviation ``read_noise_sigma``.
    The result is clamped to ``[0, 2**bit_depth - 1]`` and rounded. Draws are
    keyed on ``(sensor.seed, index, stream)``.
    """
    values = np.asarray(values, dtype=np.float64)
    e = sensor.electrons_per_unit * values
    rng = np.random.default_rng([sensor.seed, index, stream])
    noisy = e
    if sensor.shot_noise:
        noisy = noisy + rng.standard_normal(e.shape) * np.sqrt(np.maximum(e, 0.0))
    if sensor.read_noise_sigma > 0:
        noisy = noisy + rng.normal(0.0, sensor.read_noise_sigma, size=e.shape)
    codes = np.round(noisy / sensor.full_well * sensor.max_code)
    return np.clip(codes, 0, sensor.max_code).astype(np.uint16)


def capture_pair(
    scene: SpectralCube,
    pattern: DmdPattern,
    jitter_offset=(0.0, 0.0),
    sensor: Optional[SensorParams] = None,
    rgb_resp: Optional[RgbResponse] = None,
    alpha: float = 0.0,
    index: int = 0,
    timestamp_ms: float = 0.0,
    mirror_group: int = 1,
    rendered: Optional[np.ndarray] = None,
):
    """Render the simultaneous (slice, RGB) frame pair for one DMD pattern.

    With ``sensor=None`` the frames are noiseless floats in radiance units;
    otherwise both pass through :func:`apply_noise` with independent streams.
    ``rendered`` may carry a precomputed ``rgb_render(scene, rgb_resp)``.
    """
    if mirror_group < 1:
        raise RangeError("mirror_group must be >= 1")
    if not 0.0 <= alpha <= 1.0:
        raise RangeError("stripe attenuation alpha must lie in [0, 1]")
    if rgb_resp is None:
        rgb_resp = RgbResponse.gaussian(scene.wavelengths)
    if rgb_resp.bands != scene.bands:
        raise ShapeError(f"RGB response has {rgb_resp.bands} bands, scene has {scene.bands}")
    cols = pattern.scene_columns(mirror_group)
    if cols.stop > scene.width:
        raise RangeError(f"slit columns {cols.start}..{cols.stop - 1} fall outside scene width {scene.width}")

    dx, dy = float(jitter_offset[0]), float(jitter_offset[1])
    slice_values = disperse(slit_columns(scene.data, cols, dx, dy))
    if rendered is None:
        rendered = rgb_render(scene, rgb_resp)
    # Rendering is per-pixel and linear, so it commutes with the translation.
    rgb_values = np.moveaxis(translate(np.moveaxis(rendered, -1, 0), dx, dy), 0, -1) if (dx or dy) else rendered.copy()
    rgb_values[:, cols.start:cols.stop, :] *= alpha

    if sensor is None:
        sl = SliceFrame(slice_values, pattern, index)
        rgb = RgbFrame(rgb_values, index, timestamp_ms)
    else:
        sl = SliceFrame(
            apply_noise(slice_values, sensor, index, RNG_STREAM_SLICE), pattern, index, True, sensor.bit_depth
        )
        rgb = RgbFrame(
            apply_noise(rgb_values, sensor, index, RNG_STREAM_RGB), index, timestamp_ms, True, sensor.bit_depth
        )
    return sl, rgb


def export_slice(frame: SliceFrame, path) -> None:
    if not frame.quantized:
        raise ValidationError("only quantized slice frames can be exported as PGM")
    pnm.write_pgm(path, frame.data, 2**frame.bit_depth - 1)


def export_rgb(frame: RgbFrame, path) -> None:
    if not frame.quantized:
        raise ValidationError("only quantized RGB frames can be exported as PPM")
    pnm.write_ppm(path, frame.data, 2**frame.bit_depth - 1)
