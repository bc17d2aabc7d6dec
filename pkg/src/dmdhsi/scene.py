"""Spectral cube data model, synthetic scenes, rebinning, RGB rendering, cube files."""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from dmdhsi.errors import (
    BadMagicError,
    CubeFormatError,
    RangeError,
    SceneSpecError,
    ShapeError,
    TruncatedCubeError,
    ValidationError,
    WavelengthOrderError,
)

DEFAULT_WIDTH = 400
DEFAULT_HEIGHT = 400
DEFAULT_BANDS = 500
WL_MIN = 400.0
WL_MAX = 900.0

CUBE_MAGIC = b"HSC1"
_HEADER = struct.Struct("<4sIII")


def wavelength_grid(bands: int, wl_min: float = WL_MIN, wl_max: float = WL_MAX) -> np.ndarray:
    """Uniform grid starting at ``wl_min`` with step ``(wl_max - wl_min) / bands``.

    500 bands over 400-900 nm gives 400, 401, ..., 899.
    """
    if bands < 1:
        raise RangeError(f"bands must be >= 1, got {bands}")
    step = (wl_max - wl_min) / bands
    return (wl_min + step * np.arange(bands)).astype(np.float32)


@dataclass(frozen=True, eq=False)
class SpectralCube:
    """Radiance cube stored band-major as ``data[band, row, column]`` (float32)."""

    wavelengths: np.ndarray
    data: np.ndarray

    def __post_init__(self):
        wl = np.array(self.wavelengths, dtype=np.float32).reshape(-1)
        data = np.array(self.data, dtype=np.float32)
        if data.ndim != 3:
            raise ShapeError(f"cube data must be 3-D (bands, height, width), got shape {data.shape}")
        if wl.size != data.shape[0]:
            raise ShapeError(f"{wl.size} wavelengths for {data.shape[0]} bands")
        if wl.size > 1 and not np.all(np.diff(wl) > 0):
            raise ValidationError("wavelengths must be strictly increasing")
        if not np.all(np.isfinite(data)) or (data.size and data.min() < 0):
            raise ValidationError("cube data must be finite and non-negative")
        wl.flags.writeable = False
        data.flags.writeable = False
        object.__setattr__(self, "wavelengths", wl)
        object.__setattr__(self, "data", data)

    @property
    def bands(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self):
        return self.data.shape

    def __eq__(self, other):
        if not isinstance(other, SpectralCube):
            return NotImplemented
        return (
            self.data.shape == other.data.shape
            and np.array_equal(self.wavelengths, other.wavelengths)
            and np.array_equal(self.data, other.data)
        )

    __hash__ = None

    def spectrum(self, x: int, y: int) -> np.ndarray:
        return self.data[:, y, x]


@dataclass(frozen=True, eq=False)
class RgbResponse:
    """Per-channel spectral weights, shape (3, bands), each row summing to 1."""

    responses: np.ndarray

    def __post_init__(self):
        r = np.array(self.responses, dtype=np.float64)
        if r.ndim != 2 or r.shape[0] != 3:
            raise ShapeError(f"responses must have shape (3, bands), got {r.shape}")
        if r.min() < 0:
            raise ValidationError("responses must be non-negative")
        sums = r.sum(axis=1)
        if np.any(sums <= 0):
            raise ValidationError("every channel needs a positive total response")
        r = r / sums[:, None]
        r.flags.writeable = False
        object.__setattr__(self, "responses", r)

    @property
    def bands(self) -> int:
        return self.responses.shape[1]

    @classmethod
    def gaussian(cls, wavelengths, centers=(620.0, 550.0, 460.0), fwhm: float = 60.0) -> "RgbResponse":
        """R, G, B Gaussian responses (default centers 620/550/460 nm, FWHM 60 nm)."""
        wl = np.asarray(wavelengths, dtype=np.float64)
        sigma = fwhm / (2.0 * math.sqrt(2.0 * math.log(2.0)))
        rows = [np.exp(-0.5 * ((wl - c) / sigma) ** 2) for c in centers]
        return cls(np.vstack(rows))


# --- parametric spectra -----------------------------------------------------


@dataclass(frozen=True)
class Flat:
    level: float

    def evaluate(self, wl: np.ndarray) -> np.ndarray:
        return np.full(wl.shape, self.level, dtype=np.float64)

    def validate(self, wl_min, wl_max):
        if self.level < 0:
            raise ValidationError("flat level must be >= 0")

    def tokens(self):
        return ["flat", _fmt(self.level)]


@dataclass(frozen=True)
class GaussianPeak:
    center: float
    fwhm: float
    amplitude: float = 1.0
    base: float = 0.0

    def evaluate(self, wl: np.ndarray) -> np.ndarray:
        sigma = self.fwhm / (2.0 * math.sqrt(2.0 * math.log(2.0)))
        return self.base + self.amplitude * np.exp(-0.5 * ((wl - self.center) / sigma) ** 2)

    def validate(self, wl_min, wl_max):
        if not wl_min <= self.center <= wl_max:
            raise ValidationError(f"peak center {self.center} nm outside [{wl_min}, {wl_max}]")
        if self.fwhm <= 0:
            raise ValidationError("FWHM must be positive")
        if self.amplitude < 0 or self.base < 0:
            raise ValidationError("amplitude and base must be >= 0")

    def tokens(self):
        return ["gauss", _fmt(self.center), _fmt(self.fwhm), _fmt(self.amplitude), _fmt(self.base)]


@dataclass(frozen=True)
class RedEdge:
    """Logistic step from ``low`` to ``high`` centred on ``edge`` nm."""

    edge: float
    low: float
    high: float
    width: float = 10.0

    def evaluate(self, wl: np.ndarray) -> np.ndarray:
        t = (wl - self.edge) / self.width
        return self.low + (self.high - self.low) / (1.0 + np.exp(-np.clip(t, -60, 60)))

    def validate(self, wl_min, wl_max):
        if not wl_min <= self.edge <= wl_max:
            raise ValidationError(f"edge {self.edge} nm outside [{wl_min}, {wl_max}]")
        if self.low < 0 or self.high < 0:
            raise ValidationError("red-edge levels must be >= 0")
        if self.width <= 0:
            raise ValidationError("red-edge width must be positive")

    def tokens(self):
        return ["rededge", _fmt(self.edge), _fmt(self.low), _fmt(self.high), _fmt(self.width)]


Spectrum = Union[Flat, GaussianPeak, RedEdge]


# --- primitives -------------------------------------------------------------
# Pixel (x, y) has its centre at (x + 0.5, y + 0.5) in scene coordinates.


def _pixel_centres(width, height):
    ys, xs = np.mgrid[0:height, 0:width]
    return xs + 0.5, ys + 0.5


@dataclass(frozen=True)
class Disk:
    cx: float
    cy: float
    r: float
    spectrum: Spectrum

    def mask(self, width, height):
        X, Y = _pixel_centres(width, height)
        return (X - self.cx) ** 2 + (Y - self.cy) ** 2 <= self.r**2

    def bbox(self):
        return self.cx - self.r, self.cy - self.r, self.cx + self.r, self.cy + self.r

    def scaled(self, sx, sy):
        return replace(self, cx=self.cx * sx, cy=self.cy * sy, r=self.r * min(sx, sy))

    def tokens(self):
        return ["disk", _fmt(self.cx), _fmt(self.cy), _fmt(self.r)]


@dataclass(frozen=True)
class Rect:
    cx: float
    cy: float
    w: float
    h: float
    spectrum: Spectrum

    def mask(self, width, height):
        X, Y = _pixel_centres(width, height)
        return (np.abs(X - self.cx) <= self.w / 2) & (np.abs(Y - self.cy) <= self.h / 2)

    def bbox(self):
        return self.cx - self.w / 2, self.cy - self.h / 2, self.cx + self.w / 2, self.cy + self.h / 2

    def scaled(self, sx, sy):
        return replace(self, cx=self.cx * sx, cy=self.cy * sy, w=self.w * sx, h=self.h * sy)

    def tokens(self):
        return ["rect", _fmt(self.cx), _fmt(self.cy), _fmt(self.w), _fmt(self.h)]


@dataclass(frozen=True)
class Leaf:
    """Lens-shaped blob: half-length ``length`` along ``angle`` (degrees), half-width ``width``."""

    cx: float
    cy: float
    length: float
    width: float
    angle: float
    spectrum: Spectrum

    def mask(self, width, height):
        X, Y = _pixel_centres(width, height)
        th = math.radians(self.angle)
        u = (X - self.cx) * math.cos(th) + (Y - self.cy) * math.sin(th)
        v = -(X - self.cx) * math.sin(th) + (Y - self.cy) * math.cos(th)
        return (np.abs(u) <= self.length) & (np.abs(v) <= self.width * (1.0 - (u / self.length) ** 2))

    def bbox(self):
        th = math.radians(self.angle)
        ex = self.length * abs(math.cos(th)) + self.width * abs(math.sin(th))
        ey = self.length * abs(math.sin(th)) + self.width * abs(math.cos(th))
        return self.cx - ex, self.cy - ey, self.cx + ex, self.cy + ey

    def scaled(self, sx, sy):
        s = min(sx, sy)
        return replace(self, cx=self.cx * sx, cy=self.cy * sy, length=self.length * s, width=self.width * s)

    def tokens(self):
        return ["leaf", _fmt(self.cx), _fmt(self.cy), _fmt(self.length), _fmt(self.width), _fmt(self.angle)]


Primitive = Union[Disk, Rect, Leaf]


@dataclass(frozen=True)
class SceneSpec:
    """Description of a synthetic scene.

    ``texture`` is the amplitude of a per-pixel multiplicative random pattern
    (drawn from ``seed``); 0 gives piecewise-constant spectra.
    """

    width: int = DEFAULT_WIDTH
    height: int = DEFAULT_HEIGHT
    bands: int = DEFAULT_BANDS
    wl_min: float = WL_MIN
    wl_max: float = WL_MAX
    background: Spectrum = Flat(0.0)
    primitives: tuple = ()
    seed: int = 0
    texture: float = 0.0

    @property
    def wavelengths(self):
        return wavelength_grid(self.bands, self.wl_min, self.wl_max)

    def validate(self):
        if self.width < 1 or self.height < 1 or self.bands < 1:
            raise RangeError("scene dimensions must be >= 1")
        if not self.wl_min < self.wl_max:
            raise RangeError("wl_min must be < wl_max")
        if not 0 <= self.texture <= 1:
            raise RangeError("texture must lie in [0, 1]")
        try:
            self.background.validate(self.wl_min, self.wl_max)
        except ValidationError as exc:
            raise SceneSpecError(f"background: {exc}") from None
        eps = 1e-9
        for i, prim in enumerate(self.primitives):
            x0, y0, x1, y1 = prim.bbox()
            if x0 < -eps or y0 < -eps or x1 > self.width + eps or y1 > self.height + eps:
                raise SceneSpecError(f"primitive {i} ({type(prim).__name__}) extends outside the image", index=i)
            try:
                prim.spectrum.validate(self.wl_min, self.wl_max)
            except ValidationError as exc:
                raise SceneSpecError(f"primitive {i}: {exc}", index=i) from None

    def scaled(self, width: int, height: int, bands: int | None = None) -> "SceneSpec":
        sx, sy = width / self.width, height / self.height
        return replace(
            self,
            width=width,
            height=height,
            bands=self.bands if bands is None else bands,
            primitives=tuple(p.scaled(sx, sy) for p in self.primitives),
        )


def synth_scene(spec: SceneSpec) -> SpectralCube:
    spec.validate()
    wl = spec.wavelengths.astype(np.float64)
    data = np.empty((spec.bands, spec.height, spec.width), dtype=np.float64)
    data[:] = spec.background.evaluate(wl)[:, None, None]
    for prim in spec.primitives:
        m = prim.mask(spec.width, spec.height)
        data[:, m] = prim.spectrum.evaluate(wl)[:, None]
    if spec.texture > 0:
        rng = np.random.default_rng(spec.seed)
        mod = 1.0 + spec.texture * rng.uniform(-1.0, 1.0, size=(spec.height, spec.width))
        data *= mod[None]
    np.clip(data, 0.0, None, out=data)
    return SpectralCube(wl, data)


def snap_to_levels(cube: SpectralCube, levels: int) -> SpectralCube:
    """Round radiance to multiples of ``1 / levels`` (makes 8-bit capture lossless for ``levels=255``)."""
    if levels < 1:
        raise RangeError("levels must be >= 1")
    data = np.round(np.clip(cube.data.astype(np.float64), 0, 1) * levels) / levels
    return SpectralCube(cube.wavelengths, data)


# --- spectral rebinning and RGB rendering ----------------------------------


def band_groups(bands: int, n_bands: int):
    """Contiguous index groups, sized as evenly as possible with larger groups first."""
    return np.array_split(np.arange(bands), n_bands)


def rebin_spectral(cube: SpectralCube, n_bands: int) -> SpectralCube:
    if not 1 <= n_bands <= cube.bands:
        raise RangeError(f"n_bands must lie in [1, {cube.bands}], got {n_bands}")
    if n_bands == cube.bands:
        return cube
    groups = band_groups(cube.bands, n_bands)
    data = cube.data.astype(np.float64)
    wl = cube.wavelengths.astype(np.float64)
    out = np.stack([data[g].mean(axis=0) for g in groups])
    out_wl = np.array([wl[g].mean() for g in groups])
    return SpectralCube(out_wl, out)


def rgb_render(cube: SpectralCube, resp: RgbResponse) -> np.ndarray:
    """Render to an (height, width, 3) float array."""
    if resp.bands != cube.bands:
        raise ShapeError(f"response has {resp.bands} bands, cube has {cube.bands}")
    rgb = np.tensordot(resp.responses, cube.data.astype(np.float64), axes=(1, 0))
    return np.moveaxis(rgb, 0, -1)


# --- cube file format -------------------------------------------------------


def cube_to_bytes(cube: SpectralCube) -> bytes:
    header = _HEADER.pack(CUBE_MAGIC, cube.width, cube.height, cube.bands)
    return header + cube.wavelengths.astype("<f4").tobytes() + cube.data.astype("<f4").tobytes()


def cube_from_bytes(buf: bytes) -> SpectralCube:
    if len(buf) < _HEADER.size:
        if not CUBE_MAGIC.startswith(bytes(buf[:4])) or len(buf) == 0:
            raise BadMagicError("not a cube file (bad magic)")
        raise TruncatedCubeError("file ends inside the header")
    magic, width, height, bands = _HEADER.unpack_from(buf)
    if magic != CUBE_MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {CUBE_MAGIC!r}")
    n_wl = bands
    n_data = bands * height * width
    expected = _HEADER.size + 4 * (n_wl + n_data)
    if len(buf) < expected:
        raise TruncatedCubeError(
            f"header advertises {width}x{height}x{bands} ({expected} bytes) but file has {len(buf)} bytes"
        )
    if len(buf) > expected:
        raise CubeFormatError(f"{len(buf) - expected} trailing bytes after payload")
    wl = np.frombuffer(buf, dtype="<f4", count=n_wl, offset=_HEADER.size)
    if n_wl > 1 and not np.all(np.diff(wl) > 0):
        raise WavelengthOrderError("wavelengths are not strictly increasing")
    data = np.frombuffer(buf, dtype="<f4", count=n_data, offset=_HEADER.size + 4 * n_wl)
    try:
        return SpectralCube(wl, data.reshape(bands, height, width))
    except ValidationError as exc:
        raise CubeFormatError(str(exc)) from None


def write_cube(cube: SpectralCube, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(cube_to_bytes(cube))
    tmp.replace(path)


def read_cube(path) -> SpectralCube:
    return cube_from_bytes(Path(path).read_bytes())


# --- scene-spec text format -------------------------------------------------
#
#   size W H
#   bands N [wl_min wl_max]
#   seed S
#   texture A
#   background <spectrum>
#   disk cx cy r <spectrum>
#   rect cx cy w h <spectrum>
#   leaf cx cy length width angle <spectrum>
#
# <spectrum> := flat v | gauss center fwhm [amplitude [base]] | rededge edge low high [width]

_SHAPE_ARGS = {"disk": (Disk, 3), "rect": (Rect, 4), "leaf": (Leaf, 5)}
_SPECTRUM_ARGS = {"flat": (Flat, 1, 1), "gauss": (GaussianPeak, 2, 4), "rededge": (RedEdge, 3, 4)}


def _fmt(v):
    return repr(float(v)) if not float(v).is_integer() else str(int(v))


def _floats(tokens, lineno):
    try:
        return [float(t) for t in tokens]
    except ValueError:
        raise SceneSpecError(f"expected numbers, got {' '.join(tokens)!r}", line=lineno) from None


def _parse_spectrum(tokens, lineno):
    if not tokens:
        raise SceneSpecError("missing spectrum", line=lineno)
    kind, args = tokens[0], tokens[1:]
    if kind not in _SPECTRUM_ARGS:
        raise SceneSpecError(f"unknown spectrum kind {kind!r}", line=lineno)
    cls, lo, hi = _SPECTRUM_ARGS[kind]
    if not lo <= len(args) <= hi:
        raise SceneSpecError(f"{kind} takes {lo}..{hi} arguments, got {len(args)}", line=lineno)
    return cls(*_floats(args, lineno))


def parse_scene_spec(text: str, width=DEFAULT_WIDTH, height=DEFAULT_HEIGHT, bands=DEFAULT_BANDS, seed=0) -> SceneSpec:
    """Parse the line-oriented scene description; dimensions default to the arguments."""
    fields = dict(width=width, height=height, bands=bands, seed=seed)
    prims = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, *rest = line.split()
        if head == "size":
            if len(rest) != 2:
                raise SceneSpecError("size takes W H", line=lineno)
            w, h = _floats(rest, lineno)
            fields.update(width=int(w), height=int(h))
        elif head == "bands":
            if len(rest) not in (1, 3):
                raise SceneSpecError("bands takes N [wl_min wl_max]", line=lineno)
            vals = _floats(rest, lineno)
            fields["bands"] = int(vals[0])
            if len(vals) == 3:
                fields.update(wl_min=vals[1], wl_max=vals[2])
        elif head == "seed":
            if len(rest) != 1:
                raise SceneSpecError("seed takes one integer", line=lineno)
            fields["seed"] = int(_floats(rest, lineno)[0])
        elif head == "texture":
            if len(rest) != 1:
                raise SceneSpecError("texture takes one number", line=lineno)
            fields["texture"] = _floats(rest, lineno)[0]
        elif head == "background":
            fields["background"] = _parse_spectrum(rest, lineno)
        elif head in _SHAPE_ARGS:
            cls, n = _SHAPE_ARGS[head]
            if len(rest) < n:
                raise SceneSpecError(f"{head} needs {n} geometry values and a spectrum", line=lineno)
            geom = _floats(rest[:n], lineno)
            prims.append(cls(*geom, _parse_spectrum(rest[n:], lineno)))
        else:
            raise SceneSpecError(f"unknown directive {head!r}", line=lineno)
    for key in ("width", "height", "bands"):
        if fields[key] < 1:
            raise SceneSpecError(f"{key} must be >= 1")
    return SceneSpec(primitives=tuple(prims), **fields)


def format_scene_spec(spec: SceneSpec) -> str:
    lines = [
        f"size {spec.width} {spec.height}",
        f"bands {spec.bands} {_fmt(spec.wl_min)} {_fmt(spec.wl_max)}",
        f"seed {spec.seed}",
        f"texture {_fmt(spec.texture)}",
        "background " + " ".join(spec.background.tokens()),
    ]
    for p in spec.primitives:
        lines.append(" ".join(p.tokens() + p.spectrum.tokens()))
    return "\n".join(lines) + "\n"


DEMOS = ("three_leaf", "roi_demo")


def load_demo(name: str, width: int | None = None, height: int | None = None, bands: int | None = None) -> SceneSpec:
    """Load a shipped demo scene, optionally rescaled to new dimensions."""
    if name not in DEMOS:
        raise ValidationError(f"unknown demo {name!r}; choose from {DEMOS}")
    text = resources.files("dmdhsi").joinpath("data", f"{name}.scene").read_text()
    spec = parse_scene_spec(text)
    if width is not None or height is not None:
        spec = spec.scaled(width or spec.width, height or spec.height, bands)
    elif bands is not None:
        spec = replace(spec, bands=bands)
    return spec
