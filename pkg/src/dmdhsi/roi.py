"""Region-of-interest workflow: edges, segmentation, restricted scan plans, block spectra."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, Optional, Tuple

import numpy as np
from scipy import ndimage

from dmdhsi import pnm
from dmdhsi.controller import ScanPlan, TimingParams, tile_intervals
from dmdhsi.errors import EmptyPlanError, RegionTooSmallError, ShapeError, ValidationError
from dmdhsi.scene import SpectralCube

DEFAULT_SIGMA = 1.4
DEFAULT_LOW = 0.1
DEFAULT_HIGH = 0.3
DEFAULT_MIN_AREA = 25
DEFAULT_BLOCK = 4

_FOUR = ndimage.generate_binary_structure(2, 1)
_EIGHT = ndimage.generate_binary_structure(2, 2)


def gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0:
        return np.asarray(image, dtype=np.float64)
    radius = int(math.ceil(3 * sigma))
    x = np.arange(-radius, radius + 1)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    k /= k.sum()
    out = ndimage.convolve1d(np.asarray(image, dtype=np.float64), k, axis=0, mode="nearest")
    return ndimage.convolve1d(out, k, axis=1, mode="nearest")


# Neighbour offsets (dy, dx) along the quantised gradient direction.
_DIRECTIONS = ((0, 1), (1, 1), (1, 0), (1, -1))


def canny(gray, low: float = DEFAULT_LOW, high: float = DEFAULT_HIGH, blur_sigma: float = DEFAULT_SIGMA) -> np.ndarray:
    """Canny edge map (uint8, values 0/1).

    Thresholds are fractions of the peak gradient magnitude, which makes the
    result independent of image offset and contrast.
    """
    if low < 0 or high < 0 or low > high:
        raise ValidationError(f"need 0 <= low <= high, got low={low}, high={high}")
    img = np.asarray(gray, dtype=np.float64)
    if img.ndim != 2 or min(img.shape) < 3:
        raise ShapeError("canny needs a 2-D image of at least 3x3")
    smooth = gaussian_blur(img, blur_sigma)
    gx = ndimage.sobel(smooth, axis=1, mode="nearest") / 8.0
    gy = ndimage.sobel(smooth, axis=0, mode="nearest") / 8.0
    mag = np.hypot(gx, gy)
    peak = mag.max()
    if peak <= 1e-12 * max(1.0, np.abs(img).max()):
        return np.zeros(img.shape, dtype=np.uint8)
    mag = mag / peak

    angle = np.rad2deg(np.arctan2(gy, gx)) % 180.0
    sector = (np.floor((angle + 22.5) / 45.0).astype(int)) % 4
    padded = np.pad(mag, 1)
    h, w = mag.shape
    keep = np.zeros(mag.shape, dtype=bool)
    for s, (oy, ox) in enumerate(_DIRECTIONS):
        ahead = padded[1 + oy:1 + oy + h, 1 + ox:1 + ox + w]
        behind = padded[1 - oy:1 - oy + h, 1 - ox:1 - ox + w]
        # Strict on one side so that a symmetric two-pixel ridge yields one pixel.
        keep |= (sector == s) & (mag > behind) & (mag >= ahead)
    keep &= mag > 0

    weak = keep & (mag >= low)
    strong = keep & (mag >= high)
    labels, _ = ndimage.label(weak, structure=_EIGHT)
    hit = np.unique(labels[strong])
    hit = hit[hit > 0]
    return np.isin(labels, hit).astype(np.uint8)


@dataclass(frozen=True, eq=False)
class RegionLabelMap:
    labels: np.ndarray
    count: int
    areas: Dict[int, int]
    bboxes: Dict[int, Tuple[int, int, int, int]]  # (x0, y0, x1, y1), inclusive

    def column_span(self, label: int) -> Tuple[int, int]:
        x0, _, x1, _ = self.bboxes[label]
        return x0, x1

    def centroid(self, label: int) -> Tuple[float, float]:
        ys, xs = np.nonzero(self.labels == label)
        return float(xs.mean()), float(ys.mean())


def _closing(mask: np.ndarray) -> np.ndarray:
    padded = np.pad(mask, 1)
    closed = ndimage.binary_erosion(ndimage.binary_dilation(padded, _EIGHT), _EIGHT, border_value=0)
    return closed[1:-1, 1:-1]


def label_regions(mask, min_area: int = DEFAULT_MIN_AREA, close: bool = True) -> RegionLabelMap:
    """4-connected regions of a foreground mask.

    The mask is closed with a 3x3 element and its holes are filled (pixels
    not 4-reachable from the border through background), so a closed edge
    contour becomes a solid region. Labels follow raster order of each
    region's first pixel; regions under ``min_area`` pixels are dropped.
    """
    m = np.asarray(mask).astype(bool)
    if m.ndim != 2:
        raise ShapeError("mask must be 2-D")
    if close:
        m = _closing(m)
    m = ndimage.binary_fill_holes(m, structure=_FOUR)
    raw, n = ndimage.label(m, structure=_FOUR)
    labels = np.zeros(m.shape, dtype=np.int32)
    areas, bboxes = {}, {}
    if n:
        sizes = np.bincount(raw.ravel(), minlength=n + 1)
        objs = ndimage.find_objects(raw)
        new = 0
        for old in range(1, n + 1):
            if sizes[old] < min_area:
                continue
            new += 1
            sl = objs[old - 1]
            labels[sl][raw[sl] == old] = new
            areas[new] = int(sizes[old])
            bboxes[new] = (sl[1].start, sl[0].start, sl[1].stop - 1, sl[0].stop - 1)
    return RegionLabelMap(labels, len(areas), areas, bboxes)


def segment(gray, low=DEFAULT_LOW, high=DEFAULT_HIGH, blur_sigma=DEFAULT_SIGMA, min_area=DEFAULT_MIN_AREA) -> RegionLabelMap:
    """Edges, then regions; ``gray`` may also be an (H, W, 3) image."""
    g = np.asarray(gray, dtype=np.float64)
    if g.ndim == 3:
        g = g.mean(axis=2)
    return label_regions(canny(g, low, high, blur_sigma), min_area)


def merge_intervals(intervals: Iterable[Tuple[int, int]]):
    out = []
    for a, b in sorted(intervals):
        if out and a <= out[-1][1]:
            out[-1][1] = max(out[-1][1], b)
        else:
            out.append([a, b])
    return [tuple(iv) for iv in out]


def regions_to_plan(
    labels: RegionLabelMap,
    selected: Iterable[int],
    slit_width: int = 1,
    margin: int = 0,
    timing: Optional[TimingParams] = None,
) -> ScanPlan:
    selected = sorted(set(selected))
    if not selected:
        raise EmptyPlanError("no regions selected")
    width = labels.labels.shape[1]
    spans = []
    for lab in selected:
        if lab not in labels.bboxes:
            raise ValidationError(f"label {lab} does not exist (have 1..{labels.count})")
        x0, x1 = labels.column_span(lab)
        spans.append((max(0, x0 - margin), min(width, x1 + 1 + margin)))
    return tile_intervals(merge_intervals(spans), slit_width, width, timing)


def block_origin(labels: RegionLabelMap, label: int, block: int = DEFAULT_BLOCK) -> Tuple[int, int]:
    """Top-left (x, y) of a ``block`` x ``block`` square inside the region.

    Centred on the centroid when it fits, otherwise the fitting position whose
    centre is nearest the centroid (first in raster order on ties).
    """
    if label not in labels.areas:
        raise ValidationError(f"label {label} does not exist")
    inside = labels.labels == label
    cx, cy = labels.centroid(label)
    x0 = int(round(cx - (block - 1) / 2.0))
    y0 = int(round(cy - (block - 1) / 2.0))
    h, w = inside.shape
    if 0 <= x0 <= w - block and 0 <= y0 <= h - block and inside[y0:y0 + block, x0:x0 + block].all():
        return x0, y0
    if block > min(h, w):
        raise RegionTooSmallError(f"block {block} larger than the image")
    integral = np.pad(inside.astype(np.int64).cumsum(0).cumsum(1), ((1, 0), (1, 0)))
    sums = (
        integral[block:, block:] - integral[:-block, block:] - integral[block:, :-block] + integral[:-block, :-block]
    )
    ys, xs = np.nonzero(sums == block * block)
    if ys.size == 0:
        raise RegionTooSmallError(f"no {block}x{block} block fits inside region {label}")
    off = (block - 1) / 2.0
    d2 = (xs + off - cx) ** 2 + (ys + off - cy) ** 2
    k = int(np.argmin(d2))
    return int(xs[k]), int(ys[k])


def region_mean_spectrum(cube: SpectralCube, labels: RegionLabelMap, label: int, block: int = DEFAULT_BLOCK) -> np.ndarray:
    """Per-band mean over a ``block`` x ``block`` square in the region (16 pixels by default)."""
    if labels.labels.shape != (cube.height, cube.width):
        raise ShapeError("label map and cube have different spatial shapes")
    x0, y0 = block_origin(labels, label, block)
    return cube.data[:, y0:y0 + block, x0:x0 + block].astype(np.float64).mean(axis=(1, 2))


def write_spectrum_csv(path, wavelengths, values) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["wavelength_nm", "value"])
        for wl, v in zip(wavelengths, values):
            w.writerow([f"{float(wl):.4f}", f"{float(v):.6f}"])
    tmp.replace(path)


def write_label_pgm(path, labels: RegionLabelMap) -> None:
    pnm.write_pgm(path, labels.labels, maxval=max(1, min(65535, labels.count if labels.count < 256 else 65535)))


def read_label_pgm(path, min_area: int = 0) -> RegionLabelMap:
    """Rebuild a label map from a PGM written by :func:`write_label_pgm`."""
    arr, _ = pnm.read_pnm(path)
    if arr.ndim != 2:
        raise ShapeError("label map must be a PGM")
    arr = arr.astype(np.int32)
    areas, bboxes = {}, {}
    for lab in range(1, int(arr.max()) + 1):
        ys, xs = np.nonzero(arr == lab)
        if ys.size == 0:
            continue
        areas[lab] = int(ys.size)
        bboxes[lab] = (int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))
    return RegionLabelMap(arr, len(areas), areas, bboxes)
