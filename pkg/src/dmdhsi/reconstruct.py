"""Cube recovery from an acquisition record.

Each RGB frame tells us two things: where the slit sits in frame coordinates
(the dark stripe) and how far the scene moved since the reference frame
(masked cross-correlation). Their difference is the scene column the
matching slice belongs to.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from dmdhsi.errors import (
    AlgorithmError,
    EmptyReconstructionError,
    NoSignalError,
    NoStripeError,
    RangeError,
    ReconstructionError,
    ShapeError,
)
from dmdhsi.optics import RgbFrame
from dmdhsi.scene import SpectralCube

DEFAULT_STRIPE_THRESHOLD = 0.2
DEFAULT_SEARCH_RADIUS = 8
_TIE_EPS = 1e-12


@dataclass(frozen=True)
class StripeEstimate:
    center: float
    width: int
    contrast: float

    def span(self) -> Tuple[int, int]:
        """Integer column range ``[start, stop)`` covered by the stripe."""
        start = int(round(self.center - (self.width - 1) / 2.0))
        return start, start + self.width


@dataclass(frozen=True)
class FrameAlignment:
    dx: int
    dy: int
    confidence: float


def _luminance(frame) -> np.ndarray:
    if isinstance(frame, RgbFrame):
        return frame.luminance()
    a = np.asarray(frame, dtype=np.float64)
    return a.mean(axis=2) if a.ndim == 3 else a


def locate_stripe(rgb, expected_width: int, threshold: float = DEFAULT_STRIPE_THRESHOLD) -> StripeEstimate:
    """Find the dark slit stripe in an RGB frame.

    Column luminance is box-filtered with the expected width; the minimum is
    refined by a parabola through it and its two neighbours.

    Raises
    ------
    NoStripeError
        If ``(median - min) / median`` of the column luminance is below ``threshold``.
    """
    lum = _luminance(rgb)
    h, w = lum.shape
    if h < 3 or w < 3:
        raise ShapeError(f"frame must be at least 3x3, got {h}x{w}")
    if not 1 <= expected_width <= w:
        raise RangeError(f"expected width must lie in [1, {w}]")
    cols = lum.mean(axis=0)
    box = np.convolve(cols, np.ones(expected_width) / expected_width, mode="valid")
    i = int(np.argmin(box))
    med = float(np.median(cols))
    contrast = (med - float(box[i])) / med if med > 0 else 0.0
    if contrast < threshold:
        raise NoStripeError(f"no dark stripe (contrast {contrast:.3f} < {threshold})")
    offset = 0.0
    if 0 < i < box.size - 1:
        left, mid, right = box[i - 1], box[i], box[i + 1]
        curv = left - 2.0 * mid + right
        if curv > 0:
            offset = float(np.clip(0.5 * (left - right) / curv, -0.5, 0.5))
    center = i + (expected_width - 1) / 2.0 + offset
    return StripeEstimate(float(min(max(center, 0.0), np.nextafter(w, 0))), expected_width, contrast)


def _column_mask(width: int, stripe: Optional[StripeEstimate]) -> np.ndarray:
    m = np.ones(width, dtype=np.float64)
    if stripe is not None:
        start, stop = stripe.span()
        m[max(0, start - 1):max(0, min(width, stop + 1))] = 0.0
    return m


def register_frame(
    rgb,
    reference,
    stripe: Optional[StripeEstimate],
    ref_stripe: Optional[StripeEstimate],
    radius: int = DEFAULT_SEARCH_RADIUS,
) -> FrameAlignment:
    """Integer translation of ``rgb`` relative to ``reference``.

    Exhaustive search over ``[-radius, radius]^2`` maximising the normalised
    cross-correlation of luminance, with both stripes (dilated by one column)
    masked out. A frame that is the reference displaced by ``(dx, dy)``
    satisfies ``rgb[y, x] == reference[y - dy, x - dx]``. Near-ties resolve to
    the smallest ``|dx| + |dy|``, then smallest ``dx``, then smallest ``dy``.
    """
    F = _luminance(rgb)
    R = _luminance(reference)
    if F.shape != R.shape:
        raise ShapeError(f"frame shapes differ: {F.shape} vs {R.shape}")
    if radius < 0:
        raise RangeError("radius must be >= 0")
    h, w = F.shape
    mF = _column_mask(w, stripe)
    mR = _column_mask(w, ref_stripe)
    F2, R2 = F * F, R * R

    scored = []
    for dy in range(-radius, radius + 1):
        y0, y1 = max(0, dy), h + min(0, dy)
        if y1 - y0 < 1:
            continue
        Fy, F2y = F[y0:y1], F2[y0:y1]
        Ry, R2y = R[y0 - dy:y1 - dy], R2[y0 - dy:y1 - dy]
        # Column sums over the row overlap; masks depend only on the column.
        cF, cF2 = Fy.sum(axis=0), F2y.sum(axis=0)
        cR, cR2 = Ry.sum(axis=0), R2y.sum(axis=0)
        rows = y1 - y0
        for dx in range(-radius, radius + 1):
            x0, x1 = max(0, dx), w + min(0, dx)
            if x1 - x0 < 1:
                continue
            m = mF[x0:x1] * mR[x0 - dx:x1 - dx]
            n = m.sum() * rows
            if n < 2:
                continue
            sa = m @ cF[x0:x1]
            sb = m @ cR[x0 - dx:x1 - dx]
            saa = m @ cF2[x0:x1]
            sbb = m @ cR2[x0 - dx:x1 - dx]
            sab = m @ np.einsum("ij,ij->j", Fy[:, x0:x1], Ry[:, x0 - dx:x1 - dx])
            va = saa - sa * sa / n
            vb = sbb - sb * sb / n
            if va <= 1e-12 * max(saa, 1e-300) or vb <= 1e-12 * max(sbb, 1e-300):
                continue
            scored.append(((sab - sa * sb / n) / math.sqrt(va * vb), dx, dy))
    if not scored:
        raise NoSignalError("masked overlap has no contrast in any candidate shift")
    best = max(s for s, _, _ in scored)
    ties = [(abs(dx) + abs(dy), dx, dy, s) for s, dx, dy in scored if s >= best - _TIE_EPS]
    _, dx, dy, _ = min(ties)
    return FrameAlignment(dx, dy, float(best))


# --- assembly ---------------------------------------------------------------


@dataclass(frozen=True)
class AssembleOptions:
    reference_index: int = 0
    radius: int = DEFAULT_SEARCH_RADIUS
    stripe_threshold: float = DEFAULT_STRIPE_THRESHOLD


@dataclass(frozen=True)
class FrameDiagnostic:
    index: int
    stripe_center: float = math.nan
    contrast: float = math.nan
    dx: float = math.nan
    dy: float = math.nan
    confidence: float = math.nan
    status: str = "ok"


@dataclass(frozen=True, eq=False)
class ReconstructedCube:
    cube: SpectralCube
    coverage: np.ndarray
    provenance: Tuple[Tuple[int, ...], ...]
    interpolated: np.ndarray
    diagnostics: Tuple[FrameDiagnostic, ...] = ()


def binned_wavelengths(wavelengths, factor: int) -> np.ndarray:
    wl = np.asarray(wavelengths, dtype=np.float64)
    return np.array([wl[k:k + factor].mean() for k in range(0, wl.size, factor)])


def binned_spectra(slice_values: np.ndarray, pattern_width: int, factor: int, bands: int) -> np.ndarray:
    """Per-row spectra binned by ``factor`` from a slice taken with a ``pattern_width`` slit.

    Assuming all slit columns share one spectrum, detector pixel
    ``n*w + w - 1`` holds the sum of bands ``n*w .. n*w + w - 1``; that sum
    divided by the group size is the group mean. Group means are spread over
    their bands and then averaged into bins of ``factor`` bands. With
    ``pattern_width == factor`` this is exactly one detector pixel per bin.
    """
    wp = pattern_width
    starts = np.arange(0, bands, wp)
    sizes = np.minimum(starts + wp, bands) - starts
    group_means = slice_values[:, starts + wp - 1] / sizes
    per_band = np.repeat(group_means, sizes, axis=1)
    if factor == 1:
        return per_band
    return np.stack([per_band[:, k:k + factor].mean(axis=1) for k in range(0, bands, factor)], axis=1)


def assemble(record, opts: Optional[AssembleOptions] = None) -> ReconstructedCube:
    """Place every slice at its registered scene column.

    Frames whose stripe or registration fails are skipped and reported in the
    diagnostics. With a slit wider than one column the spectrum is binned by
    the slit width and written to every covered column.
    """
    opts = opts or AssembleOptions()
    n = len(record.patterns)
    if n == 0:
        raise ReconstructionError("empty acquisition record")
    if not 0 <= opts.reference_index < n:
        raise RangeError(f"reference index {opts.reference_index} outside 0..{n - 1}")
    W, H = record.scene_width, record.scene_height
    bands = len(record.wavelengths)
    factor = record.slit_width
    out_bands = math.ceil(bands / factor)
    out_wl = record.wavelengths if factor == 1 else binned_wavelengths(record.wavelengths, factor)

    ref_rgb = record.rgbs[opts.reference_index]
    ref_pattern = record.patterns[opts.reference_index]
    try:
        ref_stripe = locate_stripe(ref_rgb, ref_pattern.slit_width, opts.stripe_threshold)
    except NoStripeError:
        # Still mask the commanded slit so it cannot drive the correlation.
        ref_stripe = StripeEstimate(ref_pattern.slit_start + (ref_pattern.slit_width - 1) / 2.0, ref_pattern.slit_width, 0.0)

    acc = np.zeros((out_bands, H, W), dtype=np.float64)
    count = np.zeros(W, dtype=np.float64)
    prov: List[List[int]] = [[] for _ in range(W)]
    diags = []
    rows = np.arange(H)

    for i, (pattern, sl, rgb, _) in enumerate(record.entries()):
        wp = pattern.slit_width
        try:
            stripe = locate_stripe(rgb, wp, opts.stripe_threshold)
        except AlgorithmError as exc:
            diags.append(FrameDiagnostic(i, status=f"no_stripe: {exc}"))
            continue
        try:
            if i == opts.reference_index:
                align = FrameAlignment(0, 0, 1.0)
            else:
                align = register_frame(rgb, ref_rgb, stripe, ref_stripe, opts.radius)
        except AlgorithmError as exc:
            diags.append(FrameDiagnostic(i, stripe.center, stripe.contrast, status=f"no_signal: {exc}"))
            continue

        c0 = int(round(stripe.center - (wp - 1) / 2.0 - align.dx))
        cols = [c for c in range(c0, c0 + wp) if 0 <= c < W]
        base = FrameDiagnostic(i, stripe.center, stripe.contrast, align.dx, align.dy, align.confidence)
        if not cols:
            diags.append(_with_status(base, "out_of_bounds"))
            continue

        values = np.asarray(sl.data, dtype=np.float64)
        if sl.quantized:
            if record.sensor is None:
                raise ReconstructionError("quantized frames need sensor parameters")
            values = record.sensor.to_radiance(values)
        if values.shape[1] < bands + wp - 1 or values.shape[0] != H:
            diags.append(_with_status(base, "bad_shape"))
            continue
        spectra = binned_spectra(values, wp, factor, bands)  # (rows, out_bands)
        # Reference row r was imaged on frame row r + dy.
        spectra = spectra[np.clip(rows + align.dy, 0, H - 1)]
        for c in cols:
            acc[:, :, c] += spectra.T
            count[c] += 1
            prov[c].append(i)
        diags.append(_with_status(base, "ok" if len(cols) == wp else "partial"))

    if not count.any():
        raise ReconstructionError("every frame was skipped; see diagnostics")
    covered = count > 0
    acc[:, :, covered] /= count[covered]
    return ReconstructedCube(
        cube=SpectralCube(out_wl, acc),
        coverage=count,
        provenance=tuple(tuple(p) for p in prov),
        interpolated=np.zeros(W, dtype=bool),
        diagnostics=tuple(diags),
    )


def _with_status(d: FrameDiagnostic, status: str) -> FrameDiagnostic:
    return FrameDiagnostic(d.index, d.stripe_center, d.contrast, d.dx, d.dy, d.confidence, status)


def fill_gaps(rc: ReconstructedCube) -> ReconstructedCube:
    """Linearly interpolate uncovered columns between their covered neighbours.

    Leading and trailing gaps copy the nearest covered column.
    """
    covered = np.flatnonzero(rc.coverage > 0)
    if covered.size == 0:
        raise EmptyReconstructionError("no covered columns to interpolate from")
    data = np.array(rc.cube.data, dtype=np.float64)
    W = data.shape[2]
    gaps = np.setdiff1d(np.arange(W), covered)
    for x in gaps:
        k = np.searchsorted(covered, x)
        if k == 0:
            data[:, :, x] = data[:, :, covered[0]]
        elif k == covered.size:
            data[:, :, x] = data[:, :, covered[-1]]
        else:
            l, r = covered[k - 1], covered[k]
            t = (x - l) / (r - l)
            data[:, :, x] = (1 - t) * data[:, :, l] + t * data[:, :, r]
    interp = np.zeros(W, dtype=bool)
    interp[gaps] = True
    return ReconstructedCube(
        cube=SpectralCube(rc.cube.wavelengths, data),
        coverage=rc.coverage,
        provenance=rc.provenance,
        interpolated=interp,
        diagnostics=rc.diagnostics,
    )


def write_diagnostics(diagnostics, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "stripe_center", "contrast", "dx", "dy", "confidence", "status"])
        for d in diagnostics:
            w.writerow([d.index, f"{d.stripe_center:.4f}", f"{d.contrast:.4f}", d.dx, d.dy, f"{d.confidence:.6f}", d.status])
    tmp.replace(path)
