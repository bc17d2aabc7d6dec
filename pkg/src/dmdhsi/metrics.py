"""Fidelity metrics: normalised RMSD, SNR, and the band-count sweep."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np

from dmdhsi.errors import DegenerateError, ShapeError, ValidationError
from dmdhsi.scene import SpectralCube, rebin_spectral

DEFAULT_SWEEP = (50, 100, 150, 200, 250, 300)
SNR_SATURATED_DB = 300.0


def nrmsd(a: SpectralCube, b: SpectralCube) -> float:
    """RMS of ``a - b`` divided by the dynamic range ``max(b) - min(b)`` of the reference ``b``."""
    if a.shape != b.shape:
        raise ShapeError(f"cube shapes differ: {a.shape} vs {b.shape}")
    if not np.array_equal(a.wavelengths, b.wavelengths):
        raise ShapeError("cubes have different wavelength grids")
    ref = b.data.astype(np.float64)
    span = float(ref.max() - ref.min())
    if span == 0:
        raise DegenerateError("reference cube is constant")
    diff = a.data.astype(np.float64) - ref
    return float(np.sqrt(np.mean(diff * diff)) / span)


def snr_db(clean, noisy) -> float:
    """``10 log10(sum clean^2 / sum (noisy - clean)^2)``; identical inputs give 300 dB."""
    c = np.asarray(clean, dtype=np.float64)
    n = np.asarray(noisy, dtype=np.float64)
    if c.shape != n.shape:
        raise ShapeError(f"shapes differ: {c.shape} vs {n.shape}")
    signal = float(np.sum(c * c))
    if signal == 0:
        raise DegenerateError("clean signal is zero")
    noise = float(np.sum((n - c) ** 2))
    if noise == 0:
        return SNR_SATURATED_DB
    return min(SNR_SATURATED_DB, 10.0 * math.log10(signal / noise))


@dataclass(frozen=True)
class BandSweepResult:
    points: Tuple[Tuple[int, float], ...]

    def __post_init__(self):
        counts = [n for n, _ in self.points]
        if any(b <= a for a, b in zip(counts, counts[1:])):
            raise ValidationError("band counts must be strictly increasing")

    @property
    def band_counts(self) -> List[int]:
        return [n for n, _ in self.points]

    @property
    def values(self) -> List[float]:
        return [v for _, v in self.points]

    def write_csv(self, path) -> None:
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        with tmp.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n_bands", "nrmsd"])
            for n, v in self.points:
                w.writerow([n, f"{v:.6f}"])
        tmp.replace(path)


def band_sweep(truth: SpectralCube, recon: SpectralCube, band_counts: Sequence[int] = DEFAULT_SWEEP) -> BandSweepResult:
    """nrmsd between rebinned reconstruction and rebinned truth for each band count."""
    counts = sorted(set(int(n) for n in band_counts))
    points = tuple((n, nrmsd(rebin_spectral(recon, n), rebin_spectral(truth, n))) for n in counts)
    return BandSweepResult(points)
