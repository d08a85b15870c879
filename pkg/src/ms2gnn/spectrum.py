"""Spectrum data model: binning, intensity transforms, normalization,
and cosine similarity.

A binned spectrum is a fixed 1000-length non-negative vector; bin ``b``
covers m/z in [b, b+1). Intensities are transformed (log1p or sqrt)
before normalization, and similarity is always compared within one
transform space.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SpectrumError

NUM_BINS = 1000

TRANSFORMS = ("raw", "log", "sqrt")


@dataclass
class BinnedSpectrum:
    intensities: np.ndarray
    transform_tag: str = "raw"
    normalized: bool = False
    dropped_peaks: int = 0

    def __post_init__(self):
        self.intensities = np.asarray(self.intensities, dtype=np.float64)
        if self.intensities.shape != (NUM_BINS,):
            raise SpectrumError(
                f"spectrum must have {NUM_BINS} bins, got {self.intensities.shape}")
        if np.any(self.intensities < 0):
            raise SpectrumError("negative intensity in spectrum")
        if self.transform_tag not in TRANSFORMS:
            raise SpectrumError(f"unknown transform tag {self.transform_tag!r}")

    def norm(self) -> float:
        return float(np.linalg.norm(self.intensities))


def bin_peaks(peaks: list[tuple[float, float]]) -> BinnedSpectrum:
    """Bin (m/z, intensity) pairs; colliding peaks keep the maximum.

    Peaks at or above m/z 1000 are dropped and counted in
    ``dropped_peaks``. All peaks out of range is an error.
    """
    if not peaks:
        raise SpectrumError("empty peak list")
    values = np.zeros(NUM_BINS)
    dropped = 0
    kept = 0
    for mz, intensity in peaks:
        if mz <= 0:
            raise SpectrumError(f"non-positive m/z {mz}")
        if intensity < 0:
            raise SpectrumError(f"negative intensity {intensity}")
        b = int(np.floor(mz))
        if b >= NUM_BINS:
            dropped += 1
            continue
        values[b] = max(values[b], intensity)
        kept += 1
    if kept == 0:
        raise SpectrumError("all peaks above the binned m/z range")
    return BinnedSpectrum(values, "raw", dropped_peaks=dropped)


def transform(spec: BinnedSpectrum, kind: str) -> BinnedSpectrum:
    """Apply the intensity transform: log means log(1+x), sqrt means √x."""
    if spec.transform_tag != "raw":
        raise SpectrumError(
            f"spectrum already transformed ({spec.transform_tag})")
    if kind == "log":
        values = np.log1p(spec.intensities)
    elif kind == "sqrt":
        values = np.sqrt(spec.intensities)
    else:
        raise SpectrumError(f"unknown transform kind {kind!r}")
    return BinnedSpectrum(values, kind, dropped_peaks=spec.dropped_peaks)


def normalize(spec: BinnedSpectrum) -> BinnedSpectrum:
    """Scale to unit Euclidean norm; all-zero spectra are rejected."""
    n = spec.norm()
    if n == 0.0:
        raise SpectrumError("cannot normalize an all-zero spectrum")
    return BinnedSpectrum(spec.intensities / n, spec.transform_tag,
                          normalized=True, dropped_peaks=spec.dropped_peaks)


def cosine_similarity(a: BinnedSpectrum, b: BinnedSpectrum) -> float:
    """dot(a, b) / (|a||b|); in [0, 1] because intensities are non-negative."""
    if a.transform_tag != b.transform_tag:
        raise SpectrumError(
            f"transform mismatch: {a.transform_tag} vs {b.transform_tag}")
    na, nb = a.norm(), b.norm()
    if na == 0.0 or nb == 0.0:
        raise SpectrumError("cosine similarity undefined for all-zero spectrum")
    return float(np.dot(a.intensities, b.intensities) / (na * nb))
