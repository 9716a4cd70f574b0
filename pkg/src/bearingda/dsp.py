"""Envelope-spectrum preprocessing.

raw segment -> unit std -> 500-4000 Hz band-pass -> |x| -> |FFT| ->
linear interpolation onto 1000 points spanning shaft orders 0..30.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import signal

from .errors import DegenerateInputError, ParameterError
from .segment import DomainTag, FaultClass, Segment

N_POINTS = 1000
MAX_ORDER = 30.0
BAND = (500.0, 4000.0)
# Butterworth prototype order; the forward-backward pass doubles the slope
FILTER_ORDER = 4

ORDER_AXIS = np.linspace(0.0, MAX_ORDER, N_POINTS)


@dataclass(frozen=True)
class EnvelopeSpectrum:
    values: np.ndarray
    source_label: Optional[FaultClass] = None
    domain_tag: DomainTag = DomainTag.RealTarget

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (N_POINTS,):
            raise ParameterError(f"envelope spectrum must have {N_POINTS} values, got {v.shape}")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ParameterError("envelope spectrum values must be finite and nonnegative")
        object.__setattr__(self, "values", v)

    @property
    def order_axis(self) -> np.ndarray:
        return ORDER_AXIS


def normalize_std(seg: Segment) -> Segment:
    """Scale to unit (population) standard deviation. The mean is kept."""
    x = seg.samples.astype(float)
    if x.shape[0] < 2:
        raise ParameterError("need at least 2 samples")
    sd = np.std(x)
    if not sd > 0:
        raise DegenerateInputError("zero-variance segment cannot be normalized")
    return seg.with_samples(x / sd)


def band_pass(seg: Segment, lo: float = BAND[0], hi: float = BAND[1]) -> Segment:
    """Zero-phase Butterworth band-pass (forward-backward)."""
    fs = seg.sample_rate
    if not fs > 2 * hi:
        raise ParameterError(f"sample rate {fs} Hz must exceed 2*hi = {2 * hi} Hz")
    if not 0 < lo < hi:
        raise ParameterError("require 0 < lo < hi")
    sos = signal.butter(FILTER_ORDER, (lo, hi), btype="bandpass", fs=fs, output="sos")
    return seg.with_samples(signal.sosfiltfilt(sos, seg.samples.astype(float)))


def _nfft(n: int) -> int:
    return 1 << max(n - 1, 1).bit_length()


def envelope_spectrum(seg: Segment, band: tuple[float, float] = BAND) -> np.ndarray:
    """One-sided magnitude spectrum of the full-wave rectified, band-passed signal.

    The rectified signal is zero-padded to the next power of two and the
    magnitudes are divided by the segment length. The DC bin is kept.
    """
    filtered = band_pass(seg, *band).samples
    rectified = np.abs(filtered)
    n = rectified.shape[0]
    return np.abs(np.fft.rfft(rectified, n=_nfft(n))) / n


def spectrum_frequencies(n_bins: int, fs: float) -> np.ndarray:
    """Frequency axis of a one-sided spectrum with ``n_bins`` bins."""
    return np.linspace(0.0, fs / 2, n_bins)


def order_normalize(spec: np.ndarray, fs: float, shaft_speed: float, label=None,
                    domain_tag: DomainTag = DomainTag.RealTarget) -> EnvelopeSpectrum:
    """Interpolate a one-sided spectrum onto the 0..30 shaft-order grid.

    ``shaft_speed`` is in RPM.
    """
    if not shaft_speed > 0:
        raise ParameterError("shaft speed must be positive")
    spec = np.asarray(spec, dtype=float)
    if spec.ndim != 1 or spec.shape[0] < 2:
        raise ParameterError("spectrum must be a 1-D vector with at least 2 bins")
    freqs = spectrum_frequencies(spec.shape[0], fs)
    orders = freqs / (shaft_speed / 60.0)
    if orders[-1] < MAX_ORDER:
        raise ParameterError(
            f"spectrum reaches order {orders[-1]:.2f} only; need {MAX_ORDER:g} "
            f"(shaft {shaft_speed} RPM, fs {fs} Hz)")
    values = np.interp(ORDER_AXIS, orders, spec)
    return EnvelopeSpectrum(values, None if label is None else FaultClass.parse(label), domain_tag)


def preprocess(seg: Segment, band: tuple[float, float] = BAND) -> EnvelopeSpectrum:
    """Full pipeline for one segment."""
    spec = envelope_spectrum(normalize_std(seg), band)
    return order_normalize(spec, seg.sample_rate, seg.shaft_speed, seg.label, seg.domain_tag)


def order_index(order: float) -> int:
    """Nearest grid index of a shaft order."""
    return int(round(order / MAX_ORDER * (N_POINTS - 1)))
