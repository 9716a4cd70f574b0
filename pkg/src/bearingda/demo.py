"""Stand-in recordings for running the pipeline without the CWRU files.

``simulate_healthy_recording`` produces a healthy-bearing-like waveform:
shaft harmonics, two lightly damped structural resonances driven by
broadband noise, and a white sensor floor. ``simulate_real_faults`` injects
defects whose parameters deliberately differ from the source generator
(more sidebands, another pulse band, slightly shifted defect frequency),
which mimics the synthetic-to-real gap.
"""
from __future__ import annotations

from dataclasses import replace
from typing import Optional, Sequence

import numpy as np
from scipy import signal

from .datastore import Recording
from .segment import FaultClass, Segment
from .siggen import CWRU_DRIVE_END, BearingGeometry, DefectSpec, synthesize_fault

# (centre as fraction of fs, quality factor, relative amplitude)
RESONANCES = ((0.11, 8.0, 1.0), (0.27, 12.0, 0.6))
HARMONICS = (0.5, 0.25, 0.1)
FLOOR = 0.3

REAL_LIKE_ALPHA = (1.0, 0.9, 0.75, 0.55, 0.4, 0.3, 0.2)
REAL_LIKE_BAND = (0.15, 0.32)
REAL_LIKE_FREQUENCY_SCALE = 1.03


def simulate_healthy_recording(n_samples: int, fs: float = 12000.0, shaft_rpm: float = 1797.0,
                               seed: int = 0) -> np.ndarray:
    """Unit-variance healthy-like vibration waveform."""
    rng = np.random.default_rng(seed)
    t = np.arange(n_samples) / fs
    fr = shaft_rpm / 60.0
    x = np.zeros(n_samples)
    for h, a in enumerate(HARMONICS, start=1):
        x += a * np.cos(2 * np.pi * h * fr * t + rng.uniform(0, 2 * np.pi))
    for centre, q, amp in RESONANCES:
        b, a = signal.iirpeak(centre * fs, q, fs=fs)
        y = signal.lfilter(b, a, rng.standard_normal(n_samples))
        x += amp * y / np.std(y)
    x += FLOOR * rng.standard_normal(n_samples)
    return x / np.std(x)


def real_like_spec(fault: FaultClass, **overrides) -> DefectSpec:
    """A defect spec that differs from the default generator settings."""
    params = dict(alpha=REAL_LIKE_ALPHA, pulse_band=REAL_LIKE_BAND,
                  frequency_scale=REAL_LIKE_FREQUENCY_SCALE)
    params.update(overrides)
    return DefectSpec(fault, **params)


def simulate_real_faults(healthy: np.ndarray, fault: FaultClass, fs: float, shaft_rpm: float,
                         seed: int, geom: BearingGeometry = CWRU_DRIVE_END,
                         spec: Optional[DefectSpec] = None) -> np.ndarray:
    """Inject a (real-like) defect into a long healthy waveform."""
    spec = real_like_spec(fault) if spec is None else spec
    seg = Segment(healthy, fs, shaft_rpm, FaultClass.Healthy)
    return synthesize_fault(seg, spec, geom, seed).samples


def demo_recordings(seconds: float = 10.0, fs: float = 12000.0, shaft_rpm: float = 1797.0,
                    seed: int = 0, classes: Sequence[FaultClass] = tuple(FaultClass),
                    per_class: int = 3, spec_overrides: Optional[dict] = None) -> list[Recording]:
    """``per_class`` recordings per class; faulty ones use :func:`real_like_spec`.

    Each recording has its own healthy background and its own noise scale,
    like the several spall sizes and loads recorded per class in CWRU.
    """
    n = int(seconds * fs)
    out = []
    for i, c in enumerate(classes):
        c = FaultClass.parse(c)
        for j in range(per_class):
            s = seed * 10007 + i * 101 + j
            base = simulate_healthy_recording(n, fs, shaft_rpm, seed=s)
            if c is FaultClass.Healthy:
                samples = base
            else:
                spec = real_like_spec(c, **(spec_overrides or {}))
                samples = simulate_real_faults(base, c, fs, shaft_rpm, s + 50021, spec=spec)
            out.append(Recording(f"demo-{c.name}-{j}", samples, fs, shaft_rpm, c))
    return out
