"""Synthetic bearing-fault generation from healthy recordings.

A fault is modelled as a train of short band-limited impacts with a
periodic amplitude modulation, added to a (scaled) healthy recording:

    eps(t) = sum_i A_i s(t - i T) + beta n(t)
    A_i    = gamma_i sum_k alpha_k cos(2 pi k i T / Q)

``T`` is the impact period of the defect, ``Q`` the modulation period
(shaft rotation for inner-race defects, cage rotation for rolling-element
defects, none for a stationary outer-race defect).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np
from scipy import signal

from .errors import ParameterError
from .segment import DomainTag, FaultClass, Segment

DEFAULT_ALPHA = (1.0, 0.76, 0.38, 0.11, 0.05)
DEFAULT_BETA_RANGE = (0.25, 2.0)
DEFAULT_JITTER = 0.1
DEFAULT_DUTY = 0.05
# pulse band-pass corners as fractions of the sample rate
DEFAULT_PULSE_BAND = (0.02, 0.45)
UNMODULATED = math.inf


@dataclass(frozen=True)
class BearingGeometry:
    n_elements: int
    ball_diameter: float
    pitch_diameter: float
    contact_angle: float = 0.0

    def __post_init__(self):
        if int(self.n_elements) != self.n_elements or self.n_elements < 3:
            raise ParameterError(f"need at least 3 rolling elements, got {self.n_elements}")
        if not 0 < self.ball_diameter < self.pitch_diameter:
            raise ParameterError("require 0 < ball_diameter < pitch_diameter")
        if not 0 <= self.contact_angle < math.pi / 2:
            raise ParameterError("contact angle must lie in [0, pi/2)")

    @property
    def ratio(self) -> float:
        """(d/D) cos(phi)."""
        return self.ball_diameter / self.pitch_diameter * math.cos(self.contact_angle)


# CWRU drive-end bearing (SKF 6205-2RS JEM), dimensions in mm
CWRU_DRIVE_END = BearingGeometry(9, 7.94, 39.04, 0.0)


class DefectFrequencies(NamedTuple):
    bpfo: float
    bpfi: float
    bsf: float
    ftf: float


def defect_frequencies(geom: BearingGeometry, shaft_hz: float) -> DefectFrequencies:
    """Return the four kinematic defect frequencies in Hz."""
    if not shaft_hz > 0:
        raise ParameterError(f"shaft frequency must be positive, got {shaft_hz}")
    r = geom.ratio
    n = geom.n_elements
    return DefectFrequencies(
        bpfo=n / 2 * shaft_hz * (1 - r),
        bpfi=n / 2 * shaft_hz * (1 + r),
        bsf=geom.pitch_diameter / (2 * geom.ball_diameter) * shaft_hz * (1 - r * r),
        ftf=shaft_hz / 2 * (1 - r),
    )


def fault_periods(fault: FaultClass, geom: BearingGeometry, shaft_hz: float) -> tuple[float, float]:
    """Impact period ``T`` and modulation period ``Q`` (seconds) for a fault class."""
    f = defect_frequencies(geom, shaft_hz)
    fault = FaultClass.parse(fault)
    if fault is FaultClass.OuterRace:
        return 1.0 / f.bpfo, UNMODULATED
    if fault is FaultClass.InnerRace:
        return 1.0 / f.bpfi, 1.0 / shaft_hz
    if fault is FaultClass.RollingElement:
        return 1.0 / f.bsf, 1.0 / f.ftf
    raise ParameterError("a healthy bearing has no defect period")


@dataclass(frozen=True)
class DefectSpec:
    """Parameters of one synthetic fault type.

    ``impact_period`` / ``modulation_period`` may be left as ``None``; they
    are then derived from the bearing geometry and the carrier's shaft speed
    when a segment is synthesized. ``pulse_band`` is given as fractions of
    the sample rate.
    """

    fault_class: FaultClass
    impact_period: Optional[float] = None
    modulation_period: Optional[float] = None
    alpha: tuple[float, ...] = DEFAULT_ALPHA
    beta_range: tuple[float, float] = DEFAULT_BETA_RANGE
    jitter_sigma: float = DEFAULT_JITTER
    duty: float = DEFAULT_DUTY
    pulse_band: tuple[float, float] = DEFAULT_PULSE_BAND
    # multiplies the kinematic frequency; 1.0 reproduces the textbook value
    frequency_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "fault_class", FaultClass.parse(self.fault_class))
        object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))
        object.__setattr__(self, "beta_range", tuple(float(b) for b in self.beta_range))
        object.__setattr__(self, "pulse_band", tuple(float(b) for b in self.pulse_band))
        if self.impact_period is not None and not self.impact_period > 0:
            raise ParameterError("impact period must be positive")
        if self.modulation_period is not None and not self.modulation_period > 0:
            raise ParameterError("modulation period must be positive (or inf)")
        if not self.alpha or any(a < 0 for a in self.alpha):
            raise ParameterError("sideband amplitudes must be a non-empty list of nonnegative values")
        lo, hi = self.beta_range
        if lo > hi:
            raise ParameterError("beta_range must be an ordered interval")
        if self.jitter_sigma < 0:
            raise ParameterError("jitter sigma must be nonnegative")
        if not 0 < self.duty < 1:
            raise ParameterError("duty fraction must lie in (0, 1)")
        if not 0 < self.pulse_band[0] < self.pulse_band[1] < 0.5:
            raise ParameterError("pulse band must satisfy 0 < lo < hi < 0.5 (fractions of fs)")
        if not self.frequency_scale > 0:
            raise ParameterError("frequency_scale must be positive")

    def periods(self, geom: BearingGeometry, shaft_hz: float) -> tuple[float, float]:
        """Resolve ``(T, Q)``, deriving missing values from kinematics."""
        if self.fault_class is FaultClass.Healthy:
            raise ParameterError("a healthy spec has no periods")
        T, Q = self.impact_period, self.modulation_period
        if T is None or Q is None:
            T0, Q0 = fault_periods(self.fault_class, geom, shaft_hz)
            T = T0 / self.frequency_scale if T is None else T
            Q = Q0 if Q is None else Q
        return T, Q


def impact_window(T: float, duty: float, fs: float) -> np.ndarray:
    """Unfiltered Hann window of ``round(duty * T * fs)`` samples."""
    if not 0 < duty < 1:
        raise ParameterError("duty must lie in (0, 1)")
    if not fs > 0 or not T > 0:
        raise ParameterError("T and fs must be positive")
    if T * fs < 4:
        raise ParameterError(f"impact period spans only {T * fs:.2f} samples (need >= 4)")
    support = int(round(duty * T * fs))
    if support < 3:
        raise ParameterError(f"Hann support of {support} samples is too short (need >= 3)")
    return np.hanning(support)


def impact_waveform(
    T: float,
    duty: float,
    fs: float,
    band: Optional[tuple[float, float]] = None,
) -> np.ndarray:
    """Single band-limited impact ``s``: a Hann window of ``duty * T`` seconds.

    The window is zero-padded and filtered with a zero-phase band-pass
    (Butterworth, two biquads, applied forward and backward). ``band`` is
    in Hz and defaults to ``(0.02 fs, 0.45 fs)``. The window's centre sits
    at index ``(len(out) - 1) / 2``.
    """
    window = impact_window(T, duty, fs)
    if band is None:
        band = (DEFAULT_PULSE_BAND[0] * fs, DEFAULT_PULSE_BAND[1] * fs)
    lo, hi = band
    if not 0 < lo < hi < fs / 2:
        raise ParameterError("band must satisfy 0 < lo < hi < fs/2")

    pad = int(math.ceil(8.0 * fs / lo))
    x = np.zeros(window.size + 2 * pad)
    x[pad:pad + window.size] = window
    return _zero_phase_fft_filter(x, _butter_sos(2, (lo, hi), fs), fs)


def _butter_sos(order: int, band: tuple[float, float], fs: float) -> np.ndarray:
    return signal.butter(order, band, btype="bandpass", fs=fs, output="sos")


def _zero_phase_fft_filter(x: np.ndarray, sos: np.ndarray, fs: float) -> np.ndarray:
    # |H|^2 is the forward-backward response; circular is fine for padded input
    n = x.shape[0]
    freqs = np.fft.rfftfreq(n, d=1.0 / fs)
    _, h = signal.sosfreqz(sos, worN=freqs, fs=fs)
    return np.fft.irfft(np.fft.rfft(x) * np.abs(h) ** 2, n=n)


def modulation_amplitude(i, T: float, Q: float, alpha: Sequence[float], gamma=1.0):
    """Impact amplitude ``A_i``; vectorised over ``i`` and ``gamma``.

    ``Q = inf`` gives the constant amplitude ``gamma * sum(alpha)``.
    """
    if not (Q > 0):
        raise ParameterError("modulation period must be positive or inf")
    alpha = np.asarray(alpha, dtype=float)
    i = np.asarray(i, dtype=float)
    if math.isinf(Q):
        total = np.full(i.shape, alpha.sum())
    else:
        k = np.arange(alpha.size)
        phase = np.multiply.outer(i * T * 2 * np.pi / Q, k)
        total = np.cos(phase) @ alpha
    out = np.asarray(gamma) * total
    return float(out) if out.ndim == 0 else out


def pulse_train(
    n_samples: int,
    fs: float,
    T: float,
    Q: float,
    alpha: Sequence[float],
    gammas: np.ndarray,
    phase: float,
    kernel: np.ndarray,
) -> np.ndarray:
    """Sum of scaled impacts ``sum_i A_i s(t - phase - i T)`` over one segment.

    ``gammas`` holds one jitter draw per impact, for impact indices returned
    by :func:`impact_indices`. Impacts partially outside the segment are
    truncated at its boundaries.
    """
    idx = impact_indices(n_samples, fs, T, phase, kernel.shape[0])
    if gammas.shape != idx.shape:
        raise ParameterError("need one jitter draw per impact")
    amps = modulation_amplitude(idx, T, Q, alpha, gammas)
    centre = (kernel.shape[0] - 1) // 2
    out = np.zeros(n_samples)
    for i, a in zip(idx, amps):
        start = int(round((phase + i * T) * fs)) - centre
        lo, hi = max(start, 0), min(start + kernel.shape[0], n_samples)
        if lo < hi:
            out[lo:hi] += a * kernel[lo - start:hi - start]
    return out


def nominal_train_rms(kernel: np.ndarray, T: float, fs: float, alpha: Sequence[float]) -> float:
    """RMS of an unmodulated, jitter-free train of ``kernel`` every ``T`` seconds."""
    return float(np.sum(alpha)) * math.sqrt(float(np.sum(kernel ** 2)) / (T * fs))


def impact_indices(n_samples: int, fs: float, T: float, phase: float, kernel_len: int) -> np.ndarray:
    """Indices ``i`` of every impact whose support overlaps the segment."""
    reach = kernel_len / fs
    first = math.floor((-reach - phase) / T)
    last = math.ceil((n_samples / fs + reach - phase) / T)
    return np.arange(first, last + 1)


@dataclass(frozen=True)
class SynthesisDraws:
    """Random draws used for one synthesized segment."""

    beta: float
    phase: float
    gammas: np.ndarray = field(repr=False)
    impact_period: Optional[float] = None
    modulation_period: Optional[float] = None


def draw_parameters(spec: DefectSpec, n_samples: int, fs: float, T: Optional[float],
                    Q: Optional[float], kernel_len: int, rng: np.random.Generator) -> SynthesisDraws:
    beta = float(rng.uniform(*spec.beta_range))
    if spec.fault_class is FaultClass.Healthy:
        return SynthesisDraws(beta=beta, phase=0.0, gammas=np.empty(0))
    phase = float(rng.uniform(0.0, T))
    n_imp = impact_indices(n_samples, fs, T, phase, kernel_len).size
    gammas = np.maximum(rng.normal(1.0, spec.jitter_sigma, size=n_imp), 0.0)
    return SynthesisDraws(beta, phase, gammas, T, Q)


def synthesize_fault(
    healthy: Segment,
    spec: DefectSpec,
    geom: BearingGeometry,
    rng_seed: int,
    draws: Optional[SynthesisDraws] = None,
) -> Segment:
    """Inject a synthetic defect into a healthy segment.

    The pulse train is scaled so that its nominal (jitter-free, unmodulated)
    RMS equals the carrier's standard deviation; the power SNR is then
    ``1 / beta**2`` whatever the recording's physical units. Pass ``draws``
    to replay fixed random draws.
    """
    if healthy.label not in (None, FaultClass.Healthy):
        raise ParameterError(f"carrier must be healthy, got {healthy.label.name}")
    fs = healthy.sample_rate
    n = len(healthy)
    carrier = healthy.samples.astype(float)
    rng = np.random.default_rng(rng_seed)

    if spec.fault_class is FaultClass.Healthy:
        if draws is None:
            draws = draw_parameters(spec, n, fs, None, None, 0, rng)
        return healthy.with_samples(draws.beta * carrier, label=FaultClass.Healthy,
                                    domain_tag=DomainTag.SyntheticSource)

    T, Q = spec.periods(geom, healthy.shaft_hz)
    band = (spec.pulse_band[0] * fs, spec.pulse_band[1] * fs)
    kernel = impact_waveform(T, spec.duty, fs, band)
    if draws is None:
        draws = draw_parameters(spec, n, fs, T, Q, kernel.shape[0], rng)
    scale = (float(np.std(carrier)) or 1.0) / nominal_train_rms(kernel, T, fs, spec.alpha)
    train = pulse_train(n, fs, T, Q, spec.alpha, draws.gammas, draws.phase, kernel)
    out = scale * train + draws.beta * carrier
    return healthy.with_samples(out, label=spec.fault_class, domain_tag=DomainTag.SyntheticSource)


def default_specs(classes: Iterable, **overrides) -> dict[FaultClass, DefectSpec]:
    """One :class:`DefectSpec` per class with kinematically derived periods."""
    return {FaultClass.parse(c): DefectSpec(FaultClass.parse(c), **overrides) for c in classes}


def sample_seed(base_seed: int, *path: int) -> int:
    """Derive an order-independent sub-seed for one generated sample."""
    return int(np.random.SeedSequence([int(base_seed), *map(int, path)]).generate_state(1)[0])


def generate_source_dataset(
    healthy_pool: Sequence[Segment],
    geom: BearingGeometry,
    classes: Sequence,
    per_class: int,
    rng_seed: int,
    specs: Optional[dict] = None,
    carrier_ids: Optional[Sequence[str]] = None,
):
    """Build a balanced labeled synthetic dataset, ``per_class`` samples per class.

    Carriers are drawn with replacement when the pool is smaller than
    ``per_class`` and without replacement otherwise. Every record stores its
    sub-seed and carrier id, so any single sample can be regenerated.
    """
    from .datastore import Dataset, Record

    if not healthy_pool:
        raise ParameterError("healthy pool is empty")
    if per_class < 1:
        raise ParameterError("per_class must be >= 1")
    classes = [FaultClass.parse(c) for c in classes]
    if len(set(classes)) != len(classes):
        raise ParameterError("duplicate classes")
    specs = dict(specs or {})
    for c in classes:
        specs.setdefault(c, DefectSpec(c))
    if carrier_ids is None:
        carrier_ids = [f"carrier-{j}" for j in range(len(healthy_pool))]

    segments, records = [], []
    for ci, c in enumerate(classes):
        pick_rng = np.random.default_rng(sample_seed(rng_seed, 1, ci))
        replace_ = len(healthy_pool) < per_class
        picks = pick_rng.choice(len(healthy_pool), size=per_class, replace=replace_)
        for j, p in enumerate(picks):
            seed = sample_seed(rng_seed, 0, ci, j)
            seg = synthesize_fault(healthy_pool[p], specs[c], geom, seed)
            segments.append(seg)
            records.append(Record(id=f"syn-{c.name}-{j}", seed=seed, origin=carrier_ids[p]))
    return Dataset(segments=segments, records=records, classes=classes,
                   domain_tag=DomainTag.SyntheticSource)

