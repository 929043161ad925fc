"""Signal processing: Butterworth filtering, systolic peak detection, and
a Lomb-Scargle periodogram for unevenly sampled beat-interval series.

The peak detector follows the two-moving-average scheme for pulse waves:
square the clipped signal, compare a short "peak" moving average against a
long "beat" moving average plus an offset, and treat sufficiently wide
regions where the short average wins as systolic waves. One peak is kept
per wave, with a refractory merge for peaks closer than physiology allows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal as sps

from .errors import FilterError, InsufficientDataError, SpecError


@dataclass(frozen=True)
class FilterSpec:
    """A validated Butterworth filter description for a given sample rate."""

    kind: str  # bandpass | lowpass
    order: int
    rate: float
    low_hz: float | None
    high_hz: float

    def __post_init__(self) -> None:
        if self.kind not in ("bandpass", "lowpass"):
            raise SpecError(f"unknown filter kind {self.kind!r}")
        if self.order < 1:
            raise SpecError("filter order must be >= 1")
        if self.rate <= 0:
            raise SpecError("sample rate must be positive")
        nyquist = self.rate / 2.0
        if self.kind == "bandpass":
            if self.low_hz is None or not 0 < self.low_hz < self.high_hz < nyquist:
                raise SpecError(
                    f"bandpass needs 0 < low < high < {nyquist} Hz, got "
                    f"({self.low_hz}, {self.high_hz}) at {self.rate} Hz"
                )
        else:
            if self.low_hz is not None:
                raise SpecError("lowpass takes no low cut")
            if not 0 < self.high_hz < nyquist:
                raise SpecError(
                    f"lowpass needs 0 < high < {nyquist} Hz, got {self.high_hz} "
                    f"at {self.rate} Hz"
                )

    @classmethod
    def bandpass(cls, order: int, low_hz: float, high_hz: float, rate: float) -> FilterSpec:
        return cls(kind="bandpass", order=order, rate=rate, low_hz=low_hz, high_hz=high_hz)

    @classmethod
    def lowpass(cls, order: int, high_hz: float, rate: float) -> FilterSpec:
        return cls(kind="lowpass", order=order, rate=rate, low_hz=None, high_hz=high_hz)

    def to_sos(self) -> np.ndarray:
        if self.kind == "bandpass":
            return sps.butter(
                self.order, [self.low_hz, self.high_hz], btype="bandpass",
                fs=self.rate, output="sos",
            )
        return sps.butter(self.order, self.high_hz, btype="lowpass", fs=self.rate, output="sos")


def butterworth_filter(x: np.ndarray, spec: FilterSpec, zero_phase: bool = True) -> np.ndarray:
    """Apply a Butterworth filter, zero-phase (forward-backward) by default.

    Zero-phase filtering squares the magnitude response and cancels group
    delay, which keeps peak positions honest. The causal single pass exists
    for streaming-style use. Requires len(x) > 3 * 2 * order so the
    forward-backward edge padding has room.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise SpecError("butterworth_filter expects a 1-D signal")
    padlen = 3 * 2 * spec.order
    if len(x) <= padlen:
        raise FilterError(
            f"signal of {len(x)} samples is too short for order {spec.order} "
            f"(needs more than {padlen})"
        )
    sos = spec.to_sos()
    if zero_phase:
        return sps.sosfiltfilt(sos, x, padlen=padlen)
    return sps.sosfilt(sos, x)


@dataclass(frozen=True)
class PeakConfig:
    """Window and threshold settings for the two-moving-average detector."""

    peak_window_s: float = 0.111
    beat_window_s: float = 0.667
    beat_offset: float = 0.02
    refractory_s: float = 0.3


def _odd_window(seconds: float, rate: float) -> int:
    w = max(1, int(round(seconds * rate)))
    return w if w % 2 == 1 else w + 1


def _centered_mean(x: np.ndarray, width: int) -> np.ndarray:
    # Edge-extended centered moving average; output length matches input.
    if width == 1:
        return x.copy()
    pad = width // 2
    padded = np.pad(x, pad, mode="edge")
    window = np.ones(width) / width
    return np.convolve(padded, window, mode="valid")


def detect_systolic_peaks(
    filtered: np.ndarray, rate: float, config: PeakConfig = PeakConfig()
) -> np.ndarray:
    """Locate systolic peaks in a band-passed pulse wave.

    Returns sample indices, strictly increasing. An empty array means no
    wave cleared the threshold; callers decide whether that is an error.
    """
    x = np.asarray(filtered, dtype=np.float64)
    if x.ndim != 1:
        raise SpecError("detect_systolic_peaks expects a 1-D signal")
    if len(x) == 0:
        return np.empty(0, dtype=np.int64)
    clipped = np.where(x > 0, x, 0.0)
    squared = clipped * clipped
    w_peak = _odd_window(config.peak_window_s, rate)
    w_beat = _odd_window(config.beat_window_s, rate)
    ma_peak = _centered_mean(squared, w_peak)
    ma_beat = _centered_mean(squared, w_beat)
    threshold = ma_beat + config.beat_offset * float(squared.mean())
    above = ma_peak > threshold
    padded = np.r_[False, above, False]
    changes = np.flatnonzero(np.diff(padded.astype(np.int8)))
    starts, stops = changes[::2], changes[1::2]

    refractory = int(round(config.refractory_s * rate))
    peaks: list[int] = []
    for begin, stop in zip(starts, stops):
        if stop - begin < w_peak:
            continue
        candidate = begin + int(np.argmax(x[begin:stop]))
        if peaks and candidate - peaks[-1] < refractory:
            # Two candidates inside one refractory window are one beat;
            # keep whichever wave is taller.
            if x[candidate] > x[peaks[-1]]:
                peaks[-1] = candidate
            continue
        peaks.append(candidate)
    return np.asarray(peaks, dtype=np.int64)


@dataclass(frozen=True)
class Periodogram:
    """Normalized spectral power on an evenly spaced frequency grid."""

    freqs: np.ndarray
    power: np.ndarray

    def __post_init__(self) -> None:
        if self.freqs.shape != self.power.shape or self.freqs.ndim != 1:
            raise SpecError("periodogram freqs/power must be matching 1-D arrays")
        if len(self.freqs) >= 2:
            steps = np.diff(self.freqs)
            if not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-12):
                raise SpecError("periodogram grid must be evenly spaced")


def lomb_scargle_psd(
    times: np.ndarray,
    values: np.ndarray,
    freq_min_hz: float = 0.01,
    freq_max_hz: float = 0.5,
    n_freqs: int = 491,
) -> Periodogram:
    """Classic normalized Lomb-Scargle periodogram with the tau correction.

    Designed for beat-interval series, which are inherently unevenly
    sampled. Power is normalized by twice the sample variance, so a pure
    sinusoid of amplitude A at a grid frequency scores about n*A^2 /
    (4*var). A constant series carries no information and scores zero
    everywhere.
    """
    t = np.asarray(times, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    if t.shape != v.shape or t.ndim != 1:
        raise SpecError("times and values must be matching 1-D arrays")
    if len(t) < 4:
        raise InsufficientDataError(
            f"Lomb-Scargle needs at least 4 points, got {len(t)}"
        )
    if not (0 < freq_min_hz < freq_max_hz) or n_freqs < 2:
        raise SpecError("frequency grid must satisfy 0 < min < max with >= 2 points")
    freqs = np.linspace(freq_min_hz, freq_max_hz, n_freqs)
    variance = float(v.var(ddof=1))
    # a constant series can carry rounding-noise variance (~eps^2 relative
    # to the level); treat that as zero rather than normalizing by it
    if variance <= np.finfo(np.float64).eps * float(np.mean(v * v)):
        return Periodogram(freqs=freqs, power=np.zeros_like(freqs))
    centered = v - v.mean()
    omega = 2.0 * np.pi * freqs[:, None]  # (f, 1) against times (n,)
    two_wt = 2.0 * omega * t[None, :]
    tau = np.arctan2(np.sin(two_wt).sum(axis=1), np.cos(two_wt).sum(axis=1)) / (
        2.0 * omega[:, 0]
    )
    phase = omega * t[None, :] - (omega[:, 0] * tau)[:, None]
    cos_term = np.cos(phase)
    sin_term = np.sin(phase)
    c_dot = cos_term @ centered
    s_dot = sin_term @ centered
    c_norm = (cos_term * cos_term).sum(axis=1)
    s_norm = (sin_term * sin_term).sum(axis=1)
    # A frequency can make all sin terms vanish (e.g. single-point edge
    # cases); guard the ratio, the numerator vanishes with it.
    with np.errstate(invalid="ignore", divide="ignore"):
        power = (
            np.where(c_norm > 0, c_dot * c_dot / np.where(c_norm > 0, c_norm, 1.0), 0.0)
            + np.where(s_norm > 0, s_dot * s_dot / np.where(s_norm > 0, s_norm, 1.0), 0.0)
        ) / (2.0 * variance)
    return Periodogram(freqs=freqs, power=np.maximum(power, 0.0))


def band_power(pg: Periodogram, low_hz: float, high_hz: float) -> float:
    """Trapezoidal integral of power over [low_hz, high_hz] grid points."""
    mask = (pg.freqs >= low_hz - 1e-12) & (pg.freqs <= high_hz + 1e-12)
    if mask.sum() < 2:
        return 0.0
    return float(np.trapezoid(pg.power[mask], pg.freqs[mask]))
