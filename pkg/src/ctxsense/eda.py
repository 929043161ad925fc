"""Electrodermal activity: tonic/phasic split and response detection.

The tonic level is the very-low-frequency drift of skin conductance; the
phasic residual carries the discrete skin-conductance responses (SCRs).
Splitting with a zero-phase first-order lowpass keeps tonic + phasic an
exact reconstruction of the input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsp import FilterSpec, butterworth_filter
from .errors import InsufficientDataError, SpecError


@dataclass(frozen=True)
class EdaDecomposition:
    tonic: np.ndarray
    phasic: np.ndarray
    rate: float

    def __post_init__(self) -> None:
        if self.tonic.shape != self.phasic.shape or self.tonic.ndim != 1:
            raise SpecError("tonic and phasic must be matching 1-D arrays")


def decompose_eda(x: np.ndarray, rate: float, split_hz: float = 0.05) -> EdaDecomposition:
    """Split skin conductance into tonic drift and phasic residual.

    Requires at least 3 seconds of signal; below that the lowpass has
    nothing meaningful to estimate.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise SpecError("decompose_eda expects a 1-D signal")
    if len(x) < 3 * rate:
        raise InsufficientDataError(
            f"EDA segment of {len(x)} samples is shorter than 3 s at {rate} Hz"
        )
    spec = FilterSpec.lowpass(order=1, high_hz=split_hz, rate=rate)
    tonic = butterworth_filter(x, spec, zero_phase=True)
    return EdaDecomposition(tonic=tonic, phasic=x - tonic, rate=rate)


@dataclass(frozen=True)
class ScrPeaks:
    """Detected skin-conductance responses: sample indices and rise amplitudes."""

    indices: np.ndarray
    amplitudes: np.ndarray

    def __post_init__(self) -> None:
        if self.indices.shape != self.amplitudes.shape or self.indices.ndim != 1:
            raise SpecError("indices and amplitudes must be matching 1-D arrays")

    def __len__(self) -> int:
        return len(self.indices)


def detect_scr_peaks(
    phasic: np.ndarray,
    rate: float,
    min_amplitude_us: float = 0.01,
    min_separation_s: float = 1.0,
) -> ScrPeaks:
    """Find skin-conductance responses in a phasic signal.

    A response is a local maximum that rises at least ``min_amplitude_us``
    above the preceding trough (the minimum since the previous kept
    response, or since the segment start). Candidates closer together than
    ``min_separation_s`` are resolved greedily by amplitude: taller
    responses claim their window first.
    """
    x = np.asarray(phasic, dtype=np.float64)
    if x.ndim != 1:
        raise SpecError("detect_scr_peaks expects a 1-D signal")
    empty = ScrPeaks(indices=np.empty(0, dtype=np.int64), amplitudes=np.empty(0))
    if len(x) < 3:
        return empty
    interior = (x[1:-1] > x[:-2]) & (x[1:-1] >= x[2:])
    local_max = np.flatnonzero(interior) + 1
    if len(local_max) == 0:
        return empty

    # Rise amplitude: peak height above the minimum since the previous
    # local maximum (or segment start for the first one).
    candidates: list[tuple[int, float]] = []
    previous = 0
    for peak in local_max:
        trough = float(x[previous:peak].min()) if peak > previous else float(x[peak])
        rise = float(x[peak]) - trough
        if rise >= min_amplitude_us:
            candidates.append((int(peak), rise))
        previous = peak

    if not candidates:
        return empty
    min_gap = int(round(min_separation_s * rate))
    taken: list[int] = []
    by_height = sorted(candidates, key=lambda c: (-c[1], c[0]))
    kept: dict[int, float] = {}
    for index, rise in by_height:
        if any(abs(index - other) < min_gap for other in taken):
            continue
        taken.append(index)
        kept[index] = rise
    order = sorted(kept)
    return ScrPeaks(
        indices=np.asarray(order, dtype=np.int64),
        amplitudes=np.asarray([kept[i] for i in order]),
    )
