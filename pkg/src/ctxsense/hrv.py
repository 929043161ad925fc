"""Beat-to-beat interval series and their cleaning.

An :class:`NNSeries` pairs each inter-beat interval with the time of the
beat that opens it, so dropping a bad interval never distorts its
neighbours: cleaning removes rows, it never re-differences. Four cleaning
methods are available:

    none       keep everything
    rules      drop intervals outside a plausible range
    automatic  drop intervals too far from a local mean (40 % rule);
               the local mean uses the previous accepted interval and the
               next raw one, whichever exist
    median     drop intervals further than a threshold from a centered
               rolling median of the raw series
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Mapping, Sequence, Union

import numpy as np

from .config import AnalysisConfig, PipelineConfig
from .errors import ConfigError, EmptyAfterCleaningError, InsufficientDataError, SpecError

if TYPE_CHECKING:  # circular at runtime: features builds on this module
    from .features import FeatureMatrix, TaskKind


@dataclass(frozen=True)
class NNSeries:
    """Inter-beat intervals (seconds) with the opening beat time of each."""

    beat_times: np.ndarray
    intervals: np.ndarray
    cleaned_by: str = "none"

    def __post_init__(self) -> None:
        if self.beat_times.shape != self.intervals.shape or self.beat_times.ndim != 1:
            raise SpecError("beat_times and intervals must be matching 1-D arrays")
        if len(self.beat_times) and np.any(np.diff(self.beat_times) <= 0):
            raise SpecError("beat times must be strictly increasing")
        if np.any(self.intervals <= 0):
            raise SpecError("intervals must be positive")

    def __len__(self) -> int:
        return len(self.intervals)


def nn_from_peaks(peaks: np.ndarray, rate: float) -> NNSeries:
    """Difference systolic peak indices into an interval series."""
    peaks = np.asarray(peaks)
    if len(peaks) < 2:
        raise InsufficientDataError(
            f"need at least 2 peaks to form intervals, got {len(peaks)}"
        )
    times = peaks[:-1] / rate
    intervals = np.diff(peaks) / rate
    return NNSeries(beat_times=times.astype(np.float64), intervals=intervals.astype(np.float64))


def truncate_nn(nn: NNSeries, window_s: float | None) -> NNSeries:
    """Keep intervals fully contained in the first ``window_s`` seconds.

    Times are measured from the interval start (beat times of detected
    peaks are already relative to the slice). None keeps everything.
    """
    if window_s is None:
        return nn
    keep = nn.beat_times + nn.intervals <= window_s
    if not keep.any():
        raise InsufficientDataError(
            f"no complete beat interval inside the first {window_s} s"
        )
    return NNSeries(
        beat_times=nn.beat_times[keep],
        intervals=nn.intervals[keep],
        cleaned_by=nn.cleaned_by,
    )


@dataclass(frozen=True)
class NoClean:
    label = "none"


@dataclass(frozen=True)
class RulesClean:
    low_s: float = 0.33
    high_s: float = 1.5
    label = "rules"


@dataclass(frozen=True)
class AutomaticClean:
    cutoff: float = 0.4
    label = "automatic"


@dataclass(frozen=True)
class MedianClean:
    window: int = 5
    tau_s: float = 0.25
    label = "median"


CleaningMethod = Union[NoClean, RulesClean, AutomaticClean, MedianClean]

METHOD_LABELS = ("none", "rules", "automatic", "median")


def method_from_config(cfg: PipelineConfig, name: str | None = None) -> CleaningMethod:
    """Build a cleaning method from pipeline settings (name overrides cfg)."""
    label = cfg.nn_method if name is None else name
    if label == "none":
        return NoClean()
    if label == "rules":
        return RulesClean(low_s=cfg.rules_low_s, high_s=cfg.rules_high_s)
    if label == "automatic":
        return AutomaticClean(cutoff=cfg.automatic_cutoff)
    if label == "median":
        return MedianClean(window=cfg.median_window, tau_s=cfg.median_tau_s)
    raise ConfigError(f"unknown cleaning method {label!r}")


def _rules_mask(values: np.ndarray, method: RulesClean) -> np.ndarray:
    return (values >= method.low_s) & (values <= method.high_s)


def _automatic_mask(values: np.ndarray, method: AutomaticClean) -> np.ndarray:
    keep = np.ones(len(values), dtype=bool)
    last_accepted: float | None = None
    for i, value in enumerate(values):
        neighbours = []
        if last_accepted is not None:
            neighbours.append(last_accepted)
        if i + 1 < len(values):
            neighbours.append(values[i + 1])
        if neighbours:
            reference = float(np.mean(neighbours))
            if abs(value - reference) > method.cutoff * reference:
                keep[i] = False
                continue
        last_accepted = float(value)
    return keep


def _median_mask(values: np.ndarray, method: MedianClean) -> np.ndarray:
    n = len(values)
    half = method.window // 2
    keep = np.ones(n, dtype=bool)
    for i in range(n):
        window = values[max(0, i - half): min(n, i + half + 1)]
        keep[i] = abs(values[i] - float(np.median(window))) <= method.tau_s
    return keep


def clean_nn(nn: NNSeries, method: CleaningMethod) -> NNSeries:
    """Drop implausible intervals; the result is a subsequence of the input."""
    values = nn.intervals
    if isinstance(method, NoClean):
        keep = np.ones(len(values), dtype=bool)
    elif isinstance(method, RulesClean):
        keep = _rules_mask(values, method)
    elif isinstance(method, AutomaticClean):
        keep = _automatic_mask(values, method)
    elif isinstance(method, MedianClean):
        keep = _median_mask(values, method)
    else:
        raise ConfigError(f"unknown cleaning method {method!r}")
    if not keep.any():
        raise EmptyAfterCleaningError(
            f"{method.label} cleaning removed all {len(values)} intervals"
        )
    return NNSeries(
        beat_times=nn.beat_times[keep],
        intervals=values[keep],
        cleaned_by=method.label,
    )


@dataclass(frozen=True)
class BenchmarkCell:
    """One (cleaning method, window, task) measurement."""

    method: str
    window_s: float | None
    task: str
    mean_accuracy: float
    sem: float


@dataclass(frozen=True)
class NnFilterBenchmark:
    """Cross-validated accuracy per cleaning method and data-window length."""

    cells: tuple[BenchmarkCell, ...]

    def summary(self) -> list[dict[str, object]]:
        """Mean over tasks per (method, window), SEM across the task means."""
        groups: dict[tuple[str, float | None], list[float]] = {}
        for cell in self.cells:
            groups.setdefault((cell.method, cell.window_s), []).append(cell.mean_accuracy)
        rows = []
        for (method, window), values in sorted(
            groups.items(), key=lambda kv: (kv[0][0], kv[0][1] if kv[0][1] is not None else np.inf)
        ):
            arr = np.asarray(values)
            sem = float(arr.std(ddof=1) / np.sqrt(len(arr))) if len(arr) > 1 else 0.0
            rows.append(
                {
                    "method": method,
                    "window_s": window,
                    "mean_accuracy": float(arr.mean()),
                    "sem": sem,
                }
            )
        return rows

    def to_dict(self) -> dict[str, object]:
        return {
            "cells": [
                {
                    "method": c.method,
                    "window_s": c.window_s,
                    "task": c.task,
                    "mean_accuracy": c.mean_accuracy,
                    "sem": c.sem,
                }
                for c in self.cells
            ],
            "summary": self.summary(),
        }


def nn_filter_benchmark(
    features_per_cell: Mapping[tuple[str, float | None], "FeatureMatrix"],
    tasks: Sequence["TaskKind"],
    analysis: AnalysisConfig,
    seed: int,
    jobs: int | None = None,
) -> NnFilterBenchmark:
    """Score every cleaning method and window length on every task.

    ``features_per_cell`` maps (method label, window seconds or None) to a
    raw feature matrix extracted under that setting; conditioning and
    nested cross-validation run per cell.
    """
    from . import learn
    from .features import build_task, condition_matrix

    cells: list[BenchmarkCell] = []
    for (method, window), matrix in sorted(
        features_per_cell.items(),
        key=lambda kv: (kv[0][0], kv[0][1] if kv[0][1] is not None else np.inf),
    ):
        conditioned = condition_matrix(matrix, center=analysis.center, scale=analysis.scale)
        for task in tasks:
            dataset = build_task(conditioned, task)
            report = learn.nlopocv(
                dataset,
                analysis=analysis,
                k=None,
                seed=seed,
                jobs=jobs,
            )
            cells.append(
                BenchmarkCell(
                    method=method,
                    window_s=window,
                    task=task.value,
                    mean_accuracy=report.mean_accuracy,
                    sem=report.sem,
                )
            )
    return NnFilterBenchmark(cells=tuple(cells))


def drop_fraction(raw: NNSeries, cleaned: NNSeries) -> float:
    """Fraction of intervals a cleaning pass removed."""
    if len(raw) == 0:
        return 0.0
    return 1.0 - len(cleaned) / len(raw)


__all__ = [
    "NNSeries",
    "nn_from_peaks",
    "truncate_nn",
    "NoClean",
    "RulesClean",
    "AutomaticClean",
    "MedianClean",
    "CleaningMethod",
    "METHOD_LABELS",
    "method_from_config",
    "clean_nn",
    "BenchmarkCell",
    "NnFilterBenchmark",
    "nn_filter_benchmark",
    "drop_fraction",
]
