"""Per-interval physiological features, matrix assembly, conditioning,
and the five binary classification tasks built from event/phase labels.

Thirteen features per (participant, event, phase) interval, in fixed
column order:

    nn_mean, nn_sd, nn_rmssd, nn_prc20, nn_prc80, nn_lfn, nn_hfn
        beat-interval statistics and normalized low/high-frequency
        spectral fractions
    st_mean
        mean skin temperature
    acc_mean, acc_sd
        mean and spread of the per-sample acceleration magnitude
    scl_mean, scr_mean, scr_peaksn
        mean tonic level, mean phasic signal, and responses per second

Rows where any feature cannot be computed are excluded with a reason
rather than patched.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import dsp, eda as eda_mod, hrv
from .config import PipelineConfig
from .errors import (
    AssemblyError,
    DataContentError,
    InsufficientDataError,
    ParseError,
    SchemaError,
    SpecError,
    TaskConstructionError,
)
from .ingest import Event, IntervalSlice, Phase, SensorKind, Session, slice_intervals

log = logging.getLogger(__name__)

NN_FEATURE_NAMES: tuple[str, ...] = (
    "nn_mean",
    "nn_sd",
    "nn_rmssd",
    "nn_prc20",
    "nn_prc80",
    "nn_lfn",
    "nn_hfn",
)

FEATURE_NAMES: tuple[str, ...] = NN_FEATURE_NAMES + (
    "st_mean",
    "acc_mean",
    "acc_sd",
    "scl_mean",
    "scr_mean",
    "scr_peaksn",
)

MIN_NN_INTERVALS = 4  # spectral estimates below this are meaningless


@dataclass(frozen=True)
class FeatureRow:
    participant_id: str
    event: Event
    phase: Phase
    start: float
    values: np.ndarray


@dataclass(frozen=True)
class Exclusion:
    participant_id: str
    event: Event
    phase: Phase
    reason: str


def _nn_features(nn: hrv.NNSeries, cfg: PipelineConfig) -> np.ndarray:
    if len(nn) < MIN_NN_INTERVALS:
        raise InsufficientDataError(
            f"only {len(nn)} beat intervals, need {MIN_NN_INTERVALS}"
        )
    v = nn.intervals
    pg = dsp.lomb_scargle_psd(
        nn.beat_times,
        v,
        freq_min_hz=cfg.freq_min_hz,
        freq_max_hz=cfg.freq_max_hz,
        n_freqs=cfg.n_freqs,
    )
    total = dsp.band_power(pg, cfg.freq_min_hz, cfg.freq_max_hz)
    lfn = dsp.band_power(pg, *cfg.lf_band_hz) / total if total > 0 else 0.0
    hfn = dsp.band_power(pg, *cfg.hf_band_hz) / total if total > 0 else 0.0
    prc20, prc80 = np.percentile(v, [20, 80])
    return np.array(
        [
            v.mean(),
            v.std(ddof=1),
            float(np.sqrt(np.mean(np.diff(v) ** 2))),
            prc20,
            prc80,
            lfn,
            hfn,
        ]
    )


def _detect_nn_raw(interval: IntervalSlice, cfg: PipelineConfig) -> hrv.NNSeries:
    ppg = interval.channels[SensorKind.PPG]
    spec = dsp.FilterSpec.bandpass(
        cfg.ppg_filter_order, cfg.ppg_band_hz[0], cfg.ppg_band_hz[1], ppg.rate
    )
    filtered = dsp.butterworth_filter(ppg.samples, spec, zero_phase=cfg.zero_phase)
    peaks = dsp.detect_systolic_peaks(
        filtered,
        ppg.rate,
        dsp.PeakConfig(
            peak_window_s=cfg.peak_window_s,
            beat_window_s=cfg.beat_window_s,
            beat_offset=cfg.beat_offset,
            refractory_s=cfg.refractory_s,
        ),
    )
    return hrv.nn_from_peaks(peaks, ppg.rate)


def _eda_phasic(interval: IntervalSlice, cfg: PipelineConfig) -> eda_mod.EdaDecomposition:
    stream = interval.channels[SensorKind.EDA]
    x = stream.samples
    if cfg.eda_highcut_hz < stream.rate / 2.0:
        spec = dsp.FilterSpec.lowpass(cfg.eda_filter_order, cfg.eda_highcut_hz, stream.rate)
        x = dsp.butterworth_filter(x, spec, zero_phase=cfg.zero_phase)
    else:
        # The configured high cut is at or above Nyquist for this stream;
        # there is nothing above it to remove, so the pass is skipped.
        log.debug(
            "EDA lowpass %.3g Hz skipped at %.3g Hz sampling", cfg.eda_highcut_hz, stream.rate
        )
    return eda_mod.decompose_eda(x, stream.rate, split_hz=cfg.eda_split_hz)


def compute_features(interval: IntervalSlice, cfg: PipelineConfig) -> np.ndarray:
    """All thirteen features for one interval, in FEATURE_NAMES order."""
    nn = _detect_nn_raw(interval, cfg)
    nn = hrv.truncate_nn(nn, cfg.nn_window_s)
    nn = hrv.clean_nn(nn, hrv.method_from_config(cfg))
    nn_part = _nn_features(nn, cfg)

    st_mean = float(interval.channels[SensorKind.TMP].samples.mean())

    acc = interval.channels[SensorKind.ACC].samples
    magnitude = np.linalg.norm(acc, axis=1)
    acc_mean = float(magnitude.mean())
    acc_sd = float(magnitude.std(ddof=1))

    decomp = _eda_phasic(interval, cfg)
    scl_mean = float(decomp.tonic.mean())
    peaks = eda_mod.detect_scr_peaks(
        decomp.phasic,
        decomp.rate,
        min_amplitude_us=cfg.scr_min_amplitude_us,
        min_separation_s=cfg.scr_min_separation_s,
    )
    if cfg.scr_mean_mode == "peak_amplitude_mean":
        scr_mean = float(peaks.amplitudes.mean()) if len(peaks) else 0.0
    else:
        scr_mean = float(decomp.phasic.mean())
    scr_peaksn = len(peaks) / interval.duration

    values = np.concatenate(
        [nn_part, [st_mean, acc_mean, acc_sd, scl_mean, scr_mean, scr_peaksn]]
    )
    _check_vector(values)
    return values


def _check_vector(values: np.ndarray) -> None:
    names = FEATURE_NAMES
    assert np.all(np.isfinite(values)), "non-finite feature value"
    by = dict(zip(names, values))
    assert by["nn_lfn"] + by["nn_hfn"] <= 1.0 + 1e-9, "band fractions exceed total"
    assert by["nn_prc20"] <= by["nn_prc80"] + 1e-12, "percentiles out of order"
    for name in ("nn_sd", "nn_rmssd", "acc_sd", "scr_peaksn"):
        assert by[name] >= 0.0, f"{name} must be non-negative"


@dataclass(frozen=True)
class ExtractResult:
    rows: tuple[FeatureRow, ...]
    exclusions: tuple[Exclusion, ...]


def extract_slices(
    slices: Iterable[IntervalSlice], cfg: PipelineConfig
) -> ExtractResult:
    """Compute features for each slice; failures become logged exclusions."""
    rows: list[FeatureRow] = []
    excluded: list[Exclusion] = []
    for interval in slices:
        try:
            values = compute_features(interval, cfg)
        except DataContentError as exc:
            reason = f"{type(exc).__name__}: {exc}"
            log.warning(
                "excluding %s %s/%s: %s",
                interval.participant_id,
                interval.event.value,
                interval.phase.value,
                reason,
            )
            excluded.append(
                Exclusion(interval.participant_id, interval.event, interval.phase, reason)
            )
            continue
        rows.append(
            FeatureRow(
                participant_id=interval.participant_id,
                event=interval.event,
                phase=interval.phase,
                start=interval.start,
                values=values,
            )
        )
    return ExtractResult(rows=tuple(rows), exclusions=tuple(excluded))


def extract_session(session: Session, cfg: PipelineConfig) -> ExtractResult:
    return extract_slices(slice_intervals(session.streams, session.timeline), cfg)


@dataclass(frozen=True)
class FeatureMatrix:
    """Feature rows for a whole study, with row labels kept alongside."""

    participant_ids: tuple[str, ...]
    events: tuple[Event, ...]
    phases: tuple[Phase, ...]
    X: np.ndarray
    feature_names: tuple[str, ...] = FEATURE_NAMES
    conditioning: str = "raw"

    def __post_init__(self) -> None:
        n = len(self.participant_ids)
        if not (len(self.events) == len(self.phases) == n):
            raise SpecError("row label arrays disagree in length")
        if self.X.shape != (n, len(self.feature_names)):
            raise SpecError(
                f"matrix shape {self.X.shape} does not match {n} rows x "
                f"{len(self.feature_names)} features"
            )
        if n and not np.all(np.isfinite(self.X)):
            raise SpecError("feature matrix contains non-finite values")

    def __len__(self) -> int:
        return len(self.participant_ids)

    def column(self, name: str) -> np.ndarray:
        return self.X[:, self.feature_names.index(name)]


def assemble_matrix(
    rows: Sequence[FeatureRow], feature_names: tuple[str, ...] = FEATURE_NAMES
) -> FeatureMatrix:
    """Stack rows into one matrix, ordered by (participant, interval start).

    Each (participant, event, phase) triple may appear once; a duplicate
    means two sessions claimed the same interval. No rows is a valid,
    empty matrix.
    """
    seen: set[tuple[str, Event, Phase]] = set()
    for row in rows:
        key = (row.participant_id, row.event, row.phase)
        if key in seen:
            raise AssemblyError(
                f"duplicate row {row.participant_id} {row.event.value}/{row.phase.value}"
            )
        seen.add(key)
    ordered = sorted(rows, key=lambda r: (r.participant_id, r.start))
    if ordered:
        X = np.vstack([r.values for r in ordered]).astype(np.float64)
    else:
        X = np.empty((0, len(feature_names)))
    return FeatureMatrix(
        participant_ids=tuple(r.participant_id for r in ordered),
        events=tuple(r.event for r in ordered),
        phases=tuple(r.phase for r in ordered),
        X=X,
        feature_names=feature_names,
    )


def write_features_csv(matrix: FeatureMatrix, path: Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["participant_id", "event", "phase", *matrix.feature_names])
        for pid, event, phase, values in zip(
            matrix.participant_ids, matrix.events, matrix.phases, matrix.X
        ):
            writer.writerow([pid, event.value, phase.value, *[repr(float(v)) for v in values]])


def read_features_csv(data: bytes | str | Path) -> FeatureMatrix:
    if isinstance(data, Path):
        text = data.read_text(encoding="utf-8")
    elif isinstance(data, bytes):
        text = data.decode("utf-8")
    else:
        text = data
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("features file is empty") from None
    if header[:3] != ["participant_id", "event", "phase"]:
        raise SchemaError(f"unexpected features header {header[:3]!r}")
    names = tuple(header[3:])
    if not names:
        raise SchemaError("features file has no feature columns")
    event_tokens = {e.value: e for e in Event}
    phase_tokens = {p.value: p for p in Phase}
    pids: list[str] = []
    events: list[Event] = []
    phases: list[Phase] = []
    values: list[list[float]] = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 3 + len(names):
            raise ParseError(f"features line {lineno}: wrong field count")
        if row[1] not in event_tokens or row[2] not in phase_tokens:
            raise ParseError(f"features line {lineno}: unknown event/phase token")
        try:
            values.append([float(cell) for cell in row[3:]])
        except ValueError:
            raise ParseError(f"features line {lineno}: non-numeric feature") from None
        pids.append(row[0])
        events.append(event_tokens[row[1]])
        phases.append(phase_tokens[row[2]])
    if not pids:
        raise ParseError("features file has a header but no rows")
    return FeatureMatrix(
        participant_ids=tuple(pids),
        events=tuple(events),
        phases=tuple(phases),
        X=np.asarray(values, dtype=np.float64),
        feature_names=names,
    )


def _participant_groups(matrix: FeatureMatrix) -> dict[str, np.ndarray]:
    groups: dict[str, list[int]] = {}
    for i, pid in enumerate(matrix.participant_ids):
        groups.setdefault(pid, []).append(i)
    return {pid: np.asarray(idx) for pid, idx in groups.items()}


def condition_matrix(matrix: FeatureMatrix, center: bool, scale: bool) -> FeatureMatrix:
    """Per-participant conditioning: subtract the median, divide by the IQR.

    Both steps are computed within each participant's own rows, which
    removes stable individual baselines before rows are compared across
    people. A zero IQR divides by one instead (and is logged): a constant
    column carries no spread to normalize.
    """
    if not center and not scale:
        return matrix
    X = matrix.X.copy()
    for pid, idx in _participant_groups(matrix).items():
        block = X[idx]
        if center:
            block = block - np.median(block, axis=0, keepdims=True)
        if scale:
            q25, q75 = np.percentile(block, [25, 75], axis=0)
            iqr = q75 - q25
            flat = iqr == 0
            if flat.any():
                flagged = [matrix.feature_names[j] for j in np.flatnonzero(flat)]
                log.warning("%s: zero IQR for %s; dividing by 1", pid, ", ".join(flagged))
                iqr = np.where(flat, 1.0, iqr)
            block = block / iqr
        X[idx] = block
    label = {
        (True, False): "centered",
        (False, True): "scaled",
        (True, True): "centered_scaled",
    }[(center, scale)]
    return replace(matrix, X=X, conditioning=label)


@dataclass(frozen=True)
class CorrelationReport:
    matrix: np.ndarray
    constant: tuple[str, ...]


def correlation_matrix(matrix: FeatureMatrix) -> CorrelationReport:
    """Pearson correlations between feature columns.

    Constant columns have no defined correlation; they get zeros against
    everything, a unit diagonal, and are reported by name.
    """
    if len(matrix) < 2:
        raise InsufficientDataError(
            f"correlations need at least 2 rows, got {len(matrix)}"
        )
    X = matrix.X
    d = X.shape[1]
    stds = X.std(axis=0)
    out = np.zeros((d, d))
    live = np.flatnonzero(stds > 0)
    if len(live) >= 2:
        sub = np.corrcoef(X[:, live], rowvar=False)
        out[np.ix_(live, live)] = sub
    elif len(live) == 1:
        out[live[0], live[0]] = 1.0
    np.fill_diagonal(out, 1.0)
    constants = tuple(matrix.feature_names[j] for j in np.flatnonzero(stds == 0))
    return CorrelationReport(matrix=out, constant=constants)


class TaskKind(Enum):
    """The five binary questions asked of every interval row."""

    ALONE_SOCIAL = "alone-social"
    DURING_PREPOST = "during-prepost"
    PRE_POST = "pre-post"
    DYAD_GROUP = "dyad-group"
    IMPLICIT_EXPLICIT = "implicit-explicit"


_TASK_CLASSES: dict[TaskKind, tuple[str, str]] = {
    TaskKind.ALONE_SOCIAL: ("alone", "social"),
    TaskKind.DURING_PREPOST: ("pre_post", "during"),
    TaskKind.PRE_POST: ("pre", "post"),
    TaskKind.DYAD_GROUP: ("dyad", "group"),
    TaskKind.IMPLICIT_EXPLICIT: ("implicit", "explicit"),
}


def _task_label(task: TaskKind, event: Event, phase: Phase) -> int | None:
    """Class 0/1 for a row under a task, or None when the row is not used.

    Alone-vs-social compares concurrent-phase rows only; the phase
    contrasts use conversation events only; the dyad/group and
    implicit/explicit contrasts use concurrent conversation rows.
    """
    if task is TaskKind.ALONE_SOCIAL:
        if phase is not Phase.DURING:
            return None
        return int(event.is_social)
    if task is TaskKind.DURING_PREPOST:
        if not event.is_social:
            return None
        return int(phase is Phase.DURING)
    if task is TaskKind.PRE_POST:
        if not event.is_social or phase is Phase.DURING:
            return None
        return int(phase is Phase.POST)
    if task is TaskKind.DYAD_GROUP:
        if not event.is_social or phase is not Phase.DURING:
            return None
        return int(event.group == "group")
    if task is TaskKind.IMPLICIT_EXPLICIT:
        if event.threat is None or phase is not Phase.DURING:
            return None
        return int(event.threat == "explicit")
    raise SpecError(f"unknown task {task!r}")


@dataclass(frozen=True)
class TaskDataset:
    """One task's design matrix with participant grouping for fold splits."""

    task: TaskKind
    X: np.ndarray
    y: np.ndarray
    participants: tuple[str, ...]
    events: tuple[Event, ...]
    feature_names: tuple[str, ...]
    class_names: tuple[str, str]
    conditioning: str

    def __post_init__(self) -> None:
        if not (len(self.X) == len(self.y) == len(self.participants) == len(self.events)):
            raise SpecError("task arrays disagree in length")

    def __len__(self) -> int:
        return len(self.y)


def build_task(matrix: FeatureMatrix, task: TaskKind) -> TaskDataset:
    """Select and label the rows a task uses; both classes must be present."""
    labels: list[int] = []
    keep: list[int] = []
    for i, (event, phase) in enumerate(zip(matrix.events, matrix.phases)):
        label = _task_label(task, event, phase)
        if label is None:
            continue
        keep.append(i)
        labels.append(label)
    y = np.asarray(labels, dtype=np.int64)
    class_names = _TASK_CLASSES[task]
    for cls in (0, 1):
        if not np.any(y == cls):
            raise TaskConstructionError(
                f"{task.value}: class {class_names[cls]!r} has no rows"
            )
    idx = np.asarray(keep)
    return TaskDataset(
        task=task,
        X=matrix.X[idx],
        y=y,
        participants=tuple(matrix.participant_ids[i] for i in keep),
        events=tuple(matrix.events[i] for i in keep),
        feature_names=matrix.feature_names,
        class_names=class_names,
        conditioning=matrix.conditioning,
    )


def extract_nn_tables(
    all_slices: Sequence[IntervalSlice],
    methods: Sequence[str],
    windows: Sequence[float | None],
    cfg: PipelineConfig,
) -> dict[tuple[str, float | None], FeatureMatrix]:
    """Beat-interval feature matrices for every (cleaning, window) pair.

    Peak detection runs once per slice; each cell then re-cleans and
    re-windows the same raw interval series. Slices that fail in a cell
    are excluded from that cell only.
    """
    raw_series: list[tuple[IntervalSlice, hrv.NNSeries | None]] = []
    for interval in all_slices:
        try:
            raw_series.append((interval, _detect_nn_raw(interval, cfg)))
        except DataContentError as exc:
            log.warning(
                "%s %s/%s: no usable beat series (%s)",
                interval.participant_id,
                interval.event.value,
                interval.phase.value,
                exc,
            )
            raw_series.append((interval, None))

    tables: dict[tuple[str, float | None], FeatureMatrix] = {}
    for method_label in methods:
        method = hrv.method_from_config(cfg, method_label)
        for window in windows:
            rows: list[FeatureRow] = []
            for interval, raw in raw_series:
                if raw is None:
                    continue
                try:
                    nn = hrv.truncate_nn(raw, window)
                    nn = hrv.clean_nn(nn, method)
                    values = _nn_features(nn, cfg)
                except DataContentError:
                    continue
                rows.append(
                    FeatureRow(
                        participant_id=interval.participant_id,
                        event=interval.event,
                        phase=interval.phase,
                        start=interval.start,
                        values=values,
                    )
                )
            if rows:
                tables[(method_label, window)] = assemble_matrix(
                    rows, feature_names=NN_FEATURE_NAMES
                )
            else:
                log.warning("benchmark cell (%s, %s) has no rows", method_label, window)
    return tables
