"""Reading raw wristband exports and cutting them into event intervals.

A session directory holds four single-channel CSV exports plus a timeline:

    BVP.csv   pulse wave, 64 Hz
    ACC.csv   3-axis accelerometer, 32 Hz, integer counts (1/64 g per count)
    EDA.csv   skin conductance, 4 Hz, microsiemens
    TEMP.csv  skin temperature, 4 Hz, degrees Celsius
    timeline.csv  one row per (event, phase) interval

Sensor files share one grammar: line 1 is the start time (unix seconds),
line 2 is the sample rate in Hz, every following line is one sample. The
accelerometer repeats the start time and rate once per axis.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np
import pandas as pd

from .errors import CoverageError, ParseError, SchemaError, TimelineError

ACC_COUNTS_PER_G = 64.0

# Slack when mapping times to sample indices, in fractions of a sample.
# Guards against float error flipping a ceil() at exact sample boundaries.
_INDEX_EPS = 1e-6


class SensorKind(Enum):
    PPG = "ppg"
    ACC = "acc"
    EDA = "eda"
    TMP = "tmp"


EXPECTED_RATE_HZ: dict[SensorKind, float] = {
    SensorKind.PPG: 64.0,
    SensorKind.ACC: 32.0,
    SensorKind.EDA: 4.0,
    SensorKind.TMP: 4.0,
}

N_COMPONENTS: dict[SensorKind, int] = {
    SensorKind.PPG: 1,
    SensorKind.ACC: 3,
    SensorKind.EDA: 1,
    SensorKind.TMP: 1,
}

STREAM_FILENAMES: dict[SensorKind, str] = {
    SensorKind.PPG: "BVP.csv",
    SensorKind.ACC: "ACC.csv",
    SensorKind.EDA: "EDA.csv",
    SensorKind.TMP: "TEMP.csv",
}


class Event(Enum):
    """Social-context events; token values match the timeline grammar."""

    ALONE = "alone"
    DYAD_IMPLICIT = "dyad_implicit"
    DYAD_EXPLICIT = "dyad_explicit"
    GROUP_IMPLICIT = "group_implicit"
    GROUP_EXPLICIT = "group_explicit"

    @property
    def group(self) -> str:
        """Interaction size: alone, dyad, or group."""
        return self.value.split("_")[0]

    @property
    def threat(self) -> str | None:
        """Evaluative-threat level for conversations, None when alone."""
        if self is Event.ALONE:
            return None
        return self.value.split("_")[1]

    @property
    def is_social(self) -> bool:
        return self is not Event.ALONE


class Phase(Enum):
    PRE = "pre"
    DURING = "during"
    POST = "post"


@dataclass(frozen=True)
class SensorStream:
    """One channel of one session: start time, rate, and samples.

    ``samples`` has shape (n,) for single-component sensors and (n, 3)
    for the accelerometer, already converted to g.
    """

    kind: SensorKind
    start_time: float
    rate: float
    samples: np.ndarray

    def __post_init__(self) -> None:
        expected = EXPECTED_RATE_HZ[self.kind]
        if self.rate != expected:
            raise SchemaError(
                f"{self.kind.value} rate {self.rate} Hz, expected {expected} Hz"
            )
        width = N_COMPONENTS[self.kind]
        shape_ok = (
            self.samples.ndim == 1 if width == 1 else
            self.samples.ndim == 2 and self.samples.shape[1] == width
        )
        if not shape_ok:
            raise SchemaError(
                f"{self.kind.value} samples have shape {self.samples.shape}, "
                f"expected {width} component(s)"
            )
        if len(self.samples) == 0:
            raise SchemaError(f"{self.kind.value} stream has no samples")
        if not np.all(np.isfinite(self.samples)):
            raise SchemaError(f"{self.kind.value} stream contains non-finite samples")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def end_time(self) -> float:
        """Time just past the last sample; the stream covers [start, end)."""
        return self.start_time + len(self.samples) / self.rate

    def sample_times(self) -> np.ndarray:
        return self.start_time + np.arange(len(self.samples)) / self.rate


def _parse_header_line(line: str, width: int, what: str, lineno: int) -> float:
    parts = [p.strip() for p in line.split(",")]
    if len(parts) != width:
        raise SchemaError(
            f"line {lineno}: expected {width} {what} value(s), got {len(parts)}"
        )
    try:
        values = [float(p) for p in parts]
    except ValueError as exc:
        raise ParseError(f"line {lineno}: non-numeric {what}: {line!r}") from exc
    if any(v != values[0] for v in values[1:]):
        raise SchemaError(f"line {lineno}: {what} differs between components")
    return values[0]


def parse_stream(data: bytes | str, kind: SensorKind) -> SensorStream:
    """Parse one sensor CSV export into a :class:`SensorStream`."""
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    head, sep, body = text.partition("\n")
    if not sep:
        raise ParseError("stream file has no sample rate line")
    rate_line, sep, body = body.partition("\n")
    width = N_COMPONENTS[kind]
    start_time = _parse_header_line(head, width, "start time", 1)
    rate = _parse_header_line(rate_line, width, "sample rate", 2)
    if not body.strip():
        raise SchemaError(f"{kind.value} stream has no samples")
    try:
        frame = pd.read_csv(
            io.StringIO(body),
            header=None,
            dtype=np.float64,
            skip_blank_lines=True,
            # the default parser drops the last ulp on some values, which
            # would break write/parse round-trips
            float_precision="round_trip",
        )
    except (ValueError, pd.errors.ParserError):
        _raise_locating_bad_line(body)
        raise  # unreachable; keeps type-checkers calm
    if frame.shape[1] != width:
        raise SchemaError(
            f"{kind.value} rows have {frame.shape[1]} column(s), expected {width}"
        )
    values = frame.to_numpy()
    samples = values[:, 0] if width == 1 else values
    if kind is SensorKind.ACC:
        samples = samples / ACC_COUNTS_PER_G
    return SensorStream(kind=kind, start_time=start_time, rate=rate, samples=samples)


def _raise_locating_bad_line(body: str) -> None:
    """Re-scan a rejected body to report the first bad line (slow path)."""
    for offset, line in enumerate(body.splitlines()):
        if not line.strip():
            continue
        for cell in line.split(","):
            try:
                float(cell)
            except ValueError:
                raise ParseError(
                    f"line {offset + 3}: non-numeric sample {cell.strip()!r}"
                ) from None
    raise ParseError("stream body could not be parsed as numbers")


def write_stream(stream: SensorStream, path: Path) -> None:
    """Write a stream back out in the export grammar (accelerometer as counts)."""
    width = N_COMPONENTS[stream.kind]
    head = ",".join([repr(float(stream.start_time))] * width)
    rate = ",".join([repr(float(stream.rate))] * width)
    if stream.kind is SensorKind.ACC:
        counts = np.rint(stream.samples * ACC_COUNTS_PER_G).astype(np.int64)
        body = pd.DataFrame(counts).to_csv(header=False, index=False)
    else:
        cells = [repr(float(v)) for v in stream.samples]
        body = "\n".join(cells) + "\n"
    path.write_text(f"{head}\n{rate}\n{body}", encoding="utf-8")


@dataclass(frozen=True)
class SessionEvent:
    """One timeline row: an (event, phase) interval in unix seconds."""

    event: Event
    phase: Phase
    start: float
    end: float

    def __post_init__(self) -> None:
        if not self.end > self.start:
            raise TimelineError(
                f"{self.event.value}/{self.phase.value}: end {self.end} "
                f"not after start {self.start}"
            )

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class SessionTimeline:
    """All intervals of one participant's session, validated as a whole."""

    participant_id: str
    entries: tuple[SessionEvent, ...]

    def __post_init__(self) -> None:
        if not self.entries:
            raise TimelineError("timeline has no entries")
        seen: set[tuple[Event, Phase]] = set()
        for entry in self.entries:
            key = (entry.event, entry.phase)
            if key in seen:
                raise TimelineError(
                    f"duplicate interval {entry.event.value}/{entry.phase.value}"
                )
            seen.add(key)
        ordered = sorted(self.entries, key=lambda e: e.start)
        for prev, cur in zip(ordered, ordered[1:]):
            if cur.start < prev.end:
                raise TimelineError(
                    f"{cur.event.value}/{cur.phase.value} overlaps "
                    f"{prev.event.value}/{prev.phase.value}"
                )
        alone_end = max(
            (e.end for e in self.entries if e.event is Event.ALONE), default=None
        )
        social_start = min(
            (e.start for e in self.entries if e.event.is_social), default=None
        )
        if alone_end is None:
            raise TimelineError("timeline has no alone intervals")
        if social_start is not None and social_start < alone_end:
            raise TimelineError("social intervals must come after the alone event")

    def __iter__(self) -> Iterator[SessionEvent]:
        return iter(sorted(self.entries, key=lambda e: e.start))

    def __len__(self) -> int:
        return len(self.entries)


TIMELINE_HEADER = ["participant_id", "event", "phase", "start_unix", "end_unix"]


def parse_timeline(data: bytes | str) -> SessionTimeline:
    """Parse a timeline CSV into a validated :class:`SessionTimeline`."""
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("timeline file is empty") from None
    if [h.strip() for h in header] != TIMELINE_HEADER:
        raise SchemaError(
            f"timeline header {header!r}, expected {TIMELINE_HEADER!r}"
        )
    event_tokens = {e.value: e for e in Event}
    phase_tokens = {p.value: p for p in Phase}
    participant: str | None = None
    entries: list[SessionEvent] = []
    for lineno, row in enumerate(reader, start=2):
        if not row or not any(cell.strip() for cell in row):
            continue
        if len(row) != 5:
            raise ParseError(f"timeline line {lineno}: expected 5 fields, got {len(row)}")
        pid, event_token, phase_token, start_text, end_text = (c.strip() for c in row)
        if participant is None:
            participant = pid
        elif pid != participant:
            raise SchemaError(
                f"timeline line {lineno}: participant {pid!r} differs from {participant!r}"
            )
        if event_token not in event_tokens:
            raise ParseError(f"timeline line {lineno}: unknown event {event_token!r}")
        if phase_token not in phase_tokens:
            raise ParseError(f"timeline line {lineno}: unknown phase {phase_token!r}")
        try:
            start, end = float(start_text), float(end_text)
        except ValueError:
            raise ParseError(f"timeline line {lineno}: non-numeric bounds") from None
        entries.append(
            SessionEvent(
                event=event_tokens[event_token],
                phase=phase_tokens[phase_token],
                start=start,
                end=end,
            )
        )
    if participant is None:
        raise ParseError("timeline has a header but no rows")
    return SessionTimeline(participant_id=participant, entries=tuple(entries))


def write_timeline(timeline: SessionTimeline, path: Path) -> None:
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(TIMELINE_HEADER)
        for entry in timeline:
            writer.writerow(
                [
                    timeline.participant_id,
                    entry.event.value,
                    entry.phase.value,
                    repr(float(entry.start)),
                    repr(float(entry.end)),
                ]
            )


@dataclass(frozen=True)
class IntervalSlice:
    """One timeline interval with all four channels cut to it."""

    participant_id: str
    event: Event
    phase: Phase
    start: float
    end: float
    channels: Mapping[SensorKind, SensorStream] = field(hash=False)

    @property
    def duration(self) -> float:
        return self.end - self.start


def _slice_indices(stream: SensorStream, start: float, end: float) -> tuple[int, int]:
    # Half-open [start, end): a sample at exactly `end` belongs to the next
    # interval. ceil() with a small backward slack finds the first sample
    # at-or-after each boundary without float-boundary flapping.
    i0 = math.ceil((start - stream.start_time) * stream.rate - _INDEX_EPS)
    i1 = math.ceil((end - stream.start_time) * stream.rate - _INDEX_EPS)
    return i0, i1


def slice_stream(stream: SensorStream, start: float, end: float) -> SensorStream:
    """Cut one stream to [start, end); the whole span must be covered."""
    i0, i1 = _slice_indices(stream, start, end)
    if i0 < 0 or i1 > len(stream.samples):
        raise CoverageError(
            f"{stream.kind.value} covers [{stream.start_time}, {stream.end_time}) "
            f"but [{start}, {end}) was requested"
        )
    if i1 <= i0:
        raise CoverageError(
            f"[{start}, {end}) contains no {stream.kind.value} samples"
        )
    return SensorStream(
        kind=stream.kind,
        start_time=stream.start_time + i0 / stream.rate,
        rate=stream.rate,
        samples=stream.samples[i0:i1],
    )


def slice_intervals(
    streams: Mapping[SensorKind, SensorStream], timeline: SessionTimeline
) -> list[IntervalSlice]:
    """Cut every channel to every timeline interval, in session order."""
    missing = [k.value for k in SensorKind if k not in streams]
    if missing:
        raise SchemaError(f"session is missing channels: {', '.join(missing)}")
    slices = []
    for entry in timeline:
        channels = {
            kind: slice_stream(streams[kind], entry.start, entry.end)
            for kind in SensorKind
        }
        slices.append(
            IntervalSlice(
                participant_id=timeline.participant_id,
                event=entry.event,
                phase=entry.phase,
                start=entry.start,
                end=entry.end,
                channels=channels,
            )
        )
    return slices


@dataclass(frozen=True)
class Session:
    """A fully loaded session directory."""

    timeline: SessionTimeline
    streams: Mapping[SensorKind, SensorStream]

    @property
    def participant_id(self) -> str:
        return self.timeline.participant_id


def load_session(session_dir: Path) -> Session:
    """Load the four channel files plus timeline.csv from one directory."""
    session_dir = Path(session_dir)
    timeline_path = session_dir / "timeline.csv"
    if not timeline_path.is_file():
        raise ParseError(f"{session_dir}: no timeline.csv")
    timeline = parse_timeline(timeline_path.read_bytes())
    streams: dict[SensorKind, SensorStream] = {}
    for kind, filename in STREAM_FILENAMES.items():
        path = session_dir / filename
        if not path.is_file():
            raise ParseError(f"{session_dir}: missing {filename}")
        try:
            streams[kind] = parse_stream(path.read_bytes(), kind)
        except (ParseError, SchemaError) as exc:
            raise type(exc)(f"{path.name}: {exc}") from exc
    return Session(timeline=timeline, streams=streams)


def iter_study(study_dir: Path) -> Iterator[Path]:
    """Yield session directories (those holding a timeline.csv), sorted."""
    study_dir = Path(study_dir)
    for child in sorted(study_dir.iterdir()):
        if child.is_dir() and (child / "timeline.csv").is_file():
            yield child
