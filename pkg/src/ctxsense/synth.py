"""Seeded generator of plausible wristband sessions with known ground truth.

Every stochastic choice draws from a generator derived from (seed,
participant index, purpose), so any single session can be regenerated
independently of the rest of the study and byte-identical re-runs are
guaranteed.

Signal construction:

    pulse wave   beats placed by integrating a context-dependent
                 inter-beat interval (rate + 0.1 Hz and 0.3 Hz
                 modulation + white jitter); each beat renders as a
                 systolic Gaussian plus a smaller dicrotic bump 250 ms
                 later; optional saturation artifacts
    conductance  piecewise tonic plateau per (context, phase) plus
                 discrete responses with a two-exponential shape
    acceleration unit gravity plus per-axis white noise whose spread
                 depends on context; emitted as integer counts
    temperature  slow linear drift around a per-participant level,
                 quantized to the sensor's 0.02 degree resolution

The ground-truth manifest records, per interval, the planted beat times,
interval statistics, response times, and spread parameters that the
extraction pipeline is later expected to recover.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .config import rng_for
from .errors import ConfigError
from .ingest import (
    Event,
    Phase,
    SensorKind,
    SensorStream,
    SessionEvent,
    SessionTimeline,
    write_stream,
    write_timeline,
)

PHASE_ORDER = (Phase.PRE, Phase.DURING, Phase.POST)
DURING_DURATION_S = {"alone": 120.0, "dyad": 240.0, "group": 360.0}
PRE_POST_DURATION_S = 120.0

SYSTOLIC_SIGMA_S = 0.060
DICROTIC_DELAY_S = 0.250
DICROTIC_RATIO = 0.35
SCR_TAU_RISE_S = 0.75
SCR_TAU_DECAY_S = 2.0
TMP_RESOLUTION_C = 0.02
SATURATION_LEVEL = 4.0


@dataclass(frozen=True)
class PhaseProfile:
    """Target physiology for one (context group, phase) cell."""

    hr_bpm: float
    nn_jitter_s: float = 0.02
    lf_amp_s: float = 0.020
    hf_amp_s: float = 0.012
    scr_per_min: float = 3.0
    # kept small: a large response bleeds into the tonic estimate and its
    # phasic undershoot can rebound past the detector's rise threshold
    scr_amp_us: float = 0.08
    scl_us: float = 2.0
    acc_sd_g: float = 0.03
    tmp_c: float = 33.0


def default_profiles() -> dict[tuple[str, str], PhaseProfile]:
    base = PhaseProfile(hr_bpm=70.0)
    return {
        ("alone", "pre"): base,
        ("alone", "during"): dataclasses.replace(base, hr_bpm=72.0, scr_per_min=4.0, acc_sd_g=0.035),
        ("alone", "post"): dataclasses.replace(base, hr_bpm=70.0),
        ("dyad", "pre"): dataclasses.replace(base, hr_bpm=74.0, scr_per_min=4.0),
        ("dyad", "during"): dataclasses.replace(
            base, hr_bpm=82.0, nn_jitter_s=0.03, scr_per_min=8.0, scl_us=2.8, acc_sd_g=0.06
        ),
        ("dyad", "post"): dataclasses.replace(base, hr_bpm=76.0, scr_per_min=5.0),
        ("group", "pre"): dataclasses.replace(base, hr_bpm=75.0, scr_per_min=4.5),
        ("group", "during"): dataclasses.replace(
            base, hr_bpm=86.0, nn_jitter_s=0.03, scr_per_min=10.0, scl_us=3.2, acc_sd_g=0.07
        ),
        ("group", "post"): dataclasses.replace(base, hr_bpm=77.0, scr_per_min=5.0),
    }


@dataclass(frozen=True)
class ArchetypeSpec:
    """Planted response styles: participants cycle through these, and the
    style overrides movement spread and response rate during conversations."""

    acc_sd_values: tuple[float, ...] = ()
    scr_per_min_values: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if len(self.acc_sd_values) != len(self.scr_per_min_values):
            raise ConfigError("archetype value lists must have equal length")

    @property
    def count(self) -> int:
        return len(self.acc_sd_values)


@dataclass(frozen=True)
class SynthConfig:
    participants: int = 4
    seed: int = 0
    session_start: float = 1_600_000_000.0
    gap_s: float = 30.0
    margin_s: float = 8.0
    profiles: Mapping[tuple[str, str], PhaseProfile] = field(default_factory=default_profiles)
    # participants listed here run a reduced session (missing conversations)
    missing_events: Mapping[int, tuple[Event, ...]] = field(default_factory=dict)
    # individual baselines
    hr_offset_sd_bpm: float = 3.0
    scl_offset_sd_us: float = 0.4
    tmp_offset_sd_c: float = 0.4
    explicit_scl_shift_us: float = 0.5
    archetypes: ArchetypeSpec = field(default_factory=ArchetypeSpec)
    artifact_rate_per_min: float = 0.0
    artifact_duration_s: float = 0.5
    artifact_scope: str = "all"  # all | social
    ppg_noise_sd: float = 0.05

    def __post_init__(self) -> None:
        if self.participants < 1:
            raise ConfigError("participants must be >= 1")
        if self.artifact_scope not in ("all", "social"):
            raise ConfigError(f"unknown artifact_scope {self.artifact_scope!r}")
        for index in self.missing_events:
            if not 0 <= index < self.participants:
                raise ConfigError(f"missing_events index {index} out of range")
        if Event.ALONE in {e for evs in self.missing_events.values() for e in evs}:
            raise ConfigError("the alone event cannot be dropped")

    def to_dict(self) -> dict[str, object]:
        return {
            "participants": self.participants,
            "seed": self.seed,
            "session_start": self.session_start,
            "gap_s": self.gap_s,
            "profiles": {
                f"{group}/{phase}": dataclasses.asdict(profile)
                for (group, phase), profile in sorted(self.profiles.items())
            },
            "missing_events": {
                str(idx): [e.value for e in events]
                for idx, events in sorted(self.missing_events.items())
            },
            "hr_offset_sd_bpm": self.hr_offset_sd_bpm,
            "scl_offset_sd_us": self.scl_offset_sd_us,
            "tmp_offset_sd_c": self.tmp_offset_sd_c,
            "explicit_scl_shift_us": self.explicit_scl_shift_us,
            "archetypes": dataclasses.asdict(self.archetypes),
            "artifact_rate_per_min": self.artifact_rate_per_min,
            "artifact_duration_s": self.artifact_duration_s,
            "artifact_scope": self.artifact_scope,
            "ppg_noise_sd": self.ppg_noise_sd,
        }


def paper594_config(seed: int = 0, artifact_rate_per_min: float = 0.0) -> SynthConfig:
    """The 594-interval reference layout: 46 participants, 16 of whom miss
    one dyad and one group conversation."""
    missing: dict[int, tuple[Event, ...]] = {}
    dyads = (Event.DYAD_IMPLICIT, Event.DYAD_EXPLICIT)
    groups = (Event.GROUP_IMPLICIT, Event.GROUP_EXPLICIT)
    for slot, index in enumerate(range(30, 46)):
        missing[index] = (dyads[slot % 2], groups[(slot // 2) % 2])
    return SynthConfig(
        participants=46,
        seed=seed,
        missing_events=missing,
        artifact_rate_per_min=artifact_rate_per_min,
    )


def participant_id(index: int) -> str:
    return f"P{index + 1:03d}"


def _plan_events(config: SynthConfig, index: int) -> list[Event]:
    rng = rng_for(config.seed, index, "plan")
    conversations = [e for e in Event if e.is_social]
    order = [conversations[i] for i in rng.permutation(len(conversations))]
    skipped = set(config.missing_events.get(index, ()))
    return [Event.ALONE] + [e for e in order if e not in skipped]


def _build_timeline(config: SynthConfig, index: int) -> SessionTimeline:
    t = config.session_start
    entries: list[SessionEvent] = []
    for event in _plan_events(config, index):
        for phase in PHASE_ORDER:
            duration = (
                DURING_DURATION_S[event.group]
                if phase is Phase.DURING
                else PRE_POST_DURATION_S
            )
            entries.append(SessionEvent(event=event, phase=phase, start=t, end=t + duration))
            t += duration
        t += config.gap_s
    return SessionTimeline(participant_id=participant_id(index), entries=tuple(entries))


@dataclass(frozen=True)
class _Offsets:
    hr_bpm: float
    scl_us: float
    tmp_c: float


def _draw_offsets(config: SynthConfig, index: int) -> _Offsets:
    rng = rng_for(config.seed, index, "offsets")
    return _Offsets(
        hr_bpm=float(rng.normal(0.0, config.hr_offset_sd_bpm)),
        scl_us=float(rng.normal(0.0, config.scl_offset_sd_us)),
        tmp_c=float(rng.normal(0.0, config.tmp_offset_sd_c)),
    )


class _ContextMap:
    """Piecewise lookup of the active profile (with overrides) at time t."""

    def __init__(
        self,
        config: SynthConfig,
        timeline: SessionTimeline,
        archetype: int | None,
    ) -> None:
        self._baseline = config.profiles[("alone", "pre")]
        self._spans: list[tuple[float, float, PhaseProfile, Event, Phase]] = []
        for entry in timeline:
            profile = config.profiles[(entry.event.group, entry.phase.value)]
            if entry.event.threat == "explicit":
                profile = dataclasses.replace(
                    profile, scl_us=profile.scl_us + config.explicit_scl_shift_us
                )
            if (
                archetype is not None
                and entry.event.is_social
                and entry.phase is Phase.DURING
            ):
                spec = config.archetypes
                profile = dataclasses.replace(
                    profile,
                    acc_sd_g=spec.acc_sd_values[archetype],
                    scr_per_min=spec.scr_per_min_values[archetype],
                )
            self._spans.append((entry.start, entry.end, profile, entry.event, entry.phase))

    def at(self, t: float) -> PhaseProfile:
        for start, end, profile, _, _ in self._spans:
            if start <= t < end:
                return profile
        return self._baseline

    @property
    def spans(self) -> list[tuple[float, float, PhaseProfile, Event, Phase]]:
        return self._spans


def _generate_beats(
    config: SynthConfig,
    index: int,
    context: _ContextMap,
    t_start: float,
    t_end: float,
    hr_offset: float,
) -> np.ndarray:
    rng = rng_for(config.seed, index, "beats")
    phase_lf = rng.uniform(0, 2 * math.pi)
    phase_hf = rng.uniform(0, 2 * math.pi)
    beats = []
    t = t_start + rng.uniform(0.1, 0.9)
    while t < t_end:
        profile = context.at(t)
        nn = 60.0 / max(profile.hr_bpm + hr_offset, 30.0)
        nn += profile.lf_amp_s * math.sin(2 * math.pi * 0.1 * (t - t_start) + phase_lf)
        nn += profile.hf_amp_s * math.sin(2 * math.pi * 0.3 * (t - t_start) + phase_hf)
        nn += profile.nn_jitter_s * rng.normal()
        nn = max(nn, 0.35)
        beats.append(t)
        t += nn
    return np.asarray(beats)


def render_pulse_wave(
    beat_times: np.ndarray, start_time: float, rate: float, n_samples: int
) -> np.ndarray:
    """Sum a systolic and dicrotic Gaussian per beat onto a sample grid."""
    x = np.zeros(n_samples)
    window = int(round((DICROTIC_DELAY_S + 5 * SYSTOLIC_SIGMA_S) * rate))
    lead = int(round(4 * SYSTOLIC_SIGMA_S * rate))
    for beat in np.asarray(beat_times, dtype=np.float64):
        center = (beat - start_time) * rate
        first = max(0, int(center) - lead)
        last = min(n_samples, int(center) + window + 1)
        if last <= first:
            continue
        t_rel = (np.arange(first, last) - center) / rate
        x[first:last] += np.exp(-0.5 * (t_rel / SYSTOLIC_SIGMA_S) ** 2)
        x[first:last] += DICROTIC_RATIO * np.exp(
            -0.5 * ((t_rel - DICROTIC_DELAY_S) / SYSTOLIC_SIGMA_S) ** 2
        )
    return x


def scr_kernel(rate: float, duration_s: float = 20.0) -> np.ndarray:
    """Two-exponential response shape, normalized to unit peak."""
    t = np.arange(0, duration_s, 1.0 / rate)
    shape = np.exp(-t / SCR_TAU_DECAY_S) - np.exp(-t / SCR_TAU_RISE_S)
    return shape / shape.max()


def scr_peak_delay_s() -> float:
    """Time from response onset to its peak, from the kernel parameters."""
    ratio = SCR_TAU_DECAY_S / SCR_TAU_RISE_S
    return float(
        math.log(ratio) * SCR_TAU_RISE_S * SCR_TAU_DECAY_S / (SCR_TAU_DECAY_S - SCR_TAU_RISE_S)
    )


def _poisson_times(
    rng: np.random.Generator, start: float, end: float, per_min: float, min_gap_s: float = 1.2
) -> list[float]:
    """Poisson arrivals thinned to a minimum gap (keeps responses resolvable)."""
    if per_min <= 0 or end <= start:
        return []
    count = rng.poisson(per_min * (end - start) / 60.0)
    times = np.sort(rng.uniform(start, end, size=count))
    kept: list[float] = []
    for t in times:
        if not kept or t - kept[-1] >= min_gap_s:
            kept.append(float(t))
    return kept


def _jittered_times(
    rng: np.random.Generator, start: float, end: float, per_min: float, jitter: float = 0.35
) -> list[float]:
    """Near-regular arrivals: a grid at the target rate with bounded jitter.

    Bounded gaps matter: clustered arrivals carve deep valleys into the
    phasic band after the tonic split, and a long quiet stretch then lets
    the rebound trip the response detector.
    """
    if per_min <= 0 or end <= start:
        return []
    mean_gap = 60.0 / per_min
    times: list[float] = []
    t = start + mean_gap * rng.uniform(0.2, 1.0)
    while t < end:
        times.append(float(t))
        t += max(1.5, mean_gap * rng.uniform(1.0 - jitter, 1.0 + jitter))
    return times


@dataclass(frozen=True)
class SessionTruth:
    participant: str
    archetype: int | None
    offsets: _Offsets
    event_order: tuple[str, ...]
    intervals: tuple[dict, ...]

    def to_dict(self) -> dict[str, object]:
        return {
            "participant": self.participant,
            "archetype": self.archetype,
            "offsets": dataclasses.asdict(self.offsets),
            "event_order": list(self.event_order),
            "intervals": list(self.intervals),
        }


@dataclass(frozen=True)
class SynthSession:
    timeline: SessionTimeline
    streams: dict[SensorKind, SensorStream]
    truth: SessionTruth


def generate_session(config: SynthConfig, index: int) -> SynthSession:
    """Generate one participant's four streams, timeline, and ground truth."""
    timeline = _build_timeline(config, index)
    archetype = index % config.archetypes.count if config.archetypes.count else None
    offsets = _draw_offsets(config, index)
    context = _ContextMap(config, timeline, archetype)

    entries = list(timeline)
    t0 = config.session_start - config.margin_s
    t_end = entries[-1].end + config.margin_s

    rates = {SensorKind.PPG: 64.0, SensorKind.ACC: 32.0, SensorKind.EDA: 4.0, SensorKind.TMP: 4.0}
    counts = {kind: int(round((t_end - t0) * rate)) for kind, rate in rates.items()}

    # --- pulse wave ---
    beats = _generate_beats(config, index, context, t0, t_end, offsets.hr_bpm)
    ppg = render_pulse_wave(beats, t0, rates[SensorKind.PPG], counts[SensorKind.PPG])
    noise_rng = rng_for(config.seed, index, "ppg-noise")
    ppg += noise_rng.normal(0.0, config.ppg_noise_sd, size=len(ppg))
    ppg += 0.25 * np.sin(
        2 * math.pi * 0.08 * (np.arange(len(ppg)) / rates[SensorKind.PPG])
        + noise_rng.uniform(0, 2 * math.pi)
    )
    artifact_windows: list[tuple[float, float]] = []
    if config.artifact_rate_per_min > 0:
        art_rng = rng_for(config.seed, index, "artifacts")
        for entry in entries:
            if config.artifact_scope == "social" and not entry.event.is_social:
                continue
            for onset in _poisson_times(
                art_rng, entry.start, entry.end - config.artifact_duration_s,
                config.artifact_rate_per_min, min_gap_s=2.0,
            ):
                artifact_windows.append((onset, onset + config.artifact_duration_s))
        for a_start, a_end in artifact_windows:
            i0 = int((a_start - t0) * rates[SensorKind.PPG])
            i1 = int((a_end - t0) * rates[SensorKind.PPG])
            ppg[i0:i1] = SATURATION_LEVEL

    # --- conductance ---
    eda_rate = rates[SensorKind.EDA]
    eda_t = t0 + np.arange(counts[SensorKind.EDA]) / eda_rate
    # tonic plateaus switch exactly at interval boundaries, which sit on
    # the 4 Hz sample grid; each sliced interval then sees a constant
    # level and the response detector never meets a transition edge
    tonic = np.full(len(eda_t), config.profiles[("alone", "pre")].scl_us + offsets.scl_us)
    for start, end, profile, _, _ in context.spans:
        mask = (eda_t >= start - 1e-9) & (eda_t < end - 1e-9)
        tonic[mask] = profile.scl_us + offsets.scl_us
    scr_rng = rng_for(config.seed, index, "scr")
    kernel = scr_kernel(eda_rate)
    peak_delay = scr_peak_delay_s()
    eda = tonic.copy()
    scr_peak_times: list[float] = []
    scr_peak_amps: list[float] = []
    spans = [(s, e, p) for s, e, p, _, _ in context.spans]
    spans.append((t0, config.session_start, config.profiles[("alone", "pre")]))
    for start, end, profile in spans:
        # draw peak times with guard bands so every response peaks well
        # inside its interval; sampling and the tonic split shift peaks
        # by under a sample, so attribution to intervals stays exact
        for peak in _jittered_times(scr_rng, start + 2.0, end - 1.0, profile.scr_per_min):
            amp = profile.scr_amp_us * scr_rng.uniform(0.8, 1.2)
            i0 = int(round((peak - peak_delay - t0) * eda_rate))
            if i0 >= len(eda):
                continue
            seg = min(len(kernel), len(eda) - i0)
            eda[i0: i0 + seg] += amp * kernel[:seg]
            scr_peak_times.append(peak)
            scr_peak_amps.append(amp)
    eda += scr_rng.normal(0.0, 0.0008, size=len(eda))
    eda = np.maximum(eda, 0.01)

    # --- acceleration ---
    acc_rng = rng_for(config.seed, index, "acc")
    direction = acc_rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    acc_t = t0 + np.arange(counts[SensorKind.ACC]) / rates[SensorKind.ACC]
    sigma = np.full(len(acc_t), config.profiles[("alone", "pre")].acc_sd_g)
    for start, end, profile, _, _ in context.spans:
        mask = (acc_t >= start) & (acc_t < end)
        sigma[mask] = profile.acc_sd_g
    acc = direction[None, :] + acc_rng.normal(size=(len(acc_t), 3)) * sigma[:, None]
    acc = np.rint(acc * 64.0) / 64.0  # what integer counts will preserve

    # --- temperature ---
    tmp_rng = rng_for(config.seed, index, "tmp")
    slope = tmp_rng.uniform(-0.15, 0.15) / 3600.0
    tmp_t = np.arange(counts[SensorKind.TMP]) / rates[SensorKind.TMP]
    tmp = (
        33.0
        + offsets.tmp_c
        + slope * tmp_t
        + tmp_rng.normal(0.0, 0.01, size=len(tmp_t))
    )
    tmp = np.rint(tmp / TMP_RESOLUTION_C) * TMP_RESOLUTION_C

    streams = {
        SensorKind.PPG: SensorStream(SensorKind.PPG, t0, 64.0, ppg),
        SensorKind.ACC: SensorStream(SensorKind.ACC, t0, 32.0, acc),
        SensorKind.EDA: SensorStream(SensorKind.EDA, t0, 4.0, eda),
        SensorKind.TMP: SensorStream(SensorKind.TMP, t0, 4.0, tmp),
    }

    interval_truth = []
    scr_arr = np.asarray(scr_peak_times)
    amp_arr = np.asarray(scr_peak_amps)
    for entry in entries:
        inside = beats[(beats >= entry.start) & (beats < entry.end)]
        nn = np.diff(inside)
        tmp_i0 = int(math.ceil((entry.start - t0) * 4.0 - 1e-6))
        tmp_i1 = int(math.ceil((entry.end - t0) * 4.0 - 1e-6))
        profile = context.at(entry.start + 1.0)
        here = (
            (scr_arr >= entry.start) & (scr_arr < entry.end)
            if len(scr_arr)
            else np.zeros(0, dtype=bool)
        )
        n_scr = int(here.sum())
        interval_truth.append(
            {
                "event": entry.event.value,
                "phase": entry.phase.value,
                "start": entry.start,
                "end": entry.end,
                "beats": [round(b - entry.start, 6) for b in inside],
                "nn_median": round(float(np.median(nn)), 6) if len(nn) else None,
                "nn_mean": round(float(nn.mean()), 6) if len(nn) else None,
                "n_beats": int(len(inside)),
                "scr_count": n_scr,
                "scr_peaksn": n_scr / entry.duration,
                "scr_times": [round(t - entry.start, 6) for t in scr_arr[here]],
                "scr_amps": [round(a, 6) for a in amp_arr[here]],
                "scl_us": profile.scl_us + offsets.scl_us,
                "acc_sd_g": profile.acc_sd_g,
                "st_mean_c": float(tmp[tmp_i0:tmp_i1].mean()),
                "n_artifacts": sum(
                    1 for a, b in artifact_windows if entry.start <= a < entry.end
                ),
            }
        )

    truth = SessionTruth(
        participant=timeline.participant_id,
        archetype=archetype,
        offsets=offsets,
        event_order=tuple(e.value for e in _plan_events(config, index)),
        intervals=tuple(interval_truth),
    )
    return SynthSession(timeline=timeline, streams=streams, truth=truth)


def write_session(session: SynthSession, study_dir: Path) -> Path:
    from .ingest import STREAM_FILENAMES

    session_dir = Path(study_dir) / session.timeline.participant_id
    session_dir.mkdir(parents=True, exist_ok=True)
    write_timeline(session.timeline, session_dir / "timeline.csv")
    for kind, stream in session.streams.items():
        write_stream(stream, session_dir / STREAM_FILENAMES[kind])
    return session_dir


def generate_study(config: SynthConfig, out_dir: Path) -> dict[str, object]:
    """Write every session plus ground_truth.json; returns the manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest: dict[str, object] = {
        "config": config.to_dict(),
        "participants": {},
        "n_intervals": 0,
    }
    total = 0
    for index in range(config.participants):
        session = generate_session(config, index)
        write_session(session, out_dir)
        manifest["participants"][session.timeline.participant_id] = session.truth.to_dict()
        total += len(session.truth.intervals)
    manifest["n_intervals"] = total
    (out_dir / "ground_truth.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=1), encoding="utf-8"
    )
    return manifest


def load_manifest(study_dir: Path) -> dict[str, object]:
    return json.loads((Path(study_dir) / "ground_truth.json").read_text(encoding="utf-8"))
