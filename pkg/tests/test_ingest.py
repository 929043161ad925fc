"""Export grammar, timeline validation, and interval slicing."""

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from ctxsense.errors import (
    CoverageError,
    DataFormatError,
    ParseError,
    SchemaError,
    TimelineError,
)
from ctxsense.ingest import (
    STREAM_FILENAMES,
    Event,
    Phase,
    SensorKind,
    SensorStream,
    SessionEvent,
    SessionTimeline,
    iter_study,
    load_session,
    parse_stream,
    parse_timeline,
    slice_intervals,
    slice_stream,
    write_stream,
    write_timeline,
)


def make_stream(kind=SensorKind.EDA, start=0.0, rate=4.0, n=16, width=1):
    shape = (n,) if width == 1 else (n, width)
    return SensorStream(
        kind=kind, start_time=start, rate=rate, samples=np.arange(np.prod(shape), dtype=float).reshape(shape)
    )


# ---------------------------------------------------------------- parsing


def test_parse_eda_two_samples():
    stream = parse_stream(b"1600000000.0\n4.0\n0.1\n0.2\n", SensorKind.EDA)
    assert stream.start_time == 1600000000.0
    assert stream.rate == 4.0
    assert np.array_equal(stream.samples, [0.1, 0.2])


def test_parse_acc_counts_to_g():
    text = "1600000000.0,1600000000.0,1600000000.0\n32.0,32.0,32.0\n64,0,0\n"
    stream = parse_stream(text, SensorKind.ACC)
    assert stream.samples.shape == (1, 3)
    assert np.array_equal(stream.samples, [[1.0, 0.0, 0.0]])


def test_parse_ppg_wrong_rate_is_schema_error():
    with pytest.raises(SchemaError):
        parse_stream(b"1600000000.0\n32.0\n0.5\n", SensorKind.PPG)


def test_parse_reports_first_bad_sample_line():
    with pytest.raises(ParseError, match=r"line 4: non-numeric sample 'x'"):
        parse_stream(b"0.0\n4.0\n0.1\nx\n0.3\n", SensorKind.EDA)


def test_parse_acc_header_must_agree_across_axes():
    text = "1.0,2.0,1.0\n32.0,32.0,32.0\n0,0,0\n"
    with pytest.raises(SchemaError, match="differs between components"):
        parse_stream(text, SensorKind.ACC)


def test_parse_missing_rate_line():
    with pytest.raises(ParseError):
        parse_stream(b"1600000000.0", SensorKind.EDA)


def test_parse_empty_body():
    with pytest.raises(SchemaError, match="no samples"):
        parse_stream(b"1600000000.0\n4.0\n", SensorKind.EDA)


def test_parse_wrong_column_count():
    with pytest.raises(SchemaError):
        parse_stream(b"0.0\n4.0\n0.1,0.2\n", SensorKind.EDA)


def test_non_finite_samples_rejected():
    with pytest.raises(SchemaError):
        SensorStream(
            kind=SensorKind.EDA, start_time=0.0, rate=4.0, samples=np.array([1.0, np.nan])
        )


def test_stream_round_trip_full_precision(tmp_path):
    samples = np.array([0.1, 1.0 / 3.0, 2.7182818284590455, 1e-9])
    stream = SensorStream(
        kind=SensorKind.EDA, start_time=1622000000.125, rate=4.0, samples=samples
    )
    path = tmp_path / "EDA.csv"
    write_stream(stream, path)
    back = parse_stream(path.read_bytes(), SensorKind.EDA)
    assert back.start_time == stream.start_time
    assert np.array_equal(back.samples, stream.samples)


def test_acc_round_trip_exact_on_count_grid(tmp_path):
    # counts are integers, so any multiple of 1/64 g survives exactly
    counts = np.array([[64, -32, 7], [0, 1, -1]], dtype=float)
    stream = SensorStream(
        kind=SensorKind.ACC, start_time=5.0, rate=32.0, samples=counts / 64.0
    )
    path = tmp_path / "ACC.csv"
    write_stream(stream, path)
    back = parse_stream(path.read_bytes(), SensorKind.ACC)
    assert np.array_equal(back.samples, stream.samples)
    assert path.read_text().splitlines()[2] == "64,-32,7"


# ---------------------------------------------------------------- timeline


TIMELINE_TEXT = (
    "participant_id,event,phase,start_unix,end_unix\n"
    "P007,alone,pre,100.0,220.0\n"
    "P007,alone,during,220.0,340.0\n"
    "P007,dyad_implicit,pre,400.0,520.0\n"
)


def test_parse_timeline_happy_path():
    timeline = parse_timeline(TIMELINE_TEXT)
    assert timeline.participant_id == "P007"
    assert len(timeline) == 3
    first = next(iter(timeline))
    assert (first.event, first.phase) == (Event.ALONE, Phase.PRE)
    assert (first.start, first.end) == (100.0, 220.0)


def test_timeline_iterates_in_start_order():
    entries = (
        SessionEvent(event=Event.DYAD_IMPLICIT, phase=Phase.PRE, start=500.0, end=620.0),
        SessionEvent(event=Event.ALONE, phase=Phase.DURING, start=0.0, end=120.0),
    )
    timeline = SessionTimeline(participant_id="P001", entries=entries)
    assert [e.event for e in timeline] == [Event.DYAD_IMPLICIT, Event.ALONE][::-1]


def test_duplicate_interval_rejected():
    # same (event, phase) twice is malformed input whatever the times say
    text = (
        "participant_id,event,phase,start_unix,end_unix\n"
        "P001,dyad_implicit,pre,0.0,120.0\n"
        "P001,dyad_implicit,pre,200.0,320.0\n"
    )
    with pytest.raises(DataFormatError, match="duplicate"):
        parse_timeline(text)


def test_overlapping_intervals_rejected():
    entries = (
        SessionEvent(event=Event.ALONE, phase=Phase.PRE, start=0.0, end=130.0),
        SessionEvent(event=Event.ALONE, phase=Phase.DURING, start=120.0, end=240.0),
    )
    with pytest.raises(TimelineError, match="overlaps"):
        SessionTimeline(participant_id="P001", entries=entries)


def test_timeline_requires_alone_event():
    entries = (
        SessionEvent(event=Event.DYAD_IMPLICIT, phase=Phase.PRE, start=0.0, end=120.0),
    )
    with pytest.raises(TimelineError, match="alone"):
        SessionTimeline(participant_id="P001", entries=entries)


def test_social_intervals_must_follow_alone():
    entries = (
        SessionEvent(event=Event.DYAD_IMPLICIT, phase=Phase.PRE, start=0.0, end=120.0),
        SessionEvent(event=Event.ALONE, phase=Phase.DURING, start=200.0, end=320.0),
    )
    with pytest.raises(TimelineError):
        SessionTimeline(participant_id="P001", entries=entries)


def test_interval_end_must_exceed_start():
    with pytest.raises(TimelineError):
        SessionEvent(event=Event.ALONE, phase=Phase.PRE, start=10.0, end=10.0)


def test_parse_timeline_empty_file():
    with pytest.raises(ParseError):
        parse_timeline(b"")


def test_parse_timeline_header_only():
    with pytest.raises(ParseError):
        parse_timeline("participant_id,event,phase,start_unix,end_unix\n")


def test_parse_timeline_wrong_header():
    with pytest.raises(SchemaError):
        parse_timeline("pid,event,phase,t0,t1\nP001,alone,pre,0.0,120.0\n")


def test_parse_timeline_unknown_event_token():
    text = (
        "participant_id,event,phase,start_unix,end_unix\n"
        "P001,triad_implicit,pre,0.0,120.0\n"
    )
    with pytest.raises(ParseError, match="unknown event"):
        parse_timeline(text)


def test_parse_timeline_mixed_participants():
    text = (
        "participant_id,event,phase,start_unix,end_unix\n"
        "P001,alone,pre,0.0,120.0\n"
        "P002,alone,during,120.0,240.0\n"
    )
    with pytest.raises(SchemaError, match="participant"):
        parse_timeline(text)


def test_timeline_round_trip(tmp_path):
    timeline = parse_timeline(TIMELINE_TEXT)
    path = tmp_path / "timeline.csv"
    write_timeline(timeline, path)
    back = parse_timeline(path.read_bytes())
    assert back.participant_id == timeline.participant_id
    assert list(back) == list(timeline)


def test_event_properties():
    assert Event.ALONE.group == "alone"
    assert Event.ALONE.threat is None
    assert not Event.ALONE.is_social
    assert Event.GROUP_EXPLICIT.group == "group"
    assert Event.GROUP_EXPLICIT.threat == "explicit"
    assert Event.DYAD_IMPLICIT.is_social


# ---------------------------------------------------------------- slicing


def test_slice_half_open_boundaries():
    stream = make_stream(n=16)
    left = slice_stream(stream, 0.0, 1.0)
    right = slice_stream(stream, 1.0, 2.0)
    assert np.array_equal(left.samples, [0, 1, 2, 3])
    assert np.array_equal(right.samples, [4, 5, 6, 7])
    assert left.start_time == 0.0 and right.start_time == 1.0


def test_slice_tolerates_float_noise_at_boundary():
    stream = make_stream(n=16)
    noisy = slice_stream(stream, 0.9999999999, 2.0000000001)
    assert np.array_equal(noisy.samples, [4, 5, 6, 7])


def test_slice_beyond_coverage():
    stream = make_stream(n=16)  # covers [0, 4)
    with pytest.raises(CoverageError):
        slice_stream(stream, 3.5, 4.5)
    with pytest.raises(CoverageError):
        slice_stream(stream, -1.0, 1.0)


def test_slice_with_no_samples_inside():
    stream = make_stream(n=16)
    with pytest.raises(CoverageError, match="no"):
        slice_stream(stream, 0.3, 0.4)


@settings(max_examples=200)
@given(
    idx=st.tuples(st.integers(0, 197), st.integers(1, 198), st.integers(2, 199)).map(sorted),
    fracs=st.tuples(
        st.floats(0.0, 0.999), st.floats(0.0, 0.999), st.floats(0.0, 0.999)
    ),
)
def test_slicing_is_additive_over_a_shared_cut(idx, fracs):
    # half-open windows: [a, c) must contain exactly [a, b) plus [b, c)
    assume(idx[0] < idx[1] < idx[2])
    stream = SensorStream(
        kind=SensorKind.EDA, start_time=1000.0, rate=4.0, samples=np.arange(200.0)
    )
    a, b, c = (1000.0 + (i + f) / 4.0 for i, f in zip(idx, fracs))
    try:
        left = slice_stream(stream, a, b)
        right = slice_stream(stream, b, c)
    except CoverageError:
        assume(False)
    whole = slice_stream(stream, a, c)
    assert np.array_equal(
        whole.samples, np.concatenate([left.samples, right.samples])
    )


def full_channels(start=0.0, seconds=600):
    return {
        SensorKind.PPG: SensorStream(
            kind=SensorKind.PPG, start_time=start, rate=64.0,
            samples=np.zeros(int(seconds * 64)),
        ),
        SensorKind.ACC: SensorStream(
            kind=SensorKind.ACC, start_time=start, rate=32.0,
            samples=np.zeros((int(seconds * 32), 3)),
        ),
        SensorKind.EDA: SensorStream(
            kind=SensorKind.EDA, start_time=start, rate=4.0,
            samples=np.full(int(seconds * 4), 2.0),
        ),
        SensorKind.TMP: SensorStream(
            kind=SensorKind.TMP, start_time=start, rate=4.0,
            samples=np.full(int(seconds * 4), 33.0),
        ),
    }


def test_two_minute_interval_sample_counts():
    timeline = SessionTimeline(
        participant_id="P001",
        entries=(SessionEvent(event=Event.ALONE, phase=Phase.DURING, start=60.0, end=180.0),),
    )
    (cut,) = slice_intervals(full_channels(), timeline)
    assert len(cut.channels[SensorKind.PPG]) == 7680
    assert len(cut.channels[SensorKind.ACC]) == 3840
    assert len(cut.channels[SensorKind.EDA]) == 480
    assert len(cut.channels[SensorKind.TMP]) == 480
    assert cut.duration == 120.0


def test_interval_past_stream_end_is_coverage_error():
    channels = full_channels(seconds=100)
    timeline = SessionTimeline(
        participant_id="P001",
        entries=(SessionEvent(event=Event.ALONE, phase=Phase.DURING, start=60.0, end=180.0),),
    )
    with pytest.raises(CoverageError):
        slice_intervals(channels, timeline)


def test_slice_intervals_requires_all_channels():
    channels = full_channels()
    del channels[SensorKind.TMP]
    timeline = SessionTimeline(
        participant_id="P001",
        entries=(SessionEvent(event=Event.ALONE, phase=Phase.DURING, start=0.0, end=120.0),),
    )
    with pytest.raises(SchemaError, match="TEMP|tmp"):
        slice_intervals(channels, timeline)


# ---------------------------------------------------------------- sessions on disk


def test_load_session_and_iter_study(demo_study_dir):
    dirs = list(iter_study(demo_study_dir))
    assert dirs == sorted(dirs)
    assert len(dirs) == 6
    session = load_session(dirs[0])
    assert session.participant_id == dirs[0].name
    assert set(session.streams) == set(SensorKind)
    for kind, stream in session.streams.items():
        assert stream.kind is kind


def test_load_session_missing_channel_file(demo_study_dir, tmp_path):
    src = next(iter_study(demo_study_dir))
    dst = tmp_path / "broken"
    dst.mkdir()
    for name in ["timeline.csv", "BVP.csv", "ACC.csv", "EDA.csv"]:
        (dst / name).write_bytes((src / name).read_bytes())
    with pytest.raises(ParseError, match="TEMP.csv"):
        load_session(dst)


def test_load_session_names_corrupt_file(demo_study_dir, tmp_path):
    src = next(iter_study(demo_study_dir))
    dst = tmp_path / "corrupt"
    dst.mkdir()
    for kind_file in list(STREAM_FILENAMES.values()) + ["timeline.csv"]:
        (dst / kind_file).write_bytes((src / kind_file).read_bytes())
    lines = (dst / "BVP.csv").read_text().splitlines()
    lines[5] = "not-a-number"
    (dst / "BVP.csv").write_text("\n".join(lines) + "\n")
    with pytest.raises(ParseError, match=r"BVP\.csv.*line 6"):
        load_session(dst)
