import os

import pytest

from servesim.traces import (
    RequestTrace,
    TokenTimeline,
    TraceFormatError,
    read_trace,
    write_trace,
)


def test_timeline_rejects_decreasing_times():
    with pytest.raises(ValueError):
        TokenTimeline("x", 0.0, (1.0, 0.9))


def test_timeline_rejects_token_before_arrival():
    with pytest.raises(ValueError):
        TokenTimeline("x", 2.0, (1.5,))


def test_timeline_allows_ties():
    # Delivery timelines may tie when a release cap binds.
    tl = TokenTimeline("x", 0.0, (1.0, 1.0, 1.2))
    assert tl.num_tokens == 3


def test_complete_timeline_must_have_tokens():
    with pytest.raises(ValueError):
        TokenTimeline("x", 0.0, ())
    TokenTimeline("x", 0.0, (), complete=False)  # clipped-empty is fine


def test_clipped_marks_incomplete():
    tl = TokenTimeline("x", 0.0, (0.5, 1.5, 2.5))
    cut = tl.clipped(2.0)
    assert cut.token_times == (0.5, 1.5)
    assert not cut.complete
    assert tl.clipped(3.0).complete


def test_delivery_never_precedes_generation():
    with pytest.raises(ValueError):
        RequestTrace("x", 0.0, (1.0, 2.0), 8, True, delivery_times=(1.0, 1.9))


def test_trace_roundtrip(tmp_path, fixtures_dir):
    src = os.path.join(fixtures_dir, "three_req.jsonl")
    records = read_trace(src)
    assert [r.request_id for r in records] == ["r1", "r2", "r3"]
    out = tmp_path / "copy.jsonl"
    write_trace(out, records)
    assert read_trace(out) == records


def test_trace_roundtrip_is_byte_stable(tmp_path):
    records = [
        RequestTrace("a", 0.1234567890123, (0.311111111111, 0.52),
                     17, True),
        RequestTrace("b", 1.0, (1.25, 1.5), 9, True,
                     delivery_times=(1.3, 1.5)),
    ]
    p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    write_trace(p1, records)
    write_trace(p2, read_trace(p1))
    assert p1.read_bytes() == p2.read_bytes()


def test_malformed_trace_reports_line(tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text('{"request_id": "a", "arrival_s": 0.0, "token_times_s": [1.0],'
                 ' "prompt_len": 4, "completed": true}\n{"nope": 1}\n')
    with pytest.raises(TraceFormatError, match="line 2"):
        read_trace(p)
