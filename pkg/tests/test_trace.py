import random

import pytest

from linkforge.core import DATA_RECV, DOWN, UP, LogRecord
from linkforge.trace import (
    DeliveryTrace, TraceError, TraceParseError, format_trace, log_to_trace, parse_trace, read_trace,
    trace_implied_rate, write_trace,
)


def test_format_example():
    assert format_trace(DeliveryTrace((0, 1, 2))) == "0\n1\n2\n"
    assert parse_trace("0\n1\n2\n") == DeliveryTrace((0, 1, 2))


def test_round_trip_random_traces():
    rng = random.Random(11)
    for _ in range(1000):
        n = rng.randint(1, 200)
        ops = sorted(rng.randint(0, 100_000) for _ in range(n))
        t = DeliveryTrace(tuple(ops))
        text = format_trace(t)
        assert parse_trace(text) == t
        assert format_trace(parse_trace(text)) == text


def test_file_round_trip(tmp_path):
    t = DeliveryTrace((0, 0, 3, 7, 7, 7))
    write_trace(t, tmp_path / "up.trace")
    assert (tmp_path / "up.trace").read_bytes() == b"0\n0\n3\n7\n7\n7\n"
    assert read_trace(tmp_path / "up.trace") == t


def test_decreasing_value_reports_line():
    with pytest.raises(TraceParseError) as e:
        parse_trace("2\n1\n")
    assert e.value.lineno == 2


@pytest.mark.parametrize("text, line", [("0\nx\n", 2), ("1.5\n", 1), ("-1\n", 1), ("0\n\n3\n", 2)])
def test_non_integer_rejected(text, line):
    with pytest.raises(TraceParseError) as e:
        parse_trace(text)
    assert e.value.lineno == line


def test_empty_log_is_an_error():
    with pytest.raises(TraceError):
        log_to_trace([], UP)


def test_log_to_trace_ms_and_direction():
    log = [LogRecord(DATA_RECV, 1_500, 0, 1500, UP), LogRecord(DATA_RECV, 1_999, 1, 1500, UP),
           LogRecord(DATA_RECV, 2_000, 0, 1500, DOWN), LogRecord("AckSent", 2_500, 0, 40, UP),
           LogRecord(DATA_RECV, 3_000, 2, 3000, UP)]
    # A 3000 B delivery used two MTU-sized opportunities.
    assert log_to_trace(log, UP).opportunities_ms == (1, 1, 3, 3)
    assert log_to_trace(log, DOWN).opportunities_ms == (2,)


def test_opportunity_count_matches_delivered_bytes():
    rng = random.Random(5)
    log, t = [], 0
    for seq in range(500):
        t += rng.randint(0, 3000)
        log.append(LogRecord(DATA_RECV, t, seq, 1500, UP))
    trace = log_to_trace(log, UP)
    assert len(trace) * 1500 == sum(r.size_bytes for r in log)


def test_implied_rate():
    # One opportunity per ms for one second.
    t = DeliveryTrace(tuple(range(1000)))
    assert trace_implied_rate(t, 1000) == [12_000_000.0]
    assert trace_implied_rate(t, 100, 2000)[-1] == 0.0
