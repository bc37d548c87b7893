import pytest

from linkforge.core import ACK_RECV, ACK_SENT, DATA_RECV, DATA_SENT, DOWN, UP, LogRecord
from linkforge.logs import LOG_HEADER, LogFormatError, format_log, parse_log, read_log, write_log

RECORDS = [
    LogRecord(DATA_SENT, 0, 0, 1500, UP),
    LogRecord(DATA_RECV, 1200, 0, 1500, UP),
    LogRecord(ACK_SENT, 1200, 0, 40, UP),
    LogRecord(ACK_RECV, 2200, 0, 40, DOWN, 2200),
]


def test_round_trip(tmp_path):
    write_log(tmp_path / "a.csv", RECORDS)
    assert read_log(tmp_path / "a.csv") == RECORDS
    assert format_log(RECORDS).splitlines()[0] == ",".join(LOG_HEADER)


@pytest.mark.parametrize("body, needle", [
    ("Bogus,0,0,1500,up,\n", "unknown event"),
    ("DataSent,0,0,1500,left,\n", "line 2"),
    ("DataSent,0,0\n", "6 fields"),
    ("DataSent,0,0,1500,up,5\n", "rtt_est_us"),
    ("AckRecv,0,0,40,up,\n", "rtt_est_us"),
])
def test_bad_rows(body, needle):
    with pytest.raises(LogFormatError, match=needle):
        parse_log(",".join(LOG_HEADER) + "\n" + body)


def test_bad_header():
    with pytest.raises(LogFormatError):
        parse_log("a,b,c\n")
    assert parse_log("") == []
