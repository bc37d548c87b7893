"""CSV serialization of per-packet logs.

Format (header line, then one row per record)::

    event,t_us,seq,size_bytes,dir,rtt_est_us

``event`` is one of DataSent, DataRecv, AckSent, AckRecv; ``dir`` is ``up`` or ``down``;
``rtt_est_us`` is empty unless the event is AckRecv.
"""

from __future__ import annotations

import csv
import io
import os
from typing import Iterable

from .core import ACK_RECV, LOG_EVENTS, Direction, LogRecord

LOG_HEADER = ("event", "t_us", "seq", "size_bytes", "dir", "rtt_est_us")


class LogFormatError(ValueError):
    pass


def format_log(records: Iterable[LogRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOG_HEADER)
    w.writerows((r.event, r.t, r.seq, r.size_bytes, r.dir.value, "" if r.rtt_est is None else r.rtt_est)
                for r in records)
    return buf.getvalue()


def write_log(path: str | os.PathLike, records: Iterable[LogRecord]) -> None:
    with open(path, "w", newline="") as f:
        f.write(format_log(records))


def parse_log(text: str) -> list[LogRecord]:
    rows = csv.reader(io.StringIO(text))
    header = next(rows, None)
    if header is None:
        return []
    if tuple(header) != LOG_HEADER:
        raise LogFormatError(f"line 1: expected header {','.join(LOG_HEADER)}")
    out = []
    for lineno, row in enumerate(rows, start=2):
        if len(row) != 6:
            raise LogFormatError(f"line {lineno}: expected 6 fields, got {len(row)}")
        event, t, seq, size, d, rtt = row
        if event not in LOG_EVENTS:
            raise LogFormatError(f"line {lineno}: unknown event {event!r}")
        try:
            rec = LogRecord(event, int(t), int(seq), int(size), Direction(d), int(rtt) if rtt else None)
        except ValueError as e:
            raise LogFormatError(f"line {lineno}: {e}") from None
        if (rec.rtt_est is not None) != (event == ACK_RECV):
            raise LogFormatError(f"line {lineno}: rtt_est_us must be set exactly for AckRecv")
        out.append(rec)
    return out


def read_log(path: str | os.PathLike) -> list[LogRecord]:
    with open(path, newline="") as f:
        return parse_log(f.read())
