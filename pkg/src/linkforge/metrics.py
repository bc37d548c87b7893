"""Quantities computed from per-packet logs: throughput series, capacity ratio, loss, completion time."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Optional, Sequence

from .core import (
    DATA_RECV, DATA_SENT, US_PER_MS, US_PER_S, CapacitySchedule, Direction, FlowLogs, LogRecord, Timestamp,
)

DEFAULT_BIN_MS = 1000


class DataIntegrityError(ValueError):
    pass


class CompletionError(ValueError):
    def __init__(self, target: int, delivered: int):
        super().__init__(f"target of {target} bytes never reached; delivered {delivered} bytes")
        self.target = target
        self.delivered = delivered


@dataclass(frozen=True)
class ThroughputSeries:
    bin_ms: int
    values: tuple[Fraction, ...]  # bits per second, one per bin starting at t=0
    bytes_per_bin: tuple[int, ...] = ()

    def __len__(self):
        return len(self.values)

    def mbps(self) -> list[float]:
        return [float(v) / 1e6 for v in self.values]


def _bin_count(duration: Optional[Timestamp], last_t: Optional[Timestamp], bin_us: int) -> int:
    if duration is not None:
        return -(-duration // bin_us)
    return 0 if last_t is None else last_t // bin_us + 1


def throughput(log: Iterable[LogRecord], dir: Direction, bin_ms: int = DEFAULT_BIN_MS,
               duration: Optional[Timestamp] = None, event: str = DATA_RECV) -> ThroughputSeries:
    """Delivered bits per second in consecutive bins. ``event=DataSent`` gives offered load instead."""
    if bin_ms < 1:
        raise ValueError("bin_ms must be >= 1")
    bin_us = bin_ms * US_PER_MS
    recs = [r for r in log if r.event == event and r.dir is dir]
    last = max((r.t for r in recs), default=None)
    n = _bin_count(duration, last, bin_us)
    counts = [0] * n
    for r in recs:
        k = r.t // bin_us
        if k < n:
            counts[k] += r.size_bytes
    values = tuple(Fraction(b * 8 * 1000, bin_ms) for b in counts)
    return ThroughputSeries(bin_ms, values, tuple(counts))


def capacity_ratio(tp: ThroughputSeries, c: CapacitySchedule) -> list[Fraction]:
    """Achieved / available per bin, with capacity averaged over the bin (exact at step boundaries)."""
    bin_us = tp.bin_ms * US_PER_MS
    out = []
    for k, v in enumerate(tp.values):
        cap_bits = c.bits_between(k * bin_us, (k + 1) * bin_us)
        if cap_bits == 0:
            raise ValueError(f"bin {k} has zero capacity")
        out.append(Fraction(v) * tp.bin_ms / 1000 / cap_bits)
    return out


def loss_rate(send_log: Iterable[LogRecord], recv_log: Iterable[LogRecord], dir: Direction) -> Fraction:
    sent = {r.seq for r in send_log if r.event == DATA_SENT and r.dir is dir}
    got = {r.seq for r in recv_log if r.event == DATA_RECV and r.dir is dir}
    stray = got - sent
    if stray:
        raise DataIntegrityError(f"{len(stray)} received sequence numbers were never sent (e.g. {min(stray)})")
    if not sent:
        return Fraction(0)
    return 1 - Fraction(len(got), len(sent))


def loss_by_send_bin(send_log: Iterable[LogRecord], recv_log: Iterable[LogRecord], dir: Direction,
                     bin_ms: int, duration: Optional[Timestamp] = None,
                     settled_only: bool = False) -> list[tuple[int, int]]:
    """(sent, never received) per bin, attributing each packet to the bin it was sent in.

    With ``settled_only`` packets above the highest received sequence are skipped: on a FIFO
    path they may still be queued when the log ends, so their fate is unknown.
    """
    bin_us = bin_ms * US_PER_MS
    got = {r.seq for r in recv_log if r.event == DATA_RECV and r.dir is dir}
    sends = [r for r in send_log if r.event == DATA_SENT and r.dir is dir]
    if settled_only:
        top = max(got, default=-1)
        sends = [r for r in sends if r.seq <= top]
    n = _bin_count(duration, max((r.t for r in sends), default=None), bin_us)
    rows = [[0, 0] for _ in range(n)]
    for r in sends:
        k = r.t // bin_us
        if k < n:
            rows[k][0] += 1
            if r.seq not in got:
                rows[k][1] += 1
    return [tuple(x) for x in rows]


def completion_time(recv_log: Iterable[LogRecord], bytes_target: int, start: Timestamp = 0) -> Timestamp:
    """Time from ``start`` until cumulative delivered bytes first reach ``bytes_target``."""
    if bytes_target <= 0:
        return 0
    total = 0
    for r in recv_log:
        if r.event != DATA_RECV:
            continue
        total += r.size_bytes
        if total >= bytes_target:
            return r.t - start
    raise CompletionError(bytes_target, total)


@dataclass
class FlowSummary:
    flow_id: int
    kind: str
    dir: Direction
    sent_pkts: int
    recv_pkts: int
    sent_bytes: int
    recv_bytes: int
    loss: Fraction
    mean_bps: float
    mean_ratio: float
    completion_us: Optional[Timestamp] = None


@dataclass
class RunSummary:
    flows: list[FlowSummary]
    drops: dict = field(default_factory=dict)  # dir -> (queue_drops, wire_losses)
    duration: Timestamp = 0

    def by_kind(self, kind: str, dir: Optional[Direction] = None) -> list[FlowSummary]:
        return [f for f in self.flows if f.kind == kind and (dir is None or f.dir is dir)]

    def aggregate_bps(self, kind: str, dir: Optional[Direction] = None) -> float:
        return sum(f.mean_bps for f in self.by_kind(kind, dir))


def summarize(flows: dict[int, FlowLogs], capacity: CapacitySchedule, duration: Timestamp,
              bin_ms: int = DEFAULT_BIN_MS, drops: Optional[dict] = None) -> RunSummary:
    rows = []
    for fid, fl in sorted(flows.items()):
        for d in fl.directions:
            sends = [r for r in fl.send_log if r.event == DATA_SENT and r.dir is d]
            recvs = [r for r in fl.recv_log if r.event == DATA_RECV and r.dir is d]
            tp = throughput(recvs, d, bin_ms, duration)
            ratios = capacity_ratio(tp, capacity) if len(tp) else []
            completion = None
            if fl.kind == "bulk":
                try:
                    completion = completion_time(recvs, fl.extra.get("total_bytes", 0), fl.start)
                except CompletionError:
                    completion = None
            rows.append(FlowSummary(
                flow_id=fid, kind=fl.kind, dir=d,
                sent_pkts=len(sends), recv_pkts=len(recvs),
                sent_bytes=sum(r.size_bytes for r in sends), recv_bytes=sum(r.size_bytes for r in recvs),
                loss=loss_rate(sends, recvs, d),
                mean_bps=sum(r.size_bytes for r in recvs) * 8 * US_PER_S / duration if duration else 0.0,
                mean_ratio=float(sum(ratios) / len(ratios)) if ratios else 0.0,
                completion_us=completion,
            ))
    return RunSummary(rows, dict(drops or {}), duration)


SERIES_HEADER = ("bin_start_ms", "flow_id", "dir", "throughput_bps", "ratio")
SUMMARY_HEADER = ("flow_id", "kind", "dir", "sent_pkts", "recv_pkts", "sent_bytes", "recv_bytes",
                  "loss", "mean_bps", "mean_ratio", "completion_s")
DROPS_HEADER = ("dir", "queue_drops", "wire_losses")


def series_rows(flows: dict[int, FlowLogs], capacity: CapacitySchedule, duration: Timestamp,
                bin_ms: int = DEFAULT_BIN_MS) -> list[tuple]:
    rows = []
    for fid, fl in sorted(flows.items()):
        for d in fl.directions:
            tp = throughput(fl.recv_log, d, bin_ms, duration)
            for k, (v, ratio) in enumerate(zip(tp.values, capacity_ratio(tp, capacity))):
                rows.append((k * bin_ms, fid, d.value, f"{float(v):.1f}", f"{float(ratio):.6f}"))
    return rows


def _write(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_series_csv(path: str | os.PathLike, rows) -> None:
    _write(path, SERIES_HEADER, rows)


def write_summary_csv(path: str | os.PathLike, summary: RunSummary) -> None:
    _write(path, SUMMARY_HEADER, (
        (f.flow_id, f.kind, f.dir.value, f.sent_pkts, f.recv_pkts, f.sent_bytes, f.recv_bytes,
         f"{float(f.loss):.6f}", f"{f.mean_bps:.1f}", f"{f.mean_ratio:.6f}",
         "" if f.completion_us is None else f"{f.completion_us / US_PER_S:.6f}")
        for f in summary.flows))


def write_drops_csv(path: str | os.PathLike, drops: dict) -> None:
    _write(path, DROPS_HEADER, ((d.value, q, w) for d, (q, w) in drops.items()))
