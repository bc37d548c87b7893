"""Delivery-opportunity traces: conversion from receiver logs and the on-disk format.

A trace file holds one decimal integer per line, each newline-terminated: the
millisecond at which the link could deliver one MTU. Repeated values mean several
opportunities in the same millisecond. Values never decrease.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Iterable, Optional

from .core import DATA_RECV, DEFAULT_PACKET_BYTES, US_PER_MS, Direction, LogRecord


class TraceError(ValueError):
    pass


class TraceParseError(TraceError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass(frozen=True)
class DeliveryTrace:
    opportunities_ms: tuple[int, ...]
    mtu_bytes: int = DEFAULT_PACKET_BYTES

    def __post_init__(self):
        ops = tuple(self.opportunities_ms)
        object.__setattr__(self, "opportunities_ms", ops)
        if self.mtu_bytes < 1:
            raise TraceError("mtu_bytes must be positive")
        if ops and ops[0] < 0:
            raise TraceError("opportunities must be non-negative")
        if any(b < a for a, b in zip(ops, ops[1:])):
            raise TraceError("opportunities must be non-decreasing")

    def __len__(self):
        return len(self.opportunities_ms)

    @property
    def period_ms(self) -> int:
        """Length of one pass when the trace loops."""
        return self.opportunities_ms[-1] + 1 if self.opportunities_ms else 0


def log_to_trace(recv_log: Iterable[LogRecord], dir: Direction, mtu_bytes: int = DEFAULT_PACKET_BYTES) -> DeliveryTrace:
    ops = []
    for r in recv_log:
        if r.event != DATA_RECV or r.dir is not dir:
            continue
        n = -(-r.size_bytes // mtu_bytes)
        ops.extend([r.t // US_PER_MS] * n)
    if not ops:
        raise TraceError("no delivery opportunities recorded")
    ops.sort()
    return DeliveryTrace(tuple(ops), mtu_bytes)


def format_trace(t: DeliveryTrace) -> str:
    return "".join(f"{ms}\n" for ms in t.opportunities_ms)


def parse_trace(text: str, mtu_bytes: int = DEFAULT_PACKET_BYTES) -> DeliveryTrace:
    ops = []
    prev = None
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    for lineno, line in enumerate(lines, start=1):
        if not (line.isascii() and line.isdigit()):
            raise TraceParseError(lineno, f"expected a non-negative integer, got {line!r}")
        v = int(line)
        if prev is not None and v < prev:
            raise TraceParseError(lineno, f"opportunity {v} ms precedes previous {prev} ms")
        ops.append(v)
        prev = v
    return DeliveryTrace(tuple(ops), mtu_bytes)


def write_trace(t: DeliveryTrace, path: str | os.PathLike) -> None:
    with open(path, "w", newline="\n") as f:
        f.write(format_trace(t))


def read_trace(path: str | os.PathLike, mtu_bytes: int = DEFAULT_PACKET_BYTES) -> DeliveryTrace:
    with open(path) as f:
        return parse_trace(f.read(), mtu_bytes)


def trace_implied_rate(t: DeliveryTrace, window_ms: int, duration_ms: Optional[int] = None) -> list[float]:
    """Link rate (bits/s) the trace offers in consecutive windows starting at 0 ms."""
    if window_ms < 1:
        raise ValueError("window_ms must be >= 1")
    if duration_ms is None:
        duration_ms = t.period_ms
    n = -(-duration_ms // window_ms)
    counts = [0] * n
    for ms in t.opportunities_ms:
        k = ms // window_ms
        if k < n:
            counts[k] += 1
    return [c * t.mtu_bytes * 8 * 1000 / window_ms for c in counts]
