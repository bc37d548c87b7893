"""Shared domain types: integer-microsecond time, packets, piecewise-constant schedules."""

from __future__ import annotations

import bisect
import enum
import gc
from contextlib import contextmanager
from dataclasses import dataclass, field
from fractions import Fraction
from functools import partial
from typing import NamedTuple, Optional, Sequence

# Time is an int count of microseconds since scenario start.
Timestamp = int

US_PER_MS = 1_000
US_PER_S = 1_000_000

MAX_PACKET_BYTES = 1504
DEFAULT_PACKET_BYTES = 1500
ACK_BYTES = 40


def seconds(s) -> Timestamp:
    """Convert seconds (int, float, Fraction or decimal string) to whole microseconds."""
    return round(Fraction(str(s)) * US_PER_S)


def millis(ms) -> Timestamp:
    return round(Fraction(str(ms)) * US_PER_MS)


def mbps(rate) -> int:
    """Megabits/s to bits/s, exact for decimal inputs."""
    return int(Fraction(str(rate)) * 1_000_000)


class Direction(enum.Enum):
    UP = "up"
    DOWN = "down"

    # Members are singletons; identity hashing keeps per-packet dict lookups cheap.
    __hash__ = object.__hash__

    @property
    def reverse(self) -> "Direction":
        return Direction.DOWN if self is Direction.UP else Direction.UP

    @classmethod
    def parse(cls, text: str) -> "Direction":
        t = text.strip().lower()
        if t in ("up", "uplink"):
            return cls.UP
        if t in ("down", "downlink"):
            return cls.DOWN
        raise ValueError(f"unknown direction {text!r}")


UP = Direction.UP
DOWN = Direction.DOWN


class PacketKind(enum.Enum):
    DATA = "data"
    ACK = "ack"
    CROSS = "cross"

    __hash__ = object.__hash__


class Packet:
    """One unit of traffic. Mutable only in ``delivered_at``, which the link sets once."""

    __slots__ = ("seq", "size_bytes", "dir", "kind", "flow_id", "sent_at", "delivered_at")

    def __init__(self, seq: int, size_bytes: int, dir: Direction, kind: PacketKind,
                 flow_id: int, sent_at: Timestamp, delivered_at: Optional[Timestamp] = None):
        if seq < 0:
            raise ValueError("seq must be >= 0")
        if not 1 <= size_bytes <= MAX_PACKET_BYTES:
            raise ValueError(f"size_bytes must be in [1, {MAX_PACKET_BYTES}], got {size_bytes}")
        self.seq = seq
        self.size_bytes = size_bytes
        self.dir = dir
        self.kind = kind
        self.flow_id = flow_id
        self.sent_at = sent_at
        self.delivered_at = delivered_at

    def __repr__(self):
        return (f"Packet(seq={self.seq}, size={self.size_bytes}, dir={self.dir.value}, "
                f"kind={self.kind.value}, flow={self.flow_id}, sent_at={self.sent_at}, "
                f"delivered_at={self.delivered_at})")


class ScheduleError(ValueError):
    pass


def schedule_problems(starts: Sequence[int]) -> list[str]:
    problems = []
    if not starts:
        problems.append("schedule must have at least one step")
        return problems
    if starts[0] != 0:
        problems.append("first step must start at 0")
    if any(s < 0 for s in starts):
        problems.append("step starts must be non-negative")
    if any(b <= a for a, b in zip(starts, starts[1:])):
        problems.append("starts strictly increasing")
    return problems


@dataclass(frozen=True)
class CapacitySchedule:
    """Piecewise-constant link rate; each step holds from its start (inclusive)."""

    steps: tuple[tuple[Timestamp, int], ...]

    def __post_init__(self):
        steps = tuple((int(t), int(r)) for t, r in self.steps)
        object.__setattr__(self, "steps", steps)
        problems = schedule_problems([t for t, _ in steps])
        if any(r <= 0 for _, r in steps):
            problems.append("rates must be positive")
        if problems:
            raise ScheduleError("; ".join(problems))
        object.__setattr__(self, "_starts", [t for t, _ in steps])

    @classmethod
    def constant(cls, rate_bps: int) -> "CapacitySchedule":
        return cls(((0, rate_bps),))

    def rate_at(self, t: Timestamp) -> int:
        return capacity_at(self, t)

    def bits_between(self, t0: Timestamp, t1: Timestamp) -> Fraction:
        """Integral of rate over [t0, t1) in bits."""
        if t1 <= t0:
            return Fraction(0)
        total = Fraction(0)
        starts = self._starts
        i = bisect.bisect_right(starts, t0) - 1
        t = t0
        while t < t1:
            end = starts[i + 1] if i + 1 < len(starts) else t1
            end = min(end, t1)
            total += Fraction(self.steps[i][1] * (end - t), US_PER_S)
            t = end
            i += 1
        return total

    @property
    def boundaries(self) -> list[Timestamp]:
        return list(self._starts[1:])


@dataclass(frozen=True)
class LossSchedule:
    """Piecewise-constant drop probability (Fractions in [0, 1])."""

    steps: tuple[tuple[Timestamp, Fraction], ...]

    def __post_init__(self):
        steps = tuple((int(t), Fraction(p)) for t, p in self.steps)
        object.__setattr__(self, "steps", steps)
        problems = schedule_problems([t for t, _ in steps])
        if any(not 0 <= p <= 1 for _, p in steps):
            problems.append("probabilities must be in [0, 1]")
        if problems:
            raise ScheduleError("; ".join(problems))
        object.__setattr__(self, "_starts", [t for t, _ in steps])
        object.__setattr__(self, "_floats", [float(p) for _, p in steps])

    @classmethod
    def none(cls) -> "LossSchedule":
        return cls(((0, Fraction(0)),))

    @property
    def lossless(self) -> bool:
        return all(p == 0 for _, p in self.steps)

    def prob_at(self, t: Timestamp) -> Fraction:
        return loss_at(self, t)

    def float_at(self, t: Timestamp) -> float:
        return self._floats[bisect.bisect_right(self._starts, t) - 1]


def capacity_at(s: CapacitySchedule, t: Timestamp) -> int:
    if t < 0:
        raise ValueError("t must be >= 0")
    return s.steps[bisect.bisect_right(s._starts, t) - 1][1]


def loss_at(s: LossSchedule, t: Timestamp) -> Fraction:
    if t < 0:
        raise ValueError("t must be >= 0")
    return s.steps[bisect.bisect_right(s._starts, t) - 1][1]


class LogRecord(NamedTuple):
    event: str  # DataSent | DataRecv | AckSent | AckRecv
    t: Timestamp
    seq: int
    size_bytes: int
    dir: Direction
    rtt_est: Optional[Timestamp] = None


@contextmanager
def gc_paused():
    """Suspend the cyclic collector around an event loop.

    Runs allocate millions of acyclic records; with the collector on, each full pass walks
    every record already logged, which costs more than the simulation itself.
    """
    was_on = gc.isenabled()
    gc.disable()
    try:
        yield
    finally:
        if was_on:
            gc.enable()


# Hot-path constructor: takes all six fields as one tuple and skips the NamedTuple frame.
new_record = partial(tuple.__new__, LogRecord)

DATA_SENT = "DataSent"
DATA_RECV = "DataRecv"
ACK_SENT = "AckSent"
ACK_RECV = "AckRecv"
LOG_EVENTS = (DATA_SENT, DATA_RECV, ACK_SENT, ACK_RECV)


# Reference step schedules: five 12 s steps.
STEP_BANDWIDTH_MBPS = (15, 40, 10, 30, 15)
STEP_LOSS_PCT = ("0.3", "0.5", "0.25", "1", "0.3")
STEP_LENGTH = 12 * US_PER_S


def step_capacity_schedule() -> CapacitySchedule:
    return CapacitySchedule(tuple((i * STEP_LENGTH, mbps(r)) for i, r in enumerate(STEP_BANDWIDTH_MBPS)))


def step_loss_schedule() -> LossSchedule:
    return LossSchedule(tuple((i * STEP_LENGTH, Fraction(p) / 100) for i, p in enumerate(STEP_LOSS_PCT)))


@dataclass
class FlowLogs:
    """Everything one flow logged during a run. ``send_log`` is written by the sender side,
    ``recv_log`` by the receiver side; both may mix directions."""

    flow_id: int
    kind: str
    send_log: list[LogRecord]
    recv_log: list[LogRecord]
    directions: tuple[Direction, ...] = (UP,)
    start: Timestamp = 0
    extra: dict = field(default_factory=dict)


class Flow:
    """Base for traffic machines attached to a link (simulated medium or replay shell).

    The link calls ``start`` once, then ``on_packet`` for every packet of this flow it
    delivers. Flows talk back through ``net.send(pkt)`` and ``net.schedule(t, fn, arg)``.
    """

    kind = "flow"
    flow_id: int

    def start(self, net) -> None:
        raise NotImplementedError

    def on_packet(self, pkt: Packet, now: Timestamp) -> None:
        raise NotImplementedError

    def logs(self) -> FlowLogs:
        raise NotImplementedError

    @property
    def pending(self) -> bool:
        """True while the flow still expects to make progress on its own (used to detect starvation)."""
        return False
