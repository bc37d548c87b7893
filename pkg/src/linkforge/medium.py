"""Deterministic discrete-event model of a half-duplex shared medium.

Each direction has a bounded tail-drop FIFO in front of a single transmitter that
both directions share. When both queues hold packets the transmitter alternates
between them by weighted round-robin. Service rate follows a capacity schedule and
random wire loss (drawn after serialization) follows a loss schedule.
"""

from __future__ import annotations

import bisect
import heapq
import itertools
import math
import random
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Optional

from .core import (
    DOWN, UP, CapacitySchedule, Direction, Flow, FlowLogs, LossSchedule, Packet, Timestamp,
    US_PER_MS, US_PER_S, capacity_at, gc_paused,
)


class ScenarioError(RuntimeError):
    pass


@dataclass(frozen=True)
class MediumConfig:
    capacity: CapacitySchedule
    loss: LossSchedule = field(default_factory=LossSchedule.none)
    prop_delay: Timestamp = 1 * US_PER_MS
    buffer_up: int = 1000
    buffer_down: int = 1000
    weight_up: int = 1
    weight_down: int = 1
    seed: int = 0
    # Airtime lost whenever the transmitter turns around between directions back-to-back.
    switch_overhead: Timestamp = 0

    def __post_init__(self):
        if self.buffer_up < 1 or self.buffer_down < 1:
            raise ValueError("buffers must be >= 1 packet")
        if self.weight_up < 1 or self.weight_down < 1:
            raise ValueError("weights must be >= 1")
        if self.prop_delay < 0 or self.switch_overhead < 0:
            raise ValueError("delays must be >= 0")

    def buffer(self, d: Direction) -> int:
        return self.buffer_up if d is UP else self.buffer_down

    def weight(self, d: Direction) -> int:
        return self.weight_up if d is UP else self.weight_down


MEDIUM_PROFILES = {
    "symmetric": dict(buffer_up=1000, buffer_down=1000),
    # Client-side contention wins more airtime than the AP's shallow downlink queue.
    "asymmetric-ap": dict(buffer_up=1000, buffer_down=64, weight_up=3, weight_down=2),
}


def medium_profile(name: str, capacity: CapacitySchedule, **overrides) -> MediumConfig:
    try:
        base = MEDIUM_PROFILES[name]
    except KeyError:
        raise ValueError(f"unknown medium profile {name!r}") from None
    return MediumConfig(capacity=capacity, **{**base, **overrides})


def serialize_time(pkt: Packet, t: Timestamp, c: CapacitySchedule) -> Timestamp:
    """Transmission time in whole microseconds, rounded up, never below 1."""
    rate = capacity_at(c, t)
    return max(1, -(-pkt.size_bytes * 8 * US_PER_S // rate))


# Heap entries are plain (t, order, kind, payload) tuples; ``order`` breaks ties FIFO.
ARRIVAL = 0
SERIALIZE_DONE = 1
FLOW_TIMER = 2


@dataclass
class DirectionStats:
    enqueued: int = 0
    queue_drops: int = 0
    wire_losses: int = 0
    delivered: int = 0
    in_transit: int = 0

    def as_dict(self):
        return dict(enqueued=self.enqueued, queue_drops=self.queue_drops, wire_losses=self.wire_losses,
                    delivered=self.delivered, in_transit=self.in_transit)


class Medium:
    """Mutable medium state: queues, transmitter, per-direction loss generators, counters."""

    def __init__(self, cfg: MediumConfig, sim: "Simulator", record_intervals: bool = False):
        self.cfg = cfg
        self.sim = sim
        self.queues = {UP: deque(), DOWN: deque()}
        self._limits = {UP: cfg.buffer_up, DOWN: cfg.buffer_down}
        self._weights = {UP: cfg.weight_up, DOWN: cfg.weight_down}
        # Independent per-direction streams: a draw in one direction never shifts the other.
        self.rngs = {d: random.Random(f"{cfg.seed}:loss:{d.value}") for d in (UP, DOWN)}
        self.stats = {UP: DirectionStats(), DOWN: DirectionStats()}
        self.busy_until: Timestamp = 0
        self.current: Optional[Packet] = None
        self.intervals: Optional[list] = [] if record_intervals else None
        self._turn = UP
        self._served = 0
        self._last_dir: Optional[Direction] = None
        self._lossless = cfg.loss.lossless
        self._rate_from = self._rate_until = 0
        self._rate = 0

    def queue_len(self, d: Direction) -> int:
        return len(self.queues[d])

    def enqueue(self, pkt: Packet, now: Timestamp) -> bool:
        """Tail-drop admission. Returns True if accepted."""
        d = pkt.dir
        st = self.stats[d]
        st.enqueued += 1
        q = self.queues[d]
        if len(q) >= self._limits[d]:
            st.queue_drops += 1
            return False
        q.append(pkt)
        if self.current is None:
            self._start_next(now)
        return True

    def arbitrate(self, now: Timestamp) -> Optional[Direction]:
        up = bool(self.queues[UP])
        down = bool(self.queues[DOWN])
        if up and down:
            if self._served >= self._weights[self._turn]:
                self._turn = self._turn.reverse
                self._served = 0
            d = self._turn
        elif up or down:
            d = UP if up else DOWN
            if d is not self._turn:
                self._turn = d
                self._served = 0
        else:
            return None
        self._served += 1
        return d

    def _start_next(self, now: Timestamp) -> None:
        d = self.arbitrate(now)
        if d is None:
            self.current = None
            return
        pkt = self.queues[d].popleft()
        if not self._rate_from <= now < self._rate_until:
            self._refresh_rate(now)
        # Same result as serialize_time(), with the current schedule step cached.
        duration = max(1, -(-pkt.size_bytes * 8 * US_PER_S // self._rate))
        if self._last_dir is not None and d is not self._last_dir and now == self.busy_until:
            duration += self.cfg.switch_overhead
        self._last_dir = d
        self.current = pkt
        self.busy_until = now + duration
        if self.intervals is not None:
            self.intervals.append((now, now + duration, d))
        self.sim._push(now + duration, SERIALIZE_DONE, pkt)

    def _refresh_rate(self, now: Timestamp) -> None:
        steps = self.cfg.capacity.steps
        i = bisect.bisect_right(self.cfg.capacity.boundaries, now)
        self._rate = steps[i][1]
        self._rate_from = steps[i][0]
        self._rate_until = steps[i + 1][0] if i + 1 < len(steps) else math.inf

    def apply_loss(self, pkt: Packet, t: Timestamp) -> bool:
        """True if the packet survives the wire."""
        if self._lossless:
            return True
        p = self.cfg.loss.float_at(t)
        if p <= 0.0:
            return True
        return self.rngs[pkt.dir].random() >= p

    def on_serialized(self, pkt: Packet, now: Timestamp) -> None:
        st = self.stats[pkt.dir]
        if self.apply_loss(pkt, now):
            st.in_transit += 1
            self.sim._push(now + self.cfg.prop_delay, ARRIVAL, pkt)
        else:
            st.wire_losses += 1
        self.current = None
        self._start_next(now)

    def queued(self, d: Direction) -> int:
        """Packets accepted but not yet finished: waiting, serializing, or propagating."""
        n = len(self.queues[d]) + self.stats[d].in_transit
        if self.current is not None and self.current.dir is d:
            n += 1
        return n


@dataclass
class RunResult:
    flows: dict[int, FlowLogs]
    medium: dict[Direction, DirectionStats]
    queued: dict[Direction, int]
    duration: Timestamp
    config: MediumConfig
    intervals: Optional[list] = None
    events: int = 0

    def drops_rows(self):
        return [(d.value, self.medium[d].queue_drops, self.medium[d].wire_losses) for d in (UP, DOWN)]


class Simulator:
    """Event loop for one run. Events at equal times run in insertion order."""

    def __init__(self, cfg: MediumConfig, seed: Optional[int] = None, record_intervals: bool = False):
        if seed is not None:
            cfg = replace(cfg, seed=seed)
        self.cfg = cfg
        self.now: Timestamp = 0
        self._heap: list = []
        self._order = itertools.count()
        self.medium = Medium(cfg, self, record_intervals)
        self.flows: dict[int, Flow] = {}
        self.events = 0

    def _push(self, t: Timestamp, kind: int, payload) -> None:
        heapq.heappush(self._heap, (t, next(self._order), kind, payload))

    def schedule(self, t: Timestamp, fn, arg=None) -> None:
        if t < self.now:
            raise ValueError("cannot schedule in the past")
        heapq.heappush(self._heap, (t, next(self._order), FLOW_TIMER, (fn, arg)))

    def send(self, pkt: Packet) -> bool:
        return self.medium.enqueue(pkt, self.now)

    def attach(self, flow: Flow) -> None:
        if flow.flow_id in self.flows:
            raise ValueError(f"duplicate flow id {flow.flow_id}")
        self.flows[flow.flow_id] = flow
        flow.start(self)

    def run(self, until: Timestamp) -> RunResult:
        """Process every event strictly before ``until``."""
        with gc_paused():
            return self._run(until)

    def _run(self, until: Timestamp) -> RunResult:
        heap = self._heap
        pop = heapq.heappop
        medium = self.medium
        flows = self.flows
        stats = medium.stats
        n = 0
        while heap and heap[0][0] < until:
            t, _, kind, payload = pop(heap)
            self.now = t
            n += 1
            if kind == ARRIVAL:
                stats[payload.dir].in_transit -= 1
                stats[payload.dir].delivered += 1
                payload.delivered_at = t
                flows[payload.flow_id].on_packet(payload, t)
            elif kind == SERIALIZE_DONE:
                medium.on_serialized(payload, t)
            else:
                fn, arg = payload
                fn(t, arg)
        self.events += n
        if not heap and any(f.pending for f in flows.values()):
            raise ScenarioError(f"event queue starved at t={self.now} us with flows still pending")
        self.now = max(self.now, until)
        return RunResult(
            flows={fid: f.logs() for fid, f in sorted(flows.items())},
            medium=medium.stats,
            queued={d: medium.queued(d) for d in (UP, DOWN)},
            duration=until,
            config=self.cfg,
            intervals=medium.intervals,
            events=self.events,
        )
