"""Trace-driven link emulator.

Packets first sit in a fixed propagation-delay stage, then enter a per-direction
drop-tail queue. The queue drains only at the trace's delivery opportunities: each
opportunity moves up to one MTU of bytes off the head of the queue. Opportunities
that find the queue empty are lost, never banked.
"""

from __future__ import annotations

import bisect
import heapq
import itertools
import logging
import math
import random
from collections import deque
from dataclasses import dataclass
from typing import Optional

from .core import DOWN, UP, Direction, Flow, FlowLogs, Packet, Timestamp, US_PER_MS, gc_paused
from .medium import FLOW_TIMER, ScenarioError
from .trace import DeliveryTrace

log = logging.getLogger(__name__)

INF = math.inf


@dataclass(frozen=True)
class ReplayConfig:
    trace_up: Optional[DeliveryTrace] = None
    trace_down: Optional[DeliveryTrace] = None
    prop_delay: Timestamp = 20 * US_PER_MS
    queue_limit: int = 1000
    inject_loss: float = 0.0
    seed: int = 0
    wrap: bool = True

    def __post_init__(self):
        if self.queue_limit < 1:
            raise ValueError("queue_limit must be >= 1")
        if not 0 <= self.inject_loss <= 1:
            raise ValueError("inject_loss must be in [0, 1]")
        if self.prop_delay < 0:
            raise ValueError("prop_delay must be >= 0")
        for name in ("trace_up", "trace_down"):
            t = getattr(self, name)
            if t is not None and len(t) == 0:
                raise ValueError(f"{name} has no delivery opportunities")
        if self.trace_up is None and self.trace_down is None:
            raise ValueError("at least one trace is required")

    def trace(self, d: Direction) -> Optional[DeliveryTrace]:
        return self.trace_up if d is UP else self.trace_down


@dataclass
class ReplayStats:
    ingested: int = 0
    queue_drops: int = 0
    injected_losses: int = 0
    delivered: int = 0
    wraps: int = 0
    dark: bool = False


class _Lane:
    """One direction: trace cursor, queue, and partially-sent head packet."""

    def __init__(self, trace: Optional[DeliveryTrace], wrap: bool):
        self.trace = trace
        self.ops = list(trace.opportunities_ms) if trace is not None else []
        self.n = len(self.ops)
        self.period = trace.period_ms if trace is not None else 0
        self.mtu = trace.mtu_bytes if trace is not None else 0
        self.wrap = wrap
        self.cursor = 0  # absolute opportunity index, counting across laps
        self.queue: deque[Packet] = deque()
        self.head_left = 0
        self.stats = ReplayStats()

    def time_of(self, i: int) -> Optional[Timestamp]:
        if self.n == 0:
            return None
        lap, idx = divmod(i, self.n)
        if lap and not self.wrap:
            return None
        return (lap * self.period + self.ops[idx]) * US_PER_MS

    def first_at_or_after(self, t: Timestamp) -> int:
        if self.n == 0:
            return 0
        ms = -(-t // US_PER_MS)
        lap, rem = divmod(ms, self.period)
        idx = bisect.bisect_left(self.ops, rem)
        if idx == self.n:
            lap, idx = lap + 1, 0
        return lap * self.n + idx

    def advance_to(self, i: int) -> None:
        if i <= self.cursor:
            return
        if self.n:
            old_lap, new_lap = self.cursor // self.n, i // self.n
            if new_lap > old_lap and self.wrap:
                for lap in range(old_lap + 1, new_lap + 1):
                    log.warning("trace wrapped (lap %d)", lap)
                self.stats.wraps += new_lap - old_lap
        self.cursor = i


class ReplayShell:
    def __init__(self, cfg: ReplayConfig):
        self.cfg = cfg
        self.now: Timestamp = 0
        self.lanes = {UP: _Lane(cfg.trace_up, cfg.wrap), DOWN: _Lane(cfg.trace_down, cfg.wrap)}
        self._delay: list = []
        self._order = itertools.count()
        self.rng = random.Random(f"{cfg.seed}:replay-loss")

    def ingest(self, pkt: Packet, now: Timestamp) -> None:
        self.lanes[pkt.dir].stats.ingested += 1
        heapq.heappush(self._delay, (now + self.cfg.prop_delay, next(self._order), pkt))

    def _next_opportunity(self, d: Direction):
        lane = self.lanes[d]
        if not lane.queue:
            return INF
        t = lane.time_of(lane.cursor)
        return INF if t is None else t

    def next_event_time(self) -> Optional[Timestamp]:
        t = min(self._delay[0][0] if self._delay else INF,
                self._next_opportunity(UP), self._next_opportunity(DOWN))
        return None if t == INF else t

    def _enter_queue(self, pkt: Packet, t: Timestamp) -> None:
        lane = self.lanes[pkt.dir]
        if len(lane.queue) >= self.cfg.queue_limit:
            lane.stats.queue_drops += 1
            return
        if not lane.queue:
            # Opportunities that passed while the queue sat empty are gone.
            lane.advance_to(lane.first_at_or_after(t))
            lane.head_left = pkt.size_bytes
        lane.queue.append(pkt)

    def _serve(self, d: Direction, t: Timestamp, out: list) -> None:
        lane = self.lanes[d]
        budget = lane.mtu
        q = lane.queue
        p = self.cfg.inject_loss
        while q and budget > 0:
            take = min(budget, lane.head_left)
            budget -= take
            lane.head_left -= take
            if lane.head_left:
                break
            pkt = q.popleft()
            if q:
                lane.head_left = q[0].size_bytes
            if p and self.rng.random() < p:
                lane.stats.injected_losses += 1
                continue
            lane.stats.delivered += 1
            out.append((pkt, t))
        lane.advance_to(lane.cursor + 1)

    def step(self, until: Timestamp) -> list[tuple[Packet, Timestamp]]:
        """Run the emulator through ``until`` (inclusive) and return deliveries in time order."""
        if until < self.now:
            raise ValueError("cannot step backwards")
        out: list[tuple[Packet, Timestamp]] = []
        delay = self._delay
        while True:
            t_entry = delay[0][0] if delay else INF
            t_up = self._next_opportunity(UP)
            t_down = self._next_opportunity(DOWN)
            t = min(t_entry, t_up, t_down)
            if t > until:
                break
            if t_entry == t:
                _, _, pkt = heapq.heappop(delay)
                self._enter_queue(pkt, t)
            elif t_up == t:
                self._serve(UP, t, out)
            else:
                self._serve(DOWN, t, out)
        for lane in self.lanes.values():
            if lane.queue and lane.time_of(lane.cursor) is None:
                lane.stats.dark = True
        self.now = until
        return out

    def summary(self) -> dict[Direction, ReplayStats]:
        return {d: lane.stats for d, lane in self.lanes.items()}


WAKE = 3


@dataclass
class ReplayResult:
    flows: dict[int, FlowLogs]
    stats: dict[Direction, ReplayStats]
    duration: Timestamp
    config: ReplayConfig
    events: int = 0

    def summary_rows(self):
        return [(d.value, s.delivered, s.queue_drops, s.injected_losses, s.wraps, int(s.dark))
                for d, s in self.stats.items()]


class ReplayLink:
    """Drives flow machines over a ReplayShell with the same interface as the medium simulator."""

    def __init__(self, cfg: ReplayConfig):
        self.cfg = cfg
        self.shell = ReplayShell(cfg)
        self.now: Timestamp = 0
        self._heap: list = []
        self._order = itertools.count()
        self._armed_at = INF
        self.flows: dict[int, Flow] = {}
        self.events = 0

    def schedule(self, t: Timestamp, fn, arg=None) -> None:
        if t < self.now:
            raise ValueError("cannot schedule in the past")
        heapq.heappush(self._heap, (t, next(self._order), FLOW_TIMER, (fn, arg)))

    def send(self, pkt: Packet) -> bool:
        self.shell.ingest(pkt, self.now)
        self._arm()
        return True

    def _arm(self) -> None:
        t = self.shell.next_event_time()
        if t is not None and t < self._armed_at:
            self._armed_at = t
            heapq.heappush(self._heap, (t, next(self._order), WAKE, None))

    def attach(self, flow: Flow) -> None:
        if flow.flow_id in self.flows:
            raise ValueError(f"duplicate flow id {flow.flow_id}")
        self.flows[flow.flow_id] = flow
        flow.start(self)

    def run(self, until: Timestamp) -> ReplayResult:
        with gc_paused():
            return self._run(until)

    def _run(self, until: Timestamp) -> ReplayResult:
        heap = self._heap
        flows = self.flows
        n = 0
        while heap and heap[0][0] < until:
            t, _, kind, payload = heapq.heappop(heap)
            self.now = t
            n += 1
            if kind == WAKE:
                if t >= self._armed_at:
                    self._armed_at = INF
                for pkt, when in self.shell.step(t):
                    pkt.delivered_at = when
                    flows[pkt.flow_id].on_packet(pkt, when)
                self._arm()
            else:
                fn, arg = payload
                fn(t, arg)
        self.events += n
        if not heap and any(f.pending for f in flows.values()) and not self._dark():
            raise ScenarioError(f"replay event queue starved at t={self.now} us with flows still pending")
        self.now = max(self.now, until)
        return ReplayResult({fid: f.logs() for fid, f in sorted(flows.items())}, self.shell.summary(),
                            until, self.cfg, self.events)

    def _dark(self) -> bool:
        return any(l.queue and l.time_of(l.cursor) is None for l in self.shell.lanes.values())


def replay_run(cfg: ReplayConfig, flows: list[Flow], duration: Timestamp) -> ReplayResult:
    link = ReplayLink(cfg)
    for f in flows:
        link.attach(f)
    return link.run(duration)
