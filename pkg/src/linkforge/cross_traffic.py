"""IPerf-like concurrent traffic: rate-capped CBR (UDP-like) and AIMD (TCP-like) streams."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .core import (
    ACK_BYTES, ACK_SENT, DATA_RECV, DATA_SENT, ACK_RECV, DEFAULT_PACKET_BYTES, UP, Direction, Flow,
    FlowLogs, LogRecord, new_record, Packet, PacketKind, Timestamp, US_PER_S,
)

CWND_UNIT = 1_000_000  # cwnd is kept in millionths of a packet
# Receiver window of an unscaled TCP connection; bounds cwnd no matter how large the RTT grows.
DEFAULT_RWND_BYTES = 65_535


@dataclass
class CbrStream:
    rate_bits_per_sec: int
    packet_size: int = DEFAULT_PACKET_BYTES
    flow_id: int = 0
    dir: Direction = UP
    start: Timestamp = 0
    sent: int = 0
    next_send: Timestamp = field(init=False)

    def __post_init__(self):
        if self.rate_bits_per_sec <= 0:
            raise ValueError("rate must be positive")
        self.next_send = self._send_time(self.sent)

    @property
    def gap(self) -> Fraction:
        """Exact inter-packet gap in microseconds."""
        return Fraction(self.packet_size * 8 * US_PER_S, self.rate_bits_per_sec)

    def _send_time(self, k: int) -> Timestamp:
        # k-th departure computed from the origin, so rounding never accumulates.
        return self.start + k * self.packet_size * 8 * US_PER_S // self.rate_bits_per_sec


def cbr_tick(s: CbrStream, now: Timestamp) -> list[Packet]:
    """Emit every packet due at or before ``now``."""
    out = []
    while s.next_send <= now:
        out.append(Packet(s.sent, s.packet_size, s.dir, PacketKind.CROSS, s.flow_id, s.next_send))
        s.sent += 1
        s.next_send = s._send_time(s.sent)
    return out


class AimdStream:
    """Congestion-avoidance window: +1/cwnd per ACK, halve on loss, floor 1 packet,
    ceiling ``max_cwnd`` packets (the receiver window).

    ``cwnd`` is exact on a 10**-6 packet grid.
    """

    def __init__(self, flow_id: int = 0, cwnd=2, rate_cap: Optional[int] = None,
                 max_cwnd: Optional[int] = None):
        self.flow_id = flow_id
        self._cwnd_u = int(Fraction(cwnd) * CWND_UNIT)
        if self._cwnd_u < CWND_UNIT:
            raise ValueError("cwnd must be >= 1")
        if rate_cap is not None and rate_cap <= 0:
            raise ValueError("rate_cap must be positive")
        if max_cwnd is not None and max_cwnd < 1:
            raise ValueError("max_cwnd must be >= 1")
        self.rate_cap = rate_cap
        self._max_u = None if max_cwnd is None else max_cwnd * CWND_UNIT
        if self._max_u is not None:
            self._cwnd_u = min(self._cwnd_u, self._max_u)
        self.in_flight = 0

    @property
    def cwnd(self) -> Fraction:
        return Fraction(self._cwnd_u, CWND_UNIT)

    @property
    def window(self) -> int:
        """Whole packets the sender may have outstanding."""
        return self._cwnd_u // CWND_UNIT


def aimd_on_ack(s: AimdStream) -> AimdStream:
    s._cwnd_u += CWND_UNIT * CWND_UNIT // s._cwnd_u
    if s._max_u is not None and s._cwnd_u > s._max_u:
        s._cwnd_u = s._max_u
    if s.in_flight > 0:
        s.in_flight -= 1
    return s


def aimd_on_loss(s: AimdStream) -> AimdStream:
    s._cwnd_u = max(CWND_UNIT, s._cwnd_u // 2)
    return s


class _Sink:
    """Receiver side shared by cross-traffic flows: logs deliveries."""

    def __init__(self):
        self.recv_log: list[LogRecord] = []

    def record(self, pkt: Packet, now: Timestamp):
        self.recv_log.append(new_record((DATA_RECV, now, pkt.seq, pkt.size_bytes, pkt.dir, None)))


class CbrFlow(Flow):
    kind = "cbr"

    def __init__(self, flow_id: int, rate_bits_per_sec: int, packet_size: int = DEFAULT_PACKET_BYTES,
                 direction: Direction = UP, start: Timestamp = 0, stop: Optional[Timestamp] = None):
        self.flow_id = flow_id
        self.stream = CbrStream(rate_bits_per_sec, packet_size, flow_id, direction, start)
        self.stop_at = stop
        self.start_at = start
        self.send_log: list[LogRecord] = []
        self.sink = _Sink()
        self.net = None

    def start(self, net) -> None:
        self.net = net
        net.schedule(self.stream.next_send, self._tick)

    def _tick(self, now: Timestamp, _=None) -> None:
        if self.stop_at is not None and now >= self.stop_at:
            return
        # Inlined cbr_tick: this runs once per packet.
        s = self.stream
        log = self.send_log.append
        send = self.net.send
        size, d, fid = s.packet_size, s.dir, s.flow_id
        while s.next_send <= now:
            t = s.next_send
            log(new_record((DATA_SENT, t, s.sent, size, d, None)))
            send(Packet(s.sent, size, d, PacketKind.CROSS, fid, t))
            s.sent += 1
            s.next_send = s._send_time(s.sent)
        self.net.schedule(s.next_send, self._tick)

    def on_packet(self, pkt: Packet, now: Timestamp) -> None:
        self.sink.record(pkt, now)

    @property
    def pending(self) -> bool:
        return self.stop_at is None or self.net.now < self.stop_at

    def logs(self) -> FlowLogs:
        return FlowLogs(self.flow_id, self.kind, self.send_log, self.sink.recv_log,
                        (self.stream.dir,), self.start_at,
                        {"rate_bps": self.stream.rate_bits_per_sec})


class AimdFlow(Flow):
    """TCP-like stream. Data goes one way; per-packet ACKs come back over the same link's
    reverse direction. A hole is declared lost once three later ACKs have passed it, or
    after a one-second silence. No retransmission: only the window dynamics matter."""

    kind = "aimd"
    DUP_THRESHOLD = 3
    RTO = US_PER_S

    def __init__(self, flow_id: int, rate_cap: Optional[int] = None, packet_size: int = DEFAULT_PACKET_BYTES,
                 direction: Direction = UP, initial_cwnd=2, start: Timestamp = 0,
                 stop: Optional[Timestamp] = None, rwnd_bytes: Optional[int] = DEFAULT_RWND_BYTES):
        self.flow_id = flow_id
        max_cwnd = None if rwnd_bytes is None else max(1, rwnd_bytes // packet_size)
        self.stream = AimdStream(flow_id, initial_cwnd, rate_cap, max_cwnd)
        self.packet_size = packet_size
        self.dir = direction
        self.start_at = start
        self.stop_at = stop
        self.next_seq = 0
        self.send_log: list[LogRecord] = []
        self.sink = _Sink()
        self.losses = 0
        self.timeouts = 0
        self.cwnd_trace: list[tuple[Timestamp, Fraction]] = []
        self._outstanding: OrderedDict[int, Timestamp] = OrderedDict()
        self._hole_marks: dict[int, int] = {}
        self._acks = 0
        self._recovery_point = 0
        self._last_progress = start
        self._timer_armed = False
        # Pacing runs on an exact integer grid of 1/rate_cap microseconds.
        self._rate = rate_cap
        self._gap_scaled = None if rate_cap is None else packet_size * 8 * US_PER_S
        self._next_scaled = 0 if rate_cap is None else start * rate_cap
        self.net = None

    def start(self, net) -> None:
        self.net = net
        net.schedule(self.start_at, self._kick)
        net.schedule(self.start_at + self.RTO // 4, self._rto_check)

    def _active(self, now):
        return self.stop_at is None or now < self.stop_at

    def _kick(self, now: Timestamp, _=None) -> None:
        self._timer_armed = False
        self._pump(now)

    def _pump(self, now: Timestamp) -> None:
        if not self._active(now):
            return
        s = self.stream
        out = self._outstanding
        rate = self._rate
        while len(out) < s.window:
            if rate is not None:
                now_scaled = now * rate
                if now_scaled < self._next_scaled:
                    if not self._timer_armed:
                        self._timer_armed = True
                        self.net.schedule(-(-self._next_scaled // rate), self._kick)
                    return
                # Idle time does not bank credit.
                self._next_scaled = max(self._next_scaled, now_scaled) + self._gap_scaled
            seq = self.next_seq
            self.next_seq += 1
            out[seq] = now
            s.in_flight = len(out)
            self.send_log.append(new_record((DATA_SENT, now, seq, self.packet_size, self.dir, None)))
            self.net.send(Packet(seq, self.packet_size, self.dir, PacketKind.DATA, self.flow_id, now))

    def on_packet(self, pkt: Packet, now: Timestamp) -> None:
        if pkt.kind is PacketKind.DATA:
            self.sink.record(pkt, now)
            self.sink.recv_log.append(new_record((ACK_SENT, now, pkt.seq, ACK_BYTES, pkt.dir, None)))
            self.net.send(Packet(pkt.seq, ACK_BYTES, pkt.dir.reverse, PacketKind.ACK, self.flow_id, now))
        else:
            self._on_ack(pkt.seq, now)

    def _on_ack(self, seq: int, now: Timestamp) -> None:
        out = self._outstanding
        sent_at = out.pop(seq, None)
        if sent_at is None:
            return
        self._acks += 1
        self._last_progress = now
        aimd_on_ack(self.stream)
        self.send_log.append(new_record((ACK_RECV, now, seq, ACK_BYTES, self.dir, now - sent_at)))
        marks = self._hole_marks
        lost = []
        for hole in out:
            if hole > seq:
                break
            first = marks.setdefault(hole, self._acks)
            if self._acks - first + 1 >= self.DUP_THRESHOLD:
                lost.append(hole)
        if lost:
            for hole in lost:
                del out[hole]
                del marks[hole]
            self.losses += len(lost)
            if lost[-1] >= self._recovery_point:
                # One reduction per window of data.
                aimd_on_loss(self.stream)
                self._recovery_point = self.next_seq
                self.cwnd_trace.append((now, self.stream.cwnd))
        self.stream.in_flight = len(out)
        self._pump(now)

    def _rto_check(self, now: Timestamp, _=None) -> None:
        if not self._active(now):
            return
        if self._outstanding and now - self._last_progress >= self.RTO:
            self._outstanding.clear()
            self._hole_marks.clear()
            self.stream.in_flight = 0
            aimd_on_loss(self.stream)
            self._recovery_point = self.next_seq
            self._last_progress = now
            self.timeouts += 1
            self._pump(now)
        self.net.schedule(now + self.RTO // 4, self._rto_check)

    @property
    def pending(self) -> bool:
        return self.stop_at is None or self.net.now < self.stop_at

    def logs(self) -> FlowLogs:
        cap = self.stream.rate_cap
        return FlowLogs(self.flow_id, self.kind, self.send_log, self.sink.recv_log, (self.dir,),
                        self.start_at, {"rate_cap_bps": cap, "losses": self.losses,
                                        "timeouts": self.timeouts, "final_cwnd": float(self.stream.cwnd)})
