"""Windowed link-saturation protocol.

A sender keeps up to ``window`` data packets outstanding and refills the window every
time feedback arrives. The receiver acknowledges every data packet on a feedback path
that is logically separate from the link being measured. The window follows a
delay-band rule on the smoothed RTT:

* smoothed RTT below ``target_delay_low``  -> window + 1 per ACK
* smoothed RTT above ``target_delay_high`` -> window * 0.9 (floored, at least 1)
* otherwise hold

The sender never reacts to loss directly. An ACK for sequence ``s`` retires every
older outstanding sequence, so lost packets free window slots and the sender
simply sends more.
"""

from __future__ import annotations

import enum
import random
from collections import OrderedDict
from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple, Optional

from .core import (
    ACK_BYTES, ACK_RECV, ACK_SENT, DATA_RECV, DATA_SENT, DEFAULT_PACKET_BYTES, DOWN, UP,
    Direction, Flow, FlowLogs, LogRecord, new_record, Packet, PacketKind, Timestamp, US_PER_MS, US_PER_S,
)


class Mode(enum.Enum):
    ONE_WAY = "one-way"
    TWO_WAY = "two-way"


@dataclass(frozen=True)
class ControllerParams:
    target_delay_low: Timestamp
    target_delay_high: Timestamp
    ewma_alpha: Fraction = Fraction(1, 8)
    window_cap: int = 512
    initial_window: int = 10

    def __post_init__(self):
        object.__setattr__(self, "ewma_alpha", Fraction(self.ewma_alpha))
        if not 0 <= self.target_delay_low < self.target_delay_high:
            raise ValueError("target_delay_low must be below target_delay_high")
        if not 0 < self.ewma_alpha <= 1:
            raise ValueError("ewma_alpha must be in (0, 1]")
        if self.window_cap <= 0 or self.initial_window <= 0:
            raise ValueError("window_cap and initial_window must be positive")
        if self.initial_window > self.window_cap:
            raise ValueError("initial_window must not exceed window_cap")


# LTE-tuned: tolerates ~750 ms of queueing and a window far beyond Wi-Fi driver buffers.
CELLULAR = ControllerParams(target_delay_low=500 * US_PER_MS, target_delay_high=750 * US_PER_MS,
                            window_cap=512, initial_window=10)


def wifi_params(buffer_packets: int) -> ControllerParams:
    """Wi-Fi profile: tight delay band and a window no larger than the bottleneck buffer."""
    return ControllerParams(target_delay_low=50 * US_PER_MS, target_delay_high=100 * US_PER_MS,
                            window_cap=buffer_packets, initial_window=min(10, buffer_packets))


def profile_params(name: str, buffer_packets: int) -> ControllerParams:
    if name == "cellular":
        return CELLULAR
    if name == "wifi":
        return wifi_params(buffer_packets)
    raise ValueError(f"unknown saturator profile {name!r}")


class AckPacket(NamedTuple):
    acked_seq: int
    recv_time: Timestamp
    size_bytes: int = ACK_BYTES


class SaturatorSender:
    def __init__(self, params: ControllerParams = CELLULAR, dir: Direction = UP, flow_id: int = 0,
                 mode: Mode = Mode.ONE_WAY, packet_size: int = DEFAULT_PACKET_BYTES,
                 start: Timestamp = 0):
        self.params = params
        self.dir = dir
        self.flow_id = flow_id
        self.mode = mode
        self.packet_size = packet_size
        self.window = params.initial_window
        self.next_seq = 0
        self.ewma_rtt: Timestamp = 0
        self.send_log: list[LogRecord] = []
        self.unknown_acks = 0
        self.inferred_losses = 0
        self.watchdog_resets = 0
        self.last_ack_at = start
        self._outstanding: OrderedDict[int, Timestamp] = OrderedDict()
        self._have_sample = False
        a = params.ewma_alpha
        self._alpha_num, self._alpha_den = a.numerator, a.denominator

    @property
    def in_flight(self) -> int:
        return len(self._outstanding)

    def send_opportunity(self, now: Timestamp) -> Optional[Packet]:
        if len(self._outstanding) >= self.window:
            return None
        seq = self.next_seq
        self.next_seq = seq + 1
        self._outstanding[seq] = now
        self.send_log.append(new_record((DATA_SENT, now, seq, self.packet_size, self.dir, None)))
        return Packet(seq, self.packet_size, self.dir, PacketKind.DATA, self.flow_id, now)

    def burst(self, now: Timestamp, send) -> int:
        """Hand every packet the window allows to ``send``; same effect as looping send_opportunity."""
        out = self._outstanding
        room = self.window - len(out)
        if room <= 0:
            return 0
        seq0 = self.next_seq
        self.next_seq = seq0 + room
        size, d, fid = self.packet_size, self.dir, self.flow_id
        log = self.send_log.append
        for seq in range(seq0, seq0 + room):
            out[seq] = now
            log(new_record((DATA_SENT, now, seq, size, d, None)))
            send(Packet(seq, size, d, PacketKind.DATA, fid, now))
        return room

    def fill(self, now: Timestamp) -> list[Packet]:
        """Take every send opportunity the window currently allows."""
        out = []
        while True:
            pkt = self.send_opportunity(now)
            if pkt is None:
                return out
            out.append(pkt)

    def on_ack(self, ack: AckPacket, now: Timestamp) -> None:
        outstanding = self._outstanding
        sent_at = outstanding.pop(ack.acked_seq, None)
        if sent_at is None:
            self.unknown_acks += 1
            return
        # Per-direction FIFO: anything older than an acknowledged packet is gone.
        while outstanding:
            oldest = next(iter(outstanding))
            if oldest > ack.acked_seq:
                break
            outstanding.popitem(last=False)
            self.inferred_losses += 1
        self.last_ack_at = now
        sample = now - sent_at
        if self._have_sample:
            n, d = self._alpha_num, self._alpha_den
            self.ewma_rtt = ((d - n) * self.ewma_rtt + n * sample) // d
        else:
            self.ewma_rtt = sample
            self._have_sample = True
        self._control()
        self.send_log.append(new_record((ACK_RECV, now, ack.acked_seq, ack.size_bytes, self.dir, self.ewma_rtt)))

    def _control(self) -> None:
        p = self.params
        if self.ewma_rtt < p.target_delay_low:
            if self.window < p.window_cap:
                self.window += 1
        elif self.ewma_rtt > p.target_delay_high:
            # Never below what is already outstanding, so in_flight <= window holds.
            self.window = max(1, self.window * 9 // 10, len(self._outstanding))

    def stall_watchdog(self, now: Timestamp, timeout: Timestamp) -> bool:
        """Reset after ``timeout`` without feedback while packets are outstanding.

        Returns True when the reset fired.
        """
        if timeout <= 0:
            raise ValueError("timeout must be positive")
        if not self._outstanding or now - self.last_ack_at < timeout:
            return False
        self._outstanding.clear()
        self.window = self.params.initial_window
        self.last_ack_at = now
        self.watchdog_resets += 1
        return True


class SaturatorReceiver:
    def __init__(self, dir: Direction = UP):
        self.dir = dir
        self.recv_log: list[LogRecord] = []
        self.duplicates = 0
        self._seen: set[int] = set()

    def on_data(self, pkt: Packet, now: Timestamp) -> AckPacket:
        if pkt.kind is not PacketKind.DATA:
            raise ValueError("receiver only accepts data packets")
        if pkt.seq in self._seen:
            self.duplicates += 1
        else:
            self._seen.add(pkt.seq)
        self.recv_log.append(new_record((DATA_RECV, now, pkt.seq, pkt.size_bytes, pkt.dir, None)))
        self.recv_log.append(new_record((ACK_SENT, now, pkt.seq, ACK_BYTES, pkt.dir, None)))
        return AckPacket(pkt.seq, now)


@dataclass
class FeedbackChannel:
    """Out-of-band ACK path with fixed delay and independent random loss."""

    delay: Timestamp = 1 * US_PER_MS
    loss: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.delay < 0:
            raise ValueError("feedback delay must be >= 0")
        if not 0 <= self.loss <= 1:
            raise ValueError("feedback loss must be in [0, 1]")
        self._rng = random.Random(f"feedback:{self.seed}")
        self.lost = 0

    def transmit(self, now: Timestamp) -> Optional[Timestamp]:
        """Arrival time of an ACK sent now, or None if it is lost."""
        if self.loss and self._rng.random() < self.loss:
            self.lost += 1
            return None
        return now + self.delay


class SaturatorFlow(Flow):
    """One-way (single direction) or two-way (independent up and down machines) saturator
    attached to a link. ACKs take the feedback channel unless ``feedback_via_link`` is set,
    in which case they queue on the link's reverse direction like any other packet."""

    kind = "saturator"

    def __init__(self, flow_id: int, params=CELLULAR, mode: Mode = Mode.ONE_WAY,
                 direction: Direction = UP, packet_size: int = DEFAULT_PACKET_BYTES,
                 feedback: Optional[FeedbackChannel] = None, feedback_via_link: bool = False,
                 watchdog_timeout: Timestamp = US_PER_S, start: Timestamp = 0,
                 reverse_start: Optional[Timestamp] = None, stop: Optional[Timestamp] = None):
        self.flow_id = flow_id
        self.params = params
        self.mode = mode
        self.start_at = start
        self.stop_at = stop
        self.feedback = feedback if feedback is not None else FeedbackChannel(seed=flow_id)
        self.feedback_via_link = feedback_via_link
        self.watchdog_timeout = watchdog_timeout
        dirs = [direction] if mode is Mode.ONE_WAY else [UP, DOWN]
        self.directions = tuple(dirs)
        starts = {d: start for d in dirs}
        if mode is Mode.TWO_WAY and reverse_start is not None:
            starts[DOWN] = reverse_start
        self.starts = starts
        # A dict gives each direction its own params (the wifi window tracks that direction's buffer).
        per_dir = params if isinstance(params, dict) else {d: params for d in dirs}
        self.senders = {d: SaturatorSender(per_dir[d], d, flow_id, mode, packet_size, starts[d]) for d in dirs}
        self.receivers = {d: SaturatorReceiver(d) for d in dirs}
        self.net = None

    def start(self, net) -> None:
        self.net = net
        for d, t in self.starts.items():
            net.schedule(t, self._begin, d)

    def _begin(self, now: Timestamp, d: Direction) -> None:
        self.senders[d].last_ack_at = now
        self._pump(now, d)
        net = self.net
        net.schedule(now + self._watch_period(), self._watch, d)

    def _watch_period(self) -> Timestamp:
        return max(1, self.watchdog_timeout // 4)

    def _active(self, now: Timestamp) -> bool:
        return self.stop_at is None or now < self.stop_at

    def _pump(self, now: Timestamp, d: Direction) -> None:
        if not self._active(now):
            return
        self.senders[d].burst(now, self.net.send)

    def _watch(self, now: Timestamp, d: Direction) -> None:
        if not self._active(now):
            return
        if self.senders[d].stall_watchdog(now, self.watchdog_timeout):
            self._pump(now, d)
        self.net.schedule(now + self._watch_period(), self._watch, d)

    def on_packet(self, pkt: Packet, now: Timestamp) -> None:
        if pkt.kind is PacketKind.DATA:
            ack = self.receivers[pkt.dir].on_data(pkt, now)
            if self.feedback_via_link:
                self.net.send(Packet(ack.acked_seq, ack.size_bytes, pkt.dir.reverse, PacketKind.ACK,
                                     self.flow_id, now))
            else:
                arrival = self.feedback.transmit(now)
                if arrival is not None:
                    self.net.schedule(arrival, self._ack_arrived, (pkt.dir, ack))
        elif pkt.kind is PacketKind.ACK:
            # ACK travelling on the link: it moves opposite to the data it acknowledges.
            self._ack_arrived(now, (pkt.dir.reverse, AckPacket(pkt.seq, pkt.sent_at)))

    def _ack_arrived(self, now: Timestamp, item) -> None:
        d, ack = item
        self.senders[d].on_ack(ack, now)
        self._pump(now, d)

    @property
    def pending(self) -> bool:
        return True

    def logs(self) -> FlowLogs:
        send = sorted((r for s in self.senders.values() for r in s.send_log), key=lambda r: r.t)
        recv = sorted((r for rc in self.receivers.values() for r in rc.recv_log), key=lambda r: r.t)
        extra = {
            "unknown_acks": sum(s.unknown_acks for s in self.senders.values()),
            "watchdog_resets": sum(s.watchdog_resets for s in self.senders.values()),
            "feedback_lost": self.feedback.lost,
        }
        return FlowLogs(self.flow_id, self.kind, send, recv, self.directions, self.start_at, extra)
