"""File-transfer workload for record/replay comparisons."""

from __future__ import annotations

from collections import OrderedDict
from typing import Optional

from .core import (
    ACK_BYTES, ACK_RECV, ACK_SENT, DATA_RECV, DATA_SENT, DEFAULT_PACKET_BYTES, UP, Direction, Flow,
    FlowLogs, LogRecord, new_record, Packet, PacketKind, Timestamp, US_PER_S,
)
from .saturator import FeedbackChannel


class BulkTransferFlow(Flow):
    """Moves ``total_bytes`` with a fixed window, ACKs on the out-of-band feedback path.

    Packets overtaken by a later ACK count as lost and their bytes are sent again as new
    packets, so the transfer always finishes when the link keeps delivering.
    """

    kind = "bulk"

    def __init__(self, flow_id: int, total_bytes: int, window: int = 256,
                 packet_size: int = DEFAULT_PACKET_BYTES, direction: Direction = UP,
                 feedback: Optional[FeedbackChannel] = None, start: Timestamp = 0,
                 stall_timeout: Timestamp = US_PER_S):
        if total_bytes < 0:
            raise ValueError("total_bytes must be >= 0")
        if window < 1:
            raise ValueError("window must be >= 1")
        self.flow_id = flow_id
        self.total_bytes = total_bytes
        self.window = window
        self.packet_size = packet_size
        self.dir = direction
        self.feedback = feedback if feedback is not None else FeedbackChannel(seed=flow_id)
        self.start_at = start
        self.stall_timeout = stall_timeout
        self.acked_bytes = 0
        self.next_seq = 0
        self.completed_at: Optional[Timestamp] = None
        self.send_log: list[LogRecord] = []
        self.recv_log: list[LogRecord] = []
        self._outstanding: OrderedDict[int, tuple[Timestamp, int]] = OrderedDict()
        self._outstanding_bytes = 0
        self._last_ack = start
        self.net = None

    @property
    def done(self) -> bool:
        return self.acked_bytes >= self.total_bytes

    def start(self, net) -> None:
        self.net = net
        if self.done:
            self.completed_at = self.start_at
            return
        net.schedule(self.start_at, self._kick)
        net.schedule(self.start_at + self.stall_timeout, self._watch)

    def _kick(self, now: Timestamp, _=None) -> None:
        self._last_ack = now
        self._pump(now)

    def _pump(self, now: Timestamp) -> None:
        out = self._outstanding
        while len(out) < self.window:
            remaining = self.total_bytes - self.acked_bytes - self._outstanding_bytes
            if remaining <= 0:
                return
            size = min(self.packet_size, remaining)
            seq = self.next_seq
            self.next_seq += 1
            out[seq] = (now, size)
            self._outstanding_bytes += size
            self.send_log.append(new_record((DATA_SENT, now, seq, size, self.dir, None)))
            self.net.send(Packet(seq, size, self.dir, PacketKind.DATA, self.flow_id, now))

    def on_packet(self, pkt: Packet, now: Timestamp) -> None:
        self.recv_log.append(new_record((DATA_RECV, now, pkt.seq, pkt.size_bytes, pkt.dir, None)))
        self.recv_log.append(new_record((ACK_SENT, now, pkt.seq, ACK_BYTES, pkt.dir, None)))
        arrival = self.feedback.transmit(now)
        if arrival is not None:
            self.net.schedule(arrival, self._on_ack, pkt.seq)

    def _on_ack(self, now: Timestamp, seq: int) -> None:
        out = self._outstanding
        entry = out.pop(seq, None)
        if entry is None:
            return
        sent_at, size = entry
        self._outstanding_bytes -= size
        while out:
            oldest = next(iter(out))
            if oldest > seq:
                break
            _, (_, lost_size) = out.popitem(last=False)
            self._outstanding_bytes -= lost_size
        self.acked_bytes += size
        self._last_ack = now
        self.send_log.append(new_record((ACK_RECV, now, seq, ACK_BYTES, self.dir, now - sent_at)))
        if self.done:
            if self.completed_at is None:
                self.completed_at = now
            return
        self._pump(now)

    def _watch(self, now: Timestamp, _=None) -> None:
        if self.done:
            return
        if self._outstanding and now - self._last_ack >= self.stall_timeout:
            self._outstanding.clear()
            self._outstanding_bytes = 0
            self._last_ack = now
            self._pump(now)
        self.net.schedule(now + self.stall_timeout // 4, self._watch)

    @property
    def pending(self) -> bool:
        return not self.done

    def logs(self) -> FlowLogs:
        return FlowLogs(self.flow_id, self.kind, self.send_log, self.recv_log, (self.dir,), self.start_at,
                        {"total_bytes": self.total_bytes, "sender_completed_at": self.completed_at})
