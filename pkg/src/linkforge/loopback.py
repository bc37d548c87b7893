"""Saturator over real UDP sockets on localhost.

Data flows sender -> receiver on one socket pair; ACKs return on a second pair, so the
feedback path stays separate from the measured one. Each side runs in its own thread and
owns its own state machine; the only shared object is the stop flag.

Wire format (network byte order): data is ``seq:u32, sent_at_us:u64`` padded to the packet
size; an ACK is ``seq:u32, recv_at_us:u64``.
"""

from __future__ import annotations

import logging
import select
import socket
import struct
import threading
import time
from dataclasses import dataclass
from typing import Optional

from .core import DEFAULT_PACKET_BYTES, UP, FlowLogs, Packet, PacketKind, Timestamp, US_PER_S
from .saturator import CELLULAR, AckPacket, ControllerParams, Mode, SaturatorReceiver, SaturatorSender

log = logging.getLogger(__name__)

HEADER = struct.Struct("!IQ")
HOST = "127.0.0.1"


@dataclass
class LoopbackConfig:
    duration: Timestamp = 10 * US_PER_S
    params: ControllerParams = CELLULAR
    packet_size: int = DEFAULT_PACKET_BYTES
    rate_bps: Optional[int] = None  # sender-side pacing; None sends as fast as the window allows
    watchdog_timeout: Timestamp = US_PER_S // 4
    block_feedback: bool = False
    data_port: int = 0  # 0 lets the OS choose
    feedback_port: int = 0


@dataclass
class LoopbackResult:
    logs: FlowLogs
    watchdog_resets: int
    acks_sent: int
    elapsed: float


class _Clock:
    def __init__(self):
        self.t0 = time.monotonic_ns()

    def now(self) -> Timestamp:
        return (time.monotonic_ns() - self.t0) // 1000


def _bind(port: int) -> socket.socket:
    s = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    try:
        s.bind((HOST, port))
    except OSError:
        s.close()
        raise
    return s


def run_loopback(cfg: LoopbackConfig, flow_id: int = 1) -> LoopbackResult:
    """Run one one-way saturator over localhost for ``cfg.duration``. Raises OSError on bind failure."""
    data_rx = _bind(cfg.data_port)
    try:
        fb_rx = _bind(cfg.feedback_port)
    except OSError:
        data_rx.close()
        raise
    data_tx = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    fb_tx = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    data_addr = data_rx.getsockname()
    fb_addr = fb_rx.getsockname()

    clock = _Clock()
    stop = threading.Event()
    sender = SaturatorSender(cfg.params, UP, flow_id, Mode.ONE_WAY, cfg.packet_size)
    receiver = SaturatorReceiver(UP)
    counters = {"acks_sent": 0}
    pad = bytes(max(0, cfg.packet_size - HEADER.size))
    gap = None if cfg.rate_bps is None else cfg.packet_size * 8 * US_PER_S / cfg.rate_bps

    def send_loop():
        next_allowed = 0.0
        while not stop.is_set():
            now = clock.now()
            if now >= cfg.duration:
                break
            while True:
                if gap is not None and now < next_allowed:
                    break
                pkt = sender.send_opportunity(now)
                if pkt is None:
                    break
                data_tx.sendto(HEADER.pack(pkt.seq, now) + pad, data_addr)
                if gap is not None:
                    next_allowed = max(next_allowed, now) + gap
            wait = 0.005 if gap is None else max(0.0, min(0.005, (next_allowed - clock.now()) / US_PER_S))
            ready, _, _ = select.select([fb_rx], [], [], wait)
            while ready:
                buf = fb_rx.recv(64)
                seq, recv_at = HEADER.unpack_from(buf)
                sender.on_ack(AckPacket(seq, recv_at), clock.now())
                ready, _, _ = select.select([fb_rx], [], [], 0)
            sender.stall_watchdog(clock.now(), cfg.watchdog_timeout)

    def recv_loop():
        data_rx.settimeout(0.05)
        while not stop.is_set():
            try:
                buf = data_rx.recv(65535)
            except socket.timeout:
                continue
            except OSError:
                break
            now = clock.now()
            seq, sent_at = HEADER.unpack_from(buf)
            ack = receiver.on_data(Packet(seq, len(buf), UP, PacketKind.DATA, flow_id, sent_at), now)
            if not cfg.block_feedback:
                fb_tx.sendto(HEADER.pack(ack.acked_seq, ack.recv_time), fb_addr)
                counters["acks_sent"] += 1

    rx = threading.Thread(target=recv_loop, name="loopback-recv", daemon=True)
    tx = threading.Thread(target=send_loop, name="loopback-send", daemon=True)
    started = time.monotonic()
    rx.start()
    tx.start()
    tx.join()
    # Let packets already on the wire land before closing the receiver.
    time.sleep(0.1)
    stop.set()
    rx.join()
    for s in (data_rx, fb_rx, data_tx, fb_tx):
        s.close()
    logs = FlowLogs(flow_id, "saturator", sender.send_log, receiver.recv_log, (UP,), 0,
                    {"watchdog_resets": sender.watchdog_resets})
    return LoopbackResult(logs, sender.watchdog_resets, counters["acks_sent"], time.monotonic() - started)
