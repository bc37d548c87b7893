"""Small flow machines used only by the tests."""

from linkforge.core import DATA_RECV, DATA_SENT, UP, Flow, FlowLogs, LogRecord, Packet, PacketKind


class BurstFlow(Flow):
    """Offers ``n`` packets at ``at`` in one direction and logs what arrives."""

    kind = "burst"

    def __init__(self, flow_id, n, size=1500, direction=UP, at=0):
        self.flow_id = flow_id
        self.n, self.size, self.dir, self.at = n, size, direction, at
        self.accepted = 0
        self.send_log, self.recv_log = [], []
        self.net = None

    def start(self, net):
        self.net = net
        net.schedule(self.at, self._fire)

    def _fire(self, now, _=None):
        for seq in range(self.n):
            self.send_log.append(LogRecord(DATA_SENT, now, seq, self.size, self.dir))
            if self.net.send(Packet(seq, self.size, self.dir, PacketKind.DATA, self.flow_id, now)):
                self.accepted += 1

    def on_packet(self, pkt, now):
        self.recv_log.append(LogRecord(DATA_RECV, now, pkt.seq, pkt.size_bytes, pkt.dir))

    def logs(self):
        return FlowLogs(self.flow_id, self.kind, self.send_log, self.recv_log, (self.dir,))
