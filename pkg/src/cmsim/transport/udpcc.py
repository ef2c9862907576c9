"""Datagram socket whose transmissions are paced by the shared controller.

Each send() queues one datagram and asks the controller for a grant;
datagrams leave in FIFO order, one per grant. Reliability is not
provided. Loss and RTT information comes back through application-level
ACK packets, which are folded into feedback reports for the controller.

With defer_requests=True the socket does not request grants itself;
instead it records its flow in a shared batch list so the owner can
issue a single bulk request covering many sockets.
"""
from __future__ import annotations

from collections import deque
from typing import Callable, Deque, List, Optional, Tuple

from ..core import CongestionManager, FlowKey
from ..errors import SocketClosed
from ..sim import EventLoop, Packet, PacketKind, Path
from ..trace import TraceKind, Tracer
from .feedback import FeedbackTracker


class UdpCcSocket:
    def __init__(self, cm: CongestionManager, key: FlowKey, data_path: Path,
                 loop: EventLoop, tracer: Optional[Tracer] = None,
                 defer_requests: bool = False,
                 pending_request_batch: Optional[List[int]] = None,
                 on_sent: Optional[Callable[[int, int], None]] = None) -> None:
        self.cm = cm
        self.loop = loop
        self.path = data_path
        self.tracer = tracer
        self.defer_requests = defer_requests
        self.pending_request_batch = pending_request_batch
        self.on_sent = on_sent
        self.flow = cm.open(key)
        cm.register_send(self.flow, self._on_grant)
        self.tracker = FeedbackTracker()
        self.closed = False
        self._queue: Deque[Tuple[int, int]] = deque()
        self._next_seq = 0
        self.sent_packets = 0
        self.sent_bytes = 0

    @property
    def queue_len(self) -> int:
        return len(self._queue)

    def send(self, size: int) -> int:
        """Queue one datagram of the given size; returns its sequence number."""
        if self.closed:
            raise SocketClosed()
        seq = self._next_seq
        self._next_seq += 1
        self._queue.append((seq, int(size)))
        if self.defer_requests:
            if self.pending_request_batch is not None:
                self.pending_request_batch.append(self.flow)
        else:
            self.cm.request(self.flow)
        return seq

    def _on_grant(self, fid: int) -> None:
        if not self._queue:
            self.cm.notify(self.flow, 0)
            return
        seq, size = self._queue.popleft()
        now = self.loop.now
        self.tracker.on_sent(seq, size, now)
        if self.tracer is not None:
            self.tracer.emit(now, self.flow, TraceKind.SEND, seq, size)
        pkt = Packet(flow=self.flow, seq=seq, size=size,
                     kind=PacketKind.DATA, sent_at=now)
        self.path.send(pkt)
        self.cm.notify(self.flow, size)
        self.sent_packets += 1
        self.sent_bytes += size
        if self.on_sent is not None:
            self.on_sent(seq, size)

    def on_feedback(self, pkt: Packet, now: float) -> None:
        report = self.tracker.on_app_ack(pkt.meta, now)
        if report is not None:
            self.cm.update(self.flow, report)

    def close(self) -> None:
        if self.closed:
            return
        self.closed = True
        self.cm.close(self.flow)
