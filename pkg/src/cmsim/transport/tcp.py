"""Reliable byte-stream transport driven by the congestion core.

The sender keeps sequencing, acknowledgment and retransmission state but
owns no congestion window: every segment goes out on a grant, and every
ACK, dupack or timeout is folded back into the shared controller:

  * new cumulative ACK      -> no-loss report for the newly acked bytes,
                               with an RTT sample when the timed segment
                               was never retransmitted (Karn's rule);
  * third duplicate ACK     -> transient-loss report for one segment, the
                               head is queued for retransmission and a
                               fresh grant is requested;
  * further duplicate ACKs  -> no-loss report crediting one MTU received,
                               which opens the shared window so
                               transmission continues during recovery;
  * ECN-echo ACK            -> the no-loss report becomes an ECN report;
  * retransmission timeout  -> persistent-loss report discharging the
                               flow's in-flight bytes, head retransmitted,
                               RTO doubles.

Retransmissions take priority over new data when a grant arrives.
Connection setup is a single SYN/SYNACK exchange carrying no data; it is
retried on its own timer and never charged to the controller.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Callable, Deque, List, Optional, Tuple

from ..core import CongestionManager, FeedbackReport, FlowKey, LossMode
from ..errors import ConnectionClosed
from ..sim import EventLoop, Packet, PacketKind, Path
from ..trace import TraceKind, Tracer

ACK_SIZE = 40
SYN_RETRY = 1.0
DELACK_TIMEOUT = 0.2
MAX_RTO = 60.0


@dataclass(frozen=True)
class AckInfo:
    ack: int
    ece: bool = False


class TcpReceiver:
    """Cumulative-ACK receiver with out-of-order buffering.

    Out-of-order arrivals and hole-filling arrivals are acked immediately;
    plain in-order data may be delay-acked (one ACK per two segments or
    DELACK_TIMEOUT). A marked data packet sets the ECN echo on the next ACK.
    """

    def __init__(self, loop: EventLoop, ack_path: Path, flow: int,
                 delayed_ack: bool = False, ack_size: int = ACK_SIZE) -> None:
        self.loop = loop
        self.ack_path = ack_path
        self.flow = flow
        self.delayed_ack = delayed_ack
        self.ack_size = ack_size
        self.rcv_nxt = 0
        self._ooo: List[Tuple[int, int]] = []   # disjoint [s, e), sorted
        self._pending_segs = 0
        self._delack_ev = None
        self._ece_pending = False

    @property
    def in_order_bytes(self) -> int:
        return self.rcv_nxt

    def on_data(self, pkt: Packet, now: float) -> None:
        if pkt.meta == "syn":
            reply = Packet(flow=self.flow, seq=0, size=self.ack_size,
                           kind=PacketKind.ACK, sent_at=now, meta="synack")
            self.ack_path.send(reply)
            return
        if pkt.ecn_marked:
            self._ece_pending = True
        s, e = pkt.seq, pkt.seq + pkt.size
        if s <= self.rcv_nxt:
            filled_hole = bool(self._ooo)
            if e > self.rcv_nxt:
                self.rcv_nxt = e
                while self._ooo and self._ooo[0][0] <= self.rcv_nxt:
                    self.rcv_nxt = max(self.rcv_nxt, self._ooo.pop(0)[1])
            if filled_hole or not self.delayed_ack:
                self._ack_now()
            else:
                self._pending_segs += 1
                if self._pending_segs >= 2:
                    self._ack_now()
                elif self._delack_ev is None:
                    self._delack_ev = self.loop.schedule_after(
                        DELACK_TIMEOUT, self._on_delack)
        else:
            self._insert_ooo(s, e)
            self._ack_now()  # duplicate ACK for the hole

    def _insert_ooo(self, s: int, e: int) -> None:
        merged: List[Tuple[int, int]] = []
        for a, b in self._ooo + [(s, e)]:
            merged.append((a, b))
        merged.sort()
        out: List[Tuple[int, int]] = []
        for a, b in merged:
            if out and a <= out[-1][1]:
                out[-1] = (out[-1][0], max(out[-1][1], b))
            else:
                out.append((a, b))
        self._ooo = out

    def _on_delack(self) -> None:
        self._delack_ev = None
        if self._pending_segs > 0:
            self._ack_now()

    def _ack_now(self) -> None:
        if self._delack_ev is not None:
            self._delack_ev.cancel()
            self._delack_ev = None
        self._pending_segs = 0
        info = AckInfo(ack=self.rcv_nxt, ece=self._ece_pending)
        self._ece_pending = False
        pkt = Packet(flow=self.flow, seq=self.rcv_nxt, size=self.ack_size,
                     kind=PacketKind.ACK, sent_at=self.loop.now, meta=info)
        self.ack_path.send(pkt)


class TcpSender:
    """Sender half of the reliable stream; windowing lives in the manager."""

    def __init__(self, cm: CongestionManager, key: FlowKey, data_path: Path,
                 loop: EventLoop, tracer: Optional[Tracer] = None,
                 handshake: bool = True, max_window: int = 65535,
                 on_complete: Optional[Callable[[float], None]] = None) -> None:
        self.cm = cm
        self.loop = loop
        self.path = data_path
        self.tracer = tracer
        self.on_complete = on_complete
        self.flow = cm.open(key)
        cm.register_send(self.flow, self._on_grant)
        self.mss = cm.mtu(self.flow)
        # Receiver's advertised window: bounds unacked sequence space so a
        # recovery episode can only strand a bounded region behind a hole.
        self.max_window = int(max_window)
        self.closed = False
        self.total = 0          # bytes written by the app so far
        self.snd_una = 0
        self.snd_nxt = 0
        self.dup_acks = 0
        self.backoff = 1
        self.rtx: Deque[Tuple[int, int]] = deque()
        self._requested = 0     # bytes covered by issued grants requests
        self._deferred = 0      # requests waiting for the handshake
        self._charged = 0       # bytes charged to the manager, not yet reported
        self._timed: Optional[Tuple[int, float]] = None
        self._timed_rtx = False
        self._rto_ev = None
        self._syn_ev = None
        self._syn_wait = SYN_RETRY
        self.established = not handshake
        self._completed = False

    def start(self) -> None:
        if not self.established:
            self._send_syn()

    # -- handshake --------------------------------------------------------

    def _send_syn(self) -> None:
        pkt = Packet(flow=self.flow, seq=0, size=ACK_SIZE,
                     kind=PacketKind.ACK, sent_at=self.loop.now, meta="syn")
        self.path.send(pkt)
        self._syn_ev = self.loop.schedule_after(self._syn_wait, self._syn_retry)

    def _syn_retry(self) -> None:
        self._syn_ev = None
        if not self.established:
            self._syn_wait = min(self._syn_wait * 2.0, MAX_RTO)
            self._send_syn()

    def _on_established(self) -> None:
        if self.established:
            return
        self.established = True
        if self._syn_ev is not None:
            self._syn_ev.cancel()
            self._syn_ev = None
        n, self._deferred = self._deferred, 0
        for _ in range(n):
            self.cm.request(self.flow)

    # -- app side ---------------------------------------------------------

    def write(self, nbytes: int) -> None:
        """Queue nbytes of stream data; one grant request per MTU chunk."""
        if self.closed:
            raise ConnectionClosed()
        self.total += int(nbytes)
        self._top_up()

    def _top_up(self) -> None:
        """Issue grant requests for queued data that fits the send window."""
        limit = min(self.total, self.snd_una + self.max_window)
        while self._requested < limit:
            self._requested += self.mss
            if self.established:
                self.cm.request(self.flow)
            else:
                self._deferred += 1

    def close(self) -> None:
        self.closed = True
        if self._rto_ev is not None:
            self._rto_ev.cancel()
            self._rto_ev = None
        if self._syn_ev is not None:
            self._syn_ev.cancel()
            self._syn_ev = None
        self.cm.close(self.flow)

    # -- grants -----------------------------------------------------------

    def _on_grant(self, fid: int) -> None:
        now = self.loop.now
        while self.rtx and self.rtx[0][1] <= self.snd_una:
            self.rtx.popleft()
        if self.rtx:
            s, e = self.rtx.popleft()
            s = max(s, self.snd_una)
            size = e - s
            if self._timed is not None and s < self._timed[0]:
                self._timed_rtx = True
            self._emit(s, size, now)
            return
        in_window = self.snd_nxt - self.snd_una < self.max_window
        if self.snd_nxt < self.total and in_window:
            size = min(self.mss, self.total - self.snd_nxt)
            if self._timed is None:
                self._timed = (self.snd_nxt + size, now)
                self._timed_rtx = False
            self._emit(self.snd_nxt, size, now)
            self.snd_nxt += size
            return
        if self.snd_nxt < self.total:
            # Window-blocked: hand the request back so _top_up can reissue
            # it once the window slides.
            self._requested = max(self.snd_nxt, self._requested - self.mss)
        self.cm.notify(self.flow, 0)

    def _emit(self, seq: int, size: int, now: float) -> None:
        pkt = Packet(flow=self.flow, seq=seq, size=size,
                     kind=PacketKind.DATA, sent_at=now)
        if self.tracer is not None:
            self.tracer.emit(now, self.flow, TraceKind.SEND, seq, size)
        self.path.send(pkt)
        self._charged += size
        self.cm.notify(self.flow, size)
        if self._rto_ev is None:
            self._arm_rto()

    # -- timers -----------------------------------------------------------

    def _rto_value(self) -> float:
        return min(self.cm.rto_estimate(self.flow) * self.backoff, MAX_RTO)

    def _arm_rto(self) -> None:
        if self._rto_ev is not None:
            self._rto_ev.cancel()
        self._rto_ev = self.loop.schedule_after(self._rto_value(), self._on_rto)

    def _cancel_rto(self) -> None:
        if self._rto_ev is not None:
            self._rto_ev.cancel()
            self._rto_ev = None

    def _on_rto(self) -> None:
        self._rto_ev = None
        if self.closed or self.snd_nxt <= self.snd_una:
            return
        # Queue the retransmission before reporting: the report can hand
        # out a grant on the spot, and that grant must resend the hole
        # rather than push new data past it.
        seg = min(self.mss, self.snd_nxt - self.snd_una)
        self.rtx.append((self.snd_una, self.snd_una + seg))
        if self._timed is not None:
            self._timed_rtx = True
        discharge = self._charged
        self._charged = 0
        self.cm.update(self.flow, FeedbackReport(
            nsent=discharge, nrecd=0, lossmode=LossMode.PERSISTENT))
        self.backoff = min(self.backoff * 2, 64)
        self.cm.request(self.flow)
        self._arm_rto()

    # -- network side -----------------------------------------------------

    def on_ack(self, pkt: Packet, now: float) -> None:
        if self.closed:
            return
        if pkt.meta == "synack":
            self._on_established()
            return
        info = pkt.meta
        if not isinstance(info, AckInfo):
            return
        ack = info.ack
        if ack < self.snd_una:
            return
        if ack == self.snd_una:
            if self.snd_nxt > self.snd_una:
                self.dup_acks += 1
                if self.dup_acks == 3:
                    seg = min(self.mss, self.snd_nxt - self.snd_una)
                    self.rtx.append((self.snd_una, self.snd_una + seg))
                    if self._timed is not None:
                        self._timed_rtx = True
                    # Never report more resolved bytes than were charged:
                    # dupacks and the later cumulative ACK cover the same
                    # window, so each credit is capped by what remains.
                    credit = min(seg, self._charged)
                    self._charged -= credit
                    self.cm.update(self.flow, FeedbackReport(
                        nsent=credit, nrecd=0, lossmode=LossMode.TRANSIENT))
                    self.cm.request(self.flow)
                elif self.dup_acks > 3:
                    credit = min(self.mss, self._charged)
                    self._charged -= credit
                    if credit > 0:
                        self.cm.update(self.flow, FeedbackReport(
                            nsent=credit, nrecd=credit,
                            lossmode=LossMode.NO_LOSS))
            return
        newly = ack - self.snd_una
        sample = None
        if self._timed is not None and ack >= self._timed[0]:
            if not self._timed_rtx:
                sample = now - self._timed[1]
            self._timed = None
        self.snd_una = ack
        while self.rtx and self.rtx[0][1] <= self.snd_una:
            self.rtx.popleft()
        self.dup_acks = 0
        self.backoff = 1
        # Resolve every charge at or below the ack point, but none of the
        # bytes still in flight beyond it; this re-syncs the charge account
        # with the unacked sequence span after a recovery episode, where
        # dupack credits and retransmission charges have pulled them apart.
        credit = max(0, self._charged - (self.snd_nxt - self.snd_una))
        self._charged -= credit
        mode = LossMode.ECN if info.ece else LossMode.NO_LOSS
        self.cm.update(self.flow, FeedbackReport(
            nsent=credit, nrecd=credit, lossmode=mode, rtt=sample))
        self._top_up()
        if self.snd_nxt > self.snd_una:
            self._arm_rto()
        else:
            self._cancel_rto()
        if not self._completed and self.total > 0 and self.snd_una >= self.total:
            self._completed = True
            if self.on_complete is not None:
                self.on_complete(now)
