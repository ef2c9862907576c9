"""Layered streaming sources built on the shared congestion controller.

Both sources encode their content in cumulative layers and pick how many
layers to send from the controller's rate estimate. They differ in how
they learn that estimate:

  * AlfLayeredSource transmits on grants, queries the rate at every
    transmission opportunity, and re-picks the layer each time. It sends
    as fast as the shared window allows, so its layer choice rides the
    congestion sawtooth directly.

  * PacedLayeredSource never requests grants. It sends on its own timer
    at the chosen layer's rate and re-picks the layer only when a rate
    callback fires, i.e. when the estimate crosses the configured
    thresholds. Between callbacks it keeps its clock unchanged.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

from ..core import CongestionManager, FlowKey
from ..sim import EventLoop, Packet, PacketKind, Path
from ..trace import TraceKind, Tracer
from ..transport.feedback import FeedbackTracker

DEFAULT_LAYER_RATES = (16384, 32768, 65536, 131072)
DEFAULT_SAFETY = 0.9


@dataclass(frozen=True)
class LayerConfig:
    """Cumulative layer rates in bytes/second, lowest first."""

    rates: Tuple[int, ...] = DEFAULT_LAYER_RATES
    safety: float = DEFAULT_SAFETY

    def __post_init__(self) -> None:
        if not self.rates:
            raise ValueError("at least one layer required")
        if any(b <= a for a, b in zip(self.rates, self.rates[1:])):
            raise ValueError("layer rates must be strictly increasing")
        if not 0.0 < self.safety <= 1.0:
            raise ValueError("safety must be in (0, 1]")

    def pick(self, rate: float) -> int:
        """Highest index whose rate fits under rate*safety; floor is 0."""
        budget = rate * self.safety
        best = 0
        for i, r in enumerate(self.rates):
            if r <= budget:
                best = i
        return best

    def rate_of(self, layer: int) -> int:
        return self.rates[layer]


class AlfLayeredSource:
    """Grant-clocked source: one packet per grant, layer re-picked each time."""

    def __init__(self, cm: CongestionManager, key: FlowKey, data_path: Path,
                 loop: EventLoop, layers: Optional[LayerConfig] = None,
                 packet_size: Optional[int] = None,
                 tracer: Optional[Tracer] = None,
                 request_before_notify: bool = False) -> None:
        self.cm = cm
        self.loop = loop
        self.path = data_path
        self.layers = layers if layers is not None else LayerConfig()
        self.tracer = tracer
        self.request_before_notify = request_before_notify
        self.flow = cm.open(key)
        cm.register_send(self.flow, self._on_grant)
        self.packet_size = packet_size or cm.mtu(self.flow)
        self.tracker = FeedbackTracker()
        self.layer = 0
        self.active = False
        self.sent_packets = 0
        self.sent_bytes = 0
        self._seq = 0

    def start(self) -> None:
        self.active = True
        if self.tracer is not None:
            self.tracer.emit(self.loop.now, self.flow,
                             TraceKind.LAYER_CHANGE, self.layer, 0.0)
        self.cm.request(self.flow)

    def stop(self) -> None:
        self.active = False

    def _on_grant(self, fid: int) -> None:
        if not self.active:
            self.cm.notify(self.flow, 0)
            return
        now = self.loop.now
        q = self.cm.query(self.flow)
        layer = self.layers.pick(q.rate)
        if layer != self.layer:
            self.layer = layer
            if self.tracer is not None:
                self.tracer.emit(now, self.flow, TraceKind.LAYER_CHANGE,
                                 layer, q.rate)
        size = self.packet_size
        seq = self._seq
        self._seq += 1
        self.tracker.on_sent(seq, size, now)
        if self.tracer is not None:
            self.tracer.emit(now, self.flow, TraceKind.SEND, seq, size)
        self.path.send(Packet(flow=self.flow, seq=seq, size=size,
                              kind=PacketKind.DATA, sent_at=now,
                              meta=layer))
        self.sent_packets += 1
        self.sent_bytes += size
        if self.request_before_notify:
            self.cm.request(self.flow)
            self.cm.notify(self.flow, size)
        else:
            self.cm.notify(self.flow, size)
            self.cm.request(self.flow)

    def on_feedback(self, pkt: Packet, now: float) -> None:
        report = self.tracker.on_app_ack(pkt.meta, now)
        if report is not None:
            self.cm.update(self.flow, report)


class PacedLayeredSource:
    """Self-clocked source: sends at the layer rate, adapts on rate callbacks."""

    def __init__(self, cm: CongestionManager, key: FlowKey, data_path: Path,
                 loop: EventLoop, layers: Optional[LayerConfig] = None,
                 packet_size: int = 1500,
                 thresh: Tuple[float, float] = (0.7, 1.4),
                 tracer: Optional[Tracer] = None) -> None:
        self.cm = cm
        self.loop = loop
        self.path = data_path
        self.layers = layers if layers is not None else LayerConfig()
        self.packet_size = packet_size
        self.tracer = tracer
        self.flow = cm.open(key)
        cm.register_update(self.flow, self._on_rate)
        cm.thresh(self.flow, thresh[0], thresh[1])
        self.tracker = FeedbackTracker()
        self.layer = 0
        self.active = False
        self.sent_packets = 0
        self.sent_bytes = 0
        self._seq = 0
        self._timer = None

    @property
    def interval(self) -> float:
        return self.packet_size / self.layers.rate_of(self.layer)

    def start(self) -> None:
        self.active = True
        if self.tracer is not None:
            self.tracer.emit(self.loop.now, self.flow,
                             TraceKind.LAYER_CHANGE, self.layer, 0.0)
        self._send_frame()

    def stop(self) -> None:
        self.active = False
        if self._timer is not None:
            self._timer.cancel()
            self._timer = None

    def _send_frame(self) -> None:
        if not self.active:
            return
        now = self.loop.now
        size = self.packet_size
        seq = self._seq
        self._seq += 1
        self.tracker.on_sent(seq, size, now)
        if self.tracer is not None:
            self.tracer.emit(now, self.flow, TraceKind.SEND, seq, size)
        self.path.send(Packet(flow=self.flow, seq=seq, size=size,
                              kind=PacketKind.DATA, sent_at=now,
                              meta=self.layer))
        self.sent_packets += 1
        self.sent_bytes += size
        self.cm.notify(self.flow, size)
        # new period takes effect here if the layer changed mid-interval
        self._timer = self.loop.schedule_after(self.interval, self._send_frame)

    def _on_rate(self, fid: int, rate: float, srtt: float,
                 loss_rate: float) -> None:
        now = self.loop.now
        layer = self.layers.pick(rate)
        if layer != self.layer:
            self.layer = layer
            if self.tracer is not None:
                self.tracer.emit(now, self.flow, TraceKind.LAYER_CHANGE,
                                 layer, rate)

    def on_feedback(self, pkt: Packet, now: float) -> None:
        report = self.tracker.on_app_ack(pkt.meta, now)
        if report is not None:
            self.cm.update(self.flow, report)
