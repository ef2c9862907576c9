"""Adaptive application behavior: layer selection from the shared rate
estimate, grant-clocked versus self-paced transmission, token-bucket
policing, and the drop-from-head freshness rules of the audio source.
"""
import pytest

from cmsim.apps.audio import CbrAudioSource, TokenBucket
from cmsim.apps.layered import (AlfLayeredSource, LayerConfig,
                                PacedLayeredSource)
from cmsim.core import CongestionManager, FeedbackReport, FlowKey, LossMode
from cmsim.core import Proto
from cmsim.sim import EventLoop
from cmsim.trace import TraceKind, Tracer


class CollectPath:
    """Stands in for a network path; just records what was sent."""

    def __init__(self):
        self.packets = []

    def send(self, pkt):
        self.packets.append(pkt)


def key(port=7000):
    return FlowKey("client", port, "server", 1234, Proto.UDP)


def grow(cm, fid, reports, rtt=0.1):
    for _ in range(reports):
        cm.update(fid, FeedbackReport(0, 1500, LossMode.NO_LOSS, rtt=rtt))


# -- layer table ----------------------------------------------------------

def test_layer_config_pick_boundaries():
    cfg = LayerConfig()
    assert cfg.pick(0.0) == 0
    assert cfg.pick(16384 / 0.9 - 3) == 0
    assert cfg.pick(16384 / 0.9 + 3) == 1
    assert cfg.pick(131072 / 0.9 + 3) == 3
    assert cfg.pick(1e9) == 3
    assert cfg.rate_of(2) == 65536


def test_layer_config_rejects_bad_tables():
    with pytest.raises(ValueError):
        LayerConfig(rates=())
    with pytest.raises(ValueError):
        LayerConfig(rates=(100, 100))
    with pytest.raises(ValueError):
        LayerConfig(rates=(200, 100))
    with pytest.raises(ValueError):
        LayerConfig(safety=0.0)
    with pytest.raises(ValueError):
        LayerConfig(safety=1.5)
    assert LayerConfig(rates=(1000,), safety=1.0).pick(999) == 0


# -- grant-clocked layered source -----------------------------------------

def test_alf_start_traces_base_layer_and_sends_on_grant():
    loop = EventLoop()
    cm = CongestionManager()
    path = CollectPath()
    tracer = Tracer()
    src = AlfLayeredSource(cm, key(), path, loop, tracer=tracer)
    src.start()
    first = tracer.records[0]
    assert first.kind is TraceKind.LAYER_CHANGE
    assert (first.value1, first.value2) == (0.0, 0.0)
    # no rate estimate yet, so the base layer goes out; the initial
    # window admits exactly one packet
    assert src.sent_packets == 1
    assert path.packets[0].meta == 0


def test_alf_repicks_layer_from_rate_at_each_grant():
    loop = EventLoop()
    cm = CongestionManager()
    path = CollectPath()
    tracer = Tracer()
    src = AlfLayeredSource(cm, key(), path, loop, tracer=tracer)
    grow(cm, src.flow, 3)            # cwnd 6000, srtt 0.1 -> 60 kB/s
    src.start()
    assert src.sent_packets == 4     # window admits four packets
    assert all(p.meta == 1 for p in path.packets)
    layers = [r.value1 for r in tracer.records
              if r.kind is TraceKind.LAYER_CHANGE]
    assert layers == [0.0, 1.0]


def test_alf_request_before_notify_order_also_flows():
    loop = EventLoop()
    cm = CongestionManager()
    path = CollectPath()
    src = AlfLayeredSource(cm, key(), path, loop, request_before_notify=True)
    grow(cm, src.flow, 3)
    src.start()
    assert src.sent_packets == 4


def test_alf_declines_grants_before_start():
    loop = EventLoop()
    cm = CongestionManager()
    path = CollectPath()
    src = AlfLayeredSource(cm, key(), path, loop)
    cm.request(src.flow)
    assert src.sent_packets == 0
    assert path.packets == []
    assert cm.op_counts["notify"] == 1


# -- self-paced layered source --------------------------------------------

def test_paced_sends_at_layer_rate():
    loop = EventLoop()
    cm = CongestionManager()
    path = CollectPath()
    tracer = Tracer()
    src = PacedLayeredSource(cm, key(), path, loop, tracer=tracer)
    assert src.interval == pytest.approx(1500 / 16384)
    src.start()
    loop.run_until(0.3)
    times = [r.t for r in tracer.records if r.kind is TraceKind.SEND]
    assert len(times) == 4
    gaps = [b - a for a, b in zip(times, times[1:])]
    assert all(g == pytest.approx(1500 / 16384) for g in gaps)
    src.stop()
    loop.run_until(0.6)
    assert src.sent_packets == 4     # timer cancelled, cadence frozen


def test_paced_repicks_layer_only_on_rate_callback():
    loop = EventLoop()
    cm = CongestionManager()
    path = CollectPath()
    tracer = Tracer()
    src = PacedLayeredSource(cm, key(), path, loop, tracer=tracer)
    grow(cm, src.flow, 1)            # rate 30 kB/s: first callback, layer 0
    assert src.layer == 0
    grow(cm, src.flow, 1)            # rate 45 kB/s: above 1.4x, layer 1
    assert src.layer == 1
    assert src.interval == pytest.approx(1500 / 32768)
    changes = [r for r in tracer.records
               if r.kind is TraceKind.LAYER_CHANGE]
    assert [c.value1 for c in changes] == [1.0]
    assert changes[0].value2 == pytest.approx(45000.0)


def test_paced_direct_rate_hint_switches_layers():
    loop = EventLoop()
    cm = CongestionManager()
    path = CollectPath()
    src = PacedLayeredSource(cm, key(), path, loop)
    src._on_rate(src.flow, 150000.0, 0.1, 0.0)
    assert src.layer == 3
    assert src.interval == pytest.approx(1500 / 131072)


# -- token bucket ---------------------------------------------------------

def test_token_bucket_depth_and_refill():
    tb = TokenBucket(rate=8000.0, depth=320.0, now=0.0)
    assert tb.take(160, 0.0)
    assert tb.take(160, 0.0)
    assert not tb.take(160, 0.0)     # bucket drained
    assert tb.take(160, 0.02)        # one frame interval refills one frame
    assert not tb.take(501, 10.0)    # tokens cap at the configured depth


def test_token_bucket_rate_change_accrues_at_old_rate_first():
    tb = TokenBucket(rate=100.0, depth=1000.0, now=0.0)
    assert tb.take(1000, 0.0)
    tb.set_rate(0.0, 1.0)            # one second of credit at the old rate
    assert tb.take(100, 2.0)
    assert not tb.take(1, 3.0)


# -- constant-bit-rate audio ----------------------------------------------

def test_audio_overflow_drops_oldest_frame_first():
    loop = EventLoop()
    cm = CongestionManager()
    path = CollectPath()
    tracer = Tracer()
    src = CbrAudioSource(cm, key(), path, loop, tracer=tracer)
    src.start()
    loop.run_until(0.21)             # frames 0..10; only frame 0 fit the window
    assert src.generated == 11
    assert src.sent_frames == 1
    drops = [int(r.value1) for r in tracer.records
             if r.kind is TraceKind.BUF_DROP]
    assert drops == [1, 2, 3, 4, 5, 6]
    assert src.buffered == 4
    # freeing the window must release the freshest surviving frame
    cm.update(src.flow, FeedbackReport(160, 160, LossMode.NO_LOSS, rtt=0.02))
    sent = [int(r.value1) for r in tracer.records
            if r.kind is TraceKind.SEND]
    assert sent == [0, 7]
    assert sent[-1] >= src.generated - src.app_buf_limit


def test_audio_evicts_stale_frames_without_overflow():
    loop = EventLoop()
    cm = CongestionManager()
    path = CollectPath()
    tracer = Tracer()
    src = CbrAudioSource(cm, key(), path, loop, tracer=tracer)
    cm.notify(src.flow, 1500)        # wedge the window shut
    src.start()                      # frame 0 buffered, then the policer
    src._on_rate(src.flow, 0.0, 0.0, 0.0)    # stops admitting new ones
    loop.run_until(0.13)
    assert src.sent_frames == 0
    assert src.policer_drops == 5    # frames 2..6 never reached the buffer
    drops = [(round(r.t, 2), int(r.value1)) for r in tracer.records
             if r.kind is TraceKind.BUF_DROP]
    # frames 0 and 1 aged out at four frame intervals despite a near-empty
    # buffer
    assert drops == [(0.1, 0), (0.12, 1)]
    assert src.buffered == 0


def test_audio_grant_on_empty_buffer_declines():
    loop = EventLoop()
    cm = CongestionManager()
    src = CbrAudioSource(cm, key(), CollectPath(), loop)
    before = cm.op_counts.get("notify", 0)
    src._on_grant(src.flow)
    assert cm.op_counts["notify"] == before + 1
    assert src.sent_frames == 0


def test_audio_rate_callback_retunes_policer():
    loop = EventLoop()
    cm = CongestionManager()
    src = CbrAudioSource(cm, key(), CollectPath(), loop)
    assert src.policer.rate == pytest.approx(8000.0)
    src._on_rate(src.flow, 4000.0, 0.02, 0.0)
    assert src.policer.rate == pytest.approx(4000.0)
