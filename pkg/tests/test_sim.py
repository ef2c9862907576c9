"""Event loop and link emulation: ordering, serialization and
propagation timing, drop-tail queueing, seeded Bernoulli loss, ECN
marking, bandwidth changes, multi-hop paths, and per-flow accounting.
"""
import pytest

from cmsim.errors import PastTime
from cmsim.sim import (Dispatcher, EventLoop, Link, LinkOutcome, Packet,
                       PacketKind, Path)
from cmsim.trace import TraceKind, Tracer


def pkt(seq=0, size=1500, flow=1, kind=PacketKind.DATA):
    return Packet(flow=flow, seq=seq, size=size, kind=kind)


# -- event loop -----------------------------------------------------------


def test_events_run_in_time_order():
    loop = EventLoop()
    out = []
    loop.schedule(0.3, out.append, "late")
    loop.schedule(0.1, out.append, "early")
    loop.schedule(0.2, out.append, "mid")
    loop.run()
    assert out == ["early", "mid", "late"]


def test_simultaneous_events_keep_schedule_order():
    loop = EventLoop()
    out = []
    for i in range(5):
        loop.schedule(1.0, out.append, i)
    loop.run()
    assert out == [0, 1, 2, 3, 4]


def test_schedule_in_the_past_raises():
    loop = EventLoop()
    loop.schedule(1.0, lambda: None)
    loop.run_until(1.0)
    with pytest.raises(PastTime):
        loop.schedule(0.5, lambda: None)


def test_run_until_is_inclusive_and_advances_clock():
    loop = EventLoop()
    out = []
    loop.schedule(2.0, out.append, "at")
    loop.schedule(2.00001, out.append, "after")
    loop.run_until(2.0)
    assert out == ["at"]
    assert loop.now == 2.0
    loop.run_until(3.0)
    assert out == ["at", "after"]
    assert loop.now == 3.0


def test_cancelled_event_does_not_fire():
    loop = EventLoop()
    out = []
    ev = loop.schedule(1.0, out.append, "no")
    loop.schedule(1.0, out.append, "yes")
    ev.cancel()
    loop.run()
    assert out == ["yes"]


def test_schedule_after_is_relative_to_now():
    loop = EventLoop()
    times = []
    loop.schedule(1.5, lambda: loop.schedule_after(0.25, lambda: times.append(loop.now)))
    loop.run()
    assert times == [1.75]


# -- link timing ----------------------------------------------------------


def test_serialization_plus_propagation():
    loop = EventLoop()
    got = []
    link = Link(loop, bandwidth_bps=10_000_000, prop_delay=0.03,
                sink=lambda p, t: got.append(t))
    link.send(pkt(size=1500))
    loop.run()
    # 1500 B at 10 Mbit/s serializes in 1.2 ms
    assert got == [pytest.approx(0.0312)]


def test_back_to_back_packets_queue_behind_each_other():
    loop = EventLoop()
    got = []
    link = Link(loop, bandwidth_bps=10_000_000, prop_delay=0.0,
                sink=lambda p, t: got.append((p.seq, t)))
    link.send(pkt(seq=0))
    link.send(pkt(seq=1))
    loop.run()
    assert got == [(0, pytest.approx(0.0012)), (1, pytest.approx(0.0024))]


def test_fifo_order_with_mixed_sizes():
    loop = EventLoop()
    order = []
    link = Link(loop, bandwidth_bps=1_000_000, prop_delay=0.01,
                sink=lambda p, t: order.append(p.seq))
    for seq, size in enumerate((1500, 100, 900, 40)):
        link.send(pkt(seq=seq, size=size))
    loop.run()
    assert order == [0, 1, 2, 3]


def test_bandwidth_change_applies_from_next_packet():
    loop = EventLoop()
    got = []
    link = Link(loop, bandwidth_bps=12_000, prop_delay=0.0,
                sink=lambda p, t: got.append(t))
    link.send(pkt(seq=0))          # 1 s on the wire at 12 kbit/s
    link.send(pkt(seq=1))
    loop.schedule(0.5, link.set_bandwidth, 12_000_000)
    loop.run()
    assert got[0] == pytest.approx(1.0)      # in-service packet unaffected
    assert got[1] == pytest.approx(1.001)    # next one at the new rate


# -- queueing and loss ----------------------------------------------------


def test_drop_tail_counts_packet_in_service():
    loop = EventLoop()
    link = Link(loop, bandwidth_bps=1_000_000, prop_delay=0.0, queue_limit=2)
    assert link.send(pkt(seq=0)) == LinkOutcome.QUEUED
    assert link.send(pkt(seq=1)) == LinkOutcome.QUEUED
    assert link.send(pkt(seq=2)) == LinkOutcome.DROPPED
    loop.run()
    c = link.counts[1]
    assert c.delivered_pkts == 2
    assert c.dropped_pkts == 1


def test_queue_drains_and_accepts_again():
    loop = EventLoop()
    delivered = []
    link = Link(loop, bandwidth_bps=1_000_000, prop_delay=0.0, queue_limit=1,
                sink=lambda p, t: delivered.append(p.seq))
    link.send(pkt(seq=0))
    assert link.send(pkt(seq=1)) == LinkOutcome.DROPPED
    loop.run()
    assert link.send(pkt(seq=2)) == LinkOutcome.QUEUED
    loop.run()
    assert delivered == [0, 2]


def test_loss_pattern_is_seeded_and_reproducible():
    def outcomes(seed):
        loop = EventLoop()
        link = Link(loop, bandwidth_bps=1e9, prop_delay=0.0,
                    queue_limit=10**6, loss_prob=0.3, seed=seed, name="l")
        return [link.send(pkt(seq=i)) for i in range(200)]

    assert outcomes(7) == outcomes(7)
    assert outcomes(7) != outcomes(8)


def test_loss_frequency_near_nominal():
    loop = EventLoop()
    link = Link(loop, bandwidth_bps=1e9, prop_delay=0.0, queue_limit=10**6,
                loss_prob=0.1, seed=3, name="loss")
    n = 2000
    drops = sum(link.send(pkt(seq=i)) == LinkOutcome.DROPPED
                for i in range(n))
    sigma = (n * 0.1 * 0.9) ** 0.5
    assert abs(drops - n * 0.1) <= 3 * sigma


def test_ecn_marks_instead_of_dropping():
    loop = EventLoop()
    got = []
    link = Link(loop, bandwidth_bps=1e9, prop_delay=0.0, queue_limit=10**6,
                loss_prob=0.4, ecn_mode=True, seed=5,
                sink=lambda p, t: got.append(p))
    outs = [link.send(pkt(seq=i)) for i in range(300)]
    loop.run()
    assert LinkOutcome.DROPPED not in outs
    marked = [p for p in got if p.ecn_marked]
    assert len(got) == 300
    assert len(marked) == outs.count(LinkOutcome.MARKED)
    assert 0 < len(marked) < 300


def test_flow_accounting_conserves_packets():
    loop = EventLoop()
    link = Link(loop, bandwidth_bps=1e9, prop_delay=0.0, queue_limit=50,
                loss_prob=0.2, seed=11)
    n = 500
    for i in range(n):
        link.send(pkt(seq=i))
    loop.run()
    c = link.counts[1]
    assert c.enqueued_pkts + c.dropped_pkts == n
    assert c.delivered_pkts == c.enqueued_pkts


def test_oversized_data_packet_rejected():
    loop = EventLoop()
    link = Link(loop, bandwidth_bps=1e6, prop_delay=0.0, mtu=1500)
    with pytest.raises(ValueError):
        link.send(pkt(size=1501))
    # control packets are not bound by the data MTU
    link.send(pkt(size=4000, kind=PacketKind.ACK))


def test_constructor_validation():
    loop = EventLoop()
    with pytest.raises(ValueError):
        Link(loop, bandwidth_bps=0, prop_delay=0.0)
    with pytest.raises(ValueError):
        Link(loop, bandwidth_bps=1e6, prop_delay=0.0, loss_prob=1.0)


# -- paths, dispatch, tracing ---------------------------------------------


def test_path_chains_hops_and_adds_delays():
    loop = EventLoop()
    got = []
    a = Link(loop, bandwidth_bps=1e8, prop_delay=0.01, name="a")
    b = Link(loop, bandwidth_bps=1e8, prop_delay=0.02, name="b")
    path = Path([a, b], sink=lambda p, t: got.append(t))
    path.send(pkt(size=1000))
    loop.run()
    # two serializations of 80 us each plus both propagation delays
    assert got == [pytest.approx(0.03016)]


def test_dispatcher_routes_by_flow_and_ignores_unknown():
    seen = []
    d = Dispatcher()
    d.register(1, lambda p, t: seen.append(("one", p.seq)))
    d.register(2, lambda p, t: seen.append(("two", p.seq)))
    d(pkt(seq=5, flow=2), 0.0)
    d(pkt(seq=6, flow=1), 0.0)
    d(pkt(seq=7, flow=99), 0.0)
    assert seen == [("two", 5), ("one", 6)]


def test_trace_records_only_data_bearing_packets():
    loop = EventLoop()
    tracer = Tracer()
    link = Link(loop, bandwidth_bps=1e6, prop_delay=0.0, queue_limit=1,
                tracer=tracer)
    link.send(pkt(seq=0))
    link.send(pkt(seq=1))                      # tail-dropped
    link.send(pkt(seq=2, kind=PacketKind.ACK))
    loop.run()
    kinds = [(r.kind, r.value1) for r in tracer.records]
    assert (TraceKind.DROP, 1.0) in kinds
    assert (TraceKind.DELIVER, 0.0) in kinds
    assert all(r.value1 != 2.0 for r in tracer.records)


def test_identical_seeds_give_identical_traces():
    def run(seed):
        loop = EventLoop()
        tracer = Tracer()
        link = Link(loop, bandwidth_bps=2_000_000, prop_delay=0.01,
                    queue_limit=5, loss_prob=0.2, seed=seed, tracer=tracer)
        for i in range(100):
            loop.schedule(i * 0.001, link.send, pkt(seq=i))
        loop.run()
        return [(r.t, r.flow, r.kind, r.value1, r.value2)
                for r in tracer.records]

    assert run(21) == run(21)
    assert run(21) != run(22)
