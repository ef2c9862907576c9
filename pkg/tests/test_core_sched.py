"""Scheduler behavior: round-robin grant rotation, window gating on
outstanding bytes, declined grants, rate-threshold callbacks, and the
periodic tick (idle decay, liveness re-dispatch, suggested period).
"""
import pytest

from cmsim.core import (BASE_TICK, CongestionManager, FeedbackReport, FlowKey,
                        LossMode, Proto)

MTU = 1500


def key(port):
    return FlowKey("c", port, "s", 9, Proto.UDP)


def make_flows(cm, n, cb):
    fids = []
    for p in range(1, n + 1):
        f = cm.open(key(p))
        cm.register_send(f, cb)
        fids.append(f)
    return fids


def test_grants_rotate_round_robin():
    cm = CongestionManager()
    order = []

    def accept(fid):
        order.append(fid)
        cm.notify(fid, MTU)

    a, b, c = make_flows(cm, 3, accept)
    cm.update(a, FeedbackReport(3000, 3000))   # cwnd 4500
    cm.notify(a, 4500)                         # window full: requests queue
    for f in (a, b, c):
        cm.request(f)
        cm.request(f)
    assert order == []
    cm.update(a, FeedbackReport(4500, 4500))   # frees 4500, cwnd 9000
    assert order == [a, b, c, a, b, c]


def test_rotation_resumes_where_it_left_off():
    cm = CongestionManager()
    order = []

    def accept(fid):
        order.append(fid)
        cm.notify(fid, MTU)

    a, b, c = make_flows(cm, 3, accept)        # cwnd 1500: one grant at a time
    cm.notify(a, MTU)
    for f in (a, b, c):
        cm.request(f)
    for _ in range(3):
        cm.update(a, FeedbackReport(MTU, 0))   # free exactly one packet
    assert order == [a, b, c]


def test_grant_blocked_until_window_has_room():
    cm = CongestionManager()
    granted = []
    (a,) = make_flows(cm, 1, granted.append)
    cm.notify(a, MTU)                          # outstanding == cwnd
    cm.request(a)
    assert granted == []
    cm.update(a, FeedbackReport(MTU, 0))
    assert granted == [a]


def test_declined_grant_moves_to_next_requester():
    cm = CongestionManager()
    order = []

    def decline(fid):
        order.append(("declined", fid))
        cm.notify(fid, 0)

    def accept(fid):
        order.append(("sent", fid))
        cm.notify(fid, MTU)

    a = cm.open(key(1))
    b = cm.open(key(2))
    cm.register_send(a, decline)
    cm.register_send(b, accept)
    cm.notify(a, MTU)
    cm.request(a)
    cm.request(b)
    cm.update(a, FeedbackReport(MTU, 0))
    assert order == [("declined", a), ("sent", b)]


def test_callbacks_never_nest():
    cm = CongestionManager()
    depth = [0]
    peak = [0]
    grants = [0]

    def cb(fid):
        depth[0] += 1
        peak[0] = max(peak[0], depth[0])
        grants[0] += 1
        if grants[0] < 4:
            cm.request(fid)                    # issued inside the callback
        cm.notify(fid, 0)
        depth[0] -= 1

    (a,) = make_flows(cm, 1, cb)
    cm.request(a)
    assert grants[0] == 4
    assert peak[0] == 1


def test_grant_passes_flow_id_of_owner():
    cm = CongestionManager()
    seen = []
    a, b = make_flows(cm, 2, seen.append)
    cm.notify(a, MTU)
    cm.request(b)
    cm.update(a, FeedbackReport(MTU, 0))
    assert seen == [b]


# -- rate-threshold callbacks ---------------------------------------------


def test_first_nonzero_rate_always_notifies():
    cm = CongestionManager()
    fid = cm.open(key(1))
    got = []
    cm.register_update(fid, lambda f, rate, srtt, lr: got.append(rate))
    cm.thresh(fid, 0.5, 2.0)
    cm.update(fid, FeedbackReport(0, 0, rtt=0.1))
    assert got == [pytest.approx(MTU / 0.1)]


def test_rate_changes_inside_band_stay_quiet():
    cm = CongestionManager()
    fid = cm.open(key(1))
    got = []
    cm.register_update(fid, lambda f, rate, srtt, lr: got.append(rate))
    cm.thresh(fid, 0.1, 3.0)
    cm.update(fid, FeedbackReport(0, 0, rtt=0.1))   # baseline 15000
    cm.update(fid, FeedbackReport(1500, 1500))      # 30000: 2x, inside band
    assert len(got) == 1
    cm.update(fid, FeedbackReport(1500, 1500))      # 45000: 3x, at the edge
    assert len(got) == 2
    assert got[-1] == pytest.approx(45000.0)


def test_downward_crossing_notifies():
    cm = CongestionManager()
    fid = cm.open(key(1))
    got = []
    cm.register_update(fid, lambda f, rate, srtt, lr: got.append(rate))
    cm.thresh(fid, 0.7, 10.0)
    cm.update(fid, FeedbackReport(0, 0, rtt=0.1))
    cm.update(fid, FeedbackReport(28500, 28500))    # cwnd 30000: 20x, fires
    cm.update(fid, FeedbackReport(1500, 0, LossMode.TRANSIENT))
    # the cut halves cwnd, so rate falls to 0.5x baseline, under the 0.7 floor
    assert len(got) == 3
    assert got[-1] == pytest.approx(150000.0)


def test_callback_carries_srtt_and_loss_rate():
    cm = CongestionManager()
    fid = cm.open(key(1))
    got = []
    cm.register_update(fid, lambda f, r, s, l: got.append((f, r, s, l)))
    cm.update(fid, FeedbackReport(0, 0, rtt=0.2))
    f, rate, srtt, lr = got[0]
    assert f == fid
    assert srtt == pytest.approx(0.2)
    assert lr == 0.0


def test_default_thresholds_notify_on_any_change():
    cm = CongestionManager()
    fid = cm.open(key(1))
    got = []
    cm.register_update(fid, lambda f, rate, srtt, lr: got.append(rate))
    cm.update(fid, FeedbackReport(0, 0, rtt=0.1))
    cm.update(fid, FeedbackReport(100, 100))
    cm.update(fid, FeedbackReport(100, 100))
    assert len(got) == 3


# -- tick -----------------------------------------------------------------


def test_tick_decays_idle_window_after_four_rtos():
    now = [0.0]
    cm = CongestionManager(clock=lambda: now[0])
    fid = cm.open(key(1))
    cm.update(fid, FeedbackReport(10500, 10500))    # cwnd 12000
    cm.notify(fid, 100)                             # marks last send at t=0
    cm.tick(3.9)                                    # rto is 1s before samples
    assert cm.macroflow_state(fid).cwnd == 12000
    cm.tick(4.0)
    assert cm.macroflow_state(fid).cwnd == MTU


def test_tick_decay_preserves_ssthresh():
    cm = CongestionManager()
    fid = cm.open(key(1))
    cm.update(fid, FeedbackReport(10500, 10500))
    before = cm.macroflow_state(fid).ssthresh
    cm.tick(100.0)
    st = cm.macroflow_state(fid)
    assert st.cwnd == MTU
    assert st.ssthresh == before


def test_recent_send_prevents_decay():
    now = [3.5]
    cm = CongestionManager(clock=lambda: now[0])
    fid = cm.open(key(1))
    cm.update(fid, FeedbackReport(10500, 10500))
    cm.notify(fid, 100)                             # last send at t=3.5
    cm.tick(4.0)
    assert cm.macroflow_state(fid).cwnd == 12000


def test_tick_redispatches_stranded_requests():
    cm = CongestionManager()
    granted = []

    def broken(fid):
        raise RuntimeError("client lost the grant")

    a = cm.open(key(1))
    b = cm.open(key(2))
    cm.register_send(a, broken)
    cm.register_send(b, granted.append)
    with pytest.raises(RuntimeError):
        cm.bulk_request([a, b])
    assert granted == []
    cm.tick(0.0)                                    # liveness backstop
    assert granted == [b]


def test_tick_period_tracks_half_srtt():
    cm = CongestionManager()
    assert cm.tick_period() == BASE_TICK
    fid = cm.open(key(1))
    assert cm.tick_period() == BASE_TICK
    cm.update(fid, FeedbackReport(0, 0, rtt=0.004))
    assert cm.tick_period() == pytest.approx(0.002)
    other = cm.open(FlowKey("c", 9, "elsewhere", 9, Proto.UDP))
    cm.update(other, FeedbackReport(0, 0, rtt=1.0))
    assert cm.tick_period() == pytest.approx(0.002)


def test_tick_does_not_count_as_boundary_crossing():
    cm = CongestionManager()
    cm.open(key(1))
    before = cm.boundary_crossings
    cm.tick(0.0)
    assert cm.boundary_crossings == before
