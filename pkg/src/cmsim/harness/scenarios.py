"""Scenario builders and the experiment runner.

Each builder wires sources, transports, the shared controller, and links
into a single event loop; run_experiment() drives the loop to the
configured duration and derives two kinds of output:

  * trace_stats: recomputable offline from (config, trace records) alone;
  * run_stats: controller operation counts, which exist only in the live
    run (they measure API boundary crossings, not traffic).

Reverse (acknowledgment) paths are fast and lossless so that the
dynamics under study stay on the forward bottleneck.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional

from ..apps import (AlfLayeredSource, CbrAudioSource, LayerConfig,
                    PacedLayeredSource)
from ..core import CongestionManager, FlowKey, Proto
from ..sim import Dispatcher, EventLoop, Link, Path
from ..trace import TraceKind, TraceRecord, Tracer, write_csv
from ..transport.feedback import AppAckReceiver
from ..transport.tcp import TcpReceiver, TcpSender
from ..transport.udpcc import UdpCcSocket
from .config import ExperimentConfig, save_json, to_dict, validate
from .oracles import RenoSender

REV_QUEUE = 100_000      # acks never tail-drop
RENO_FLOW_BASE = 900     # reference senders sit outside controller flow ids
SERIES_CAP = 400         # summary time series are downsampled to this length


@dataclass
class RunOutput:
    config: ExperimentConfig
    records: List[TraceRecord]
    summary: Dict[str, Any]
    ctx: Dict[str, Any]


def _attach_ticker(loop: EventLoop, cm: CongestionManager) -> None:
    def tick() -> None:
        cm.tick(loop.now)
        loop.schedule_after(cm.tick_period(), tick)

    loop.schedule_after(cm.tick_period(), tick)


def _cm(cfg: ExperimentConfig, loop: EventLoop,
        tracer: Tracer) -> CongestionManager:
    cm = CongestionManager(mtu=cfg.mtu, clock=lambda: loop.now, tracer=tracer)
    _attach_ticker(loop, cm)
    return cm


def _duplex(cfg: ExperimentConfig, loop: EventLoop, tracer: Tracer,
            name: str, bandwidth: Optional[int] = None,
            loss: Optional[float] = None) -> tuple:
    fwd = Link(loop, bandwidth if bandwidth is not None else cfg.bandwidth_bps,
               cfg.delay, queue_limit=cfg.queue_limit,
               loss_prob=cfg.loss_prob if loss is None else loss,
               ecn_mode=cfg.ecn, mtu=cfg.mtu, seed=cfg.seed,
               name=f"{name}-fwd", tracer=tracer)
    rev = Link(loop, cfg.ack_bandwidth_bps, cfg.delay, queue_limit=REV_QUEUE,
               mtu=cfg.mtu, seed=cfg.seed, name=f"{name}-rev")
    return Path([fwd]), Path([rev]), fwd


# -- builders -------------------------------------------------------------


def build_tcp_compare(cfg: ExperimentConfig, loop: EventLoop,
                      tracer: Tracer) -> Dict[str, Any]:
    """One controller-managed stream and one independent Reno stream on
    separate but identically configured lossy links."""
    cm = _cm(cfg, loop, tracer)
    fwd_c, rev_c, _ = _duplex(cfg, loop, tracer, "cm")
    key = FlowKey("client", 4001, "server", 80, Proto.TCP)
    sender = TcpSender(cm, key, fwd_c, loop, tracer=tracer)
    receiver = TcpReceiver(loop, rev_c, sender.flow)
    fwd_c.set_sink(receiver.on_data)
    rev_c.set_sink(sender.on_ack)
    # enough backlog that the source can never run dry
    sender.write(int(cfg.duration * cfg.bandwidth_bps / 8) + cfg.mtu)
    sender.start()

    fwd_r, rev_r, _ = _duplex(cfg, loop, tracer, "ref")
    reno = RenoSender(loop, RENO_FLOW_BASE, fwd_r, mss=cfg.mtu,
                      tracer=tracer)
    reno_rcv = TcpReceiver(loop, rev_r, RENO_FLOW_BASE)
    fwd_r.set_sink(reno_rcv.on_data)
    rev_r.set_sink(reno.on_ack)
    reno.start()

    return {"cms": [cm], "cm_flows": [sender.flow],
            "ref_flows": [RENO_FLOW_BASE]}


def build_sharing(cfg: ExperimentConfig, loop: EventLoop,
                  tracer: Tracer) -> Dict[str, Any]:
    """Back-to-back transfers to one destination; each is a fresh
    connection but they all inherit the destination's shared state."""
    cm = _cm(cfg, loop, tracer)
    fwd, rev, _ = _duplex(cfg, loop, tracer, "shr")
    route_fwd = Dispatcher()
    route_rev = Dispatcher()
    fwd.set_sink(route_fwd)
    rev.set_sink(route_rev)
    cm_flows: List[int] = []

    def start_transfer(i: int) -> None:
        t0 = loop.now
        key = FlowKey("client", 2000 + i, "server", 80, Proto.TCP)
        box: Dict[str, TcpSender] = {}

        def done(now: float) -> None:
            tracer.emit(now, box["s"].flow, TraceKind.TRANSFER_DONE,
                        i, now - t0)
            box["s"].close()
            if i + 1 < cfg.num_transfers:
                loop.schedule_after(cfg.transfer_gap, start_transfer, i + 1)

        s = TcpSender(cm, key, fwd, loop, tracer=tracer, on_complete=done)
        box["s"] = s
        r = TcpReceiver(loop, rev, s.flow)
        route_fwd.register(s.flow, r.on_data)
        route_rev.register(s.flow, s.on_ack)
        cm_flows.append(s.flow)
        s.write(cfg.transfer_size)
        s.start()

    start_transfer(0)
    return {"cms": [cm], "cm_flows": cm_flows, "ref_flows": []}


def _build_layered(cfg: ExperimentConfig, loop: EventLoop, tracer: Tracer,
                   paced: bool) -> Dict[str, Any]:
    cm = _cm(cfg, loop, tracer)
    fwd, rev, fwd_link = _duplex(cfg, loop, tracer, "lay")
    layers = LayerConfig(rates=tuple(cfg.layer_rates), safety=cfg.safety)
    key = FlowKey("app", 5001, "sink", 443)
    if paced:
        app: Any = PacedLayeredSource(
            cm, key, fwd, loop, layers=layers, packet_size=cfg.packet_size,
            thresh=(cfg.thresh_down, cfg.thresh_up), tracer=tracer)
    else:
        app = AlfLayeredSource(cm, key, fwd, loop, layers=layers,
                               packet_size=cfg.packet_size, tracer=tracer)
    ackr = AppAckReceiver(loop, rev, app.flow, max_acks=cfg.max_acks,
                          max_delay=cfg.max_delay)
    fwd.set_sink(ackr.on_data)
    rev.set_sink(app.on_feedback)
    loop.schedule(cfg.step_down_t, fwd_link.set_bandwidth,
                  cfg.low_bandwidth_bps)
    loop.schedule(cfg.step_up_t, fwd_link.set_bandwidth, cfg.bandwidth_bps)
    app.start()
    return {"cms": [cm], "cm_flows": [app.flow], "ref_flows": [],
            "app": app}


def build_layered_alf(cfg: ExperimentConfig, loop: EventLoop,
                      tracer: Tracer) -> Dict[str, Any]:
    return _build_layered(cfg, loop, tracer, paced=False)


def build_layered_rate(cfg: ExperimentConfig, loop: EventLoop,
                       tracer: Tracer) -> Dict[str, Any]:
    return _build_layered(cfg, loop, tracer, paced=True)


def build_delayed_feedback(cfg: ExperimentConfig, loop: EventLoop,
                           tracer: Tracer) -> Dict[str, Any]:
    """A greedy datagram flow whose receiver batches acknowledgments."""
    cm = _cm(cfg, loop, tracer)
    fwd, rev, _ = _duplex(cfg, loop, tracer, "dly")
    key = FlowKey("app", 6001, "collector", 9)
    sock = UdpCcSocket(cm, key, fwd, loop, tracer=tracer)
    sock.on_sent = lambda seq, size: sock.send(cfg.packet_size)
    # rate callbacks with default thresholds fire on every rate change
    cm.register_update(sock.flow, lambda fid, rate, srtt, lr: None)
    ackr = AppAckReceiver(loop, rev, sock.flow, max_acks=cfg.max_acks,
                          max_delay=cfg.max_delay)
    fwd.set_sink(ackr.on_data)
    rev.set_sink(sock.on_feedback)
    for _ in range(cfg.queue_target):
        sock.send(cfg.packet_size)
    return {"cms": [cm], "cm_flows": [sock.flow], "ref_flows": []}


def build_udpcc_basic(cfg: ExperimentConfig, loop: EventLoop,
                      tracer: Tracer) -> Dict[str, Any]:
    """num_flows greedy datagram flows to one destination, round-robin
    scheduled inside a single macroflow."""
    cm = _cm(cfg, loop, tracer)
    fwd, rev, _ = _duplex(cfg, loop, tracer, "rr")
    route_fwd = Dispatcher()
    route_rev = Dispatcher()
    fwd.set_sink(route_fwd)
    rev.set_sink(route_rev)
    socks: List[UdpCcSocket] = []
    for i in range(cfg.num_flows):
        key = FlowKey("host", 7000 + i, "peer", 9)
        sock = UdpCcSocket(cm, key, fwd, loop, tracer=tracer)
        sock.on_sent = (
            lambda s: lambda seq, size: s.send(cfg.packet_size))(sock)
        ackr = AppAckReceiver(loop, rev, sock.flow, max_acks=cfg.max_acks,
                              max_delay=cfg.max_delay)
        route_fwd.register(sock.flow, ackr.on_data)
        route_rev.register(sock.flow, sock.on_feedback)
        socks.append(sock)
    for sock in socks:
        for _ in range(8):
            sock.send(cfg.packet_size)
    return {"cms": [cm], "cm_flows": [s.flow for s in socks],
            "ref_flows": []}


def build_fairness_ensemble(cfg: ExperimentConfig, loop: EventLoop,
                            tracer: Tracer) -> Dict[str, Any]:
    """num_flows controller flows plus one independent Reno flow on a
    shared bottleneck. Queue top-ups, grant requests, and rate queries
    run through bulk calls when cfg.bulk is set, per-flow calls
    otherwise; the traffic pattern is identical either way."""
    cm = _cm(cfg, loop, tracer)
    fwd, rev, _ = _duplex(cfg, loop, tracer, "ens")
    route_fwd = Dispatcher()
    route_rev = Dispatcher()
    fwd.set_sink(route_fwd)
    rev.set_sink(route_rev)
    batch: List[int] = []
    socks: List[UdpCcSocket] = []
    for i in range(cfg.num_flows):
        key = FlowKey("host", 7100 + i, "server", 9)
        sock = UdpCcSocket(cm, key, fwd, loop, tracer=tracer,
                           defer_requests=True, pending_request_batch=batch)
        ackr = AppAckReceiver(loop, rev, sock.flow, max_acks=cfg.max_acks,
                              max_delay=cfg.max_delay)
        route_fwd.register(sock.flow, ackr.on_data)
        route_rev.register(sock.flow, sock.on_feedback)
        socks.append(sock)

    def refill() -> None:
        for sock in socks:
            while sock.queue_len < cfg.queue_target:
                sock.send(cfg.packet_size)
        if batch:
            if cfg.bulk:
                cm.bulk_request(list(batch))
            else:
                for fid in batch:
                    cm.request(fid)
            batch.clear()
        loop.schedule_after(cfg.refill_interval, refill)

    def sample() -> None:
        fids = [s.flow for s in socks]
        if cfg.bulk:
            cm.bulk_query(fids)
        else:
            for fid in fids:
                cm.query(fid)
        loop.schedule_after(cfg.sample_interval, sample)

    refill()
    loop.schedule_after(cfg.sample_interval, sample)

    reno = RenoSender(loop, RENO_FLOW_BASE, fwd, mss=cfg.mtu, tracer=tracer)
    reno_rcv = TcpReceiver(loop, rev, RENO_FLOW_BASE)
    route_fwd.register(RENO_FLOW_BASE, reno_rcv.on_data)
    route_rev.register(RENO_FLOW_BASE, reno.on_ack)
    reno.start()
    return {"cms": [cm], "cm_flows": [s.flow for s in socks],
            "ref_flows": [RENO_FLOW_BASE]}


def build_audio_cbr(cfg: ExperimentConfig, loop: EventLoop,
                    tracer: Tracer) -> Dict[str, Any]:
    cm = _cm(cfg, loop, tracer)
    fwd, rev, _ = _duplex(cfg, loop, tracer, "aud")
    key = FlowKey("vat", 5004, "peer", 5004)
    app = CbrAudioSource(cm, key, fwd, loop, frame_size=cfg.frame_size,
                         frame_interval=cfg.frame_interval,
                         app_buf_limit=cfg.app_buf_limit,
                         policer_depth_frames=cfg.policer_depth_frames,
                         thresh=(cfg.thresh_down, cfg.thresh_up),
                         tracer=tracer)
    ackr = AppAckReceiver(loop, rev, app.flow, max_acks=cfg.max_acks,
                          max_delay=cfg.max_delay)
    fwd.set_sink(ackr.on_data)
    rev.set_sink(app.on_feedback)
    app.start()
    return {"cms": [cm], "cm_flows": [app.flow], "ref_flows": [],
            "app": app}


BUILDERS: Dict[str, Callable] = {
    "tcp_compare": build_tcp_compare,
    "sharing": build_sharing,
    "layered_alf": build_layered_alf,
    "layered_rate": build_layered_rate,
    "delayed_feedback": build_delayed_feedback,
    "fairness_ensemble": build_fairness_ensemble,
    "udpcc_basic": build_udpcc_basic,
    "audio_cbr": build_audio_cbr,
}


# -- running --------------------------------------------------------------


def run_experiment(cfg: ExperimentConfig) -> RunOutput:
    validate(cfg)
    loop = EventLoop()
    tracer = Tracer()
    ctx = BUILDERS[cfg.scenario](cfg, loop, tracer)
    loop.run_until(cfg.duration)
    summary = {
        "trace_stats": summarize_trace(cfg, tracer.records),
        "run_stats": run_stats(ctx, tracer.records),
    }
    return RunOutput(cfg, tracer.records, summary, ctx)


def write_outputs(out: RunOutput, outdir: str) -> None:
    os.makedirs(outdir, exist_ok=True)
    save_json(out.config, os.path.join(outdir, "config.json"))
    write_csv(os.path.join(outdir, "trace.csv"), out.records)
    import json
    with open(os.path.join(outdir, "summary.json"), "w",
              encoding="utf-8") as fh:
        json.dump(out.summary, fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- summaries ------------------------------------------------------------


def _downsample(series: List[List[float]], cap: int = SERIES_CAP) -> List[List[float]]:
    if len(series) <= cap:
        return series
    stride = math.ceil(len(series) / cap)
    kept = series[::stride]
    if kept[-1] != series[-1]:
        kept.append(series[-1])
    return kept


def _stats(values: List[float]) -> Dict[str, float]:
    n = len(values)
    if n == 0:
        return {"count": 0, "mean": 0.0, "std": 0.0, "cov": 0.0}
    mean = sum(values) / n
    var = sum((v - mean) ** 2 for v in values) / n
    std = math.sqrt(var)
    return {"count": n, "mean": mean, "std": std,
            "cov": std / mean if mean > 0 else 0.0}


def summarize_trace(cfg: ExperimentConfig,
                    records: List[TraceRecord]) -> Dict[str, Any]:
    """Pure function of (config, trace): recomputable offline."""
    per_flow: Dict[int, Dict[str, float]] = {}

    def flow_entry(fid: int) -> Dict[str, float]:
        e = per_flow.get(fid)
        if e is None:
            e = {"sent_pkts": 0, "sent_bytes": 0, "delivered_pkts": 0,
                 "delivered_bytes": 0, "dropped_pkts": 0, "marked_pkts": 0}
            per_flow[fid] = e
        return e

    cwnd_series: Dict[int, List[List[float]]] = {}
    layer_series: Dict[int, List[List[float]]] = {}
    rate_cbs: Dict[int, List[List[float]]] = {}
    transfers: List[Dict[str, float]] = []
    policer_drops = 0
    buf_drops = 0
    audio_sends: List[TraceRecord] = []

    for r in records:
        if r.kind == TraceKind.SEND:
            e = flow_entry(r.flow)
            e["sent_pkts"] += 1
            e["sent_bytes"] += r.value2
            if cfg.scenario == "audio_cbr":
                audio_sends.append(r)
        elif r.kind == TraceKind.DELIVER:
            e = flow_entry(r.flow)
            e["delivered_pkts"] += 1
            e["delivered_bytes"] += r.value2
        elif r.kind == TraceKind.DROP:
            flow_entry(r.flow)["dropped_pkts"] += 1
        elif r.kind == TraceKind.MARK:
            flow_entry(r.flow)["marked_pkts"] += 1
        elif r.kind == TraceKind.CWND_CHANGE:
            cwnd_series.setdefault(r.flow, []).append([r.t, r.value1])
        elif r.kind == TraceKind.LAYER_CHANGE:
            layer_series.setdefault(r.flow, []).append([r.t, r.value1])
        elif r.kind == TraceKind.RATE_CALLBACK:
            rate_cbs.setdefault(r.flow, []).append([r.t, r.value1])
        elif r.kind == TraceKind.TRANSFER_DONE:
            transfers.append({"index": int(r.value1), "elapsed": r.value2,
                              "done_at": r.t})
        elif r.kind == TraceKind.POLICER_DROP:
            policer_drops += 1
        elif r.kind == TraceKind.BUF_DROP:
            buf_drops += 1

    for e in per_flow.values():
        e["throughput_bps"] = e["delivered_bytes"] * 8.0 / cfg.duration

    layer_occupancy: Dict[int, Dict[str, Any]] = {}
    for fid, changes in layer_series.items():
        occ: Dict[int, float] = {}
        for (t0, layer), (t1, _) in zip(changes, changes[1:] + [[cfg.duration, 0.0]]):
            occ[int(layer)] = occ.get(int(layer), 0.0) + max(0.0, t1 - t0)
        total = sum(occ.values())
        layer_occupancy[fid] = {
            "changes": max(0, len(changes) - 1),
            "fractions": {str(k): v / total for k, v in sorted(occ.items())}
            if total > 0 else {},
        }

    rate_stats: Dict[int, Dict[str, Any]] = {}
    for fid, points in rate_cbs.items():
        st = _stats([p[1] for p in points])
        st["first_t"] = points[0][0]
        rate_stats[fid] = st

    out: Dict[str, Any] = {
        "per_flow": {str(k): per_flow[k] for k in sorted(per_flow)},
        "cwnd_series": {str(k): _downsample(v)
                        for k, v in sorted(cwnd_series.items())},
        "layer_occupancy": {str(k): v
                            for k, v in sorted(layer_occupancy.items())},
        "rate_callbacks": {str(k): v for k, v in sorted(rate_stats.items())},
        "transfers": transfers,
    }

    if cfg.scenario == "audio_cbr":
        generated = int(cfg.duration / cfg.frame_interval) + 1
        delays = [r.t - r.value1 * cfg.frame_interval for r in audio_sends]
        out["audio"] = {
            "generated_frames": generated,
            "sent_frames": len(audio_sends),
            "policer_drops": policer_drops,
            "buf_drops": buf_drops,
            "policer_drop_fraction": policer_drops / generated,
            "max_app_buf_delay": max(delays) if delays else 0.0,
        }
    return out


def run_stats(ctx: Dict[str, Any],
              records: List[TraceRecord]) -> Dict[str, Any]:
    ops: Dict[str, int] = {}
    crossings = 0
    for cm in ctx.get("cms", []):
        for name, count in cm.op_counts.items():
            ops[name] = ops.get(name, 0) + count
        crossings += cm.boundary_crossings
    cm_flows = set(ctx.get("cm_flows", []))
    cm_bytes = sum(r.value2 for r in records
                   if r.kind == TraceKind.SEND and r.flow in cm_flows)
    mb = cm_bytes / 1e6
    return {
        "op_counts": {k: ops[k] for k in sorted(ops)},
        "boundary_crossings": crossings,
        "cm_sent_bytes": cm_bytes,
        "crossings_per_mb": crossings / mb if mb > 0 else 0.0,
    }
