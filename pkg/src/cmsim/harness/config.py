"""Experiment configuration.

One flat record drives every scenario; unused fields are simply ignored
by scenarios that do not need them. The record round-trips losslessly
through JSON, and every field can be overridden from the command line
with --set key=value, so a recorded config.json reproduces its run
exactly.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List

from ..errors import ConfigError

SCENARIO_NAMES = (
    "tcp_compare",
    "sharing",
    "layered_alf",
    "layered_rate",
    "delayed_feedback",
    "fairness_ensemble",
    "udpcc_basic",
    "audio_cbr",
)


@dataclass
class ExperimentConfig:
    scenario: str = "udpcc_basic"
    seed: int = 1
    duration: float = 30.0

    # forward link (the bottleneck under study)
    bandwidth_bps: int = 10_000_000
    delay: float = 0.03            # one-way propagation per direction
    queue_limit: int = 50          # packets, including the one in service
    loss_prob: float = 0.0
    ecn: bool = False
    mtu: int = 1500
    ack_bandwidth_bps: int = 100_000_000   # clean reverse path

    # workloads
    num_flows: int = 4
    transfer_size: int = 131072
    transfer_gap: float = 0.5
    num_transfers: int = 9
    packet_size: int = 1500

    # receiver feedback batching
    max_acks: int = 1
    max_delay: float = 0.0

    # layered sources
    layer_rates: List[int] = field(
        default_factory=lambda: [16384, 32768, 65536, 131072])
    safety: float = 0.9
    thresh_down: float = 0.7
    thresh_up: float = 1.4
    low_bandwidth_bps: int = 262_144
    step_down_t: float = 8.0
    step_up_t: float = 20.0

    # audio source
    frame_size: int = 160
    frame_interval: float = 0.02
    app_buf_limit: int = 4
    policer_depth_frames: int = 2

    # ensemble bookkeeping
    bulk: bool = False
    refill_interval: float = 0.02
    queue_target: int = 64
    sample_interval: float = 0.1


# Per-scenario defaults layered over the dataclass defaults.
SCENARIOS: Dict[str, Dict[str, Any]] = {
    "tcp_compare": dict(
        duration=60.0, bandwidth_bps=10_000_000, delay=0.03,
        queue_limit=50, loss_prob=0.01),
    "sharing": dict(
        duration=20.0, bandwidth_bps=10_000_000, delay=0.035,
        queue_limit=50, transfer_size=131072, num_transfers=9,
        transfer_gap=0.5),
    "layered_alf": dict(
        duration=30.0, bandwidth_bps=1_048_576, delay=0.125,
        queue_limit=5, low_bandwidth_bps=262_144,
        step_down_t=8.0, step_up_t=20.0),
    "layered_rate": dict(
        duration=30.0, bandwidth_bps=1_048_576, delay=0.125,
        queue_limit=5, low_bandwidth_bps=262_144,
        step_down_t=8.0, step_up_t=20.0),
    "delayed_feedback": dict(
        duration=20.0, bandwidth_bps=2_000_000, delay=0.03,
        queue_limit=20, num_flows=1, max_acks=500, max_delay=2.0),
    "fairness_ensemble": dict(
        duration=30.0, bandwidth_bps=4_000_000, delay=0.03,
        queue_limit=32, num_flows=4, bulk=False),
    "udpcc_basic": dict(
        duration=30.0, bandwidth_bps=4_000_000, delay=0.03,
        queue_limit=32, num_flows=4),
    "audio_cbr": dict(
        duration=60.0, bandwidth_bps=32_000, delay=0.05,
        queue_limit=64, loss_prob=0.08, ecn=True, mtu=160,
        packet_size=160, frame_size=160, frame_interval=0.02,
        app_buf_limit=4, thresh_down=0.9, thresh_up=1.1),
}

_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def make_config(scenario: str, **overrides: Any) -> ExperimentConfig:
    """Scenario defaults plus keyword overrides."""
    if scenario not in SCENARIOS:
        raise ConfigError(
            f"field 'scenario': unknown scenario {scenario!r}; "
            f"choices: {', '.join(SCENARIO_NAMES)}")
    base: Dict[str, Any] = dict(SCENARIOS[scenario])
    base["scenario"] = scenario
    for key, value in overrides.items():
        if key not in _FIELD_TYPES:
            raise ConfigError(f"field '{key}': unknown config field")
        base[key] = value
    cfg = ExperimentConfig(**base)
    validate(cfg)
    return cfg


def _coerce(name: str, raw: str) -> Any:
    typ = _FIELD_TYPES[name]
    try:
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
        if typ == "bool":
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if typ == "List[int]":
            return [int(x) for x in raw.split(",") if x.strip()]
        return raw
    except ValueError as exc:
        raise ConfigError(f"field '{name}': {exc}") from None


def apply_overrides(cfg: ExperimentConfig, assignments: List[str]) -> None:
    """Apply --set key=value pairs in place."""
    for item in assignments:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"field '{item}': expected key=value")
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"field '{key}': unknown config field")
        setattr(cfg, key, _coerce(key, raw))


def to_dict(cfg: ExperimentConfig) -> Dict[str, Any]:
    return asdict(cfg)


def from_dict(data: Dict[str, Any]) -> ExperimentConfig:
    unknown = sorted(set(data) - set(_FIELD_TYPES))
    if unknown:
        raise ConfigError(f"field '{unknown[0]}': unknown config field")
    coerced: Dict[str, Any] = {}
    for key, value in data.items():
        typ = _FIELD_TYPES[key]
        if typ == "int" and isinstance(value, bool):
            raise ConfigError(f"field '{key}': expected int, got bool")
        if typ == "int" and isinstance(value, float) and value.is_integer():
            value = int(value)
        if typ == "List[int]":
            if not isinstance(value, list):
                raise ConfigError(f"field '{key}': expected a list")
            value = [int(v) for v in value]
        coerced[key] = value
    try:
        return ExperimentConfig(**coerced)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def save_json(cfg: ExperimentConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(to_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_json(path: str) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return from_dict(json.load(fh))


def _require(cond: bool, name: str, message: str) -> None:
    if not cond:
        raise ConfigError(f"field '{name}': {message}")


def validate(cfg: ExperimentConfig) -> None:
    _require(cfg.scenario in SCENARIO_NAMES, "scenario",
             f"unknown scenario {cfg.scenario!r}")
    _require(cfg.duration > 0, "duration", "must be positive")
    _require(cfg.bandwidth_bps > 0, "bandwidth_bps", "must be positive")
    _require(cfg.ack_bandwidth_bps > 0, "ack_bandwidth_bps",
             "must be positive")
    _require(cfg.low_bandwidth_bps > 0, "low_bandwidth_bps",
             "must be positive")
    _require(cfg.delay >= 0, "delay", "must be nonnegative")
    _require(cfg.queue_limit >= 1, "queue_limit", "must be at least 1")
    _require(0.0 <= cfg.loss_prob < 1.0, "loss_prob", "must be in [0, 1)")
    _require(cfg.mtu > 0, "mtu", "must be positive")
    _require(cfg.num_flows >= 1, "num_flows", "must be at least 1")
    _require(cfg.transfer_size > 0, "transfer_size", "must be positive")
    _require(cfg.transfer_gap >= 0, "transfer_gap", "must be nonnegative")
    _require(cfg.num_transfers >= 1, "num_transfers", "must be at least 1")
    _require(0 < cfg.packet_size <= cfg.mtu, "packet_size",
             f"must be in (0, mtu={cfg.mtu}]")
    _require(cfg.max_acks >= 1, "max_acks", "must be at least 1")
    _require(cfg.max_delay >= 0, "max_delay", "must be nonnegative")
    _require(len(cfg.layer_rates) >= 1, "layer_rates", "needs at least one layer")
    _require(all(b > a for a, b in zip(cfg.layer_rates, cfg.layer_rates[1:])),
             "layer_rates", "must be strictly increasing")
    _require(0.0 < cfg.safety <= 1.0, "safety", "must be in (0, 1]")
    _require(0.0 < cfg.thresh_down <= 1.0, "thresh_down", "must be in (0, 1]")
    _require(cfg.thresh_up >= 1.0, "thresh_up", "must be at least 1")
    _require(cfg.step_down_t >= 0, "step_down_t", "must be nonnegative")
    _require(cfg.step_up_t > cfg.step_down_t, "step_up_t",
             "must be after step_down_t")
    _require(0 < cfg.frame_size <= cfg.mtu, "frame_size",
             f"must be in (0, mtu={cfg.mtu}]")
    _require(cfg.frame_interval > 0, "frame_interval", "must be positive")
    _require(cfg.app_buf_limit >= 1, "app_buf_limit", "must be at least 1")
    _require(cfg.policer_depth_frames >= 1, "policer_depth_frames",
             "must be at least 1")
    _require(cfg.refill_interval > 0, "refill_interval", "must be positive")
    _require(cfg.queue_target >= 1, "queue_target", "must be at least 1")
    _require(cfg.sample_interval > 0, "sample_interval", "must be positive")
