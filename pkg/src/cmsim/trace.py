"""Trace records emitted by every layer of the stack.

A trace is an append-only list of (t, flow, kind, value1, value2) rows.
The meaning of value1/value2 depends on the kind:

    Grant         cwnd, outstanding at grant time
    Send          seq (byte offset or packet seq), bytes
    Deliver       seq, bytes
    Drop          seq, bytes
    Mark          seq, bytes
    CwndChange    cwnd, ssthresh
    RateCallback  rate (bytes/s), srtt (s)
    LayerChange   layer index, rate at the change
    PolicerDrop   frame seq, bytes
    BufDrop       frame seq, bytes
    TransferDone  transfer index, elapsed seconds

Rows are appended in nondecreasing time order; CSV serialization lives here
so a trace written by one process can be recomputed offline by another.
"""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from typing import Iterable, List


class TraceKind(enum.Enum):
    GRANT = "Grant"
    SEND = "Send"
    DELIVER = "Deliver"
    DROP = "Drop"
    MARK = "Mark"
    CWND_CHANGE = "CwndChange"
    RATE_CALLBACK = "RateCallback"
    LAYER_CHANGE = "LayerChange"
    POLICER_DROP = "PolicerDrop"
    BUF_DROP = "BufDrop"
    TRANSFER_DONE = "TransferDone"


@dataclass(frozen=True)
class TraceRecord:
    t: float
    flow: int
    kind: TraceKind
    value1: float
    value2: float


class Tracer:
    """Collects trace records in emission order."""

    def __init__(self) -> None:
        self.records: List[TraceRecord] = []

    def emit(self, t: float, flow: int, kind: TraceKind,
             value1: float, value2: float) -> None:
        self.records.append(TraceRecord(t, flow, kind, float(value1), float(value2)))

    def __len__(self) -> int:
        return len(self.records)


def _fmt(x: float) -> str:
    # repr() round-trips floats exactly and renders integral values as "N.0",
    # keeping reruns byte-identical.
    return repr(float(x))


def write_csv(path: str, records: Iterable[TraceRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "flow", "kind", "value1", "value2"])
        for r in records:
            w.writerow([_fmt(r.t), r.flow, r.kind.value, _fmt(r.value1), _fmt(r.value2)])


def read_csv(path: str) -> List[TraceRecord]:
    out: List[TraceRecord] = []
    with open(path, newline="", encoding="utf-8") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        assert header == ["t", "flow", "kind", "value1", "value2"]
        for row in rd:
            out.append(TraceRecord(float(row[0]), int(row[1]), TraceKind(row[2]),
                                   float(row[3]), float(row[4])))
    return out
