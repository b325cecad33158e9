"""Structured run traces: ordered event log, JSONL persistence, replay checks.

Every simulator run appends events through a single Trace instance, which
enforces per-trainer causal ordering at record time. The exported file is
line-oriented JSON with a header carrying the schema version and the config
hash, so a trace can be audited or replayed without the producing process.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, replace as dc_replace
from pathlib import Path

from .controller import LabeledSample, RuntimeMetrics, label_sample

__all__ = [
    "SCHEMA_VERSION",
    "EVENT_KINDS",
    "TraceEvent",
    "Trace",
    "TraceOrderError",
    "TraceSchemaError",
    "TraceReadError",
    "TraceConsistencyError",
    "export_trace",
    "import_trace",
    "samples_from_trace",
    "check_metrics_derivation",
]

SCHEMA_VERSION = 1

# Emission order inside one trainer step; equal ranks may repeat (fetches).
_KIND_RANK = {
    "sample": 0,
    "decision": 1,
    "replacement": 2,
    "fetch": 3,
    "metrics": 4,
    "request": 5,
}
_GLOBAL_KINDS = ("barrier", "epoch-mark")
EVENT_KINDS = tuple(_KIND_RANK) + _GLOBAL_KINDS


class TraceOrderError(ValueError):
    """Event violates per-trainer ordering or causality."""


class TraceSchemaError(ValueError):
    """Unreadable or newer-versioned trace header."""


class TraceReadError(ValueError):
    """Corrupt or truncated trace body."""


class TraceConsistencyError(ValueError):
    """Recorded metrics disagree with what the other events imply."""


@dataclass(frozen=True)
class TraceEvent:
    seq: int
    kind: str
    trainer: int  # -1 for global events
    epoch: int
    minibatch: int  # global per-trainer step index
    sim_time: float
    payload: dict

    def to_dict(self) -> dict:
        return {
            "seq": self.seq,
            "kind": self.kind,
            "trainer": self.trainer,
            "epoch": self.epoch,
            "minibatch": self.minibatch,
            "sim_time": self.sim_time,
            "payload": self.payload,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TraceEvent":
        return cls(
            seq=int(d["seq"]),
            kind=str(d["kind"]),
            trainer=int(d["trainer"]),
            epoch=int(d["epoch"]),
            minibatch=int(d["minibatch"]),
            sim_time=float(d["sim_time"]),
            payload=dict(d["payload"]),
        )


class Trace:
    """Append-only validated event log for one run."""

    def __init__(self, config_hash: str = "") -> None:
        self.config_hash = config_hash
        self.schema_version = SCHEMA_VERSION
        self.events: list[TraceEvent] = []
        self.read_only = False
        self._last_key: dict[int, tuple[int, int, int]] = {}
        self._requests_seen: dict[int, int] = {}
        self._last_global: tuple[int, int] = (-1, -1)

    def record(
        self,
        kind: str,
        trainer: int,
        epoch: int,
        minibatch: int,
        sim_time: float,
        payload: dict | None = None,
    ) -> TraceEvent:
        if self.read_only:
            raise TraceOrderError("trace is read-only (config hash mismatch)")
        if kind not in EVENT_KINDS:
            raise TraceOrderError(f"unknown event kind {kind!r}")
        payload = payload or {}

        if kind in _GLOBAL_KINDS:
            if trainer != -1:
                raise TraceOrderError(f"{kind} events must use trainer=-1")
            key = (epoch, minibatch)
            if key < self._last_global:
                raise TraceOrderError(f"global event {key} behind {self._last_global}")
            self._last_global = key
        else:
            if trainer < 0:
                raise TraceOrderError(f"{kind} events need a trainer id")
            key3 = (epoch, minibatch, _KIND_RANK[kind])
            last = self._last_key.get(trainer)
            if last is not None and key3 < last:
                raise TraceOrderError(
                    f"trainer {trainer} event {kind} at {key3} behind {last}"
                )
            if kind == "decision" and not self._requests_seen.get(trainer):
                raise TraceOrderError(
                    f"trainer {trainer}: decision before any request"
                )
            if kind == "request":
                self._requests_seen[trainer] = self._requests_seen.get(trainer, 0) + 1
            self._last_key[trainer] = key3

        ev = TraceEvent(
            seq=len(self.events),
            kind=kind,
            trainer=trainer,
            epoch=epoch,
            minibatch=minibatch,
            sim_time=sim_time,
            payload=payload,
        )
        self.events.append(ev)
        return ev

    def iter_events(self, kind: str | None = None, trainer: int | None = None):
        for ev in self.events:
            if kind is not None and ev.kind != kind:
                continue
            if trainer is not None and ev.trainer != trainer:
                continue
            yield ev

    def trainers(self) -> list[int]:
        return sorted({ev.trainer for ev in self.events if ev.trainer >= 0})


def export_trace(trace: Trace, path: str | Path) -> None:
    """One JSON header line, then one JSON line per event, keys sorted."""
    path = Path(path)
    header = {
        "kind": "prefetchsim-trace",
        "schema_version": trace.schema_version,
        "config_hash": trace.config_hash,
        "num_events": len(trace.events),
    }
    with path.open("w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for ev in trace.events:
            fh.write(json.dumps(ev.to_dict(), sort_keys=True) + "\n")


def import_trace(path: str | Path, expected_config_hash: str | None = None) -> Trace:
    """Parse and re-validate a trace file.

    Unknown/newer schema -> TraceSchemaError. A corrupt or truncated body
    raises TraceReadError naming the last intact sequence number. A config
    hash differing from ``expected_config_hash`` degrades the trace to
    read-only with a warning instead of failing.
    """
    path = Path(path)
    with path.open() as fh:
        raw_header = fh.readline()
        try:
            header = json.loads(raw_header)
            assert header.get("kind") == "prefetchsim-trace"
        except (ValueError, AssertionError) as exc:
            raise TraceSchemaError(f"not a trace file: {path}") from exc
        if header.get("schema_version") != SCHEMA_VERSION:
            raise TraceSchemaError(
                f"schema_version {header.get('schema_version')} unsupported "
                f"(expected {SCHEMA_VERSION})"
            )
        trace = Trace(config_hash=str(header.get("config_hash", "")))
        last_good = -1
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                ev = TraceEvent.from_dict(d)
            except (ValueError, KeyError, TypeError) as exc:
                raise TraceReadError(
                    f"corrupt trace at line {lineno}; last good seq {last_good}"
                ) from exc
            trace.record(
                ev.kind, ev.trainer, ev.epoch, ev.minibatch, ev.sim_time, ev.payload
            )
            last_good = ev.seq
        declared = header.get("num_events")
        if declared is not None and declared != len(trace.events):
            raise TraceReadError(
                f"truncated trace: header declares {declared} events, "
                f"found {len(trace.events)}; last good seq {last_good}"
            )
    if expected_config_hash is not None and trace.config_hash != expected_config_hash:
        warnings.warn(
            f"trace config hash {trace.config_hash[:12]} does not match "
            f"expected {expected_config_hash[:12]}; trace opened read-only",
            stacklevel=2,
        )
        trace.read_only = True
    return trace


def samples_from_trace(trace: Trace) -> list[LabeledSample]:
    """Labeled samples from consecutive metrics snapshots, per trainer,
    crossing epoch boundaries: (#metrics - 1) samples per trainer."""
    out: list[LabeledSample] = []
    for t in trace.trainers():
        metrics = [
            RuntimeMetrics.from_dict(ev.payload)
            for ev in trace.iter_events(kind="metrics", trainer=t)
        ]
        for pre, post in zip(metrics, metrics[1:]):
            out.append(dc_replace(label_sample(pre, post), trainer=t))
    return out


def check_metrics_derivation(trace: Trace) -> int:
    """Re-derive the dynamic metrics fields from sample/replacement/fetch
    events and compare against every recorded metrics event. Returns the
    number of metrics events verified; raises TraceConsistencyError on the
    first disagreement."""
    verified = 0
    for t in trace.trainers():
        by_step: dict[int, dict] = {}
        for ev in trace.iter_events(trainer=t):
            slot = by_step.setdefault(ev.minibatch, {"fetch": 0, "replaced_pct": 0.0})
            if ev.kind == "sample":
                slot["n_remote"] = ev.payload["n_remote"]
                slot["n_hits"] = ev.payload["n_hits"]
            elif ev.kind == "fetch":
                slot["fetch"] += int(ev.payload["count"])
            elif ev.kind == "replacement":
                slot["replaced_pct"] = float(ev.payload["replaced_pct"])
            elif ev.kind == "metrics":
                slot["metrics"] = ev.payload
        for step, slot in sorted(by_step.items()):
            if "metrics" not in slot:
                continue
            m = slot["metrics"]
            n_remote = slot.get("n_remote", 0)
            want_hits = 100.0 * slot.get("n_hits", 0) / n_remote if n_remote else 0.0
            if (
                abs(m["pct_hits"] - want_hits) > 1e-9
                or m["comm_volume"] != slot["fetch"]
                or abs(m["nodes_replaced_pct"] - slot["replaced_pct"]) > 1e-9
            ):
                raise TraceConsistencyError(
                    f"trainer {t} step {step}: metrics event disagrees with "
                    f"derivation (hits {m['pct_hits']} vs {want_hits}, "
                    f"comm {m['comm_volume']} vs {slot['fetch']})"
                )
            verified += 1
    return verified
