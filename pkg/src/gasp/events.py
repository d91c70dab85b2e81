"""Append-only run event log and replay.

One JSON object per line. Events are buffered per iteration and written on
``commit``; an aborted iteration is dropped with ``rollback`` so the file
never holds half an iteration. Timestamps are written but excluded from
``digest``, which is what two identical runs must agree on.
"""

from __future__ import annotations

import hashlib
import json
import math
from collections import defaultdict
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Iterator

from .buffers import BufferEntry, GlobalBuffer
from .goalposts import SolveMatrix

EVENT_KINDS = ("proposal", "acceptance", "rejection", "reward", "trainer_update", "solve_record", "metric")


def _clean(obj):
    """JSON-safe copy: NaN/inf become null, tuples become lists."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if hasattr(obj, "item") and callable(obj.item):  # numpy scalars
        return _clean(obj.item())
    return obj


@dataclass(frozen=True)
class RunEvent:
    seq: int
    seed: int
    step: int
    phase: str
    kind: str
    payload: dict
    timestamp: str = ""

    def canonical(self) -> str:
        return json.dumps(
            {"seq": self.seq, "seed": self.seed, "step": self.step, "phase": self.phase, "kind": self.kind, "payload": self.payload},
            sort_keys=True,
            separators=(",", ":"),
        )

    def to_line(self) -> str:
        body = json.loads(self.canonical())
        body["timestamp"] = self.timestamp
        return json.dumps(body, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "RunEvent":
        return cls(d["seq"], d["seed"], d["step"], d["phase"], d["kind"], d["payload"], d.get("timestamp", ""))


class EventLog:
    def __init__(self, path: str | Path | None = None, *, clock=None):
        self.path = Path(path) if path is not None else None
        self.events: list[RunEvent] = []
        self._pending: list[RunEvent] = []
        self._seq = 0
        self._clock = clock or (lambda: datetime.now(timezone.utc).isoformat())
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("")

    def emit(self, seed: int, step: int, phase: str, kind: str, payload: dict) -> RunEvent:
        if kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {kind!r}")
        ev = RunEvent(self._seq + len(self._pending), seed, step, phase, kind, _clean(payload), self._clock())
        self._pending.append(ev)
        return ev

    def commit(self) -> None:
        if not self._pending:
            return
        if self.path is not None:
            with open(self.path, "a") as fh:
                for ev in self._pending:
                    fh.write(ev.to_line() + "\n")
                fh.flush()
        self.events.extend(self._pending)
        self._seq += len(self._pending)
        self._pending = []

    def rollback(self) -> int:
        dropped = len(self._pending)
        self._pending = []
        return dropped

    @property
    def pending(self) -> list[RunEvent]:
        return list(self._pending)

    def digest(self) -> str:
        return digest_events(self.events)


def digest_events(events: Iterable[RunEvent]) -> str:
    h = hashlib.sha256()
    for ev in events:
        h.update(ev.canonical().encode())
        h.update(b"\n")
    return h.hexdigest()


def read_events(path: str | Path) -> list[RunEvent]:
    with open(path) as fh:
        return [RunEvent.from_dict(json.loads(l)) for l in fh if l.strip()]


def iter_kind(events: Iterable[RunEvent], kind: str, phase: str | None = None) -> Iterator[RunEvent]:
    for ev in events:
        if ev.kind == kind and (phase is None or ev.phase == phase):
            yield ev


@dataclass
class ReplayState:
    buffers: dict[int, dict[str, GlobalBuffer]]
    solve_matrix: SolveMatrix


def replay(events: Iterable[RunEvent]) -> ReplayState:
    """Rebuild global buffers (per seed) and the solve matrix from events.

    Accepted entries join their global buffer at the ``trainer_update`` that
    closes their phase, mirroring the live loop.
    """
    buffers: dict[int, dict[str, GlobalBuffer]] = defaultdict(dict)
    pending: dict[tuple[int, str], list[BufferEntry]] = defaultdict(list)
    matrix = SolveMatrix()
    for ev in events:
        if ev.kind == "metric" and ev.payload.get("name") == "run_start":
            for name in ev.payload.get("buffers", []):
                buffers[ev.seed].setdefault(name, GlobalBuffer(name))
            for g in ev.payload.get("goalposts", []):
                matrix.add_goalpost(g)
        elif ev.kind == "acceptance":
            p = ev.payload
            pending[(ev.seed, ev.phase)].append(
                BufferEntry(p["proposal_id"], p["statement_embedding"], p["code_embedding"], ev.step)
            )
        elif ev.kind == "trainer_update" and ev.payload.get("appends_buffer"):
            key = (ev.seed, ev.phase)
            buf = buffers[ev.seed].setdefault(ev.phase, GlobalBuffer(ev.phase))
            for e in pending.pop(key, []):
                buf._append(e)
        elif ev.kind == "solve_record":
            p = ev.payload
            matrix.add_goalpost(p["goalpost"])
            matrix.record_solve(p["goalpost"], p["checkpoint"], ev.seed, p["successes"], p["samples"])
    return ReplayState(dict(buffers), matrix)


def metric_series(events: Iterable[RunEvent]) -> dict[tuple[int, str], list[tuple[int, float]]]:
    """``(seed, name) -> [(step, value), ...]`` for every numeric metric event."""
    out: dict[tuple[int, str], list[tuple[int, float]]] = defaultdict(list)
    for ev in iter_kind(events, "metric"):
        val = ev.payload.get("value")
        if isinstance(val, (int, float)) and not isinstance(val, bool):
            out[(ev.seed, ev.payload["name"])].append((ev.step, float(val)))
    return dict(out)
