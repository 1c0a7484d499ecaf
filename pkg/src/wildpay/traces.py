"""Recorded detector traces: JSON-lines files that stand in for a live model.

Each line is one captured image with its final detections::

    {"camera_id": "cam03", "captured_at": "2020-05-01T06:00:00Z",
     "detections": [{"class": "Equus quagga", "score": 0.97,
                     "box": [100, 120, 340, 400]}]}

An optional ``event_id`` pins the id; otherwise one is derived from the
record content.  Traces drive both offline replay and the fixture detector
backend.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass
from datetime import datetime, timedelta
from typing import Callable, Iterable, Iterator, Sequence

from .events import (
    ImageJob,
    IngestError,
    SpeciesDetection,
    ensure_utc,
    parse_rfc3339,
    rfc3339,
)

logger = logging.getLogger(__name__)


class TraceError(ValueError):
    """A trace line that cannot be parsed into a record."""


@dataclass(frozen=True)
class TraceRecord:
    """One trace line: camera, capture time and final detections."""

    camera_id: str
    captured_at: datetime
    detections: tuple[SpeciesDetection, ...] = ()
    event_id: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "captured_at", ensure_utc(self.captured_at))
        object.__setattr__(self, "detections", tuple(self.detections))
        if not self.camera_id:
            raise TraceError("camera_id must be non-empty")

    def as_dict(self) -> dict:
        out = {
            "camera_id": self.camera_id,
            "captured_at": rfc3339(self.captured_at),
            "detections": [det.as_dict() for det in self.detections],
        }
        if self.event_id is not None:
            out["event_id"] = self.event_id
        return out


def parse_trace_line(line: str) -> TraceRecord:
    """Parse one JSON trace line; raises :class:`TraceError` on any defect."""
    try:
        data = json.loads(line)
    except json.JSONDecodeError as exc:
        raise TraceError(f"not JSON: {exc}") from None
    if not isinstance(data, dict):
        raise TraceError(f"expected an object, got {type(data).__name__}")
    try:
        camera_id = str(data["camera_id"])
        captured_at = parse_rfc3339(str(data["captured_at"]))
        raw = data.get("detections", [])
        if not isinstance(raw, list):
            raise TraceError("detections must be a list")
        detections = tuple(SpeciesDetection.from_dict(d) for d in raw)
    except KeyError as exc:
        raise TraceError(f"missing field {exc.args[0]!r}") from None
    except (IngestError, ValueError) as exc:
        raise TraceError(str(exc)) from None
    event_id = data.get("event_id")
    return TraceRecord(
        camera_id=camera_id,
        captured_at=captured_at,
        detections=detections,
        event_id=str(event_id) if event_id is not None else None,
    )


def read_trace(path) -> tuple[list[TraceRecord], int]:
    """Read a JSONL trace file.

    Returns the parsed records plus the number of lines skipped as
    malformed (each skip is logged with its line number; blank lines are
    ignored silently).
    """
    records: list[TraceRecord] = []
    skipped = 0
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                records.append(parse_trace_line(line))
            except TraceError as exc:
                skipped += 1
                logger.warning("%s:%d skipped: %s", path, lineno, exc)
    return records, skipped


def write_trace(records: Iterable[TraceRecord], path) -> None:
    """Write records as one JSON object per line."""
    with open(path, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record.as_dict(), sort_keys=True) + "\n")


def trace_event_id(record: TraceRecord) -> str:
    """The record's pinned event id, or a digest of its canonical content."""
    if record.event_id:
        return record.event_id
    h = hashlib.sha256()
    h.update(record.camera_id.encode("utf-8"))
    h.update(b"\n")
    h.update(rfc3339(record.captured_at).encode("ascii"))
    h.update(b"\n")
    payload = json.dumps([d.as_dict() for d in record.detections], sort_keys=True)
    h.update(payload.encode("utf-8"))
    return h.hexdigest()


def record_to_job(record: TraceRecord, source: str = "replay") -> ImageJob:
    """Wrap a trace record as an image job (the 'image' is its canonical id)."""
    event_id = trace_event_id(record)
    return ImageJob(
        event_id=event_id,
        camera_id=record.camera_id,
        captured_at=record.captured_at,
        image_bytes=event_id.encode("ascii"),
        source=source,
        image_ref=f"trace:{event_id}",
    )


def replay(
    records: Sequence[TraceRecord],
    speed: float = 0.0,
    *,
    sleep: Callable[[float], None] = time.sleep,
    source: str = "replay",
) -> Iterator[ImageJob]:
    """Yield jobs for a trace in capture-time order.

    ``speed`` scales the original inter-capture gaps: 0 replays as fast as
    possible, 1 in real time, 2 twice as fast.  Records with equal
    timestamps keep their trace order (stable sort), so the emitted order
    never depends on speed.
    """
    if speed < 0:
        raise ValueError(f"speed must be non-negative, got {speed}")
    ordered = sorted(records, key=lambda r: r.captured_at)
    previous: datetime | None = None
    for record in ordered:
        if speed > 0 and previous is not None:
            gap = (record.captured_at - previous).total_seconds()
            if gap > 0:
                sleep(gap / speed)
        previous = record.captured_at
        yield record_to_job(record, source=source)


def synthetic_records_from_counts(
    counts: dict[str, int],
    *,
    camera_id: str = "cam01",
    start: datetime | None = None,
    score: float = 0.9,
    spacing: timedelta = timedelta(seconds=1),
) -> list[TraceRecord]:
    """Build a one-detection-per-image trace realising the given species counts.

    Useful for desk trials: feeding the result through the pipeline must
    pay the guardian exactly ``unit_amount * count`` out of each species'
    account.  Boxes
    are laid out on a grid so no two detections in an image overlap (there
    is only one per image anyway) and every species appears ``counts[s]``
    times, in sorted species order.
    """
    if start is None:
        start = ensure_utc(datetime(2020, 5, 1, 6, 0, 0))
    records: list[TraceRecord] = []
    tick = 0
    for species in sorted(counts):
        n = counts[species]
        if n < 0:
            raise ValueError(f"count for {species!r} must be non-negative, got {n}")
        for _ in range(n):
            x = 10.0 + 50.0 * (tick % 20)
            y = 10.0 + 50.0 * ((tick // 20) % 20)
            det = SpeciesDetection(species=species, score=score, box=(x, y, x + 40, y + 40))
            records.append(
                TraceRecord(
                    camera_id=camera_id,
                    captured_at=start + spacing * tick,
                    detections=(det,),
                )
            )
            tick += 1
    return records
