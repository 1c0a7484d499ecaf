"""Ingestion data types: uploads, image jobs and detection events.

An upload (SMTP envelope or HTTP multipart) becomes an :class:`ImageJob`
with a content-derived ``event_id``; a detector backend turns the job into
a :class:`DetectionEvent`, which is what the ledger pays on.  The id is a
SHA-256 over camera id, capture timestamp and image bytes, so replaying
the same upload can never mint a second payment.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Callable, Sequence

Clock = Callable[[], datetime]


class IngestError(ValueError):
    """An upload that cannot become an image job (bad metadata, no image)."""


def utc_now() -> datetime:
    return datetime.now(timezone.utc)


def ensure_utc(value: datetime) -> datetime:
    """Normalise a datetime to timezone-aware UTC (naive means UTC)."""
    if value.tzinfo is None:
        return value.replace(tzinfo=timezone.utc)
    return value.astimezone(timezone.utc)


def rfc3339(value: datetime) -> str:
    """UTC timestamp in RFC 3339 form with a trailing Z.

    Sub-second parts keep all six microsecond digits so the string parses
    back under the strict fromisoformat of older Pythons.
    """
    value = ensure_utc(value)
    if value.microsecond:
        return value.strftime("%Y-%m-%dT%H:%M:%S.%fZ")
    return value.strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_rfc3339(text: str) -> datetime:
    """Parse an RFC 3339 timestamp (Z or numeric offset) into UTC."""
    normalized = text.strip()
    if normalized.endswith(("Z", "z")):
        normalized = normalized[:-1] + "+00:00"
    if "." in normalized:
        # Pad odd-width fractions to the 6 digits fromisoformat accepts.
        head, _, rest = normalized.partition(".")
        digits = ""
        while rest and rest[0].isdigit():
            digits, rest = digits + rest[0], rest[1:]
        if 0 < len(digits) < 6:
            normalized = f"{head}.{digits.ljust(6, '0')}{rest}"
    try:
        return ensure_utc(datetime.fromisoformat(normalized))
    except ValueError:
        raise IngestError(f"bad timestamp: {text!r}") from None


@dataclass(frozen=True)
class SpeciesDetection:
    """A detector output in wire form: species name, score and pixel box."""

    species: str
    score: float
    box: tuple[float, float, float, float]

    def __post_init__(self) -> None:
        object.__setattr__(self, "box", tuple(float(v) for v in self.box))
        if not self.species:
            raise ValueError("species must be non-empty")
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score must be in [0, 1], got {self.score}")
        if len(self.box) != 4:
            raise ValueError(f"box must have 4 coordinates, got {len(self.box)}")
        x_min, y_min, x_max, y_max = self.box
        if x_max < x_min or y_max < y_min:
            raise ValueError(f"inverted box {self.box}")

    def as_dict(self) -> dict:
        return {"class": self.species, "score": self.score, "box": list(self.box)}

    @classmethod
    def from_dict(cls, data: dict) -> "SpeciesDetection":
        try:
            return cls(
                species=str(data["class"]),
                score=float(data["score"]),
                box=tuple(data["box"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise IngestError(f"bad detection record {data!r}: {exc}") from None


@dataclass(frozen=True)
class CameraConfig:
    """Field configuration of one trap camera."""

    camera_id: str
    width: int = 1920
    height: int = 1072
    trigger_sensitivity: str = "high"
    trigger_range_m: float = 9.0
    uplink_address: str = ""

    def __post_init__(self) -> None:
        if not self.camera_id:
            raise ValueError("camera_id must be non-empty")
        if self.width < 1 or self.height < 1:
            raise ValueError(f"resolution must be positive, got {self.width}x{self.height}")
        if self.trigger_sensitivity not in ("low", "mid", "high"):
            raise ValueError(
                f"trigger_sensitivity must be low/mid/high, got {self.trigger_sensitivity!r}"
            )
        if self.trigger_range_m <= 0:
            raise ValueError(f"trigger_range_m must be positive, got {self.trigger_range_m}")


@dataclass(frozen=True)
class MailEnvelope:
    """One accepted SMTP message, already MIME-decoded."""

    sender: str
    recipient: str
    subject: str
    body: str
    attachments: tuple[tuple[str, bytes], ...] = ()
    date: datetime | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "attachments", tuple(self.attachments))


@dataclass(frozen=True)
class HttpUpload:
    """One HTTP multipart upload: camera metadata plus the image part."""

    camera_id: str
    captured_at: datetime
    image_name: str
    image_bytes: bytes


@dataclass(frozen=True)
class ImageJob:
    """A queued unit of work: one captured image awaiting detection."""

    event_id: str
    camera_id: str
    captured_at: datetime
    image_bytes: bytes
    source: str
    image_ref: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "captured_at", ensure_utc(self.captured_at))
        if not self.image_ref:
            object.__setattr__(self, "image_ref", f"mem:{self.event_id}")


@dataclass(frozen=True)
class DetectionEvent:
    """Post-processed detections for one image, keyed by event id."""

    event_id: str
    camera_id: str
    captured_at: datetime
    detections: tuple[SpeciesDetection, ...]
    image_ref: str = ""
    source: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "captured_at", ensure_utc(self.captured_at))
        object.__setattr__(self, "detections", tuple(self.detections))

    @property
    def is_blank(self) -> bool:
        return not self.detections


def event_digest(camera_id: str, captured_at: datetime, image_bytes: bytes) -> str:
    """Deterministic event id: SHA-256 over identity, timestamp and pixels."""
    h = hashlib.sha256()
    h.update(camera_id.encode("utf-8"))
    h.update(b"\n")
    h.update(rfc3339(captured_at).encode("ascii"))
    h.update(b"\n")
    h.update(image_bytes)
    return h.hexdigest()


_TIMESTAMP_RE = re.compile(
    r"\d{4}-\d{2}-\d{2}[T ]\d{2}:\d{2}:\d{2}(?:\.\d+)?(?:Z|[+-]\d{2}:?\d{2})?"
)

_IMAGE_SUFFIXES = (".jpg", ".jpeg", ".png", ".gif", ".bmp", ".tif", ".tiff", ".webp")


def _timestamp_from_subject(subject: str) -> datetime | None:
    match = _TIMESTAMP_RE.search(subject)
    if not match:
        return None
    text = match.group(0).replace(" ", "T")
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    try:
        return ensure_utc(datetime.fromisoformat(text))
    except ValueError:
        return None


def _camera_from_address(address: str) -> str:
    """Camera id is the mailbox local part; an address without @ passes through."""
    local = address.split("@", 1)[0].strip()
    if not local:
        raise IngestError(f"cannot derive camera id from sender {address!r}")
    return local


def extract_event(
    payload: MailEnvelope | HttpUpload,
    clock: Clock = utc_now,
    *,
    known_cameras: Sequence[str] | None = None,
) -> ImageJob:
    """Turn an upload into an :class:`ImageJob` with a stable event id.

    For mail, the camera id is the sender's mailbox name and the capture
    time comes from the first timestamp found in the subject, falling back
    to the Date header and finally to ``clock``.  The image is the first
    attachment with an image filename (or the first attachment at all).
    Identical payloads always map to the same event id.

    Raises :class:`IngestError` when no image is attached or, if
    ``known_cameras`` is given, when the camera is not registered.
    """
    if isinstance(payload, MailEnvelope):
        camera_id = _camera_from_address(payload.sender)
        captured_at = _timestamp_from_subject(payload.subject)
        if captured_at is None and payload.date is not None:
            captured_at = ensure_utc(payload.date)
        if captured_at is None:
            captured_at = ensure_utc(clock())
        image = None
        for name, blob in payload.attachments:
            if name.lower().endswith(_IMAGE_SUFFIXES):
                image = (name, blob)
                break
        if image is None and payload.attachments:
            image = payload.attachments[0]
        if image is None:
            raise IngestError("mail has no image attachment")
        image_name, image_bytes = image
        source = "smtp"
    else:
        camera_id = payload.camera_id.strip()
        if not camera_id:
            raise IngestError("camera_id must be non-empty")
        captured_at = ensure_utc(payload.captured_at)
        image_name, image_bytes = payload.image_name, payload.image_bytes
        source = "http"

    if not image_bytes:
        raise IngestError(f"image {image_name!r} is empty")
    if known_cameras is not None and camera_id not in known_cameras:
        raise IngestError(f"unknown camera {camera_id!r}")

    return ImageJob(
        event_id=event_digest(camera_id, captured_at, image_bytes),
        camera_id=camera_id,
        captured_at=captured_at,
        image_bytes=image_bytes,
        source=source,
    )
