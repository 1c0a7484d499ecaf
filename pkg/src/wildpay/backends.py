"""Detector backends and the post-processing step between model and ledger.

A backend maps an :class:`~wildpay.events.ImageJob` to raw species
detections.  :class:`FixtureBackend` serves recorded traces (deterministic,
offline); :class:`RemoteBackend` calls an HTTP inference service.
:func:`detect` wraps either with confidence filtering, per-class greedy
suppression and capped-exponential-backoff retries; an upload whose backend
never answers surfaces as :class:`BackendUnavailable` so the caller can
dead-letter it.
"""

from __future__ import annotations

import base64
import json
import time
import urllib.error
import urllib.request
from dataclasses import dataclass
from typing import Callable, Mapping, Protocol, Sequence

from .events import DetectionEvent, ImageJob, SpeciesDetection, rfc3339
from .geometry import BoundingBox, Detection, nms_indices
from .traces import TraceRecord, trace_event_id

DEFAULT_CONFIDENCE_THRESHOLD = 0.5
DEFAULT_NMS_THRESHOLD = 0.6


class BackendUnavailable(Exception):
    """The backend could not produce detections for a job."""

    def __init__(self, reason: str, attempts: int = 1) -> None:
        super().__init__(reason)
        self.reason = reason
        self.attempts = attempts


class DetectorBackend(Protocol):
    """Anything that can turn an image job into raw detections."""

    def infer(self, job: ImageJob) -> Sequence[SpeciesDetection]: ...


class FixtureBackend:
    """Serves pre-recorded detections keyed by event id.

    A job whose event id is not in the fixture raises
    :class:`BackendUnavailable` — the fixture genuinely has no answer for
    it, exactly like a remote model that is down.
    """

    def __init__(self, by_event: Mapping[str, Sequence[SpeciesDetection]]) -> None:
        self._by_event = {k: tuple(v) for k, v in by_event.items()}

    @classmethod
    def from_trace(cls, records: Sequence[TraceRecord]) -> "FixtureBackend":
        return cls({trace_event_id(rec): rec.detections for rec in records})

    def infer(self, job: ImageJob) -> Sequence[SpeciesDetection]:
        try:
            return self._by_event[job.event_id]
        except KeyError:
            raise BackendUnavailable(f"no fixture for event {job.event_id}") from None

    def __len__(self) -> int:
        return len(self._by_event)


class RemoteBackend:
    """HTTP inference service speaking JSON.

    POSTs ``{camera_id, captured_at, image_ref, image_b64}`` to
    ``<base_url>/v1/infer`` and expects ``{"detections": [...]}`` back.
    Network errors, non-200 statuses and undecodable bodies all raise
    :class:`BackendUnavailable`.
    """

    def __init__(self, base_url: str, timeout: float = 10.0) -> None:
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout

    def infer(self, job: ImageJob) -> Sequence[SpeciesDetection]:
        payload = json.dumps(
            {
                "camera_id": job.camera_id,
                "captured_at": rfc3339(job.captured_at),
                "image_ref": job.image_ref,
                "image_b64": base64.b64encode(job.image_bytes).decode("ascii"),
            }
        ).encode("utf-8")
        request = urllib.request.Request(
            self.base_url + "/v1/infer",
            data=payload,
            headers={"Content-Type": "application/json"},
            method="POST",
        )
        try:
            with urllib.request.urlopen(request, timeout=self.timeout) as response:
                if response.status != 200:
                    raise BackendUnavailable(f"inference returned HTTP {response.status}")
                body = response.read()
        except urllib.error.HTTPError as exc:
            raise BackendUnavailable(f"inference returned HTTP {exc.code}") from None
        except (urllib.error.URLError, TimeoutError, OSError) as exc:
            raise BackendUnavailable(f"inference unreachable: {exc}") from None
        try:
            data = json.loads(body)
            return tuple(SpeciesDetection.from_dict(d) for d in data["detections"])
        except (ValueError, KeyError, TypeError) as exc:
            raise BackendUnavailable(f"bad inference response: {exc}") from None


@dataclass(frozen=True)
class RetryPolicy:
    """Capped exponential backoff: delays base, 2*base, 4*base, ... <= cap."""

    max_attempts: int = 4
    base_delay: float = 0.1
    max_delay: float = 2.0

    def __post_init__(self) -> None:
        if self.max_attempts < 1:
            raise ValueError(f"max_attempts must be >= 1, got {self.max_attempts}")
        if self.base_delay < 0 or self.max_delay < 0:
            raise ValueError("delays must be non-negative")

    def delay(self, attempt: int) -> float:
        """Sleep before retry number ``attempt`` (1-based)."""
        return min(self.base_delay * (2.0 ** (attempt - 1)), self.max_delay)


def postprocess(
    raw: Sequence[SpeciesDetection],
    confidence_threshold: float = DEFAULT_CONFIDENCE_THRESHOLD,
    nms_threshold: float = DEFAULT_NMS_THRESHOLD,
) -> tuple[SpeciesDetection, ...]:
    """Confidence-filter then per-class greedy NMS, preserving wire types.

    Species names map to temporary integer ids (sorted order) so the
    geometry-level suppressor can enforce the per-class rule; survivors are
    returned in keep order (score descending).
    """
    if not (0.0 <= confidence_threshold <= 1.0):
        raise ValueError(f"confidence_threshold must be in [0, 1], got {confidence_threshold}")
    kept = [d for d in raw if d.score >= confidence_threshold]
    if not kept:
        return ()
    name_to_id = {name: i for i, name in enumerate(sorted({d.species for d in kept}))}
    boxed = [
        Detection(box=BoundingBox(*d.box), class_id=name_to_id[d.species], score=d.score)
        for d in kept
    ]
    return tuple(kept[i] for i in nms_indices(boxed, nms_threshold))


def detect(
    job: ImageJob,
    backend: DetectorBackend,
    confidence_threshold: float = DEFAULT_CONFIDENCE_THRESHOLD,
    nms_threshold: float = DEFAULT_NMS_THRESHOLD,
    *,
    retry: RetryPolicy = RetryPolicy(),
    sleep: Callable[[float], None] = time.sleep,
) -> DetectionEvent:
    """Run one job through a backend and post-process the result.

    Backend failures are retried up to ``retry.max_attempts`` times with
    capped exponential backoff; if every attempt fails the final
    :class:`BackendUnavailable` propagates with the attempt count so the
    pipeline can dead-letter the event.  An image with no surviving
    detections yields a blank (payable-to-nobody) event, not an error.
    """
    last_error: BackendUnavailable | None = None
    raw: Sequence[SpeciesDetection] | None = None
    for attempt in range(1, retry.max_attempts + 1):
        try:
            raw = backend.infer(job)
            break
        except BackendUnavailable as exc:
            last_error = exc
            if attempt < retry.max_attempts:
                sleep(retry.delay(attempt))
    if raw is None:
        assert last_error is not None
        raise BackendUnavailable(last_error.reason, attempts=retry.max_attempts)

    survivors = postprocess(raw, confidence_threshold, nms_threshold)
    return DetectionEvent(
        event_id=job.event_id,
        camera_id=job.camera_id,
        captured_at=job.captured_at,
        detections=survivors,
        image_ref=job.image_ref,
        source=job.source,
    )
