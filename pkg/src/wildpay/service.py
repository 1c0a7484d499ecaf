"""The assembled pipeline: intake listeners, a worker pool and the ledger.

Camera uploads arrive over SMTP (mail with an image attachment) or HTTP
(multipart POST).  Each upload becomes an :class:`ImageJob` with a
content-derived event id, lands on a queue with at-least-once delivery,
and is processed by worker threads: detector backend, post-processing,
then a ledger payout.  The ledger's event-id dedup turns the at-least-
once queue into effectively exactly-once payments, so retransmissions
and duplicate submissions are harmless.

The HTTP surface also exposes the ledger read API (accounts, journal,
replay-counts).
"""

from __future__ import annotations

import json
import logging
import queue
import threading
from dataclasses import dataclass, field
from email import policy
from email.parser import BytesParser
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, unquote, urlparse

from .backends import (
    BackendUnavailable,
    DetectorBackend,
    FixtureBackend,
    RemoteBackend,
    detect,
)
from .config import RunConfig
from .events import (
    HttpUpload,
    ImageJob,
    IngestError,
    MailEnvelope,
    SpeciesDetection,
    ensure_utc,
    extract_event,
    parse_rfc3339,
    rfc3339,
    utc_now,
)
from .ledger import Ledger, format_pence, replay_counts
from .smtp_server import SmtpServer
from .traces import read_trace

log = logging.getLogger(__name__)

EVENT_STATUSES = ("pending", "processed", "dead")

_QUEUE_STOP = None  # sentinel handed to workers at shutdown


@dataclass
class EventRecord:
    """Mutable processing state for one submitted event."""

    event_id: str
    camera_id: str
    captured_at: str
    source: str
    image_ref: str
    status: str = "pending"
    attempts: int = 0
    transfers: int = 0
    reason: str | None = None
    detections: tuple[SpeciesDetection, ...] = field(default_factory=tuple)

    def as_dict(self) -> dict:
        return {
            "event_id": self.event_id,
            "camera_id": self.camera_id,
            "captured_at": self.captured_at,
            "source": self.source,
            "image_ref": self.image_ref,
            "status": self.status,
            "attempts": self.attempts,
            "transfers": self.transfers,
            "reason": self.reason,
            "detections": [det.as_dict() for det in self.detections],
        }


class EventStore:
    """Thread-safe event_id -> record map backing GET /v1/events/{id}."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._records: dict[str, EventRecord] = {}

    def add(self, job: ImageJob, image_ref: str | None = None) -> EventRecord:
        with self._lock:
            record = self._records.get(job.event_id)
            if record is None:
                record = EventRecord(
                    event_id=job.event_id,
                    camera_id=job.camera_id,
                    captured_at=rfc3339(job.captured_at),
                    source=job.source,
                    image_ref=image_ref or job.image_ref,
                )
                self._records[job.event_id] = record
            record.attempts += 1
            return record

    def get(self, event_id: str) -> EventRecord | None:
        with self._lock:
            return self._records.get(event_id)

    def mark_processed(
        self, event_id: str, detections: tuple[SpeciesDetection, ...], transfers: int
    ) -> None:
        with self._lock:
            record = self._records[event_id]
            record.status = "processed"
            record.detections = detections
            record.transfers = transfers
            record.reason = None

    def mark_dead(self, event_id: str, reason: str) -> None:
        with self._lock:
            record = self._records[event_id]
            record.status = "dead"
            record.reason = reason

    def counts(self) -> dict[str, int]:
        with self._lock:
            out = {status: 0 for status in EVENT_STATUSES}
            for record in self._records.values():
                out[record.status] += 1
            return out

    def records(self) -> list[EventRecord]:
        with self._lock:
            return list(self._records.values())

    def __len__(self) -> int:
        with self._lock:
            return len(self._records)


def parse_multipart_upload(
    content_type: str, body: bytes, clock=utc_now
) -> HttpUpload:
    """Decode a multipart/form-data POST into an :class:`HttpUpload`.

    Expects a ``metadata`` JSON part ({camera_id, captured_at}) and one
    file part carrying the image bytes.
    """
    if "multipart" not in content_type.lower():
        raise IngestError(f"expected a multipart body, got {content_type!r}")
    header = f"Content-Type: {content_type}\r\nMIME-Version: 1.0\r\n\r\n"
    message = BytesParser(policy=policy.default).parsebytes(
        header.encode("latin-1") + body
    )
    if not message.is_multipart():
        raise IngestError("multipart body failed to parse (missing boundary?)")

    metadata: dict | None = None
    image_name: str | None = None
    image_bytes: bytes | None = None
    for part in message.iter_parts():
        payload = part.get_payload(decode=True) or b""
        filename = part.get_filename()
        name = part.get_param("name", header="content-disposition")
        if filename is not None and image_bytes is None:
            image_name, image_bytes = filename, payload
        elif metadata is None and (
            name == "metadata" or part.get_content_type() == "application/json"
        ):
            try:
                metadata = json.loads(payload.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                raise IngestError(f"metadata part is not valid JSON: {exc}") from exc
    if image_bytes is None:
        raise IngestError("upload has no file part")
    if not isinstance(metadata, dict):
        raise IngestError("upload has no metadata JSON part")
    camera_id = str(metadata.get("camera_id", "")).strip()
    if not camera_id:
        raise IngestError("metadata must carry a camera_id")
    raw_time = metadata.get("captured_at")
    if raw_time:
        try:
            captured_at = parse_rfc3339(str(raw_time))
        except ValueError as exc:
            raise IngestError(f"bad captured_at: {exc}") from exc
    else:
        captured_at = ensure_utc(clock())
    return HttpUpload(
        camera_id=camera_id,
        captured_at=captured_at,
        image_name=image_name or "upload.img",
        image_bytes=image_bytes,
    )


class PipelineService:
    """Wires listeners, workers and ledger together for ``serve``.

    Also usable headless (no listeners) for offline replay: construct,
    feed :meth:`submit_job`, then :meth:`drain`.
    """

    def __init__(
        self,
        config: RunConfig,
        *,
        backend: DetectorBackend | None = None,
        clock=utc_now,
    ) -> None:
        self.config = config
        self.clock = clock
        self.backend = backend if backend is not None else self._build_backend(config)
        self.store = EventStore()
        self.queue: queue.Queue = queue.Queue()
        self.ledger = self._open_ledger(config, clock)
        self._workers: list[threading.Thread] = []
        self._smtp: SmtpServer | None = None
        self._http: ThreadingHTTPServer | None = None
        self._http_thread: threading.Thread | None = None
        self._started = False
        self._rejected = 0

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _build_backend(config: RunConfig) -> DetectorBackend:
        if config.backend_kind == "remote":
            if not config.backend_url:
                raise ValueError("remote backend requires a backend URL")
            return RemoteBackend(config.backend_url, timeout=config.backend_timeout)
        if not config.backend_trace:
            return FixtureBackend({})
        records, skipped = read_trace(config.backend_trace)
        if skipped:
            log.warning("fixture trace: skipped %d malformed lines", skipped)
        return FixtureBackend.from_trace(records)

    @staticmethod
    def _open_ledger(config: RunConfig, clock) -> Ledger:
        journal = Path(config.journal_path)
        journal.parent.mkdir(parents=True, exist_ok=True)
        if journal.exists() and journal.stat().st_size > 0:
            snapshot = Path(config.snapshot_path)
            ledger, report = Ledger.restore(
                journal,
                snapshot_path=snapshot if snapshot.exists() else None,
                resume=True,
                clock=clock,
            )
            if report.truncated:
                log.warning(
                    "journal tail truncated at line %s during restore",
                    report.truncated_at_line,
                )
            return ledger
        ledger = Ledger(journal, clock=clock)
        ledger.open_account(
            config.guardian_account, initial_credit=config.initial_credit
        )
        for species in config.species:
            ledger.open_account(species, initial_credit=config.initial_credit)
        return ledger

    # -- intake ----------------------------------------------------------------

    def submit_job(self, job: ImageJob) -> str:
        """Store the image, record the event and queue it for detection."""
        image_ref = job.image_ref
        image_dir = self.config.image_dir
        if image_dir:
            directory = Path(image_dir)
            directory.mkdir(parents=True, exist_ok=True)
            path = directory / f"{job.event_id}.img"
            if not path.exists():
                path.write_bytes(job.image_bytes)
            image_ref = str(path)
        self.store.add(job, image_ref=image_ref)
        self.queue.put(job)
        return job.event_id

    def submit_envelope(self, envelope: MailEnvelope) -> str | None:
        """SMTP delivery callback; rejects (and counts) bad envelopes."""
        try:
            job = extract_event(envelope, self.clock)
        except IngestError as exc:
            self._rejected += 1
            log.warning("rejected mail from %s: %s", envelope.sender, exc)
            return None
        return self.submit_job(job)

    @property
    def rejected(self) -> int:
        return self._rejected

    # -- processing -------------------------------------------------------------

    def process_job(self, job: ImageJob) -> None:
        try:
            event = detect(
                job,
                self.backend,
                self.config.confidence_threshold,
                self.config.nms_threshold,
            )
        except BackendUnavailable as exc:
            reason = f"backend_unavailable:{exc.reason}"
            self.ledger.dead_letter(job.event_id, reason)
            self.store.mark_dead(job.event_id, reason)
            return
        transfers = self.ledger.apply_detection_event(
            event, self.config.payout_policy()
        )
        if self.ledger.is_dead_lettered(event.event_id):
            self.store.mark_dead(event.event_id, "unknown_species")
            return
        self.store.mark_processed(event.event_id, event.detections, len(transfers))

    def _worker_loop(self) -> None:
        while True:
            job = self.queue.get()
            try:
                if job is _QUEUE_STOP:
                    return
                try:
                    self.process_job(job)
                except Exception:  # keep the pool alive; the event stays pending
                    log.exception("worker failed on event %s", job.event_id)
            finally:
                self.queue.task_done()

    def drain(self) -> None:
        """Block until every queued job has been processed."""
        self.queue.join()

    # -- lifecycle ----------------------------------------------------------------

    def start(self) -> None:
        if self._started:
            raise RuntimeError("service already started")
        self._started = True
        for _ in range(max(1, self.config.workers)):
            thread = threading.Thread(target=self._worker_loop, daemon=True)
            thread.start()
            self._workers.append(thread)
        self._smtp = SmtpServer(
            host=self.config.smtp_host,
            port=self.config.smtp_port,
            on_message=self.submit_envelope,
            max_message_bytes=self.config.max_message_bytes,
        )
        self._smtp.start()
        handler = _make_api_handler(self)
        self._http = ThreadingHTTPServer(
            (self.config.http_host, self.config.http_port), handler
        )
        self._http_thread = threading.Thread(
            target=self._http.serve_forever, daemon=True
        )
        self._http_thread.start()

    def stop(self) -> None:
        """Stop intake, drain workers, snapshot and close the journal."""
        if self._smtp is not None:
            self._smtp.stop()
            self._smtp = None
        if self._http is not None:
            self._http.shutdown()
            self._http.server_close()
            self._http = None
        if self._http_thread is not None:
            self._http_thread.join(timeout=5)
            self._http_thread = None
        for _ in self._workers:
            self.queue.put(_QUEUE_STOP)
        for thread in self._workers:
            thread.join(timeout=5)
        self._workers.clear()
        if self.config.snapshot_path:
            snapshot = Path(self.config.snapshot_path)
            snapshot.parent.mkdir(parents=True, exist_ok=True)
            self.ledger.write_snapshot(snapshot)
        self.ledger.close()
        self._started = False

    @property
    def smtp_port(self) -> int:
        if self._smtp is None:
            raise RuntimeError("SMTP listener not running")
        return self._smtp.port

    @property
    def http_port(self) -> int:
        if self._http is None:
            raise RuntimeError("HTTP listener not running")
        return self._http.server_address[1]


# ---------------------------------------------------------------------------
# HTTP API
# ---------------------------------------------------------------------------


def _account_payload(ledger: Ledger, account_id: str) -> dict:
    account = ledger.account(account_id)
    return {
        "account_id": account.account_id,
        "balance_pence": account.balance,
        "balance": format_pence(account.balance),
        "initial_credit_pence": account.initial_credit,
    }


def _make_api_handler(service: PipelineService):
    class ApiHandler(BaseHTTPRequestHandler):
        server_version = "wildpay"
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):  # route through logging, not stderr
            log.debug("http: " + fmt, *args)

        def _send_json(self, code: int, payload: dict) -> None:
            body = json.dumps(payload, sort_keys=True).encode("utf-8")
            self.send_response(code)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _error(self, code: int, message: str) -> None:
            self._send_json(code, {"error": message})

        # -- GET ---------------------------------------------------------------

        def do_GET(self) -> None:
            url = urlparse(self.path)
            parts = [unquote(p) for p in url.path.split("/") if p]
            try:
                if parts == ["v1", "accounts"]:
                    accounts = [
                        _account_payload(service.ledger, acct.account_id)
                        for acct in service.ledger.accounts()
                    ]
                    self._send_json(200, {"accounts": accounts})
                elif len(parts) == 3 and parts[:2] == ["v1", "accounts"]:
                    account_id = parts[2]
                    if not service.ledger.has_account(account_id):
                        self._error(404, f"no such account {account_id!r}")
                        return
                    payload = _account_payload(service.ledger, account_id)
                    recent = [
                        record.as_dict()
                        for record in service.ledger.journal
                        if account_id in (record.from_account, record.to_account)
                    ][-20:]
                    payload["recent_transfers"] = recent
                    self._send_json(200, payload)
                elif parts == ["v1", "ledger", "journal"]:
                    params = parse_qs(url.query)
                    try:
                        start = (
                            parse_rfc3339(params["from"][0]) if "from" in params else None
                        )
                        end = parse_rfc3339(params["to"][0]) if "to" in params else None
                        records = service.ledger.journal_between(start, end)
                    except ValueError as exc:
                        self._error(400, str(exc))
                        return
                    self._send_json(
                        200, {"records": [record.as_dict() for record in records]}
                    )
                elif len(parts) == 3 and parts[:2] == ["v1", "events"]:
                    record = service.store.get(parts[2])
                    if record is None:
                        self._error(404, f"no such event {parts[2]!r}")
                        return
                    self._send_json(200, record.as_dict())
                else:
                    self._error(404, f"unknown path {url.path!r}")
            except Exception as exc:  # noqa: BLE001 - keep the listener alive
                log.exception("GET %s failed", self.path)
                self._error(500, str(exc))

        # -- POST ----------------------------------------------------------------

        def _read_body(self) -> bytes:
            length = int(self.headers.get("Content-Length", "0") or "0")
            return self.rfile.read(length) if length > 0 else b""

        def do_POST(self) -> None:
            url = urlparse(self.path)
            parts = [unquote(p) for p in url.path.split("/") if p]
            try:
                if parts == ["v1", "events"]:
                    content_type = self.headers.get("Content-Type", "")
                    body = self._read_body()
                    try:
                        upload = parse_multipart_upload(
                            content_type, body, service.clock
                        )
                        job = extract_event(upload, service.clock)
                    except IngestError as exc:
                        self._error(400, str(exc))
                        return
                    event_id = service.submit_job(job)
                    self._send_json(202, {"event_id": event_id})
                elif parts == ["v1", "ledger", "replay-counts"]:
                    try:
                        data = json.loads(self._read_body().decode("utf-8"))
                    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                        self._error(400, f"body is not valid JSON: {exc}")
                        return
                    counts = data.get("counts", data) if isinstance(data, dict) else None
                    if not isinstance(counts, dict) or not all(
                        isinstance(v, int) and v >= 0 for v in counts.values()
                    ):
                        self._error(400, "expected {species: non-negative count}")
                        return
                    table = replay_counts(counts, service.config.payout_policy())
                    self._send_json(
                        200,
                        {
                            "rows": [
                                {
                                    "species": row.species,
                                    "detections": row.detections,
                                    "pence": row.pence,
                                    "gbp": row.formatted,
                                }
                                for row in table.rows
                            ],
                            "total_detections": table.total_detections,
                            "total_pence": table.total_pence,
                            "total_gbp": format_pence(table.total_pence),
                        },
                    )
                else:
                    self._error(404, f"unknown path {url.path!r}")
            except Exception as exc:  # noqa: BLE001
                log.exception("POST %s failed", self.path)
                self._error(500, str(exc))

    return ApiHandler
