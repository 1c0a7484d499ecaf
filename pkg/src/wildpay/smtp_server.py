"""A minimal SMTP receiver for camera-trap uploads.

Camera firmware in the field speaks just enough SMTP to hand over a JPEG,
so this implements just enough of the other side: HELO/EHLO, MAIL FROM,
RCPT TO, DATA, RSET, NOOP and QUIT, one message per session, with a size
cap.  The session driver reads from arbitrary binary streams, which keeps
it testable (and fuzzable) without sockets; :class:`SmtpServer` puts it
behind a threaded TCP listener.

Hostile or garbage input must never crash a session: unknown commands get
``500``, bad syntax ``501``, out-of-order commands ``503``, oversized
messages ``552``, and the driver simply returns when the peer disappears.
"""

from __future__ import annotations

import email
import email.header
import email.utils
import logging
import re
import socketserver
import threading
from datetime import datetime
from typing import BinaryIO, Callable, Optional

from .events import MailEnvelope

logger = logging.getLogger(__name__)

DEFAULT_SMTP_PORT = 2525
DEFAULT_MAX_MESSAGE_BYTES = 10 * 1024 * 1024

_MAX_LINE = 4096
_MAX_DATA_CHUNK = 65536
_MAX_COMMANDS = 1000

_MAIL_RE = re.compile(r"(?i)^MAIL\s+FROM\s*:\s*(.*)$")
_RCPT_RE = re.compile(r"(?i)^RCPT\s+TO\s*:\s*(.*)$")


def _parse_address(rest: str) -> str | None:
    """Pull the address out of a MAIL FROM / RCPT TO argument.

    Accepts ``<user@host>`` (ESMTP parameters after the bracket are
    ignored) or a bare token.  Returns None when no address is present.
    """
    rest = rest.strip()
    if rest.startswith("<"):
        end = rest.find(">")
        if end < 0:
            return None
        address = rest[1:end].strip()
    else:
        address = rest.split()[0] if rest.split() else ""
    return address or None


def _decode_header(value: str) -> str:
    try:
        return str(email.header.make_header(email.header.decode_header(value)))
    except Exception:  # noqa: BLE001 - header decoding must never kill a session
        return value


def envelope_from_message(raw: bytes, sender: str, recipient: str) -> MailEnvelope:
    """MIME-decode an accepted message into a :class:`MailEnvelope`.

    Never raises on malformed MIME: undecodable parts are skipped, a
    missing body becomes the empty string.
    """
    msg = email.message_from_bytes(raw)
    subject = _decode_header(msg.get("Subject", ""))
    date: Optional[datetime] = None
    if msg.get("Date"):
        try:
            date = email.utils.parsedate_to_datetime(msg["Date"])
        except (TypeError, ValueError):
            date = None

    body = ""
    attachments: list[tuple[str, bytes]] = []
    for part in msg.walk():
        if part.get_content_maintype() == "multipart":
            continue
        filename = part.get_filename()
        try:
            payload = part.get_payload(decode=True)
        except Exception:  # noqa: BLE001
            payload = None
        if filename:
            attachments.append((_decode_header(filename), payload or b""))
        elif part.get_content_type() == "text/plain" and not body:
            charset = part.get_content_charset() or "utf-8"
            try:
                body = (payload or b"").decode(charset, errors="replace")
            except LookupError:
                body = (payload or b"").decode("utf-8", errors="replace")
    return MailEnvelope(
        sender=sender,
        recipient=recipient,
        subject=subject,
        body=body,
        attachments=tuple(attachments),
        date=date,
    )


def _reply(wfile: BinaryIO, line: str) -> None:
    wfile.write(line.encode("latin-1", errors="replace") + b"\r\n")
    wfile.flush()


def _read_data(rfile: BinaryIO, max_bytes: int) -> tuple[bytes | None, bool]:
    """Read message content up to the lone-dot terminator.

    Returns ``(raw_message, terminated)``; ``raw_message`` is None when the
    size cap was blown (content is still consumed through the terminator so
    the session can continue).  Dot-stuffed lines are unstuffed.
    """
    chunks: list[bytes] = []
    size = 0
    overflow = False
    at_line_start = True
    while True:
        chunk = rfile.readline(_MAX_DATA_CHUNK)
        if not chunk:
            return None, False  # peer vanished mid-DATA
        if at_line_start:
            if chunk in (b".\r\n", b".\n"):
                break
            if chunk.startswith(b".."):
                chunk = chunk[1:]
        at_line_start = chunk.endswith(b"\n")
        if not overflow:
            size += len(chunk)
            if size > max_bytes:
                overflow = True
                chunks.clear()
            else:
                chunks.append(chunk)
    if overflow:
        return None, True
    return b"".join(chunks), True


def smtp_receive(
    rfile: BinaryIO,
    wfile: BinaryIO,
    *,
    hostname: str = "wildpay",
    max_message_bytes: int = DEFAULT_MAX_MESSAGE_BYTES,
    on_message: Callable[[MailEnvelope], None] | None = None,
) -> MailEnvelope | None:
    """Drive one SMTP session over a pair of binary streams.

    Accepts at most one message; returns its envelope (None if the session
    ended without a complete message).  ``on_message`` additionally fires
    the moment the message is accepted, before QUIT.
    """
    _reply(wfile, f"220 {hostname} SMTP wildpay")
    sender: str | None = None
    recipient: str | None = None
    completed: MailEnvelope | None = None

    for _ in range(_MAX_COMMANDS):
        line = rfile.readline(_MAX_LINE)
        if not line:
            break
        try:
            text = line.decode("latin-1").rstrip("\r\n")
        except Exception:  # pragma: no cover - latin-1 cannot fail
            _reply(wfile, "500 unrecognised command")
            continue
        stripped = text.strip()
        if not stripped:
            _reply(wfile, "500 empty command")
            continue
        verb = stripped.split()[0].upper()

        if verb in ("HELO", "EHLO"):
            _reply(wfile, f"250 {hostname}")
        elif verb == "NOOP":
            _reply(wfile, "250 ok")
        elif verb == "RSET":
            sender = None
            recipient = None
            _reply(wfile, "250 ok")
        elif verb == "QUIT":
            _reply(wfile, f"221 {hostname} closing")
            break
        elif verb == "MAIL":
            if completed is not None:
                _reply(wfile, "503 one message per session")
            elif sender is not None:
                _reply(wfile, "503 nested MAIL command")
            else:
                match = _MAIL_RE.match(stripped)
                address = _parse_address(match.group(1)) if match else None
                if address is None:
                    _reply(wfile, "501 bad MAIL FROM syntax")
                else:
                    sender = address
                    _reply(wfile, "250 ok")
        elif verb == "RCPT":
            if sender is None:
                _reply(wfile, "503 need MAIL FROM first")
            elif recipient is not None:
                _reply(wfile, "550 only one recipient supported")
            else:
                match = _RCPT_RE.match(stripped)
                address = _parse_address(match.group(1)) if match else None
                if address is None:
                    _reply(wfile, "501 bad RCPT TO syntax")
                else:
                    recipient = address
                    _reply(wfile, "250 ok")
        elif verb == "DATA":
            if completed is not None:
                _reply(wfile, "503 one message per session")
            elif sender is None or recipient is None:
                _reply(wfile, "503 need MAIL FROM and RCPT TO first")
            else:
                _reply(wfile, "354 end with <CRLF>.<CRLF>")
                raw, terminated = _read_data(rfile, max_message_bytes)
                if not terminated:
                    break  # connection lost mid-message; nothing accepted
                if raw is None:
                    _reply(wfile, "552 message exceeds size limit")
                    sender = None
                    recipient = None
                else:
                    completed = envelope_from_message(raw, sender, recipient)
                    _reply(wfile, "250 message accepted")
                    if on_message is not None:
                        on_message(completed)
        else:
            _reply(wfile, "500 unrecognised command")
    return completed


class _SessionHandler(socketserver.StreamRequestHandler):
    """One TCP connection; all protocol work happens in smtp_receive."""

    def setup(self) -> None:
        self.timeout = self.server.session_timeout  # type: ignore[attr-defined]
        super().setup()

    def handle(self) -> None:
        server: SmtpServer = self.server  # type: ignore[assignment]
        try:
            smtp_receive(
                self.rfile,
                self.wfile,
                hostname=server.hostname,
                max_message_bytes=server.max_message_bytes,
                on_message=server.deliver,
            )
        except (OSError, ValueError) as exc:
            logger.warning("smtp session aborted: %s", exc)


class SmtpServer(socketserver.ThreadingTCPServer):
    """Threaded SMTP listener that hands accepted envelopes to a callback."""

    allow_reuse_address = True
    daemon_threads = True

    def __init__(
        self,
        host: str = "127.0.0.1",
        port: int = DEFAULT_SMTP_PORT,
        on_message: Callable[[MailEnvelope], None] | None = None,
        *,
        hostname: str = "wildpay",
        max_message_bytes: int = DEFAULT_MAX_MESSAGE_BYTES,
        session_timeout: float = 30.0,
    ) -> None:
        self.hostname = hostname
        self.max_message_bytes = max_message_bytes
        self.on_message = on_message
        self.session_timeout = session_timeout
        super().__init__((host, port), _SessionHandler)
        self._thread: threading.Thread | None = None

    @property
    def port(self) -> int:
        return self.server_address[1]

    def deliver(self, envelope: MailEnvelope) -> None:
        if self.on_message is None:
            return
        try:
            self.on_message(envelope)
        except Exception:  # noqa: BLE001 - delivery problems must not kill the listener
            logger.exception("envelope delivery failed")

    def start(self) -> None:
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self.shutdown()
        self.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)
            self._thread = None
