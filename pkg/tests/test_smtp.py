"""SMTP receiver: golden sessions, error sequencing and hostile input."""

import io
import random
import smtplib
import threading
from email.message import EmailMessage

import pytest

from wildpay.smtp_server import SmtpServer, envelope_from_message, smtp_receive

CRLF = "\r\n"


def run_session(*client_lines, max_message_bytes=10 * 1024 * 1024):
    """Drive smtp_receive over in-memory streams; returns (envelope, replies)."""
    rfile = io.BytesIO(CRLF.join(client_lines).encode("latin-1") + CRLF.encode())
    wfile = io.BytesIO()
    envelope = smtp_receive(rfile, wfile, max_message_bytes=max_message_bytes)
    replies = wfile.getvalue().decode("latin-1").splitlines()
    return envelope, replies


def codes(replies):
    return [r.split()[0] for r in replies]


class TestGoldenSession:
    def test_plain_message(self):
        envelope, replies = run_session(
            "HELO camera",
            "MAIL FROM:<cam07@reserve.example>",
            "RCPT TO:<uploads@wildpay.example>",
            "DATA",
            "Subject: sighting 2020-05-01T06:30:00Z",
            "",
            "hello",
            ".",
            "QUIT",
        )
        assert codes(replies) == ["220", "250", "250", "250", "354", "250", "221"]
        assert envelope is not None
        assert envelope.sender == "cam07@reserve.example"
        assert envelope.recipient == "uploads@wildpay.example"
        assert envelope.subject == "sighting 2020-05-01T06:30:00Z"
        assert envelope.body == "hello\r\n"

    def test_ehlo_and_esmtp_params(self):
        envelope, replies = run_session(
            "EHLO camera",
            "MAIL FROM:<a@b> SIZE=500",
            "RCPT TO:<c@d>",
            "DATA",
            "test",
            ".",
            "QUIT",
        )
        assert envelope is not None
        assert envelope.sender == "a@b"

    def test_dot_unstuffing(self):
        envelope, _ = run_session(
            "HELO x",
            "MAIL FROM:<a@b>",
            "RCPT TO:<c@d>",
            "DATA",
            "line one",
            "..starts with a dot",
            ".",
            "QUIT",
        )
        assert ".starts with a dot" in envelope.body
        assert "..starts" not in envelope.body

    def test_mime_attachment_roundtrip(self):
        msg = EmailMessage()
        msg["Subject"] = "wildlife 2020-05-01T06:30:00Z"
        msg["From"] = "cam07@reserve.example"
        msg["To"] = "uploads@wildpay.example"
        msg.set_content("camera upload")
        msg.add_attachment(
            b"\xff\xd8jpegbytes",
            maintype="image",
            subtype="jpeg",
            filename="IMG_0001.JPG",
        )
        wire = msg.as_bytes().replace(b"\n", CRLF.encode())
        lines = [
            "HELO camera",
            "MAIL FROM:<cam07@reserve.example>",
            "RCPT TO:<uploads@wildpay.example>",
            "DATA",
            wire.decode("latin-1").rstrip("\r\n"),
            ".",
            "QUIT",
        ]
        envelope, _ = run_session(*lines)
        assert envelope is not None
        assert envelope.attachments == (("IMG_0001.JPG", b"\xff\xd8jpegbytes"),)
        assert envelope.body.strip() == "camera upload"


class TestSequencing:
    def test_rcpt_before_mail(self):
        _, replies = run_session("RCPT TO:<c@d>", "QUIT")
        assert codes(replies) == ["220", "503", "221"]

    def test_data_before_rcpt(self):
        _, replies = run_session("MAIL FROM:<a@b>", "DATA", "QUIT")
        assert codes(replies) == ["220", "250", "503", "221"]

    def test_second_mail_rejected(self):
        _, replies = run_session("MAIL FROM:<a@b>", "MAIL FROM:<x@y>", "QUIT")
        assert codes(replies) == ["220", "250", "503", "221"]

    def test_second_recipient_rejected(self):
        _, replies = run_session(
            "MAIL FROM:<a@b>", "RCPT TO:<c@d>", "RCPT TO:<e@f>", "QUIT"
        )
        assert codes(replies) == ["220", "250", "250", "550", "221"]

    def test_one_message_per_session(self):
        envelope, replies = run_session(
            "MAIL FROM:<a@b>",
            "RCPT TO:<c@d>",
            "DATA",
            "first",
            ".",
            "MAIL FROM:<a@b>",
            "QUIT",
        )
        assert envelope is not None
        assert "503" in codes(replies)

    def test_rset_clears_envelope(self):
        envelope, replies = run_session(
            "MAIL FROM:<a@b>",
            "RSET",
            "RCPT TO:<c@d>",  # now out of order again
            "QUIT",
        )
        assert codes(replies) == ["220", "250", "250", "503", "221"]
        assert envelope is None

    def test_bad_syntax(self):
        _, replies = run_session("MAIL FROM <no colon>", "MAIL FROM:", "QUIT")
        assert codes(replies) == ["220", "501", "501", "221"]

    def test_unknown_command(self):
        _, replies = run_session("BREW coffee", "NOOP", "QUIT")
        assert codes(replies) == ["220", "500", "250", "221"]

    def test_size_cap_rejects_then_recovers(self):
        envelope, replies = run_session(
            "MAIL FROM:<a@b>",
            "RCPT TO:<c@d>",
            "DATA",
            "x" * 200,
            ".",
            "MAIL FROM:<a@b>",
            "RCPT TO:<c@d>",
            "DATA",
            "tiny",
            ".",
            "QUIT",
            max_message_bytes=64,
        )
        assert "552" in codes(replies)
        assert envelope is not None
        assert "tiny" in envelope.body

    def test_peer_vanishing_mid_data(self):
        envelope, replies = run_session(
            "MAIL FROM:<a@b>", "RCPT TO:<c@d>", "DATA", "never terminated"
        )
        assert envelope is None
        assert codes(replies)[-1] == "354"

    def test_empty_line_is_an_error_not_a_crash(self):
        _, replies = run_session("", "QUIT")
        assert codes(replies) == ["220", "500", "221"]


class TestFuzz:
    def test_garbage_never_raises(self):
        rng = random.Random(1234)
        for _ in range(2000):
            n = rng.randint(0, 200)
            blob = bytes(rng.randrange(256) for _ in range(n))
            rfile = io.BytesIO(blob)
            wfile = io.BytesIO()
            smtp_receive(rfile, wfile, max_message_bytes=4096)
            assert wfile.getvalue().startswith(b"220 ")

    def test_linelike_garbage_never_raises(self):
        rng = random.Random(99)
        verbs = ["HELO", "MAIL FROM:", "RCPT TO:", "DATA", ".", "QUIT", "RSET", "XYZZY", ""]
        for _ in range(500):
            lines = [
                rng.choice(verbs) + rng.choice(["", " <a@b>", " \xff\xfe", " " * 50])
                for _ in range(rng.randint(1, 15))
            ]
            run_session(*lines, max_message_bytes=4096)


class TestEnvelopeFromMessage:
    def test_bad_mime_never_raises(self):
        envelope = envelope_from_message(b"\xff\x00 utterly not mime", "a@b", "c@d")
        assert envelope.sender == "a@b"

    def test_encoded_subject_decoded(self):
        raw = b"Subject: =?utf-8?q?caf=C3=A9_2020-05-01T06:30:00Z?=\r\n\r\nbody"
        envelope = envelope_from_message(raw, "a@b", "c@d")
        assert "café" in envelope.subject

    def test_date_header_parsed(self):
        raw = b"Date: Fri, 01 May 2020 06:30:00 +0000\r\n\r\nbody"
        envelope = envelope_from_message(raw, "a@b", "c@d")
        assert envelope.date is not None
        assert envelope.date.year == 2020

    def test_bad_date_ignored(self):
        raw = b"Date: not a date\r\n\r\nbody"
        assert envelope_from_message(raw, "a@b", "c@d").date is None


class TestTcpServer:
    def test_accepts_real_smtp_client(self):
        received = []
        done = threading.Event()

        def on_message(envelope):
            received.append(envelope)
            done.set()

        server = SmtpServer("127.0.0.1", 0, on_message)
        server.start()
        try:
            msg = EmailMessage()
            msg["Subject"] = "sighting 2020-05-01T06:30:00Z"
            msg["From"] = "cam07@reserve.example"
            msg["To"] = "uploads@wildpay.example"
            msg.set_content("upload")
            msg.add_attachment(
                b"pixels", maintype="image", subtype="jpeg", filename="a.jpg"
            )
            with smtplib.SMTP("127.0.0.1", server.port, timeout=5) as client:
                client.send_message(msg)
            assert done.wait(timeout=5)
        finally:
            server.stop()
        assert received[0].sender == "cam07@reserve.example"
        assert received[0].attachments[0][0] == "a.jpg"

    def test_callback_failure_does_not_kill_listener(self):
        failures = []

        def on_message(_envelope):
            failures.append(1)
            raise RuntimeError("downstream exploded")

        server = SmtpServer("127.0.0.1", 0, on_message)
        server.start()
        try:
            for _ in range(2):
                with smtplib.SMTP("127.0.0.1", server.port, timeout=5) as client:
                    client.sendmail("a@b", ["c@d"], "Subject: x\r\n\r\nbody\r\n")
        finally:
            server.stop()
        assert len(failures) == 2
