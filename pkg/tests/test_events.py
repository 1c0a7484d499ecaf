"""Upload-to-job extraction, event ids and RFC 3339 handling."""

import hashlib
import random
from datetime import datetime, timedelta, timezone

import pytest

from wildpay.events import (
    CameraConfig,
    HttpUpload,
    ImageJob,
    IngestError,
    MailEnvelope,
    SpeciesDetection,
    event_digest,
    extract_event,
    parse_rfc3339,
    rfc3339,
)

UTC = timezone.utc
T0 = datetime(2020, 5, 1, 6, 30, 0, tzinfo=UTC)


def fixed_clock():
    return datetime(2021, 1, 1, tzinfo=UTC)


class TestRfc3339:
    def test_whole_second(self):
        assert rfc3339(T0) == "2020-05-01T06:30:00Z"

    def test_microseconds_keep_six_digits(self):
        t = T0.replace(microsecond=102480)
        assert rfc3339(t) == "2020-05-01T06:30:00.102480Z"
        # trailing zeros preserved so the string stays fromisoformat-safe
        t2 = T0.replace(microsecond=100000)
        assert rfc3339(t2) == "2020-05-01T06:30:00.100000Z"

    def test_naive_treated_as_utc(self):
        assert rfc3339(datetime(2020, 5, 1, 6, 30)) == "2020-05-01T06:30:00Z"

    def test_offset_normalised(self):
        t = datetime(2020, 5, 1, 8, 30, tzinfo=timezone(timedelta(hours=2)))
        assert rfc3339(t) == "2020-05-01T06:30:00Z"

    def test_roundtrip_random(self):
        rng = random.Random(55)
        for _ in range(200):
            t = datetime(
                rng.randint(2000, 2030),
                rng.randint(1, 12),
                rng.randint(1, 28),
                rng.randint(0, 23),
                rng.randint(0, 59),
                rng.randint(0, 59),
                rng.randint(0, 999999),
                tzinfo=UTC,
            )
            assert parse_rfc3339(rfc3339(t)) == t

    def test_parse_z_and_offset(self):
        assert parse_rfc3339("2020-05-01T06:30:00Z") == T0
        assert parse_rfc3339("2020-05-01T08:30:00+02:00") == T0

    def test_parse_pads_short_fractions(self):
        # historical journals wrote trimmed fractions; they must still load
        assert parse_rfc3339("2020-05-01T06:30:00.5Z") == T0.replace(microsecond=500000)
        assert parse_rfc3339("2020-05-01T06:30:00.10248Z") == T0.replace(microsecond=102480)

    def test_parse_rejects_garbage(self):
        for bad in ("yesterday", "2020-13-01T00:00:00Z", "", "12:30:00Z"):
            with pytest.raises(IngestError):
                parse_rfc3339(bad)


class TestEventDigest:
    def test_matches_manual_hash(self):
        blob = b"\xff\xd8fakejpeg"
        want = hashlib.sha256(b"cam07\n2020-05-01T06:30:00Z\n" + blob).hexdigest()
        assert event_digest("cam07", T0, blob) == want

    def test_sensitive_to_every_component(self):
        blob = b"pixels"
        base = event_digest("cam07", T0, blob)
        assert event_digest("cam08", T0, blob) != base
        assert event_digest("cam07", T0 + timedelta(seconds=1), blob) != base
        assert event_digest("cam07", T0, b"pixels2") != base

    def test_deterministic(self):
        assert event_digest("cam07", T0, b"x") == event_digest("cam07", T0, b"x")


class TestSpeciesDetection:
    def test_wire_roundtrip(self):
        det = SpeciesDetection("Panthera leo", 0.93, (10, 20, 110, 220))
        assert SpeciesDetection.from_dict(det.as_dict()) == det
        assert det.as_dict()["class"] == "Panthera leo"

    def test_validation(self):
        with pytest.raises(ValueError):
            SpeciesDetection("", 0.5, (0, 0, 1, 1))
        with pytest.raises(ValueError):
            SpeciesDetection("x", 1.5, (0, 0, 1, 1))
        with pytest.raises(ValueError):
            SpeciesDetection("x", 0.5, (5, 0, 1, 1))

    def test_from_dict_bad_payload(self):
        with pytest.raises(IngestError):
            SpeciesDetection.from_dict({"score": 0.5})


def mail(subject="wildlife 2020-05-01T06:30:00Z", attachments=None, sender="cam07@reserve.example", date=None):
    if attachments is None:
        attachments = (("IMG_0001.JPG", b"\xff\xd8pixels"),)
    return MailEnvelope(
        sender=sender,
        recipient="uploads@wildpay.example",
        subject=subject,
        body="camera upload",
        attachments=tuple(attachments),
        date=date,
    )


class TestExtractFromMail:
    def test_happy_path(self):
        job = extract_event(mail(), clock=fixed_clock)
        assert job.camera_id == "cam07"
        assert job.captured_at == T0
        assert job.image_bytes == b"\xff\xd8pixels"
        assert job.source == "smtp"
        assert job.event_id == event_digest("cam07", T0, b"\xff\xd8pixels")

    def test_subject_beats_date_header(self):
        envelope = mail(date=datetime(2019, 1, 1, tzinfo=UTC))
        assert extract_event(envelope, clock=fixed_clock).captured_at == T0

    def test_date_header_beats_clock(self):
        envelope = mail(subject="no timestamp here", date=datetime(2019, 1, 1, tzinfo=UTC))
        job = extract_event(envelope, clock=fixed_clock)
        assert job.captured_at == datetime(2019, 1, 1, tzinfo=UTC)

    def test_clock_fallback(self):
        envelope = mail(subject="no timestamp")
        job = extract_event(envelope, clock=fixed_clock)
        assert job.captured_at == fixed_clock()

    def test_space_separated_subject_timestamp(self):
        envelope = mail(subject="cam07 2020-05-01 06:30:00Z")
        assert extract_event(envelope, clock=fixed_clock).captured_at == T0

    def test_camera_from_local_part(self):
        job = extract_event(mail(sender="trap-a12@x.example"), clock=fixed_clock)
        assert job.camera_id == "trap-a12"

    def test_sender_without_at_passes_through(self):
        job = extract_event(mail(sender="cam99"), clock=fixed_clock)
        assert job.camera_id == "cam99"

    def test_picks_first_image_suffixed_attachment(self):
        envelope = mail(
            attachments=(
                ("notes.txt", b"field notes"),
                ("IMG_2.jpeg", b"imagebytes"),
                ("IMG_3.jpg", b"other"),
            )
        )
        job = extract_event(envelope, clock=fixed_clock)
        assert job.image_bytes == b"imagebytes"

    def test_falls_back_to_first_attachment(self):
        envelope = mail(attachments=(("data.bin", b"blob"),))
        assert extract_event(envelope, clock=fixed_clock).image_bytes == b"blob"

    def test_no_attachment_rejected(self):
        with pytest.raises(IngestError, match="no image"):
            extract_event(mail(attachments=()), clock=fixed_clock)

    def test_empty_image_rejected(self):
        with pytest.raises(IngestError, match="empty"):
            extract_event(mail(attachments=(("a.jpg", b""),)), clock=fixed_clock)

    def test_blank_sender_rejected(self):
        with pytest.raises(IngestError, match="camera id"):
            extract_event(mail(sender="@reserve.example"), clock=fixed_clock)

    def test_unknown_camera_rejected(self):
        with pytest.raises(IngestError, match="unknown camera"):
            extract_event(mail(), clock=fixed_clock, known_cameras=["cam01", "cam02"])
        job = extract_event(mail(), clock=fixed_clock, known_cameras=["cam07"])
        assert job.camera_id == "cam07"

    def test_identical_mail_same_event_id(self):
        a = extract_event(mail(), clock=fixed_clock)
        b = extract_event(mail(), clock=fixed_clock)
        assert a.event_id == b.event_id


class TestExtractFromHttp:
    def upload(self, **kwargs):
        defaults = dict(
            camera_id="cam12",
            captured_at=T0,
            image_name="upload.jpg",
            image_bytes=b"httppixels",
        )
        defaults.update(kwargs)
        return HttpUpload(**defaults)

    def test_happy_path(self):
        job = extract_event(self.upload(), clock=fixed_clock)
        assert job.camera_id == "cam12"
        assert job.source == "http"
        assert job.event_id == event_digest("cam12", T0, b"httppixels")

    def test_blank_camera_rejected(self):
        with pytest.raises(IngestError, match="camera_id"):
            extract_event(self.upload(camera_id="   "), clock=fixed_clock)

    def test_empty_body_rejected(self):
        with pytest.raises(IngestError, match="empty"):
            extract_event(self.upload(image_bytes=b""), clock=fixed_clock)

    def test_naive_timestamp_normalised(self):
        job = extract_event(
            self.upload(captured_at=datetime(2020, 5, 1, 6, 30)), clock=fixed_clock
        )
        assert job.captured_at == T0


class TestImageJob:
    def test_default_image_ref(self):
        job = ImageJob("abc123", "cam01", T0, b"x", "smtp")
        assert job.image_ref == "mem:abc123"

    def test_explicit_image_ref_kept(self):
        job = ImageJob("abc123", "cam01", T0, b"x", "smtp", image_ref="s3://bucket/img")
        assert job.image_ref == "s3://bucket/img"


class TestCameraConfig:
    def test_defaults(self):
        cfg = CameraConfig("cam01")
        assert cfg.width == 1920
        assert cfg.trigger_sensitivity == "high"

    def test_validation(self):
        with pytest.raises(ValueError):
            CameraConfig("")
        with pytest.raises(ValueError):
            CameraConfig("cam01", width=0)
        with pytest.raises(ValueError):
            CameraConfig("cam01", trigger_sensitivity="sometimes")
        with pytest.raises(ValueError):
            CameraConfig("cam01", trigger_range_m=-2)
