"""Ledger behaviour: accounts, payouts, the journal and crash recovery."""

import json
import threading
from datetime import datetime, timedelta, timezone

import pytest

from wildpay.events import DetectionEvent, SpeciesDetection
from wildpay.ledger import (
    DuplicateAccount,
    InsufficientFunds,
    Ledger,
    LedgerError,
    PayoutPolicy,
    UnknownAccount,
    format_pence,
    replay_counts,
)

UTC = timezone.utc
T0 = datetime(2020, 5, 1, 6, 0, 0, tzinfo=UTC)

SPECIES = ["Equus quagga", "Panthera leo"]


class TickingClock:
    """Deterministic clock advancing one second per call."""

    def __init__(self, start=T0):
        self.now = start

    def __call__(self):
        self.now += timedelta(seconds=1)
        return self.now


def det(species, score=0.9, offset=0):
    shift = offset * 200
    return SpeciesDetection(species, score, (shift, 0, shift + 100, 100))


def event(event_id, *species):
    return DetectionEvent(
        event_id=event_id,
        camera_id="cam01",
        captured_at=T0,
        detections=tuple(det(s, offset=i) for i, s in enumerate(species)),
    )


def fresh_ledger(journal_path=None, **kwargs):
    ledger = Ledger(journal_path, clock=TickingClock(), **kwargs)
    ledger.open_account("guardian", 10_000)
    for species in SPECIES:
        ledger.open_account(species, 10_000)
    return ledger


class TestAccounts:
    def test_open_and_read(self):
        ledger = fresh_ledger()
        account = ledger.account("guardian")
        assert account.balance == 10_000
        assert account.initial_credit == 10_000
        assert ledger.balance("Panthera leo") == 10_000

    def test_duplicate_rejected(self):
        ledger = fresh_ledger()
        with pytest.raises(DuplicateAccount):
            ledger.open_account("guardian")

    def test_unknown_account(self):
        ledger = fresh_ledger()
        with pytest.raises(UnknownAccount):
            ledger.balance("Aardvark")
        assert not ledger.has_account("Aardvark")

    def test_validation(self):
        ledger = Ledger(clock=TickingClock())
        with pytest.raises(LedgerError):
            ledger.open_account("")
        with pytest.raises(LedgerError):
            ledger.open_account("x", initial_credit=-1)

    def test_accounts_sorted(self):
        ledger = fresh_ledger()
        ids = [a.account_id for a in ledger.accounts()]
        assert ids == sorted(ids)


class TestTransfer:
    def test_moves_money(self):
        ledger = fresh_ledger()
        record = ledger.transfer("Panthera leo", "guardian", 250)
        assert ledger.balance("Panthera leo") == 9_750
        assert ledger.balance("guardian") == 10_250
        assert record.amount == 250
        assert record.transfer_id == "t000001"
        ledger.check_conservation()

    def test_insufficient_funds(self):
        ledger = fresh_ledger()
        with pytest.raises(InsufficientFunds):
            ledger.transfer("Panthera leo", "guardian", 10_001)
        assert ledger.balance("Panthera leo") == 10_000

    def test_validations(self):
        ledger = fresh_ledger()
        with pytest.raises(LedgerError):
            ledger.transfer("guardian", "guardian", 1)
        with pytest.raises(LedgerError):
            ledger.transfer("guardian", "Panthera leo", 0)
        with pytest.raises(UnknownAccount):
            ledger.transfer("Aardvark", "guardian", 1)


class TestDetectionPayouts:
    def test_per_instance_pays_each_animal(self):
        ledger = fresh_ledger()
        records = ledger.apply_detection_event(
            event("ev1", "Equus quagga", "Equus quagga", "Panthera leo")
        )
        assert len(records) == 3
        assert all(r.to_account == "guardian" for r in records)
        assert ledger.balance("Equus quagga") == 9_998
        assert ledger.balance("Panthera leo") == 9_999
        assert ledger.balance("guardian") == 10_003
        ledger.check_conservation()

    def test_per_image_pays_each_species_once(self):
        ledger = fresh_ledger()
        policy = PayoutPolicy(granularity="per_image")
        records = ledger.apply_detection_event(
            event("ev1", "Equus quagga", "Equus quagga", "Panthera leo"), policy
        )
        assert len(records) == 2
        assert ledger.balance("Equus quagga") == 9_999

    def test_unit_amount_scales(self):
        ledger = fresh_ledger()
        policy = PayoutPolicy(unit_amount=10)
        ledger.apply_detection_event(event("ev1", "Panthera leo"), policy)
        assert ledger.balance("Panthera leo") == 9_990
        assert ledger.balance("guardian") == 10_010

    def test_blank_event_no_payment_and_not_consumed(self):
        ledger = fresh_ledger()
        assert ledger.apply_detection_event(event("ev1")) == []
        assert "ev1" not in ledger.applied_event_ids
        # the same id arriving later *with* detections still pays
        assert len(ledger.apply_detection_event(event("ev1", "Panthera leo"))) == 1

    def test_duplicate_event_id_ignored(self):
        ledger = fresh_ledger()
        first = ledger.apply_detection_event(event("ev1", "Panthera leo"))
        second = ledger.apply_detection_event(event("ev1", "Panthera leo"))
        assert len(first) == 1
        assert second == []
        assert ledger.balance("guardian") == 10_001

    def test_unknown_species_dead_letters_whole_event(self):
        ledger = fresh_ledger()
        records = ledger.apply_detection_event(event("ev1", "Panthera leo", "Aardvark"))
        assert records == []
        assert ledger.balance("Panthera leo") == 10_000  # nothing moved
        assert ledger.is_dead_lettered("ev1")
        assert "unknown_species:Aardvark" in ledger.dead_letters[0].reason

    def test_dead_letter_blocks_replay(self):
        ledger = fresh_ledger()
        ledger.apply_detection_event(event("ev1", "Aardvark"))
        # operator adds the account, but the event id stays consumed
        ledger.open_account("Aardvark", 100)
        assert ledger.apply_detection_event(event("ev1", "Aardvark")) == []
        assert ledger.balance("Aardvark") == 100

    def test_explicit_dead_letter_idempotent(self):
        ledger = fresh_ledger()
        ledger.dead_letter("evX", "backend_unavailable:down")
        ledger.dead_letter("evX", "backend_unavailable:down")
        assert len(ledger.dead_letters) == 1

    def test_skip_policy_drops_underfunded_species_only(self):
        ledger = fresh_ledger()
        ledger.open_account("Broke species", 1)
        policy = PayoutPolicy(unit_amount=2, insufficient_funds="skip")
        records = ledger.apply_detection_event(
            event("ev1", "Broke species", "Panthera leo"), policy
        )
        assert len(records) == 1
        assert records[0].from_account == "Panthera leo"
        assert ledger.balance("Broke species") == 1
        (skip,) = ledger.skips
        assert skip.account_id == "Broke species"
        assert skip.reason == "skip"
        assert skip.amount == 2
        assert "ev1" in ledger.applied_event_ids
        ledger.check_conservation()

    def test_partial_policy_pays_what_it_can(self):
        ledger = fresh_ledger()
        ledger.open_account("Broke species", 5)
        policy = PayoutPolicy(unit_amount=2, insufficient_funds="partial")
        records = ledger.apply_detection_event(
            event("ev1", *(["Broke species"] * 4)), policy
        )
        # needs 8, holds 5 -> pays 2 whole units (4p), shortfall 4p audited
        assert len(records) == 2
        assert ledger.balance("Broke species") == 1
        (skip,) = ledger.skips
        assert skip.reason == "partial"
        assert skip.amount == 4
        ledger.check_conservation()

    def test_policy_validation(self):
        with pytest.raises(ValueError):
            PayoutPolicy(unit_amount=0)
        with pytest.raises(ValueError):
            PayoutPolicy(granularity="per_week")
        with pytest.raises(ValueError):
            PayoutPolicy(insufficient_funds="beg")

    def test_conservation_over_mixed_sequence(self):
        ledger = fresh_ledger()
        ledger.apply_detection_event(event("a", "Panthera leo"))
        ledger.apply_detection_event(event("b"))
        ledger.apply_detection_event(event("c", "Aardvark"))
        ledger.apply_detection_event(event("d", "Equus quagga", "Equus quagga"))
        ledger.apply_detection_event(event("a", "Panthera leo"))
        ledger.check_conservation()
        assert ledger.total_balance() == 30_000


class TestJournalFile:
    def test_one_line_per_commit(self, tmp_path):
        path = tmp_path / "journal.jsonl"
        ledger = fresh_ledger(path)
        ledger.apply_detection_event(event("ev1", "Panthera leo"))
        ledger.apply_detection_event(event("ev2"))  # blank: no line
        ledger.apply_detection_event(event("ev1", "Panthera leo"))  # dup: no line
        ledger.dead_letter("ev3", "backend_unavailable:x")
        ledger.close()
        lines = path.read_text().splitlines()
        kinds = [json.loads(l)["kind"] for l in lines]
        assert kinds == ["open", "open", "open", "event", "dead_letter"]

    def test_event_line_carries_transfers_and_skips(self, tmp_path):
        path = tmp_path / "journal.jsonl"
        ledger = fresh_ledger(path)
        ledger.open_account("Broke species", 0)
        ledger.apply_detection_event(
            event("ev1", "Panthera leo", "Broke species"),
            PayoutPolicy(insufficient_funds="skip"),
        )
        ledger.close()
        entry = json.loads(path.read_text().splitlines()[-1])
        assert entry["event_id"] == "ev1"
        assert len(entry["transfers"]) == 1
        assert entry["skipped"] == [
            {"account_id": "Broke species", "amount": 1, "reason": "skip"}
        ]


class TestRestore:
    def populated(self, path):
        ledger = fresh_ledger(path)
        ledger.apply_detection_event(event("ev1", "Panthera leo", "Equus quagga"))
        ledger.apply_detection_event(event("ev2", "Equus quagga"))
        ledger.apply_detection_event(event("ev3", "Aardvark"))
        return ledger

    def assert_equivalent(self, a, b):
        assert {x.account_id: x.balance for x in a.accounts()} == {
            x.account_id: x.balance for x in b.accounts()
        }
        assert a.applied_event_ids == b.applied_event_ids
        assert [d.event_id for d in a.dead_letters] == [d.event_id for d in b.dead_letters]
        assert a.journal == b.journal

    def test_roundtrip(self, tmp_path):
        path = tmp_path / "journal.jsonl"
        original = self.populated(path)
        original.close()
        restored, report = Ledger.restore(path, resume=False)
        assert not report.snapshot_used
        assert not report.truncated
        self.assert_equivalent(original, restored)
        restored.check_conservation()

    def test_snapshot_plus_tail(self, tmp_path):
        journal = tmp_path / "journal.jsonl"
        snapshot = tmp_path / "snapshot.json"
        ledger = self.populated(journal)
        ledger.write_snapshot(snapshot)
        ledger.apply_detection_event(event("ev4", "Panthera leo"))
        ledger.close()
        restored, report = Ledger.restore(journal, snapshot_path=snapshot, resume=False)
        assert report.snapshot_used
        assert report.lines_applied == 1  # only the post-snapshot event
        self.assert_equivalent(ledger, restored)

    def test_resume_continues_sequence(self, tmp_path):
        path = tmp_path / "journal.jsonl"
        ledger = self.populated(path)
        ledger.close()
        restored, _ = Ledger.restore(path, resume=True, fsync=False, clock=TickingClock())
        restored.apply_detection_event(event("ev5", "Panthera leo"))
        restored.close()
        again, _ = Ledger.restore(path, resume=False)
        assert "ev5" in again.applied_event_ids
        ids = [r.transfer_id for r in again.journal]
        assert ids == sorted(ids)
        assert len(ids) == len(set(ids))

    def test_truncated_tail_dropped_and_trimmed(self, tmp_path):
        path = tmp_path / "journal.jsonl"
        ledger = self.populated(path)
        ledger.close()
        whole = path.read_bytes()
        path.write_bytes(whole[:-7])  # chop mid final line
        restored, report = Ledger.restore(path, resume=True, fsync=False)
        assert report.truncated
        restored.check_conservation()
        restored.close()
        # after the trim the file must parse cleanly end to end
        for line in path.read_bytes().splitlines():
            json.loads(line)

    def test_corrupt_middle_line_stops_replay(self, tmp_path):
        path = tmp_path / "journal.jsonl"
        ledger = self.populated(path)
        ledger.close()
        lines = path.read_bytes().splitlines(keepends=True)
        lines[3] = b'{"kind": "transfer", "garbage": tru\n'
        path.write_bytes(b"".join(lines))
        restored, report = Ledger.restore(path, resume=False)
        assert report.truncated
        assert report.truncated_at_line == 4
        # only the three account openings before the bad line survive
        assert restored.total_balance() == 30_000
        assert restored.applied_event_ids == frozenset()

    def test_snapshot_from_other_journal_rejected(self, tmp_path):
        journal_a = tmp_path / "a.jsonl"
        journal_b = tmp_path / "b.jsonl"
        ledger_a = self.populated(journal_a)
        snapshot = tmp_path / "snap.json"
        ledger_a.write_snapshot(snapshot)
        ledger_a.close()
        ledger_b = Ledger(journal_b, fsync=False, clock=TickingClock())
        ledger_b.open_account("other", 5)
        ledger_b.close()
        with pytest.raises(LedgerError, match="genesis"):
            Ledger.restore(journal_b, snapshot_path=snapshot, resume=False)

    def test_missing_journal_is_empty_ledger(self, tmp_path):
        restored, report = Ledger.restore(tmp_path / "nothing.jsonl", resume=False)
        assert restored.accounts() == []
        assert report.lines_applied == 0


class TestStatement:
    def build(self):
        clock = TickingClock()
        ledger = Ledger(clock=clock)
        ledger.open_account("guardian", 10_000)
        ledger.open_account("Panthera leo", 10_000)
        stamps = []
        for i in range(4):
            record = ledger.transfer("Panthera leo", "guardian", 100, event_id=f"ev{i}")
            stamps.append(record.applied_at)
        return ledger, stamps

    def test_full_history(self):
        ledger, _ = self.build()
        statement = ledger.statement("Panthera leo")
        assert statement.opening_balance == 10_000
        assert statement.closing_balance == 9_600
        assert len(statement.records) == 4

    def test_window_half_open(self):
        ledger, stamps = self.build()
        statement = ledger.statement("Panthera leo", start=stamps[1], end=stamps[3])
        # [start, end): transfers 1 and 2 inside, 0 before, 3 after
        assert len(statement.records) == 2
        assert statement.opening_balance == 9_900
        assert statement.closing_balance == 9_700

    def test_receiving_side(self):
        ledger, stamps = self.build()
        statement = ledger.statement("guardian", start=stamps[2])
        assert statement.opening_balance == 10_200
        assert statement.closing_balance == 10_400

    def test_bad_window(self):
        ledger, stamps = self.build()
        with pytest.raises(ValueError):
            ledger.statement("guardian", start=stamps[3], end=stamps[0])

    def test_journal_between(self):
        ledger, stamps = self.build()
        assert len(ledger.journal_between(stamps[0], stamps[2])) == 2
        assert len(ledger.journal_between()) == 4
        assert len(ledger.journal_between(start=stamps[3])) == 1


class TestFormatting:
    def test_format_pence(self):
        assert format_pence(10_000) == "£100.00"
        assert format_pence(0) == "£0.00"
        assert format_pence(5) == "£0.05"
        assert format_pence(4391) == "£43.91"
        assert format_pence(-250) == "-£2.50"

    def test_payment_row_formatted(self):
        table = replay_counts({"Panthera leo": 4391})
        assert table.rows[0].formatted == "£43.91"


class TestReplayCounts:
    def test_sorted_by_amount_then_species(self):
        table = replay_counts({"b": 5, "a": 5, "c": 1})
        assert [(r.species, r.pence) for r in table.rows] == [
            ("c", 1),
            ("a", 5),
            ("b", 5),
        ]

    def test_totals(self, table7_counts):
        table = replay_counts(table7_counts)
        assert table.total_detections == 18_520
        assert table.total_pence == 18_520

    def test_policy_unit_amount(self):
        table = replay_counts({"a": 3}, PayoutPolicy(unit_amount=10))
        assert table.rows[0].pence == 30

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            replay_counts({"a": -1})


class TestConcurrency:
    def test_parallel_appliers_match_serial(self):
        events = [
            event(f"ev{i % 80:03d}", SPECIES[i % 2])  # 20% duplicates
            for i in range(100)
        ]

        serial = fresh_ledger()
        for ev in events:
            serial.apply_detection_event(ev)

        parallel = fresh_ledger()
        chunks = [events[i::4] for i in range(4)]
        threads = [
            threading.Thread(target=lambda c=c: [parallel.apply_detection_event(e) for e in c])
            for c in chunks
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()

        parallel.check_conservation()
        assert parallel.applied_event_ids == serial.applied_event_ids
        assert {a.account_id: a.balance for a in parallel.accounts()} == {
            a.account_id: a.balance for a in serial.accounts()
        }
