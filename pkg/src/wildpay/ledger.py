"""Integer-pence accounts, payouts and a crash-safe journal.

Every species holds an account seeded with a fixed credit; each time an
animal is detected, its species account pays the guardian account.  Money
only ever moves between accounts, so the sum of all balances equals the
sum of initial credits forever — that invariant is checked, not assumed.

Durability model: every committed change is one JSON line appended to the
journal and fsynced.  A detection event's transfers share a single line,
so a crash mid-write (observed as a truncated or unparseable final line)
loses the whole event or none of it, never half.  Restore replays the
journal from genesis, optionally fast-forwarded by a snapshot.

Amounts are integer pence throughout; ``format_pence`` renders them as
pounds only at the display edge.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Mapping

from .events import Clock, DetectionEvent, ensure_utc, parse_rfc3339, rfc3339, utc_now

logger = logging.getLogger(__name__)

GUARDIAN_ACCOUNT = "guardian"

#: Fresh accounts start with 100 pounds.
DEFAULT_INITIAL_CREDIT = 10_000

#: Default payout: one penny per detection.
DEFAULT_UNIT_AMOUNT = 1

GRANULARITIES = ("per_instance", "per_image")
FUND_POLICIES = ("skip", "partial")


class LedgerError(Exception):
    """Base class for ledger failures."""


class UnknownAccount(LedgerError):
    pass


class DuplicateAccount(LedgerError):
    pass


class InsufficientFunds(LedgerError):
    pass


def format_pence(amount: int) -> str:
    """Render integer pence as pounds: 10000 -> '£100.00'."""
    sign = "-" if amount < 0 else ""
    amount = abs(int(amount))
    return f"{sign}£{amount // 100}.{amount % 100:02d}"


@dataclass(frozen=True)
class Account:
    """A point-in-time view of one account."""

    account_id: str
    balance: int
    initial_credit: int
    opened_at: datetime


@dataclass(frozen=True)
class TransferRecord:
    """One committed movement of pence between two accounts."""

    transfer_id: str
    from_account: str
    to_account: str
    amount: int
    applied_at: datetime
    event_id: str | None = None

    def as_dict(self) -> dict:
        out = {
            "transfer_id": self.transfer_id,
            "from_account": self.from_account,
            "to_account": self.to_account,
            "amount": self.amount,
            "applied_at": rfc3339(self.applied_at),
        }
        if self.event_id is not None:
            out["event_id"] = self.event_id
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "TransferRecord":
        return cls(
            transfer_id=str(data["transfer_id"]),
            from_account=str(data["from_account"]),
            to_account=str(data["to_account"]),
            amount=int(data["amount"]),
            applied_at=parse_rfc3339(str(data["applied_at"])),
            event_id=str(data["event_id"]) if data.get("event_id") is not None else None,
        )


@dataclass(frozen=True)
class SkipRecord:
    """An audited payment that insufficient guardian funds prevented."""

    event_id: str
    account_id: str
    amount: int
    reason: str
    recorded_at: datetime


@dataclass(frozen=True)
class DeadLetterRecord:
    """An event the ledger refused wholesale (e.g. species has no account)."""

    event_id: str
    reason: str
    recorded_at: datetime


@dataclass(frozen=True)
class PayoutPolicy:
    """How detection events convert to transfers.

    Each detected animal pays its guardian: ``unit_amount`` pence moves
    from the species account to the guardian account per detection
    (``per_instance``), or once per distinct species in the image
    (``per_image``).  When a species account cannot cover a payment,
    ``skip`` drops that payment entirely while ``partial`` pays whatever
    balance remains; either way the shortfall is audited and the event
    still counts as applied.
    """

    unit_amount: int = DEFAULT_UNIT_AMOUNT
    granularity: str = "per_instance"
    insufficient_funds: str = "skip"
    guardian_account: str = GUARDIAN_ACCOUNT

    def __post_init__(self) -> None:
        if self.unit_amount < 1:
            raise ValueError(f"unit_amount must be a positive pence amount, got {self.unit_amount}")
        if self.granularity not in GRANULARITIES:
            raise ValueError(f"granularity must be one of {GRANULARITIES}, got {self.granularity!r}")
        if self.insufficient_funds not in FUND_POLICIES:
            raise ValueError(
                f"insufficient_funds must be one of {FUND_POLICIES}, got {self.insufficient_funds!r}"
            )


@dataclass(frozen=True)
class Statement:
    """Account activity over [start, end): opening, movements, closing."""

    account_id: str
    start: datetime | None
    end: datetime | None
    opening_balance: int
    closing_balance: int
    records: tuple[TransferRecord, ...]


@dataclass(frozen=True)
class RestoreReport:
    """What a journal restore found on disk."""

    snapshot_used: bool
    lines_applied: int
    truncated: bool
    truncated_at_line: int | None = None


@dataclass(frozen=True)
class PaymentRow:
    species: str
    detections: int
    pence: int

    @property
    def formatted(self) -> str:
        return format_pence(self.pence)


@dataclass(frozen=True)
class PaymentTable:
    """Species payout summary, sorted by amount then name."""

    rows: tuple[PaymentRow, ...]

    @property
    def total_detections(self) -> int:
        return sum(row.detections for row in self.rows)

    @property
    def total_pence(self) -> int:
        return sum(row.pence for row in self.rows)


def replay_counts(
    counts: Mapping[str, int], policy: "PayoutPolicy | None" = None
) -> PaymentTable:
    """Pure payout arithmetic: detection counts -> pence per species.

    Equivalent to running a one-detection-per-image trace with those counts
    through the full pipeline (either granularity), minus the ledger side
    effects.
    """
    unit_amount = policy.unit_amount if policy is not None else DEFAULT_UNIT_AMOUNT
    rows = []
    for species, n in counts.items():
        if n < 0:
            raise ValueError(f"count for {species!r} must be non-negative, got {n}")
        rows.append(PaymentRow(species=species, detections=n, pence=n * unit_amount))
    rows.sort(key=lambda row: (row.pence, row.species))
    return PaymentTable(rows=tuple(rows))


@dataclass
class _AccountState:
    balance: int
    initial_credit: int
    opened_at: datetime


class Ledger:
    """In-memory accounts with an append-only JSON-lines journal.

    All mutating operations take an internal lock, so a single Ledger can
    be shared by the ingestion workers.  Pass ``journal_path`` to persist;
    with ``fsync`` (the default) every commit reaches the disk before the
    call returns.
    """

    def __init__(
        self,
        journal_path: str | Path | None = None,
        *,
        fsync: bool = True,
        clock: Clock = utc_now,
    ) -> None:
        self._lock = threading.RLock()
        self._clock = clock
        self._fsync = fsync
        self._accounts: dict[str, _AccountState] = {}
        self._records: list[TransferRecord] = []
        self._applied: set[str] = set()
        self._dead: list[DeadLetterRecord] = []
        self._dead_ids: set[str] = set()
        self._skips: list[SkipRecord] = []
        self._seq = 0
        self._lines_written = 0
        self._genesis_hash: str | None = None
        self._replaying = False
        self._journal_path = Path(journal_path) if journal_path is not None else None
        self._journal_file = None
        if self._journal_path is not None:
            self._journal_path.parent.mkdir(parents=True, exist_ok=True)
            self._journal_file = open(self._journal_path, "ab")

    # -- plumbing -----------------------------------------------------------

    def close(self) -> None:
        with self._lock:
            if self._journal_file is not None:
                self._journal_file.close()
                self._journal_file = None

    def __enter__(self) -> "Ledger":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    def _append_journal(self, entry: dict) -> None:
        """One JSON line per committed change; fsynced before returning."""
        if self._replaying:
            return
        self._lines_written += 1
        line = json.dumps(entry, sort_keys=True, separators=(",", ":")) + "\n"
        data = line.encode("utf-8")
        if self._lines_written == 1:
            self._genesis_hash = hashlib.sha256(data).hexdigest()
        if self._journal_file is None:
            return
        self._journal_file.write(data)
        self._journal_file.flush()
        if self._fsync:
            os.fsync(self._journal_file.fileno())

    def _next_transfer_id(self) -> str:
        self._seq += 1
        return f"t{self._seq:06d}"

    def _state(self, account_id: str) -> _AccountState:
        try:
            return self._accounts[account_id]
        except KeyError:
            raise UnknownAccount(f"no account {account_id!r}") from None

    # -- accounts -----------------------------------------------------------

    def open_account(
        self, account_id: str, initial_credit: int = DEFAULT_INITIAL_CREDIT
    ) -> Account:
        """Create an account seeded with ``initial_credit`` pence."""
        if not account_id:
            raise LedgerError("account_id must be non-empty")
        if initial_credit < 0:
            raise LedgerError(f"initial_credit must be non-negative, got {initial_credit}")
        with self._lock:
            if account_id in self._accounts:
                raise DuplicateAccount(f"account {account_id!r} already exists")
            opened_at = ensure_utc(self._clock())
            self._accounts[account_id] = _AccountState(
                balance=initial_credit, initial_credit=initial_credit, opened_at=opened_at
            )
            self._append_journal(
                {
                    "kind": "open",
                    "account_id": account_id,
                    "initial_credit": initial_credit,
                    "opened_at": rfc3339(opened_at),
                }
            )
            return self.account(account_id)

    def account(self, account_id: str) -> Account:
        with self._lock:
            state = self._state(account_id)
            return Account(
                account_id=account_id,
                balance=state.balance,
                initial_credit=state.initial_credit,
                opened_at=state.opened_at,
            )

    def accounts(self) -> list[Account]:
        """All accounts, sorted by id."""
        with self._lock:
            return [self.account(account_id) for account_id in sorted(self._accounts)]

    def balance(self, account_id: str) -> int:
        with self._lock:
            return self._state(account_id).balance

    def has_account(self, account_id: str) -> bool:
        with self._lock:
            return account_id in self._accounts

    # -- invariants ---------------------------------------------------------

    def total_balance(self) -> int:
        with self._lock:
            return sum(state.balance for state in self._accounts.values())

    def total_initial_credit(self) -> int:
        with self._lock:
            return sum(state.initial_credit for state in self._accounts.values())

    def check_conservation(self) -> None:
        """Raise if money was created or destroyed."""
        with self._lock:
            total, initial = self.total_balance(), self.total_initial_credit()
            if total != initial:
                raise LedgerError(f"conservation violated: balances {total} != credits {initial}")

    # -- transfers ----------------------------------------------------------

    def transfer(
        self, from_account: str, to_account: str, amount: int, *, event_id: str | None = None
    ) -> TransferRecord:
        """Move ``amount`` pence between two existing accounts."""
        if amount < 1:
            raise LedgerError(f"amount must be a positive pence amount, got {amount}")
        if from_account == to_account:
            raise LedgerError("cannot transfer an account to itself")
        with self._lock:
            src = self._state(from_account)
            dst = self._state(to_account)
            if src.balance < amount:
                raise InsufficientFunds(
                    f"{from_account!r} holds {src.balance}p, needs {amount}p"
                )
            record = TransferRecord(
                transfer_id=self._next_transfer_id(),
                from_account=from_account,
                to_account=to_account,
                amount=amount,
                applied_at=ensure_utc(self._clock()),
                event_id=event_id,
            )
            src.balance -= amount
            dst.balance += amount
            self._records.append(record)
            self._append_journal({"kind": "transfer", **record.as_dict()})
            return record

    # -- detection payouts --------------------------------------------------

    def _paying_species(self, event: DetectionEvent, policy: PayoutPolicy) -> list[str]:
        if policy.granularity == "per_image":
            return sorted({det.species for det in event.detections})
        return [det.species for det in event.detections]

    def apply_detection_event(
        self, event: DetectionEvent, policy: PayoutPolicy = PayoutPolicy()
    ) -> list[TransferRecord]:
        """Pay out one detection event; idempotent by event id.

        Each payment moves ``unit_amount`` from the detected species'
        account to the guardian.  Returns the transfers committed (empty
        for duplicates, blanks and dead letters); all of an event's
        transfers commit atomically under one journal line.  A species
        without an account dead-letters the whole event; a species that
        cannot cover a payment follows the policy's skip/partial rule and
        the shortfall is audited either way.
        """
        with self._lock:
            if event.event_id in self._applied or event.event_id in self._dead_ids:
                return []
            if event.is_blank:
                return []

            payers = self._paying_species(event, policy)
            unknown = sorted({s for s in payers if s not in self._accounts})
            if unknown:
                self._record_dead_letter(
                    event.event_id, "unknown_species:" + ",".join(unknown)
                )
                return []
            guardian = self._state(policy.guardian_account)

            now = ensure_utc(self._clock())
            # Funding is decided per species for the whole event: skip drops
            # every transfer of an underfunded species, partial pays as many
            # whole units as its balance allows.  Shortfalls are audited.
            obligations: dict[str, int] = {}
            for species in payers:
                obligations[species] = obligations.get(species, 0) + 1
            allowance: dict[str, int] = {}
            skipped: list[SkipRecord] = []
            for species, count in obligations.items():
                need = count * policy.unit_amount
                balance = self._accounts[species].balance
                if balance >= need:
                    allowance[species] = count
                    continue
                if policy.insufficient_funds == "skip":
                    allowance[species] = 0
                    skipped.append(SkipRecord(event.event_id, species, need, "skip", now))
                else:
                    affordable = balance // policy.unit_amount
                    allowance[species] = affordable
                    shortfall = need - affordable * policy.unit_amount
                    skipped.append(
                        SkipRecord(event.event_id, species, shortfall, "partial", now)
                    )

            records: list[TransferRecord] = []
            for species in payers:
                if allowance[species] <= 0:
                    continue
                allowance[species] -= 1
                record = TransferRecord(
                    transfer_id=self._next_transfer_id(),
                    from_account=species,
                    to_account=policy.guardian_account,
                    amount=policy.unit_amount,
                    applied_at=now,
                    event_id=event.event_id,
                )
                self._accounts[species].balance -= policy.unit_amount
                guardian.balance += policy.unit_amount
                records.append(record)
            self._records.extend(records)
            self._applied.add(event.event_id)
            self._skips.extend(skipped)
            self._append_journal(
                {
                    "kind": "event",
                    "event_id": event.event_id,
                    "applied_at": rfc3339(now),
                    "transfers": [
                        {
                            "transfer_id": r.transfer_id,
                            "from_account": r.from_account,
                            "to_account": r.to_account,
                            "amount": r.amount,
                        }
                        for r in records
                    ],
                    "skipped": [
                        {"account_id": s.account_id, "amount": s.amount, "reason": s.reason}
                        for s in skipped
                    ],
                }
            )
            return records

    def _record_dead_letter(self, event_id: str, reason: str) -> None:
        now = ensure_utc(self._clock())
        self._dead.append(DeadLetterRecord(event_id=event_id, reason=reason, recorded_at=now))
        self._dead_ids.add(event_id)
        self._append_journal(
            {
                "kind": "dead_letter",
                "event_id": event_id,
                "reason": reason,
                "recorded_at": rfc3339(now),
            }
        )

    def dead_letter(self, event_id: str, reason: str) -> None:
        """Record an event that will never be paid (idempotent)."""
        with self._lock:
            if event_id in self._dead_ids:
                return
            self._record_dead_letter(event_id, reason)

    def is_dead_lettered(self, event_id: str) -> bool:
        with self._lock:
            return event_id in self._dead_ids

    # -- views --------------------------------------------------------------

    @property
    def applied_event_ids(self) -> frozenset[str]:
        with self._lock:
            return frozenset(self._applied)

    @property
    def journal(self) -> tuple[TransferRecord, ...]:
        """Every committed transfer, oldest first."""
        with self._lock:
            return tuple(self._records)

    @property
    def dead_letters(self) -> tuple[DeadLetterRecord, ...]:
        with self._lock:
            return tuple(self._dead)

    @property
    def skips(self) -> tuple[SkipRecord, ...]:
        with self._lock:
            return tuple(self._skips)

    def journal_between(
        self, start: datetime | None = None, end: datetime | None = None
    ) -> tuple[TransferRecord, ...]:
        """Transfers with ``start <= applied_at < end``."""
        if start is not None and end is not None and ensure_utc(start) > ensure_utc(end):
            raise ValueError("start must not be after end")
        with self._lock:
            out = []
            for record in self._records:
                if start is not None and record.applied_at < ensure_utc(start):
                    continue
                if end is not None and record.applied_at >= ensure_utc(end):
                    continue
                out.append(record)
            return tuple(out)

    def statement(
        self,
        account_id: str,
        start: datetime | None = None,
        end: datetime | None = None,
    ) -> Statement:
        """Opening balance, window movements and closing balance for one account.

        The window is ``[start, end)``; omitting ``start`` opens at the
        initial credit, omitting ``end`` runs to the present.
        """
        if start is not None and end is not None and ensure_utc(start) > ensure_utc(end):
            raise ValueError("start must not be after end")
        with self._lock:
            state = self._state(account_id)
            opening = state.initial_credit
            window: list[TransferRecord] = []
            for record in self._records:
                if record.from_account != account_id and record.to_account != account_id:
                    continue
                delta = record.amount if record.to_account == account_id else -record.amount
                if start is not None and record.applied_at < ensure_utc(start):
                    opening += delta
                elif end is None or record.applied_at < ensure_utc(end):
                    window.append(record)
            closing = opening + sum(
                r.amount if r.to_account == account_id else -r.amount for r in window
            )
            return Statement(
                account_id=account_id,
                start=start,
                end=end,
                opening_balance=opening,
                closing_balance=closing,
                records=tuple(window),
            )

    # -- persistence --------------------------------------------------------

    def write_snapshot(self, path: str | Path) -> None:
        """Atomically dump full state plus the journal line count it covers."""
        with self._lock:
            state = {
                "genesis_hash": self._genesis_hash,
                "journal_lines": self._lines_written,
                "seq": self._seq,
                "accounts": {
                    account_id: {
                        "balance": st.balance,
                        "initial_credit": st.initial_credit,
                        "opened_at": rfc3339(st.opened_at),
                    }
                    for account_id, st in sorted(self._accounts.items())
                },
                "applied_event_ids": sorted(self._applied),
                "records": [r.as_dict() for r in self._records],
                "dead_letters": [
                    {
                        "event_id": d.event_id,
                        "reason": d.reason,
                        "recorded_at": rfc3339(d.recorded_at),
                    }
                    for d in self._dead
                ],
                "skips": [
                    {
                        "event_id": s.event_id,
                        "account_id": s.account_id,
                        "amount": s.amount,
                        "reason": s.reason,
                        "recorded_at": rfc3339(s.recorded_at),
                    }
                    for s in self._skips
                ],
            }
        path = Path(path)
        tmp = path.with_suffix(path.suffix + ".tmp")
        with open(tmp, "w", encoding="utf-8") as handle:
            json.dump(state, handle, sort_keys=True)
            handle.write("\n")
            handle.flush()
            os.fsync(handle.fileno())
        os.replace(tmp, path)

    def _load_snapshot(self, path: Path) -> int:
        with open(path, "r", encoding="utf-8") as handle:
            state = json.load(handle)
        self._genesis_hash = state.get("genesis_hash")
        for account_id, st in state["accounts"].items():
            self._accounts[account_id] = _AccountState(
                balance=int(st["balance"]),
                initial_credit=int(st["initial_credit"]),
                opened_at=parse_rfc3339(st["opened_at"]),
            )
        self._applied = set(state["applied_event_ids"])
        self._records = [TransferRecord.from_dict(r) for r in state["records"]]
        self._dead = [
            DeadLetterRecord(
                event_id=d["event_id"],
                reason=d["reason"],
                recorded_at=parse_rfc3339(d["recorded_at"]),
            )
            for d in state["dead_letters"]
        ]
        self._dead_ids = {d.event_id for d in self._dead}
        self._skips = [
            SkipRecord(
                event_id=s["event_id"],
                account_id=s["account_id"],
                amount=int(s["amount"]),
                reason=s["reason"],
                recorded_at=parse_rfc3339(s["recorded_at"]),
            )
            for s in state["skips"]
        ]
        self._seq = int(state["seq"])
        return int(state["journal_lines"])

    def _apply_journal_line(self, entry: dict) -> None:
        kind = entry.get("kind")
        if kind == "open":
            self._accounts[entry["account_id"]] = _AccountState(
                balance=int(entry["initial_credit"]),
                initial_credit=int(entry["initial_credit"]),
                opened_at=parse_rfc3339(entry["opened_at"]),
            )
        elif kind == "transfer":
            record = TransferRecord.from_dict(entry)
            self._state(record.from_account)
            self._state(record.to_account)
            self._state(record.from_account).balance -= record.amount
            self._state(record.to_account).balance += record.amount
            self._records.append(record)
            self._seq = max(self._seq, int(record.transfer_id[1:]))
        elif kind == "event":
            applied_at = parse_rfc3339(entry["applied_at"])
            event_id = entry["event_id"]
            records = [
                TransferRecord(
                    transfer_id=t["transfer_id"],
                    from_account=t["from_account"],
                    to_account=t["to_account"],
                    amount=int(t["amount"]),
                    applied_at=applied_at,
                    event_id=event_id,
                )
                for t in entry["transfers"]
            ]
            # Validate every leg before mutating anything: a line either
            # applies in full or is rejected untouched.
            for record in records:
                self._state(record.from_account)
                self._state(record.to_account)
            for record in records:
                self._state(record.from_account).balance -= record.amount
                self._state(record.to_account).balance += record.amount
                self._records.append(record)
                self._seq = max(self._seq, int(record.transfer_id[1:]))
            for s in entry.get("skipped", ()):
                self._skips.append(
                    SkipRecord(
                        event_id=event_id,
                        account_id=s["account_id"],
                        amount=int(s["amount"]),
                        reason=s["reason"],
                        recorded_at=applied_at,
                    )
                )
            self._applied.add(event_id)
        elif kind == "dead_letter":
            record = DeadLetterRecord(
                event_id=entry["event_id"],
                reason=entry["reason"],
                recorded_at=parse_rfc3339(entry["recorded_at"]),
            )
            self._dead.append(record)
            self._dead_ids.add(record.event_id)
        else:
            raise LedgerError(f"unknown journal line kind {kind!r}")

    @classmethod
    def restore(
        cls,
        journal_path: str | Path,
        *,
        snapshot_path: str | Path | None = None,
        resume: bool = True,
        fsync: bool = True,
        clock: Clock = utc_now,
    ) -> tuple["Ledger", RestoreReport]:
        """Rebuild a ledger from its journal (optionally snapshot + tail).

        A truncated or corrupt final line — the signature of a crash mid
        write — is dropped; everything before it is applied.  With
        ``resume`` the journal file is trimmed to the last good line and
        reopened for appending, so the returned ledger continues where the
        crashed one stopped.
        """
        journal_path = Path(journal_path)
        ledger = cls(journal_path=None, fsync=fsync, clock=clock)
        ledger._replaying = True

        skip_lines = 0
        snapshot_used = False
        if snapshot_path is not None and Path(snapshot_path).exists():
            skip_lines = ledger._load_snapshot(Path(snapshot_path))
            snapshot_used = True

        applied = 0
        truncated = False
        truncated_at: int | None = None
        good_bytes = 0
        if journal_path.exists():
            blob = journal_path.read_bytes()
            offset = 0
            lineno = 0
            while offset < len(blob):
                newline = blob.find(b"\n", offset)
                if newline < 0:
                    # No terminator: a write was cut short here.  Whatever
                    # sits past the last newline was never acknowledged, so
                    # dropping it wholesale is the safe interpretation.
                    if blob[offset:].strip():
                        truncated = True
                        truncated_at = lineno + 1
                    break
                raw = blob[offset : newline + 1]
                lineno += 1
                if lineno == 1:
                    first_hash = hashlib.sha256(raw).hexdigest()
                    if snapshot_used and ledger._genesis_hash not in (None, first_hash):
                        raise LedgerError(
                            f"snapshot genesis hash does not match journal {journal_path}"
                        )
                    ledger._genesis_hash = first_hash
                try:
                    entry = json.loads(raw.decode("utf-8"))
                    if lineno > skip_lines:
                        ledger._apply_journal_line(entry)
                        applied += 1
                except (ValueError, KeyError, LedgerError) as exc:
                    truncated = True
                    truncated_at = lineno
                    logger.warning("journal %s line %d unusable: %s", journal_path, lineno, exc)
                    break
                offset = newline + 1
                good_bytes = offset
        ledger._replaying = False
        ledger._lines_written = skip_lines + applied

        if resume:
            if truncated and journal_path.exists():
                with open(journal_path, "ab") as handle:
                    handle.truncate(good_bytes)
            ledger._journal_path = journal_path
            journal_path.parent.mkdir(parents=True, exist_ok=True)
            ledger._journal_file = open(journal_path, "ab")

        report = RestoreReport(
            snapshot_used=snapshot_used,
            lines_applied=applied,
            truncated=truncated,
            truncated_at_line=truncated_at,
        )
        return ledger, report
