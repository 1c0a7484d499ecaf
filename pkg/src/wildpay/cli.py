"""Command-line front end: serve, replay, eval, and ledger queries."""

from __future__ import annotations

import json
import logging
import signal
import threading
from pathlib import Path

import click

from .backends import FixtureBackend
from .config import ConfigError, load_config, with_overrides
from .evaluation import EvaluationError, run_evaluation_files
from .events import parse_rfc3339
from .ledger import Ledger, LedgerError, UnknownAccount, format_pence, replay_counts
from .reports import fmt_amount, payments_csv_text, write_bundle
from .service import PipelineService
from .traces import TraceError, read_trace, replay
from .voc import VocError

log = logging.getLogger(__name__)


def _fail(message: str) -> "click.ClickException":
    return click.ClickException(message)


def _resolved_config(ctx: click.Context, config_path: str | None = None):
    """Load the effective config: subcommand path beats the group path,
    and a group-level ``--journal`` beats the file's journal_path."""
    path = config_path or ctx.obj.get("config_path")
    try:
        config = load_config(path)
        return with_overrides(config, journal_path=ctx.obj.get("journal_path"))
    except ConfigError as exc:
        raise _fail(str(exc)) from exc


@click.group()
@click.option(
    "--config", "config_path", type=click.Path(), default=None,
    help="Path to the YAML config file (or set WILDPAY_CONFIG).",
)
@click.option(
    "--journal", "journal_path", type=click.Path(), default=None,
    help="Override the ledger journal path from the config.",
)
@click.pass_context
def cli(ctx: click.Context, config_path: str | None, journal_path: str | None) -> None:
    """Camera-trap detection pipeline: intake, payouts and evaluation."""
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    ctx.ensure_object(dict)
    ctx.obj["config_path"] = config_path
    ctx.obj["journal_path"] = journal_path


@cli.command()
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="Config file for this run (beats the group-level option).")
@click.pass_context
def serve(ctx: click.Context, config_path: str | None) -> None:
    """Run the SMTP + HTTP listeners and the detection worker pool."""
    config = _resolved_config(ctx, config_path)
    service = PipelineService(config)
    try:
        service.start()
    except OSError as exc:
        raise _fail(f"cannot start listeners: {exc}") from exc
    stop = threading.Event()

    def _signal_handler(_signum, _frame):
        stop.set()

    signal.signal(signal.SIGTERM, _signal_handler)
    signal.signal(signal.SIGINT, _signal_handler)
    click.echo(
        f"listening: smtp on {config.smtp_host}:{service.smtp_port}, "
        f"http on {config.http_host}:{service.http_port}"
    )
    try:
        stop.wait()
    finally:
        click.echo("shutting down, flushing journal")
        service.stop()


@cli.command("replay")
@click.option("--trace", "trace_path", type=click.Path(exists=True), required=True,
              help="JSONL trace to feed through the offline pipeline.")
@click.option("--speed", type=float, default=0.0, show_default=True,
              help="Replay speed multiplier; 0 replays as fast as possible.")
@click.pass_context
def replay_cmd(ctx: click.Context, trace_path: str, speed: float) -> None:
    """Run a recorded trace through detection and payout, then summarize."""
    config = _resolved_config(ctx)
    try:
        records, skipped = read_trace(trace_path)
    except TraceError as exc:
        raise _fail(str(exc)) from exc
    if skipped:
        click.echo(f"warning: skipped {skipped} malformed trace lines", err=True)

    service = PipelineService(config, backend=FixtureBackend.from_trace(records))
    ledger = service.ledger
    transfers_before = len(ledger.journal)
    blanks = 0
    detections = 0
    try:
        for job in replay(records, speed=speed):
            service.store.add(job)
            service.process_job(job)
        detection_events = 0
        for record in service.store.records():
            if record.status == "processed":
                if record.detections:
                    detections += len(record.detections)
                    detection_events += 1
                else:
                    blanks += 1
        paid = sum(r.amount for r in ledger.journal[transfers_before:])
        dead = len(ledger.dead_letters)
        ledger.check_conservation()
        if config.snapshot_path:
            snapshot = Path(config.snapshot_path)
            snapshot.parent.mkdir(parents=True, exist_ok=True)
            ledger.write_snapshot(snapshot)
    finally:
        ledger.close()

    click.echo(
        f"replayed {len(records)} events: {detections} detections, "
        f"{blanks} blanks, {dead} dead letters"
    )
    click.echo(f"{detection_events} detection events, £{fmt_amount(paid)} paid")
    click.echo(
        f"conservation holds: {len(ledger.accounts())} accounts, "
        f"{format_pence(ledger.total_balance())} total"
    )


@cli.command("eval")
@click.option("--pred", "pred_path", type=click.Path(exists=True), required=True,
              help="Predictions JSONL (image_id + detections per line).")
@click.option("--gt", "gt_dir", type=click.Path(exists=True, file_okay=False),
              required=True, help="Directory of VOC XML annotations.")
@click.option("--folds", type=int, default=None, help="Number of folds.")
@click.option("--per-class", type=int, default=None, help="Images per class per fold.")
@click.option("--seed", type=int, default=None, help="Fold sampling seed.")
@click.option("--out", "out_dir", type=click.Path(), default=None,
              help="Report directory (defaults to the config's reports_dir).")
@click.option("--figures/--no-figures", default=True, show_default=True,
              help="Also render PNG figures next to the CSV files.")
@click.pass_context
def eval_cmd(
    ctx: click.Context,
    pred_path: str,
    gt_dir: str,
    folds: int | None,
    per_class: int | None,
    seed: int | None,
    out_dir: str | None,
    figures: bool,
) -> None:
    """Score predictions against ground truth and write the report files."""
    config = _resolved_config(ctx)
    config = with_overrides(config, folds=folds, per_class=per_class, seed=seed)
    try:
        bundle = run_evaluation_files(pred_path, gt_dir, config)
    except (EvaluationError, VocError, ValueError) as exc:
        raise _fail(str(exc)) from exc
    target = Path(out_dir) if out_dir else Path(config.reports_dir)
    written = write_bundle(bundle, target, figures=figures)
    overall = bundle.averaged.overall
    click.echo(
        f"evaluated {bundle.metadata['images']} images over "
        f"{config.folds} folds of {config.per_class} per class"
    )
    click.echo(
        f"averaged accuracy {overall.accuracy:.4f}, f1 {overall.f1:.4f}, "
        f"map@0.50 {bundle.detection['map_50']:.4f}"
    )
    click.echo(f"wrote {len(written)} files under {target}")


# ---------------------------------------------------------------------------
# Ledger queries
# ---------------------------------------------------------------------------


@cli.group()
def ledger() -> None:
    """Inspect balances, statements and payout arithmetic."""


def _open_readonly_ledger(ctx: click.Context) -> Ledger:
    """The ledger as recorded on disk; a fresh genesis ledger if no journal
    has been written yet.  Never mutates the journal file."""
    config = _resolved_config(ctx)
    journal = Path(config.journal_path)
    if journal.exists() and journal.stat().st_size > 0:
        snapshot = Path(config.snapshot_path)
        try:
            restored, report = Ledger.restore(
                journal,
                snapshot_path=snapshot if snapshot.exists() else None,
                resume=False,
                fsync=False,
            )
        except LedgerError as exc:
            raise _fail(f"cannot restore ledger from {journal}: {exc}") from exc
        if report.truncated:
            click.echo(
                f"warning: journal tail ignored from line {report.truncated_at_line}",
                err=True,
            )
        return restored
    fresh = Ledger()
    fresh.open_account(config.guardian_account, initial_credit=config.initial_credit)
    for species in config.species:
        fresh.open_account(species, initial_credit=config.initial_credit)
    return fresh


@ledger.command()
@click.pass_context
def balances(ctx: click.Context) -> None:
    """Print account,balance rows (plain decimals, sorted by account)."""
    book = _open_readonly_ledger(ctx)
    click.echo("account,balance")
    for account in sorted(book.accounts(), key=lambda a: a.account_id):
        click.echo(f"{account.account_id},{fmt_amount(account.balance)}")


@ledger.command()
@click.option("--account", required=True, help="Account to report on.")
@click.option("--from", "start_text", default=None, help="Window start (RFC 3339).")
@click.option("--to", "end_text", default=None, help="Window end (RFC 3339).")
@click.pass_context
def statement(
    ctx: click.Context, account: str, start_text: str | None, end_text: str | None
) -> None:
    """Opening balance, movements and closing balance for one account."""
    book = _open_readonly_ledger(ctx)
    try:
        start = parse_rfc3339(start_text) if start_text else None
        end = parse_rfc3339(end_text) if end_text else None
        result = book.statement(account, start, end)
    except UnknownAccount as exc:
        raise _fail(str(exc)) from exc
    except ValueError as exc:
        raise _fail(str(exc)) from exc
    click.echo(f"account: {result.account_id}")
    click.echo(f"opening: {format_pence(result.opening_balance)}")
    for record in result.records:
        delta = record.amount if record.to_account == account else -record.amount
        sign = "+" if delta >= 0 else "-"
        other = record.from_account if delta >= 0 else record.to_account
        click.echo(
            f"  {record.applied_at.isoformat()} {sign}{fmt_amount(abs(delta))} "
            f"{'from' if delta >= 0 else 'to'} {other} ({record.transfer_id})"
        )
    click.echo(f"closing: {format_pence(result.closing_balance)}")


@ledger.command("replay-counts")
@click.option("--counts", "counts_path", type=click.Path(exists=True), required=True,
              help="JSON file mapping species to detection counts.")
@click.pass_context
def replay_counts_cmd(ctx: click.Context, counts_path: str) -> None:
    """Payout arithmetic on a species histogram; emits the payments CSV."""
    config = _resolved_config(ctx)
    try:
        with open(counts_path, encoding="utf-8") as handle:
            data = json.load(handle)
    except json.JSONDecodeError as exc:
        raise _fail(f"{counts_path} is not valid JSON: {exc}") from exc
    if isinstance(data, dict) and isinstance(data.get("counts"), dict):
        data = data["counts"]
    if not isinstance(data, dict):
        raise _fail("counts file must be a JSON object of species -> count")
    try:
        counts = {str(k): int(v) for k, v in data.items()}
        table = replay_counts(counts, config.payout_policy())
    except (TypeError, ValueError) as exc:
        raise _fail(str(exc)) from exc
    click.echo(payments_csv_text(table), nl=False)


def main() -> None:
    cli(prog_name="wildpay")


if __name__ == "__main__":
    main()
