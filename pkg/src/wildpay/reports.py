"""Report files: delimited metric tables, a run manifest, and figures.

Everything here is a pure function of a :class:`ReportBundle` (or one of
its pieces), so regenerating reports from the same inputs is byte-stable.
Currency cells carry two decimals and no symbol; the "£" prefix is
reserved for human-facing terminal output.  Figures are rendered with the
non-interactive matplotlib backend next to the CSV files they mirror.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Sequence

from .evaluation import ReportBundle
from .ledger import PaymentRow, PaymentTable
from .metrics import ClassMetrics, ConfusionMatrix, MetricReport, RocCurve

OVERALL_ROW = "overall"
METRIC_COLUMNS = ClassMetrics.FIELDS + ("support",)


def fmt_amount(pence: int) -> str:
    """Integer pence as a plain decimal: 18520 -> '185.20'."""
    if pence < 0:
        raise ValueError(f"payment amounts are non-negative, got {pence}")
    return f"{pence // 100}.{pence % 100:02d}"


def parse_amount(text: str) -> int:
    """Inverse of :func:`fmt_amount`; insists on exactly two decimals."""
    whole, _, frac = text.partition(".")
    if len(frac) != 2 or not whole.isdigit() or not frac.isdigit():
        raise ValueError(f"malformed amount {text!r}, expected digits like 185.20")
    return int(whole) * 100 + int(frac)


def _fmt_metric(value: float) -> str:
    return f"{value:.6f}"


def _fmt_support(value: float) -> str:
    return str(int(value)) if float(value).is_integer() else f"{value:.6f}"


def class_slug(label: str) -> str:
    """File-name-safe form of a class label (spaces become underscores)."""
    return label.replace(" ", "_").replace(".", "")


# ---------------------------------------------------------------------------
# CSV renderers (text in, text out; writers below put them on disk)
# ---------------------------------------------------------------------------


def metrics_csv_text(report: MetricReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("class",) + METRIC_COLUMNS)
    for label, row in report.per_class.items():
        writer.writerow(
            [label]
            + [_fmt_metric(getattr(row, name)) for name in ClassMetrics.FIELDS]
            + [_fmt_support(row.support)]
        )
    writer.writerow(
        [OVERALL_ROW]
        + [_fmt_metric(getattr(report.overall, name)) for name in ClassMetrics.FIELDS]
        + [_fmt_support(report.overall.support)]
    )
    return buf.getvalue()


def confusion_csv_text(cm: ConfusionMatrix) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("class",) + cm.labels)
    counts = cm.counts
    for i, label in enumerate(cm.labels):
        writer.writerow([label] + [str(int(c)) for c in counts[i]])
    return buf.getvalue()


def roc_csv_text(curve: RocCurve) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("fpr", "tpr"))
    for fpr, tpr in curve.points:
        writer.writerow((repr(fpr), repr(tpr)))
    return buf.getvalue()


def payments_csv_text(table: PaymentTable) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("species", "detections", "payment_gbp"))
    for row in table.rows:
        writer.writerow((row.species, str(row.detections), fmt_amount(row.pence)))
    writer.writerow(("Total", str(table.total_detections), fmt_amount(table.total_pence)))
    return buf.getvalue()


def parse_payments_csv(text: str) -> PaymentTable:
    """Read a payments CSV back into a table, checking the Total row.

    Re-emitting the result reproduces the input byte for byte.
    """
    reader = csv.reader(io.StringIO(text))
    rows = list(reader)
    if not rows or rows[0] != ["species", "detections", "payment_gbp"]:
        raise ValueError("payments CSV must start with species,detections,payment_gbp")
    if len(rows) < 2 or rows[-1][0] != "Total":
        raise ValueError("payments CSV must end with a Total row")
    body = []
    for species, detections, amount in rows[1:-1]:
        body.append(
            PaymentRow(species=species, detections=int(detections), pence=parse_amount(amount))
        )
    table = PaymentTable(rows=tuple(body))
    total = rows[-1]
    if int(total[1]) != table.total_detections or parse_amount(total[2]) != table.total_pence:
        raise ValueError(
            f"Total row {total!r} does not match the sum of the body rows"
        )
    return table


def run_json_text(bundle: ReportBundle) -> str:
    """The run manifest: config digest, protocol parameters and headline
    numbers.  Deliberately carries no wall-clock fields, so reruns on the
    same inputs are byte-identical."""
    payload: dict = {
        "metadata": dict(bundle.metadata),
        "detection": dict(bundle.detection),
        "auc": {label: curve.auc for label, curve in bundle.roc.items()},
        "overall": {
            name: getattr(bundle.averaged.overall, name)
            for name in METRIC_COLUMNS
        },
    }
    if bundle.payments is not None:
        payload["payments"] = {
            "total_detections": bundle.payments.total_detections,
            "total_pence": bundle.payments.total_pence,
        }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# Disk layout
# ---------------------------------------------------------------------------


def write_bundle(
    bundle: ReportBundle, reports_dir: str | Path, *, figures: bool = True
) -> list[Path]:
    """Write the canonical report files and return their paths.

    Layout: metrics_fold{i}.csv per fold, metrics_avg.csv, confusion.csv,
    roc_{class}.csv per class with a curve, payments.csv when the bundle
    carries a payment table, run.json, plus rendered figures.
    """
    reports_dir = Path(reports_dir)
    reports_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    def emit(name: str, text: str) -> None:
        path = reports_dir / name
        path.write_text(text, encoding="utf-8")
        written.append(path)

    for spec, report in zip(bundle.folds, bundle.fold_reports):
        emit(f"metrics_fold{spec.fold_index}.csv", metrics_csv_text(report))
    emit("metrics_avg.csv", metrics_csv_text(bundle.averaged))
    emit("confusion.csv", confusion_csv_text(bundle.confusion))
    for label, curve in bundle.roc.items():
        emit(f"roc_{class_slug(label)}.csv", roc_csv_text(curve))
    if bundle.payments is not None:
        emit("payments.csv", payments_csv_text(bundle.payments))
    emit("run.json", run_json_text(bundle))
    if figures:
        written.extend(render_figures(bundle, reports_dir))
    return written


# ---------------------------------------------------------------------------
# Figures
# ---------------------------------------------------------------------------


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def render_figures(bundle: ReportBundle, reports_dir: str | Path) -> list[Path]:
    """Render the ROC curves, confusion matrix heatmap and (when present)
    payment bars as PNG files alongside the CSVs."""
    plt = _pyplot()
    reports_dir = Path(reports_dir)
    reports_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    if bundle.roc:
        fig, ax = plt.subplots(figsize=(7, 6))
        for label in sorted(bundle.roc):
            curve = bundle.roc[label]
            xs = [p[0] for p in curve.points]
            ys = [p[1] for p in curve.points]
            ax.plot(xs, ys, label=f"{label} (AUC {curve.auc:.3f})", linewidth=1.2)
        ax.plot([0, 1], [0, 1], linestyle=":", color="grey", linewidth=0.8)
        ax.set_xlabel("False positive rate")
        ax.set_ylabel("True positive rate")
        ax.set_title("Per-class ROC")
        ax.legend(fontsize=7, loc="lower right")
        path = reports_dir / "roc_curves.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)

    labels = bundle.confusion.labels
    counts = bundle.confusion.counts
    fig, ax = plt.subplots(figsize=(8, 7))
    image = ax.imshow(counts, cmap="Blues")
    ax.set_xticks(range(len(labels)), labels, rotation=90, fontsize=7)
    ax.set_yticks(range(len(labels)), labels, fontsize=7)
    ax.set_xlabel("Predicted")
    ax.set_ylabel("True")
    ax.set_title("Confusion matrix (all folds)")
    fig.colorbar(image, ax=ax, shrink=0.8)
    fig.tight_layout()
    path = reports_dir / "confusion_matrix.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    if bundle.payments is not None and bundle.payments.rows:
        rows = bundle.payments.rows
        fig, ax = plt.subplots(figsize=(8, 5))
        names = [row.species for row in rows]
        amounts = [row.pence / 100.0 for row in rows]
        ax.barh(range(len(rows)), amounts, color="#3b7a57")
        ax.set_yticks(range(len(rows)), names, fontsize=8)
        ax.set_xlabel("Guardian payment (GBP)")
        ax.set_title("Payments by species")
        fig.tight_layout()
        path = reports_dir / "payments.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)

    return written


def payment_table_from_rows(
    rows: Sequence[tuple[str, int, int]]
) -> PaymentTable:
    """Convenience: (species, detections, pence) triples -> sorted table."""
    built = [PaymentRow(species=s, detections=d, pence=p) for s, d, p in rows]
    built.sort(key=lambda row: (row.pence, row.species))
    return PaymentTable(rows=tuple(built))
