"""Retrieval accuracy scoring.

Three figures of merit over top-1 predictions:

* eta_p: pooled patch-to-scan accuracy, total correct over total queries;
* eta_w: whole-scan accuracy, the unweighted mean of per-scan accuracies;
* eta_total: the product eta_p * eta_w.

Internally accuracies are fractions in [0, 1]; the sweep CSV reports
percentages with two decimals.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

from .errors import InputFormatError
from .ioutil import atomic_write_text

REPORT_FORMAT = "psel-eval"
REPORT_VERSION = 1

TRUTH_HEADER = ["query_id", "scan_id"]
SWEEP_HEADER = ["fraction", "method", "feature", "eta_p", "eta_w", "eta_total"]


@dataclass
class EvalReport:
    eta_p: float
    eta_w: float
    eta_total: float
    per_scan: dict[str, tuple[int, int]]  # scan_id -> (n_correct, n_total)
    n_queries: int


def evaluate(top1: Mapping[str, str], truth: Mapping[str, str]) -> EvalReport:
    """Score top-1 predictions against ground-truth scan labels.

    ``top1`` and ``truth`` must cover exactly the same query ids; a
    prediction without a label (or a label without a prediction) is a
    hard error rather than a silent drop.
    """
    if not truth:
        raise ValueError("no queries to evaluate")
    unlabeled = sorted(top1.keys() - truth.keys())
    if unlabeled:
        raise InputFormatError(
            f"{len(unlabeled)} predictions lack truth labels, first: {unlabeled[0]!r}"
        )
    unpredicted = sorted(truth.keys() - top1.keys())
    if unpredicted:
        raise InputFormatError(
            f"{len(unpredicted)} labeled queries lack predictions, "
            f"first: {unpredicted[0]!r}"
        )

    counts: dict[str, list[int]] = {}
    for qid, scan in truth.items():
        entry = counts.setdefault(scan, [0, 0])
        entry[1] += 1
        if top1[qid] == scan:
            entry[0] += 1

    n_correct = sum(c for c, _ in counts.values())
    n_total = sum(t for _, t in counts.values())
    eta_p = n_correct / n_total
    eta_w = sum(c / t for c, t in counts.values()) / len(counts)
    return EvalReport(
        eta_p=eta_p,
        eta_w=eta_w,
        eta_total=eta_p * eta_w,
        per_scan={scan: (c, t) for scan, (c, t) in sorted(counts.items())},
        n_queries=n_total,
    )


def save_report(report: EvalReport, path: str | Path) -> None:
    doc = {
        "format": REPORT_FORMAT,
        "version": REPORT_VERSION,
        "eta_p": report.eta_p,
        "eta_w": report.eta_w,
        "eta_total": report.eta_total,
        "n_queries": report.n_queries,
        "per_scan": {
            scan: {"n_correct": c, "n_total": t}
            for scan, (c, t) in report.per_scan.items()
        },
    }
    atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_report(path: str | Path) -> EvalReport:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != REPORT_FORMAT or doc.get("version") != REPORT_VERSION:
        raise InputFormatError(f"not an eval report: {path}")
    return EvalReport(
        eta_p=doc["eta_p"],
        eta_w=doc["eta_w"],
        eta_total=doc["eta_total"],
        per_scan={
            scan: (entry["n_correct"], entry["n_total"])
            for scan, entry in sorted(doc["per_scan"].items())
        },
        n_queries=doc["n_queries"],
    )


def sweep_report(reports: list[tuple[float, str, str, EvalReport]]) -> str:
    """Long-format CSV over (fraction, method, feature) rows.

    Rows sort by (feature, method, fraction); accuracy columns are
    percentages with two decimals. Duplicate keys are an error.
    """
    seen: set[tuple[float, str, str]] = set()
    for fraction, method, feature, _ in reports:
        key = (fraction, method, feature)
        if key in seen:
            raise ValueError(f"duplicate sweep row for {key}")
        seen.add(key)

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_HEADER)
    for fraction, method, feature, rep in sorted(
        reports, key=lambda r: (r[2], r[1], r[0])
    ):
        writer.writerow(
            [
                f"{fraction:g}",
                method,
                feature,
                f"{100.0 * rep.eta_p:.2f}",
                f"{100.0 * rep.eta_w:.2f}",
                f"{100.0 * rep.eta_total:.2f}",
            ]
        )
    return buf.getvalue()


def load_truth_csv(path: str | Path) -> dict[str, str]:
    """Ground-truth labels as CSV with header query_id,scan_id."""
    truth: dict[str, str] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != TRUTH_HEADER:
            raise InputFormatError(f"unexpected truth CSV header: {header}")
        for row in reader:
            if len(row) != 2:
                raise InputFormatError(f"malformed truth row: {row}")
            qid, scan = row
            if qid in truth:
                raise InputFormatError(f"duplicate truth entry for query {qid!r}")
            truth[qid] = scan
    return truth


def top1_predictions(results: list[tuple[str, list]]) -> dict[str, str]:
    """Map each query id to the scan of its rank-1 match."""
    out: dict[str, str] = {}
    for qid, matches in results:
        best = min(matches, key=lambda m: m.rank)
        if best.rank != 1:
            raise InputFormatError(f"query {qid!r} has no rank-1 match")
        out[qid] = best.scan_id
    return out
