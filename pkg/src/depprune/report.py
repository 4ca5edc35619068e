"""Human and machine renderings of bloat reports, plus corpus statistics."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

from scipy.special import stdtr

from .detect import BloatReport, compute_rd, format_percent
from .errors import LengthMismatch, MalformedDocument, TooFewPoints

SCHEMA_ID = "depprune.report"
SCHEMA_VERSION = 1

_SET_FIELDS = (
    "accessed",
    "unaccessed",
    "direct_bloated",
    "indirect_bloated",
    "cascade_from_direct",
    "shadow_candidates",
    "orphans",
    "bundled",
)


def _prune(removed, total):
    ratio = Fraction(removed, total) if total else Fraction(0)
    return {"removed": removed, "original": total, "r_d": format_percent(ratio)}


def report_to_dict(report: BloatReport) -> dict:
    doc = {
        "schema": SCHEMA_ID,
        "schema_version": SCHEMA_VERSION,
        "package": report.package,
        "summary": {
            "total_runtime": report.total_runtime,
            "direct_count": report.direct_count,
            **{name: len(getattr(report, name)) for name in _SET_FIELDS},
            "full_scale": _prune(report.full_scale_removed, report.total_runtime),
            "direct_only": _prune(report.direct_only_removed, report.total_runtime),
        },
        "r_d": f"{report.r_d.numerator}/{report.r_d.denominator}",
    }
    for name in _SET_FIELDS:
        doc[name] = sorted(getattr(report, name))
    doc["notes"] = list(report.notes)
    return doc


def report_from_dict(doc: dict) -> BloatReport:
    if doc.get("schema") != SCHEMA_ID:
        raise MalformedDocument(f"not a {SCHEMA_ID} document")
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise MalformedDocument(f"unsupported schema_version {doc.get('schema_version')!r}")
    summary = doc["summary"]
    return BloatReport(
        total_runtime=summary["total_runtime"],
        r_d=Fraction(doc["r_d"]),
        direct_count=summary["direct_count"],
        package=doc["package"],
        notes=tuple(doc["notes"]),
        **{name: frozenset(doc[name]) for name in _SET_FIELDS},
    )


def report_from_json(text: str) -> BloatReport:
    try:
        return report_from_dict(json.loads(text))
    except json.JSONDecodeError as exc:
        raise MalformedDocument(exc.msg, exc.lineno, exc.colno) from None


def _table(rows, indent="  "):
    width = max(len(r[0]) for r in rows)
    return [f"{indent}{label:<{width}}  {value}" for label, value in rows]


def render_text(report: BloatReport, verbose: bool = True) -> str:
    total = report.total_runtime
    rows = [
        ("runtime instances (#T)", str(total)),
        ("direct dependencies (#D)", str(report.direct_count)),
        ("accessed", str(len(report.accessed))),
        ("unaccessed", str(len(report.unaccessed))),
        ("direct bloated (#BD)", str(len(report.direct_bloated))),
        ("indirect bloated", str(len(report.indirect_bloated))),
        ("cascade from direct (#BD->I)", str(len(report.cascade_from_direct))),
        ("shadow candidates", str(len(report.shadow_candidates))),
    ]
    for label, removed in (
        ("Prune_d full-scale", report.full_scale_removed),
        ("Prune_d direct-only", report.direct_only_removed),
    ):
        pct = format_percent(Fraction(removed, total)) if total else "0"
        rows.append((label, f"{removed} / {total}  R_d {pct}%"))
    lines = [f"package: {report.package or '<unnamed>'}"] + _table(rows)
    if verbose:
        for title, items in (
            ("direct bloated", report.direct_bloated),
            ("indirect bloated", report.indirect_bloated),
            ("shadow candidates (report only)", report.shadow_candidates),
            ("orphans", report.orphans),
        ):
            if items:
                lines.append(f"{title}:")
                lines.extend(f"  {item}" for item in sorted(items))
    lines.extend(f"note: {n}" for n in report.notes)
    return "\n".join(lines) + "\n"


def render(report: BloatReport, format: str = "text") -> str:
    if format == "json":
        return json.dumps(report_to_dict(report), indent=2, sort_keys=False) + "\n"
    if format == "text":
        return render_text(report)
    raise ValueError(f"unknown format {format!r}")


# -- statistics --------------------------------------------------------------


def average_ranks(values: Sequence[float]) -> list[float]:
    """1-based ranks; tied values share the mean of the ranks they span."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        mean = (i + j) / 2 + 1
        for k in range(i, j + 1):
            ranks[order[k]] = mean
        i = j + 1
    return ranks


def spearman(xs: Sequence[float], ys: Sequence[float]) -> tuple[float, float]:
    """Rank correlation and its two-tailed p-value (t approximation, n-2 df)."""
    if len(xs) != len(ys):
        raise LengthMismatch(f"{len(xs)} x values but {len(ys)} y values")
    n = len(xs)
    if n < 3:
        raise TooFewPoints(f"need at least 3 points, got {n}")
    rx, ry = average_ranks(xs), average_ranks(ys)
    mx, my = sum(rx) / n, sum(ry) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    sxx = sum((a - mx) ** 2 for a in rx)
    syy = sum((b - my) ** 2 for b in ry)
    if sxx == 0 or syy == 0:
        return math.nan, math.nan
    rs = max(-1.0, min(1.0, sxy / math.sqrt(sxx * syy)))
    if abs(rs) == 1.0:
        return rs, 0.0
    df = n - 2
    t = rs * math.sqrt(df / (1 - rs * rs))
    return rs, float(2 * stdtr(df, -abs(t)))


# -- corpus ------------------------------------------------------------------


@dataclass
class CorpusRow:
    name: str
    total_runtime: int = 0
    direct_count: int = 0
    direct_bloated: int = 0
    cascade: int = 0
    removed: int = 0
    original: int = 0
    r_d: float = 0.0
    bloated: int = 0
    error: str | None = None

    @property
    def bloat_fraction(self) -> float:
        return self.bloated / self.total_runtime if self.total_runtime else 0.0


@dataclass
class CorpusSummary:
    rows: list[CorpusRow]
    aggregate: dict = field(default_factory=dict)
    spearman_rs: float | None = None
    spearman_p: float | None = None


def corpus_row(report: BloatReport, strategy: str = "full_scale", name: str | None = None) -> CorpusRow:
    total = report.total_runtime
    removed = report.direct_only_removed if strategy == "direct_only" else report.full_scale_removed
    return CorpusRow(
        name=name or report.package,
        total_runtime=total,
        direct_count=report.direct_count,
        direct_bloated=len(report.direct_bloated),
        cascade=len(report.cascade_from_direct),
        removed=removed,
        original=total,
        r_d=float(compute_rd(removed, total)) if total else 0.0,
        bloated=len(report.unaccessed),
    )


def summarize(rows: list[CorpusRow]) -> CorpusSummary:
    ok = [r for r in rows if r.error is None]
    ranked = sorted(ok, key=lambda r: (-r.r_d, r.name)) + [r for r in rows if r.error is not None]
    removed = sum(r.removed for r in ok)
    original = sum(r.original for r in ok)
    aggregate = {
        "packages": len(ok),
        "errors": len(rows) - len(ok),
        "total_runtime": sum(r.total_runtime for r in ok),
        "direct": sum(r.direct_count for r in ok),
        "direct_bloated": sum(r.direct_bloated for r in ok),
        "cascade": sum(r.cascade for r in ok),
        "bloated": sum(r.bloated for r in ok),
        "removed": removed,
        "original": original,
        "r_d": format_percent(Fraction(removed, original)) if original else "0",
    }
    summary = CorpusSummary(ranked, aggregate)
    if len(ok) >= 3:
        rs, p = spearman([r.bloat_fraction for r in ok], [r.total_runtime for r in ok])
        summary.spearman_rs, summary.spearman_p = rs, p
    return summary


def _finite(x):
    return None if x is None or (isinstance(x, float) and math.isnan(x)) else x


def render_corpus(summary: CorpusSummary, format: str = "text") -> str:
    if format == "json":
        doc = {
            "schema": SCHEMA_ID + ".corpus",
            "schema_version": SCHEMA_VERSION,
            "rows": [
                {
                    "name": r.name,
                    "total_runtime": r.total_runtime,
                    "direct_count": r.direct_count,
                    "direct_bloated": r.direct_bloated,
                    "cascade": r.cascade,
                    "prune_d": [r.removed, r.original],
                    "r_d": format_percent(Fraction(r.removed, r.original)) if r.original else "0",
                    "bloated": r.bloated,
                    "error": r.error,
                }
                for r in summary.rows
            ],
            "aggregate": summary.aggregate,
            "spearman": {"r_s": _finite(summary.spearman_rs), "p_two_tailed": _finite(summary.spearman_p)},
        }
        return json.dumps(doc, indent=2) + "\n"
    header = ("#", "package", "#D", "#T", "#BD", "#BD->I", "Prune_d", "R_d %")
    table = [header]
    for i, r in enumerate(summary.rows, 1):
        if r.error is not None:
            table.append((str(i), r.name, "-", "-", "-", "-", "error", r.error))
            continue
        pct = format_percent(Fraction(r.removed, r.original)) if r.original else "0"
        table.append(
            (str(i), r.name, str(r.direct_count), str(r.total_runtime), str(r.direct_bloated),
             str(r.cascade), f"{r.removed} / {r.original}", pct)
        )
    widths = [max(len(row[c]) for row in table) for c in range(len(header))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in table]
    agg = summary.aggregate
    lines.append(
        f"total: {agg.get('removed', 0)} / {agg.get('original', 0)} removed "
        f"(R_d {agg.get('r_d', '0')}%), {agg.get('errors', 0)} errors"
    )
    if summary.spearman_rs is not None:
        lines.append(f"spearman r_s = {summary.spearman_rs:.5f}, p = {summary.spearman_p:.5f}")
    return "\n".join(lines) + "\n"
