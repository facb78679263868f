"""Depth-by-depth range restoration campaign for one vulnerability."""

from __future__ import annotations

import io
import json
import logging
from dataclasses import dataclass, field
from datetime import date
from typing import Callable, Optional, Sequence

from .alsearch import AffectedRecord, find_affected
from .analytics import bucket_dates
from .corpus import LibraryId, ReleaseId, Vulnerability
from .graph import DependencyGraph, apply_range_update
from .restore import (
    INTERNAL_ERROR,
    NO_COMPATIBLE_PATCH,
    NO_SECURE_VERSION,
    RESTORED,
    RestoredRange,
    SurfaceProvider,
    UsageManifest,
    restore_range,
)
from .version import parse_version_spec

log = logging.getLogger(__name__)

FAILURE_CATEGORIES = (NO_COMPATIBLE_PATCH, NO_SECURE_VERSION, INTERNAL_ERROR)


@dataclass(frozen=True)
class FailureCategory:
    category: str
    detail: str
    suggestion: str


@dataclass
class CampaignReport:
    vuln_id: str
    per_depth: list = field(default_factory=list)
    remaining_libvers: list = field(default_factory=list)
    iterations: int = 0
    final_epoch: int = 0

    def as_dict(self) -> dict:
        return {
            "vuln_id": self.vuln_id,
            "per_depth": self.per_depth,
            "remaining_libvers": self.remaining_libvers,
            "iterations": self.iterations,
            "final_epoch": self.final_epoch,
        }


def _has_patch(graph: DependencyGraph, vuln: Vulnerability) -> bool:
    return any(not vuln.affected.contains(graph.releases[h].version) for h in graph.versions_of(vuln.library))


def find_blocking_dependents(
    graph: DependencyGraph,
    vuln: Vulnerability,
    depth: int,
    records: Optional[Sequence[AffectedRecord]] = None,
    max_depth: int = 10,
) -> list[ReleaseId]:
    """Affected releases at minimal depth ``depth`` while a patched release exists."""
    if depth < 1:
        raise ValueError("depth must be at least 1")
    if records is None:
        records = find_affected(graph, vuln, max_depth)
    if not _has_patch(graph, vuln):
        return []
    return [r.release for r in records if r.depth == depth]


def categorize_failure(result: RestoredRange, context: Optional[dict] = None) -> FailureCategory:
    """Explain a failed restoration and suggest what the maintainer can do.

    ``context`` may carry ``witness_path`` (ReleaseIds), ``vuln``
    (Vulnerability) and ``usage`` (UsageManifest of the dependent).
    """
    context = context or {}
    chain = " -> ".join(r.gav for r in context.get("witness_path", ())) or "n/a"
    target = str(result.target)
    if result.outcome == NO_COMPATIBLE_PATCH:
        vt_s = result.per_version.get(result.v_s, {}).get("vuln_total") if result.v_s is not None else None
        breaking = sorted(
            {
                api
                for v, info in result.per_version.items()
                if vt_s is not None and info["vuln_total"] < vt_s
                for api in info.get("breaking", [])
            }
        )
        apis = ", ".join(breaking) if breaking else "none recorded (validation failures)"
        return FailureCategory(
            NO_COMPATIBLE_PATCH,
            f"no version of {target} with fewer vulnerabilities than {result.v_s} is compatible",
            f"manual fix needed; breaking APIs: {apis}; call chain: {chain}",
        )
    if result.outcome == NO_SECURE_VERSION:
        vuln = context.get("vuln")
        usage: Optional[UsageManifest] = context.get("usage")
        lib = vuln.library if vuln is not None else None
        reachable = usage is not None and lib is not None and usage.dependency == lib and bool(usage.used_apis)
        if reachable:
            advice = f"substitute {lib} with an alternative library"
        else:
            advice = f"exclude {lib or 'the vulnerable library'} on the dependency on {target}"
        return FailureCategory(
            NO_SECURE_VERSION,
            f"no version of {target} has fewer vulnerabilities than {result.v_s}",
            f"{advice}; keep monitoring for a patched release (call chain: {chain})",
        )
    detail = "; ".join(d.message for d in result.diagnostics) or "internal error"
    return FailureCategory(INTERNAL_ERROR, detail, "inspect the diagnostic and rerun")


def _remaining_rows(
    graph: DependencyGraph, records: Sequence[AffectedRecord], dates: Sequence[date], stage: str
) -> list[dict]:
    released = sorted(r.released_at for r in records if r.released_at is not None)
    rows = []
    for t in dates:
        rows.append({"date": t.isoformat(), "count": sum(1 for d in released if d <= t), "epoch": graph.epoch, "stage": stage})
    return rows


def _series_dates(graph: DependencyGraph, vuln: Vulnerability, records: Sequence[AffectedRecord]) -> list[date]:
    dated = [r.released_at for r in records if r.released_at is not None]
    all_dates = [r.released_at for r in graph.releases if r.released_at is not None]
    start = min([vuln.published_at] + dated)
    end = max([start] + all_dates)
    return bucket_dates(start, end, "month")


UsageLookup = Callable[[ReleaseId, LibraryId], Optional[UsageManifest]]


def run_campaign(
    graph: DependencyGraph,
    vuln: Vulnerability,
    max_depth: int = 10,
    surfaces: Optional[SurfaceProvider] = None,
    usage_for: Optional[UsageLookup] = None,
    validator=None,
    open_upper: bool = False,
    allow_holes: bool = False,
    eager: bool = False,
    workers: int = 1,
) -> tuple[CampaignReport, DependencyGraph]:
    """Restore ranges depth by depth; returns the report and the final epoch."""
    report = CampaignReport(vuln.id, final_epoch=graph.epoch)
    records = find_affected(graph, vuln, max_depth)
    if not records:
        return report, graph
    dates = _series_dates(graph, vuln, records)
    report.remaining_libvers.extend(_remaining_rows(graph, records, dates, "baseline"))
    current = graph

    for depth in range(1, max_depth + 1):
        if not _has_patch(current, vuln) or not any(r.depth >= depth for r in records):
            break
        by_release = {r.release: r for r in records}
        blocking = find_blocking_dependents(current, vuln, depth, records, max_depth)
        frozen = current
        entries = []
        failures = {c: 0 for c in FAILURE_CATEGORIES}
        restored = 0
        pending = []
        for dep in blocking:
            rec = by_release[dep]
            target = rec.witness_path[1].library
            usage = usage_for(dep, target) if usage_for else None
            base = current if eager else frozen
            result = restore_range(
                base, dep, target, usage=usage, surfaces=surfaces, validator=validator,
                open_upper=open_upper, allow_holes=allow_holes, max_depth=max_depth, workers=workers,
            )
            report.iterations += 1
            entry = {
                "dependent": dep.gav,
                "target": str(target),
                "v_s": result.v_s.raw if result.v_s is not None else None,
                "outcome": result.outcome,
                "range": result.range_text,
            }
            if result.outcome == RESTORED and not _unblocks(base, vuln, target, result, max_depth):
                # the range is valid but its resolved member is still affected
                result.outcome = NO_SECURE_VERSION
                result.selected = []
                result.range_text = ""
                entry.update(outcome=NO_SECURE_VERSION, range="")
            if result.outcome == RESTORED:
                restored += 1
                spec = parse_version_spec(result.range_text)
                if eager:
                    current = apply_range_update(current, dep, target, spec)
                else:
                    pending.append((dep, target, spec))
            else:
                cat = categorize_failure(result, {"witness_path": rec.witness_path, "vuln": vuln, "usage": usage})
                failures[cat.category] += 1
                entry.update(category=cat.category, detail=cat.detail, suggestion=cat.suggestion)
            entries.append(entry)
        for dep, target, spec in pending:
            current = apply_range_update(current, dep, target, spec)
        records = find_affected(current, vuln, max_depth)
        report.per_depth.append(
            {"depth": depth, "dependents": len(blocking), "restored": restored, "failures": failures, "entries": entries}
        )
        report.remaining_libvers.extend(_remaining_rows(current, records, dates, f"depth-{depth}"))
    report.final_epoch = current.epoch
    return report, current


def _unblocks(graph: DependencyGraph, vuln: Vulnerability, target: LibraryId, result: RestoredRange, max_depth: int) -> bool:
    """Whether Maven's pick from the range (its highest member) escapes the vulnerability."""
    top = result.selected[-1]
    if target == vuln.library:
        return not vuln.affected.contains(top)
    h = graph.find(target, top)
    if h is None:
        return False
    affected = {graph.handle_of(r.release) for r in find_affected(graph, vuln, max_depth)}
    return h not in affected


# ---------------------------------------------------------------- rendering


def report_json(report: CampaignReport) -> str:
    return json.dumps(report.as_dict(), indent=2, sort_keys=True) + "\n"


def report_markdown(report: CampaignReport) -> str:
    out = io.StringIO()
    out.write(f"# Range restoration campaign: {report.vuln_id}\n\n")
    out.write(f"- iterations: {report.iterations}\n- final epoch: {report.final_epoch}\n\n")
    if not report.per_depth:
        out.write("No blocking dependents were found.\n")
        return out.getvalue()
    out.write("| depth | dependents | restored | " + " | ".join(FAILURE_CATEGORIES) + " |\n")
    out.write("|---|---|---|" + "---|" * len(FAILURE_CATEGORIES) + "\n")
    for row in report.per_depth:
        fails = " | ".join(str(row["failures"].get(c, 0)) for c in FAILURE_CATEGORIES)
        out.write(f"| {row['depth']} | {row['dependents']} | {row['restored']} | {fails} |\n")
    for row in report.per_depth:
        if not row["entries"]:
            continue
        out.write(f"\n## Depth {row['depth']}\n\n")
        for e in row["entries"]:
            if e["outcome"] == RESTORED:
                out.write(f"- {e['dependent']}: {e['target']} {e['v_s']} -> `{e['range']}`\n")
            else:
                out.write(f"- {e['dependent']}: {e['target']} {e['v_s']}: **{e['outcome']}**. {e['detail']}. Suggestion: {e['suggestion']}\n")
    if report.remaining_libvers:
        out.write("\n## Remaining vulnerable lib-vers\n\n| date | stage | epoch | count |\n|---|---|---|---|\n")
        for r in report.remaining_libvers:
            out.write(f"| {r['date']} | {r['stage']} | {r['epoch']} | {r['count']} |\n")
    return out.getvalue()


def remaining_csv(report: CampaignReport) -> str:
    out = io.StringIO()
    out.write("date,count,epoch,stage\n")
    for r in report.remaining_libvers:
        out.write(f"{r['date']},{r['count']},{r['epoch']},{r['stage']}\n")
    return out.getvalue()


def emit_report(report: CampaignReport, path, format: str = "json") -> None:
    if format == "json":
        text = report_json(report)
    elif format in ("md", "markdown"):
        text = report_markdown(report)
    elif format == "csv":
        text = remaining_csv(report)
    else:
        raise ValueError(f"unknown report format {format!r}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
