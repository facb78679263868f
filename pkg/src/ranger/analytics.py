"""Persistence metrics, cause classification and countermeasure usage."""

from __future__ import annotations

import calendar
import io
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import date, timedelta
from typing import Iterable, Mapping, Optional, Sequence

from .alsearch import AffectedRecord, find_affected
from .corpus import LibraryId, ReleaseId, Vulnerability
from .errors import EmptySeries, MissingReleaseDates, NoReleaseBefore
from .graph import DependencyGraph
from .resolver import DEPLOYABLE, resolve_tree, select_version
from .version import RangeSpec, VersionNumber

AFFECTED, PATCHED, REMOVED = "Affected", "Patched", "Removed"
CAUSE_ROLES = {
    "C1": "VulnerableLibrary",
    "C2": "FirstDept",
    "C3": "FirstDept",
    "C4": "MediumDept",
    "C5": "MediumDept",
    "C6": "EndUser",
}
CAUSES = tuple(CAUSE_ROLES)


@dataclass(frozen=True)
class LibraryStatus:
    library: LibraryId
    status: str
    as_of: date
    latest: ReleaseId


@dataclass(frozen=True)
class SeriesPoint:
    date: date
    p_vul: float
    p_patch: float
    new_affected_releases: int
    denominator: int
    affected: int = 0
    patched: int = 0
    removed: int = 0


@dataclass
class PvulSeries:
    vuln_id: str
    bucket: str
    published_at: date
    end: date
    points: list = field(default_factory=list)
    by_depth: dict = field(default_factory=dict)

    @property
    def exposure_days(self) -> int:
        return (self.end - self.published_at).days

    def as_dict(self) -> dict:
        def pts(points):
            return [
                {
                    "date": p.date.isoformat(),
                    "p_vul": round(p.p_vul, 6),
                    "p_patch": round(p.p_patch, 6),
                    "new_affected_releases": p.new_affected_releases,
                    "denominator": p.denominator,
                }
                for p in points
            ]

        return {
            "vuln_id": self.vuln_id,
            "bucket": self.bucket,
            "published_at": self.published_at.isoformat(),
            "end": self.end.isoformat(),
            "points": pts(self.points),
            "by_depth": {str(d): pts(s.points) for d, s in sorted(self.by_depth.items())},
        }


@dataclass(frozen=True)
class CauseLabel:
    cause: str
    blamed_role: str
    path: tuple
    blamed: Optional[ReleaseId] = None


# ---------------------------------------------------------------- helpers


def latest_release(graph: DependencyGraph, library: LibraryId, as_of: Optional[date] = None) -> Optional[int]:
    """Handle of the newest release by date (version breaks ties)."""
    best = None
    for h in graph.versions_of(library):
        d = graph.releases[h].released_at
        if d is None or (as_of is not None and d > as_of):
            continue
        # versions_of is ascending, so a later handle wins a date tie
        if best is None or d >= graph.releases[best].released_at:
            best = h
    return best


def _affected_handles(graph: DependencyGraph, records: Iterable[AffectedRecord]) -> set:
    return {graph.handle_of(r.release) for r in records}


def _horizon_end(graph: DependencyGraph, start: date) -> date:
    dates = [r.released_at for r in graph.releases if r.released_at is not None]
    return max([start] + dates)


def _depends_on(graph: DependencyGraph, handle: int, library: LibraryId, max_depth: int) -> bool:
    node = resolve_tree(graph, handle, max_depth).node_for(library)
    return node is not None and node.via_scope in DEPLOYABLE


# ---------------------------------------------------------------- persistence


def classify_library_status(
    graph: DependencyGraph,
    library: LibraryId,
    vuln: Vulnerability,
    as_of: date,
    records: Optional[Sequence[AffectedRecord]] = None,
    max_depth: int = 10,
) -> Optional[LibraryStatus]:
    """Status of ``library`` from its latest release dated on or before ``as_of``.

    Returns None when no release up to ``as_of`` was ever affected (the
    library is not downstream of the vulnerability at that date).
    """
    latest = latest_release(graph, library, as_of)
    if latest is None:
        raise NoReleaseBefore(f"{library} has no dated release on or before {as_of}")
    if records is None:
        records = find_affected(graph, vuln, max_depth)
    affected = _affected_handles(graph, records)
    rel = graph.releases[latest]
    if latest in affected:
        return LibraryStatus(library, AFFECTED, as_of, rel)
    earlier = any(
        h in affected and graph.releases[h].released_at is not None and graph.releases[h].released_at <= as_of
        for h in graph.versions_of(library)
    )
    if not earlier:
        return None
    if _depends_on(graph, latest, vuln.library, max_depth):
        return LibraryStatus(library, PATCHED, as_of, rel)
    return LibraryStatus(library, REMOVED, as_of, rel)


def _month_end(d: date) -> date:
    return date(d.year, d.month, calendar.monthrange(d.year, d.month)[1])


def bucket_dates(start: date, end: date, bucket: str) -> list[date]:
    if bucket == "day":
        return [start + timedelta(days=i) for i in range((end - start).days + 1)]
    if bucket != "month":
        raise ValueError(f"unknown bucket {bucket!r}")
    out = []
    cur = start
    while cur <= end:
        out.append(min(_month_end(cur), end))
        cur = _month_end(cur) + timedelta(days=1)
    return out


def pvul_series(
    graph: DependencyGraph,
    vuln: Vulnerability,
    bucket: str = "month",
    start: Optional[date] = None,
    end: Optional[date] = None,
    records: Optional[Sequence[AffectedRecord]] = None,
    max_depth: int = 10,
) -> PvulSeries:
    """P_vul / P_patch per bucket for the libraries downstream of ``vuln``.

    Each point is evaluated at the last day of its bucket. The denominator
    is the number of libraries that are Affected, Patched or Removed by that
    date; buckets with an empty denominator are omitted.
    """
    start = start or vuln.published_at
    end = end or _horizon_end(graph, start)
    if records is None:
        records = find_affected(graph, vuln, max_depth)
    affected = _affected_handles(graph, records)
    min_depth: dict[LibraryId, int] = {}
    for r in records:
        lib = r.release.library
        min_depth[lib] = min(min_depth.get(lib, r.depth), r.depth)
    libraries = sorted(min_depth)
    dates = bucket_dates(start, end, bucket)

    statuses: dict[date, dict[LibraryId, str]] = {}
    for t in dates:
        row = {}
        for lib in libraries:
            try:
                st = classify_library_status(graph, lib, vuln, t, records, max_depth)
            except NoReleaseBefore:
                continue
            if st is not None:
                row[lib] = st.status
        statuses[t] = row

    release_dates = sorted(
        graph.releases[h].released_at for h in affected if graph.releases[h].released_at is not None
    )

    def build(libs: Iterable[LibraryId], dated: list[date]) -> list[SeriesPoint]:
        libs = set(libs)
        points = []
        prev = start - timedelta(days=1)
        for t in dates:
            counts = Counter(s for lib, s in statuses[t].items() if lib in libs)
            den = counts[AFFECTED] + counts[PATCHED] + counts[REMOVED]
            new = sum(1 for d in dated if prev < d <= t)
            prev = t
            if den == 0:
                continue
            points.append(
                SeriesPoint(
                    t,
                    counts[AFFECTED] / den,
                    counts[PATCHED] / den,
                    new,
                    den,
                    counts[AFFECTED],
                    counts[PATCHED],
                    counts[REMOVED],
                )
            )
        return points

    series = PvulSeries(vuln.id, bucket, vuln.published_at, end, build(libraries, release_dates))
    for depth in sorted(set(min_depth.values())):
        libs = [lib for lib, d in min_depth.items() if d == depth]
        dated = sorted(
            graph.releases[h].released_at
            for h in affected
            if graph.releases[h].library in libs and graph.releases[h].released_at is not None
        )
        series.by_depth[depth] = PvulSeries(vuln.id, bucket, vuln.published_at, end, build(libs, dated))
    return series


def heatmap_csv(series: PvulSeries) -> str:
    """Depth x bucket matrix of P_vul; empty cells where a depth had no data."""
    dates = sorted({p.date for s in series.by_depth.values() for p in s.points})
    buf = io.StringIO()
    buf.write("depth," + ",".join(d.isoformat() for d in dates) + "\n")
    for depth, s in sorted(series.by_depth.items()):
        vals = {p.date: p.p_vul for p in s.points}
        cells = [f"{vals[d]:.6f}" if d in vals else "" for d in dates]
        buf.write(f"{depth}," + ",".join(cells) + "\n")
    return buf.getvalue()


@dataclass(frozen=True)
class LifeMetric:
    days: Optional[int]  # None when not reached
    normalized: Optional[float]

    @property
    def reached(self) -> bool:
        return self.days is not None

    def as_dict(self) -> dict:
        return {
            "days": self.days if self.days is not None else "not_reached",
            "normalized": None if self.normalized is None else round(self.normalized, 6),
        }


def _normalize(days: int, exposure: int) -> float:
    if exposure <= 0:
        return 1.0 if days > 0 else 0.0
    return days / exposure


def half_life(series: PvulSeries, mode: str = "absolute", threshold: float = 0.5) -> LifeMetric:
    """Days from publication until P_vul first falls to the threshold.

    ``absolute`` compares against ``threshold`` itself; ``relative`` against
    ``threshold`` times the first point's P_vul.
    """
    if not series.points:
        raise EmptySeries(f"series for {series.vuln_id} has no points")
    if mode == "relative":
        limit = threshold * series.points[0].p_vul
    elif mode == "absolute":
        limit = threshold
    else:
        raise ValueError(f"unknown half-life mode {mode!r}")
    for p in series.points:
        if p.p_vul <= limit:
            days = (p.date - series.published_at).days
            return LifeMetric(days, _normalize(days, series.exposure_days))
    return LifeMetric(None, 1.0)


def full_life(series: PvulSeries) -> LifeMetric:
    """Days until P_vul reaches zero and stays there through the horizon."""
    if not series.points:
        raise EmptySeries(f"series for {series.vuln_id} has no points")
    first_zero = None
    for i in range(len(series.points) - 1, -1, -1):
        if series.points[i].p_vul != 0:
            break
        first_zero = i
    if first_zero is None:
        return LifeMetric(None, 1.0)
    days = (series.points[first_zero].date - series.published_at).days
    return LifeMetric(days, _normalize(days, series.exposure_days))


def new_release_span_from_dates(published_at: date, release_dates: Iterable[date], end: date) -> LifeMetric:
    dates = list(release_dates)
    days = max(0, (max(dates) - published_at).days) if dates else 0
    exposure = (end - published_at).days
    norm = min(1.0, max(0.0, _normalize(days, exposure)))
    return LifeMetric(days, norm)


def new_release_span(
    graph: DependencyGraph,
    vuln: Vulnerability,
    records: Optional[Sequence[AffectedRecord]] = None,
    end: Optional[date] = None,
    max_depth: int = 10,
) -> LifeMetric:
    """Days from publication to the last release of an affected version."""
    if records is None:
        records = find_affected(graph, vuln, max_depth)
    end = end or _horizon_end(graph, vuln.published_at)
    dates = [r.released_at for r in records if r.released_at is not None]
    return new_release_span_from_dates(vuln.published_at, dates, end)


# ---------------------------------------------------------------- causes


def _fix_release(
    graph: DependencyGraph,
    library: LibraryId,
    above: VersionNumber,
    not_before: Optional[date],
    as_of: date,
    is_affected,
) -> Optional[ReleaseId]:
    """Earliest non-affected release of ``library`` newer than ``above``."""
    best = None
    for h in graph.versions_of(library):
        rel = graph.releases[h]
        if rel.version <= above or rel.released_at is None:
            continue
        if rel.released_at > as_of or (not_before is not None and rel.released_at < not_before):
            continue
        if is_affected(h):
            continue
        if best is None or rel.released_at < best.released_at:
            best = rel
    return best


def classify_cause(
    graph: DependencyGraph,
    record: AffectedRecord,
    overrides: Optional[Mapping[LibraryId, VersionNumber]] = None,
    as_of: Optional[date] = None,
    vuln: Optional[Vulnerability] = None,
    max_depth: int = 10,
) -> Optional[CauseLabel]:
    """Blame the first role that misbehaved, walking up from the vulnerable library.

    ``witness_path[-1]`` is the vulnerable release, ``witness_path[-2]`` the
    First Dept and anything above it a Medium Dept. Returns None when the
    path is not blocked (every role had and used a fix in time and no end
    user override pins a vulnerable version).
    """
    path = record.witness_path
    missing = [r.gav for r in path if r.released_at is None]
    if missing:
        raise MissingReleaseDates(f"no release date for {', '.join(missing)}")
    vulnerable = path[-1]
    if vuln is None:
        vuln = graph.find_vulnerability(record.vuln_id, vulnerable.library)
    if as_of is None:
        as_of = _horizon_end(graph, vuln.published_at)
    affected = _affected_handles(graph, find_affected(graph, vuln, max_depth))

    def lib_affected(h: int) -> bool:
        return vuln.affected.contains(graph.releases[h].version)

    fix = _fix_release(graph, vulnerable.library, vulnerable.version, None, as_of, lib_affected)
    if fix is None:
        return CauseLabel("C1", CAUSE_ROLES["C1"], path, vulnerable)
    fixed_on = fix.released_at
    for i in range(len(path) - 2, -1, -1):
        dept = path[i]
        first = i == len(path) - 2
        if fixed_on < dept.released_at:
            cause = "C2" if first else "C4"
            return CauseLabel(cause, CAUSE_ROLES[cause], path, dept)
        nxt = _fix_release(graph, dept.library, dept.version, fixed_on, as_of, lambda h: h in affected)
        if nxt is None:
            cause = "C3" if first else "C5"
            return CauseLabel(cause, CAUSE_ROLES[cause], path, dept)
        fixed_on = nxt.released_at
    if overrides:
        pinned = overrides.get(vulnerable.library)
        if pinned is not None and vuln.affected.contains(pinned):
            return CauseLabel("C6", CAUSE_ROLES["C6"], path, None)
    return None


def cause_proportions(
    graph: DependencyGraph,
    vulns: Iterable[Vulnerability],
    overrides: Optional[Mapping[LibraryId, VersionNumber]] = None,
    as_of: Optional[date] = None,
    max_depth: int = 10,
) -> dict:
    """Cause counts over every witness path; fractions exclude C1."""
    counts = Counter({c: 0 for c in CAUSES})
    unblocked = 0
    undated = 0
    for vuln in vulns:
        for rec in find_affected(graph, vuln, max_depth):
            try:
                label = classify_cause(graph, rec, overrides, as_of, vuln, max_depth)
            except MissingReleaseDates:
                undated += 1
                continue
            if label is None:
                unblocked += 1
            else:
                counts[label.cause] += 1
    blocked = sum(counts[c] for c in CAUSES if c != "C1")
    fractions = {c: (counts[c] / blocked if blocked else 0.0) for c in CAUSES if c != "C1"}
    roles: dict[str, float] = defaultdict(float)
    for c, f in fractions.items():
        roles[CAUSE_ROLES[c]] += f
    return {
        "counts": dict(counts),
        "fractions": fractions,
        "roles": dict(sorted(roles.items())),
        "blocked_paths": blocked,
        "unblocked_paths": unblocked,
        "undated_paths": undated,
    }


# ---------------------------------------------------------------- countermeasure usage


def _pct(num: int, den: int) -> float:
    return 100.0 * num / den if den else 0.0


def range_usage_stats(graph: DependencyGraph, vulns: Iterable[Vulnerability]) -> dict:
    vulns = list(vulns)
    vulnerable_libs = {v.library for v in vulns}

    def is_vulnerable(h: int) -> bool:
        rel = graph.releases[h]
        return any(v.library == rel.library and v.affected.contains(rel.version) for v in vulns)

    total = ranged = targeted = all_vul = latest_vul = open_up = latest_ok = 0
    for h in range(len(graph.releases)):
        for d in graph.edges(h):
            total += 1
            if not isinstance(d.spec, RangeSpec):
                continue
            ranged += 1
            if d.target not in vulnerable_libs:
                continue
            targeted += 1
            members = [m for m in graph.versions_of(d.target) if d.spec.contains(graph.releases[m].version)]
            if members and all(is_vulnerable(m) for m in members):
                all_vul += 1
            if members and is_vulnerable(members[-1]):
                latest_vul += 1
            else:
                latest_ok += 1
                if d.spec.open_upper:
                    open_up += 1
    return {
        "edges_total": total,
        "edges_with_ranges": ranged,
        "pct_ranges": _pct(ranged, total),
        "vuln_targeted_ranges": targeted,
        "pct_all_versions_vulnerable": _pct(all_vul, targeted),
        "pct_latest_vulnerable": _pct(latest_vul, targeted),
        "pct_open_upper": _pct(open_up, latest_ok),
    }


def dependency_management_stats(graph: DependencyGraph, vulns: Iterable[Vulnerability], max_depth: int = 10) -> dict:
    """Compare default and managed resolution of vulnerable libraries per POM."""
    vulns = list(vulns)
    vulnerable_libs = {v.library for v in vulns}

    def vulnerable(h: Optional[int]) -> bool:
        if h is None:
            return False
        rel = graph.releases[h]
        return any(v.library == rel.library and v.affected.contains(rel.version) for v in vulns)

    with_dm = with_vuln = affected = bypass = overlapping = 0
    for h in range(len(graph.releases)):
        entries = graph.managed(h)
        if not entries:
            continue
        with_dm += 1
        relevant = [m for m in entries if m.target in vulnerable_libs]
        if not relevant:
            continue
        with_vuln += 1
        default_tree = resolve_tree(graph, h, max_depth, use_management=False)
        any_affected = any_bypass = False
        for m in relevant:
            override = select_version(graph, m.target, m.spec)
            node = default_tree.node_for(m.target)
            default = node.handle if node is not None else None
            if vulnerable(override):
                any_affected = True
            elif vulnerable(default):
                any_bypass = True
        affected += any_affected
        bypass += any_bypass
        overlapping += any_affected and any_bypass
    return {
        "poms_with_dm": with_dm,
        "poms_with_vuln_overrides": with_vuln,
        "affected": affected,
        "bypass": bypass,
        "overlapping": overlapping,
    }
