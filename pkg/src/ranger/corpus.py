"""Ingestion of a local ecosystem snapshot: index, POM files, vulnerabilities."""

from __future__ import annotations

import json
import logging
import os
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from functools import cmp_to_key
from pathlib import Path
from typing import Callable, Iterable, Optional

from .errors import (
    MalformedRange,
    MissingCoordinates,
    RangerError,
    SchemaError,
    UnorderedEvents,
    XmlError,
)
from .version import (
    Interval,
    RangeSpec,
    UnresolvedSpec,
    VersionNumber,
    VersionSpec,
    compare_versions,
    parse_version,
    parse_version_spec,
    version_key,
)

log = logging.getLogger(__name__)

SCOPES = ("compile", "provided", "runtime", "test", "system", "import")
MAX_PARENT_CHAIN = 10


@dataclass(frozen=True, order=True)
class LibraryId:
    group: str
    artifact: str

    def __post_init__(self):
        if not self.group or not self.artifact:
            raise MissingCoordinates(f"library needs group and artifact, got {self.group!r}:{self.artifact!r}")

    def __str__(self) -> str:
        return f"{self.group}:{self.artifact}"

    @classmethod
    def parse(cls, text: str) -> "LibraryId":
        parts = text.strip().split(":")
        if len(parts) != 2:
            raise ValueError(f"expected G:A, got {text!r}")
        return cls(parts[0], parts[1])

    def matches(self, pattern: "LibraryId") -> bool:
        """True if this id matches an exclusion pattern (``*`` wildcards)."""
        return pattern.group in ("*", self.group) and pattern.artifact in ("*", self.artifact)


@dataclass(frozen=True)
class ReleaseId:
    library: LibraryId
    version: VersionNumber
    released_at: Optional[date] = field(default=None, compare=False)

    @property
    def gav(self) -> str:
        return f"{self.library}:{self.version.raw}"

    def __str__(self) -> str:
        return self.gav

    def sort_key(self):
        return (self.library, version_key(self.version))

    @classmethod
    def parse(cls, text: str, released_at: Optional[date] = None) -> "ReleaseId":
        parts = text.strip().split(":")
        if len(parts) != 3:
            raise ValueError(f"expected G:A:V, got {text!r}")
        return cls(LibraryId(parts[0], parts[1]), parse_version(parts[2]), released_at)


@dataclass(frozen=True)
class DependencyDecl:
    target: LibraryId
    spec: VersionSpec
    scope: str = "compile"
    optional: bool = False
    exclusions: frozenset = frozenset()

    def excludes(self, library: LibraryId) -> bool:
        return any(library.matches(p) for p in self.exclusions)

    def with_spec(self, spec: VersionSpec) -> "DependencyDecl":
        return DependencyDecl(self.target, spec, self.scope, self.optional, self.exclusions)


@dataclass(frozen=True)
class Diagnostic:
    level: str
    code: str
    message: str

    def as_dict(self) -> dict:
        return {"level": self.level, "code": self.code, "message": self.message}


@dataclass
class PomDocument:
    release: ReleaseId
    parent: Optional[ReleaseId] = None
    properties: dict = field(default_factory=dict)
    dependencies: list = field(default_factory=list)
    dependency_management: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)


@dataclass(frozen=True)
class Vulnerability:
    id: str
    library: LibraryId
    affected: RangeSpec
    published_at: date
    severity: Optional[str] = None


def parse_date(value) -> Optional[date]:
    """Normalize an ISO date or timestamp to a UTC calendar date."""
    if value is None or value == "":
        return None
    if isinstance(value, datetime):
        dt = value
    elif isinstance(value, date):
        return value
    elif isinstance(value, str):
        text = value.strip()
        if text.endswith("Z") or text.endswith("z"):
            text = text[:-1] + "+00:00"
        try:
            dt = datetime.fromisoformat(text)
        except ValueError as exc:
            raise ValueError(f"bad date {value!r}") from exc
    else:
        raise ValueError(f"bad date {value!r}")
    if dt.tzinfo is not None:
        dt = dt.astimezone(timezone.utc)
    return dt.date()


# ---------------------------------------------------------------- index


def _read_text(path) -> str:
    with open(path, "r", encoding="utf-8") as fh:
        return fh.read()


def load_index(path, diagnostics: Optional[list] = None) -> list[ReleaseId]:
    """Read ``index.jsonl`` into releases sorted by (group, artifact, version)."""
    diagnostics = diagnostics if diagnostics is not None else []
    found: dict[tuple, ReleaseId] = {}
    undated = 0
    for lineno, line in enumerate(_read_text(path).splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"invalid JSON: {exc.msg}", lineno) from None
        if not isinstance(rec, dict):
            raise SchemaError("record must be an object", lineno)
        for key in ("group", "artifact", "version"):
            if not isinstance(rec.get(key), str) or not rec[key].strip():
                raise SchemaError(f"missing or empty field {key!r}", lineno)
        try:
            released = parse_date(rec.get("released_at"))
            lib = LibraryId(rec["group"].strip(), rec["artifact"].strip())
            version = parse_version(rec["version"])
        except (ValueError, RangerError) as exc:
            raise SchemaError(str(exc), lineno) from None
        if released is None:
            undated += 1
        key = (lib, version)
        rel = ReleaseId(lib, version, released)
        prev = found.get(key)
        if prev is not None:
            diagnostics.append(Diagnostic("warning", "DuplicateRelease", f"line {lineno}: duplicate {rel.gav}"))
            if prev.released_at is None or (released is not None and released < prev.released_at):
                found[key] = rel
            continue
        found[key] = rel
        if version.uses_lexical_fallback:
            diagnostics.append(
                Diagnostic("info", "LexicalFallback", f"{rel.gav} orders by an unknown qualifier")
            )
    if undated:
        diagnostics.append(Diagnostic("info", "UndatedReleases", f"{undated} releases lack a release date"))
    return sorted(found.values(), key=ReleaseId.sort_key)


# ---------------------------------------------------------------- POM


@dataclass
class _RawDep:
    group: Optional[str]
    artifact: Optional[str]
    version: Optional[str]
    scope: Optional[str]
    type: Optional[str]
    optional: Optional[str]
    exclusions: list


@dataclass
class RawPom:
    group: Optional[str]
    artifact: Optional[str]
    version: Optional[str]
    parent: Optional[tuple]
    properties: dict
    dependencies: list
    management: list


def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def _child(elem, name: str):
    for c in elem:
        if isinstance(c.tag, str) and _local(c.tag) == name:
            return c
    return None


def _children(elem, name: str):
    return [c for c in elem if isinstance(c.tag, str) and _local(c.tag) == name]


def _text(elem, name: str) -> Optional[str]:
    c = _child(elem, name) if elem is not None else None
    if c is None:
        return None
    return (c.text or "").strip()


def _raw_deps(container) -> list[_RawDep]:
    if container is None:
        return []
    deps = _child(container, "dependencies")
    if deps is None:
        return []
    out = []
    for d in _children(deps, "dependency"):
        excl = []
        ex = _child(d, "exclusions")
        if ex is not None:
            for e in _children(ex, "exclusion"):
                excl.append((_text(e, "groupId"), _text(e, "artifactId")))
        out.append(
            _RawDep(
                _text(d, "groupId"),
                _text(d, "artifactId"),
                _text(d, "version"),
                _text(d, "scope"),
                _text(d, "type"),
                _text(d, "optional"),
                excl,
            )
        )
    return out


def read_raw_pom(data: bytes) -> RawPom:
    """Extract the uninterpolated content of a POM document."""
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        raise XmlError(f"malformed POM: {exc}") from None
    parent = _child(root, "parent")
    parent_coords = None
    if parent is not None:
        parent_coords = (_text(parent, "groupId"), _text(parent, "artifactId"), _text(parent, "version"))
    props = {}
    pe = _child(root, "properties")
    if pe is not None:
        for p in pe:
            if isinstance(p.tag, str):
                props[_local(p.tag)] = (p.text or "").strip()
    return RawPom(
        _text(root, "groupId"),
        _text(root, "artifactId"),
        _text(root, "version"),
        parent_coords,
        props,
        _raw_deps(root),
        _raw_deps(_child(root, "dependencyManagement")),
    )


_PLACEHOLDER = re.compile(r"\$\{([^}]+)\}")


def interpolate(text: Optional[str], props: dict, max_rounds: int = 10) -> Optional[str]:
    """Substitute ``${name}`` placeholders; unknown names are left in place."""
    if text is None:
        return None
    for _ in range(max_rounds):
        new = _PLACEHOLDER.sub(lambda m: props.get(m.group(1), m.group(0)), text)
        if new == text:
            break
        text = new
    return text


ParentLookup = Callable[[str, str, str], Optional[RawPom]]


def _context(raw: RawPom, release: Optional[ReleaseId], chain: list[RawPom]) -> dict:
    """Property map for interpolation: ancestors first, child overrides."""
    props: dict = {}
    for anc in reversed(chain):
        props.update(anc.properties)
    props.update(raw.properties)
    pg, pa, pv = raw.parent or (None, None, None)
    group = raw.group or pg
    artifact = raw.artifact
    version = raw.version or pv
    if release is not None:
        group, artifact, version = release.library.group, release.library.artifact, release.version.raw
    builtins = {
        "project.groupId": group,
        "project.artifactId": artifact,
        "project.version": version,
        "project.parent.groupId": pg,
        "project.parent.artifactId": pa,
        "project.parent.version": pv,
    }
    for key, value in builtins.items():
        if value is not None:
            props[key] = value
            props["pom." + key[len("project.") :]] = value
    return props


def _exclusions(raw: _RawDep, props: dict) -> frozenset:
    out = set()
    for g, a in raw.exclusions:
        g = interpolate(g, props) or "*"
        a = interpolate(a, props) or "*"
        out.add(LibraryId(g, a))
    return frozenset(out)


def _make_spec(text: Optional[str], where: str, diags: list) -> VersionSpec:
    if text is None or text == "":
        diags.append(Diagnostic("warning", "MissingVersion", f"{where}: no version declared or managed"))
        return UnresolvedSpec("")
    if "${" in text:
        diags.append(Diagnostic("warning", "UnresolvedProperty", f"{where}: uninterpolated version {text!r}"))
        return UnresolvedSpec(text)
    try:
        return parse_version_spec(text)
    except (MalformedRange, ValueError) as exc:
        diags.append(Diagnostic("warning", "MalformedVersion", f"{where}: {exc}"))
        return UnresolvedSpec(text)


def _ancestors(raw: RawPom, lookup: Optional[ParentLookup], where: str, diags: list) -> list[RawPom]:
    chain: list[RawPom] = []
    cur = raw
    seen = set()
    while cur.parent is not None and len(chain) < MAX_PARENT_CHAIN:
        g, a, v = cur.parent
        key = (g, a, v)
        if key in seen:
            diags.append(Diagnostic("warning", "ParentCycle", f"{where}: parent cycle at {g}:{a}:{v}"))
            break
        seen.add(key)
        parent = lookup(g, a, v) if (lookup and g and a and v) else None
        if parent is None:
            diags.append(Diagnostic("warning", "MissingParent", f"{where}: parent {g}:{a}:{v} not in corpus"))
            break
        chain.append(parent)
        cur = parent
    else:
        if cur.parent is not None:
            diags.append(Diagnostic("warning", "ParentChainTooLong", f"{where}: stopped after {MAX_PARENT_CHAIN} ancestors"))
    return chain


def _managed_entries(raw: RawPom, release: Optional[ReleaseId], lookup, where, diags, expand_imports: bool):
    """Interpolated dependencyManagement of ``raw``, parents merged (child wins)."""
    chain = _ancestors(raw, lookup, where, diags)
    props = _context(raw, release, chain)
    entries: dict[LibraryId, DependencyDecl] = {}
    order: list[LibraryId] = []
    imports: list[tuple] = []
    # ancestors first so the child can override
    levels = list(reversed(chain)) + [raw]
    for level in levels:
        for d in level.management:
            g = interpolate(d.group, props)
            a = interpolate(d.artifact, props)
            if not g or not a:
                raise MissingCoordinates(f"{where}: managed dependency without groupId/artifactId")
            lib = LibraryId(g, a)
            scope = (interpolate(d.scope, props) or "compile").strip()
            version = interpolate(d.version, props)
            if scope == "import":
                imports.append((lib, version))
                continue
            decl = DependencyDecl(
                lib,
                _make_spec(version, f"{where} managed {lib}", diags),
                scope if d.scope else "",
                (interpolate(d.optional, props) or "").lower() == "true",
                _exclusions(d, props),
            )
            if lib not in entries:
                order.append(lib)
            entries[lib] = decl
    for lib, version in imports:
        if not expand_imports:
            continue
        bom = lookup(lib.group, lib.artifact, version) if (lookup and version and "${" not in version) else None
        if bom is None:
            diags.append(Diagnostic("warning", "MissingImport", f"{where}: imported BOM {lib}:{version} not in corpus"))
            continue
        bom_entries, _ = _managed_entries(bom, None, lookup, f"{lib}:{version}", [], expand_imports=False)
        for decl in bom_entries:
            if decl.target not in entries:
                entries[decl.target] = decl
                order.append(decl.target)
    return [entries[lib] for lib in order], props


def parse_pom(data: bytes, release: ReleaseId, lookup: Optional[ParentLookup] = None) -> PomDocument:
    """Parse POM bytes for ``release``.

    ``lookup(group, artifact, version)`` returns the raw content of another
    corpus POM; it is used for parent merging and BOM imports.
    """
    raw = read_raw_pom(data)
    diags: list[Diagnostic] = []
    where = release.gav
    managed, props = _managed_entries(raw, release, lookup, where, diags, expand_imports=True)
    by_target = {d.target: d for d in managed}

    deps = []
    for d in raw.dependencies:
        g = interpolate(d.group, props)
        a = interpolate(d.artifact, props)
        if not g or not a:
            raise MissingCoordinates(f"{where}: dependency without groupId/artifactId")
        lib = LibraryId(g, a)
        mgmt = by_target.get(lib)
        version = interpolate(d.version, props)
        if not version and mgmt is not None and not isinstance(mgmt.spec, UnresolvedSpec):
            spec = mgmt.spec
        else:
            spec = _make_spec(version, f"{where} -> {lib}", diags)
        scope = interpolate(d.scope, props)
        if not scope:
            scope = (mgmt.scope if mgmt is not None and mgmt.scope else "") or "compile"
        scope = scope.strip().lower()
        if scope not in SCOPES:
            diags.append(Diagnostic("warning", "UnknownScope", f"{where} -> {lib}: scope {scope!r} read as compile"))
            scope = "compile"
        optional = (interpolate(d.optional, props) or "").strip().lower() == "true"
        excl = _exclusions(d, props)
        if mgmt is not None and not d.exclusions:
            excl = mgmt.exclusions
        deps.append(DependencyDecl(lib, spec, scope, optional, excl))

    parent_id = None
    if raw.parent is not None and all(raw.parent):
        try:
            parent_id = ReleaseId(LibraryId(raw.parent[0], raw.parent[1]), parse_version(raw.parent[2]))
        except (RangerError, ValueError):
            parent_id = None
    dm = [DependencyDecl(m.target, m.spec, m.scope or "compile", m.optional, m.exclusions) for m in managed]
    own_props = {k: v for k, v in props.items()}
    return PomDocument(release, parent_id, own_props, deps, dm, diags)


def pom_filename(release: ReleaseId) -> str:
    return f"{release.library.group}__{release.library.artifact}__{release.version.raw}.xml"


def _split_pom_filename(name: str):
    if not name.endswith(".xml"):
        return None
    parts = name[:-4].split("__")
    if len(parts) != 3 or not all(parts):
        return None
    return parts


def load_poms(directory, releases: Iterable[ReleaseId], diagnostics: Optional[list] = None) -> dict:
    """Parse every ``<group>__<artifact>__<version>.xml`` under ``directory``.

    Returns a map ReleaseId -> PomDocument. Files without an index entry and
    POMs that fail to parse are reported in ``diagnostics`` and skipped.
    """
    diagnostics = diagnostics if diagnostics is not None else []
    by_key = {(r.library, r.version): r for r in releases}
    raws: dict[tuple, tuple] = {}
    for name in sorted(os.listdir(directory)):
        parts = _split_pom_filename(name)
        if parts is None:
            continue
        try:
            key = (LibraryId(parts[0], parts[1]), parse_version(parts[2]))
        except (RangerError, ValueError):
            diagnostics.append(Diagnostic("warning", "BadPomName", f"cannot read coordinates from {name}"))
            continue
        data = Path(directory, name).read_bytes()
        try:
            raws[key] = (data, read_raw_pom(data))
        except XmlError as exc:
            diagnostics.append(Diagnostic("error", exc.code, f"{name}: {exc}"))

    def lookup(g, a, v):
        try:
            hit = raws.get((LibraryId(g, a), parse_version(v)))
        except (RangerError, ValueError):
            return None
        return hit[1] if hit else None

    docs = {}
    for key in sorted(raws, key=lambda k: (k[0], version_key(k[1]))):
        release = by_key.get(key)
        if release is None:
            diagnostics.append(Diagnostic("warning", "UnindexedPom", f"{key[0]}:{key[1].raw} has a POM but no index entry"))
            continue
        try:
            doc = parse_pom(raws[key][0], release, lookup)
        except (MissingCoordinates, XmlError) as exc:
            diagnostics.append(Diagnostic("error", exc.code, f"{release.gav}: {exc}"))
            continue
        diagnostics.extend(doc.diagnostics)
        docs[release] = doc
    return docs


# ---------------------------------------------------------------- vulnerabilities


def _event_interval(ev: dict, where: str) -> Interval:
    if not isinstance(ev, dict):
        raise SchemaError(f"{where}: range entry must be an object")
    intro = ev.get("introduced")
    fixed = ev.get("fixed")
    last = ev.get("last_affected")
    if fixed is not None and last is not None:
        raise SchemaError(f"{where}: range has both fixed and last_affected")
    try:
        lower = None if intro in (None, "", "0") else parse_version(str(intro))
        upper = None
        if fixed is not None:
            upper = parse_version(str(fixed))
        elif last is not None:
            upper = parse_version(str(last))
    except RangerError as exc:
        raise SchemaError(f"{where}: {exc}") from None
    if lower is not None and upper is not None:
        c = compare_versions(upper, lower)
        if c < 0 or (c == 0 and fixed is not None):
            raise UnorderedEvents(f"{where}: {'fixed' if fixed is not None else 'last_affected'} {upper} precedes introduced {lower}")
    return Interval(lower, lower is not None, upper, upper is not None and fixed is None)


def _lower_before(a: Interval, b: Interval) -> bool:
    if a.lower is None:
        return b.lower is not None
    if b.lower is None:
        return False
    c = compare_versions(a.lower, b.lower)
    return c < 0 or (c == 0 and a.lower_closed and not b.lower_closed)


def _upper_max(a: Interval, b: Interval) -> tuple:
    if a.upper is None or b.upper is None:
        return None, False
    c = compare_versions(a.upper, b.upper)
    if c > 0:
        return a.upper, a.upper_closed
    if c < 0:
        return b.upper, b.upper_closed
    return a.upper, a.upper_closed or b.upper_closed


def _touches(prev: Interval, cur: Interval) -> bool:
    if prev.upper is None or cur.lower is None:
        return True
    c = compare_versions(prev.upper, cur.lower)
    return c > 0 or (c == 0 and (prev.upper_closed or cur.lower_closed))


def merge_intervals(intervals: Iterable[Interval]) -> tuple[Interval, ...]:
    """Coalesce overlapping or adjoining intervals into a disjoint union."""
    def cmp(a, b):
        if _lower_before(a, b):
            return -1
        if _lower_before(b, a):
            return 1
        return 0

    ordered = sorted(intervals, key=cmp_to_key(cmp))
    out: list[Interval] = []
    for iv in ordered:
        if out and _touches(out[-1], iv):
            prev = out[-1]
            up, up_closed = _upper_max(prev, iv)
            out[-1] = Interval(prev.lower, prev.lower_closed, up, up_closed)
        else:
            out.append(iv)
    return tuple(out)


def load_vulnerabilities(path) -> list[Vulnerability]:
    """Read the merged ``vulns.json`` array into one record per (id, library)."""
    try:
        data = json.loads(_read_text(path))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc.msg}", exc.lineno) from None
    if not isinstance(data, list):
        raise SchemaError("vulnerability file must hold a JSON array")
    merged: dict[tuple, dict] = {}
    for i, rec in enumerate(data):
        where = f"record {i}"
        if not isinstance(rec, dict):
            raise SchemaError(f"{where}: must be an object")
        for key in ("id", "group", "artifact"):
            if not isinstance(rec.get(key), str) or not rec[key]:
                raise SchemaError(f"{where}: missing field {key!r}")
        where = f"{rec['id']} ({rec['group']}:{rec['artifact']})"
        try:
            published = parse_date(rec.get("published_at"))
        except ValueError as exc:
            raise SchemaError(f"{where}: {exc}") from None
        if published is None:
            raise SchemaError(f"{where}: missing published_at")
        ranges = rec.get("ranges")
        if not isinstance(ranges, list) or not ranges:
            raise SchemaError(f"{where}: affected ranges are empty")
        intervals = [_event_interval(ev, where) for ev in ranges]
        key = (rec["id"], LibraryId(rec["group"], rec["artifact"]))
        slot = merged.setdefault(key, {"intervals": [], "published": published, "severity": rec.get("severity")})
        slot["intervals"].extend(intervals)
        slot["published"] = min(slot["published"], published)
        if slot["severity"] is None:
            slot["severity"] = rec.get("severity")
    out = []
    for (vid, lib), slot in sorted(merged.items(), key=lambda kv: (kv[0][0], kv[0][1])):
        out.append(Vulnerability(vid, lib, RangeSpec(merge_intervals(slot["intervals"])), slot["published"], slot["severity"]))
    return out


def match_affected_versions(vuln: Vulnerability, releases: Iterable[ReleaseId]) -> set[ReleaseId]:
    return {r for r in releases if r.library == vuln.library and vuln.affected.contains(r.version)}
