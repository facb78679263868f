"""Immutable dependency/vulnerability graph with copy-on-write epochs.

Releases get dense integer handles in (group, artifact, version) order.
Per-release dependency lists live in fixed-size blocks; an update copies
only the block holding the changed release, so successive epochs share
everything else.

Snapshot container layout (all integers big-endian)::

    b"RNGRSNAP"                 magic, 8 bytes
    u16                         format version
    u32                         header length N
    N bytes                     JSON header: {"format", "epoch", "sections":
                                [{"name", "length", "sha256"}, ...]}
    per section: u64 length + zlib-compressed JSON payload

Coordinates are interned into a ``strings`` section and referenced by index.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
import zlib
from collections import defaultdict
from datetime import date
from typing import Iterable, Mapping, Optional, Sequence

from .corpus import (
    DependencyDecl,
    Diagnostic,
    LibraryId,
    PomDocument,
    ReleaseId,
    Vulnerability,
    match_affected_versions,
)
from .errors import NoSuchEdge, NoSuchRelease, SnapshotCorrupt, UnknownVulnerability, VersionMismatch
from .version import (
    RangeSpec,
    SoftSpec,
    UnresolvedSpec,
    VersionNumber,
    VersionSpec,
    parse_version,
    parse_version_spec,
)

BLOCK_SIZE = 1024
MAGIC = b"RNGRSNAP"
FORMAT_VERSION = 1
_SECTIONS = ("strings", "releases", "edges", "management", "vulnerabilities", "diagnostics")


class DependencyGraph:
    """One immutable epoch of the ecosystem graph."""

    def __init__(
        self,
        releases: Sequence[ReleaseId],
        blocks: tuple,
        management: tuple,
        vulnerabilities: Sequence[Vulnerability],
        epoch: int = 0,
        diagnostics: Sequence[Diagnostic] = (),
        _shared: Optional[dict] = None,
    ):
        self.releases: tuple[ReleaseId, ...] = tuple(releases)
        self._blocks = blocks
        self.management = management
        self.vulnerabilities: tuple[Vulnerability, ...] = tuple(vulnerabilities)
        self.epoch = epoch
        self.diagnostics: tuple[Diagnostic, ...] = tuple(diagnostics)
        self.resolution_cache: dict = {}
        if _shared is None:
            _shared = self._build_indices()
        self._shared = _shared

    # indices that never change across epochs (targets and releases are fixed)
    def _build_indices(self) -> dict:
        handle = {(r.library, r.version): i for i, r in enumerate(self.releases)}
        by_lib: dict[LibraryId, list[int]] = defaultdict(list)
        for i, r in enumerate(self.releases):
            by_lib[r.library].append(i)
        reverse: dict[LibraryId, set[int]] = defaultdict(set)
        for h in range(len(self.releases)):
            for d in self.edges(h):
                reverse[d.target].add(h)
        dm_index: dict[LibraryId, set[int]] = defaultdict(set)
        for h, entries in enumerate(self.management):
            for d in entries:
                dm_index[d.target].add(h)
        vuln_index: dict[LibraryId, list] = defaultdict(list)
        vulns_of: dict[int, list] = defaultdict(list)
        for v in self.vulnerabilities:
            hs = frozenset(
                handle[(r.library, r.version)]
                for r in match_affected_versions(v, (self.releases[i] for i in by_lib.get(v.library, ())))
            )
            vuln_index[v.library].append((v, hs))
            for h in hs:
                vulns_of[h].append(v)
        return {
            "handle": handle,
            "by_lib": {k: tuple(v) for k, v in by_lib.items()},
            "reverse": {k: frozenset(v) for k, v in reverse.items()},
            "dm_index": {k: frozenset(v) for k, v in dm_index.items()},
            "vuln_index": {k: tuple(v) for k, v in vuln_index.items()},
            "vulns_of": {k: tuple(v) for k, v in vulns_of.items()},
            "libraries": tuple(sorted(by_lib)),
        }

    # ------------------------------------------------------------ queries

    @property
    def libraries(self) -> tuple[LibraryId, ...]:
        return self._shared["libraries"]

    @property
    def reverse_index(self) -> Mapping[LibraryId, frozenset]:
        return self._shared["reverse"]

    @property
    def vuln_index(self) -> Mapping[LibraryId, tuple]:
        return self._shared["vuln_index"]

    def __len__(self) -> int:
        return len(self.releases)

    def edges(self, handle: int) -> tuple[DependencyDecl, ...]:
        return self._blocks[handle // BLOCK_SIZE][handle % BLOCK_SIZE]

    def managed(self, handle: int) -> tuple[DependencyDecl, ...]:
        return self.management[handle]

    def release(self, handle: int) -> ReleaseId:
        return self.releases[handle]

    def find(self, library: LibraryId, version: VersionNumber) -> Optional[int]:
        return self._shared["handle"].get((library, version))

    def handle_of(self, release: ReleaseId) -> int:
        h = self._shared["handle"].get((release.library, release.version))
        if h is None:
            raise NoSuchRelease(f"{release.gav} is not in the graph")
        return h

    def versions_of(self, library: LibraryId) -> tuple[int, ...]:
        """Handles of ``library``'s releases in ascending version order."""
        return self._shared["by_lib"].get(library, ())

    def dependents_of(self, library: LibraryId) -> frozenset:
        return self._shared["reverse"].get(library, frozenset())

    def managers_of(self, library: LibraryId) -> frozenset:
        """Handles whose dependencyManagement mentions ``library``."""
        return self._shared["dm_index"].get(library, frozenset())

    def vulns_of(self, handle: int) -> tuple[Vulnerability, ...]:
        return self._shared["vulns_of"].get(handle, ())

    def affected_handles(self, vuln: Vulnerability) -> frozenset:
        for v, hs in self.vuln_index.get(vuln.library, ()):
            if v == vuln:
                return hs
        return frozenset(
            h for h in self.versions_of(vuln.library) if vuln.affected.contains(self.releases[h].version)
        )

    def find_vulnerability(self, vuln_id: str, library: Optional[LibraryId] = None) -> Vulnerability:
        for v in self.vulnerabilities:
            if v.id == vuln_id and (library is None or v.library == library):
                return v
        raise UnknownVulnerability(f"unknown vulnerability {vuln_id}")

    def stats(self) -> dict:
        return {
            "libraries": len(self.libraries),
            "releases": len(self.releases),
            "edges": sum(len(self.edges(h)) for h in range(len(self.releases))),
            "vulns": len(self.vulnerabilities),
            "epoch": self.epoch,
        }

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DependencyGraph):
            return NotImplemented
        return (
            self.epoch == other.epoch
            and self.releases == other.releases
            and [r.released_at for r in self.releases] == [r.released_at for r in other.releases]
            and all(self.edges(h) == other.edges(h) for h in range(len(self.releases)))
            and self.management == other.management
            and self.vulnerabilities == other.vulnerabilities
            and self.diagnostics == other.diagnostics
        )

    __hash__ = None  # type: ignore[assignment]


def _blocks_from(per_release: Sequence[tuple]) -> tuple:
    return tuple(
        tuple(per_release[i : i + BLOCK_SIZE]) for i in range(0, len(per_release), BLOCK_SIZE)
    )


def build_graph(
    releases: Iterable[ReleaseId],
    poms: Mapping[ReleaseId, PomDocument],
    vulns: Iterable[Vulnerability],
    diagnostics: Iterable[Diagnostic] = (),
) -> DependencyGraph:
    ordered = sorted(releases, key=ReleaseId.sort_key)
    edges = []
    management = []
    for r in ordered:
        doc = poms.get(r)
        edges.append(tuple(doc.dependencies) if doc else ())
        management.append(tuple(doc.dependency_management) if doc else ())
    vulns = sorted(vulns, key=lambda v: (v.id, v.library))
    return DependencyGraph(ordered, _blocks_from(edges), tuple(management), vulns, 0, tuple(diagnostics))


def apply_range_update(
    graph: DependencyGraph, release: ReleaseId, target: LibraryId, new_spec: VersionSpec
) -> DependencyGraph:
    """New epoch where ``release``'s first declaration on ``target`` uses ``new_spec``."""
    h = graph.handle_of(release)
    decls = graph.edges(h)
    for i, d in enumerate(decls):
        if d.target == target:
            break
    else:
        raise NoSuchEdge(f"{release.gav} does not declare {target}")
    new_decls = decls[:i] + (d.with_spec(new_spec),) + decls[i + 1 :]
    b, off = divmod(h, BLOCK_SIZE)
    block = graph._blocks[b]
    new_block = block[:off] + (new_decls,) + block[off + 1 :]
    blocks = graph._blocks[:b] + (new_block,) + graph._blocks[b + 1 :]
    return DependencyGraph(
        graph.releases,
        blocks,
        graph.management,
        graph.vulnerabilities,
        graph.epoch + 1,
        graph.diagnostics,
        _shared=graph._shared,
    )


# ---------------------------------------------------------------- snapshots


class _Interner:
    def __init__(self):
        self.table: list[str] = []
        self.index: dict[str, int] = {}

    def __call__(self, s: str) -> int:
        i = self.index.get(s)
        if i is None:
            i = self.index[s] = len(self.table)
            self.table.append(s)
        return i


def _spec_kind(spec: VersionSpec) -> str:
    if isinstance(spec, SoftSpec):
        return "s"
    if isinstance(spec, RangeSpec):
        return "r"
    return "u"


def _encode_decl(d: DependencyDecl, s: _Interner) -> list:
    excl = sorted([s(e.group), s(e.artifact)] for e in d.exclusions)
    return [s(d.target.group), s(d.target.artifact), _spec_kind(d.spec), str(d.spec), d.scope, int(d.optional), excl]


def _decode_spec(kind: str, text: str) -> VersionSpec:
    if kind == "u":
        return UnresolvedSpec(text)
    spec = parse_version_spec(text)
    if (kind == "s") != isinstance(spec, SoftSpec):
        raise SnapshotCorrupt(f"spec kind mismatch for {text!r}")
    return spec


def _decode_decl(row: list, t: list[str]) -> DependencyDecl:
    g, a, kind, text, scope, optional, excl = row
    return DependencyDecl(
        LibraryId(t[g], t[a]),
        _decode_spec(kind, text),
        scope,
        bool(optional),
        frozenset(LibraryId(t[x], t[y]) for x, y in excl),
    )


def _iso(d: Optional[date]) -> Optional[str]:
    return d.isoformat() if d else None


def _encode(graph: DependencyGraph) -> dict:
    s = _Interner()
    releases = [[s(r.library.group), s(r.library.artifact), r.version.raw, _iso(r.released_at)] for r in graph.releases]
    edges = [[_encode_decl(d, s) for d in graph.edges(h)] for h in range(len(graph.releases))]
    management = [[_encode_decl(d, s) for d in entries] for entries in graph.management]
    vulns = [
        [v.id, s(v.library.group), s(v.library.artifact), str(v.affected), v.published_at.isoformat(), v.severity]
        for v in graph.vulnerabilities
    ]
    diags = [[d.level, d.code, d.message] for d in graph.diagnostics]
    return {
        "strings": s.table,
        "releases": releases,
        "edges": edges,
        "management": management,
        "vulnerabilities": vulns,
        "diagnostics": diags,
    }


def _decode(sections: dict, epoch: int) -> DependencyGraph:
    t = sections["strings"]
    releases = [
        ReleaseId(LibraryId(t[g], t[a]), parse_version(v), date.fromisoformat(d) if d else None)
        for g, a, v, d in sections["releases"]
    ]
    edges = [tuple(_decode_decl(row, t) for row in rows) for rows in sections["edges"]]
    management = tuple(tuple(_decode_decl(row, t) for row in rows) for rows in sections["management"])
    vulns = []
    for vid, g, a, affected, published, severity in sections["vulnerabilities"]:
        spec = parse_version_spec(affected)
        if not isinstance(spec, RangeSpec):
            raise SnapshotCorrupt(f"vulnerability {vid} lacks a range")
        vulns.append(Vulnerability(vid, LibraryId(t[g], t[a]), spec, date.fromisoformat(published), severity))
    diags = [Diagnostic(*row) for row in sections["diagnostics"]]
    if len(edges) != len(releases) or len(management) != len(releases):
        raise SnapshotCorrupt("section sizes disagree")
    return DependencyGraph(releases, _blocks_from(edges), management, vulns, epoch, diags)


def save_snapshot(graph: DependencyGraph, path) -> None:
    payload = _encode(graph)
    blobs = []
    meta = []
    for name in _SECTIONS:
        raw = json.dumps(payload[name], separators=(",", ":"), ensure_ascii=False).encode("utf-8")
        blob = zlib.compress(raw, 6)
        blobs.append(blob)
        meta.append({"name": name, "length": len(blob), "sha256": hashlib.sha256(blob).hexdigest()})
    header = json.dumps(
        {"format": FORMAT_VERSION, "epoch": graph.epoch, "sections": meta}, sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    parts = [MAGIC, struct.pack(">HI", FORMAT_VERSION, len(header)), header]
    for blob in blobs:
        parts.append(struct.pack(">Q", len(blob)))
        parts.append(blob)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".snapshot-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(b"".join(parts))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_snapshot(path) -> DependencyGraph:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < len(MAGIC) + 6:
        raise SnapshotCorrupt(f"{path}: truncated snapshot")
    if data[: len(MAGIC)] != MAGIC:
        raise VersionMismatch(f"{path}: not a ranger snapshot")
    fmt, hlen = struct.unpack_from(">HI", data, len(MAGIC))
    if fmt != FORMAT_VERSION:
        raise VersionMismatch(f"{path}: snapshot format {fmt}, expected {FORMAT_VERSION}")
    pos = len(MAGIC) + 6
    if pos + hlen > len(data):
        raise SnapshotCorrupt(f"{path}: truncated header")
    try:
        header = json.loads(data[pos : pos + hlen])
    except ValueError:
        raise SnapshotCorrupt(f"{path}: unreadable header") from None
    pos += hlen
    sections = {}
    try:
        for meta in header["sections"]:
            if pos + 8 > len(data):
                raise SnapshotCorrupt(f"{path}: truncated section {meta['name']}")
            (length,) = struct.unpack_from(">Q", data, pos)
            pos += 8
            blob = data[pos : pos + length]
            if length != meta["length"] or len(blob) != length:
                raise SnapshotCorrupt(f"{path}: truncated section {meta['name']}")
            if hashlib.sha256(blob).hexdigest() != meta["sha256"]:
                raise SnapshotCorrupt(f"{path}: checksum mismatch in section {meta['name']}")
            sections[meta["name"]] = json.loads(zlib.decompress(blob))
            pos += length
        if pos != len(data):
            raise SnapshotCorrupt(f"{path}: trailing bytes after last section")
        missing = [n for n in _SECTIONS if n not in sections]
        if missing:
            raise SnapshotCorrupt(f"{path}: missing sections {missing}")
        return _decode(sections, int(header["epoch"]))
    except (KeyError, TypeError, ValueError, zlib.error) as exc:
        raise SnapshotCorrupt(f"{path}: malformed snapshot ({exc})") from None
