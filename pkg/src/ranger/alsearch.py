"""Backward search for releases affected by a vulnerability.

Two phases. Tracking walks reverse dependency edges breadth-first from the
vulnerable releases and collects candidates whose edge attributes could
carry the vulnerable version to them; it over-approximates. Validation
resolves each candidate forward and keeps it only if the vulnerable
library's resolved version is affected.
"""

from __future__ import annotations

from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import date
from typing import Optional, Union

from .corpus import LibraryId, ReleaseId, Vulnerability
from .graph import DependencyGraph
from .resolver import DEPLOYABLE, resolve_tree, select_version

__all__ = ["AffectedRecord", "track_candidates", "find_affected", "validate_dependent", "affected_node"]


@dataclass(frozen=True)
class AffectedRecord:
    release: ReleaseId
    vuln_id: str
    depth: int
    released_at: Optional[date]
    witness_path: tuple  # ReleaseIds from the dependent down to the vulnerable release
    validated: bool = True

    def as_dict(self) -> dict:
        return {
            "release": self.release.gav,
            "vuln_id": self.vuln_id,
            "depth": self.depth,
            "released_at": self.released_at.isoformat() if self.released_at else None,
            "witness_path": [r.gav for r in self.witness_path],
            "validated": self.validated,
        }


def _direct_prefilter(graph: DependencyGraph, handle: int, library: LibraryId, affected: frozenset) -> Optional[bool]:
    """Decide a candidate from its own declaration on the vulnerable library.

    A direct (non-import) declaration always places the library at depth 1,
    so it settles the question. Returns None when there is no such
    declaration.
    """
    for d in graph.edges(handle):
        if d.target == library and d.scope != "import":
            if d.scope not in DEPLOYABLE:
                return False
            return select_version(graph, library, d.spec) in affected
    return None


def track_candidates(graph: DependencyGraph, vuln: Vulnerability, max_depth: int = 10) -> dict:
    """Candidate handles mapped to the fewest hops at which tracking met them."""
    affected = graph.affected_handles(vuln)
    lib = vuln.library
    # managed overrides can redirect a non-matching edge onto h
    dm_hits: dict[int, bool] = {}

    def managed_to(h: int) -> bool:
        if h not in dm_hits:
            target = graph.releases[h].library
            dm_hits[h] = any(
                select_version(graph, target, m.spec) == h
                for mgr in graph.managers_of(target)
                for m in graph.managed(mgr)
                if m.target == target
            )
        return dm_hits[h]

    candidates: dict[int, int] = {}
    seen: set = set()
    queue: deque = deque()
    for h in sorted(affected):
        seen.add((h, True))
        queue.append((h, 0))
    while queue:
        h, hops = queue.popleft()
        if hops >= max_depth:
            continue
        target = graph.releases[h].library
        redirectable = None
        for p in sorted(graph.dependents_of(target)):
            for d in graph.edges(p):
                if d.target != target or d.scope not in DEPLOYABLE:
                    continue
                if target != lib and d.excludes(lib):
                    continue
                points = select_version(graph, target, d.spec) == h
                if not points:
                    # only a root's management could redirect this edge, and
                    # then the edge sits at depth >= 2
                    if redirectable is None:
                        redirectable = managed_to(h)
                    if not redirectable:
                        continue
                candidates.setdefault(p, hops + 1)
                if not d.optional and (p, True) not in seen:
                    seen.add((p, True))
                    queue.append((p, hops + 1))
    return candidates


def affected_node(graph: DependencyGraph, handle: int, vuln: Vulnerability, max_depth: int = 10):
    """The resolved tree and index of the deployable affected node, if any."""
    tree = resolve_tree(graph, handle, max_depth)
    idx = tree.index_of(vuln.library)
    if idx is None:
        return tree, None
    node = tree.nodes[idx]
    if node.handle is None or node.via_scope not in DEPLOYABLE:
        return tree, None
    if node.handle not in graph.affected_handles(vuln):
        return tree, None
    return tree, idx


def validate_dependent(
    graph: DependencyGraph, candidate: Union[ReleaseId, int], vuln: Vulnerability, max_depth: int = 10
) -> bool:
    h = candidate if isinstance(candidate, int) else graph.handle_of(candidate)
    return affected_node(graph, h, vuln, max_depth)[1] is not None


def _record(graph: DependencyGraph, handle: int, vuln: Vulnerability, max_depth: int) -> Optional[AffectedRecord]:
    tree, idx = affected_node(graph, handle, vuln, max_depth)
    if idx is None:
        return None
    path = (graph.releases[handle],) + tuple(graph.releases[tree.nodes[i].handle] for i in tree.path(idx))
    rel = graph.releases[handle]
    return AffectedRecord(rel, vuln.id, tree.nodes[idx].depth, rel.released_at, path, True)


def find_affected(
    graph: DependencyGraph,
    vuln: Vulnerability,
    max_depth: int = 10,
    workers: int = 1,
) -> list[AffectedRecord]:
    """Validated affected releases, sorted by (depth, library, version)."""
    key = ("affected", vuln, max_depth)
    cached = graph.resolution_cache.get(key)
    if cached is not None:
        return list(cached)
    affected = graph.affected_handles(vuln)
    candidates = []
    for h in sorted(track_candidates(graph, vuln, max_depth)):
        if h in affected or graph.releases[h].library == vuln.library:
            continue
        verdict = _direct_prefilter(graph, h, vuln.library, affected)
        if verdict is False:
            continue
        candidates.append(h)
    if workers > 1 and len(candidates) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda h: _record(graph, h, vuln, max_depth), candidates))
    else:
        results = [_record(graph, h, vuln, max_depth) for h in candidates]
    records = [r for r in results if r is not None]
    records.sort(key=lambda r: (r.depth, r.release.sort_key()))
    graph.resolution_cache[key] = tuple(records)
    return records
