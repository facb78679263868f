"""Forward Maven-style dependency resolution.

Breadth-first from the root release. Each library is resolved once: the
first declaration reached in BFS order (shallowest, then earliest in
document order) wins and later ones are recorded as mediated away.

Transitivity rules:

* direct dependencies of the root are taken in every scope except
  ``import``; ``provided``/``test``/``system`` ones become leaves;
* below depth 1 only non-optional ``compile``/``runtime`` declarations are
  followed;
* exclusions on an edge apply to the whole subtree below its target;
* the root's dependencyManagement overrides versions from depth 2 on (the
  root's own declarations keep their literal versions), and nobody else's
  management is consulted.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Optional, Union

from .corpus import DependencyDecl, LibraryId, ReleaseId
from .graph import DependencyGraph
from .version import RangeSpec, SoftSpec, VersionNumber, VersionSpec

DEPLOYABLE = frozenset({"compile", "runtime"})
TRANSITIVE = DEPLOYABLE


@dataclass(frozen=True)
class ResolvedNode:
    library: LibraryId
    version: Optional[VersionNumber]
    handle: Optional[int]  # None for targets missing from the corpus
    depth: int
    parent: int  # index into ResolvedTree.nodes, -1 for the root
    via_scope: str
    optional: bool
    spec: VersionSpec

    @property
    def dangling(self) -> bool:
        return self.handle is None

    def label(self) -> str:
        v = self.version.raw if self.version is not None else str(self.spec) or "?"
        return f"{self.library}:{v}"


@dataclass(frozen=True)
class Mediation:
    library: LibraryId
    winner: Optional[VersionNumber]
    loser: str  # spec text of the losing declaration
    depth: int  # depth at which the losing declaration was met
    reason: str  # nearer | earlier | cycle | range-over-soft


@dataclass
class ResolvedTree:
    root: ReleaseId
    root_handle: int
    nodes: list = field(default_factory=list)
    mediation_log: list = field(default_factory=list)
    max_depth: int = 10
    _by_lib: dict = field(default_factory=dict, repr=False)

    def node_for(self, library: LibraryId) -> Optional[ResolvedNode]:
        i = self._by_lib.get(library)
        return self.nodes[i] if i is not None else None

    def index_of(self, library: LibraryId) -> Optional[int]:
        return self._by_lib.get(library)

    def path(self, index: int) -> list[int]:
        """Node indices from the depth-1 ancestor down to ``index``."""
        out = []
        while index >= 0:
            out.append(index)
            index = self.nodes[index].parent
        return out[::-1]

    def as_dict(self) -> dict:
        return {
            "root": self.root.gav,
            "nodes": [
                {
                    "library": str(n.library),
                    "version": n.version.raw if n.version is not None else None,
                    "spec": str(n.spec),
                    "depth": n.depth,
                    "parent": n.parent,
                    "scope": n.via_scope,
                    "optional": n.optional,
                    "dangling": n.dangling,
                }
                for n in self.nodes
            ],
            "mediation": [
                {
                    "library": str(m.library),
                    "winner": m.winner.raw if m.winner is not None else None,
                    "loser": m.loser,
                    "depth": m.depth,
                    "reason": m.reason,
                }
                for m in self.mediation_log
            ],
        }


def select_version(graph: DependencyGraph, target: LibraryId, spec: VersionSpec) -> Optional[int]:
    """Corpus handle chosen for ``spec``: the pinned release or the highest range member."""
    if isinstance(spec, SoftSpec):
        return graph.find(target, spec.preferred)
    if isinstance(spec, RangeSpec):
        for h in reversed(graph.versions_of(target)):
            if spec.contains(graph.releases[h].version):
                return h
    return None


def _root_handle(graph: DependencyGraph, root: Union[ReleaseId, int]) -> int:
    if isinstance(root, int):
        graph.releases[root]
        return root
    return graph.handle_of(root)


def _managed_spec(management: dict, decl: DependencyDecl) -> VersionSpec:
    m = management.get(decl.target)
    if m is None or not isinstance(m.spec, (SoftSpec, RangeSpec)):
        return decl.spec
    return m.spec


def resolve_tree(
    graph: DependencyGraph,
    root: Union[ReleaseId, int],
    max_depth: int = 10,
    use_management: bool = True,
) -> ResolvedTree:
    h0 = _root_handle(graph, root)
    key = (h0, max_depth, use_management)
    cached = graph.resolution_cache.get(key)
    if cached is not None:
        return cached

    root_rel = graph.releases[h0]
    tree = ResolvedTree(root_rel, h0, max_depth=max_depth)
    nodes = tree.nodes
    by_lib = tree._by_lib
    log = tree.mediation_log
    management = {}
    if use_management:
        for m in graph.managed(h0):
            management.setdefault(m.target, m)

    # queue entries: (node index, release handle, depth, inherited exclusions)
    queue: deque = deque([(-1, h0, 0, frozenset())])
    while queue:
        parent_idx, handle, depth, excluded = queue.popleft()
        child_depth = depth + 1
        if child_depth > max_depth:
            continue
        parent_scope = nodes[parent_idx].via_scope if parent_idx >= 0 else None
        for decl in graph.edges(handle):
            if decl.scope == "import":
                continue
            if depth >= 1 and (decl.scope not in TRANSITIVE or decl.optional):
                continue
            if any(decl.target.matches(p) for p in excluded):
                continue
            spec = _managed_spec(management, decl) if child_depth >= 2 else decl.spec
            if decl.target == root_rel.library or decl.target in by_lib:
                _log_conflict(tree, decl.target, spec, child_depth, parent_idx, log)
                continue
            if depth == 0:
                scope = decl.scope
            else:
                scope = "runtime" if "runtime" in (parent_scope, decl.scope) else "compile"
            h = select_version(graph, decl.target, spec)
            if h is not None:
                version = graph.releases[h].version
            elif isinstance(spec, SoftSpec):
                version = spec.preferred
            else:
                version = None
            idx = len(nodes)
            nodes.append(ResolvedNode(decl.target, version, h, child_depth, parent_idx, scope, decl.optional, spec))
            by_lib[decl.target] = idx
            if h is not None and scope in TRANSITIVE:
                queue.append((idx, h, child_depth, excluded | decl.exclusions))

    graph.resolution_cache[key] = tree
    return tree


def _on_path(tree: ResolvedTree, library: LibraryId, parent_idx: int) -> bool:
    if library == tree.root.library:
        return True
    i = parent_idx
    while i >= 0:
        if tree.nodes[i].library == library:
            return True
        i = tree.nodes[i].parent
    return False


def _log_conflict(tree, library, spec, depth, parent_idx, log) -> None:
    if _on_path(tree, library, parent_idx):
        reason = "cycle"
        winner = tree.root.version if library == tree.root.library else tree.node_for(library).version
    else:
        won = tree.node_for(library)
        winner = won.version
        if isinstance(won.spec, RangeSpec) and isinstance(spec, SoftSpec):
            reason = "range-over-soft"
        else:
            reason = "nearer" if won.depth < depth else "earlier"
    log.append(Mediation(library, winner, str(spec), depth, reason))


def count_vulnerabilities(
    graph: DependencyGraph,
    tree: ResolvedTree,
    scopes: Iterable[str] = DEPLOYABLE,
) -> dict:
    """Per-node vulnerability counts over the resolved tree.

    Only nodes whose effective scope is in ``scopes`` count; dangling nodes
    count zero since nothing is known about them.
    """
    scopes = frozenset(scopes)
    per_node = {}
    total = 0
    for i, n in enumerate(tree.nodes):
        if n.handle is None or n.via_scope not in scopes:
            continue
        c = len(graph.vulns_of(n.handle))
        if c:
            per_node[i] = c
            total += c
    return {"per_node": per_node, "total": total}


def vulnerability_total(
    graph: DependencyGraph,
    release: Union[ReleaseId, int],
    max_depth: int = 10,
    scopes: Iterable[str] = DEPLOYABLE,
) -> int:
    """Vulnerabilities of a release itself plus everything it resolves to."""
    h = _root_handle(graph, release)
    tree = resolve_tree(graph, h, max_depth)
    return len(graph.vulns_of(h)) + count_vulnerabilities(graph, tree, scopes)["total"]


def resolved_version_of(
    graph: DependencyGraph,
    root: Union[ReleaseId, int],
    target: LibraryId,
    max_depth: int = 10,
) -> Optional[VersionNumber]:
    node = resolve_tree(graph, root, max_depth).node_for(target)
    return node.version if node is not None else None
