"""Restoring a compatible, security-dominating version range for one dependency.

Given a dependent release pinning ``target`` at ``v_s``:

1. keep the candidates whose transitive vulnerability total does not exceed
   that of ``v_s`` (``v_s`` itself always stays);
2. walk upward and downward from ``v_s`` in version order, admitting
   candidates with no reachable incompatible API and stopping each walk at
   the first incompatible one;
3. keep only the admitted versions with the smallest vulnerability total;
4. drop versions rejected by the optional validation hook;
5. render the survivors as a Maven range.
"""

from __future__ import annotations

import json
import logging
import shlex
import subprocess
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional, Protocol, Sequence

from .corpus import Diagnostic, LibraryId, ReleaseId
from .errors import MissingSurface, SchemaError, SpawnError
from .graph import DependencyGraph
from .resolver import resolve_tree, vulnerability_total
from .version import SoftSpec, VersionNumber, parse_version, synthesize_range, version_key

log = logging.getLogger(__name__)

RESTORED = "Restored"
NO_COMPATIBLE_PATCH = "NoCompatiblePatch"
NO_SECURE_VERSION = "NoSecureVersion"
INTERNAL_ERROR = "InternalError"


@dataclass(frozen=True)
class ApiDescriptor:
    signature_hash: str
    behavior_tag: str


@dataclass(frozen=True)
class ApiSurface:
    release: ReleaseId
    entries: Mapping[str, ApiDescriptor]


@dataclass(frozen=True, order=True)
class IncompatibleApi:
    api_id: str
    kind: str  # source_binary | behavioral


@dataclass(frozen=True)
class CompatReport:
    base: ReleaseId
    candidate: ReleaseId
    incompatible: frozenset

    @property
    def api_ids(self) -> set[str]:
        return {i.api_id for i in self.incompatible}


@dataclass(frozen=True)
class UsageManifest:
    project: str
    dependency: LibraryId
    used_apis: frozenset


def compatibility_check(surface_base: ApiSurface, surface_cand: ApiSurface) -> CompatReport:
    """APIs of the base surface that the candidate removes or changes."""
    bad = set()
    for api_id, desc in surface_base.entries.items():
        other = surface_cand.entries.get(api_id)
        if other is None or other.signature_hash != desc.signature_hash:
            bad.add(IncompatibleApi(api_id, "source_binary"))
        elif other.behavior_tag != desc.behavior_tag:
            bad.add(IncompatibleApi(api_id, "behavioral"))
    return CompatReport(surface_base.release, surface_cand.release, frozenset(bad))


def reachable_incompatibilities(report: CompatReport, usage: Optional[UsageManifest]) -> set[str]:
    """Incompatible APIs the project can reach; no manifest means all of them."""
    ids = report.api_ids
    if usage is None or not usage.used_apis:
        return ids
    return ids & set(usage.used_apis)


# ---------------------------------------------------------------- surface providers


class SurfaceProvider(Protocol):
    def get(self, release: ReleaseId) -> Optional[ApiSurface]: ...


def surface_from_json(data: dict) -> ApiSurface:
    try:
        rel = ReleaseId(LibraryId(data["group"], data["artifact"]), parse_version(str(data["version"])))
        entries = {}
        for api in data.get("apis", []):
            api_id = api["id"]
            if api_id in entries:
                raise SchemaError(f"duplicate api id {api_id!r} in {rel.gav}")
            entries[api_id] = ApiDescriptor(str(api.get("signature_hash", "")), str(api.get("behavior_tag", "")))
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"bad surface record: {exc}") from None
    return ApiSurface(rel, entries)


class DirectorySurfaces:
    """Surfaces read from ``<dir>/<group>__<artifact>__<version>.json``."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self._cache: dict = {}

    def get(self, release: ReleaseId) -> Optional[ApiSurface]:
        key = (release.library, release.version)
        if key not in self._cache:
            name = f"{release.library.group}__{release.library.artifact}__{release.version.raw}.json"
            path = self.directory / name
            if path.exists():
                with open(path, encoding="utf-8") as fh:
                    surf = surface_from_json(json.load(fh))
                self._cache[key] = ApiSurface(release, surf.entries)
            else:
                self._cache[key] = None
        return self._cache[key]


class MappingSurfaces:
    """Surfaces from an in-memory map keyed by (LibraryId, VersionNumber)."""

    def __init__(self, surfaces: Mapping):
        self._map = {(k.library, k.version) if isinstance(k, ReleaseId) else k: v for k, v in surfaces.items()}

    def get(self, release: ReleaseId) -> Optional[ApiSurface]:
        return self._map.get((release.library, release.version))


class AssumeCompatible:
    """Every release exposes the same (empty) surface."""

    def get(self, release: ReleaseId) -> Optional[ApiSurface]:
        return ApiSurface(release, {})


def load_usage(path) -> UsageManifest:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    try:
        dep = data["dependency"]
        return UsageManifest(str(data.get("project", "")), LibraryId(dep["group"], dep["artifact"]), frozenset(data.get("used_apis", [])))
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"bad usage manifest: {exc}") from None


# ---------------------------------------------------------------- validation hook


def run_validation_hook(
    command_template: str,
    candidate: VersionNumber,
    timeout: float = 300.0,
    diagnostics: Optional[list] = None,
) -> bool:
    """Run the hook with ``{version}`` substituted; pass iff it exits 0 in time."""
    args = [part.replace("{version}", candidate.raw) for part in shlex.split(command_template)]
    if not args:
        raise SpawnError("validation command is empty")
    try:
        proc = subprocess.run(args, stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL, timeout=timeout)
    except subprocess.TimeoutExpired:
        if diagnostics is not None:
            diagnostics.append(Diagnostic("warning", "ValidationTimeout", f"{candidate.raw}: hook exceeded {timeout}s"))
        return False
    except OSError as exc:
        raise SpawnError(f"cannot run validation command {args[0]!r}: {exc}") from None
    return proc.returncode == 0


def hook_validator(command_template: str, timeout: float = 300.0, diagnostics: Optional[list] = None):
    return lambda v: run_validation_hook(command_template, v, timeout, diagnostics)


# ---------------------------------------------------------------- selection core


@dataclass
class CandidateFacts:
    version: VersionNumber
    vuln_total: int
    compatible: Optional[bool]  # None: surface missing
    breaking: tuple = ()


@dataclass
class Selection:
    feasible: list  # V' after the security filter, ascending
    admitted: list  # after the compatibility scans, ascending
    optimum: list  # after the min-vulnerability filter, ascending
    missing_surfaces: list


def select_versions(
    facts: Sequence[CandidateFacts],
    v_s: VersionNumber,
    allow_holes: bool = False,
) -> Selection:
    """Security filter, directional compatibility scans and f1 filter.

    ``facts`` must contain an entry for ``v_s``.
    """
    by_version = {f.version: f for f in facts}
    vt_s = by_version[v_s].vuln_total
    feasible = sorted((f.version for f in facts if f.vuln_total <= vt_s or f.version == v_s), key=version_key)
    upper = [v for v in feasible if v > v_s]
    lower = [v for v in reversed(feasible) if v < v_s]
    admitted = [v_s]
    missing = []
    for half in (upper, lower):
        for v in half:
            ok = by_version[v].compatible
            if ok is None:
                missing.append(v)
            if ok:
                admitted.append(v)
            elif not allow_holes:
                break
    admitted.sort(key=version_key)
    best = min(by_version[v].vuln_total for v in admitted)
    optimum = [v for v in admitted if by_version[v].vuln_total == best]
    return Selection(feasible, admitted, optimum, missing)


@dataclass
class RestoredRange:
    dependent: Optional[ReleaseId]
    target: LibraryId
    v_s: Optional[VersionNumber]
    selected: list
    range_text: str
    per_version: dict
    outcome: str
    diagnostics: list = field(default_factory=list)
    optimum: list = field(default_factory=list)
    universe: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "dependent": self.dependent.gav if self.dependent else None,
            "target": str(self.target),
            "v_s": self.v_s.raw if self.v_s is not None else None,
            "outcome": self.outcome,
            "range": self.range_text,
            "selected": [v.raw for v in self.selected],
            "per_version": {
                v.raw: dict(info) for v, info in sorted(self.per_version.items(), key=lambda kv: version_key(kv[0]))
            },
            "diagnostics": [d.as_dict() for d in self.diagnostics],
        }


def decide_outcome(facts: Sequence[CandidateFacts], v_s: VersionNumber, optimum: Sequence[VersionNumber]) -> str:
    """Map an f1/f2-optimal selection to an outcome code."""
    by_version = {f.version: f for f in facts}
    vt_s = by_version[v_s].vuln_total
    if vt_s == 0:
        return RESTORED
    best = min(by_version[v].vuln_total for v in optimum)
    if best < vt_s:
        return RESTORED
    securer = any(f.vuln_total < vt_s for f in facts)
    if securer:
        return NO_COMPATIBLE_PATCH
    if all(v == v_s for v in optimum):
        return NO_SECURE_VERSION
    # nothing more secure exists, but equally secure versions add flexibility
    return RESTORED


def _failure(dependent, target, v_s, outcome, diags, per_version=None, universe=None) -> RestoredRange:
    return RestoredRange(dependent, target, v_s, [], "", per_version or {}, outcome, diags, [], universe or [])


def restore_range(
    graph: DependencyGraph,
    dependent: ReleaseId,
    target: LibraryId,
    v_s: Optional[VersionNumber] = None,
    usage: Optional[UsageManifest] = None,
    surfaces: Optional[SurfaceProvider] = None,
    validator: Optional[Callable[[VersionNumber], bool]] = None,
    open_upper: bool = False,
    allow_holes: bool = False,
    max_depth: int = 10,
    workers: int = 1,
) -> RestoredRange:
    """Compute the restored range of ``dependent``'s dependency on ``target``.

    Faults never raise: they come back as outcome ``InternalError`` with a
    diagnostic.
    """
    diags: list[Diagnostic] = []
    surfaces = surfaces if surfaces is not None else AssumeCompatible()
    if v_s is None:
        try:
            dep_handle = graph.handle_of(dependent)
        except KeyError as exc:
            diags.append(Diagnostic("error", "NoSuchRelease", str(exc)))
            return _failure(dependent, target, v_s, INTERNAL_ERROR, diags)
        decl = next((d for d in graph.edges(dep_handle) if d.target == target), None)
        if decl is None:
            diags.append(Diagnostic("error", "NoSuchEdge", f"{dependent.gav} does not declare {target}"))
            return _failure(dependent, target, None, INTERNAL_ERROR, diags)
        if isinstance(decl.spec, SoftSpec):
            v_s = decl.spec.preferred
        else:
            node = resolve_tree(graph, dep_handle, max_depth).node_for(target)
            v_s = node.version if node is not None else None
            if v_s is None:
                diags.append(Diagnostic("error", "NoPinnedVersion", f"{dependent.gav} -> {target}: {decl.spec} resolves to nothing"))
                return _failure(dependent, target, None, INTERNAL_ERROR, diags)

    handles = graph.versions_of(target)
    universe = [graph.releases[h].version for h in handles]
    base_handle = graph.find(target, v_s)
    if base_handle is None:
        diags.append(Diagnostic("error", "UnknownVersion", f"{target}:{v_s.raw} is not in the corpus"))
        return _failure(dependent, target, v_s, INTERNAL_ERROR, diags, universe=universe)

    def total(h: int) -> int:
        return vulnerability_total(graph, h, max_depth)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            totals = dict(zip(handles, pool.map(total, handles)))
    else:
        totals = {h: total(h) for h in handles}
    vt_s = totals[base_handle]

    base_rel = graph.releases[base_handle]
    base_surface = surfaces.get(base_rel)
    if base_surface is None:
        diags.append(Diagnostic("error", MissingSurface.code, f"no API surface for base {base_rel.gav}"))
        return _failure(dependent, target, v_s, INTERNAL_ERROR, diags, universe=universe)

    facts = []
    for h in handles:
        rel = graph.releases[h]
        vt = totals[h]
        if h == base_handle:
            facts.append(CandidateFacts(rel.version, vt, True))
            continue
        if vt > vt_s:
            facts.append(CandidateFacts(rel.version, vt, None))
            continue
        surf = surfaces.get(rel)
        if surf is None:
            facts.append(CandidateFacts(rel.version, vt, None))
            continue
        reachable = reachable_incompatibilities(compatibility_check(base_surface, surf), usage)
        facts.append(CandidateFacts(rel.version, vt, not reachable, tuple(sorted(reachable))))

    sel = select_versions(facts, v_s, allow_holes)
    for v in sel.missing_surfaces:
        diags.append(Diagnostic("warning", INTERNAL_ERROR, f"no API surface for {target}:{v.raw}; candidate skipped"))

    per_version = {}
    for f in facts:
        if f.version not in sel.feasible:
            per_version[f.version] = {"vuln_total": f.vuln_total, "compat_ok": None, "test_ok": None, "breaking": []}
        else:
            per_version[f.version] = {
                "vuln_total": f.vuln_total,
                "compat_ok": f.compatible,
                "test_ok": None,
                "breaking": list(f.breaking),
            }

    chosen = list(sel.optimum)
    if validator is not None:
        try:
            if workers > 1 and len(chosen) > 1:
                with ThreadPoolExecutor(max_workers=workers) as pool:
                    verdicts = list(pool.map(validator, chosen))
            else:
                verdicts = [validator(v) for v in chosen]
        except SpawnError as exc:
            diags.append(Diagnostic("error", "SpawnError", str(exc)))
            return _failure(dependent, target, v_s, INTERNAL_ERROR, diags, per_version, universe)
        for v, ok in zip(chosen, verdicts):
            per_version[v]["test_ok"] = bool(ok)
        chosen = [v for v, ok in zip(chosen, verdicts) if ok]

    if not chosen:
        outcome = NO_COMPATIBLE_PATCH
        diags.append(Diagnostic("warning", "AllCandidatesRejected", "every selected version failed validation"))
        result = _failure(dependent, target, v_s, outcome, diags, per_version, universe)
        result.optimum = list(sel.optimum)
        return result

    outcome = decide_outcome(facts, v_s, chosen)
    if outcome != RESTORED:
        result = _failure(dependent, target, v_s, outcome, diags, per_version, universe)
        result.optimum = list(sel.optimum)
        return result

    top = per_version[chosen[-1]]["vuln_total"]
    if top > 0:
        diags.append(
            Diagnostic("warning", "ResolvedMemberVulnerable", f"highest selected version {chosen[-1].raw} still has {top} vulnerabilities")
        )
    text = synthesize_range(chosen, universe, open_upper)
    return RestoredRange(dependent, target, v_s, chosen, text, per_version, RESTORED, diags, list(sel.optimum), universe)
