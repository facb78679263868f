"""Command line entry point: ``ranger <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import sys
import xml.parsers.expat
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .alsearch import find_affected
from .analytics import (
    cause_proportions,
    classify_cause,
    dependency_management_stats,
    full_life,
    half_life,
    heatmap_csv,
    new_release_span,
    pvul_series,
    range_usage_stats,
)
from .config import Config, load_config
from .corpus import (
    LibraryId,
    ReleaseId,
    interpolate,
    load_index,
    load_poms,
    load_vulnerabilities,
    parse_date,
    parse_pom,
    read_raw_pom,
)
from .errors import MissingReleaseDates, RangerError, SchemaError, XmlError
from .graph import DependencyGraph, build_graph, load_snapshot, save_snapshot
from .monitor import emit_report, report_json, run_campaign
from .resolver import DEPLOYABLE, count_vulnerabilities, resolve_tree
from .restore import (
    RESTORED,
    AssumeCompatible,
    DirectorySurfaces,
    hook_validator,
    load_usage,
    restore_range,
)
from .version import SoftSpec, parse_version


def _dump(data) -> str:
    return json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


# ---------------------------------------------------------------- graph loading


def _load_graph(cfg: Config) -> DependencyGraph:
    if cfg.snapshot:
        return load_snapshot(cfg.snapshot)
    if cfg.index and cfg.vulns:
        return _ingest(cfg)
    raise SchemaError("no graph source: give --snapshot or --index/--poms/--vulns")


def _ingest(cfg: Config) -> DependencyGraph:
    diags: list = []
    releases = load_index(cfg.index, diags)
    poms = load_poms(cfg.poms, releases, diags) if cfg.poms else {}
    vulns = load_vulnerabilities(cfg.vulns)
    return build_graph(releases, poms, vulns, diags)


def _vulns(graph: DependencyGraph, vuln_id: Optional[str], min_affected: int = 0):
    if vuln_id:
        return [v for v in graph.vulnerabilities if v.id == vuln_id] or [graph.find_vulnerability(vuln_id)]
    return [v for v in graph.vulnerabilities if len(graph.affected_handles(v)) >= min_affected]


# ---------------------------------------------------------------- subcommands


def cmd_ingest(args, cfg: Config, out) -> int:
    if not (cfg.index and cfg.vulns):
        raise SchemaError("ingest needs --index and --vulns")
    graph = _ingest(cfg)
    target = args.out or cfg.snapshot
    if not target:
        raise SchemaError("ingest needs --out or a snapshot path")
    save_snapshot(graph, target)
    counts: dict = {}
    for d in graph.diagnostics:
        counts[d.code] = counts.get(d.code, 0) + 1
    out.write(_dump({"snapshot": str(target), "stats": graph.stats(), "diagnostics": counts}))
    return 0


def cmd_graph(args, cfg: Config, out) -> int:
    graph = _load_graph(cfg)
    if args.action == "stats":
        out.write(_dump(graph.stats()))
    else:
        out.write(_dump([d.as_dict() for d in graph.diagnostics]))
    return 0


def _tree_lines(tree) -> list[str]:
    children: dict[int, list[int]] = {}
    for i, n in enumerate(tree.nodes):
        children.setdefault(n.parent, []).append(i)
    lines = [tree.root.gav]

    def walk(parent: int) -> None:
        for i in children.get(parent, []):
            n = tree.nodes[i]
            version = n.version.raw if n.version is not None else str(n.spec)
            lines.append(f"{'  ' * n.depth}{n.library}:{version} [{n.via_scope}] ({n.depth})")
            walk(i)

    walk(-1)
    return lines


def cmd_resolve(args, cfg: Config, out) -> int:
    graph = _load_graph(cfg)
    root = ReleaseId.parse(args.root)
    tree = resolve_tree(graph, root, cfg.max_depth)
    scopes = tuple(s.strip() for s in args.count_scopes.split(",")) if args.count_scopes else tuple(sorted(DEPLOYABLE))
    counts = count_vulnerabilities(graph, tree, scopes)
    if args.json:
        data = tree.as_dict()
        data["vulnerabilities"] = {"scopes": list(scopes), "total": counts["total"]}
        out.write(_dump(data))
    else:
        out.write("\n".join(_tree_lines(tree)) + "\n")
        if args.count_scopes:
            out.write(f"vulnerabilities ({','.join(scopes)}): {counts['total']}\n")
    return 0


def cmd_alsearch(args, cfg: Config, out) -> int:
    graph = _load_graph(cfg)
    payload = {}
    for vuln in _vulns(graph, args.vuln):
        records = find_affected(graph, vuln, cfg.max_depth, workers=cfg.parallelism)
        payload[f"{vuln.id}|{vuln.library}"] = [r.as_dict() for r in records]
    if args.json:
        out.write(_dump(payload))
    else:
        for key in sorted(payload):
            for r in payload[key]:
                out.write(f"{r['vuln_id']}\t{r['depth']}\t{r['release']}\n")
    return 0


def cmd_metrics(args, cfg: Config, out) -> int:
    graph = _load_graph(cfg)
    report = {}
    for vuln in _vulns(graph, args.vuln, cfg.min_affected):
        records = find_affected(graph, vuln, cfg.max_depth)
        series = pvul_series(graph, vuln, args.bucket, records=records, max_depth=cfg.max_depth)
        entry = {"affected_releases": len(records), "new_release_span": new_release_span(graph, vuln, records).as_dict()}
        if series.points:
            entry["half_life"] = half_life(series, cfg.halflife_mode).as_dict()
            entry["full_life"] = full_life(series).as_dict()
        else:
            entry["half_life"] = entry["full_life"] = None
        entry["series"] = series.as_dict()
        report[f"{vuln.id}|{vuln.library}"] = entry
        if args.heatmap:
            name = f"{vuln.id}_{vuln.library.group}_{vuln.library.artifact}.csv".replace("/", "_")
            Path(args.heatmap).mkdir(parents=True, exist_ok=True)
            (Path(args.heatmap) / name).write_text(heatmap_csv(series), encoding="utf-8")
    out.write(_dump(report))
    return 0


def _read_overrides(path: Optional[str]):
    if not path:
        return None
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    return {LibraryId.parse(k): parse_version(v) for k, v in data.items()}


def cmd_causes(args, cfg: Config, out) -> int:
    graph = _load_graph(cfg)
    as_of = parse_date(args.as_of) if args.as_of else None
    overrides = _read_overrides(args.overrides)
    vulns = _vulns(graph, args.vuln, cfg.min_affected)
    labels = []
    for vuln in vulns:
        for rec in find_affected(graph, vuln, cfg.max_depth):
            try:
                label = classify_cause(graph, rec, overrides, as_of, vuln, cfg.max_depth)
            except MissingReleaseDates as exc:
                labels.append({"release": rec.release.gav, "vuln_id": vuln.id, "cause": None, "error": str(exc)})
                continue
            labels.append(
                {
                    "release": rec.release.gav,
                    "vuln_id": vuln.id,
                    "cause": label.cause if label else None,
                    "role": label.blamed_role if label else None,
                    "path": [r.gav for r in rec.witness_path],
                }
            )
    summary = cause_proportions(graph, vulns, overrides, as_of, cfg.max_depth)
    out.write(_dump({"proportions": summary, "paths": labels}))
    return 0


def cmd_usage(args, cfg: Config, out) -> int:
    graph = _load_graph(cfg)
    vulns = _vulns(graph, None, cfg.min_affected)
    out.write(
        _dump(
            {
                "ranges": range_usage_stats(graph, vulns),
                "dependency_management": dependency_management_stats(graph, vulns, cfg.max_depth),
            }
        )
    )
    return 0


def _pom_release(raw) -> ReleaseId:
    pg, _, pv = raw.parent or (None, None, None)
    group = raw.group or pg
    version = raw.version or pv
    if not (group and raw.artifact and version):
        raise XmlError("POM lacks groupId/artifactId/version")
    return ReleaseId(LibraryId(group, raw.artifact), parse_version(version))


def rewrite_dependency_version(data: bytes, dep: LibraryId, new_text: str) -> bytes:
    """Replace the text of ``dep``'s ``<version>`` under project/dependencies.

    Every other byte of the document is kept as is.
    """
    raw = read_raw_pom(data)
    release = _pom_release(raw)
    props = parse_pom(data, release).properties
    parser = xml.parsers.expat.ParserCreate()
    stack: list[str] = []
    current: dict = {}
    text_buf: list[str] = []
    found: list[tuple] = []

    def local(name: str) -> str:
        return name.rsplit(":", 1)[-1].rsplit("}", 1)[-1]

    def start(name, attrs):
        tag = local(name)
        stack.append(tag)
        text_buf.clear()
        if stack[-3:] == ["project", "dependencies", "dependency"] and len(stack) == 3:
            current.clear()
            current["start"] = None
        if tag == "version" and stack[:4] == ["project", "dependencies", "dependency", "version"] and len(stack) == 4:
            current["start"] = parser.CurrentByteIndex

    def end(name):
        tag = stack[-1]
        if len(stack) == 4 and stack[:3] == ["project", "dependencies", "dependency"]:
            if tag in ("groupId", "artifactId"):
                current[tag] = "".join(text_buf).strip()
            elif tag == "version" and current.get("start") is not None:
                current["end"] = parser.CurrentByteIndex
        if len(stack) == 3 and stack == ["project", "dependencies", "dependency"]:
            g = interpolate(current.get("groupId"), props)
            a = interpolate(current.get("artifactId"), props)
            if g == dep.group and a == dep.artifact and current.get("end") is not None:
                found.append((current["start"], current["end"]))
        stack.pop()
        text_buf.clear()

    def chars(text):
        text_buf.append(text)

    parser.StartElementHandler = start
    parser.EndElementHandler = end
    parser.CharacterDataHandler = chars
    try:
        parser.Parse(data, True)
    except xml.parsers.expat.ExpatError as exc:
        raise XmlError(f"malformed POM: {exc}") from None
    if not found:
        raise SchemaError(f"POM has no <version> for dependency {dep}")
    tag_start, close_start = found[0]
    open_end = data.index(b">", tag_start) + 1
    if data[open_end - 2 : open_end] == b"/>":
        raise SchemaError(f"empty <version/> element for {dep}")
    return data[:open_end] + new_text.encode("utf-8") + data[close_start:]


def cmd_restore(args, cfg: Config, out) -> int:
    graph = _load_graph(cfg)
    data = Path(args.pom).read_bytes()
    raw = read_raw_pom(data)
    release = _pom_release(raw)
    dep = LibraryId.parse(args.dep)
    doc = parse_pom(data, release)
    decl = next((d for d in doc.dependencies if d.target == dep), None)
    if decl is None:
        raise SchemaError(f"{args.pom} does not declare {dep}")
    if not isinstance(decl.spec, SoftSpec):
        raise SchemaError(f"{dep} is declared as {decl.spec!s}, not a single pinned version")
    usage = load_usage(args.usage) if args.usage else None
    surfaces = DirectorySurfaces(args.surfaces) if args.surfaces else AssumeCompatible()
    validator = hook_validator(cfg.validate_cmd, cfg.timeout) if cfg.validate_cmd else None
    result = restore_range(
        graph,
        release,
        dep,
        decl.spec.preferred,
        usage,
        surfaces,
        validator,
        open_upper=cfg.open_upper,
        allow_holes=args.allow_holes,
        max_depth=cfg.max_depth,
        workers=cfg.parallelism,
    )
    if args.rewrite:
        if result.outcome != RESTORED:
            raise RangerError(f"nothing to rewrite: restoration outcome {result.outcome}")
        new = rewrite_dependency_version(data, dep, result.range_text)
        if args.out:
            Path(args.out).write_bytes(new)
        else:
            out.flush()
            if hasattr(out, "buffer"):
                out.buffer.write(new)
                out.buffer.flush()
            else:
                out.write(new.decode("utf-8"))
        return 0
    out.write(_dump(result.as_dict()))
    return 0


def _usage_lookup(directory: Optional[str]):
    if not directory:
        return None
    base = Path(directory)

    def lookup(dependent: ReleaseId, target: LibraryId):
        path = base / f"{dependent.library.group}__{dependent.library.artifact}__{dependent.version.raw}.json"
        if not path.exists():
            return None
        manifest = load_usage(path)
        return manifest if manifest.dependency == target else None

    return lookup


def cmd_monitor(args, cfg: Config, out) -> int:
    graph = _load_graph(cfg)
    vuln = graph.find_vulnerability(args.vuln)
    surfaces = DirectorySurfaces(args.surfaces) if args.surfaces else AssumeCompatible()
    validator = hook_validator(cfg.validate_cmd, cfg.timeout) if cfg.validate_cmd else None
    report, final = run_campaign(
        graph,
        vuln,
        cfg.max_depth,
        surfaces=surfaces,
        usage_for=_usage_lookup(args.usage_dir),
        validator=validator,
        open_upper=cfg.open_upper,
        allow_holes=args.allow_holes,
        eager=args.eager,
        workers=cfg.parallelism,
    )
    if args.out:
        emit_report(report, args.out, "json")
    if args.md:
        emit_report(report, args.md, "md")
    if args.remaining_csv:
        emit_report(report, args.remaining_csv, "csv")
    if args.save_snapshot:
        save_snapshot(final, args.save_snapshot)
    if not args.out:
        out.write(report_json(report))
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="config file (default ./ranger.toml)")
    common.add_argument("--snapshot", help="graph snapshot to read")
    common.add_argument("--index", help="index.jsonl")
    common.add_argument("--poms", help="directory of POM files")
    common.add_argument("--vulns", help="vulns.json")
    common.add_argument("--max-depth", type=int, dest="max_depth")
    common.add_argument("--parallelism", type=int)
    common.add_argument("--json-errors", action="store_true", help="report errors as JSON on stderr")

    parser = argparse.ArgumentParser(prog="ranger", description="Vulnerability persistence analysis and range restoration.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    p = sub.add_parser("ingest", parents=[common], help="build a graph snapshot from corpus files")
    p.add_argument("--out", help="snapshot path to write")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("graph", parents=[common], help="graph statistics")
    p.add_argument("action", choices=["stats", "diagnostics"])
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("resolve", parents=[common], help="resolve a release's dependency tree")
    p.add_argument("--root", required=True, help="G:A:V")
    p.add_argument("--json", action="store_true")
    p.add_argument("--count-scopes", help="comma-separated scopes counted for vulnerabilities")
    p.set_defaults(func=cmd_resolve)

    p = sub.add_parser("alsearch", parents=[common], help="find releases affected by a vulnerability")
    p.add_argument("--vuln", help="vulnerability id (default: all)")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_alsearch)

    p = sub.add_parser("metrics", parents=[common], help="P_vul series, half-life, full-life, new release span")
    p.add_argument("--vuln")
    p.add_argument("--bucket", choices=["day", "month"], default="month")
    p.add_argument("--halflife-mode", choices=["absolute", "relative"], dest="halflife_mode")
    p.add_argument("--min-affected", type=int, dest="min_affected")
    p.add_argument("--heatmap", help="directory for depth x bucket CSV matrices")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("causes", parents=[common], help="classify why patches are blocked")
    p.add_argument("--vuln")
    p.add_argument("--as-of", dest="as_of")
    p.add_argument("--overrides", help='JSON map {"G:A": "version"} of end-user pins')
    p.add_argument("--min-affected", type=int, dest="min_affected")
    p.set_defaults(func=cmd_causes)

    p = sub.add_parser("usage", parents=[common], help="range and dependencyManagement usage")
    p.add_argument("--min-affected", type=int, dest="min_affected")
    p.set_defaults(func=cmd_usage)

    p = sub.add_parser("restore", parents=[common], help="restore a version range for one dependency")
    p.add_argument("--pom", required=True)
    p.add_argument("--dep", required=True, help="G:A of the dependency")
    p.add_argument("--usage", help="usage.json")
    p.add_argument("--surfaces", help="directory of API surfaces")
    p.add_argument("--validate-cmd", dest="validate_cmd")
    p.add_argument("--timeout", type=float)
    p.add_argument("--open-upper", action="store_true", default=None, dest="open_upper")
    p.add_argument("--allow-holes", action="store_true")
    p.add_argument("--rewrite", action="store_true", help="emit the POM with the range written in")
    p.add_argument("--out", help="file for the rewritten POM")
    p.set_defaults(func=cmd_restore)

    p = sub.add_parser("monitor", parents=[common], help="run a depth-by-depth restoration campaign")
    p.add_argument("--vuln", required=True)
    p.add_argument("--out", help="JSON report path")
    p.add_argument("--md", help="Markdown report path")
    p.add_argument("--remaining-csv", dest="remaining_csv")
    p.add_argument("--surfaces")
    p.add_argument("--usage-dir", dest="usage_dir")
    p.add_argument("--validate-cmd", dest="validate_cmd")
    p.add_argument("--timeout", type=float)
    p.add_argument("--open-upper", action="store_true", default=None, dest="open_upper")
    p.add_argument("--allow-holes", action="store_true")
    p.add_argument("--eager", action="store_true", help="apply each range before the next restoration")
    p.add_argument("--save-snapshot", dest="save_snapshot", help="write the final epoch here")
    p.set_defaults(func=cmd_monitor)
    return parser


def main(argv: Optional[Sequence[str]] = None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = load_config(vars(args), config_path=args.config)
        return args.func(args, cfg, out)
    except (RangerError, OSError) as exc:
        code = getattr(exc, "code", None)
        if not isinstance(code, str):
            code = "IoError"
        if args.json_errors:
            err.write(json.dumps({"error": code, "message": str(exc)}, sort_keys=True) + "\n")
        else:
            err.write(f"ranger: {code}: {exc}\n")
        return 1
