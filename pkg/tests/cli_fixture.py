"""On-disk corpus used by the CLI and acceptance tests."""

from __future__ import annotations

import json
from pathlib import Path

from builders import pom_xml, write_corpus

G = "org.demo"
CORE_VERSIONS = ["1.0", "1.1", "1.2", "2.0"]


def write_fixture(root) -> dict:
    root = Path(root)
    releases = [(G, "core", v, f"2020-0{i + 1}-01") for i, v in enumerate(CORE_VERSIONS)]
    releases += [
        (G, "util", "1", "2020-01-15"),
        (G, "web", "1", "2020-02-10"),
        (G, "web", "2", "2020-05-10"),
        (G, "app", "1", "2020-03-01"),
    ]
    poms = {
        (G, "util", "1"): pom_xml(G, "util", "1", deps=[{"g": G, "a": "core", "v": "1.0"}]),
        (G, "web", "1"): pom_xml(G, "web", "1", deps=[{"g": G, "a": "util", "v": "1"}, {"g": G, "a": "core", "v": "[1.0,1.0]"}]),
        (G, "web", "2"): pom_xml(G, "web", "2", deps=[{"g": G, "a": "core", "v": "1.2"}]),
        (G, "app", "1"): pom_xml(
            G, "app", "1",
            deps=[{"g": G, "a": "web", "v": "1"}, {"g": G, "a": "util", "v": "1", "scope": "test"}],
            dm=[{"g": G, "a": "core", "v": "1.1"}],
        ),
    }
    vulns = [{"id": "CVE-2020-1", "group": G, "artifact": "core", "published_at": "2020-01-10", "ranges": [{"introduced": "0", "fixed": "1.1"}]}]
    index, pom_dir, vuln_file = write_corpus(root, releases, poms, vulns)
    overrides = root / "overrides.json"
    overrides.write_text(json.dumps({f"{G}:core": "1.2"}))
    return {"index": str(index), "poms": str(pom_dir), "vulns": str(vuln_file), "root": root, "overrides": str(overrides)}


MARK = "@@VERSION@@"


def _project(body: str, nl: str = "\n", head: str = "<project>") -> str:
    return nl.join(['<?xml version="1.0" encoding="UTF-8"?>', head, f"  <groupId>{G}</groupId>", "  <artifactId>client</artifactId>", "  <version>3.0</version>", body, "</project>", ""])


def _dep(artifact: str, version: str, extra: str = "") -> str:
    return f"<dependency><groupId>{G}</groupId><artifactId>{artifact}</artifactId><version>{version}</version>{extra}</dependency>"


def rewrite_poms() -> list:
    """Ten POM styles declaring core 1.0; returns (name, text, (start, end))
    where the span covers the text of the core dependency's version."""
    core = _dep("core", MARK)
    styles = [
        ("plain", _project(f"  <dependencies>\n    {core}\n  </dependencies>")),
        ("crlf", _project(f"  <dependencies>\r\n    {core}\r\n  </dependencies>", nl="\r\n")),
        ("comments", _project(f"  <dependencies>\n    <!-- <version>1.0</version> -->\n    <dependency><!-- pinned -->\n<groupId>{G}</groupId><artifactId>core</artifactId>\n<version>{MARK}</version></dependency>\n  </dependencies>")),
        ("sibling-same-version", _project(f"  <dependencies>\n    {_dep('util', '1.0')}\n    {core}\n    {_dep('web', '1.0')}\n  </dependencies>")),
        ("property", _project(f"  <properties><core.version>1.0</core.version></properties>\n  <dependencies>\n    {core}\n  </dependencies>")),
        ("namespaced", _project(f"\t<dependencies>\n\t\t{core}\n\t</dependencies>", head='<project xmlns="http://maven.apache.org/POM/4.0.0" xmlns:xsi="http://www.w3.org/2001/XMLSchema-instance" xsi:schemaLocation="http://maven.apache.org/POM/4.0.0 http://maven.apache.org/xsd/maven-4.0.0.xsd">')),
        ("managed", _project(f"  <dependencyManagement><dependencies>{_dep('core', '1.0')}</dependencies></dependencyManagement>\n  <dependencies>\n    {core}\n  </dependencies>")),
        ("plugins", _project(f"  <dependencies>\n    {core}\n  </dependencies>\n  <build><plugins><plugin><artifactId>maven-jar-plugin</artifactId><version>1.0</version></plugin></plugins></build>")),
        ("padded", _project(f"  <dependencies>\n    <dependency>\n      <groupId>{G}</groupId>\n      <artifactId>core</artifactId>\n      <version>  {MARK}  </version>\n      <scope>compile</scope>\n    </dependency>\n  </dependencies>")),
        ("one-line", _project(f"<dependencies>{_dep('util', '1')}{core}</dependencies>").replace("\n", "")),
    ]
    out = []
    for name, text in styles:
        value = "${core.version}" if name == "property" else "1.0"
        start = text.index(MARK)
        text = text.replace(MARK, value)
        end = text.index("</version>", start)
        # padded whitespace belongs to the element text too
        start = text.rindex(">", 0, start) + 1
        out.append((name, text, (start, end)))
    return out
