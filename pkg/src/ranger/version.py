"""Maven version numbers, soft constraints and version ranges.

Version ordering follows Maven's ``ComparableVersion`` (maven-artifact 3.9):
versions are split on ``.``, ``-`` and digit/letter transitions into a tree
of integer, qualifier, combination (``alpha1``) and list items, trailing
null items are trimmed, and qualifiers order as

    alpha < beta < milestone < rc < snapshot < "" (release) < sp < unknown

with unknown qualifiers compared lexically after the known ones.

Two corner cases of the reference comparator are tightened so that the
ordering is a genuine total order (see ``_cmp_null``):

* a list compared against padding inspects every element, not just the
  first one (Maven treats ``1-0.1`` as equal to ``1``);
* a combination item whose qualifier equals the padding sorts after it
  (``1-ga1 > 1``).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import cmp_to_key, total_ordering
from typing import Iterable, Sequence, Union

from .errors import EmptySelection, EmptyVersion, MalformedRange

__all__ = [
    "VersionNumber",
    "Interval",
    "SoftSpec",
    "RangeSpec",
    "UnresolvedSpec",
    "VersionSpec",
    "parse_version",
    "compare_versions",
    "parse_version_spec",
    "spec_contains",
    "synthesize_range",
]

# item tags
_INT, _STR, _COMB, _LIST = 0, 1, 2, 3

QUALIFIERS = ("alpha", "beta", "milestone", "rc", "snapshot", "", "sp")
_ALIASES = {"ga": "", "final": "", "release": "", "cr": "rc"}
_RELEASE_INDEX = str(QUALIFIERS.index(""))
_SHORT = {"a": "alpha", "b": "beta", "m": "milestone"}


def _qualifier_key(value: str) -> str:
    try:
        return str(QUALIFIERS.index(value))
    except ValueError:
        return f"{len(QUALIFIERS)}-{value}"


def _string_item(value: str, followed_by_digit: bool) -> tuple:
    if followed_by_digit and len(value) == 1:
        value = _SHORT.get(value, value)
    value = _ALIASES.get(value, value)
    return (_STR, value)


def _int_item(buf: str) -> tuple:
    return (_INT, int(buf))


def _combination_item(buf: str) -> tuple:
    index = 0
    for i, ch in enumerate(buf):
        if "0" <= ch <= "9":
            index = i
            break
    return (_COMB, _string_item(buf[:index], True)[1], _int_item(buf[index:]))


def _parse_item(is_combination: bool, is_digit: bool, buf: str) -> tuple:
    if is_combination:
        return _combination_item(buf.replace("-", ""))
    if is_digit:
        return _int_item(buf)
    return _string_item(buf, False)


def _is_null(item: tuple) -> bool:
    tag = item[0]
    if tag == _INT:
        return item[1] == 0
    if tag == _STR:
        return _qualifier_key(item[1]) == _RELEASE_INDEX
    if tag == _LIST:
        return not item[1]
    return False


def _normalize(items: list) -> None:
    i = len(items) - 1
    while i >= 0:
        if _is_null(items[i]):
            if i == len(items) - 1 or items[i + 1][0] == _STR:
                del items[i]
            elif items[i + 1][0] == _LIST:
                head = items[i + 1][1][0]
                if head[0] in (_COMB, _STR):
                    del items[i]
        i -= 1


def _is_ascii_digit(ch: str) -> bool:
    return "0" <= ch <= "9"


def _tokenize(version: str) -> tuple:
    """Build the normalized item tree for a (lower-cased) version string."""
    root: list = []
    current = root
    stack: list[list] = [root]
    is_digit = False
    is_combination = False
    start = 0
    n = len(version)
    i = 0

    def push_list() -> list:
        nonlocal current
        child: list = []
        current.append(child)
        current = child
        stack.append(child)
        return child

    while i < n:
        c = version[i]
        if c == ".":
            if i == start:
                current.append((_INT, 0))
            else:
                current.append(_parse_item(is_combination, is_digit, version[start:i]))
            is_combination = False
            start = i + 1
        elif c == "-":
            if i == start:
                current.append((_INT, 0))
            else:
                # X-1 is read as the combination X1
                if not is_digit and i != n - 1 and _is_ascii_digit(version[i + 1]):
                    is_combination = True
                    i += 1
                    continue
                current.append(_parse_item(is_combination, is_digit, version[start:i]))
            start = i + 1
            if current:
                push_list()
            is_combination = False
        elif _is_ascii_digit(c):
            if not is_digit and i > start:
                is_combination = True
                if current:
                    push_list()
            is_digit = True
        else:
            if is_digit and i > start:
                current.append(_parse_item(is_combination, True, version[start:i]))
                start = i
                push_list()
                is_combination = False
            is_digit = False
        i += 1

    if n > start:
        # 1.0.0.X1 < 1.0.0-X2: a trailing .X is read as -X
        if not is_digit and current:
            push_list()
        current.append(_parse_item(is_combination, is_digit, version[start:]))

    frozen: dict[int, tuple] = {}
    while stack:
        lst = stack.pop()
        # children were normalized first; swap them for their frozen form
        for j, item in enumerate(lst):
            if isinstance(item, list):
                lst[j] = frozen[id(item)]
        _normalize(lst)
        frozen[id(lst)] = (_LIST, tuple(lst))
    return frozen[id(root)][1]


_QUALIFIER_TAGS = (_STR, _COMB)


def _sign(x) -> int:
    return (x > 0) - (x < 0)


def _cmp_null(item: tuple) -> int:
    """Compare an item against padding (an absent item).

    A zero that survived normalization sits above padding; trailing zeros
    never reach this point, so "1.0" and "1" still compare equal.
    """
    tag = item[0]
    if tag == _INT:
        return 1
    if tag == _STR:
        a = _qualifier_key(item[1])
        return (a > _RELEASE_INDEX) - (a < _RELEASE_INDEX)
    if tag == _COMB:
        a = _qualifier_key(item[1])
        r = (a > _RELEASE_INDEX) - (a < _RELEASE_INDEX)
        return r if r else 1
    for child in item[1]:
        r = _cmp_null(child)
        if r:
            return r
    return 0


def _cmp_item(a: tuple, b: tuple) -> int:
    ta, tb = a[0], b[0]
    if ta != tb and not (ta in _QUALIFIER_TAGS and tb in _QUALIFIER_TAGS):
        # items of different kinds are first split by where they fall
        # relative to padding, which keeps the order transitive
        r = _cmp_null(a) - _cmp_null(b)
        if r:
            return _sign(r)
    if ta == _INT:
        if tb == _INT:
            return _sign(a[1] - b[1])
        return 1
    if ta == _STR:
        if tb == _INT or tb == _LIST:
            return -1
        qa = _qualifier_key(a[1])
        if tb == _STR:
            qb = _qualifier_key(b[1])
            return (qa > qb) - (qa < qb)
        qb = _qualifier_key(b[1])
        r = (qa > qb) - (qa < qb)
        return r if r else -1
    if ta == _COMB:
        if tb == _INT or tb == _LIST:
            return -1
        qa = _qualifier_key(a[1])
        qb = _qualifier_key(b[1])
        r = (qa > qb) - (qa < qb)
        if tb == _STR:
            return r if r else 1
        return r if r else _cmp_item(a[2], b[2])
    # list
    if tb == _INT:
        return -1
    if tb == _STR or tb == _COMB:
        return 1
    return _cmp_seq(a[1], b[1])


def _cmp_seq(left: Sequence[tuple], right: Sequence[tuple]) -> int:
    for i in range(max(len(left), len(right))):
        if i >= len(left):
            r = -_cmp_null(right[i])
        elif i >= len(right):
            r = _cmp_null(left[i])
        else:
            r = _cmp_item(left[i], right[i])
        if r:
            return r
    return 0


def _render_item(item: tuple) -> str:
    tag = item[0]
    if tag == _INT:
        return str(item[1])
    if tag == _STR:
        return item[1] or "ga"
    if tag == _COMB:
        return f"{item[1] or 'ga'}-{item[2][1]}"
    return _render_seq(item[1])


def _render_seq(items: Sequence[tuple]) -> str:
    out = []
    for i, item in enumerate(items):
        if item[0] == _LIST:
            out.append("-")
        elif i:
            out.append(".")
        text = _render_item(item)
        if item[0] == _LIST and i and items[i - 1][0] == _STR and item[1][0] == (_INT, 0):
            # "a-0" would read back as a combination, "a-." keeps the list
            text = text[1:]
        out.append(text)
    if len(items) > 1 and items[-1][0] == _STR:
        # a trailing ".x" reads back as "-x"; the padding zero pins it
        out.append(".0")
    return "".join(out)


def _has_unknown_qualifier(items: Sequence[tuple]) -> bool:
    for item in items:
        if item[0] in (_STR, _COMB) and item[1] not in QUALIFIERS:
            return True
        if item[0] == _LIST and _has_unknown_qualifier(item[1]):
            return True
    return False


@total_ordering
class VersionNumber:
    """A parsed Maven version; equality and ordering are semantic.

    ``raw`` keeps the text as written so ranges and reports echo it back,
    while ``items`` holds the normalized token tree used for comparison.
    """

    __slots__ = ("raw", "items", "_hash")

    def __init__(self, raw: str, items: tuple):
        self.raw = raw
        self.items = items
        self._hash = hash(items)

    def __repr__(self) -> str:
        return f"VersionNumber({self.raw!r})"

    def __str__(self) -> str:
        return self.raw

    def __hash__(self) -> int:
        return self._hash

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, VersionNumber):
            return NotImplemented
        return self.items == other.items

    def __lt__(self, other: "VersionNumber") -> bool:
        if not isinstance(other, VersionNumber):
            return NotImplemented
        return _cmp_seq(self.items, other.items) < 0

    @property
    def canonical(self) -> str:
        return _render_seq(self.items) or "0"

    @property
    def uses_lexical_fallback(self) -> bool:
        """True when an unknown qualifier forces lexical ordering."""
        return _has_unknown_qualifier(self.items)


def parse_version(text: str) -> VersionNumber:
    """Parse ``text`` into a :class:`VersionNumber`.

    Any printable input is accepted; characters that are neither digits nor
    separators become qualifier tokens. Only blank input is rejected.
    """
    raw = text.strip()
    if not raw:
        raise EmptyVersion("version text is empty")
    return VersionNumber(raw, _tokenize(raw.lower()))


def compare_versions(a: VersionNumber, b: VersionNumber) -> int:
    return _cmp_seq(a.items, b.items)


version_key = cmp_to_key(compare_versions)


def _as_version(v: Union[VersionNumber, str]) -> VersionNumber:
    return v if isinstance(v, VersionNumber) else parse_version(v)


@dataclass(frozen=True)
class Interval:
    lower: VersionNumber | None = None
    lower_closed: bool = False
    upper: VersionNumber | None = None
    upper_closed: bool = False

    def __post_init__(self):
        if self.lower is None and self.lower_closed:
            object.__setattr__(self, "lower_closed", False)
        if self.upper is None and self.upper_closed:
            object.__setattr__(self, "upper_closed", False)
        if self.lower is not None and self.upper is not None:
            c = compare_versions(self.lower, self.upper)
            if c > 0:
                raise MalformedRange(f"inverted bounds {self.lower} > {self.upper}")
            if c == 0 and not (self.lower_closed and self.upper_closed):
                raise MalformedRange(f"empty interval at {self.lower}")

    def contains(self, v: VersionNumber) -> bool:
        if self.lower is not None:
            c = compare_versions(v, self.lower)
            if c < 0 or (c == 0 and not self.lower_closed):
                return False
        if self.upper is not None:
            c = compare_versions(v, self.upper)
            if c > 0 or (c == 0 and not self.upper_closed):
                return False
        return True

    def __str__(self) -> str:
        if (
            self.lower is not None
            and self.upper is not None
            and self.lower_closed
            and self.upper_closed
            and self.lower == self.upper
            and self.lower.raw == self.upper.raw
        ):
            return f"[{self.lower.raw},{self.upper.raw}]"
        lo = "[" if self.lower_closed else "("
        hi = "]" if self.upper_closed else ")"
        lv = self.lower.raw if self.lower is not None else ""
        uv = self.upper.raw if self.upper is not None else ""
        return f"{lo}{lv},{uv}{hi}"


def _starts_before(a: Interval, b: Interval) -> bool:
    if a.lower is None:
        return b.lower is not None or False
    if b.lower is None:
        return False
    c = compare_versions(a.lower, b.lower)
    return c < 0 or (c == 0 and a.lower_closed and not b.lower_closed)


def _lower_sort_key(iv: Interval):
    # unbounded lower first, then by bound; closed before open at equal bound
    if iv.lower is None:
        return (0, None, 0)
    return (1, version_key(iv.lower), 0 if iv.lower_closed else 1)


def _overlaps(prev: Interval, cur: Interval) -> bool:
    if prev.upper is None or cur.lower is None:
        return True
    c = compare_versions(prev.upper, cur.lower)
    return c > 0 or (c == 0 and prev.upper_closed and cur.lower_closed)


@dataclass(frozen=True)
class SoftSpec:
    """A bare version: Maven's soft constraint on the preferred version."""

    preferred: VersionNumber

    def contains(self, v: VersionNumber) -> bool:
        return v == self.preferred

    def __str__(self) -> str:
        return self.preferred.raw


@dataclass(frozen=True)
class RangeSpec:
    intervals: tuple[Interval, ...]

    def __post_init__(self):
        if not self.intervals:
            raise MalformedRange("range has no intervals")
        ordered = tuple(sorted(self.intervals, key=_lower_sort_key))
        for prev, cur in zip(ordered, ordered[1:]):
            if _overlaps(prev, cur):
                raise MalformedRange(f"ranges overlap: {prev} and {cur}")
        object.__setattr__(self, "intervals", ordered)

    def contains(self, v: VersionNumber) -> bool:
        return any(iv.contains(v) for iv in self.intervals)

    @property
    def open_upper(self) -> bool:
        return self.intervals[-1].upper is None

    def __str__(self) -> str:
        return ",".join(str(iv) for iv in self.intervals)


@dataclass(frozen=True)
class UnresolvedSpec:
    """Version text that could not be interpolated or parsed."""

    text: str

    def contains(self, v: VersionNumber) -> bool:
        return False

    def __str__(self) -> str:
        return self.text


VersionSpec = Union[SoftSpec, RangeSpec, UnresolvedSpec]


def _parse_bound(text: str) -> VersionNumber | None:
    return parse_version(text) if text else None


def parse_version_spec(text: str) -> SoftSpec | RangeSpec:
    """Parse POM ``<version>`` text into a soft pin or a range set."""
    compact = re.sub(r"\s+", "", text or "")
    if not compact:
        raise MalformedRange("version specification is empty")
    if compact[0] not in "[(":
        if any(ch in compact for ch in "[]()"):
            raise MalformedRange(f"unbalanced brackets in {text!r}")
        return SoftSpec(parse_version(compact))

    intervals = []
    pos = 0
    n = len(compact)
    while pos < n:
        opener = compact[pos]
        if opener not in "[(":
            raise MalformedRange(f"expected '[' or '(' at offset {pos} in {text!r}")
        end = pos + 1
        while end < n and compact[end] not in "])":
            if compact[end] in "[(":
                raise MalformedRange(f"unbalanced brackets in {text!r}")
            end += 1
        if end >= n:
            raise MalformedRange(f"unbalanced brackets in {text!r}")
        closer = compact[end]
        body = compact[pos + 1 : end]
        intervals.append(_parse_interval(opener, body, closer, text))
        pos = end + 1
        if pos < n:
            if compact[pos] != ",":
                raise MalformedRange(f"expected ',' between ranges in {text!r}")
            pos += 1
            if pos >= n:
                raise MalformedRange(f"trailing ',' in {text!r}")
    return RangeSpec(tuple(intervals))


def _parse_interval(opener: str, body: str, closer: str, text: str) -> Interval:
    lower_closed = opener == "["
    upper_closed = closer == "]"
    if "," not in body:
        if not body:
            raise MalformedRange(f"empty interval in {text!r}")
        if not (lower_closed and upper_closed):
            raise MalformedRange(f"single version must use [v] in {text!r}")
        v = parse_version(body)
        return Interval(v, True, v, True)
    lo, _, hi = body.partition(",")
    if "," in hi:
        raise MalformedRange(f"too many bounds in {text!r}")
    return Interval(_parse_bound(lo), lower_closed, _parse_bound(hi), upper_closed)


def spec_contains(spec: VersionSpec, v: VersionNumber) -> bool:
    return spec.contains(v)


def _dedupe_sorted(versions: Iterable[VersionNumber]) -> list[VersionNumber]:
    out: list[VersionNumber] = []
    for v in sorted(versions, key=version_key):
        if not out or out[-1] != v:
            out.append(v)
    return out


def synthesize_range(
    selected: Iterable[VersionNumber | str],
    universe: Iterable[VersionNumber | str],
    open_upper: bool = False,
) -> str:
    """Smallest union of closed intervals selecting exactly ``selected``.

    Membership is judged against ``universe``: each maximal run of selected
    versions that is contiguous in the sorted universe becomes one interval.
    With ``open_upper`` and the universe maximum selected, the last interval
    is left unbounded on top.
    """
    chosen = set(_dedupe_sorted(_as_version(v) for v in selected))
    if not chosen:
        raise EmptySelection("no versions selected")
    ordered = _dedupe_sorted(_as_version(v) for v in universe)
    missing = chosen.difference(ordered)
    if missing:
        raise ValueError(f"selected versions not in universe: {sorted(map(str, missing))}")

    runs: list[list[VersionNumber]] = []
    in_run = False
    for v in ordered:
        if v in chosen:
            if not in_run:
                runs.append([])
                in_run = True
            runs[-1].append(v)
        else:
            in_run = False

    parts = [f"[{run[0].raw},{run[-1].raw}]" for run in runs]
    if open_upper and runs[-1][-1] == ordered[-1]:
        parts[-1] = f"[{runs[-1][0].raw},)"
    return ",".join(parts)
