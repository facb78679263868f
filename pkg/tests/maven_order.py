"""Ordering fixtures taken from Maven's own ComparableVersion test-suite and
the version-order rules in the Maven POM reference.

Each sequence is strictly increasing; each equality group compares equal.
"""

QUALIFIER_SEQUENCE = [
    "1-alpha2snapshot", "1-alpha2", "1-alpha-123", "1-beta-2", "1-beta123",
    "1-m2", "1-m11", "1-rc", "1-cr2", "1-rc123", "1-SNAPSHOT", "1", "1-sp",
    "1-sp2", "1-sp123", "1-abc", "1-def", "1-pom-1", "1-1-snapshot", "1-1",
    "1-2", "1-123",
]

NUMBER_SEQUENCE = [
    "2.0", "2.0.a", "2-1", "2.0.2", "2.0.123", "2.1.0", "2.1-a", "2.1b",
    "2.1-c", "2.1-1", "2.1.0.1", "2.2", "2.123", "11.a2", "11.a11", "11.b2",
    "11.b11", "11.m2", "11.m11", "11", "11.a", "11b", "11c", "11m",
]

EQUAL_GROUPS = [
    ["1", "1.0", "1.0.0", "1-0", "1.0-0", "1ga", "1.ga", "1-ga", "1final", "1release", "1GA", "1-FINAL"],
    ["1a", "1-a", "1.0-a"],
    ["1x", "1-x", "1.0.0-x", "1.0.0.x"],
    ["1cr", "1rc", "1-CR", "1-RC"],
    ["1a1", "1-alpha-1", "1-a1", "1.alpha1"],
    ["1b2", "1-beta-2", "1beta2"],
    ["1m3", "1-milestone-3", "1milestone3"],
    ["1.foo", "1-foo"],
    ["1.0.0-SNAPSHOT", "1-snapshot", "1.SNAPSHOT"],
]

# (lower, higher) pairs from the ordering rules of the POM reference
RULE_PAIRS = [
    ("1", "1.1"),
    ("1-snapshot", "1"),
    ("1", "1-sp"),
    ("1-foo2", "1-foo10"),
    ("1.foo", "1-1"),
    ("1-1", "1.1"),
    ("1-ga", "1-sp"),
    ("1-ga.1", "1-sp.1"),
    ("1.0-alpha", "1.0"),
    ("1.0-beta2", "1.0-rc1"),
    ("1.9", "1.10"),
    ("1.9", "2.0"),
    ("1.0-alpha", "1.0-beta"),
    ("1.0-beta", "1.0-milestone"),
    ("1.0-milestone", "1.0-rc"),
    ("1.0-rc", "1.0-snapshot"),
    ("1.0-snapshot", "1.0"),
    ("1.0", "1.0-sp"),
    ("1.0-sp", "1.0-zzz"),
    ("1.0-aaa", "1.0-zzz"),
]


def ordered_pairs():
    """Every adjacent pair of the sequences plus the rule pairs."""
    out = []
    for seq in (QUALIFIER_SEQUENCE, NUMBER_SEQUENCE):
        out.extend(zip(seq, seq[1:]))
    out.extend(RULE_PAIRS)
    return out
