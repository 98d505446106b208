"""Alias-set construction.

Stage one groups addresses that presented the same identifier digest
under the same protocol.  Stage two merges groups across protocols
whenever they share an address, on the reasoning that one responsive
address with two identifiers is still one host.  Dual-stack sets are
the merged sets holding both address families.
"""

from __future__ import annotations

import ipaddress
import json
from dataclasses import dataclass, field
from typing import Iterable

ALIAS_SET_SCHEMA = 1

FLAG_SINGLETON = "singleton"
FLAG_UNSTABLE = "unstable_identifier"

SCOPE_UNION = "union"


def address_sort_key(address: str) -> tuple:
    ip = ipaddress.ip_address(address)
    return (ip.version, int(ip))


def family_of(address: str) -> str:
    return "v4" if ipaddress.ip_address(address).version == 4 else "v6"


@dataclass(frozen=True)
class AliasSet:
    set_id: int
    addresses: frozenset
    digests: frozenset
    protocols: frozenset
    sources: frozenset
    flags: frozenset = frozenset()

    @property
    def v4_count(self) -> int:
        return sum(1 for a in self.addresses if family_of(a) == "v4")

    @property
    def v6_count(self) -> int:
        return sum(1 for a in self.addresses if family_of(a) == "v6")

    def sorted_addresses(self) -> list:
        return sorted(self.addresses, key=address_sort_key)


@dataclass(frozen=True)
class DualStackSet:
    alias_set: AliasSet

    @property
    def v4_count(self) -> int:
        return self.alias_set.v4_count

    @property
    def v6_count(self) -> int:
        return self.alias_set.v6_count


def _assign_ids(groups: list[dict]) -> list[AliasSet]:
    """Stable numbering: sets ordered by their smallest member address."""
    groups.sort(key=lambda g: min(address_sort_key(a) for a in g["addresses"]))
    out = []
    for i, g in enumerate(groups, start=1):
        flags = set(g.get("flags", ()))
        if len(g["addresses"]) == 1:
            flags.add(FLAG_SINGLETON)
        out.append(
            AliasSet(
                set_id=i,
                addresses=frozenset(g["addresses"]),
                digests=frozenset(g["digests"]),
                protocols=frozenset(g["protocols"]),
                sources=frozenset(g["sources"]),
                flags=frozenset(flags),
            )
        )
    return out


def group_by_identifier(rows) -> list[AliasSet]:
    """One set per (protocol, digest).  Rows are (address,
    protocol_label, digest, completeness, source) tuples; duplicates
    are ignored.  Singletons are kept and flagged."""
    buckets: dict[tuple, dict] = {}
    for row in rows:
        key = (row.protocol_label, row.digest)
        b = buckets.get(key)
        if b is None:
            b = buckets[key] = {
                "addresses": set(),
                "digests": {row.digest},
                "protocols": {row.protocol_label},
                "sources": set(),
            }
        b["addresses"].add(row.address)
        b["sources"].add(row.source)
    return _assign_ids(list(buckets.values()))


class _UnionFind:
    def __init__(self):
        self.parent: dict = {}

    def find(self, x):
        root = x
        while self.parent.setdefault(root, root) != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra


@dataclass
class MergeReport:
    # address -> how many distinct protocols vouch for it, histogrammed
    services_per_address: dict = field(default_factory=dict)  # count -> addresses
    single_protocol_sets: dict = field(default_factory=dict)  # label -> count
    multi_protocol_sets: int = 0
    single_protocol_addresses: dict = field(default_factory=dict)  # label -> count
    multi_protocol_addresses: int = 0

    def single_service_address_fraction(self) -> float:
        total = sum(self.services_per_address.values())
        if total == 0:
            return 0.0
        return self.services_per_address.get(1, 0) / total


def merge_cross_protocol(*set_families: Iterable[AliasSet]) -> tuple[list[AliasSet], MergeReport]:
    """Union-find over per-protocol sets: merge whenever two sets share
    an address.  Accepts any number of set families (one per protocol
    or pre-concatenated; the split does not matter)."""
    inputs: list[AliasSet] = []
    for fam in set_families:
        inputs.extend(fam)

    uf = _UnionFind()
    addr_protocols: dict[str, set] = {}
    addr_proto_digests: dict[tuple, set] = {}
    for s in inputs:
        addrs = sorted(s.addresses, key=address_sort_key)
        first = addrs[0]
        for a in addrs:
            uf.union(first, a)
            addr_protocols.setdefault(a, set()).update(s.protocols)
            for p in s.protocols:
                for d in s.digests:
                    addr_proto_digests.setdefault((a, p), set()).add(d)

    components: dict[str, dict] = {}
    for s in inputs:
        root = uf.find(min(s.addresses, key=address_sort_key))
        c = components.get(root)
        if c is None:
            c = components[root] = {
                "addresses": set(),
                "digests": set(),
                "protocols": set(),
                "sources": set(),
                "flags": set(),
            }
        c["addresses"].update(s.addresses)
        c["digests"].update(s.digests)
        c["protocols"].update(s.protocols)
        c["sources"].update(s.sources)

    for (addr, _proto), digests in addr_proto_digests.items():
        if len(digests) > 1:
            components[uf.find(addr)]["flags"].add(FLAG_UNSTABLE)

    merged = _assign_ids(list(components.values()))

    report = MergeReport()
    for addr, protos in addr_protocols.items():
        n = len(protos)
        report.services_per_address[n] = report.services_per_address.get(n, 0) + 1
        if n == 1:
            label = next(iter(protos))
            report.single_protocol_addresses[label] = (
                report.single_protocol_addresses.get(label, 0) + 1
            )
        else:
            report.multi_protocol_addresses += 1
    for s in merged:
        if len(s.protocols) == 1:
            label = next(iter(s.protocols))
            report.single_protocol_sets[label] = report.single_protocol_sets.get(label, 0) + 1
        else:
            report.multi_protocol_sets += 1
    return merged, report


# dual-stack composition buckets
BUCKET_ONE_EACH = "one_v4_one_v6"
BUCKET_2_TO_10 = "total_2_to_10"
BUCKET_OVER_10 = "over_10"


def derive_dual_stack(sets: Iterable[AliasSet]) -> tuple[list[DualStackSet], dict]:
    """Filter merged sets to those spanning both families and bucket
    their sizes: exactly one address per family, up to ten addresses
    total, or larger."""
    histogram = {BUCKET_ONE_EACH: 0, BUCKET_2_TO_10: 0, BUCKET_OVER_10: 0}
    out = []
    for s in sets:
        v4, v6 = s.v4_count, s.v6_count
        if v4 < 1 or v6 < 1:
            continue
        out.append(DualStackSet(alias_set=s))
        total = v4 + v6
        if v4 == 1 and v6 == 1:
            histogram[BUCKET_ONE_EACH] += 1
        elif total <= 10:
            histogram[BUCKET_2_TO_10] += 1
        else:
            histogram[BUCKET_OVER_10] += 1
    return out, histogram


@dataclass(frozen=True)
class CdfRow:
    scope: str
    family: str
    size: int
    sets: int
    cumulative_fraction: float


def _set_size(s: AliasSet, family: str) -> int:
    if family == "all":
        return len(s.addresses)
    return s.v4_count if family == "v4" else s.v6_count


def set_size_distribution(sets: Iterable[AliasSet]) -> list[CdfRow]:
    """Cumulative size distribution per protocol scope and per address
    family.  Family scoping counts only that family's addresses and
    skips sets without any."""
    sets = list(sets)
    scopes = sorted({p for s in sets for p in s.protocols})
    scopes.append(SCOPE_UNION)
    rows: list[CdfRow] = []
    for scope in scopes:
        in_scope = [s for s in sets if scope == SCOPE_UNION or scope in s.protocols]
        for family in ("v4", "v6", "all"):
            sizes: dict[int, int] = {}
            for s in in_scope:
                n = _set_size(s, family)
                if n > 0:
                    sizes[n] = sizes.get(n, 0) + 1
            total = sum(sizes.values())
            cum = 0
            for size in sorted(sizes):
                cum += sizes[size]
                rows.append(
                    CdfRow(
                        scope=scope,
                        family=family,
                        size=size,
                        sets=sizes[size],
                        cumulative_fraction=cum / total,
                    )
                )
    return rows


# ---------------------------------------------------------------------------
# dump format: JSONL, one set per line, everything sorted for diffing


def alias_set_to_json(s: AliasSet) -> dict:
    return {
        "schema_version": ALIAS_SET_SCHEMA,
        "set_id": s.set_id,
        "addresses": s.sorted_addresses(),
        "digests": sorted(s.digests),
        "protocols": sorted(s.protocols),
        "sources": sorted(s.sources),
        "flags": sorted(s.flags),
    }


def alias_set_from_json(d: dict) -> AliasSet:
    return AliasSet(
        set_id=int(d["set_id"]),
        addresses=frozenset(d["addresses"]),
        digests=frozenset(d.get("digests", ())),
        protocols=frozenset(d.get("protocols", ())),
        sources=frozenset(d.get("sources", ())),
        flags=frozenset(d.get("flags", ())),
    )


def write_alias_sets(path: str, sets: Iterable[AliasSet]) -> None:
    with open(path, "w") as fh:
        for s in sorted(sets, key=lambda x: x.set_id):
            fh.write(json.dumps(alias_set_to_json(s), sort_keys=True, separators=(",", ":")))
            fh.write("\n")


def read_alias_sets(path: str) -> list[AliasSet]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(alias_set_from_json(json.loads(line)))
    return out


def as_address_frozensets(sets: Iterable[AliasSet]) -> set:
    """Shape-only view for comparing against ground truth."""
    return {frozenset(s.addresses) for s in sets}
