"""AS-level enrichment: prefix-to-origin lookups and the per-AS
rollups, plus the report bundle writer.

The prefix table keeps one dict per (family, prefix length) keyed by
the masked network integer, so a lookup is a walk down the lengths
present in the table, most specific first.
"""

from __future__ import annotations

import csv
import ipaddress
import json
import os
from dataclasses import dataclass, field
from typing import Iterable

from aliaskit.grouping import AliasSet, CdfRow, DualStackSet, SCOPE_UNION

REPORT_BUNDLE_SCHEMA = 1


class ParseError(Exception):
    pass


class PrefixTable:
    def __init__(self, provenance: str = ""):
        self.provenance = provenance
        self.duplicates = 0
        # family version -> plen -> {masked_prefix_int: asn}
        self._tables: dict = {4: {}, 6: {}}
        self._plens: dict = {4: [], 6: []}

    def add(self, prefix: str, asn: int) -> None:
        net = ipaddress.ip_network(prefix, strict=True)
        fam = net.version
        plen = net.prefixlen
        table = self._tables[fam].setdefault(plen, {})
        key = int(net.network_address)
        if key in table:
            self.duplicates += 1
        table[key] = asn
        if plen not in self._plens[fam]:
            self._plens[fam] = sorted(self._tables[fam], reverse=True)

    def lookup(self, address: str):
        ip = ipaddress.ip_address(address)
        fam = ip.version
        bits = 32 if fam == 4 else 128
        value = int(ip)
        for plen in self._plens[fam]:
            masked = (value >> (bits - plen)) << (bits - plen) if plen else 0
            asn = self._tables[fam][plen].get(masked)
            if asn is not None:
                return asn
        return None

    def entries(self) -> list:
        """(prefix, plen, asn) triples; feed for scan-everything checks."""
        out = []
        for fam, by_len in self._tables.items():
            for plen, table in by_len.items():
                for key, asn in table.items():
                    addr = ipaddress.ip_address(key)
                    out.append(("%s/%d" % (addr, plen), plen, asn))
        return out

    def __len__(self) -> int:
        return sum(len(t) for by_len in self._tables.values() for t in by_len.values())


def load_prefix_table(path: str) -> PrefixTable:
    """One mapping per line: ``prefix/len<whitespace>asn``.  Blank lines
    and #-comments are allowed; anything else is a ParseError naming the
    line."""
    table = PrefixTable(provenance=os.path.basename(path))
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            parts = text.split()
            if len(parts) != 2:
                raise ParseError("line %d: expected 'prefix asn', got %r" % (lineno, text))
            prefix, asn_text = parts
            try:
                asn = int(asn_text)
                table.add(prefix, asn)
            except ValueError as exc:
                raise ParseError("line %d: %s" % (lineno, exc)) from exc
    return table


# ---------------------------------------------------------------------------
# per-set ASN analyses


def _scopes_of(sets: list) -> list:
    scopes = sorted({p for s in sets for p in s.protocols})
    scopes.append(SCOPE_UNION)
    return scopes


def _in_scope(s: AliasSet, scope: str) -> bool:
    return scope == SCOPE_UNION or scope in s.protocols


@dataclass
class AsnPerSetResult:
    rows: list  # CdfRow with size = distinct ASN count
    unmapped_sets: dict  # scope -> sets with no mappable address
    unmapped_address_fraction: float

    def multi_as_fraction(self, scope: str) -> float:
        """Fraction of scope's mapped sets touching more than one AS."""
        total = 0
        multi = 0
        for r in self.rows:
            if r.scope != scope:
                continue
            total += r.sets
            if r.size > 1:
                multi += r.sets
        return multi / total if total else 0.0


def asn_per_set_distribution(sets: Iterable[AliasSet], table: PrefixTable) -> AsnPerSetResult:
    """Distinct origin-AS count per set, as a CDF per protocol scope.
    Addresses the table cannot place are skipped; sets with nothing
    mappable are excluded and tallied."""
    sets = list(sets)
    asn_cache: dict = {}

    def asn_of(addr: str):
        if addr not in asn_cache:
            asn_cache[addr] = table.lookup(addr)
        return asn_cache[addr]

    unmapped_sets: dict = {}
    counts: dict = {}  # scope -> {asn_count: sets}
    for s in sets:
        asns = {asn_of(a) for a in s.addresses}
        asns.discard(None)
        for scope in _scopes_of([s]):
            if not _in_scope(s, scope):
                continue
            if not asns:
                unmapped_sets[scope] = unmapped_sets.get(scope, 0) + 1
                continue
            bucket = counts.setdefault(scope, {})
            bucket[len(asns)] = bucket.get(len(asns), 0) + 1

    rows = []
    for scope in sorted(counts):
        total = sum(counts[scope].values())
        cum = 0
        for n in sorted(counts[scope]):
            cum += counts[scope][n]
            rows.append(
                CdfRow(scope=scope, family="all", size=n, sets=counts[scope][n], cumulative_fraction=cum / total)
            )
    all_addresses = {a for s in sets for a in s.addresses}
    unmapped_addrs = sum(1 for a in all_addresses if asn_of(a) is None)
    fraction = unmapped_addrs / len(all_addresses) if all_addresses else 0.0
    return AsnPerSetResult(rows=rows, unmapped_sets=unmapped_sets, unmapped_address_fraction=fraction)


@dataclass
class SetsPerAsResult:
    counts: dict  # scope -> {asn: set count}
    top: dict  # scope -> [(asn, count)] best-first

    def top_table(self, scope: str) -> list:
        return self.top.get(scope, [])


def sets_per_as(
    sets: Iterable[AliasSet],
    table: PrefixTable,
    top_n: int = 10,
    dual_stack: Iterable[DualStackSet] = (),
) -> SetsPerAsResult:
    """Attribute every set to each AS its addresses map into (a set
    spanning k ASes counts once in each of the k).  Scopes: one per
    protocol, the union, sets attributed by their IPv6 addresses only,
    and dual-stack sets."""
    sets = list(sets)
    dual_sets = [d.alias_set for d in dual_stack]

    def a_is_v6(a: str) -> bool:
        return ipaddress.ip_address(a).version == 6

    def asns_for(s: AliasSet, family: str | None = None) -> set:
        out = set()
        for a in s.addresses:
            if family == "v6" and not a_is_v6(a):
                continue
            asn = table.lookup(a)
            if asn is not None:
                out.add(asn)
        return out

    counts: dict = {}

    def tally(scope: str, s: AliasSet, family: str | None = None) -> None:
        for asn in asns_for(s, family):
            bucket = counts.setdefault(scope, {})
            bucket[asn] = bucket.get(asn, 0) + 1

    for s in sets:
        for p in s.protocols:
            tally(p, s)
        tally(SCOPE_UNION, s)
        if s.v6_count:
            tally("v6", s, family="v6")
    for s in dual_sets:
        tally("dual_stack", s)

    top = {}
    for scope, bucket in counts.items():
        ranked = sorted(bucket.items(), key=lambda kv: (-kv[1], kv[0]))
        top[scope] = ranked[:top_n]
    return SetsPerAsResult(counts=counts, top=top)


# ---------------------------------------------------------------------------
# report bundle


@dataclass
class ReportInputs:
    merged_sets: list
    dual_stack: list = field(default_factory=list)
    dual_histogram: dict = field(default_factory=dict)
    size_cdf: list = field(default_factory=list)  # CdfRow
    asn_per_set: AsnPerSetResult | None = None
    sets_per_as_result: SetsPerAsResult | None = None
    overview_rows: list = field(default_factory=list)  # ingest overlap rows
    agreement_reports: list = field(default_factory=list)
    meta_extra: dict = field(default_factory=dict)


def _write_csv(path: str, header: list, rows: list) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def emit_report(inputs: ReportInputs, out_dir: str) -> list:
    """Write the analysis bundle: one CSV per table/plot source plus a
    metadata JSON.  Content is fully determined by the inputs; rerunning
    on the same data must reproduce every byte.  Returns the filenames
    written."""
    os.makedirs(out_dir, exist_ok=True)
    written = []

    def out(name: str) -> str:
        written.append(name)
        return os.path.join(out_dir, name)

    sets = list(inputs.merged_sets)
    scopes = _scopes_of(sets) if sets else []
    rows = []
    for scope in scopes:
        in_scope = [s for s in sets if _in_scope(s, scope)]
        rows.append(
            [
                scope,
                len(in_scope),
                sum(1 for s in in_scope if len(s.addresses) > 1),
                sum(len(s.addresses) for s in in_scope),
                sum(s.v4_count for s in in_scope),
                sum(s.v6_count for s in in_scope),
            ]
        )
    _write_csv(
        out("alias_sets_overview.csv"),
        ["scope", "sets", "non_singleton_sets", "addresses", "v4_addresses", "v6_addresses"],
        rows,
    )

    dual = list(inputs.dual_stack)
    _write_csv(
        out("dual_stack_overview.csv"),
        ["sets", "v4_addresses", "v6_addresses"],
        [[len(dual), sum(d.v4_count for d in dual), sum(d.v6_count for d in dual)]],
    )
    hist = inputs.dual_histogram
    _write_csv(
        out("dual_stack_composition.csv"),
        ["bucket", "sets"],
        [[k, hist[k]] for k in sorted(hist)],
    )

    _write_csv(
        out("set_size_cdf.csv"),
        ["scope", "family", "size", "sets", "cumulative_fraction"],
        [
            [r.scope, r.family, r.size, r.sets, "%.6f" % r.cumulative_fraction]
            for r in inputs.size_cdf
        ],
    )

    if inputs.overview_rows:
        _write_csv(
            out("dataset_overview.csv"),
            ["protocol", "family", "active", "imported", "overlap", "union"],
            inputs.overview_rows,
        )

    if inputs.agreement_reports:
        _write_csv(
            out("validation_agreement.csv"),
            ["pair_a", "pair_b", "universe_size", "sample_size", "agree", "disagree"],
            [
                [r.a_label, r.b_label, r.universe_size, r.sample_size, r.agree, r.disagree]
                for r in inputs.agreement_reports
            ],
        )

    meta: dict = {
        "schema_version": REPORT_BUNDLE_SCHEMA,
        "sets": len(sets),
        "dual_stack_sets": len(dual),
        "as_attribution_rule": "a set counts once in every AS covering any of its addresses",
    }
    if inputs.asn_per_set is not None:
        _write_csv(
            out("asn_per_set_cdf.csv"),
            ["scope", "asn_count", "sets", "cumulative_fraction"],
            [
                [r.scope, r.size, r.sets, "%.6f" % r.cumulative_fraction]
                for r in inputs.asn_per_set.rows
            ],
        )
        meta["unmapped_address_fraction"] = round(
            inputs.asn_per_set.unmapped_address_fraction, 6
        )
        meta["unmapped_sets"] = {
            k: v for k, v in sorted(inputs.asn_per_set.unmapped_sets.items())
        }
    if inputs.sets_per_as_result is not None:
        _write_csv(
            out("sets_per_as.csv"),
            ["scope", "asn", "sets"],
            [
                [scope, asn, count]
                for scope in sorted(inputs.sets_per_as_result.counts)
                for asn, count in sorted(inputs.sets_per_as_result.counts[scope].items())
            ],
        )
        _write_csv(
            out("top_ases.csv"),
            ["scope", "rank", "asn", "sets"],
            [
                [scope, rank, asn, count]
                for scope in sorted(inputs.sets_per_as_result.top)
                for rank, (asn, count) in enumerate(inputs.sets_per_as_result.top[scope], start=1)
            ],
        )
    meta.update(inputs.meta_extra)
    with open(out("report_meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return sorted(written)
