"""Composite host identifiers.

An identifier is a canonical serialization of the configuration a host
reveals during the plaintext handshake, hashed into a fixed-width
digest.  Two addresses presenting the same digest under the same
protocol are candidate aliases.

Canonical strings join components with "|" after escaping, so distinct
component tuples can never collide.  The digest function is SHA-256
over the UTF-8 canonical string; it is configured here and documented
in the README, nowhere else.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

from aliaskit.records import (
    PROTO_BGP,
    PROTO_SSH,
    ProbeStatus,
    ScanRecord,
)

IDENTIFIER_CSV_SCHEMA = 1

COMPLETE_FULL = "full"
COMPLETE_PARTIAL = "partial"

# identifier digests bounding more addresses than this are flagged as
# probable factory-default keys; flagged only, never dropped
DEFAULT_KEY_THRESHOLD = 256


class InsufficientArtifacts(Exception):
    """Record lacks even the minimum fields for an identifier."""


@dataclass(frozen=True)
class HostIdentifier:
    protocol_label: str
    canonical_string: str
    digest: str
    completeness: str


class IdentifierRow(NamedTuple):
    """One (address, identifier) mapping in dump/grouping form."""

    address: str
    protocol_label: str
    digest: str
    completeness: str
    source: str


def _esc(text: str) -> str:
    # backslash first, then the delimiter; decoding is unambiguous
    return text.replace("\\", "\\\\").replace("|", "\\p")


def _join(components: list[str]) -> str:
    return "|".join(components)


def _digest(canonical: str) -> str:
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def build_ssh_identifier(record: ScanRecord, include_c2s: bool = False) -> HostIdentifier:
    """Identifier from an SSH record: banner, server-to-client algorithm
    lists in preference order, and the host key when captured.

    The client-to-server lists are kept out of the identifier unless
    ``include_c2s`` is set; both modes serialize distinguishably.
    Missing kexinit or host key demotes completeness to partial, and the
    absent components are omitted (each optional section is tagged, so
    partial strings never collide with full ones).
    """
    if record.target.protocol != PROTO_SSH or record.ssh is None or record.ssh.banner is None:
        raise InsufficientArtifacts("no SSH banner on record for %s" % record.target.address)
    art = record.ssh
    parts = ["ssh", _esc(art.banner.raw_line)]
    complete = True
    if art.kexinit is not None:
        k = art.kexinit
        parts += [
            "alg",
            _esc(",".join(k.kex_algorithms)),
            _esc(",".join(k.server_host_key_algorithms)),
            _esc(",".join(k.encryption_s2c)),
            _esc(",".join(k.mac_s2c)),
            _esc(",".join(k.compression_s2c)),
        ]
        if include_c2s:
            parts += [
                "c2s",
                _esc(",".join(k.encryption_c2s)),
                _esc(",".join(k.mac_c2s)),
                _esc(",".join(k.compression_c2s)),
            ]
    else:
        complete = False
    if art.hostkey is not None:
        parts += ["key", _esc(art.hostkey.key_type), art.hostkey.key_blob.hex()]
    else:
        complete = False
    canonical = _join(parts)
    return HostIdentifier(
        protocol_label=PROTO_SSH,
        canonical_string=canonical,
        digest=_digest(canonical),
        completeness=COMPLETE_FULL if complete else COMPLETE_PARTIAL,
    )


def build_bgp_identifier(record: ScanRecord) -> HostIdentifier:
    """Identifier from a decoded OPEN: every header and body field plus
    the capability TLVs in received order.  NOTIFICATION content is a
    connection outcome, not host configuration, and stays out."""
    if record.target.protocol != PROTO_BGP or record.bgp is None or record.bgp.open_msg is None:
        raise InsufficientArtifacts("no decoded OPEN on record for %s" % record.target.address)
    m = record.bgp.open_msg
    caps = ",".join("%d:%d:%s" % (c.code, c.length, c.value.hex()) for c in m.capabilities)
    canonical = _join(
        [
            "bgp",
            str(m.length),
            str(m.version),
            str(m.my_as),
            str(m.hold_time),
            m.bgp_identifier,
            str(m.opt_params_length),
            caps,
            m.raw_optional_params.hex(),
        ]
    )
    return HostIdentifier(
        protocol_label=PROTO_BGP,
        canonical_string=canonical,
        digest=_digest(canonical),
        completeness=COMPLETE_FULL,
    )


def build_identifier(record: ScanRecord, include_c2s: bool = False) -> HostIdentifier:
    if record.target.protocol == PROTO_SSH:
        return build_ssh_identifier(record, include_c2s=include_c2s)
    return build_bgp_identifier(record)


@dataclass
class ExtractionReport:
    by_protocol: dict = field(default_factory=dict)  # label -> count
    by_completeness: dict = field(default_factory=dict)  # (label, completeness) -> count
    skipped: int = 0
    # among groups of addresses sharing one SSH host key, the fraction
    # whose members advertise differing algorithm capability strings
    key_groups_nonsingleton: int = 0
    key_groups_capability_mismatch: int = 0
    default_key_suspects: list = field(default_factory=list)  # digests over threshold

    @property
    def capability_mismatch_fraction(self) -> float:
        if self.key_groups_nonsingleton == 0:
            return 0.0
        return self.key_groups_capability_mismatch / self.key_groups_nonsingleton


@dataclass
class ExtractionResult:
    mappings: list  # of IdentifierRow
    identifiers: dict  # digest -> HostIdentifier
    report: ExtractionReport


def extract_identifiers(
    records: Iterable[ScanRecord],
    external_rows: Iterable[IdentifierRow] = (),
    include_c2s: bool = False,
    default_key_threshold: int = DEFAULT_KEY_THRESHOLD,
) -> ExtractionResult:
    """Map every qualifying record to (address, identifier).

    Records without the minimum artifacts are counted and skipped, never
    fatal.  External rows (pre-digested identifiers from some other
    methodology) pass straight through under their own protocol label.
    """
    report = ExtractionReport()
    mappings: list[IdentifierRow] = []
    identifiers: dict[str, HostIdentifier] = {}
    seen: set[tuple] = set()
    key_to_addr_caps: dict[tuple, dict] = {}

    for rec in records:
        try:
            ident = build_identifier(rec, include_c2s=include_c2s)
        except InsufficientArtifacts:
            report.skipped += 1
            continue
        row = IdentifierRow(
            address=rec.target.address,
            protocol_label=ident.protocol_label,
            digest=ident.digest,
            completeness=ident.completeness,
            source=rec.source,
        )
        if row in seen:
            continue
        seen.add(row)
        mappings.append(row)
        identifiers[ident.digest] = ident
        report.by_protocol[ident.protocol_label] = report.by_protocol.get(ident.protocol_label, 0) + 1
        ckey = (ident.protocol_label, ident.completeness)
        report.by_completeness[ckey] = report.by_completeness.get(ckey, 0) + 1
        if (
            rec.target.protocol == PROTO_SSH
            and rec.ssh is not None
            and rec.ssh.hostkey is not None
            and rec.ssh.kexinit is not None
        ):
            key = (rec.ssh.hostkey.key_type, rec.ssh.hostkey.key_blob)
            key_to_addr_caps.setdefault(key, {})[rec.target.address] = ident.digest

    for ext in external_rows:
        row = IdentifierRow(
            address=ext.address,
            protocol_label=ext.protocol_label,
            digest=ext.digest,
            completeness=ext.completeness,
            source=ext.source,
        )
        if row in seen:
            continue
        seen.add(row)
        mappings.append(row)
        report.by_protocol[row.protocol_label] = report.by_protocol.get(row.protocol_label, 0) + 1
        ckey = (row.protocol_label, row.completeness)
        report.by_completeness[ckey] = report.by_completeness.get(ckey, 0) + 1

    for addr_digests in key_to_addr_caps.values():
        if len(addr_digests) < 2:
            continue
        report.key_groups_nonsingleton += 1
        if len(set(addr_digests.values())) > 1:
            report.key_groups_capability_mismatch += 1

    addr_count: dict[str, set] = {}
    for row in mappings:
        addr_count.setdefault(row.digest, set()).add(row.address)
    report.default_key_suspects = sorted(
        d for d, addrs in addr_count.items() if len(addrs) > default_key_threshold
    )
    return ExtractionResult(mappings=mappings, identifiers=identifiers, report=report)


# ---------------------------------------------------------------------------
# dump format: CSV address,protocol_label,digest,completeness,source
# (source column optional on read for compatibility with hand-made files)

_CSV_HEADER = ["address", "protocol_label", "digest", "completeness", "source"]


def write_identifier_csv(path: str, rows: Iterable[IdentifierRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_CSV_HEADER)
        for row in sorted(rows):
            w.writerow(list(row))


def read_identifier_csv(path: str) -> list[IdentifierRow]:
    rows = []
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header is None:
            return rows
        if [h.strip() for h in header[:4]] != _CSV_HEADER[:4]:
            raise ValueError("unexpected identifier CSV header: %r" % header)
        for parts in r:
            if not parts:
                continue
            if len(parts) < 4:
                raise ValueError("identifier CSV row too short: %r" % parts)
            if not parts[2]:
                raise ValueError("empty digest in row %r" % parts)
            rows.append(
                IdentifierRow(
                    address=parts[0],
                    protocol_label=parts[1],
                    digest=parts[2],
                    completeness=parts[3],
                    source=parts[4] if len(parts) > 4 and parts[4] else "active",
                )
            )
    return rows
