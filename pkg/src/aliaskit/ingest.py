"""Input normalization: our own JSONL scan records, external service
snapshots, and pre-digested external identifiers, merged into one store
with per-source coverage accounting.
"""

from __future__ import annotations

import csv
import datetime
import ipaddress
import json
from dataclasses import dataclass, field
from typing import Iterable

from aliaskit.grouping import family_of
from aliaskit.identity import IdentifierRow
from aliaskit.records import (
    DEFAULT_PORTS,
    PROTO_BGP,
    PROTO_SSH,
    SOURCE_IMPORTED,
    BgpArtifacts,
    ProbeStatus,
    ProbeTarget,
    ScanRecord,
    SshArtifacts,
    record_from_json,
    record_to_line,
    _kexinit_from_json,
    _open_from_json,
)
from aliaskit.wire.ssh import MalformedBanner, SshHostKey, parse_ssh_banner

EXTERNAL_SERVICE_SCHEMA = 1
EXTERNAL_IDENTIFIER_SCHEMA = 1


@dataclass
class LoadResult:
    records: list
    skipped: list  # (line number, reason)


def load_scan_records(path: str) -> LoadResult:
    """Read scan-record JSONL.  A malformed line is skipped and
    reported with its number; an unreadable file raises."""
    records = []
    skipped = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(record_from_json(json.loads(line)))
            except (ValueError, KeyError, TypeError) as exc:
                skipped.append((lineno, "%s: %s" % (type(exc).__name__, exc)))
    return LoadResult(records=records, skipped=skipped)


def write_scan_records(path: str, records: Iterable[ScanRecord]) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(record_to_line(rec))
            fh.write("\n")


# ---------------------------------------------------------------------------
# external service snapshots
#
# Supported subset, one JSON object per line:
#   address        required, IPv4 or IPv6 literal
#   port           required, integer
#   service_name   required, "ssh" or "bgp"
#   snapshot_date  optional, "YYYY-MM-DD"
#   ssh            for ssh rows: {banner, kexinit?, hostkey?} with the
#                  same field layout as scan-record JSONL
#   bgp            for bgp rows: {open: {...}} likewise
# Anything outside this subset is a per-record schema mismatch, counted
# and skipped, never guessed at.


@dataclass
class ImportResult:
    records: list
    dropped_nonstandard_port: int = 0
    dropped_ipv6: int = 0
    skipped: list = field(default_factory=list)  # (line number, reason)


def _date_to_timestamp(text: str) -> float:
    d = datetime.datetime.strptime(text, "%Y-%m-%d").replace(tzinfo=datetime.timezone.utc)
    return d.timestamp()


def import_external_services(
    path: str,
    port_filter: bool = True,
    include_ipv6: bool = False,
) -> ImportResult:
    """Map snapshot rows into imported scan records.

    Rows on non-default ports are dropped when the filter is on (the
    default).  IPv6 rows are dropped unless opted in, mirroring the
    IPv4-only role of this source in the merged store.  SSH rows with
    banner, kexinit, and host key synthesize a full handshake; a banner
    alone synthesizes a banner-only record.
    """
    result = ImportResult(records=[])
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except ValueError as exc:
                result.skipped.append((lineno, "bad JSON: %s" % exc))
                continue
            try:
                record = _external_row_to_record(row)
            except _RowMismatch as exc:
                result.skipped.append((lineno, str(exc)))
                continue
            if not include_ipv6 and family_of(record.target.address) == "v6":
                result.dropped_ipv6 += 1
                continue
            if port_filter and record.target.port != DEFAULT_PORTS[record.target.protocol]:
                result.dropped_nonstandard_port += 1
                continue
            result.records.append(record)
    return result


class _RowMismatch(Exception):
    pass


def _external_row_to_record(row: dict) -> ScanRecord:
    if not isinstance(row, dict):
        raise _RowMismatch("row is not an object")
    service = row.get("service_name")
    if service not in (PROTO_SSH, PROTO_BGP):
        raise _RowMismatch("service_name %r unsupported" % service)
    address = row.get("address")
    try:
        address = str(ipaddress.ip_address(address))
    except ValueError:
        raise _RowMismatch("bad address %r" % address) from None
    try:
        port = int(row["port"])
    except (KeyError, TypeError, ValueError):
        raise _RowMismatch("bad or missing port") from None
    timestamp = 0.0
    if "snapshot_date" in row:
        try:
            timestamp = _date_to_timestamp(str(row["snapshot_date"]))
        except ValueError:
            raise _RowMismatch("bad snapshot_date %r" % row["snapshot_date"]) from None
    target = ProbeTarget(address=address, port=port, protocol=service)

    if service == PROTO_SSH:
        body = row.get("ssh")
        if not isinstance(body, dict) or "banner" not in body:
            raise _RowMismatch("ssh row without banner")
        try:
            banner = parse_ssh_banner(str(body["banner"]).encode("latin-1"))
        except MalformedBanner as exc:
            raise _RowMismatch("bad banner: %s" % exc) from None
        kexinit = None
        hostkey = None
        try:
            if "kexinit" in body:
                kexinit = _kexinit_from_json(body["kexinit"])
            if "hostkey" in body:
                hostkey = SshHostKey(
                    key_type=str(body["hostkey"]["key_type"]),
                    key_blob=bytes.fromhex(body["hostkey"]["key_blob"]),
                )
        except (KeyError, TypeError, ValueError) as exc:
            raise _RowMismatch("bad ssh artifact fields: %s" % exc) from None
        full = kexinit is not None and hostkey is not None
        return ScanRecord(
            target=target,
            status=ProbeStatus.FULL_HANDSHAKE if full else ProbeStatus.BANNER_ONLY,
            timestamp=timestamp,
            ssh=SshArtifacts(banner=banner, kexinit=kexinit, hostkey=hostkey),
            source=SOURCE_IMPORTED,
        )

    body = row.get("bgp")
    if not isinstance(body, dict) or "open" not in body:
        raise _RowMismatch("bgp row without open fields")
    try:
        open_msg = _open_from_json(body["open"])
    except (KeyError, TypeError, ValueError) as exc:
        raise _RowMismatch("bad open fields: %s" % exc) from None
    return ScanRecord(
        target=target,
        status=ProbeStatus.FULL_HANDSHAKE,
        timestamp=timestamp,
        bgp=BgpArtifacts(open_msg=open_msg),
        source=SOURCE_IMPORTED,
    )


# ---------------------------------------------------------------------------
# external identifiers (the bridge for methodologies we do not run)


def read_external_identifiers(path: str) -> list:
    """CSV ``address,protocol_label,digest,source``; rows become
    full-completeness identifier mappings under their own label."""
    rows = []
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header is None:
            return rows
        if [h.strip() for h in header] != ["address", "protocol_label", "digest", "source"]:
            raise ValueError("unexpected external identifier header: %r" % header)
        for lineno, parts in enumerate(r, start=2):
            if not parts:
                continue
            if len(parts) != 4 or not all(parts[:3]):
                raise ValueError("line %d: malformed row %r" % (lineno, parts))
            rows.append(
                IdentifierRow(
                    address=parts[0],
                    protocol_label=parts[1],
                    digest=parts[2],
                    completeness="full",
                    source=parts[3] or SOURCE_IMPORTED,
                )
            )
    return rows


# ---------------------------------------------------------------------------
# merged store


@dataclass
class MergedStore:
    records: list
    overlap_rows: list  # [protocol, family, active, imported, overlap, union]
    duplicates_dropped: int = 0

    def by_protocol(self, protocol: str) -> list:
        return [r for r in self.records if r.target.protocol == protocol]


def merge_sources(active: Iterable[ScanRecord], imported: Iterable[ScanRecord]) -> MergedStore:
    """Concatenate both sources, dropping byte-identical duplicates so
    re-importing a file is a no-op.  Both observations of one address
    are kept: disagreement between them is data, not noise.

    Overlap accounting counts responsive addresses (anything that got
    past the TCP handshake) per protocol, family, and source.
    """
    records = []
    fingerprints = set()
    dropped = 0
    for rec in list(active) + list(imported):
        fp = record_to_line(rec)
        if fp in fingerprints:
            dropped += 1
            continue
        fingerprints.add(fp)
        records.append(rec)

    responsive: dict = {}  # (protocol, family, source) -> set of addresses
    for rec in records:
        if rec.status is ProbeStatus.NO_CONNECT:
            continue
        key = (rec.target.protocol, family_of(rec.target.address), rec.source)
        responsive.setdefault(key, set()).add(rec.target.address)

    rows = []
    pairs = sorted({(p, f) for (p, f, _s) in responsive})
    for protocol, family in pairs:
        a = responsive.get((protocol, family, "active"), set())
        i = responsive.get((protocol, family, SOURCE_IMPORTED), set())
        rows.append([protocol, family, len(a), len(i), len(a & i), len(a | i)])
    return MergedStore(records=records, overlap_rows=rows, duplicates_dropped=dropped)
