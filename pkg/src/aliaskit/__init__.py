"""Multi-protocol IP alias resolution and dual-stack inference toolkit.

Probes SSH and BGP endpoints, extracts composite host identifiers from the
plaintext part of each handshake, groups IPv4/IPv6 addresses that share an
identifier into alias and dual-stack sets, cross-validates the sets between
protocols, and produces AS-level analyses.  A built-in simulated host fleet
(`aliaskit.simnet`) makes the whole pipeline verifiable offline.
"""

__version__ = "0.1.0"

# Versions of every on-disk format this package reads or writes.  Bump a
# value when its format changes incompatibly; readers reject newer versions.
SCHEMA_VERSIONS = {
    "scan_record_jsonl": 1,
    "alias_set_jsonl": 1,
    "identifier_csv": 1,
    "external_service_jsonl": 1,
    "external_identifier_csv": 1,
    "fleet_spec_toml": 1,
    "report_bundle": 1,
}
