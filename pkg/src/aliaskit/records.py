"""Scan-record model and its JSONL serialization.

One record is one probe outcome for one (address, port, protocol)
target.  The same shape is used for live probe results and for records
synthesized from imported snapshots, distinguished by ``source``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

from aliaskit.wire.bgp import BgpNotification, BgpOpen, parse_capabilities
from aliaskit.wire.ssh import SshBanner, SshHostKey, SshKexInit, parse_ssh_banner

SCAN_RECORD_SCHEMA = 1

PROTO_SSH = "ssh"
PROTO_BGP = "bgp"
DEFAULT_PORTS = {PROTO_SSH: 22, PROTO_BGP: 179}

SOURCE_ACTIVE = "active"
SOURCE_IMPORTED = "imported"


class ProbeStatus(str, Enum):
    NO_CONNECT = "no_connect"
    CONNECT_ONLY = "connect_only"
    BANNER_ONLY = "banner_only"
    FULL_HANDSHAKE = "full_handshake"
    IMMEDIATE_CLOSE = "immediate_close"
    TIMEOUT = "timeout"


@dataclass(frozen=True, order=True)
class ProbeTarget:
    address: str
    port: int
    protocol: str

    def __post_init__(self):
        if self.protocol not in (PROTO_SSH, PROTO_BGP):
            raise ValueError("unknown protocol %r" % self.protocol)


@dataclass(frozen=True)
class SshArtifacts:
    banner: SshBanner | None = None
    kexinit: SshKexInit | None = None
    hostkey: SshHostKey | None = None
    # set when kex negotiation could not reach the key (unsupported
    # method on the server side); the identifier then stays partial
    hostkey_unavailable: bool = False


@dataclass(frozen=True)
class BgpArtifacts:
    open_msg: BgpOpen | None = None
    notification: BgpNotification | None = None
    # undecoded or leftover bytes, kept for offline analysis
    raw: bytes = b""


@dataclass(frozen=True)
class ScanRecord:
    target: ProbeTarget
    status: ProbeStatus
    timestamp: float
    ssh: SshArtifacts | None = None
    bgp: BgpArtifacts | None = None
    error: str | None = None
    source: str = SOURCE_ACTIVE

    def __post_init__(self):
        if self.target.protocol == PROTO_SSH and self.bgp is not None:
            raise ValueError("SSH record carrying BGP artifacts")
        if self.target.protocol == PROTO_BGP and self.ssh is not None:
            raise ValueError("BGP record carrying SSH artifacts")
        if self.status is ProbeStatus.FULL_HANDSHAKE and self.target.protocol == PROTO_SSH:
            if self.ssh is None or self.ssh.banner is None or self.ssh.kexinit is None:
                raise ValueError("SSH full handshake requires banner and kexinit")


# ---------------------------------------------------------------------------
# JSON mapping.  Kexinit lists are spelled out field by field so the
# files stay greppable; bytes become hex.


def _kexinit_to_json(k: SshKexInit) -> dict:
    return {
        "cookie": k.cookie.hex(),
        "kex_algorithms": list(k.kex_algorithms),
        "server_host_key_algorithms": list(k.server_host_key_algorithms),
        "encryption_c2s": list(k.encryption_c2s),
        "encryption_s2c": list(k.encryption_s2c),
        "mac_c2s": list(k.mac_c2s),
        "mac_s2c": list(k.mac_s2c),
        "compression_c2s": list(k.compression_c2s),
        "compression_s2c": list(k.compression_s2c),
        "languages_c2s": list(k.languages_c2s),
        "languages_s2c": list(k.languages_s2c),
        "first_kex_packet_follows": k.first_kex_packet_follows,
    }


def _kexinit_from_json(d: dict) -> SshKexInit:
    return SshKexInit(
        cookie=bytes.fromhex(d.get("cookie", "")),
        kex_algorithms=tuple(d["kex_algorithms"]),
        server_host_key_algorithms=tuple(d["server_host_key_algorithms"]),
        encryption_c2s=tuple(d["encryption_c2s"]),
        encryption_s2c=tuple(d["encryption_s2c"]),
        mac_c2s=tuple(d["mac_c2s"]),
        mac_s2c=tuple(d["mac_s2c"]),
        compression_c2s=tuple(d["compression_c2s"]),
        compression_s2c=tuple(d["compression_s2c"]),
        languages_c2s=tuple(d.get("languages_c2s", ())),
        languages_s2c=tuple(d.get("languages_s2c", ())),
        first_kex_packet_follows=bool(d.get("first_kex_packet_follows", False)),
    )


def _open_to_json(m: BgpOpen) -> dict:
    return {
        "length": m.length,
        "version": m.version,
        "my_as": m.my_as,
        "hold_time": m.hold_time,
        "bgp_identifier": m.bgp_identifier,
        "opt_params_length": m.opt_params_length,
        "raw_optional_params": m.raw_optional_params.hex(),
    }


def _open_from_json(d: dict) -> BgpOpen:
    raw = bytes.fromhex(d["raw_optional_params"])
    return BgpOpen(
        length=int(d["length"]),
        version=int(d["version"]),
        my_as=int(d["my_as"]),
        hold_time=int(d["hold_time"]),
        bgp_identifier=d["bgp_identifier"],
        opt_params_length=int(d["opt_params_length"]),
        capabilities=parse_capabilities(raw),
        raw_optional_params=raw,
    )


def record_to_json(rec: ScanRecord) -> dict:
    out: dict = {
        "schema_version": SCAN_RECORD_SCHEMA,
        "target": {
            "address": rec.target.address,
            "port": rec.target.port,
            "protocol": rec.target.protocol,
        },
        "status": rec.status.value,
        "timestamp": rec.timestamp,
        "source": rec.source,
    }
    if rec.error is not None:
        out["error"] = rec.error
    if rec.ssh is not None:
        ssh: dict = {}
        if rec.ssh.banner is not None:
            ssh["banner"] = rec.ssh.banner.raw_line
        if rec.ssh.kexinit is not None:
            ssh["kexinit"] = _kexinit_to_json(rec.ssh.kexinit)
        if rec.ssh.hostkey is not None:
            ssh["hostkey"] = {
                "key_type": rec.ssh.hostkey.key_type,
                "key_blob": rec.ssh.hostkey.key_blob.hex(),
            }
        if rec.ssh.hostkey_unavailable:
            ssh["hostkey_unavailable"] = True
        out["ssh"] = ssh
    if rec.bgp is not None:
        bgp: dict = {}
        if rec.bgp.open_msg is not None:
            bgp["open"] = _open_to_json(rec.bgp.open_msg)
        if rec.bgp.notification is not None:
            bgp["notification"] = {
                "major_code": rec.bgp.notification.major_code,
                "minor_code": rec.bgp.notification.minor_code,
                "data": rec.bgp.notification.data.hex(),
                "length": rec.bgp.notification.length,
            }
        if rec.bgp.raw:
            bgp["raw"] = rec.bgp.raw.hex()
        out["bgp"] = bgp
    return out


def record_from_json(d: dict) -> ScanRecord:
    """Rebuild a record from its JSON form.  Unknown keys are ignored
    for forward compatibility; missing required keys raise KeyError."""
    t = d["target"]
    target = ProbeTarget(address=t["address"], port=int(t["port"]), protocol=t["protocol"])
    ssh = None
    if "ssh" in d and d["ssh"] is not None:
        s = d["ssh"]
        banner = None
        if "banner" in s:
            banner = parse_ssh_banner(s["banner"].encode("latin-1"))
        kexinit = _kexinit_from_json(s["kexinit"]) if "kexinit" in s else None
        hostkey = None
        if "hostkey" in s:
            hostkey = SshHostKey(
                key_type=s["hostkey"]["key_type"],
                key_blob=bytes.fromhex(s["hostkey"]["key_blob"]),
            )
        ssh = SshArtifacts(
            banner=banner,
            kexinit=kexinit,
            hostkey=hostkey,
            hostkey_unavailable=bool(s.get("hostkey_unavailable", False)),
        )
    bgp = None
    if "bgp" in d and d["bgp"] is not None:
        b = d["bgp"]
        open_msg = _open_from_json(b["open"]) if "open" in b else None
        notification = None
        if "notification" in b:
            n = b["notification"]
            notification = BgpNotification(
                length=int(n.get("length", 21)),
                major_code=int(n["major_code"]),
                minor_code=int(n["minor_code"]),
                data=bytes.fromhex(n.get("data", "")),
            )
        bgp = BgpArtifacts(
            open_msg=open_msg,
            notification=notification,
            raw=bytes.fromhex(b.get("raw", "")),
        )
    return ScanRecord(
        target=target,
        status=ProbeStatus(d["status"]),
        timestamp=float(d["timestamp"]),
        ssh=ssh,
        bgp=bgp,
        error=d.get("error"),
        source=d.get("source", SOURCE_ACTIVE),
    )


def record_to_line(rec: ScanRecord) -> str:
    return json.dumps(record_to_json(rec), sort_keys=True, separators=(",", ":"))


def record_from_line(line: str) -> ScanRecord:
    return record_from_json(json.loads(line))
