"""Simulated responder fleet.

A fleet is a set of synthetic hosts, each owning one or more addresses
and answering SSH and/or BGP with planted configuration.  Interfaces of
one host share that host's profiles; that sharing is exactly the
aliasing assumption the resolver pipeline is supposed to recover, so
the fleet can also state the expected alias sets as ground truth.

Everything listens on loopback with one TCP port per (address,
protocol) pair; a resolver hook translates fleet addresses to
(127.0.0.1, port) so the probe engine needs no special privileges.
"""

from __future__ import annotations

import hashlib
import ipaddress
import os
import socket
import threading
from dataclasses import dataclass, field

try:
    import tomllib
except ModuleNotFoundError:  # 3.10
    import tomli as tomllib

from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey

from aliaskit.records import PROTO_BGP, PROTO_SSH
from aliaskit.wire.bgp import (
    BgpNotification,
    BgpOpen,
    Capability,
    encode_bgp_notification,
    encode_bgp_open,
)
from aliaskit.wire.ssh import (
    MSG_KEX_ECDH_INIT,
    MSG_KEX_ECDH_REPLY,
    MSG_KEXINIT,
    PacketConn,
    SshKexInit,
    SshWireError,
    encode_kexinit,
    wire_string,
    x25519_public_bytes,
)

FLEET_SPEC_SCHEMA = 1

SSH_NORMAL = "normal"
SSH_BANNER_THEN_SILENT = "banner_then_silent"

BGP_OPEN_THEN_NOTIFY = "open_then_notify"
BGP_IMMEDIATE_CLOSE = "immediate_close"
BGP_SILENT = "silent"

_SSH_BEHAVIORS = (SSH_NORMAL, SSH_BANNER_THEN_SILENT)
_BGP_BEHAVIORS = (BGP_OPEN_THEN_NOTIFY, BGP_IMMEDIATE_CLOSE, BGP_SILENT)


class FleetSpecError(Exception):
    pass


class PortUnavailable(Exception):
    pass


def _seed_for(host_id: str) -> bytes:
    return hashlib.sha256(("key:" + host_id).encode()).digest()


@dataclass(frozen=True)
class SshProfile:
    banner: str = "SSH-2.0-sim_1.0"
    key_seed: bytes = b"\x00" * 32
    kex: tuple = ("curve25519-sha256",)
    host_key_algorithms: tuple = ("ssh-ed25519",)
    encryption: tuple = ("aes128-ctr", "aes256-ctr")
    mac: tuple = ("hmac-sha2-256",)
    compression: tuple = ("none",)
    behavior: str = SSH_NORMAL

    def kexinit(self) -> SshKexInit:
        return SshKexInit(
            cookie=os.urandom(16),
            kex_algorithms=self.kex,
            server_host_key_algorithms=self.host_key_algorithms,
            encryption_c2s=self.encryption,
            encryption_s2c=self.encryption,
            mac_c2s=self.mac,
            mac_s2c=self.mac,
            compression_c2s=self.compression,
            compression_s2c=self.compression,
        )

    def hostkey_blob(self) -> bytes:
        key = Ed25519PrivateKey.from_private_bytes(self.key_seed)
        pub = key.public_key().public_bytes(
            serialization.Encoding.Raw, serialization.PublicFormat.Raw
        )
        return wire_string(b"ssh-ed25519") + wire_string(pub)

    def surface(self) -> tuple:
        """Everything that feeds the full identifier."""
        return (
            self.banner,
            self.kex,
            self.host_key_algorithms,
            self.encryption,
            self.mac,
            self.compression,
            self.key_seed,
        )


@dataclass(frozen=True)
class BgpProfile:
    my_as: int = 64500
    hold_time: int = 90
    identifier: str = "10.255.0.1"
    capabilities: tuple = ((128, b""), (2, b""))
    behavior: str = BGP_OPEN_THEN_NOTIFY

    def open_message(self) -> BgpOpen:
        return BgpOpen.from_fields(
            my_as=self.my_as,
            hold_time=self.hold_time,
            bgp_identifier=self.identifier,
            capabilities=tuple(Capability(code=c, value=v) for c, v in self.capabilities),
        )

    def surface(self) -> tuple:
        return (self.my_as, self.hold_time, self.identifier, self.capabilities)


@dataclass(frozen=True)
class Interface:
    address: str
    ssh_port: int = 0  # 0 picks an ephemeral port
    bgp_port: int = 0


@dataclass(frozen=True)
class HostSpec:
    host_id: str
    interfaces: tuple
    ssh: SshProfile | None = None
    bgp: BgpProfile | None = None


@dataclass
class FleetSpec:
    hosts: list

    def validate(self) -> None:
        ids = set()
        addresses = set()
        for h in self.hosts:
            if h.host_id in ids:
                raise FleetSpecError("duplicate host id %r" % h.host_id)
            ids.add(h.host_id)
            if not h.interfaces:
                raise FleetSpecError("host %r has no interfaces" % h.host_id)
            for iface in h.interfaces:
                try:
                    ipaddress.ip_address(iface.address)
                except ValueError as exc:
                    raise FleetSpecError(
                        "host %r: bad address %r" % (h.host_id, iface.address)
                    ) from exc
                if iface.address in addresses:
                    raise FleetSpecError("address %r on two hosts" % iface.address)
                addresses.add(iface.address)
            if h.ssh is not None and h.ssh.behavior not in _SSH_BEHAVIORS:
                raise FleetSpecError("host %r: unknown ssh behavior %r" % (h.host_id, h.ssh.behavior))
            if h.bgp is not None and h.bgp.behavior not in _BGP_BEHAVIORS:
                raise FleetSpecError("host %r: unknown bgp behavior %r" % (h.host_id, h.bgp.behavior))

    @classmethod
    def from_toml(cls, text: str) -> "FleetSpec":
        try:
            doc = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise FleetSpecError("spec is not valid TOML: %s" % exc) from exc
        version = doc.get("schema_version", FLEET_SPEC_SCHEMA)
        if version != FLEET_SPEC_SCHEMA:
            raise FleetSpecError("unsupported fleet spec schema %r" % version)
        hosts = []
        for entry in doc.get("host", []):
            if "id" not in entry:
                raise FleetSpecError("host entry without id")
            host_id = str(entry["id"])
            interfaces = []
            for item in entry.get("interfaces", []):
                if isinstance(item, str):
                    interfaces.append(Interface(address=item))
                elif isinstance(item, dict):
                    interfaces.append(
                        Interface(
                            address=str(item["address"]),
                            ssh_port=int(item.get("ssh_port", 0)),
                            bgp_port=int(item.get("bgp_port", 0)),
                        )
                    )
                else:
                    raise FleetSpecError("host %r: bad interface entry %r" % (host_id, item))
            ssh = None
            if "ssh" in entry:
                s = entry["ssh"]
                kwargs = {}
                if "banner" in s:
                    kwargs["banner"] = str(s["banner"])
                if "key_seed" in s:
                    seed = bytes.fromhex(s["key_seed"])
                    if len(seed) != 32:
                        raise FleetSpecError("host %r: key_seed must be 32 bytes" % host_id)
                    kwargs["key_seed"] = seed
                else:
                    kwargs["key_seed"] = _seed_for(host_id)
                for name in ("kex", "host_key_algorithms", "encryption", "mac", "compression"):
                    if name in s:
                        kwargs[name] = tuple(str(x) for x in s[name])
                if "behavior" in s:
                    kwargs["behavior"] = str(s["behavior"])
                ssh = SshProfile(**kwargs)
            bgp = None
            if "bgp" in entry:
                b = entry["bgp"]
                caps = tuple(
                    (int(code), bytes.fromhex(value))
                    for code, value in b.get("capabilities", [[128, ""], [2, ""]])
                )
                bgp = BgpProfile(
                    my_as=int(b.get("my_as", 64500)),
                    hold_time=int(b.get("hold_time", 90)),
                    identifier=str(b.get("identifier", "10.255.0.1")),
                    capabilities=caps,
                    behavior=str(b.get("behavior", BGP_OPEN_THEN_NOTIFY)),
                )
            hosts.append(HostSpec(host_id=host_id, interfaces=tuple(interfaces), ssh=ssh, bgp=bgp))
        spec = cls(hosts=hosts)
        spec.validate()
        return spec

    @classmethod
    def from_toml_file(cls, path: str) -> "FleetSpec":
        with open(path) as fh:
            return cls.from_toml(fh.read())


# ---------------------------------------------------------------------------
# ground truth


@dataclass
class GroundTruth:
    alias_sets: set  # frozensets of addresses, cross-protocol merged
    dual_stack_sets: set  # the subset spanning both families
    per_protocol: dict  # label -> set of frozensets
    confusion_groups: list  # host-id frozensets planted to collide

    def dual_stack_histogram(self) -> dict:
        hist = {"one_v4_one_v6": 0, "total_2_to_10": 0, "over_10": 0}
        for s in self.dual_stack_sets:
            v4 = sum(1 for a in s if ipaddress.ip_address(a).version == 4)
            v6 = len(s) - v4
            if v4 == 1 and v6 == 1:
                hist["one_v4_one_v6"] += 1
            elif len(s) <= 10:
                hist["total_2_to_10"] += 1
            else:
                hist["over_10"] += 1
        return hist


def ground_truth_sets(spec: FleetSpec) -> GroundTruth:
    """Expected sets, straight from host membership.

    Only profiles that yield a full identifier count: a normal SSH
    responder, or a BGP responder that actually sends its OPEN.  Hosts
    planted with identical profile surfaces (the factory-default-key
    case) are expected to merge, and are reported as confusion groups
    rather than hidden.
    """
    identifiable: dict[str, list] = {}
    surfaces: dict[tuple, list] = {}
    for h in spec.hosts:
        labels = []
        if h.ssh is not None and h.ssh.behavior == SSH_NORMAL:
            labels.append(PROTO_SSH)
            surfaces.setdefault(("ssh", h.ssh.surface()), []).append(h)
        if h.bgp is not None and h.bgp.behavior == BGP_OPEN_THEN_NOTIFY:
            labels.append(PROTO_BGP)
            surfaces.setdefault(("bgp", h.bgp.surface()), []).append(h)
        if labels:
            identifiable[h.host_id] = labels

    # merge hosts sharing any planted surface
    parent: dict[str, str] = {hid: hid for hid in identifiable}

    def find(x: str) -> str:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    confusion_groups = []
    for (_, _surface), hosts in surfaces.items():
        if len(hosts) > 1:
            confusion_groups.append(frozenset(h.host_id for h in hosts))
        first = hosts[0].host_id
        for h in hosts[1:]:
            ra, rb = find(first), find(h.host_id)
            if ra != rb:
                parent[rb] = ra

    by_host = {h.host_id: h for h in spec.hosts}
    merged_addrs: dict[str, set] = {}
    for hid in identifiable:
        root = find(hid)
        merged_addrs.setdefault(root, set()).update(
            i.address for i in by_host[hid].interfaces
        )
    alias_sets = {frozenset(addrs) for addrs in merged_addrs.values()}

    dual = set()
    for s in alias_sets:
        versions = {ipaddress.ip_address(a).version for a in s}
        if versions == {4, 6}:
            dual.add(s)

    per_protocol: dict[str, set] = {PROTO_SSH: set(), PROTO_BGP: set()}
    for (label, _surface), hosts in surfaces.items():
        addrs = frozenset(i.address for h in hosts for i in h.interfaces)
        per_protocol[label].add(addrs)

    return GroundTruth(
        alias_sets=alias_sets,
        dual_stack_sets=dual,
        per_protocol=per_protocol,
        confusion_groups=sorted(confusion_groups, key=sorted),
    )


# ---------------------------------------------------------------------------
# live endpoints


def _serve_ssh(conn: socket.socket, profile: SshProfile) -> None:
    try:
        conn.settimeout(10.0)
        conn.sendall((profile.banner + "\r\n").encode("latin-1"))
        if profile.behavior == SSH_BANNER_THEN_SILENT:
            _hold_until_closed(conn)
            return
        pc = PacketConn(conn)
        pc.read_line()  # client identification
        pc.send_packet(encode_kexinit(profile.kexinit()))
        client_kex = pc.read_packet()
        if not client_kex or client_kex[0] != MSG_KEXINIT:
            return
        ecdh_init = pc.read_packet()
        if not ecdh_init or ecdh_init[0] != MSG_KEX_ECDH_INIT:
            return
        ephemeral = os.urandom(32)
        reply = (
            bytes([MSG_KEX_ECDH_REPLY])
            + wire_string(profile.hostkey_blob())
            + wire_string(x25519_public_bytes(ephemeral))
            + wire_string(wire_string(b"ssh-ed25519") + wire_string(b"\x00" * 64))
        )
        pc.send_packet(reply)
        _drain_briefly(conn)
    except (OSError, SshWireError, ValueError):
        pass
    finally:
        try:
            conn.close()
        except OSError:
            pass


def _serve_bgp(conn: socket.socket, profile: BgpProfile) -> None:
    try:
        if profile.behavior == BGP_IMMEDIATE_CLOSE:
            return
        if profile.behavior == BGP_SILENT:
            _hold_until_closed(conn)
            return
        payload = encode_bgp_open(profile.open_message()) + encode_bgp_notification(
            BgpNotification(length=21, major_code=6, minor_code=5)
        )
        conn.sendall(payload)
        _drain_briefly(conn)
    except OSError:
        pass
    finally:
        try:
            conn.close()
        except OSError:
            pass


def _hold_until_closed(conn: socket.socket, limit: float = 30.0) -> None:
    """Keep the connection open, sending nothing, until the peer goes
    away or the limit passes.  Models a silent speaker."""
    conn.settimeout(limit)
    try:
        while conn.recv(4096):
            pass
    except OSError:
        pass


def _drain_briefly(conn: socket.socket) -> None:
    # let the peer read everything and close first; avoids resets
    # racing the last segment
    conn.settimeout(0.5)
    try:
        while conn.recv(4096):
            pass
    except OSError:
        pass


class Fleet:
    """Running endpoints plus the address map to reach them."""

    def __init__(self, bind_host: str):
        self.bind_host = bind_host
        self.addr_map: dict = {}  # (address, protocol) -> port
        self._listeners: list = []
        self._threads: list = []
        self._closed = False
        self.dead_port = self._allocate_dead_port()

    def _allocate_dead_port(self) -> int:
        s = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        s.bind((self.bind_host, 0))
        port = s.getsockname()[1]
        s.close()
        return port

    @property
    def listener_count(self) -> int:
        return len(self._listeners)

    def resolver(self, target) -> tuple:
        """Probe-engine hook: fleet address to loopback endpoint.
        Unknown addresses land on a port nobody listens on."""
        port = self.addr_map.get((target.address, target.protocol))
        if port is None:
            return (self.bind_host, self.dead_port)
        return (self.bind_host, port)

    def addr_map_json(self) -> dict:
        out: dict = {
            "bind_host": self.bind_host,
            "dead_port": self.dead_port,
            "ports": {},
        }
        for (address, protocol), port in sorted(self.addr_map.items()):
            out["ports"].setdefault(protocol, {})[address] = port
        return out

    def _add_listener(self, requested_port: int, handler) -> int:
        s = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        s.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            s.bind((self.bind_host, requested_port))
        except OSError as exc:
            s.close()
            raise PortUnavailable(
                "cannot bind %s:%d: %s" % (self.bind_host, requested_port, exc)
            ) from exc
        s.listen(64)
        port = s.getsockname()[1]
        t = threading.Thread(target=self._accept_loop, args=(s, handler), daemon=True)
        t.start()
        self._listeners.append(s)
        self._threads.append(t)
        return port

    def _accept_loop(self, listener: socket.socket, handler) -> None:
        # polling accept: closing a socket does not wake a thread
        # already blocked in accept(), so block only briefly
        try:
            listener.settimeout(0.2)
        except OSError:  # fleet torn down before this thread ran
            return
        while not self._closed:
            try:
                conn, _ = listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            threading.Thread(target=handler, args=(conn,), daemon=True).start()

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        for s in self._listeners:
            try:
                s.close()
            except OSError:
                pass
        for t in self._threads:
            t.join(timeout=2.0)

    def __enter__(self) -> "Fleet":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def launch_fleet(spec: FleetSpec, bind_host: str = "127.0.0.1") -> Fleet:
    spec.validate()
    fleet = Fleet(bind_host=bind_host)
    try:
        for host in spec.hosts:
            for iface in host.interfaces:
                if host.ssh is not None:
                    profile = host.ssh
                    port = fleet._add_listener(
                        iface.ssh_port, lambda c, p=profile: _serve_ssh(c, p)
                    )
                    fleet.addr_map[(iface.address, PROTO_SSH)] = port
                if host.bgp is not None:
                    profile = host.bgp
                    port = fleet._add_listener(
                        iface.bgp_port, lambda c, p=profile: _serve_bgp(c, p)
                    )
                    fleet.addr_map[(iface.address, PROTO_BGP)] = port
    except PortUnavailable:
        fleet.close()
        raise
    return fleet
