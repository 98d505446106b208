"""Probe engine: target planning, pacing, and the two protocol probes.

Etiquette rules are enforced centrally: a global token bucket caps the
overall probe rate, and a per-address ledger guarantees no two probes
reach one address closer together than the configured interval,
regardless of protocol.
"""

from __future__ import annotations

import ipaddress
import os
import random
import socket
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable

from aliaskit.records import (
    DEFAULT_PORTS,
    PROTO_BGP,
    PROTO_SSH,
    BgpArtifacts,
    ProbeStatus,
    ProbeTarget,
    ScanRecord,
    SshArtifacts,
)
from aliaskit.wire import bgp as bgpwire
from aliaskit.wire import ssh as sshwire

# refuse to expand a prefix list into more targets than this; desk-scale
# tooling, not an internet scanner
MAX_PLANNED_TARGETS = 1 << 16


class EmptyInput(Exception):
    pass


class TooManyTargets(Exception):
    pass


def plan_targets(
    inputs: Iterable[str],
    protocols: Iterable[str],
    seed: int,
    ports: dict | None = None,
) -> list[ProbeTarget]:
    """Expand addresses/prefixes into a deterministic shuffled target list.

    Prefixes expand to every address they contain (including network
    and broadcast; a responsive host is a responsive host).  Shuffling
    spreads probes over the input space; the seed pins the order.
    """
    ports = dict(DEFAULT_PORTS, **(ports or {}))
    protocols = list(protocols)
    if not protocols:
        raise EmptyInput("no protocols selected")
    addresses: list[str] = []
    seen: set[str] = set()
    count = 0
    for item in inputs:
        item = item.strip()
        if not item:
            continue
        if "/" in item:
            net = ipaddress.ip_network(item, strict=False)
            if net.num_addresses + count > MAX_PLANNED_TARGETS:
                raise TooManyTargets(
                    "expansion exceeds %d addresses" % MAX_PLANNED_TARGETS
                )
            expanded = (str(net[i]) for i in range(net.num_addresses))
        else:
            expanded = (str(ipaddress.ip_address(item)),)
        for addr in expanded:
            if addr not in seen:
                seen.add(addr)
                addresses.append(addr)
                count += 1
    if not addresses:
        raise EmptyInput("no addresses given")
    targets = [
        ProbeTarget(address=a, port=ports[p], protocol=p)
        for a in addresses
        for p in protocols
    ]
    random.Random(seed).shuffle(targets)
    return targets


class Pacer:
    """Reservation-based pacing: one global send slot every 1/rate
    seconds, plus a per-address floor of `per_target_interval` between
    consecutive probes to the same address.

    acquire() blocks until the caller may send, and returns the
    reserved send time so tests can audit the schedule.
    """

    def __init__(
        self,
        rate: float,
        per_target_interval: float = 1.0,
        clock: Callable[[], float] = time.monotonic,
        sleeper: Callable[[float], None] = time.sleep,
    ):
        if rate <= 0:
            raise ValueError("rate must be positive")
        self._spacing = 1.0 / rate
        self._interval = per_target_interval
        self._clock = clock
        self._sleeper = sleeper
        self._lock = threading.Lock()
        # bucket starts empty: first token becomes available one
        # spacing after start
        self._next_slot = clock() + self._spacing
        self._addr_next: dict[str, float] = {}
        self.sends: list[tuple[float, str]] = []

    def acquire(self, address: str) -> float:
        with self._lock:
            now = self._clock()
            at = max(now, self._next_slot, self._addr_next.get(address, 0.0))
            self._next_slot = at + self._spacing
            self._addr_next[address] = at + self._interval
            self.sends.append((at, address))
        wait = at - self._clock()
        if wait > 0:
            self._sleeper(wait)
        return at


@dataclass
class ProbeConfig:
    connect_timeout: float = 5.0
    ssh_read_timeout: float = 10.0
    bgp_wait: float = 2.0
    # hook mapping a ProbeTarget to the (host, port) actually dialed;
    # None dials the target address itself
    resolver: Callable[[ProbeTarget], tuple] | None = None


def _endpoint(target: ProbeTarget, config: ProbeConfig) -> tuple:
    if config.resolver is not None:
        return config.resolver(target)
    return (target.address, target.port)


def _connect(target: ProbeTarget, config: ProbeConfig) -> socket.socket | None:
    host, port = _endpoint(target, config)
    try:
        return socket.create_connection((host, port), timeout=config.connect_timeout)
    except OSError:
        return None


def _now() -> float:
    return time.time()


def probe_ssh(target: ProbeTarget, config: ProbeConfig | None = None) -> ScanRecord:
    """Banner, server KEXINIT, and host key where negotiable.

    Outcomes are encoded in the record status; nothing raises past this
    function short of interpreter-level errors.
    """
    config = config or ProbeConfig()
    ts = _now()
    sock = _connect(target, config)
    if sock is None:
        return ScanRecord(target=target, status=ProbeStatus.NO_CONNECT, timestamp=ts)
    banner = None
    try:
        sock.settimeout(config.ssh_read_timeout)
        conn = sshwire.PacketConn(sock)
        line = b""
        for _ in range(64):  # servers may send free-text lines first
            line = conn.read_line()
            if line.startswith(b"SSH-"):
                break
        banner = sshwire.parse_ssh_banner(line)
        conn.send_raw(b"SSH-2.0-aliaskit_probe\r\n")
        client_kex = sshwire.default_client_kexinit()
        conn.send_packet(sshwire.encode_kexinit(client_kex))
        payload = conn.read_packet()
        if not payload or payload[0] != sshwire.MSG_KEXINIT:
            return ScanRecord(
                target=target,
                status=ProbeStatus.BANNER_ONLY,
                timestamp=ts,
                ssh=SshArtifacts(banner=banner),
                error="expected KEXINIT, got message %d" % (payload[0] if payload else -1),
            )
        server_kex = sshwire.parse_kexinit(payload)
        try:
            hostkey = sshwire.run_kex_until_hostkey(
                conn, client_kex, server_kex, os.urandom(32)
            )
        except sshwire.KexNegotiationFailed as exc:
            return ScanRecord(
                target=target,
                status=ProbeStatus.FULL_HANDSHAKE,
                timestamp=ts,
                ssh=SshArtifacts(banner=banner, kexinit=server_kex, hostkey_unavailable=True),
                error="hostkey unavailable: %s" % exc,
            )
        return ScanRecord(
            target=target,
            status=ProbeStatus.FULL_HANDSHAKE,
            timestamp=ts,
            ssh=SshArtifacts(banner=banner, kexinit=server_kex, hostkey=hostkey),
        )
    except socket.timeout:
        if banner is not None:
            return ScanRecord(
                target=target,
                status=ProbeStatus.BANNER_ONLY,
                timestamp=ts,
                ssh=SshArtifacts(banner=banner),
                error="read timeout after banner",
            )
        return ScanRecord(
            target=target, status=ProbeStatus.TIMEOUT, timestamp=ts, error="no banner before timeout"
        )
    except sshwire.ConnectionClosed as exc:
        if banner is not None:
            return ScanRecord(
                target=target,
                status=ProbeStatus.BANNER_ONLY,
                timestamp=ts,
                ssh=SshArtifacts(banner=banner),
                error=str(exc),
            )
        return ScanRecord(
            target=target, status=ProbeStatus.IMMEDIATE_CLOSE, timestamp=ts, error=str(exc)
        )
    except sshwire.SshWireError as exc:
        if banner is not None:
            return ScanRecord(
                target=target,
                status=ProbeStatus.BANNER_ONLY,
                timestamp=ts,
                ssh=SshArtifacts(banner=banner),
                error="%s: %s" % (type(exc).__name__, exc),
            )
        return ScanRecord(
            target=target,
            status=ProbeStatus.CONNECT_ONLY,
            timestamp=ts,
            error="%s: %s" % (type(exc).__name__, exc),
        )
    except OSError as exc:
        return ScanRecord(
            target=target,
            status=ProbeStatus.CONNECT_ONLY if banner is None else ProbeStatus.BANNER_ONLY,
            timestamp=ts,
            ssh=SshArtifacts(banner=banner) if banner is not None else None,
            error="socket error: %s" % exc,
        )
    finally:
        try:
            sock.close()
        except OSError:
            pass


def probe_bgp(target: ProbeTarget, config: ProbeConfig | None = None) -> ScanRecord:
    """Connect, say nothing, and wait out the window.

    Whatever arrives is decoded as a message stream; an unprompted
    close is its own outcome, and silence times out.  We never send a
    byte of BGP.
    """
    config = config or ProbeConfig()
    ts = _now()
    sock = _connect(target, config)
    if sock is None:
        return ScanRecord(target=target, status=ProbeStatus.NO_CONNECT, timestamp=ts)
    data = b""
    try:
        sock.settimeout(config.bgp_wait)
        try:
            chunk = sock.recv(4096)
        except socket.timeout:
            return ScanRecord(
                target=target,
                status=ProbeStatus.TIMEOUT,
                timestamp=ts,
                bgp=BgpArtifacts(),
                error="no data within %.1fs" % config.bgp_wait,
            )
        if not chunk:
            return ScanRecord(
                target=target, status=ProbeStatus.IMMEDIATE_CLOSE, timestamp=ts, bgp=BgpArtifacts()
            )
        data = chunk
        # the peer spoke; briefly collect whatever else is in flight
        sock.settimeout(0.3)
        try:
            while True:
                chunk = sock.recv(4096)
                if not chunk:
                    break
                data += chunk
        except socket.timeout:
            pass
    except OSError as exc:
        return ScanRecord(
            target=target,
            status=ProbeStatus.CONNECT_ONLY,
            timestamp=ts,
            bgp=BgpArtifacts(raw=data),
            error="socket error: %s" % exc,
        )
    finally:
        try:
            sock.close()
        except OSError:
            pass

    open_msg = None
    notification = None
    error = None
    rest = data
    decoded_any = False
    while rest:
        try:
            msg, used = bgpwire.decode_bgp_message(rest)
        except bgpwire.BgpWireError as exc:
            error = "%s: %s" % (type(exc).__name__, exc)
            break
        decoded_any = True
        rest = rest[used:]
        if isinstance(msg, bgpwire.BgpOpen) and open_msg is None:
            open_msg = msg
        elif isinstance(msg, bgpwire.BgpNotification) and notification is None:
            notification = msg
    if decoded_any:
        return ScanRecord(
            target=target,
            status=ProbeStatus.FULL_HANDSHAKE,
            timestamp=ts,
            bgp=BgpArtifacts(open_msg=open_msg, notification=notification, raw=rest),
            error=error,
        )
    return ScanRecord(
        target=target,
        status=ProbeStatus.CONNECT_ONLY,
        timestamp=ts,
        bgp=BgpArtifacts(raw=data),
        error=error or "undecodable data",
    )


def probe_target(target: ProbeTarget, config: ProbeConfig | None = None) -> ScanRecord:
    if target.protocol == PROTO_SSH:
        return probe_ssh(target, config)
    return probe_bgp(target, config)


@dataclass
class ScanSummary:
    total: int = 0
    by_status: dict = field(default_factory=dict)
    retried: int = 0
    duration: float = 0.0

    def add(self, record: ScanRecord) -> None:
        self.total += 1
        key = record.status.value
        self.by_status[key] = self.by_status.get(key, 0) + 1


def run_scan(
    targets: Iterable[ProbeTarget],
    rate: float,
    per_target_interval: float = 1.0,
    concurrency: int = 8,
    config: ProbeConfig | None = None,
    retries: int = 0,
    on_record: Callable[[ScanRecord], None] | None = None,
    pacer: Pacer | None = None,
) -> tuple[list[ScanRecord], ScanSummary]:
    """Probe every target exactly once (plus optional retries), paced.

    A worker that blows up still yields a record: conservation of
    targets is the one invariant the engine must never lose.  Records
    are returned in completion order; `on_record` sees them as they
    land (called under a lock, so a file writer is safe).
    """
    config = config or ProbeConfig()
    targets = list(targets)
    pacer = pacer or Pacer(rate=rate, per_target_interval=per_target_interval)
    summary = ScanSummary()
    records: list[ScanRecord] = []
    emit_lock = threading.Lock()
    started = time.monotonic()

    def work(target: ProbeTarget) -> None:
        try:
            pacer.acquire(target.address)
            record = probe_target(target, config)
            attempt = 0
            while (
                record.status in (ProbeStatus.NO_CONNECT, ProbeStatus.TIMEOUT)
                and attempt < retries
            ):
                attempt += 1
                pacer.acquire(target.address)
                record = probe_target(target, config)
            if attempt:
                with emit_lock:
                    summary.retried += 1
        except Exception as exc:  # engine isolation: never drop a target
            record = ScanRecord(
                target=target,
                status=ProbeStatus.NO_CONNECT,
                timestamp=_now(),
                error="task-error: %s: %s" % (type(exc).__name__, exc),
            )
        with emit_lock:
            records.append(record)
            summary.add(record)
            if on_record is not None:
                on_record(record)

    if targets:
        with ThreadPoolExecutor(max_workers=max(1, concurrency)) as pool:
            list(pool.map(work, targets))
    summary.duration = time.monotonic() - started
    return records, summary
