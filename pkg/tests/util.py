"""Shared builders for synthetic scan records."""

from aliaskit.records import (
    BgpArtifacts,
    ProbeStatus,
    ProbeTarget,
    ScanRecord,
    SshArtifacts,
)
from aliaskit.wire.bgp import BgpNotification, BgpOpen, Capability
from aliaskit.wire.ssh import SshKexInit, SshHostKey, parse_ssh_banner, wire_string


def make_kexinit(
    kex=("curve25519-sha256",),
    hka=("ssh-ed25519",),
    enc=("aes128-ctr",),
    mac=("hmac-sha2-256",),
    comp=("none",),
    cookie=b"\x00" * 16,
):
    return SshKexInit(
        cookie=cookie,
        kex_algorithms=tuple(kex),
        server_host_key_algorithms=tuple(hka),
        encryption_c2s=tuple(enc),
        encryption_s2c=tuple(enc),
        mac_c2s=tuple(mac),
        mac_s2c=tuple(mac),
        compression_c2s=tuple(comp),
        compression_s2c=tuple(comp),
    )


def make_hostkey(key_material=b"K" * 32):
    blob = wire_string(b"ssh-ed25519") + wire_string(key_material)
    return SshHostKey(key_type="ssh-ed25519", key_blob=blob)


def ssh_record(
    address,
    banner="SSH-2.0-sim_1.0",
    kexinit=None,
    hostkey=None,
    with_kexinit=True,
    with_hostkey=True,
    source="active",
    timestamp=0.0,
):
    if with_kexinit and kexinit is None:
        kexinit = make_kexinit()
    if with_hostkey and hostkey is None:
        hostkey = make_hostkey()
    art = SshArtifacts(
        banner=parse_ssh_banner(banner.encode()),
        kexinit=kexinit if with_kexinit else None,
        hostkey=hostkey if with_hostkey else None,
        hostkey_unavailable=with_kexinit and not with_hostkey,
    )
    status = (
        ProbeStatus.FULL_HANDSHAKE if with_kexinit else ProbeStatus.BANNER_ONLY
    )
    return ScanRecord(
        target=ProbeTarget(address=address, port=22, protocol="ssh"),
        status=status,
        timestamp=timestamp,
        ssh=art,
        source=source,
    )


def bgp_record(
    address,
    my_as=64500,
    hold_time=90,
    identifier="10.0.0.1",
    caps=((128, b""), (2, b"")),
    with_open=True,
    with_notification=False,
    source="active",
    timestamp=0.0,
):
    open_msg = None
    if with_open:
        open_msg = BgpOpen.from_fields(
            my_as=my_as,
            hold_time=hold_time,
            bgp_identifier=identifier,
            capabilities=tuple(Capability(code=c, value=v) for c, v in caps),
        )
    notification = BgpNotification(length=21, major_code=6, minor_code=5) if with_notification else None
    art = BgpArtifacts(open_msg=open_msg, notification=notification)
    status = ProbeStatus.FULL_HANDSHAKE if (with_open or with_notification) else ProbeStatus.IMMEDIATE_CLOSE
    return ScanRecord(
        target=ProbeTarget(address=address, port=179, protocol="bgp"),
        status=status,
        timestamp=timestamp,
        bgp=art if (with_open or with_notification) else BgpArtifacts(),
        source=source,
    )
