"""SSH transport-layer codec, limited to what happens before encryption.

Covers the identification line, the binary packet format with no MAC and
zero-filled padding, KEXINIT, and just enough of the curve25519-sha256
exchange to obtain the server's public host key.  Nothing here can carry
an authenticated session; the point is to read the plaintext handshake.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey

# Generous ceiling for a single plaintext packet.  Real KEXINITs are a
# few KiB; anything approaching this is garbage or abuse.
MAX_PACKET = 256 * 1024

# Message codes we need by name.
MSG_DISCONNECT = 1
MSG_IGNORE = 2
MSG_UNIMPLEMENTED = 3
MSG_DEBUG = 4
MSG_KEXINIT = 20
MSG_NEWKEYS = 21
MSG_KEX_ECDH_INIT = 30
MSG_KEX_ECDH_REPLY = 31

SUPPORTED_KEX = "curve25519-sha256"


class SshWireError(Exception):
    """Base for all SSH codec failures."""


class MalformedBanner(SshWireError):
    pass


class NeedMoreData(SshWireError):
    """Buffer ends before the structure does.  Not a protocol violation."""


class FramingError(SshWireError):
    """Packet lengths are internally inconsistent or out of range."""


class MalformedKexInit(SshWireError):
    pass


class MalformedHostKey(SshWireError):
    pass


class KexNegotiationFailed(SshWireError):
    """No overlap with the one exchange method this codec speaks."""


class ProtocolError(SshWireError):
    """Peer sent something legal to encode but wrong for this point in
    the handshake."""


class ConnectionClosed(SshWireError):
    """Peer closed the connection mid-structure."""


# ---------------------------------------------------------------------------
# identification line


@dataclass(frozen=True)
class SshBanner:
    protoversion: str
    softwareversion: str
    comments: str | None
    raw_line: str


def parse_ssh_banner(line: bytes) -> SshBanner:
    """Parse one identification line (CR/LF already stripped).

    The line must look like ``SSH-protoversion-softwareversion`` with an
    optional space-separated comment.  Bytes are decoded as latin-1 so
    nothing is lost on re-encode.
    """
    text = line.decode("latin-1")
    if not text.startswith("SSH-"):
        raise MalformedBanner("line does not start with SSH-")
    rest = text[4:]
    dash = rest.find("-")
    if dash < 0:
        raise MalformedBanner("missing dash after protocol version")
    protoversion = rest[:dash]
    tail = rest[dash + 1 :]
    if not protoversion or " " in protoversion:
        raise MalformedBanner("bad protocol version %r" % protoversion)
    softwareversion, _, comments = tail.partition(" ")
    if not softwareversion:
        raise MalformedBanner("empty software version")
    return SshBanner(
        protoversion=protoversion,
        softwareversion=softwareversion,
        comments=comments if comments else None,
        raw_line=text,
    )


def encode_ssh_banner(banner: SshBanner) -> bytes:
    """Reassemble the identification line plus CRLF."""
    return banner.raw_line.encode("latin-1") + b"\r\n"


# ---------------------------------------------------------------------------
# binary packet layer (plaintext phase only)


def decode_ssh_packet(data: bytes, max_packet: int = MAX_PACKET) -> tuple[bytes, int]:
    """Extract one packet's payload from the front of ``data``.

    Returns ``(payload, bytes_consumed)``.  Raises NeedMoreData if the
    buffer is shorter than the packet claims to be, FramingError if the
    length fields cannot be honest.
    """
    if len(data) < 4:
        raise NeedMoreData("have %d bytes, need 4 for length" % len(data))
    (packet_length,) = struct.unpack("!I", data[:4])
    if packet_length < 5:
        raise FramingError("packet_length %d below minimum 5" % packet_length)
    if packet_length > max_packet:
        raise FramingError("packet_length %d exceeds cap %d" % (packet_length, max_packet))
    total = 4 + packet_length
    if len(data) < total:
        raise NeedMoreData("have %d bytes, need %d" % (len(data), total))
    padding_length = data[4]
    if padding_length < 4:
        raise FramingError("padding_length %d below minimum 4" % padding_length)
    if padding_length > packet_length - 1:
        raise FramingError(
            "padding_length %d leaves no room in packet_length %d"
            % (padding_length, packet_length)
        )
    payload = data[5 : 4 + packet_length - padding_length]
    return payload, total


def encode_ssh_packet(payload: bytes) -> bytes:
    """Wrap a payload in the unencrypted packet format.

    Padding is zero bytes, sized so the whole packet is a multiple of 8
    and the padding is at least 4 bytes long.
    """
    # packet_length covers padding_length byte + payload + padding
    pad = 8 - ((len(payload) + 5) % 8)
    if pad < 4:
        pad += 8
    packet_length = 1 + len(payload) + pad
    return struct.pack("!IB", packet_length, pad) + payload + b"\x00" * pad


# ---------------------------------------------------------------------------
# wire primitives


def wire_string(data: bytes) -> bytes:
    return struct.pack("!I", len(data)) + data


def _read_uint32(data: bytes, pos: int) -> tuple[int, int]:
    if pos + 4 > len(data):
        raise NeedMoreData("uint32 at offset %d overruns buffer" % pos)
    return struct.unpack_from("!I", data, pos)[0], pos + 4


def _read_string(data: bytes, pos: int) -> tuple[bytes, int]:
    n, pos = _read_uint32(data, pos)
    if pos + n > len(data):
        raise NeedMoreData("string of %d bytes at offset %d overruns buffer" % (n, pos))
    return data[pos : pos + n], pos + n


def _read_namelist(data: bytes, pos: int) -> tuple[tuple[str, ...], int]:
    raw, pos = _read_string(data, pos)
    try:
        text = raw.decode("ascii")
    except UnicodeDecodeError as exc:
        raise MalformedKexInit("name-list is not ASCII") from exc
    if not text:
        return (), pos
    names = text.split(",")
    if any(not n for n in names):
        raise MalformedKexInit("empty name in name-list %r" % text)
    return tuple(names), pos


def _encode_namelist(names: tuple[str, ...]) -> bytes:
    return wire_string(",".join(names).encode("ascii"))


# ---------------------------------------------------------------------------
# KEXINIT


@dataclass(frozen=True)
class SshKexInit:
    """Algorithm advertisement.  Every list keeps wire order, which is
    preference order and part of the host's fingerprintable surface."""

    cookie: bytes
    kex_algorithms: tuple[str, ...]
    server_host_key_algorithms: tuple[str, ...]
    encryption_c2s: tuple[str, ...]
    encryption_s2c: tuple[str, ...]
    mac_c2s: tuple[str, ...]
    mac_s2c: tuple[str, ...]
    compression_c2s: tuple[str, ...]
    compression_s2c: tuple[str, ...]
    languages_c2s: tuple[str, ...] = ()
    languages_s2c: tuple[str, ...] = ()
    first_kex_packet_follows: bool = False


_KEXINIT_LISTS = (
    "kex_algorithms",
    "server_host_key_algorithms",
    "encryption_c2s",
    "encryption_s2c",
    "mac_c2s",
    "mac_s2c",
    "compression_c2s",
    "compression_s2c",
    "languages_c2s",
    "languages_s2c",
)


def parse_kexinit(payload: bytes) -> SshKexInit:
    """Decode a KEXINIT payload (message code byte included)."""
    if not payload or payload[0] != MSG_KEXINIT:
        raise MalformedKexInit(
            "payload does not start with KEXINIT code (got %r)" % payload[:1]
        )
    if len(payload) < 17:
        raise MalformedKexInit("payload too short for cookie")
    cookie = payload[1:17]
    pos = 17
    lists = {}
    try:
        for name in _KEXINIT_LISTS:
            lists[name], pos = _read_namelist(payload, pos)
        if pos >= len(payload):
            raise MalformedKexInit("missing first_kex_packet_follows flag")
        follows = payload[pos] != 0
        pos += 1
        _, pos = _read_uint32(payload, pos)  # reserved, value ignored
    except NeedMoreData as exc:
        raise MalformedKexInit(str(exc)) from exc
    if pos != len(payload):
        raise MalformedKexInit("%d trailing bytes after KEXINIT" % (len(payload) - pos))
    return SshKexInit(cookie=cookie, first_kex_packet_follows=follows, **lists)


def encode_kexinit(kex: SshKexInit) -> bytes:
    """Encode back to a payload.  Inverse of parse_kexinit."""
    if len(kex.cookie) != 16:
        raise MalformedKexInit("cookie must be 16 bytes, got %d" % len(kex.cookie))
    out = [bytes([MSG_KEXINIT]), kex.cookie]
    for name in _KEXINIT_LISTS:
        out.append(_encode_namelist(getattr(kex, name)))
    out.append(b"\x01" if kex.first_kex_packet_follows else b"\x00")
    out.append(b"\x00\x00\x00\x00")
    return b"".join(out)


# Client-side advertisement sent by the prober.  Frozen so that recorded
# handshakes stay comparable across runs; bump the version when editing.
CLIENT_LIST_VERSION = 1

_HOST_KEY_ALGS = (
    "ssh-ed25519",
    "rsa-sha2-512",
    "rsa-sha2-256",
    "ecdsa-sha2-nistp256",
    "ssh-rsa",
)
_ENC_ALGS = ("chacha20-poly1305@openssh.com", "aes128-ctr", "aes256-ctr")
_MAC_ALGS = ("hmac-sha2-256", "hmac-sha1")


def default_client_kexinit(cookie: bytes | None = None) -> SshKexInit:
    """The advertisement our prober sends.  Offers only the one kex
    method the codec can actually drive."""
    if cookie is None:
        cookie = os.urandom(16)
    return SshKexInit(
        cookie=cookie,
        kex_algorithms=(SUPPORTED_KEX,),
        server_host_key_algorithms=_HOST_KEY_ALGS,
        encryption_c2s=_ENC_ALGS,
        encryption_s2c=_ENC_ALGS,
        mac_c2s=_MAC_ALGS,
        mac_s2c=_MAC_ALGS,
        compression_c2s=("none",),
        compression_s2c=("none",),
    )


# ---------------------------------------------------------------------------
# host key blob


@dataclass(frozen=True)
class SshHostKey:
    key_type: str
    key_blob: bytes


def parse_hostkey_blob(blob: bytes) -> SshHostKey:
    """Validate a public key blob and pull out its type tag.

    Standard key formats are a type string followed by length-prefixed
    fields, so we can check internal consistency without knowing each
    algorithm: every field must land exactly at the end of the blob.
    """
    try:
        tag_raw, pos = _read_string(blob, 0)
        while pos < len(blob):
            _, pos = _read_string(blob, pos)
    except NeedMoreData as exc:
        raise MalformedHostKey("embedded lengths overrun blob") from exc
    try:
        tag = tag_raw.decode("ascii")
    except UnicodeDecodeError as exc:
        raise MalformedHostKey("key type tag is not ASCII") from exc
    if not tag:
        raise MalformedHostKey("empty key type tag")
    return SshHostKey(key_type=tag, key_blob=blob)


# ---------------------------------------------------------------------------
# packet-level connection and the minimal kex drive


class PacketConn:
    """Byte-stream wrapper that frames plaintext SSH packets.

    ``sock`` needs recv/sendall; timeouts are whatever the socket was
    configured with and surface as the socket's own exceptions.
    """

    def __init__(self, sock, max_packet: int = MAX_PACKET):
        self._sock = sock
        self._max_packet = max_packet
        self._buf = b""

    def read_line(self, limit: int = 8192) -> bytes:
        """Read one LF-terminated line, stripping the terminator and any
        preceding CR.  Used for the identification exchange."""
        while b"\n" not in self._buf:
            if len(self._buf) > limit:
                raise FramingError("line exceeds %d bytes" % limit)
            chunk = self._sock.recv(4096)
            if not chunk:
                raise ConnectionClosed("closed while reading line")
            self._buf += chunk
        line, self._buf = self._buf.split(b"\n", 1)
        return line.rstrip(b"\r")

    def read_packet(self) -> bytes:
        while True:
            try:
                payload, consumed = decode_ssh_packet(self._buf, self._max_packet)
            except NeedMoreData:
                chunk = self._sock.recv(4096)
                if not chunk:
                    raise ConnectionClosed("closed mid-packet") from None
                self._buf += chunk
                continue
            self._buf = self._buf[consumed:]
            return payload

    def send_packet(self, payload: bytes) -> None:
        self._sock.sendall(encode_ssh_packet(payload))

    def send_raw(self, data: bytes) -> None:
        self._sock.sendall(data)


def _read_expected(conn: PacketConn, want: int) -> bytes:
    """Next payload with code ``want``, skipping IGNORE and DEBUG."""
    while True:
        payload = conn.read_packet()
        if not payload:
            raise ProtocolError("empty packet payload")
        code = payload[0]
        if code in (MSG_IGNORE, MSG_DEBUG):
            continue
        if code == MSG_DISCONNECT:
            raise ProtocolError("peer sent DISCONNECT before message %d" % want)
        if code != want:
            raise ProtocolError("expected message %d, got %d" % (want, code))
        return payload


def x25519_public_bytes(scalar: bytes) -> bytes:
    """Public point for a 32-byte exchange scalar."""
    try:
        key = X25519PrivateKey.from_private_bytes(scalar)
    except ValueError as exc:
        raise ValueError("ephemeral scalar must be 32 bytes") from exc
    return key.public_key().public_bytes(
        serialization.Encoding.Raw, serialization.PublicFormat.Raw
    )


def run_kex_until_hostkey(
    conn: PacketConn,
    client_kexinit: SshKexInit,
    server_kexinit: SshKexInit,
    ephemeral_scalar: bytes,
) -> SshHostKey:
    """Drive curve25519-sha256 just far enough to receive the host key.

    Both KEXINITs must already be known (ours sent or about to be, the
    server's parsed); the server must list the supported method or this
    refuses rather than guessing at an exchange it cannot encode.  Stops
    at the ECDH reply: the key is extracted, nothing is signed by us and
    the server's signature is not verified, and no NEWKEYS is sent.
    """
    if SUPPORTED_KEX not in server_kexinit.kex_algorithms:
        raise KexNegotiationFailed(
            "server offers no supported kex method: %r"
            % (server_kexinit.kex_algorithms,)
        )
    if not set(client_kexinit.server_host_key_algorithms) & set(
        server_kexinit.server_host_key_algorithms
    ):
        raise KexNegotiationFailed(
            "no common host key algorithm: %r"
            % (server_kexinit.server_host_key_algorithms,)
        )
    public = x25519_public_bytes(ephemeral_scalar)
    conn.send_packet(bytes([MSG_KEX_ECDH_INIT]) + wire_string(public))
    reply = _read_expected(conn, MSG_KEX_ECDH_REPLY)
    try:
        blob, _ = _read_string(reply, 1)
    except NeedMoreData as exc:
        raise ProtocolError("truncated ECDH reply") from exc
    return parse_hostkey_blob(blob)
