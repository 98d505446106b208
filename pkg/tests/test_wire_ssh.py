"""SSH codec tests: banner grammar, plaintext packet framing, KEXINIT
name-lists, host key blobs, and the minimal exchange driver."""

import struct

import pytest
from hypothesis import given, strategies as st

from aliaskit.wire.ssh import (
    MSG_KEX_ECDH_INIT,
    MSG_KEX_ECDH_REPLY,
    MSG_KEXINIT,
    ConnectionClosed,
    FramingError,
    KexNegotiationFailed,
    MalformedBanner,
    MalformedHostKey,
    MalformedKexInit,
    NeedMoreData,
    PacketConn,
    ProtocolError,
    SshKexInit,
    decode_ssh_packet,
    default_client_kexinit,
    encode_kexinit,
    encode_ssh_banner,
    encode_ssh_packet,
    parse_hostkey_blob,
    parse_kexinit,
    parse_ssh_banner,
    run_kex_until_hostkey,
    wire_string,
    x25519_public_bytes,
)

# ---------------------------------------------------------------------------
# banner


def test_banner_with_comment():
    b = parse_ssh_banner(b"SSH-2.0-OpenSSH_8.9p1 Ubuntu-3ubuntu0.1")
    assert b.protoversion == "2.0"
    assert b.softwareversion == "OpenSSH_8.9p1"
    assert b.comments == "Ubuntu-3ubuntu0.1"
    assert b.raw_line == "SSH-2.0-OpenSSH_8.9p1 Ubuntu-3ubuntu0.1"


def test_banner_minimal():
    b = parse_ssh_banner(b"SSH-2.0-X")
    assert b.protoversion == "2.0"
    assert b.softwareversion == "X"
    assert b.comments is None


def test_banner_wrong_prefix():
    with pytest.raises(MalformedBanner):
        parse_ssh_banner(b"HTTP/1.1 400")


def test_banner_missing_dash():
    with pytest.raises(MalformedBanner):
        parse_ssh_banner(b"SSH-2.0")


def test_banner_empty_software_version():
    with pytest.raises(MalformedBanner):
        parse_ssh_banner(b"SSH-2.0- comment")


def test_banner_round_trip_preserves_bytes():
    line = b"SSH-1.99-weird_server v1 (beta)"
    assert encode_ssh_banner(parse_ssh_banner(line)) == line + b"\r\n"


def test_banner_high_bytes_survive():
    line = b"SSH-2.0-caf\xe9d"
    assert encode_ssh_banner(parse_ssh_banner(line)) == line + b"\r\n"


# ---------------------------------------------------------------------------
# packet framing


def test_packet_round_trip_minimum_padding():
    payload = b"\x14" + b"a" * 40
    wire = encode_ssh_packet(payload)
    assert len(wire) % 8 == 0
    assert wire[4] >= 4
    back, consumed = decode_ssh_packet(wire)
    assert back == payload
    assert consumed == len(wire)


def test_packet_oversize_length_rejected():
    wire = struct.pack("!I", 2**31) + b"\x04aaaa"
    with pytest.raises(FramingError):
        decode_ssh_packet(wire)


def test_packet_truncated_needs_more():
    wire = encode_ssh_packet(b"hello")
    with pytest.raises(NeedMoreData):
        decode_ssh_packet(wire[:7])
    with pytest.raises(NeedMoreData):
        decode_ssh_packet(b"\x00\x00")


def test_packet_padding_consumes_everything():
    # padding_length equal to packet_length leaves no payload room
    wire = struct.pack("!IB", 5, 5) + b"\x00" * 4
    with pytest.raises(FramingError):
        decode_ssh_packet(wire)


def test_packet_trailing_bytes_untouched():
    wire = encode_ssh_packet(b"x") + b"LEFTOVER"
    payload, consumed = decode_ssh_packet(wire)
    assert payload == b"x"
    assert wire[consumed:] == b"LEFTOVER"


@given(st.binary(min_size=1, max_size=2048))
def test_packet_round_trip_property(payload):
    back, consumed = decode_ssh_packet(encode_ssh_packet(payload))
    assert back == payload


@given(st.binary(max_size=64))
def test_packet_decoder_total(data):
    try:
        decode_ssh_packet(data)
    except (NeedMoreData, FramingError):
        pass


# ---------------------------------------------------------------------------
# KEXINIT


def _namelist_bytes(text: str) -> bytes:
    return struct.pack("!I", len(text)) + text.encode()


def _fixture_kexinit_bytes() -> bytes:
    lists = [
        "curve25519-sha256,ecdh-sha2-nistp256",
        "ssh-ed25519",
        "aes128-ctr",
        "aes256-ctr,chacha20-poly1305@openssh.com",
        "hmac-sha2-256",
        "hmac-sha2-512",
        "none",
        "none,zlib@openssh.com",
        "",
        "",
    ]
    out = bytes([MSG_KEXINIT]) + bytes(range(16))
    for text in lists:
        out += _namelist_bytes(text)
    return out + b"\x00" + b"\x00\x00\x00\x00"


def test_kexinit_fixture_parses_in_order():
    k = parse_kexinit(_fixture_kexinit_bytes())
    assert k.cookie == bytes(range(16))
    assert k.kex_algorithms == ("curve25519-sha256", "ecdh-sha2-nistp256")
    assert k.server_host_key_algorithms == ("ssh-ed25519",)
    assert k.encryption_c2s == ("aes128-ctr",)
    assert k.encryption_s2c == ("aes256-ctr", "chacha20-poly1305@openssh.com")
    assert k.mac_s2c == ("hmac-sha2-512",)
    assert k.compression_s2c == ("none", "zlib@openssh.com")
    assert k.languages_c2s == ()
    assert k.languages_s2c == ()
    assert k.first_kex_packet_follows is False


def test_kexinit_fixture_reencodes_byte_identical():
    wire = _fixture_kexinit_bytes()
    assert encode_kexinit(parse_kexinit(wire)) == wire


def test_kexinit_wrong_code_rejected():
    with pytest.raises(MalformedKexInit):
        parse_kexinit(b"\x15" + bytes(16))


def test_kexinit_truncated_rejected():
    wire = _fixture_kexinit_bytes()
    with pytest.raises(MalformedKexInit):
        parse_kexinit(wire[:40])


def test_kexinit_trailing_bytes_rejected():
    with pytest.raises(MalformedKexInit):
        parse_kexinit(_fixture_kexinit_bytes() + b"\x00")


names = st.lists(
    st.text(
        alphabet=st.characters(
            min_codepoint=33, max_codepoint=126, exclude_characters=","
        ),
        min_size=1,
        max_size=12,
    ),
    max_size=4,
).map(tuple)


@given(
    cookie=st.binary(min_size=16, max_size=16),
    kex=names,
    hka=names,
    enc=names,
    mac=names,
    follows=st.booleans(),
)
def test_kexinit_round_trip_property(cookie, kex, hka, enc, mac, follows):
    k = SshKexInit(
        cookie=cookie,
        kex_algorithms=kex,
        server_host_key_algorithms=hka,
        encryption_c2s=enc,
        encryption_s2c=enc,
        mac_c2s=mac,
        mac_s2c=mac,
        compression_c2s=("none",),
        compression_s2c=("none",),
        first_kex_packet_follows=follows,
    )
    assert parse_kexinit(encode_kexinit(k)) == k


@given(st.binary(max_size=128))
def test_kexinit_parser_total(payload):
    try:
        parse_kexinit(bytes([MSG_KEXINIT]) + payload)
    except MalformedKexInit:
        pass


# ---------------------------------------------------------------------------
# host key blobs


def test_ed25519_blob_parses():
    blob = wire_string(b"ssh-ed25519") + wire_string(b"k" * 32)
    hk = parse_hostkey_blob(blob)
    assert hk.key_type == "ssh-ed25519"
    assert hk.key_blob == blob


def test_rsa_blob_parses():
    blob = wire_string(b"ssh-rsa") + wire_string(b"\x01\x00\x01") + wire_string(b"\x00" + b"m" * 256)
    assert parse_hostkey_blob(blob).key_type == "ssh-rsa"


def test_blob_with_overrunning_field_rejected():
    blob = wire_string(b"ssh-ed25519") + struct.pack("!I", 99) + b"short"
    with pytest.raises(MalformedHostKey):
        parse_hostkey_blob(blob)


def test_blob_empty_tag_rejected():
    with pytest.raises(MalformedHostKey):
        parse_hostkey_blob(wire_string(b"") + wire_string(b"x"))


# ---------------------------------------------------------------------------
# x25519 helper, checked against the RFC 7748 §6.1 test vector


def test_x25519_public_matches_rfc7748_vector():
    scalar = bytes.fromhex(
        "77076d0a7318a57d3c16c17251b26645df4c2f87ebc0992ab177fba51db92c2a"
    )
    expected = bytes.fromhex(
        "8520f0098930a754748b7ddcb43ef75a0dbf3a0d26381af4eba4a98eaa9b4e6a"
    )
    assert x25519_public_bytes(scalar) == expected


def test_x25519_rejects_short_scalar():
    with pytest.raises(ValueError):
        x25519_public_bytes(b"short")


# ---------------------------------------------------------------------------
# exchange driver over a scripted byte stream


class ScriptedSock:
    """Socket stand-in: recv pops from a pre-loaded buffer, sendall
    accumulates for inspection."""

    def __init__(self, incoming: bytes):
        self._in = incoming
        self.sent = b""

    def recv(self, n: int) -> bytes:
        chunk, self._in = self._in[:n], self._in[n:]
        return chunk

    def sendall(self, data: bytes) -> None:
        self.sent += data


def _server_kexinit(kex=("curve25519-sha256",)) -> SshKexInit:
    return SshKexInit(
        cookie=b"\xaa" * 16,
        kex_algorithms=kex,
        server_host_key_algorithms=("ssh-ed25519",),
        encryption_c2s=("aes128-ctr",),
        encryption_s2c=("aes128-ctr",),
        mac_c2s=("hmac-sha2-256",),
        mac_s2c=("hmac-sha2-256",),
        compression_c2s=("none",),
        compression_s2c=("none",),
    )


def _ecdh_reply_packet(blob: bytes) -> bytes:
    payload = (
        bytes([MSG_KEX_ECDH_REPLY])
        + wire_string(blob)
        + wire_string(b"\x11" * 32)
        + wire_string(b"sig")
    )
    return encode_ssh_packet(payload)


def test_kex_driver_extracts_hostkey():
    blob = wire_string(b"ssh-ed25519") + wire_string(b"K" * 32)
    ignore = encode_ssh_packet(b"\x02junk")
    sock = ScriptedSock(ignore + _ecdh_reply_packet(blob))
    conn = PacketConn(sock)
    hk = run_kex_until_hostkey(
        conn, default_client_kexinit(b"\x00" * 16), _server_kexinit(), b"\x01" * 32
    )
    assert hk.key_type == "ssh-ed25519"
    assert hk.key_blob == blob
    # the driver must have sent exactly one packet: ECDH init with our point
    payload, consumed = decode_ssh_packet(sock.sent)
    assert consumed == len(sock.sent)
    assert payload[0] == MSG_KEX_ECDH_INIT
    assert payload[1:] == wire_string(x25519_public_bytes(b"\x01" * 32))


def test_kex_driver_refuses_unsupported_method():
    sock = ScriptedSock(b"")
    with pytest.raises(KexNegotiationFailed):
        run_kex_until_hostkey(
            PacketConn(sock),
            default_client_kexinit(b"\x00" * 16),
            _server_kexinit(kex=("diffie-hellman-group14-sha256",)),
            b"\x01" * 32,
        )
    assert sock.sent == b""


def test_kex_driver_rejects_repeated_kexinit():
    dup = encode_ssh_packet(encode_kexinit(_server_kexinit()))
    sock = ScriptedSock(dup)
    with pytest.raises(ProtocolError):
        run_kex_until_hostkey(
            PacketConn(sock),
            default_client_kexinit(b"\x00" * 16),
            _server_kexinit(),
            b"\x01" * 32,
        )


def test_kex_driver_disconnect_is_protocol_error():
    disc = encode_ssh_packet(b"\x01\x00\x00\x00\x0b")
    sock = ScriptedSock(disc)
    with pytest.raises(ProtocolError):
        run_kex_until_hostkey(
            PacketConn(sock),
            default_client_kexinit(b"\x00" * 16),
            _server_kexinit(),
            b"\x01" * 32,
        )


def test_packet_conn_line_reading():
    sock = ScriptedSock(b"pre-banner noise\r\nSSH-2.0-srv\r\nrest")
    conn = PacketConn(sock)
    assert conn.read_line() == b"pre-banner noise"
    assert conn.read_line() == b"SSH-2.0-srv"


def test_packet_conn_eof_mid_line():
    conn = PacketConn(ScriptedSock(b"no newline"))
    with pytest.raises(ConnectionClosed):
        conn.read_line()


def test_packet_conn_eof_mid_packet():
    conn = PacketConn(ScriptedSock(encode_ssh_packet(b"abc")[:6]))
    with pytest.raises(ConnectionClosed):
        conn.read_packet()
