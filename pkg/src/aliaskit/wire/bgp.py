"""BGP message codec for listen-only use.

Decodes the header, OPEN (with capability TLVs), and NOTIFICATION;
anything else is carried opaquely.  We never speak BGP to a peer, so
encoding exists for OPEN and NOTIFICATION only, to drive simulated
responders and round-trip tests.
"""

from __future__ import annotations

import ipaddress
import struct
from dataclasses import dataclass

MARKER = b"\xff" * 16
HEADER_LEN = 19
MAX_MESSAGE = 4096

TYPE_OPEN = 1
TYPE_UPDATE = 2
TYPE_NOTIFICATION = 3
TYPE_KEEPALIVE = 4

# optional parameter type carrying capability TLVs
PARAM_CAPABILITIES = 2


class BgpWireError(Exception):
    """Base for all BGP codec failures."""


class BadMarker(BgpWireError):
    pass


class LengthOutOfRange(BgpWireError):
    pass


class Truncated(BgpWireError):
    """Buffer or embedded structure ends before its declared length."""


class FieldOutOfRange(BgpWireError):
    """Encoder given a value that does not fit its wire field."""


@dataclass(frozen=True)
class Capability:
    code: int
    value: bytes = b""

    @property
    def length(self) -> int:
        return len(self.value)


@dataclass(frozen=True)
class BgpOpen:
    length: int
    version: int
    my_as: int
    hold_time: int
    bgp_identifier: str
    opt_params_length: int
    capabilities: tuple[Capability, ...]
    raw_optional_params: bytes

    @classmethod
    def from_fields(
        cls,
        my_as: int,
        hold_time: int,
        bgp_identifier: str,
        capabilities: tuple[Capability, ...] = (),
        version: int = 4,
    ) -> "BgpOpen":
        """Build an OPEN from semantic fields, synthesizing the optional
        parameters as one capabilities parameter per capability."""
        raw = b"".join(
            struct.pack("!BB", PARAM_CAPABILITIES, 2 + len(cap.value))
            + struct.pack("!BB", cap.code, len(cap.value))
            + cap.value
            for cap in capabilities
        )
        return cls(
            length=HEADER_LEN + 10 + len(raw),
            version=version,
            my_as=my_as,
            hold_time=hold_time,
            bgp_identifier=bgp_identifier,
            opt_params_length=len(raw),
            capabilities=tuple(capabilities),
            raw_optional_params=raw,
        )


@dataclass(frozen=True)
class BgpNotification:
    length: int
    major_code: int
    minor_code: int
    data: bytes = b""


@dataclass(frozen=True)
class OtherBgp:
    """KEEPALIVE, UPDATE, or a type code we do not interpret."""

    length: int
    msg_type: int
    payload: bytes


def parse_capabilities(raw: bytes) -> tuple[Capability, ...]:
    """Walk optional parameters, expanding capability TLVs.

    Parameters of other types are skipped here; the caller keeps the
    verbatim bytes, so nothing is lost.
    """
    caps = []
    pos = 0
    while pos < len(raw):
        if pos + 2 > len(raw):
            raise Truncated("optional parameter header overruns field")
        ptype, plen = raw[pos], raw[pos + 1]
        pos += 2
        if pos + plen > len(raw):
            raise Truncated("optional parameter value overruns field")
        pval = raw[pos : pos + plen]
        pos += plen
        if ptype != PARAM_CAPABILITIES:
            continue
        cpos = 0
        while cpos < len(pval):
            if cpos + 2 > len(pval):
                raise Truncated("capability header overruns parameter")
            code, clen = pval[cpos], pval[cpos + 1]
            cpos += 2
            if cpos + clen > len(pval):
                raise Truncated("capability value overruns parameter")
            caps.append(Capability(code=code, value=pval[cpos : cpos + clen]))
            cpos += clen
    return tuple(caps)


def decode_bgp_message(data: bytes) -> tuple[BgpOpen | BgpNotification | OtherBgp, int]:
    """Decode one message from the front of ``data``.

    Returns ``(message, bytes_consumed)``.  Trailing bytes are left for
    the caller; feed them back in for the next message.
    """
    if len(data) < HEADER_LEN:
        raise Truncated("have %d bytes, need %d for header" % (len(data), HEADER_LEN))
    if data[:16] != MARKER:
        raise BadMarker("header marker is not 16 bytes of 0xFF")
    length, msg_type = struct.unpack_from("!HB", data, 16)
    if length < HEADER_LEN or length > MAX_MESSAGE:
        raise LengthOutOfRange("message length %d outside %d..%d" % (length, HEADER_LEN, MAX_MESSAGE))
    if len(data) < length:
        raise Truncated("have %d bytes, message declares %d" % (len(data), length))
    body = data[HEADER_LEN:length]

    if msg_type == TYPE_OPEN:
        if len(body) < 10:
            raise Truncated("OPEN body %d bytes, fixed part needs 10" % len(body))
        version, my_as, hold_time, identifier, opt_len = struct.unpack_from("!BHHIB", body, 0)
        if opt_len != len(body) - 10:
            raise LengthOutOfRange(
                "opt params length %d does not match body (%d available)"
                % (opt_len, len(body) - 10)
            )
        raw_params = body[10:]
        msg: BgpOpen | BgpNotification | OtherBgp = BgpOpen(
            length=length,
            version=version,
            my_as=my_as,
            hold_time=hold_time,
            bgp_identifier=str(ipaddress.IPv4Address(identifier)),
            opt_params_length=opt_len,
            capabilities=parse_capabilities(raw_params),
            raw_optional_params=raw_params,
        )
    elif msg_type == TYPE_NOTIFICATION:
        if len(body) < 2:
            raise Truncated("NOTIFICATION body %d bytes, needs 2 code octets" % len(body))
        msg = BgpNotification(
            length=length, major_code=body[0], minor_code=body[1], data=body[2:]
        )
    else:
        msg = OtherBgp(length=length, msg_type=msg_type, payload=body)
    return msg, length


def encode_bgp_open(msg: BgpOpen) -> bytes:
    """Emit the wire form of an OPEN.

    raw_optional_params is authoritative for the variable part, so a
    decoded message re-encodes byte-identically even when it contained
    parameter types we do not model.
    """
    if not 0 <= msg.version <= 255:
        raise FieldOutOfRange("version %d not one octet" % msg.version)
    if not 0 <= msg.my_as <= 0xFFFF:
        raise FieldOutOfRange("my_as %d not two octets" % msg.my_as)
    if not 0 <= msg.hold_time <= 0xFFFF:
        raise FieldOutOfRange("hold_time %d not two octets" % msg.hold_time)
    try:
        identifier = int(ipaddress.IPv4Address(msg.bgp_identifier))
    except (ipaddress.AddressValueError, ValueError) as exc:
        raise FieldOutOfRange("bgp_identifier %r is not a dotted quad" % msg.bgp_identifier) from exc
    raw = msg.raw_optional_params
    if len(raw) > 255:
        raise FieldOutOfRange("optional parameters %d bytes, field is one octet" % len(raw))
    if msg.opt_params_length != len(raw):
        raise FieldOutOfRange(
            "opt_params_length %d != actual %d" % (msg.opt_params_length, len(raw))
        )
    length = HEADER_LEN + 10 + len(raw)
    if msg.length != length:
        raise FieldOutOfRange("length %d != computed %d" % (msg.length, length))
    return (
        MARKER
        + struct.pack("!HB", length, TYPE_OPEN)
        + struct.pack("!BHHIB", msg.version, msg.my_as, msg.hold_time, identifier, len(raw))
        + raw
    )


def encode_bgp_notification(msg: BgpNotification) -> bytes:
    if not 0 <= msg.major_code <= 255:
        raise FieldOutOfRange("major code %d not one octet" % msg.major_code)
    if not 0 <= msg.minor_code <= 255:
        raise FieldOutOfRange("minor code %d not one octet" % msg.minor_code)
    length = HEADER_LEN + 2 + len(msg.data)
    if length > MAX_MESSAGE:
        raise FieldOutOfRange("message length %d exceeds %d" % (length, MAX_MESSAGE))
    if msg.length != length:
        raise FieldOutOfRange("length %d != computed %d" % (msg.length, length))
    return (
        MARKER
        + struct.pack("!HB", length, TYPE_NOTIFICATION)
        + bytes([msg.major_code, msg.minor_code])
        + msg.data
    )
