"""Wire formats: probe packets, echo replies and ICMPv6 error messages.

All packets are raw IPv6 packets without link-layer framing and without
extension headers. A probe is exactly 80 bytes::

    0   40  IPv6 header (payload length 40, next header 58)
    40   1  ICMPv6 type 128
    41   1  code 0
    42   2  checksum
    44   4  token (identifier = high 16 bits, sequence number = low 16 bits)
    48  32  HMAC-SHA-256(key, token)

Responses are validated statelessly: the last 40 bytes of any reply must be
the echoed ICMPv6 header of one of our probes, so the MAC is checked before
anything else is parsed.
"""

from __future__ import annotations

import enum
import hashlib
import hmac
import os
import struct
from typing import Callable, NamedTuple, Optional

ICMPV6 = 58
IPV6_HEADER_LEN = 40
ECHO_REQUEST = 128
ECHO_REPLY = 129
ERROR_TYPES = (1, 2, 3, 4)
DEST_UNREACHABLE, PACKET_TOO_BIG, TIME_EXCEEDED, PARAMETER_PROBLEM = ERROR_TYPES
MAC_LEN = 32
TRAILER_LEN = 8 + MAC_LEN  # echo header + MAC
PROBE_LEN = IPV6_HEADER_LEN + TRAILER_LEN
KEY_LEN = 32

_IPV6 = struct.Struct("!IHBB16s16s")
_VTCFL = 6 << 28


class BadMac(Exception):
    """Trailing 40 bytes do not carry a token authenticated by our key."""


class Reason(enum.Enum):
    TOO_SHORT = "TooShort"
    OUTER_HEADER = "OuterHeader"
    UNEXPECTED_TYPE = "UnexpectedType"
    BAD_CHECKSUM = "BadChecksum"
    EMBED_TRUNCATED = "EmbeddedTruncated"
    EMBED_VERSION = "EmbeddedVersion"
    EMBED_PAYLOAD_LENGTH = "EmbeddedPayloadLength"
    EMBED_NEXT_HEADER = "EmbeddedNextHeader"
    EMBED_SOURCE = "EmbeddedSourceMismatch"
    EMBED_DEST = "EmbeddedDestMismatch"
    EMBED_TYPE = "EmbeddedType"
    EMBED_CODE = "EmbeddedCode"
    UNKNOWN_TOKEN = "UnknownToken"
    NEGATIVE_DISTANCE = "NegativeDistance"


class ParseFailure(Exception):
    def __init__(self, reason: Reason, packet: bytes, detail: str = ""):
        self.reason = reason
        self.packet = bytes(packet)
        self.detail = detail
        super().__init__(f"{reason.value}{': ' + detail if detail else ''}")

    def hexdump(self) -> str:
        return self.packet.hex()


class NegativeDistance(ValueError):
    pass


class ParsedResponse(NamedTuple):
    target: int
    responder: int
    icmp_type: int
    icmp_code: int
    distance: Optional[int]
    token: int


def parse_key(text: str) -> bytes:
    text = text.strip()
    if text.lower().startswith("0x"):
        text = text[2:]
    try:
        key = bytes.fromhex(text)
    except ValueError:
        raise ValueError("MAC key must be hexadecimal") from None
    if len(key) != KEY_LEN:
        raise ValueError(f"MAC key must be {KEY_LEN} bytes, got {len(key)}")
    return key


def random_key() -> bytes:
    return os.urandom(KEY_LEN)


def key_fingerprint(key: bytes) -> str:
    return key[:4].hex()


class TokenMac:
    """HMAC-SHA-256 keyed once, with the padded key blocks pre-hashed."""

    block = 64

    def __init__(self, key: bytes):
        if len(key) > self.block:
            key = hashlib.sha256(key).digest()
        key = key.ljust(self.block, b"\x00")
        self._inner = hashlib.sha256(bytes(b ^ 0x36 for b in key))
        self._outer = hashlib.sha256(bytes(b ^ 0x5C for b in key))

    def digest(self, msg: bytes) -> bytes:
        inner = self._inner.copy()
        inner.update(msg)
        outer = self._outer.copy()
        outer.update(inner.digest())
        return outer.digest()


def compute_mac(key: bytes, token: int) -> bytes:
    return TokenMac(key).digest(token.to_bytes(4, "big"))


def _fold(total: int) -> int:
    # 2**16 == 1 (mod 0xFFFF), so the ones'-complement sum of the 16-bit
    # words of a big-endian number is the number itself mod 0xFFFF
    s = total % 0xFFFF
    if s == 0 and total:
        return 0xFFFF
    return s


def _pseudo_total(src: int, dst: int, length: int) -> int:
    return src + dst + length + ICMPV6


def icmpv6_checksum(src: int, dst: int, icmp: bytes) -> int:
    """Checksum for an ICMPv6 message whose checksum field is zero."""
    length = len(icmp)
    if length % 2:
        icmp = icmp + b"\x00"
    total = _pseudo_total(src, dst, length) + int.from_bytes(icmp, "big")
    return 0xFFFF - _fold(total)


def checksum_ok(src: int, dst: int, icmp: bytes) -> bool:
    length = len(icmp)
    if length % 2:
        icmp = icmp + b"\x00"
    return _fold(_pseudo_total(src, dst, length) + int.from_bytes(icmp, "big")) == 0xFFFF


def ipv6_header(src: int, dst: int, payload_len: int, hop_limit: int,
                next_header: int = ICMPV6) -> bytes:
    return _IPV6.pack(_VTCFL, payload_len, next_header, hop_limit,
                      src.to_bytes(16, "big"), dst.to_bytes(16, "big"))


def with_checksum(icmp: bytes, src: int, dst: int) -> bytes:
    """Return ``icmp`` with its checksum field recomputed."""
    zeroed = icmp[:2] + b"\x00\x00" + icmp[4:]
    return zeroed[:2] + icmpv6_checksum(src, dst, zeroed).to_bytes(2, "big") + zeroed[4:]


class ProbeBuilder:
    """Builds probes for one scan; the source and key never change."""

    def __init__(self, src: int, key: bytes, hop_limit: int = 64):
        if not 1 <= hop_limit <= 255:
            raise ValueError(f"hop limit must be 1..255, got {hop_limit}")
        if len(key) != KEY_LEN:
            raise ValueError(f"MAC key must be {KEY_LEN} bytes")
        self.src = src
        self.key = key
        self.hop_limit = hop_limit
        self._mac = TokenMac(key).digest
        self._head = struct.pack("!IHBB", _VTCFL, TRAILER_LEN, ICMPV6, hop_limit) + src.to_bytes(16, "big")
        self._base = _pseudo_total(src, 0, TRAILER_LEN) + (ECHO_REQUEST << 8 << 48 << 256)

    def build(self, dst: int, token: int) -> bytes:
        tok = token.to_bytes(4, "big")
        mac = self._mac(tok)
        # type is the top byte of the 40-byte message, the token sits above the MAC
        total = self._base + dst + (token << 256) + int.from_bytes(mac, "big")
        cksum = 0xFFFF - _fold(total)
        return b"".join((self._head, dst.to_bytes(16, "big"),
                         b"\x80\x00", cksum.to_bytes(2, "big"), tok, mac))


def build_probe(src: int, dst: int, hop_limit: int, token: int, key: bytes) -> bytes:
    return ProbeBuilder(src, key, hop_limit).build(dst, token)


def echo_reply_for(probe: bytes, responder: Optional[int] = None, hop_limit: int = 64) -> bytes:
    """What a node does to an echo request: flip the type to 129, fix the checksum."""
    probe_src = int.from_bytes(probe[8:24], "big")
    if responder is None:
        responder = int.from_bytes(probe[24:40], "big")
    icmp = bytes([ECHO_REPLY]) + probe[41:]
    icmp = with_checksum(icmp, responder, probe_src)
    return ipv6_header(responder, probe_src, len(icmp), hop_limit) + icmp


def build_error_response(err_type: int, code: int, fourth_field: int, responder: int,
                         invoking_packet: bytes, hop_limit: int = 64) -> bytes:
    if err_type not in ERROR_TYPES:
        raise ValueError(f"ICMPv6 error type must be 1..4, got {err_type}")
    if not 0 <= code <= 255:
        raise ValueError(f"code out of range: {code}")
    if len(invoking_packet) < IPV6_HEADER_LEN + 8:
        raise ValueError("invoking packet must hold at least an IPv6 and ICMPv6 header")
    dst = int.from_bytes(invoking_packet[8:24], "big")
    icmp = struct.pack("!BBHI", err_type, code, 0, fourth_field) + invoking_packet
    icmp = with_checksum(icmp, responder, dst)
    return ipv6_header(responder, dst, len(icmp), hop_limit) + icmp


def estimate_distance(sent_hop_limit: int, embedded_hop_limit: int) -> int:
    """Hops between scanner and responder.

    Off by one for time-exceeded errors from routers that embed the packet
    as received (hop limit 1) rather than as it would have been forwarded
    (hop limit 0).
    """
    if embedded_hop_limit > sent_hop_limit:
        raise NegativeDistance(f"embedded hop limit {embedded_hop_limit} exceeds sent {sent_hop_limit}")
    return sent_hop_limit - embedded_hop_limit


class ResponseVerifier:
    """Validates captured packets against one scan's key and source."""

    def __init__(self, key: bytes, scan_src: int, sent_hop_limit: int,
                 expected_target_of: Callable[[int], Optional[int]]):
        self.key = key
        self._mac = TokenMac(key).digest
        self.scan_src = scan_src
        self._src_bytes = scan_src.to_bytes(16, "big")
        self.sent_hop_limit = sent_hop_limit
        self.expected_target_of = expected_target_of

    def token_of(self, packet: bytes) -> int:
        """Return the authenticated token or raise BadMac."""
        if len(packet) < TRAILER_LEN:
            raise BadMac("packet shorter than token and MAC")
        tok = packet[-TRAILER_LEN + 4:-MAC_LEN]
        mac = packet[-MAC_LEN:]
        if not hmac.compare_digest(self._mac(tok), mac):
            raise BadMac("MAC mismatch")
        return int.from_bytes(tok, "big")

    def verify(self, packet: bytes) -> ParsedResponse:
        token = self.token_of(packet)
        if len(packet) < IPV6_HEADER_LEN + 8:
            raise ParseFailure(Reason.TOO_SHORT, packet)
        if packet[0] >> 4 != 6 or packet[6] != ICMPV6:
            raise ParseFailure(Reason.OUTER_HEADER, packet, "not a plain IPv6/ICMPv6 packet")
        responder = int.from_bytes(packet[8:24], "big")
        target = self.expected_target_of(token)
        if target is None:
            raise ParseFailure(Reason.UNKNOWN_TOKEN, packet, f"token {token:#010x}")
        icmp_type, icmp_code = packet[40], packet[41]
        if icmp_type == ECHO_REPLY and icmp_code == 0:
            return ParsedResponse(target, responder, icmp_type, icmp_code, None, token)
        if icmp_type not in ERROR_TYPES:
            raise ParseFailure(Reason.UNEXPECTED_TYPE, packet, f"type {icmp_type} code {icmp_code}")
        icmp = packet[IPV6_HEADER_LEN:]
        outer_dst = int.from_bytes(packet[24:40], "big")
        if not checksum_ok(responder, outer_dst, icmp):
            raise ParseFailure(Reason.BAD_CHECKSUM, packet)
        emb = icmp[8:]
        if len(emb) < IPV6_HEADER_LEN + 2:
            raise ParseFailure(Reason.EMBED_TRUNCATED, packet)
        if emb[0] >> 4 != 6:
            raise ParseFailure(Reason.EMBED_VERSION, packet, f"version {emb[0] >> 4}")
        plen = int.from_bytes(emb[4:6], "big")
        if plen < TRAILER_LEN:
            raise ParseFailure(Reason.EMBED_PAYLOAD_LENGTH, packet, f"payload length {plen}")
        if emb[6] != ICMPV6:
            raise ParseFailure(Reason.EMBED_NEXT_HEADER, packet, f"next header {emb[6]}")
        embedded_hop_limit = emb[7]
        if emb[8:24] != self._src_bytes:
            raise ParseFailure(Reason.EMBED_SOURCE, packet)
        emb_dst = int.from_bytes(emb[24:40], "big")
        if emb_dst != target:
            raise ParseFailure(Reason.EMBED_DEST, packet, f"embedded destination {emb_dst:032x}")
        if emb[40] != ECHO_REQUEST:
            raise ParseFailure(Reason.EMBED_TYPE, packet, f"embedded type {emb[40]}")
        if emb[41] != 0:
            raise ParseFailure(Reason.EMBED_CODE, packet, f"embedded code {emb[41]}")
        try:
            distance = estimate_distance(self.sent_hop_limit, embedded_hop_limit)
        except NegativeDistance as exc:
            raise ParseFailure(Reason.NEGATIVE_DISTANCE, packet, str(exc)) from None
        return ParsedResponse(target, responder, icmp_type, icmp_code, distance, token)


def verify_and_extract(packet: bytes, key: bytes, sent_hop_limit: int, scan_src: int,
                       expected_target_of: Callable[[int], Optional[int]]) -> ParsedResponse:
    return ResponseVerifier(key, scan_src, sent_hop_limit, expected_target_of).verify(packet)
