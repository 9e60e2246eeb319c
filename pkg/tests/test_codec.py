import hashlib
import hmac

import pytest
from hypothesis import given, strategies as st

from iapscan import codec
from iapscan.addr import parse_address
from iapscan.codec import (
    BadMac, ParseFailure, Reason, ResponseVerifier, TokenMac, build_error_response, build_probe,
    checksum_ok, compute_mac, echo_reply_for, estimate_distance, icmpv6_checksum, key_fingerprint,
    parse_key,
)

import oracles

KEY = bytes(32)
SRC = parse_address("2001:db8:5ca7::1")
DST = parse_address("2001:db8:100::")
ROUTER = parse_address("2a02:8100::1")

GOLDEN_PROBE = (
    "6000000000283a4020010db85ca70000000000000000000120010db801000000000000000000000080007463"
    "01020304268ba34e03bbb273d56c45a73c865a0bbcea28f0a983f86e9e9156a1277877f2")
GOLDEN_ERROR = (
    "6000000000583a402a02810000000000000000000000000120010db85ca70000000000000000000103002d42"
    "00000000" + GOLDEN_PROBE[:14] + "00" + GOLDEN_PROBE[16:])


def verifier(target=DST, hop_limit=64):
    return ResponseVerifier(KEY, SRC, hop_limit, lambda tok: target)


@pytest.mark.parametrize("key,msg,digest", oracles.RFC4231_CASES)
def test_oracle_and_tokenmac_on_rfc4231(key, msg, digest):
    assert oracles.hmac_sha256(key, msg).hex() == digest
    assert TokenMac(key).digest(msg).hex() == digest


@given(st.binary(min_size=32, max_size=32), st.integers(0, 2**32 - 1))
def test_mac_matches_stdlib(key, token):
    tok = token.to_bytes(4, "big")
    assert compute_mac(key, token) == hmac.digest(key, tok, hashlib.sha256)


def test_golden_probe():
    p = build_probe(SRC, DST, 64, 0x01020304, KEY)
    assert p.hex() == GOLDEN_PROBE
    assert len(p) == codec.PROBE_LEN == 80


def test_golden_error():
    p = bytes.fromhex(GOLDEN_PROBE)
    expired = p[:7] + b"\x00" + p[8:]
    assert build_error_response(3, 0, 0, ROUTER, expired).hex() == GOLDEN_ERROR


@given(st.integers(0, 2**128 - 1), st.integers(0, 2**32 - 1), st.integers(1, 255))
def test_probe_checksum_matches_oracle(dst, token, hop):
    p = build_probe(SRC, dst, hop, token, KEY)
    assert int.from_bytes(p[42:44], "big") == oracles.icmpv6_checksum(SRC, dst, p[40:])
    assert checksum_ok(SRC, dst, p[40:])
    assert p[7] == hop and p[44:48] == token.to_bytes(4, "big")


@given(st.binary(min_size=4, max_size=200), st.integers(0, 2**128 - 1), st.integers(0, 2**128 - 1))
def test_checksum_matches_oracle(msg, src, dst):
    msg = msg[:2] + b"\x00\x00" + msg[4:]
    assert icmpv6_checksum(src, dst, msg) == oracles.icmpv6_checksum(src, dst, msg)


def test_checksum_all_ones_case():
    # a message whose sum folds to 0xFFFF gets checksum 0, never 0xFFFF
    for dst in range(2000):
        msg = b"\x80\x00\x00\x00" + dst.to_bytes(4, "big")
        c = icmpv6_checksum(SRC, dst, msg)
        assert c == oracles.icmpv6_checksum(SRC, dst, msg) and c != 0xFFFF


def test_echo_reply_parses():
    probe = build_probe(SRC, DST, 64, 7, KEY)
    cpe = DST | 0x0204_0EFF_FE00_0001
    r = verifier().verify(echo_reply_for(probe, responder=cpe))
    assert (r.target, r.responder, r.icmp_type, r.icmp_code, r.distance, r.token) == (
        DST, cpe, 129, 0, None, 7)


@pytest.mark.parametrize("etype", [1, 2, 3, 4])
def test_error_types_parse(etype):
    probe = build_probe(SRC, DST, 64, 9, KEY)
    arrived = probe[:7] + bytes([57]) + probe[8:]
    r = verifier().verify(build_error_response(etype, 1, 0, ROUTER, arrived))
    assert (r.icmp_type, r.icmp_code, r.distance, r.responder) == (etype, 1, 7, ROUTER)


def test_distance():
    assert estimate_distance(64, 57) == 7
    with pytest.raises(codec.NegativeDistance):
        estimate_distance(10, 11)


def _failure(packet, **kw):
    with pytest.raises(ParseFailure) as info:
        verifier(**kw).verify(packet)
    return info.value.reason


def test_parse_failures():
    probe = build_probe(SRC, DST, 64, 3, KEY)
    ok = build_error_response(1, 3, 0, ROUTER, probe)
    assert _failure(ok, target=DST + 1) is Reason.EMBED_DEST
    assert _failure(ok[:43] + bytes([ok[43] ^ 1]) + ok[44:]) is Reason.BAD_CHECKSUM
    other_src = probe[:8] + (SRC + 1).to_bytes(16, "big") + probe[24:]
    assert _failure(build_error_response(1, 3, 0, ROUTER, other_src)) is Reason.EMBED_SOURCE
    # the embed holds only the trailer, not even a full IPv6 header
    icmp = codec.with_checksum(b"\x01\x03\x00\x00\x00\x00\x00\x00" + probe[-40:], ROUTER, SRC)
    short = codec.ipv6_header(ROUTER, SRC, len(icmp), 64) + icmp
    assert _failure(short) is Reason.EMBED_TRUNCATED
    not_echo = probe[:40] + b"\x87" + probe[41:]
    assert _failure(not_echo) is Reason.UNEXPECTED_TYPE
    v5 = bytes([0x50]) + probe[1:]
    assert _failure(build_error_response(1, 3, 0, ROUTER, v5)) is Reason.EMBED_VERSION
    neg = probe[:7] + bytes([65]) + probe[8:]
    assert _failure(build_error_response(3, 0, 0, ROUTER, neg)) is Reason.NEGATIVE_DISTANCE
    with pytest.raises(ParseFailure) as info:
        ResponseVerifier(KEY, SRC, 64, lambda tok: None).verify(echo_reply_for(probe))
    assert info.value.reason is Reason.UNKNOWN_TOKEN
    assert info.value.hexdump() == echo_reply_for(probe).hex()


def test_bad_mac():
    probe = build_probe(SRC, DST, 64, 3, bytes([1]) * 32)
    with pytest.raises(BadMac):
        verifier().verify(echo_reply_for(probe))
    with pytest.raises(BadMac):
        verifier().verify(b"\x00" * 20)


def test_key_handling():
    assert parse_key("00" * 32) == KEY
    with pytest.raises(ValueError):
        parse_key("00" * 31)
    with pytest.raises(ValueError):
        parse_key("zz" * 32)
    assert key_fingerprint(KEY) == "00000000"
    assert key_fingerprint(bytes(range(32))) == "00010203"
    assert len(codec.random_key()) == 32


def test_error_builder_validation():
    probe = build_probe(SRC, DST, 64, 3, KEY)
    with pytest.raises(ValueError):
        build_error_response(5, 0, 0, ROUTER, probe)
    with pytest.raises(ValueError):
        build_error_response(1, 0, 0, ROUTER, probe[:40])
