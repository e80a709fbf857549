import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from netvendor.errors import DecodeError, EncodeError
from netvendor.packet import (
    AddressMaskBody,
    EchoBody,
    ErrorBody,
    IcmpMessage,
    Ipv4Header,
    OpaqueBody,
    RawPacket,
    TcpFlags,
    TcpHeader,
    TcpOption,
    TimestampBody,
    UdpHeader,
    decode_packet,
    encode_packet,
    inet_checksum,
    validate_checksums,
)

# Independent straight-loop one's-complement oracle, written before the
# production routine; the tests below freeze values computed with it.


def checksum_oracle(data: bytes) -> int:
    if len(data) % 2:
        data = data + b"\x00"
    total = 0
    for i in range(0, len(data), 2):
        total += (data[i] << 8) | data[i + 1]
        while total > 0xFFFF:
            total = (total & 0xFFFF) + (total >> 16)
    return total ^ 0xFFFF


def test_checksum_empty_input():
    assert inet_checksum(b"") == 0xFFFF


def test_checksum_matches_oracle_on_header():
    # 20-byte IPv4 header with zeroed checksum field.
    header = bytes.fromhex("450000547a0940004001" + "0000" + "c0a80001c0a80002")
    expected = checksum_oracle(header)
    assert expected == 0x3F4C  # frozen from the oracle run
    assert inet_checksum(header) == expected
    filled = header[:10] + struct.pack("!H", expected) + header[12:]
    assert inet_checksum(filled) == 0


@given(st.binary(min_size=0, max_size=80))
def test_checksum_matches_oracle_everywhere(data):
    assert inet_checksum(data) == checksum_oracle(data)


def _tcp_probe_header():
    return TcpHeader(
        src_port=54321,
        dst_port=50000,
        seq=0x11223344,
        ack=0x55667788,
        flags=TcpFlags.SYN,
        window=31337,
        options=(
            TcpOption(3, bytes([10])),
            TcpOption(1),
            TcpOption(2, struct.pack("!H", 265)),
            TcpOption(8, struct.pack("!II", 0xFFFFFFFF, 0)),
            TcpOption(4),
        ),
    )


def _ip(protocol, **kw):
    defaults = dict(src="192.0.2.1", dst="198.51.100.7", protocol=protocol)
    defaults.update(kw)
    return Ipv4Header(**defaults)


class TestTcp:
    def test_option_order_preserved(self):
        raw = encode_packet(_ip(6), _tcp_probe_header())
        decoded = decode_packet(raw.data)
        kinds = [o.kind for o in decoded.parsed.transport.options]
        assert kinds == [3, 1, 2, 8, 4]

    def test_round_trip(self):
        raw = encode_packet(_ip(6), _tcp_probe_header())
        assert decode_packet(raw.data).parsed == raw.parsed

    def test_unaligned_options_padded_with_nop_then_eol(self):
        header = TcpHeader(src_port=1025, dst_port=80, options=(TcpOption(3, b"\x0a"),))
        raw = encode_packet(_ip(6), header)
        kinds = [o.kind for o in decode_packet(raw.data).parsed.transport.options]
        assert kinds == [3, 0]  # one pad byte: EOL alone
        header = TcpHeader(src_port=1025, dst_port=80, options=(TcpOption(3, b"\x0a"), TcpOption(4)))
        raw = encode_packet(_ip(6), header)
        kinds = [o.kind for o in decode_packet(raw.data).parsed.transport.options]
        assert kinds == [3, 4, 1, 1, 0]  # three pad bytes: NOP NOP EOL
        assert decode_packet(raw.data).parsed.transport.data_offset == 7

    def test_options_overflow_rejected(self):
        too_many = tuple(TcpOption(2, b"\x00\x01") for _ in range(11))
        with pytest.raises(EncodeError):
            encode_packet(_ip(6), TcpHeader(src_port=1, dst_port=2, options=too_many))

    def test_field_out_of_range(self):
        with pytest.raises(EncodeError):
            encode_packet(_ip(6), TcpHeader(src_port=70000, dst_port=80))


class TestUdp:
    def test_length_is_eight_plus_payload(self):
        raw = encode_packet(_ip(17), UdpHeader(src_port=40000, dst_port=50000), b"C" * 300)
        assert raw.parsed.transport.length == 308
        assert decode_packet(raw.data).parsed.transport.length == 308

    def test_round_trip(self):
        raw = encode_packet(_ip(17), UdpHeader(src_port=40000, dst_port=50000), b"hello")
        assert decode_packet(raw.data).parsed == raw.parsed


class TestIcmp:
    def test_echo_round_trip(self):
        msg = IcmpMessage(icmp_type=8, code=9, identifier=0xBEEF, sequence=295, body=EchoBody(b"\x00" * 120))
        raw = encode_packet(_ip(1), msg)
        assert decode_packet(raw.data).parsed == raw.parsed

    def test_timestamp_round_trip(self):
        msg = IcmpMessage(
            icmp_type=13, code=0, identifier=7, sequence=1,
            body=TimestampBody(originate=12345678, receive=0, transmit=0),
        )
        raw = encode_packet(_ip(1), msg)
        assert decode_packet(raw.data).parsed == raw.parsed

    def test_mask_round_trip(self):
        msg = IcmpMessage(icmp_type=17, code=0, identifier=7, sequence=1, body=AddressMaskBody(b"\x00" * 4))
        raw = encode_packet(_ip(1), msg)
        assert decode_packet(raw.data).parsed == raw.parsed

    def test_unknown_type_is_opaque(self):
        msg = IcmpMessage(icmp_type=40, code=0, body=OpaqueBody(b"\x00\x00\x00\x00"))
        raw = encode_packet(_ip(1), msg)
        decoded = decode_packet(raw.data).parsed.transport
        assert isinstance(decoded.body, OpaqueBody)
        assert decoded.icmp_type == 40

    def test_port_unreachable_quotes_udp_probe(self):
        probe = encode_packet(
            _ip(17, identification=0x1042, src="192.0.2.1", dst="203.0.113.9"),
            UdpHeader(src_port=54321, dst_port=50000),
            b"C" * 300,
        )
        err = IcmpMessage(icmp_type=3, code=3, body=ErrorBody(quoted_bytes=probe.data))
        raw = encode_packet(_ip(1, src="203.0.113.9", dst="192.0.2.1"), err)
        decoded = decode_packet(raw.data).parsed.transport
        quoted = decoded.body.quoted
        assert quoted.ip.identification == 0x1042
        assert quoted.transport.src_port == 54321
        assert quoted.transport.dst_port == 50000

    def test_truncated_quote_still_recovers_udp_header(self):
        # Classic port unreachable quotes IP header + first 8 bytes only.
        probe = encode_packet(
            _ip(17, identification=0x1042), UdpHeader(src_port=54321, dst_port=50000), b"C" * 300
        )
        short = probe.data[: 20 + 8]
        err = IcmpMessage(icmp_type=3, code=3, body=ErrorBody(quoted_bytes=short))
        raw = encode_packet(_ip(1), err)
        quoted = decode_packet(raw.data).parsed.transport.body.quoted
        assert quoted.transport.src_port == 54321
        assert quoted.ip.identification == 0x1042


class TestErrors:
    def test_truncated_buffer(self):
        probe = encode_packet(_ip(17), UdpHeader(src_port=1025, dst_port=2048), b"x")
        with pytest.raises(DecodeError) as exc:
            decode_packet(probe.data[:10])
        assert exc.value.layer == "ipv4"

    def test_bad_ihl(self):
        buf = bytearray(encode_packet(_ip(1), IcmpMessage(8, 0, 1, 1, EchoBody(b""))).data)
        buf[0] = (4 << 4) | 3
        with pytest.raises(DecodeError) as exc:
            decode_packet(bytes(buf))
        assert exc.value.layer == "ipv4"

    def test_truncated_transport_names_layer(self):
        raw = encode_packet(_ip(6), _tcp_probe_header())
        with pytest.raises(DecodeError) as exc:
            decode_packet(raw.data[:24])
        assert exc.value.layer == "tcp"

    def test_ttl_zero_is_legal(self):
        raw = encode_packet(_ip(1, ttl=0), IcmpMessage(8, 0, 1, 1, EchoBody(b"")))
        assert decode_packet(raw.data).parsed.ip.ttl == 0

    def test_ip_options_tolerated_on_decode_rejected_on_encode(self):
        with pytest.raises(EncodeError):
            encode_packet(_ip(1, options=b"\x01\x01\x01\x01"), IcmpMessage(8, 0, 1, 1, EchoBody(b"")))
        # hand-build a header with IHL 6 and four NOP option bytes
        base = encode_packet(_ip(1), IcmpMessage(8, 0, 7, 9, EchoBody(b"ping"))).data
        buf = bytearray(base)
        buf[0] = (4 << 4) | 6
        buf = buf[:20] + b"\x01\x01\x01\x01" + buf[20:]
        struct.pack_into("!H", buf, 2, len(buf))  # total length
        struct.pack_into("!H", buf, 10, 0)
        struct.pack_into("!H", buf, 10, inet_checksum(bytes(buf[:24])))
        parsed = decode_packet(bytes(buf)).parsed
        assert parsed.ip.ihl == 6
        assert parsed.ip.options == b"\x01\x01\x01\x01"
        assert parsed.transport.sequence == 9  # transport parsed past the options


# Property tests over randomized headers -----------------------------------

ports = st.integers(0, 65535)
u32 = st.integers(0, 2**32 - 1)
ip_addr = st.builds(
    "{}.{}.{}.{}".format,
    st.integers(1, 223),
    st.integers(0, 255),
    st.integers(0, 255),
    st.integers(1, 254),
)

tcp_options = st.lists(
    st.one_of(
        st.just(TcpOption(1)),
        st.builds(TcpOption, st.just(3), st.binary(min_size=1, max_size=1)),
        st.builds(TcpOption, st.just(2), st.binary(min_size=2, max_size=2)),
        st.builds(TcpOption, st.just(8), st.binary(min_size=8, max_size=8)),
        st.just(TcpOption(4)),
    ),
    max_size=4,
).map(tuple)

tcp_headers = st.builds(
    TcpHeader,
    src_port=ports,
    dst_port=ports,
    seq=u32,
    ack=u32,
    flags=st.integers(0, 255).map(TcpFlags),
    window=ports,
    urgent_ptr=ports,
    reserved=st.integers(0, 15),
    options=tcp_options,
)

icmp_messages = st.one_of(
    st.builds(
        IcmpMessage,
        icmp_type=st.sampled_from([0, 8]),
        code=st.integers(0, 255),
        identifier=ports,
        sequence=ports,
        body=st.builds(EchoBody, st.binary(max_size=64)),
    ),
    st.builds(
        IcmpMessage,
        icmp_type=st.sampled_from([13, 14]),
        code=st.just(0),
        identifier=ports,
        sequence=ports,
        body=st.builds(TimestampBody, u32, u32, u32),
    ),
    st.builds(
        IcmpMessage,
        icmp_type=st.sampled_from([17, 18]),
        code=st.just(0),
        identifier=ports,
        sequence=ports,
        body=st.builds(AddressMaskBody, st.binary(min_size=4, max_size=4)),
    ),
    st.builds(
        IcmpMessage,
        icmp_type=st.sampled_from([9, 10, 30, 40]),
        code=st.integers(0, 15),
        body=st.builds(OpaqueBody, st.binary(min_size=4, max_size=32)),
    ),
)


@st.composite
def packets(draw):
    kind = draw(st.sampled_from(["tcp", "udp", "icmp"]))
    ip = Ipv4Header(
        src=draw(ip_addr),
        dst=draw(ip_addr),
        protocol={"tcp": 6, "udp": 17, "icmp": 1}[kind],
        ttl=draw(st.integers(0, 255)),
        tos=draw(st.integers(0, 255)),
        identification=draw(ports),
        df=draw(st.booleans()),
    )
    if kind == "tcp":
        return encode_packet(ip, draw(tcp_headers), draw(st.binary(max_size=32)))
    if kind == "udp":
        return encode_packet(ip, UdpHeader(draw(ports), draw(ports)), draw(st.binary(max_size=64)))
    return encode_packet(ip, draw(icmp_messages))


@given(packets())
@settings(max_examples=150)
def test_round_trip_identity(raw: RawPacket):
    assert decode_packet(raw.data).parsed == raw.parsed


@given(packets())
@settings(max_examples=150)
def test_encoded_packets_revalidate(raw: RawPacket):
    assert validate_checksums(raw)


@given(packets(), st.data())
@settings(max_examples=150)
def test_single_bit_flip_invalidates_checksum(raw: RawPacket, data):
    bit = data.draw(st.integers(0, len(raw.data) * 8 - 1))
    flipped = bytearray(raw.data)
    flipped[bit // 8] ^= 1 << (bit % 8)
    assert not validate_checksums(RawPacket(bytes(flipped)))
