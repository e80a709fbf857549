"""Bit-exact IPv4/TCP/UDP/ICMP encoding and decoding.

Everything here is a pure function over immutable dataclasses, so the codec
is safe to call from any number of threads.  Encoding normalizes derived
fields (lengths, data offset, checksums) and returns the normalized parsed
view alongside the wire bytes; decoding that wire image yields the same
view, which is the round-trip contract the tests pin down.
"""

from __future__ import annotations

import socket
import struct
from dataclasses import dataclass, field, replace
from enum import IntFlag

from .errors import DecodeError, EncodeError

PROTO_ICMP = 1
PROTO_TCP = 6
PROTO_UDP = 17

# ICMP type families (body layout after the 4-byte type/code/checksum prefix).
ICMP_ECHO_TYPES = frozenset({0, 8, 15, 16})
ICMP_TIMESTAMP_TYPES = frozenset({13, 14})
ICMP_MASK_TYPES = frozenset({17, 18})
ICMP_ERROR_TYPES = frozenset({3, 4, 5, 11, 12})

TCP_OPT_EOL = 0
TCP_OPT_NOP = 1
TCP_OPT_MSS = 2
TCP_OPT_WSCALE = 3
TCP_OPT_SACK_PERMITTED = 4
TCP_OPT_TIMESTAMP = 8


class TcpFlags(IntFlag):
    FIN = 0x01
    SYN = 0x02
    RST = 0x04
    PSH = 0x08
    ACK = 0x10
    URG = 0x20
    ECE = 0x40
    CWR = 0x80


def ip_to_bytes(addr: str) -> bytes:
    try:
        return socket.inet_aton(addr)
    except OSError as exc:
        raise EncodeError(f"bad IPv4 address {addr!r}") from exc


def bytes_to_ip(raw: bytes) -> str:
    return socket.inet_ntoa(raw)


def inet_checksum(data: bytes) -> int:
    """One's-complement 16-bit Internet checksum; odd input padded with 0x00."""
    if len(data) % 2:
        data += b"\x00"
    total = sum(struct.unpack(f"!{len(data) // 2}H", data))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def _check_range(name: str, value: int, bits: int) -> None:
    if not 0 <= value < (1 << bits):
        raise EncodeError(f"{name}={value} out of range for {bits}-bit field")


@dataclass(frozen=True)
class Ipv4Header:
    src: str
    dst: str
    protocol: int
    ttl: int = 64
    tos: int = 0
    identification: int = 0
    df: bool = False
    mf: bool = False
    fragment_offset: int = 0
    version: int = 4
    ihl: int = 5
    total_length: int = 0  # 0 = derive at encode time
    checksum: int = 0  # 0 = auto-fill at encode time
    options: bytes = b""  # tolerated on decode only


@dataclass(frozen=True)
class TcpOption:
    kind: int
    data: bytes = b""


@dataclass(frozen=True)
class TcpHeader:
    src_port: int
    dst_port: int
    seq: int = 0
    ack: int = 0
    flags: TcpFlags = TcpFlags(0)
    window: int = 0
    urgent_ptr: int = 0
    reserved: int = 0
    options: tuple[TcpOption, ...] = ()
    data_offset: int = 0  # 0 = derive at encode time
    checksum: int = 0  # 0 = auto-fill at encode time


@dataclass(frozen=True)
class UdpHeader:
    src_port: int
    dst_port: int
    length: int = 0  # 0 = derive at encode time
    checksum: int = 0  # 0 = auto-fill at encode time


@dataclass(frozen=True)
class EchoBody:
    payload: bytes = b""


@dataclass(frozen=True)
class TimestampBody:
    originate: int = 0  # ms since midnight UTC
    receive: int = 0
    transmit: int = 0


@dataclass(frozen=True)
class AddressMaskBody:
    mask: bytes = b"\x00\x00\x00\x00"


@dataclass(frozen=True)
class ErrorBody:
    """ICMP error: 4 bytes after the checksum plus the quoted datagram.

    `quoted_bytes` is the authoritative wire content (re-encoded verbatim);
    `quoted` is a best-effort lenient parse and is excluded from equality.
    """

    unused: bytes = b"\x00\x00\x00\x00"
    quoted_bytes: bytes = b""
    quoted: "Packet | None" = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class OpaqueBody:
    data: bytes = b""


IcmpBody = EchoBody | TimestampBody | AddressMaskBody | ErrorBody | OpaqueBody


@dataclass(frozen=True)
class IcmpMessage:
    icmp_type: int
    code: int = 0
    identifier: int | None = None  # echo/timestamp/mask families only
    sequence: int | None = None
    body: IcmpBody = OpaqueBody()
    checksum: int = 0  # 0 = auto-fill at encode time


Transport = TcpHeader | UdpHeader | IcmpMessage


@dataclass(frozen=True)
class Packet:
    """Layered view: IP header, transport header, opaque payload bytes."""

    ip: Ipv4Header
    transport: Transport | None
    payload: bytes = b""


@dataclass(frozen=True)
class RawPacket:
    data: bytes
    parsed: Packet | None = None

    def hex(self) -> str:
        return self.data.hex()


def hex_dump(raw: RawPacket) -> str:
    """pcap-style hex dump (offset + 16 bytes per line) for debugging."""
    lines = []
    data = raw.data
    for off in range(0, len(data), 16):
        chunk = data[off : off + 16]
        hexpart = " ".join(f"{b:02x}" for b in chunk)
        text = "".join(chr(b) if 32 <= b < 127 else "." for b in chunk)
        lines.append(f"{off:04x}  {hexpart:<47}  {text}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# encoding


def _pad_tcp_options(options: tuple[TcpOption, ...]) -> tuple[TcpOption, ...]:
    """Pad an option list to a 4-byte boundary with NOPs then a final EOL."""
    length = _tcp_options_length(options)
    pad = (-length) % 4
    if pad == 0:
        return options
    return options + (TcpOption(TCP_OPT_NOP),) * (pad - 1) + (TcpOption(TCP_OPT_EOL),)


def _tcp_options_length(options: tuple[TcpOption, ...]) -> int:
    return sum(1 if o.kind in (TCP_OPT_EOL, TCP_OPT_NOP) else 2 + len(o.data) for o in options)


def _encode_tcp_options(options: tuple[TcpOption, ...]) -> bytes:
    out = bytearray()
    for opt in options:
        _check_range("tcp option kind", opt.kind, 8)
        if opt.kind in (TCP_OPT_EOL, TCP_OPT_NOP):
            if opt.data:
                raise EncodeError(f"option kind {opt.kind} carries no data")
            out.append(opt.kind)
        else:
            if len(opt.data) > 38:
                raise EncodeError("tcp option data too long")
            out.append(opt.kind)
            out.append(2 + len(opt.data))
            out += opt.data
    return bytes(out)


def _pseudo_header(src: str, dst: str, protocol: int, length: int) -> bytes:
    return ip_to_bytes(src) + ip_to_bytes(dst) + struct.pack("!BBH", 0, protocol, length)


def _encode_icmp(icmp: IcmpMessage) -> bytes:
    _check_range("icmp type", icmp.icmp_type, 8)
    _check_range("icmp code", icmp.code, 8)
    body = icmp.body
    if isinstance(body, (EchoBody, TimestampBody, AddressMaskBody)):
        if icmp.identifier is None or icmp.sequence is None:
            raise EncodeError("identifier/sequence required for this ICMP family")
        _check_range("icmp identifier", icmp.identifier, 16)
        _check_range("icmp sequence", icmp.sequence, 16)
        head = struct.pack("!HH", icmp.identifier, icmp.sequence)
        if isinstance(body, EchoBody):
            rest = body.payload
        elif isinstance(body, TimestampBody):
            rest = struct.pack("!III", body.originate, body.receive, body.transmit)
        else:
            if len(body.mask) != 4:
                raise EncodeError("address mask must be 4 bytes")
            rest = body.mask
        tail = head + rest
    elif isinstance(body, ErrorBody):
        if len(body.unused) != 4:
            raise EncodeError("error body unused field must be 4 bytes")
        tail = body.unused + body.quoted_bytes
    else:
        tail = body.data
    msg = struct.pack("!BB", icmp.icmp_type, icmp.code) + b"\x00\x00" + tail
    cksum = icmp.checksum or inet_checksum(msg)
    return msg[:2] + struct.pack("!H", cksum) + msg[4:]


def encode_packet(ip: Ipv4Header, transport: Transport | None, payload: bytes = b"") -> RawPacket:
    """Serialize a layered packet, filling lengths and checksums.

    Returns the wire bytes together with the normalized parsed view so that
    ``decode_packet(raw.data).parsed == raw.parsed``.
    """
    if ip.version != 4:
        raise EncodeError(f"version={ip.version}: only IPv4 supported")
    if ip.options:
        raise EncodeError("IPv4 options are not supported on encode")
    _check_range("tos", ip.tos, 8)
    _check_range("ttl", ip.ttl, 8)
    _check_range("identification", ip.identification, 16)
    _check_range("fragment_offset", ip.fragment_offset, 13)
    _check_range("protocol", ip.protocol, 8)
    expected_proto = {TcpHeader: PROTO_TCP, UdpHeader: PROTO_UDP, IcmpMessage: PROTO_ICMP}.get(
        type(transport)
    )
    if expected_proto is not None and ip.protocol != expected_proto:
        raise EncodeError(
            f"ip.protocol={ip.protocol} does not match {type(transport).__name__}"
        )

    norm_transport: Transport | None = transport
    if isinstance(transport, TcpHeader):
        for name in ("src_port", "dst_port", "window", "urgent_ptr"):
            _check_range(name, getattr(transport, name), 16)
        _check_range("seq", transport.seq, 32)
        _check_range("ack", transport.ack, 32)
        _check_range("reserved", transport.reserved, 4)
        options = _pad_tcp_options(tuple(transport.options))
        opt_bytes = _encode_tcp_options(options)
        if len(opt_bytes) > 40:
            raise EncodeError(f"tcp options occupy {len(opt_bytes)} bytes, max is 40")
        data_offset = 5 + len(opt_bytes) // 4
        head = struct.pack(
            "!HHIIBBHHH",
            transport.src_port,
            transport.dst_port,
            transport.seq,
            transport.ack,
            (data_offset << 4) | transport.reserved,
            int(transport.flags),
            transport.window,
            0,
            transport.urgent_ptr,
        )
        segment = head + opt_bytes + payload
        cksum = transport.checksum or inet_checksum(
            _pseudo_header(ip.src, ip.dst, PROTO_TCP, len(segment)) + segment
        )
        segment = segment[:16] + struct.pack("!H", cksum) + segment[18:]
        norm_transport = replace(
            transport, options=options, data_offset=data_offset, checksum=cksum
        )
        transport_bytes = segment
    elif isinstance(transport, UdpHeader):
        _check_range("src_port", transport.src_port, 16)
        _check_range("dst_port", transport.dst_port, 16)
        length = 8 + len(payload)
        datagram = struct.pack("!HHHH", transport.src_port, transport.dst_port, length, 0) + payload
        cksum = transport.checksum
        if cksum == 0:
            cksum = inet_checksum(
                _pseudo_header(ip.src, ip.dst, PROTO_UDP, length) + datagram
            )
            if cksum == 0:  # RFC 768: transmitted as all-ones when computed zero
                cksum = 0xFFFF
        datagram = datagram[:6] + struct.pack("!H", cksum) + datagram[8:]
        norm_transport = replace(transport, length=length, checksum=cksum)
        transport_bytes = datagram
    elif isinstance(transport, IcmpMessage):
        if payload:
            raise EncodeError("ICMP payload belongs in the message body")
        transport_bytes = _encode_icmp(transport)
        body = transport.body
        if isinstance(body, ErrorBody) and body.quoted is None and len(body.quoted_bytes) >= 20:
            try:
                body = replace(body, quoted=_decode_packet_inner(body.quoted_bytes, lenient=True))
            except DecodeError:
                pass
        norm_transport = replace(
            transport, body=body, checksum=struct.unpack("!H", transport_bytes[2:4])[0]
        )
    elif transport is None:
        transport_bytes = payload
    else:
        raise EncodeError(f"unsupported transport {type(transport).__name__}")

    total_length = 20 + len(transport_bytes)
    _check_range("total_length", total_length, 16)
    flags_frag = (0x4000 if ip.df else 0) | (0x2000 if ip.mf else 0) | ip.fragment_offset
    header = struct.pack(
        "!BBHHHBBH4s4s",
        (4 << 4) | 5,
        ip.tos,
        total_length,
        ip.identification,
        flags_frag,
        ip.ttl,
        ip.protocol,
        0,
        ip_to_bytes(ip.src),
        ip_to_bytes(ip.dst),
    )
    ip_cksum = ip.checksum or inet_checksum(header)
    header = header[:10] + struct.pack("!H", ip_cksum) + header[12:]
    norm_ip = replace(ip, ihl=5, total_length=total_length, checksum=ip_cksum)

    parsed_payload = b"" if isinstance(norm_transport, IcmpMessage) else payload
    parsed = Packet(ip=norm_ip, transport=norm_transport, payload=parsed_payload)
    return RawPacket(data=header + transport_bytes, parsed=parsed)


# ---------------------------------------------------------------------------
# decoding


def _decode_ipv4_header(buf: bytes) -> tuple[Ipv4Header, int]:
    if len(buf) < 20:
        raise DecodeError("ipv4", f"buffer of {len(buf)} bytes is shorter than a 20-byte header")
    ver_ihl, tos, total_length, identification, flags_frag, ttl, protocol, checksum = struct.unpack(
        "!BBHHHBBH", buf[:12]
    )
    version = ver_ihl >> 4
    ihl = ver_ihl & 0x0F
    if version != 4:
        raise DecodeError("ipv4", f"version {version} is not IPv4")
    if ihl < 5:
        raise DecodeError("ipv4", f"IHL {ihl} is below the minimum of 5")
    header_len = ihl * 4
    if len(buf) < header_len:
        raise DecodeError("ipv4", f"IHL {ihl} claims {header_len} bytes, buffer has {len(buf)}")
    if total_length < header_len:
        raise DecodeError("ipv4", f"total length {total_length} below header length {header_len}")
    header = Ipv4Header(
        src=bytes_to_ip(buf[12:16]),
        dst=bytes_to_ip(buf[16:20]),
        protocol=protocol,
        ttl=ttl,
        tos=tos,
        identification=identification,
        df=bool(flags_frag & 0x4000),
        mf=bool(flags_frag & 0x2000),
        fragment_offset=flags_frag & 0x1FFF,
        ihl=ihl,
        total_length=total_length,
        checksum=checksum,
        options=buf[20:header_len],
    )
    return header, header_len


def _decode_tcp(buf: bytes) -> tuple[TcpHeader, bytes]:
    if len(buf) < 20:
        raise DecodeError("tcp", f"segment of {len(buf)} bytes is shorter than a 20-byte header")
    src, dst, seq, ack, off_res, flags, window, checksum, urg = struct.unpack("!HHIIBBHHH", buf[:20])
    data_offset = off_res >> 4
    if data_offset < 5:
        raise DecodeError("tcp", f"data offset {data_offset} is below the minimum of 5")
    header_len = data_offset * 4
    if len(buf) < header_len:
        raise DecodeError("tcp", f"data offset claims {header_len} bytes, segment has {len(buf)}")
    options: list[TcpOption] = []
    opt = buf[20:header_len]
    i = 0
    while i < len(opt):
        kind = opt[i]
        if kind in (TCP_OPT_EOL, TCP_OPT_NOP):
            options.append(TcpOption(kind))
            i += 1
            continue
        if i + 1 >= len(opt):
            raise DecodeError("tcp", f"option kind {kind} truncated before its length byte")
        length = opt[i + 1]
        if length < 2 or i + length > len(opt):
            raise DecodeError("tcp", f"option kind {kind} has bad length {length}")
        options.append(TcpOption(kind, opt[i + 2 : i + length]))
        i += length
    header = TcpHeader(
        src_port=src,
        dst_port=dst,
        seq=seq,
        ack=ack,
        flags=TcpFlags(flags),
        window=window,
        urgent_ptr=urg,
        reserved=off_res & 0x0F,
        options=tuple(options),
        data_offset=data_offset,
        checksum=checksum,
    )
    return header, buf[header_len:]


def _decode_udp(buf: bytes, lenient: bool) -> tuple[UdpHeader, bytes]:
    if len(buf) < 8:
        raise DecodeError("udp", f"datagram of {len(buf)} bytes is shorter than an 8-byte header")
    src, dst, length, checksum = struct.unpack("!HHHH", buf[:8])
    if length < 8:
        raise DecodeError("udp", f"length field {length} below the 8-byte minimum")
    if len(buf) < length and not lenient:
        raise DecodeError("udp", f"length field claims {length} bytes, datagram has {len(buf)}")
    payload = buf[8 : min(length, len(buf))]
    return UdpHeader(src_port=src, dst_port=dst, length=length, checksum=checksum), payload


def _decode_icmp(buf: bytes) -> IcmpMessage:
    if len(buf) < 8:
        raise DecodeError("icmp", f"message of {len(buf)} bytes is shorter than the 8-byte minimum")
    icmp_type, code, checksum = struct.unpack("!BBH", buf[:4])
    rest = buf[4:]
    identifier: int | None = None
    sequence: int | None = None
    body: IcmpBody
    if icmp_type in ICMP_ECHO_TYPES:
        identifier, sequence = struct.unpack("!HH", rest[:4])
        body = EchoBody(payload=rest[4:])
    elif icmp_type in ICMP_TIMESTAMP_TYPES:
        identifier, sequence = struct.unpack("!HH", rest[:4])
        if len(rest) < 16:
            raise DecodeError("icmp", "timestamp message body shorter than 12 bytes")
        orig, recv, xmit = struct.unpack("!III", rest[4:16])
        body = TimestampBody(originate=orig, receive=recv, transmit=xmit)
    elif icmp_type in ICMP_MASK_TYPES:
        identifier, sequence = struct.unpack("!HH", rest[:4])
        if len(rest) < 8:
            raise DecodeError("icmp", "address mask message body shorter than 4 bytes")
        body = AddressMaskBody(mask=rest[4:8])
    elif icmp_type in ICMP_ERROR_TYPES:
        quoted_bytes = rest[4:]
        quoted: Packet | None = None
        if len(quoted_bytes) >= 20:
            try:
                quoted = _decode_packet_inner(quoted_bytes, lenient=True)
            except DecodeError:
                quoted = None
        body = ErrorBody(unused=rest[:4], quoted_bytes=quoted_bytes, quoted=quoted)
    else:
        body = OpaqueBody(data=rest)
    return IcmpMessage(
        icmp_type=icmp_type,
        code=code,
        identifier=identifier,
        sequence=sequence,
        body=body,
        checksum=checksum,
    )


def _decode_packet_inner(buf: bytes, lenient: bool) -> Packet:
    ip, header_len = _decode_ipv4_header(buf)
    rest = buf[header_len:]
    if ip.protocol == PROTO_TCP:
        try:
            tcp, payload = _decode_tcp(rest)
            return Packet(ip=ip, transport=tcp, payload=payload)
        except DecodeError:
            if not lenient:
                raise
            return Packet(ip=ip, transport=None, payload=rest)
    if ip.protocol == PROTO_UDP:
        try:
            udp, payload = _decode_udp(rest, lenient)
            return Packet(ip=ip, transport=udp, payload=payload)
        except DecodeError:
            if not lenient:
                raise
            return Packet(ip=ip, transport=None, payload=rest)
    if ip.protocol == PROTO_ICMP:
        try:
            icmp = _decode_icmp(rest)
            return Packet(ip=ip, transport=icmp, payload=b"")
        except DecodeError:
            if not lenient:
                raise
            return Packet(ip=ip, transport=None, payload=rest)
    return Packet(ip=ip, transport=None, payload=rest)


def decode_packet(buf: bytes) -> RawPacket:
    """Parse wire bytes into a layered view.

    ICMP errors recursively parse the quoted datagram in a lenient mode that
    tolerates the usual 8-byte truncation of the quoted transport header.
    Unknown ICMP types decode as opaque bodies rather than failing, since
    fuzz responses are by nature unanticipated.
    """
    return RawPacket(data=bytes(buf), parsed=_decode_packet_inner(bytes(buf), lenient=False))


def validate_checksums(raw: RawPacket) -> bool:
    """True when the IP header and transport checksums all re-validate."""
    buf = raw.data
    try:
        ip, header_len = _decode_ipv4_header(buf)
    except DecodeError:
        return False
    if inet_checksum(buf[:header_len]) != 0:
        return False
    rest = buf[header_len:]
    if ip.protocol == PROTO_ICMP:
        return inet_checksum(rest) == 0
    if ip.protocol in (PROTO_TCP, PROTO_UDP):
        pseudo = _pseudo_header(ip.src, ip.dst, ip.protocol, len(rest))
        return inet_checksum(pseudo + rest) == 0
    return True
