"""The fixed closed-port probe set.

Six probes mirror the closed-port portion of a classic OS-detection scan
(three TCP with fixed options, one UDP aimed at eliciting a port
unreachable, two ICMP echoes with deliberately odd header values), plus an
ICMP type/code fuzz sweep and the two high-signal ICMP probes (timestamp
and address mask) retained by the final model.  Identifier-style fields
that scanners normally randomize are pinned in :class:`ProbeStatics` so a
scan is reproducible and responses can be matched back to probes.
"""

from __future__ import annotations

import datetime as dt
import struct
from dataclasses import dataclass, field
from importlib import resources

from .errors import ConfigError
from .packet import (
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
    encode_packet,
)

UDP1 = "UDP1"
ICMP_ECHO1 = "ICMP_ECHO1"
ICMP_ECHO2 = "ICMP_ECHO2"
TCP1 = "TCP1"
TCP2 = "TCP2"
TCP3 = "TCP3"
ICMP_TIMESTAMP = "ICMP_TIMESTAMP"
ICMP_ADDRMASK = "ICMP_ADDRMASK"

NMAP_PROBE_IDS = (ICMP_ECHO1, ICMP_ECHO2, UDP1, TCP1, TCP2, TCP3)
TOP_ICMP_PROBE_IDS = (ICMP_TIMESTAMP, ICMP_ADDRMASK)


def fuzz_probe_id(icmp_type: int, code: int) -> str:
    return f"FUZZ({icmp_type},{code})"


@dataclass(frozen=True)
class ProbeStatics:
    """Fixed values for fields a scanner would otherwise randomize."""

    ip_id: int = 0x4A17
    icmp_id: int = 0xBEEF
    tcp_seq: int = 0x1E6F3A5C
    tcp_ack: int = 0x52C7D9E1
    src_ip: str = "192.0.2.1"
    src_port: int = 54321
    sent_ttl: int = 64
    # ms since midnight UTC for the timestamp probe; None = wall clock
    timestamp_originate_ms: int | None = None

    def originate_ms(self) -> int:
        if self.timestamp_originate_ms is not None:
            return self.timestamp_originate_ms
        now = dt.datetime.now(dt.timezone.utc)
        midnight = now.replace(hour=0, minute=0, second=0, microsecond=0)
        return int((now - midnight).total_seconds() * 1000)


@dataclass(frozen=True)
class ProbeSpec:
    probe_id: str
    target: str
    packet: RawPacket
    sent_ttl: int
    dst_port: int | None = None  # TCP/UDP only; ICMP probes are port-less


def _nmap_tcp_options(wscale: int) -> tuple[TcpOption, ...]:
    return (
        TcpOption(3, bytes([wscale])),
        TcpOption(1),
        TcpOption(2, struct.pack("!H", 265)),
        TcpOption(8, struct.pack("!II", 0xFFFFFFFF, 0)),
        TcpOption(4),
    )


def nmap_closed_port_probes(
    target: str, port: int, statics: ProbeStatics = ProbeStatics()
) -> list[ProbeSpec]:
    """Build the six closed-port probes for one target.

    ECHO1: DF set, TOS 0, code 9, seq 295, 120 zero bytes.  ECHO2: TOS 4,
    code 0, 150 zero bytes, id and seq one above ECHO1's.  UDP1: 300 'C'
    bytes with IP ID 0x1042.  TCP1/2/3: SYN w=31337, ACK w=32768 with DF,
    FIN|PSH|URG w=65535; shared option chain (wscale, NOP, MSS 265,
    timestamp 0xFFFFFFFF, SACK permitted), window scale 10/10/15.
    """
    specs = []
    echo1 = encode_packet(
        Ipv4Header(src=statics.src_ip, dst=target, protocol=1, ttl=statics.sent_ttl,
                   tos=0, identification=statics.ip_id, df=True),
        IcmpMessage(icmp_type=8, code=9, identifier=statics.icmp_id, sequence=295,
                    body=EchoBody(b"\x00" * 120)),
    )
    specs.append(ProbeSpec(ICMP_ECHO1, target, echo1, statics.sent_ttl))

    echo2 = encode_packet(
        Ipv4Header(src=statics.src_ip, dst=target, protocol=1, ttl=statics.sent_ttl,
                   tos=4, identification=(statics.ip_id + 1) & 0xFFFF),
        IcmpMessage(icmp_type=8, code=0, identifier=(statics.icmp_id + 1) & 0xFFFF,
                    sequence=296, body=EchoBody(b"\x00" * 150)),
    )
    specs.append(ProbeSpec(ICMP_ECHO2, target, echo2, statics.sent_ttl))

    udp = encode_packet(
        Ipv4Header(src=statics.src_ip, dst=target, protocol=17, ttl=statics.sent_ttl,
                   identification=0x1042),
        UdpHeader(src_port=statics.src_port, dst_port=port),
        b"C" * 300,
    )
    specs.append(ProbeSpec(UDP1, target, udp, statics.sent_ttl, dst_port=port))

    tcp_specs = [
        (TCP1, TcpFlags.SYN, 31337, 10, False),
        (TCP2, TcpFlags.ACK, 32768, 10, True),
        (TCP3, TcpFlags.FIN | TcpFlags.PSH | TcpFlags.URG, 65535, 15, False),
    ]
    for probe_id, flags, window, wscale, df in tcp_specs:
        raw = encode_packet(
            Ipv4Header(src=statics.src_ip, dst=target, protocol=6, ttl=statics.sent_ttl,
                       identification=statics.ip_id, df=df),
            TcpHeader(src_port=statics.src_port, dst_port=port, seq=statics.tcp_seq,
                      ack=statics.tcp_ack, flags=flags, window=window,
                      options=_nmap_tcp_options(wscale)),
        )
        specs.append(ProbeSpec(probe_id, target, raw, statics.sent_ttl, dst_port=port))
    return specs


def load_fuzz_catalog(path: str | None = None) -> list[tuple[int, int, str]]:
    """Read the (type, code, body-kind) sweep table; ships with the package."""
    if path is None:
        text = resources.files("netvendor.data").joinpath("icmp-catalog.tsv").read_text()
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    entries = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ConfigError(f"icmp catalog line {lineno}: expected 3 tab-separated fields")
        try:
            icmp_type, code = int(parts[0]), int(parts[1])
        except ValueError as exc:
            raise ConfigError(f"icmp catalog line {lineno}: non-integer type/code") from exc
        kind = parts[2]
        if kind not in ("echo", "timestamp", "mask", "error", "empty"):
            raise ConfigError(f"icmp catalog line {lineno}: unknown body kind {kind!r}")
        entries.append((icmp_type, code, kind))
    return entries


def _minimal_quoted_packet(statics: ProbeStatics, target: str) -> bytes:
    # Error-type fuzz probes must quote an original datagram to be valid;
    # a tiny synthetic UDP packet we "received" from the target serves.
    quoted = encode_packet(
        Ipv4Header(src=target, dst=statics.src_ip, protocol=17, ttl=1,
                   identification=statics.ip_id),
        UdpHeader(src_port=9, dst_port=9),
        b"\x00" * 4,
    )
    return quoted.data


def icmp_fuzz_probes(
    target: str,
    catalog: list[tuple[int, int, str]] | None = None,
    statics: ProbeStatics = ProbeStatics(),
) -> list[ProbeSpec]:
    """One valid, checksum-correct ICMP message per catalog (type, code) pair."""
    if catalog is None:
        catalog = load_fuzz_catalog()
    specs = []
    for icmp_type, code, kind in catalog:
        if kind == "echo":
            msg = IcmpMessage(icmp_type, code, statics.icmp_id, 1, EchoBody(b"\x00" * 8))
        elif kind == "timestamp":
            msg = IcmpMessage(
                icmp_type, code, statics.icmp_id, 1,
                TimestampBody(originate=statics.originate_ms(), receive=0, transmit=0),
            )
        elif kind == "mask":
            msg = IcmpMessage(icmp_type, code, statics.icmp_id, 1, AddressMaskBody(b"\x00" * 4))
        elif kind == "error":
            msg = IcmpMessage(
                icmp_type, code, body=ErrorBody(quoted_bytes=_minimal_quoted_packet(statics, target))
            )
        elif kind == "empty":
            msg = IcmpMessage(icmp_type, code, body=OpaqueBody(b"\x00" * 4))
        else:
            raise ConfigError(f"unknown body kind {kind!r} for ICMP type {icmp_type}")
        raw = encode_packet(
            Ipv4Header(src=statics.src_ip, dst=target, protocol=1, ttl=statics.sent_ttl,
                       identification=statics.ip_id),
            msg,
        )
        specs.append(ProbeSpec(fuzz_probe_id(icmp_type, code), target, raw, statics.sent_ttl))
    return specs


def top_icmp_probes(target: str, statics: ProbeStatics = ProbeStatics()) -> list[ProbeSpec]:
    """The two ICMP probes the final model adds: timestamp and address mask."""
    ts = encode_packet(
        Ipv4Header(src=statics.src_ip, dst=target, protocol=1, ttl=statics.sent_ttl,
                   identification=statics.ip_id),
        IcmpMessage(13, 0, statics.icmp_id, 1,
                    TimestampBody(originate=statics.originate_ms(), receive=0, transmit=0)),
    )
    mask = encode_packet(
        Ipv4Header(src=statics.src_ip, dst=target, protocol=1, ttl=statics.sent_ttl,
                   identification=statics.ip_id),
        IcmpMessage(17, 0, statics.icmp_id, 1, AddressMaskBody(b"\x00" * 4)),
    )
    return [
        ProbeSpec(ICMP_TIMESTAMP, target, ts, statics.sent_ttl),
        ProbeSpec(ICMP_ADDRMASK, target, mask, statics.sent_ttl),
    ]


@dataclass(frozen=True)
class ProbeSet:
    """An ordered, named probe collection, built per target at a fixed port.

    The scan engine draws one high port per scan and reuses it for every
    target, so the set itself is a builder keyed on (target, port).
    """

    name: str
    statics: ProbeStatics = ProbeStatics()
    fuzz_catalog: tuple[tuple[int, int, str], ...] | None = None
    _parts: tuple[str, ...] = field(init=False, default=())

    def __post_init__(self):
        parts = tuple(p.strip() for p in self.name.split("+") if p.strip())
        known = {"nmap", "topicmp", "fuzz", "icmp"}
        bad = [p for p in parts if p not in known]
        if bad or not parts:
            raise ConfigError(f"unknown probeset part(s) {bad} in {self.name!r}")
        object.__setattr__(self, "_parts", parts)

    def _catalog(self) -> list[tuple[int, int, str]]:
        if self.fuzz_catalog is not None:
            return list(self.fuzz_catalog)
        return load_fuzz_catalog()

    @property
    def probe_ids(self) -> tuple[str, ...]:
        ids: list[str] = []
        for part in self._parts:
            if part == "nmap":
                ids.extend(NMAP_PROBE_IDS)
            elif part == "topicmp":
                ids.extend(TOP_ICMP_PROBE_IDS)
            elif part in ("fuzz", "icmp"):
                ids.extend(fuzz_probe_id(t, c) for t, c, _ in self._catalog())
        out: list[str] = []
        for pid in ids:  # unique within a set, first occurrence wins
            if pid not in out:
                out.append(pid)
        return tuple(out)

    def build(self, target: str, port: int) -> list[ProbeSpec]:
        specs: dict[str, ProbeSpec] = {}
        for part in self._parts:
            if part == "nmap":
                built = nmap_closed_port_probes(target, port, self.statics)
            elif part == "topicmp":
                built = top_icmp_probes(target, self.statics)
            else:
                built = icmp_fuzz_probes(target, self._catalog(), self.statics)
            for spec in built:
                specs.setdefault(spec.probe_id, spec)
        return [specs[pid] for pid in self.probe_ids]
