"""Deterministic per-vendor TCP/IP/ICMP stack simulator.

Profiles are pure data: each knob controls one observable idiosyncrasy
(initial TTL, RST window and options, whether an address-mask request gets
a reply, how much of a UDP probe the port-unreachable quotes, and so on).
The shipped pack of eleven profiles is a set of synthetic stand-ins named
after common router vendors; the knob settings are hand-chosen to be
mutually distinguishable, not measured firmware behavior.

The simulator plugs into the scan engine as a Transport.  All randomness
(per-attempt loss, jitter) derives from a stable hash of (seed, target,
probe, attempt), so identical seeds produce byte-identical datasets no
matter how calls interleave.
"""

from __future__ import annotations

import hashlib
import json
import random
import struct
from dataclasses import dataclass, field, asdict, replace
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
    inet_checksum,
)
from .probes import ProbeSpec
from .scan import ScanConfig, FingerprintRecord, run_scan

_OPTION_KINDS = {"eol": 0, "nop": 1, "mss": 2, "wscale": 3, "sack": 4, "timestamp": 8}


@dataclass(frozen=True)
class StackProfile:
    """Behavioral knobs for one simulated vendor stack (pure data)."""

    vendor: str
    initial_ttl: int = 64  # one of 32/64/128/255
    responds: dict = field(default_factory=dict)  # probe_id -> bool, default True
    echo_code_behavior: str = "zero"  # echo_back | zero
    icmp_id_behavior: str = "echo"  # echo | zero
    icmp_seq_behavior: str = "echo"  # echo | zero
    addrmask_reply: str | None = None  # dotted quad; None = no mask reply
    timestamp_reply: bool = True
    info_request_reply: bool = False
    unknown_icmp_behavior: str = "silent"  # silent | echo_back | echo_back_zero_code
    rst_has_data: bool = False
    tcp_window: int = 0
    tcp_options_reply: tuple = ()
    seq_behavior: str = "zero"  # zero | echo_ack | echo_ack_plus | other
    ack_behavior: str = "echo_seq_plus"  # zero | echo_seq | echo_seq_plus | other
    quirk_nonzero_reserved: bool = False
    quirk_urg_ptr_when_no_urg: bool = False
    df_bit: bool = False
    returned_ip_id: str = "same"  # same | zero | other
    udp_checksum_integrity: bool = True
    udp_data_integrity: bool = True
    quote_policy: str = "full"  # full | headers
    quoted_unused_nonzero: bool = False
    banner_template: str = ""

    def answers(self, probe_id: str) -> bool:
        return bool(self.responds.get(probe_id, True))


def profile_from_dict(doc: dict) -> StackProfile:
    doc = dict(doc)
    doc["tcp_options_reply"] = tuple(tuple(opt) for opt in doc.get("tcp_options_reply", ()))
    try:
        profile = StackProfile(**doc)
    except TypeError as exc:
        raise ConfigError(f"bad stack profile: {exc}") from exc
    for name, value, allowed in (
        ("echo_code_behavior", profile.echo_code_behavior, {"echo_back", "zero"}),
        ("icmp_id_behavior", profile.icmp_id_behavior, {"echo", "zero"}),
        ("icmp_seq_behavior", profile.icmp_seq_behavior, {"echo", "zero"}),
        ("unknown_icmp_behavior", profile.unknown_icmp_behavior,
         {"silent", "echo_back", "echo_back_zero_code"}),
        ("seq_behavior", profile.seq_behavior, {"zero", "echo_ack", "echo_ack_plus", "other"}),
        ("ack_behavior", profile.ack_behavior, {"zero", "echo_seq", "echo_seq_plus", "other"}),
        ("returned_ip_id", profile.returned_ip_id, {"same", "zero", "other"}),
        ("quote_policy", profile.quote_policy, {"full", "headers"}),
    ):
        if value not in allowed:
            raise ConfigError(f"profile {profile.vendor}: {name}={value!r} not in {sorted(allowed)}")
    return profile


def profile_to_dict(profile: StackProfile) -> dict:
    doc = asdict(profile)
    doc["tcp_options_reply"] = [list(opt) for opt in profile.tcp_options_reply]
    return doc


def load_profiles(path: str | None = None) -> list[StackProfile]:
    """Load a profile pack; the default pack ships with the package."""
    if path is None:
        text = resources.files("netvendor.data").joinpath("profiles.json").read_text()
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    return [profile_from_dict(doc) for doc in json.loads(text)]


def _reply_options(template: tuple) -> tuple[TcpOption, ...]:
    out = []
    for entry in template:
        name = entry[0]
        if name not in _OPTION_KINDS:
            raise ConfigError(f"unknown tcp option template entry {entry!r}")
        kind = _OPTION_KINDS[name]
        if name == "mss":
            out.append(TcpOption(kind, struct.pack("!H", int(entry[1]))))
        elif name == "wscale":
            out.append(TcpOption(kind, bytes([int(entry[1])])))
        elif name == "timestamp":
            out.append(TcpOption(kind, struct.pack("!II", 1, 0)))
        else:
            out.append(TcpOption(kind))
    return tuple(out)


def _dotted_to_bytes(mask: str) -> bytes:
    parts = [int(p) for p in mask.split(".")]
    if len(parts) != 4 or any(not 0 <= p <= 255 for p in parts):
        raise ConfigError(f"bad address mask {mask!r}")
    return bytes(parts)


_SEQ_OTHER = 0x7A11FADE
_ACK_OTHER = 0x0DDBA11

_ICMP_REQUEST_GATES = {8: "echo", 13: "timestamp", 15: "info", 17: "mask"}


def respond(profile: StackProfile, hops: int, probe: ProbeSpec, rng: random.Random) -> RawPacket | None:
    """The reply this stack would send for one probe, or None.

    The reply's IP TTL is initial_ttl - hops (return-path decrement), and
    every header field realizes the corresponding profile knob.
    """
    sent = probe.packet.parsed
    ttl = profile.initial_ttl - hops
    if ttl <= 0:
        return None
    reply_ip = Ipv4Header(
        src=probe.target,
        dst=sent.ip.src,
        protocol=sent.ip.protocol,
        ttl=ttl,
        df=profile.df_bit,
        identification=rng.randint(0, 0xFFFF),
    )

    if isinstance(sent.transport, TcpHeader):
        if not profile.answers(probe.probe_id):
            return None
        req = sent.transport
        seq = {
            "zero": 0,
            "echo_ack": req.ack,
            "echo_ack_plus": (req.ack + 1) & 0xFFFFFFFF,
            "other": _SEQ_OTHER,
        }[profile.seq_behavior]
        ack = {
            "zero": 0,
            "echo_seq": req.seq,
            "echo_seq_plus": (req.seq + 1) & 0xFFFFFFFF,
            "other": _ACK_OTHER,
        }[profile.ack_behavior]
        flags = TcpFlags.RST | (TcpFlags.ACK if profile.ack_behavior != "zero" else TcpFlags(0))
        tcp = TcpHeader(
            src_port=req.dst_port,
            dst_port=req.src_port,
            seq=seq,
            ack=ack,
            flags=flags,
            window=profile.tcp_window,
            reserved=0x4 if profile.quirk_nonzero_reserved else 0,
            urgent_ptr=0x6F02 if profile.quirk_urg_ptr_when_no_urg else 0,
            options=_reply_options(profile.tcp_options_reply),
        )
        payload = b"\x86\x18\xfe\x23" if profile.rst_has_data else b""
        return encode_packet(reply_ip, tcp, payload)

    if isinstance(sent.transport, UdpHeader):
        if not profile.answers(probe.probe_id):
            return None
        return _port_unreachable(profile, hops, probe, replace(reply_ip, protocol=1))

    req = sent.transport
    kind = _ICMP_REQUEST_GATES.get(req.icmp_type)
    if kind == "echo":
        if not profile.answers(probe.probe_id):
            return None
        code = req.code if profile.echo_code_behavior == "echo_back" else 0
        msg = IcmpMessage(0, code, _ident(profile, req), _seqno(profile, req),
                          EchoBody(req.body.payload))
    elif kind == "timestamp":
        if not (profile.answers(probe.probe_id) and profile.timestamp_reply):
            return None
        turn = (req.body.originate + hops + 1) & 0xFFFFFFFF
        msg = IcmpMessage(14, 0, _ident(profile, req), _seqno(profile, req),
                          TimestampBody(req.body.originate, turn, turn))
    elif kind == "mask":
        if not (profile.answers(probe.probe_id) and profile.addrmask_reply is not None):
            return None
        msg = IcmpMessage(18, 0, _ident(profile, req), _seqno(profile, req),
                          AddressMaskBody(_dotted_to_bytes(profile.addrmask_reply)))
    elif kind == "info" and profile.info_request_reply:
        msg = IcmpMessage(16, 0, _ident(profile, req), _seqno(profile, req), EchoBody(b""))
    else:
        # reply-type, error-type, or unimplemented request-type messages
        if profile.unknown_icmp_behavior == "silent" or not profile.answers(probe.probe_id):
            return None
        code = 0 if profile.unknown_icmp_behavior == "echo_back_zero_code" else req.code
        body = req.body
        if isinstance(body, (EchoBody, TimestampBody, AddressMaskBody)):
            msg = IcmpMessage(req.icmp_type, code, _ident(profile, req), _seqno(profile, req), body)
        elif isinstance(body, ErrorBody):
            msg = IcmpMessage(req.icmp_type, code,
                              body=ErrorBody(body.unused, body.quoted_bytes))
        else:
            msg = IcmpMessage(req.icmp_type, code, body=OpaqueBody(body.data))
    return encode_packet(reply_ip, msg)


def _ident(profile: StackProfile, req: IcmpMessage) -> int:
    return req.identifier if profile.icmp_id_behavior == "echo" else 0


def _seqno(profile: StackProfile, req: IcmpMessage) -> int:
    return req.sequence if profile.icmp_seq_behavior == "echo" else 0


def _port_unreachable(profile: StackProfile, hops: int, probe: ProbeSpec, reply_ip: Ipv4Header) -> RawPacket:
    """ICMP type 3 code 3 quoting the probe as this stack mangles it."""
    quoted = bytearray(probe.packet.data)
    quoted[8] = max(probe.sent_ttl - hops, 1)  # forward-path TTL decrement
    if profile.returned_ip_id == "zero":
        quoted[4:6] = b"\x00\x00"
    elif profile.returned_ip_id == "other":
        sent_id = struct.unpack("!H", quoted[4:6])[0]
        quoted[4:6] = struct.pack("!H", sent_id ^ 0x5A5A)
    quoted[10:12] = b"\x00\x00"
    quoted[10:12] = struct.pack("!H", inet_checksum(bytes(quoted[:20])))
    if not profile.udp_checksum_integrity:
        cksum = struct.unpack("!H", quoted[26:28])[0]
        quoted[26:28] = struct.pack("!H", cksum ^ 0x2442)
    if profile.quote_policy == "full" and not profile.udp_data_integrity and len(quoted) > 28:
        quoted[28] ^= 0x01
    if profile.quote_policy == "headers":
        quoted = quoted[:28]  # IP header + 8 bytes of transport
    unused = b"\x00\x00\x08\x15" if profile.quoted_unused_nonzero else b"\x00\x00\x00\x00"
    msg = IcmpMessage(3, 3, body=ErrorBody(unused=unused, quoted_bytes=bytes(quoted)))
    return encode_packet(reply_ip, msg)


# ---------------------------------------------------------------------------
# network of simulated targets


@dataclass
class SimNetwork:
    targets: list[str]
    hop_distance: dict[str, int]
    profiles: dict[str, StackProfile]
    loss: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        missing = [t for t in self.targets if t not in self.profiles or t not in self.hop_distance]
        if missing:
            raise ConfigError(f"targets without profile or hop distance: {missing[:3]}")
        if not 0 <= self.loss < 1:
            raise ConfigError(f"loss {self.loss} outside [0, 1)")


def make_network(
    profiles: list[StackProfile],
    per_vendor: int,
    seed: int = 0,
    loss: float = 0.0,
    alias_pairs_per_vendor: int = 0,
) -> tuple[SimNetwork, list[list[str]], dict[str, str]]:
    """Allocate per_vendor devices per profile in 10.0.0.0/8.

    The first ``alias_pairs_per_vendor`` devices of each vendor get two IP
    addresses (one router, two interfaces) and are reported as alias groups
    for the dealiasing stage.  Hop distances are drawn uniformly from 1-20
    per device so observed TTLs vary while initial TTLs stay vendor-fixed.
    Returns (network, alias_groups, ip->vendor labels).
    """
    rng = random.Random(seed)
    targets: list[str] = []
    hop_distance: dict[str, int] = {}
    profile_map: dict[str, StackProfile] = {}
    labels: dict[str, str] = {}
    alias_groups: list[list[str]] = []
    counter = 0

    def next_ip() -> str:
        nonlocal counter
        a, rem = divmod(counter, 254 * 254)
        b, c = divmod(rem, 254)
        counter += 1
        return f"10.{a}.{b}.{c + 1}"

    for profile in profiles:
        for dev in range(per_vendor):
            n_ips = 2 if dev < alias_pairs_per_vendor else 1
            hops = rng.randint(1, 20)
            ips = [next_ip() for _ in range(n_ips)]
            for ip in ips:
                targets.append(ip)
                hop_distance[ip] = hops
                profile_map[ip] = profile
                labels[ip] = profile.vendor
            if n_ips > 1:
                alias_groups.append(ips)
    network = SimNetwork(targets, hop_distance, profile_map, loss=loss, rng_seed=seed)
    return network, alias_groups, labels


def save_network(network: SimNetwork, path: str) -> None:
    doc = {
        "seed": network.rng_seed,
        "loss": network.loss,
        "targets": [
            {"ip": ip, "hops": network.hop_distance[ip], "vendor": network.profiles[ip].vendor}
            for ip in network.targets
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_network(path: str, profiles: list[StackProfile]) -> SimNetwork:
    by_vendor = {p.vendor: p for p in profiles}
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    targets, hops, pmap = [], {}, {}
    for entry in doc["targets"]:
        vendor = entry["vendor"]
        if vendor not in by_vendor:
            raise ConfigError(f"network references unknown profile vendor {vendor!r}")
        targets.append(entry["ip"])
        hops[entry["ip"]] = entry["hops"]
        pmap[entry["ip"]] = by_vendor[vendor]
    return SimNetwork(targets, hops, pmap, loss=doc["loss"], rng_seed=doc["seed"])


class SimTransport:
    """Transport backed by a SimNetwork; safe for concurrent exchange calls.

    Loss is drawn i.i.d. per attempt from a hash of (seed, target, probe,
    attempt), so retry behavior is exercised yet reproducible.
    """

    def __init__(self, network: SimNetwork):
        self.network = network
        self.sent_counts: dict[tuple[str, str], int] = {}

    def _rng(self, target: str, probe_id: str, attempt: int) -> random.Random:
        material = f"{self.network.rng_seed}|{target}|{probe_id}|{attempt}".encode()
        digest = hashlib.sha256(material).digest()
        return random.Random(int.from_bytes(digest[:8], "big"))

    def exchange(self, probe: ProbeSpec, timeout_ms: int) -> list[tuple[str, bytes, float]]:
        target = probe.target
        if target not in self.network.profiles:
            raise ConfigError(f"target {target} not in simulated network")
        key = (target, probe.probe_id)
        attempt = self.sent_counts.get(key, 0) + 1
        self.sent_counts[key] = attempt
        rng = self._rng(target, probe.probe_id, attempt)
        if rng.random() < self.network.loss:
            return []
        hops = self.network.hop_distance[target]
        reply = respond(self.network.profiles[target], hops, probe, rng)
        if reply is None:
            return []
        rtt = round(hops * 1.4 + rng.random() * 3.0, 3)
        return [(target, reply.data, rtt)]


def synthesize_dataset(
    network: SimNetwork, probeset, config: ScanConfig, now=None
) -> tuple[list[FingerprintRecord], dict[str, str]]:
    """Scan the simulated network; labels come straight from the profiles."""
    records = run_scan(network.targets, probeset, SimTransport(network), config, now=now)
    labels = {ip: network.profiles[ip].vendor for ip in network.targets}
    return records, labels


def synthesize_banners(network: SimNetwork, seed: int = 0) -> list[dict]:
    """Render each profile's banner template per target ('#' becomes a digit)."""
    rng = random.Random(seed ^ 0x5EED)
    protocols = ("SSH", "TELNET", "SNMP")
    out = []
    for idx, ip in enumerate(network.targets):
        template = network.profiles[ip].banner_template
        text = "".join(str(rng.randint(0, 9)) if ch == "#" else ch for ch in template)
        out.append({"ip": ip, "protocol": protocols[idx % 3], "text": text})
    return out
