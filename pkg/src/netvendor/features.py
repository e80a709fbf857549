"""Turn fingerprint records into fixed-schema categorical feature vectors.

Each feature family corresponds to one behavioral question (was the probe
answered, what TCP window came back, was the quoted UDP checksum intact,
...) and expands into one slot per applicable probe, named
``family@PROBE_ID``.  The schema is total: every slot is present in every
vector, with "ABSENT" filled in for probes that drew no response and "NA"
for responses that lack the queried field.  Booleans encode as Y/N,
sequence-number comparisons as Z/S/S+/O (zero, same as counterpart,
counterpart plus one, other), and numeric fields verbatim as strings.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass

from .errors import SchemaError
from .packet import (
    AddressMaskBody,
    ErrorBody,
    IcmpMessage,
    Packet,
    TcpFlags,
    TcpHeader,
    UdpHeader,
)
from .probes import ProbeSet, ProbeSpec
from .scan import FingerprintRecord

ABSENT = "ABSENT"
NA = "NA"

SCHEMA_VERSION = 1

# families, in the order they appear within one probe's slot group
F_RESP = "resp"
F_INIT_TTL = "ip_initial_ttl"
F_TTL_GUESS = "ip_initial_ttl_guess"
F_DF = "ip_df"
F_TCP_FLAGS = "tcp_flags"
F_TCP_WINDOW = "tcp_window"
F_ACK_CMP = "tcp_ack_cmp"
F_SEQ_CMP = "tcp_seq_cmp"
F_TCP_OPTIONS = "tcp_options"
F_RST_DATA = "tcp_rst_data"
F_QUIRKS = "tcp_quirks"
F_ICMP_TYPE = "icmp_type"
F_ICMP_CODE = "icmp_code"
F_ECHO_CODE = "icmp_echo_code"
F_ICMP_ID = "icmp_id"
F_ICMP_SEQ = "icmp_seq"
F_ADDR_MASK = "icmp_addr_mask"
F_RET_IP_ID = "returned_ip_id"
F_UDP_CKSUM = "udp_cksum_integrity"
F_UDP_DATA = "udp_data_integrity"
F_TOTAL_LEN = "ip_total_len"
F_UNUSED = "icmp_unused_nonzero"

ALL_FAMILIES = (
    F_INIT_TTL, F_TTL_GUESS, F_RESP, F_UDP_CKSUM, F_RST_DATA, F_TCP_FLAGS,
    F_ICMP_SEQ, F_ADDR_MASK, F_ICMP_ID, F_RET_IP_ID, F_ICMP_CODE, F_TCP_WINDOW,
    F_ACK_CMP, F_ECHO_CODE, F_TCP_OPTIONS, F_DF, F_SEQ_CMP, F_TOTAL_LEN,
    F_UNUSED, F_UDP_DATA, F_ICMP_TYPE, F_QUIRKS,
)

# closed per-family alphabets; None = open-ended (value strings verbatim).
# ABSENT can appear in any non-resp slot, NA in any answered-but-inapplicable slot.
FAMILY_ALPHABETS: dict[str, list[str] | None] = {
    F_RESP: ["Y", "N"],
    F_TTL_GUESS: ["32", "64", "128", "256", "ABSENT"],
    F_DF: ["Y", "N", "ABSENT"],
    F_ACK_CMP: ["Z", "S", "S+", "O", "NA", "ABSENT"],
    F_SEQ_CMP: ["Z", "S", "S+", "O", "NA", "ABSENT"],
    F_RET_IP_ID: ["S", "Z", "O", "NA", "ABSENT"],
    F_UDP_CKSUM: ["Y", "N", "NA", "ABSENT"],
    F_UDP_DATA: ["Y", "N", "NA", "ABSENT"],
    F_RST_DATA: ["Y", "N", "NA", "ABSENT"],
    F_UNUSED: ["Y", "N", "NA", "ABSENT"],
    F_QUIRKS: ["Y", "N", "NA", "ABSENT"],
    F_INIT_TTL: None,
    F_TCP_FLAGS: None,
    F_TCP_WINDOW: None,
    F_TCP_OPTIONS: None,
    F_ICMP_TYPE: None,
    F_ICMP_CODE: None,
    F_ECHO_CODE: None,
    F_ICMP_ID: None,
    F_ICMP_SEQ: None,
    F_ADDR_MASK: None,
    F_TOTAL_LEN: None,
}

_FUZZ_RE = re.compile(r"^FUZZ\((\d+),(\d+)\)$")

_ECHO_FAMILY = {0, 8, 15, 16}
_TS_FAMILY = {13, 14}
_MASK_FAMILY = {17, 18}


def probe_kind(probe_id: str) -> str:
    """Slot group for a probe: tcp, udp, echo, icmp_idseq, mask, icmp_min."""
    if probe_id in ("TCP1", "TCP2", "TCP3"):
        return "tcp"
    if probe_id == "UDP1":
        return "udp"
    if probe_id in ("ICMP_ECHO1", "ICMP_ECHO2"):
        return "echo"
    if probe_id == "ICMP_TIMESTAMP":
        return "icmp_idseq"
    if probe_id == "ICMP_ADDRMASK":
        return "mask"
    m = _FUZZ_RE.match(probe_id)
    if not m:
        raise SchemaError(f"unknown probe id {probe_id!r}")
    icmp_type = int(m.group(1))
    if icmp_type in _ECHO_FAMILY or icmp_type in _TS_FAMILY:
        return "icmp_idseq"
    if icmp_type in _MASK_FAMILY:
        return "mask"
    return "icmp_min"


_KIND_FAMILIES = {
    "tcp": (
        (F_RESP, "resp"), (F_TTL_GUESS, "ttl_guess"), (F_DF, "df"),
        (F_TCP_FLAGS, "flags"), (F_TCP_WINDOW, "window"), (F_ACK_CMP, "ack_cmp"),
        (F_SEQ_CMP, "seq_cmp"), (F_TCP_OPTIONS, "options"), (F_RST_DATA, "rst_data"),
        (F_QUIRKS, "quirk_reserved"), (F_QUIRKS, "quirk_urgptr"),
    ),
    "udp": (
        (F_RESP, "resp"), (F_INIT_TTL, "init_ttl"), (F_TTL_GUESS, "ttl_guess"),
        (F_DF, "df"), (F_ICMP_TYPE, "icmp_type"), (F_ICMP_CODE, "icmp_code"),
        (F_RET_IP_ID, "ret_ip_id"), (F_UDP_CKSUM, "udp_cksum"),
        (F_UDP_DATA, "udp_data"), (F_TOTAL_LEN, "total_len"), (F_UNUSED, "unused"),
    ),
    "echo": (
        (F_RESP, "resp"), (F_TTL_GUESS, "ttl_guess"), (F_DF, "df"),
        (F_ICMP_TYPE, "icmp_type"), (F_ECHO_CODE, "echo_code"),
        (F_ICMP_ID, "icmp_id"), (F_ICMP_SEQ, "icmp_seq"),
    ),
    "icmp_idseq": (
        (F_RESP, "resp"), (F_TTL_GUESS, "ttl_guess"), (F_DF, "df"),
        (F_ICMP_TYPE, "icmp_type"), (F_ICMP_CODE, "icmp_code"),
        (F_ICMP_ID, "icmp_id"), (F_ICMP_SEQ, "icmp_seq"),
    ),
    "mask": (
        (F_RESP, "resp"), (F_TTL_GUESS, "ttl_guess"), (F_DF, "df"),
        (F_ICMP_TYPE, "icmp_type"), (F_ICMP_CODE, "icmp_code"),
        (F_ICMP_ID, "icmp_id"), (F_ICMP_SEQ, "icmp_seq"), (F_ADDR_MASK, "mask"),
    ),
    "icmp_min": (
        (F_RESP, "resp"), (F_TTL_GUESS, "ttl_guess"), (F_DF, "df"),
        (F_ICMP_TYPE, "icmp_type"), (F_ICMP_CODE, "icmp_code"),
    ),
}


@dataclass(frozen=True)
class SlotDef:
    name: str
    family: str
    probe_id: str
    field: str


@dataclass(frozen=True)
class FeatureSchema:
    slots: tuple[SlotDef, ...]
    version: int = SCHEMA_VERSION

    @property
    def slot_names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.slots)

    @property
    def families(self) -> tuple[str, ...]:
        seen: list[str] = []
        for slot in self.slots:
            if slot.family not in seen:
                seen.append(slot.family)
        return tuple(seen)

    def family_of(self, slot_name: str) -> str:
        for slot in self.slots:
            if slot.name == slot_name:
                return slot.family
        raise SchemaError(f"unknown slot {slot_name!r}")

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "slots": [
                {"name": s.name, "family": s.family, "probe": s.probe_id, "field": s.field}
                for s in self.slots
            ],
            "alphabets": {family: FAMILY_ALPHABETS[family] for family in self.families},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "FeatureSchema":
        slots = tuple(
            SlotDef(s["name"], s["family"], s["probe"], s["field"]) for s in doc["slots"]
        )
        return cls(slots=slots, version=doc.get("version", SCHEMA_VERSION))


def _slot_name(family: str, fieldname: str, pid: str) -> str:
    # quirks expand to two named slots of the same family
    return f"{family}@{pid}" if family != F_QUIRKS else f"{fieldname}@{pid}"


_SCHEMA_CACHE: dict[tuple[str, ...], FeatureSchema] = {}


def build_schema(probe_ids: tuple[str, ...]) -> FeatureSchema:
    probe_ids = tuple(probe_ids)
    cached = _SCHEMA_CACHE.get(probe_ids)
    if cached is not None:
        return cached
    slots = []
    for pid in probe_ids:
        kind = probe_kind(pid)
        for family, fieldname in _KIND_FAMILIES[kind]:
            slots.append(SlotDef(_slot_name(family, fieldname, pid), family, pid, fieldname))
    schema = FeatureSchema(slots=tuple(slots))
    _SCHEMA_CACHE[probe_ids] = schema
    return schema


def save_schema(schema: FeatureSchema, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(schema.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_schema(path: str) -> FeatureSchema:
    with open(path, encoding="utf-8") as fh:
        return FeatureSchema.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# per-field extraction


def initial_ttl(observed_ttl: int, sent_ttl: int, quoted_ttl: int | None) -> int | None:
    """Recover the initial TTL via the hop count the quoted probe reveals."""
    if quoted_ttl is None:
        return None
    hops = sent_ttl - quoted_ttl
    return observed_ttl + hops


def initial_ttl_guess(observed_ttl: int) -> int:
    """Smallest of {32, 64, 128, 256} at or above the observed TTL.

    An initial TTL can never be below the observed one, so "closest" is
    implemented as smallest-not-less-than.
    """
    if not 0 < observed_ttl <= 256:
        raise ValueError(f"observed_ttl {observed_ttl} outside 1..256")
    for guess in (32, 64, 128, 256):
        if observed_ttl <= guess:
            return guess
    raise AssertionError("unreachable")


_FLAG_ORDER = (
    (TcpFlags.FIN, "F"), (TcpFlags.SYN, "S"), (TcpFlags.RST, "R"), (TcpFlags.PSH, "P"),
    (TcpFlags.ACK, "A"), (TcpFlags.URG, "U"), (TcpFlags.ECE, "E"), (TcpFlags.CWR, "C"),
)


def tcp_flags_str(flags: TcpFlags) -> str:
    out = "".join(letter for flag, letter in _FLAG_ORDER if flags & flag)
    return out or "NONE"


_OPTION_TOKENS = {2: "M", 3: "W", 8: "T"}


def tcp_options_str(options) -> str:
    tokens = []
    for opt in options:
        if opt.kind == 0:
            tokens.append("E")
        elif opt.kind == 1:
            tokens.append("N")
        elif opt.kind == 4:
            tokens.append("S")
        elif opt.kind in _OPTION_TOKENS:
            prefix = _OPTION_TOKENS[opt.kind]
            if opt.kind == 8:
                tokens.append("T")
            else:
                tokens.append(f"{prefix}{int.from_bytes(opt.data, 'big')}")
        else:
            tokens.append(f"K{opt.kind}")
    return ",".join(tokens) if tokens else "NONE"


def cmp_category(value: int, reference: int) -> str:
    if value == 0:
        return "Z"
    if value == reference:
        return "S"
    if value == (reference + 1) & 0xFFFFFFFF:
        return "S+"
    return "O"


def _yn(flag: bool) -> str:
    return "Y" if flag else "N"


def _mask_str(mask: bytes) -> str:
    return ".".join(str(b) for b in mask)


def _extract_probe(fields: tuple, probe: ProbeSpec, response: Packet | None) -> dict[str, str]:
    out: dict[str, str] = {}
    if response is None:
        for _family, fieldname in fields:
            out[fieldname] = "N" if fieldname == "resp" else ABSENT
        return out

    sent = probe.packet.parsed
    reply_tcp = response.transport if isinstance(response.transport, TcpHeader) else None
    reply_icmp = response.transport if isinstance(response.transport, IcmpMessage) else None
    quoted = None
    if reply_icmp is not None and isinstance(reply_icmp.body, ErrorBody):
        quoted = reply_icmp.body.quoted

    for _family, f in fields:
        if f == "resp":
            out[f] = "Y"
        elif f == "ttl_guess":
            out[f] = str(initial_ttl_guess(response.ip.ttl))
        elif f == "df":
            out[f] = _yn(response.ip.df)
        elif f == "flags":
            out[f] = tcp_flags_str(reply_tcp.flags) if reply_tcp else NA
        elif f == "window":
            out[f] = str(reply_tcp.window) if reply_tcp else NA
        elif f == "ack_cmp":
            out[f] = cmp_category(reply_tcp.ack, sent.transport.seq) if reply_tcp else NA
        elif f == "seq_cmp":
            out[f] = cmp_category(reply_tcp.seq, sent.transport.ack) if reply_tcp else NA
        elif f == "options":
            out[f] = tcp_options_str(reply_tcp.options) if reply_tcp else NA
        elif f == "rst_data":
            out[f] = _yn(bool(response.payload)) if reply_tcp else NA
        elif f == "quirk_reserved":
            out[f] = _yn(reply_tcp.reserved != 0) if reply_tcp else NA
        elif f == "quirk_urgptr":
            if reply_tcp is None:
                out[f] = NA
            else:
                out[f] = _yn(reply_tcp.urgent_ptr != 0 and not (reply_tcp.flags & TcpFlags.URG))
        elif f == "icmp_type":
            out[f] = str(reply_icmp.icmp_type) if reply_icmp else NA
        elif f in ("icmp_code", "echo_code"):
            out[f] = str(reply_icmp.code) if reply_icmp else NA
        elif f == "icmp_id":
            out[f] = str(reply_icmp.identifier) if reply_icmp and reply_icmp.identifier is not None else NA
        elif f == "icmp_seq":
            out[f] = str(reply_icmp.sequence) if reply_icmp and reply_icmp.sequence is not None else NA
        elif f == "mask":
            if reply_icmp and isinstance(reply_icmp.body, AddressMaskBody):
                out[f] = _mask_str(reply_icmp.body.mask)
            else:
                out[f] = NA
        elif f == "init_ttl":
            if quoted is None:
                out[f] = NA
            else:
                out[f] = str(initial_ttl(response.ip.ttl, probe.sent_ttl, quoted.ip.ttl))
        elif f == "ret_ip_id":
            if quoted is None:
                out[f] = NA
            else:
                qid = quoted.ip.identification
                sent_id = sent.ip.identification
                out[f] = "Z" if qid == 0 else ("S" if qid == sent_id else "O")
        elif f == "udp_cksum":
            if quoted is None or not isinstance(quoted.transport, UdpHeader):
                out[f] = NA
            else:
                out[f] = _yn(quoted.transport.checksum == sent.transport.checksum)
        elif f == "udp_data":
            if quoted is None:
                out[f] = NA
            else:
                out[f] = _yn(quoted.payload == sent.payload)
        elif f == "total_len":
            out[f] = str(response.ip.total_length)
        elif f == "unused":
            if reply_icmp and isinstance(reply_icmp.body, ErrorBody):
                out[f] = _yn(reply_icmp.body.unused != b"\x00\x00\x00\x00")
            else:
                out[f] = NA
        else:
            raise SchemaError(f"unhandled field {f!r}")
    return out


def extract_features(record: FingerprintRecord, probeset: ProbeSet) -> dict[str, str]:
    """One total, deterministic feature vector for a record.

    Raises SchemaError when the record lacks a probe of the set; extra
    probes in the record (from a wider scan) are ignored.
    """
    missing = [pid for pid in probeset.probe_ids if pid not in record.responses]
    if missing:
        raise SchemaError(f"record for {record.target} missing probes {missing[:4]}")
    probes = {p.probe_id: p for p in probeset.build(record.target, record.scan_port)}
    vector: dict[str, str] = {}
    for pid in probeset.probe_ids:
        fields = _KIND_FAMILIES[probe_kind(pid)]
        response = record.responses[pid]
        parsed = response.packet.parsed if response is not None else None
        values = _extract_probe(fields, probes[pid], parsed)
        for family, fieldname in fields:
            vector[_slot_name(family, fieldname, pid)] = values[fieldname]
    return vector


def save_features(rows: list[tuple[str, dict[str, str]]], path: str) -> None:
    """rows: (target, vector) pairs -> JSON lines."""
    with open(path, "w", encoding="utf-8") as fh:
        for target, vector in rows:
            fh.write(json.dumps({"target": target, "vector": vector}) + "\n")


def load_features(path: str) -> list[tuple[str, dict[str, str]]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                doc = json.loads(line)
                rows.append((doc["target"], doc["vector"]))
    return rows
