"""Drive a probe set against targets over an abstract transport.

The engine owns probe/response attribution: TCP replies are matched by
source address and swapped ports, the UDP probe by the IP ID quoted inside
the ICMP error, and ICMP info replies by echoed identifier/sequence, with
timestamp and address-mask replies accepted on reply type alone because
some stacks zero the identifier fields (their responses are still exactly
the behavior we need to record).  Probes run sequentially per target and
targets sequentially per scan, which keeps results deterministic for any
deterministic transport; ``max_in_flight`` is an upper bound the reference
engine trivially honors.
"""

from __future__ import annotations

import datetime as dt
import json
import random
from dataclasses import dataclass
from typing import Iterable, Protocol

from .errors import DataError, ScanError
from .packet import (
    ErrorBody,
    IcmpMessage,
    Packet,
    RawPacket,
    TcpHeader,
    UdpHeader,
    decode_packet,
)
from .probes import ProbeSet, ProbeSpec

# reply type expected for each ICMP request type we send
ICMP_REPLY_TYPE = {8: 0, 13: 14, 15: 16, 17: 18, 35: 36, 37: 38, 42: 43}


@dataclass(frozen=True)
class ScanConfig:
    retries: int = 3  # total attempts per probe
    timeout_ms: int = 1000
    max_in_flight: int = 64
    port_range: tuple[int, int] = (49152, 65535)
    rng_seed: int = 0

    def __post_init__(self):
        if self.retries < 1:
            raise ValueError("retries must be >= 1")
        lo, hi = self.port_range
        if not (1024 < lo <= hi <= 65535):
            raise ValueError(f"bad high-port range {self.port_range}")


@dataclass(frozen=True)
class ProbeResponse:
    packet: RawPacket
    observed_ttl: int
    rtt_ms: float


@dataclass
class FingerprintRecord:
    target: str
    scan_port: int
    responses: dict[str, ProbeResponse | None]
    timestamp: dt.datetime

    def response_count(self) -> int:
        return sum(1 for r in self.responses.values() if r is not None)


class Transport(Protocol):
    """One blocking send/collect exchange per probe attempt.

    Returns whatever packets arrived within the timeout as (source address,
    raw bytes, rtt_ms) tuples; the engine filters them against the probe.
    Implementations must be safe for concurrent ``exchange`` calls.
    """

    def exchange(self, probe: ProbeSpec, timeout_ms: int) -> list[tuple[str, bytes, float]]:
        ...


def choose_high_port(rng: random.Random, port_range: tuple[int, int]) -> int:
    """Uniform draw; the scan makes one draw and reuses it for all targets."""
    lo, hi = port_range
    return rng.randint(lo, hi)


def match_response(probe: ProbeSpec, src: str, packet: Packet | None) -> bool:
    if packet is None:
        return False
    sent = probe.packet.parsed
    if isinstance(sent.transport, TcpHeader):
        if src != probe.target or not isinstance(packet.transport, TcpHeader):
            return False
        return (
            packet.transport.src_port == sent.transport.dst_port
            and packet.transport.dst_port == sent.transport.src_port
        )
    if not isinstance(packet.transport, IcmpMessage):
        return False
    reply = packet.transport
    if isinstance(sent.transport, IcmpMessage):
        if src != probe.target:
            return False
        req = sent.transport
        if probe.probe_id.startswith("FUZZ("):
            return True  # one outstanding probe per target; any ICMP from it
        expected = ICMP_REPLY_TYPE.get(req.icmp_type)
        if req.icmp_type in (13, 17):  # timestamp/address mask: type alone
            return reply.icmp_type == expected
        if reply.icmp_type != expected:
            return False
        id_ok = reply.identifier in (req.identifier, 0, None)
        seq_ok = reply.sequence in (req.sequence, 0, None)
        return id_ok and seq_ok
    # UDP probe: an ICMP error quoting our datagram.  The quoted IP ID is
    # the primary key, but some stacks zero or mangle it (that mangling is
    # itself a recorded feature), so fall back to the quoted UDP ports.
    if not isinstance(reply.body, ErrorBody) or reply.body.quoted is None:
        return False
    quoted = reply.body.quoted
    if quoted.ip.identification == sent.ip.identification:
        return True
    return (
        isinstance(quoted.transport, UdpHeader)
        and quoted.transport.src_port == sent.transport.src_port
        and quoted.transport.dst_port == sent.transport.dst_port
    )


def run_scan(
    targets: list[str],
    probeset: ProbeSet,
    transport: Transport,
    config: ScanConfig,
    now: dt.datetime | None = None,
) -> list[FingerprintRecord]:
    """Probe every target, retrying each probe up to ``config.retries`` times.

    Every record keys all probe ids of the set; unanswered probes map to
    None.  All targets share the single high port drawn for this scan.
    """
    if not targets:
        raise ValueError("targets must be nonempty")
    rng = random.Random(config.rng_seed)
    port = choose_high_port(rng, config.port_range)
    stamp = now if now is not None else dt.datetime.now(dt.timezone.utc)
    records: list[FingerprintRecord] = []
    for target in targets:
        responses: dict[str, ProbeResponse | None] = {}
        for probe in probeset.build(target, port):
            responses[probe.probe_id] = None
            for _attempt in range(config.retries):
                try:
                    arrived = transport.exchange(probe, config.timeout_ms)
                except Exception as exc:
                    raise ScanError(
                        f"transport failed probing {target} ({probe.probe_id}): {exc}",
                        partial=records,
                    ) from exc
                hit = None
                for src, raw_bytes, rtt in arrived:
                    try:
                        raw = decode_packet(raw_bytes)
                    except Exception:
                        continue
                    if match_response(probe, src, raw.parsed):
                        hit = ProbeResponse(raw, raw.parsed.ip.ttl, rtt)
                        break
                if hit is not None:
                    responses[probe.probe_id] = hit
                    break
        records.append(FingerprintRecord(target, port, responses, stamp))
    return records


def drop_unresponsive(records: Iterable[FingerprintRecord]) -> tuple[list[FingerprintRecord], int]:
    """Remove records whose every response is null; returns (kept, removed)."""
    records = list(records)
    kept = [r for r in records if r.response_count() > 0]
    return kept, len(records) - len(kept)


def response_count_histogram(records: Iterable[FingerprintRecord], n_probes: int) -> list[int]:
    """Bucket counts for 0..n_probes responses per record."""
    buckets = [0] * (n_probes + 1)
    for rec in records:
        buckets[min(rec.response_count(), n_probes)] += 1
    return buckets


# ---------------------------------------------------------------------------
# persistence: JSON lines, one record per line


def _record_to_json(rec: FingerprintRecord) -> dict:
    responses = {}
    for pid, resp in rec.responses.items():
        if resp is None:
            responses[pid] = None
        else:
            responses[pid] = {
                "packet": resp.packet.data.hex(),
                "observed_ttl": resp.observed_ttl,
                "rtt_ms": resp.rtt_ms,
            }
    return {
        "target": rec.target,
        "scan_port": rec.scan_port,
        "timestamp": rec.timestamp.isoformat(),
        "responses": responses,
    }


def _record_from_json(doc: dict) -> FingerprintRecord:
    responses: dict[str, ProbeResponse | None] = {}
    for pid, body in doc["responses"].items():
        if body is None:
            responses[pid] = None
        else:
            responses[pid] = ProbeResponse(
                packet=decode_packet(bytes.fromhex(body["packet"])),
                observed_ttl=body["observed_ttl"],
                rtt_ms=body["rtt_ms"],
            )
    return FingerprintRecord(
        target=doc["target"],
        scan_port=doc["scan_port"],
        responses=responses,
        timestamp=dt.datetime.fromisoformat(doc["timestamp"]),
    )


def save_records(records: Iterable[FingerprintRecord], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(_record_to_json(rec), sort_keys=True) + "\n")


def load_records(path: str) -> list[FingerprintRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(_record_from_json(json.loads(line)))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise DataError(f"bad fingerprint record: {exc}", line=lineno, path=path) from exc
    return records
