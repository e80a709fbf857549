"""Alias resolution, traceroute annotation, and vendor prevalence.

Routers carry several interface addresses; the ITDK-style node file maps
them to devices so one physical box is counted once.  Annotated
traceroutes then feed the prevalence table: for each (source country,
destination continent) group, a vendor's probability is the fraction of
the group's traceroutes that contain at least one hop predicted as that
vendor.  Destination continents come from a longest-prefix geo table;
intermediate hops are never geolocated.
"""

from __future__ import annotations

import ipaddress
import json
from dataclasses import dataclass, field

from .classify import RandomForestModel, predict, transform_many
from .errors import DataError, SchemaError
from .features import build_schema, extract_features
from .probes import ProbeSet
from .scan import FingerprintRecord

UNRESPONSIVE_LABEL = "unresponsive"


@dataclass
class AliasMap:
    nodes: dict[str, tuple[str, ...]] = field(default_factory=dict)
    ip_to_node: dict[str, str] = field(default_factory=dict)


def parse_itdk_nodes(path: str) -> AliasMap:
    """Parse `node N<id>: <ip> <ip> ...` lines; '#' lines are comments."""
    amap = AliasMap()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) < 3 or parts[0] != "node" or not parts[1].endswith(":"):
                raise DataError("expected 'node N<id>: ip ...'", line=lineno, path=path)
            node_id = parts[1].rstrip(":")
            ips = parts[2:]
            for ip in ips:
                try:
                    ipaddress.IPv4Address(ip)
                except ipaddress.AddressValueError as exc:
                    raise DataError(f"bad IPv4 address {ip!r}", line=lineno, path=path) from exc
                other = amap.ip_to_node.get(ip)
                if other is not None:
                    raise DataError(
                        f"IP {ip} listed under both {other} and {node_id}",
                        line=lineno, path=path,
                    )
                amap.ip_to_node[ip] = node_id
            amap.nodes[node_id] = tuple(ips)
    return amap


@dataclass
class DealiasResult:
    records: list[FingerprintRecord]
    labels: dict[str, str]  # representative IP -> vendor
    dropped_conflicts: list[dict]
    devices_merged: int


def _ip_sort_key(ip: str):
    return tuple(int(part) for part in ip.split("."))


def dealias(
    records: list[FingerprintRecord],
    labels: dict[str, str],
    aliases: AliasMap,
) -> DealiasResult:
    """Collapse records of one device to a single representative.

    The representative is the record with the most non-null responses
    (ties to the numerically lowest IP).  Devices whose member IPs carry
    different vendor labels are dropped and reported.
    """
    groups: dict[str, list[FingerprintRecord]] = {}
    for rec in records:
        node = aliases.ip_to_node.get(rec.target, f"ip:{rec.target}")
        groups.setdefault(node, []).append(rec)

    kept: list[FingerprintRecord] = []
    out_labels: dict[str, str] = {}
    dropped: list[dict] = []
    merged = 0
    for node, members in groups.items():
        best = max(r.response_count() for r in members)
        rep = min(
            (r for r in members if r.response_count() == best),
            key=lambda r: _ip_sort_key(r.target),
        )
        if len(members) > 1:
            merged += 1
        vendors = {labels[r.target] for r in members if r.target in labels}
        if len(vendors) > 1:
            dropped.append({"node": node, "ips": [r.target for r in members],
                            "vendors": sorted(vendors)})
            continue
        kept.append(rep)
        if vendors:
            out_labels[rep.target] = vendors.pop()
    return DealiasResult(kept, out_labels, dropped, merged)


@dataclass
class FilterResult:
    labels: dict[str, str]
    kept_vendors: tuple[str, ...]
    removed_counts: dict[str, int]
    warned: bool = False


def filter_top_vendors(labels: dict[str, str], k: int = 11) -> FilterResult:
    """Keep the k most frequent vendor classes (ties break by name)."""
    hist: dict[str, int] = {}
    for vendor in labels.values():
        hist[vendor] = hist.get(vendor, 0) + 1
    ranked = sorted(hist.items(), key=lambda kv: (-kv[1], kv[0]))
    warned = len(ranked) < k
    kept = tuple(vendor for vendor, _n in ranked[:k])
    kept_set = set(kept)
    removed = {vendor: n for vendor, n in ranked[k:]}
    return FilterResult(
        labels={ip: v for ip, v in labels.items() if v in kept_set},
        kept_vendors=kept,
        removed_counts=removed,
        warned=warned,
    )


# ---------------------------------------------------------------------------
# geolocation table (toy stand-in; real GeoLite2 is out of scope)


@dataclass
class GeoTable:
    entries: list[tuple[ipaddress.IPv4Network, str]]

    def lookup(self, ip: str) -> str:
        addr = ipaddress.IPv4Address(ip)
        best: tuple[int, str] | None = None
        for network, continent in self.entries:
            if addr in network and (best is None or network.prefixlen > best[0]):
                best = (network.prefixlen, continent)
        return best[1] if best else "??"


def load_geo(path: str) -> GeoTable:
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("prefix,"):
                continue
            try:
                prefix, continent = line.split(",")
                entries.append((ipaddress.IPv4Network(prefix.strip()), continent.strip()))
            except ValueError as exc:
                raise DataError(f"bad geo row: {exc}", line=lineno, path=path) from exc
    return GeoTable(entries)


def save_geo(table: GeoTable, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("prefix,continent\n")
        for network, continent in table.entries:
            fh.write(f"{network},{continent}\n")


# ---------------------------------------------------------------------------
# traceroutes


@dataclass
class TracerouteRecord:
    source_id: str
    source_country: str
    dst: str
    hops: list[str | None]  # None = no reply at that hop

    def __post_init__(self):
        if not self.hops:
            raise ValueError("a traceroute needs at least one hop")


def save_traces(traces: list[TracerouteRecord], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in traces:
            fh.write(json.dumps({
                "source_id": t.source_id,
                "source_country": t.source_country,
                "dst": t.dst,
                "hops": t.hops,
            }) + "\n")


def load_traces(path: str) -> list[TracerouteRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
                out.append(TracerouteRecord(
                    source_id=doc["source_id"],
                    source_country=doc["source_country"],
                    dst=doc["dst"],
                    hops=doc["hops"],
                ))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise DataError(f"bad traceroute record: {exc}", line=lineno, path=path) from exc
    return out


@dataclass
class AnnotatedTrace:
    trace: TracerouteRecord
    hop_labels: list[str | None]  # vendor | "unknown" | "unresponsive" | None


def annotate_traceroutes(
    traces: list[TracerouteRecord],
    model: RandomForestModel,
    fingerprints: dict[str, FingerprintRecord],
    probeset: ProbeSet,
) -> list[AnnotatedTrace]:
    """Tag every hop with a predicted vendor, "unknown" when the model's
    confidence is below its threshold, or "unresponsive" without a usable
    fingerprint.  Pure function of (model, fingerprints, traces)."""
    schema = build_schema(probeset.probe_ids)
    if tuple(model.vocabulary.slots) != schema.slot_names:
        raise SchemaError("model vocabulary does not match the probeset schema")
    hop_ips = {ip for t in traces for ip in t.hops if ip is not None}
    responsive: list[str] = []
    vectors = []
    verdicts: dict[str, str] = {}
    for ip in sorted(hop_ips, key=_ip_sort_key):
        rec = fingerprints.get(ip)
        if rec is None or rec.response_count() == 0:
            verdicts[ip] = UNRESPONSIVE_LABEL
            continue
        responsive.append(ip)
        vectors.append(extract_features(rec, probeset))
    if responsive:
        X = transform_many(model.vocabulary, vectors)
        for ip, label in zip(responsive, predict(model, X)):
            verdicts[ip] = label
    return [
        AnnotatedTrace(t, [verdicts[ip] if ip is not None else None for ip in t.hops])
        for t in traces
    ]


# ---------------------------------------------------------------------------
# prevalence


@dataclass
class PrevalenceTable:
    rows: list[dict]  # source, continent, vendor, probability, n

    def to_csv(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("source,continent,vendor,probability,n\n")
            for row in self.rows:
                fh.write(
                    f"{row['source']},{row['continent']},{row['vendor']},"
                    f"{row['probability']:.6f},{row['n']}\n"
                )


def prevalence(annotated: list[AnnotatedTrace], geo: GeoTable) -> PrevalenceTable:
    """P(vendor | source, destination continent) over traceroutes.

    A vendor counts once per traceroute no matter how many hops carry it;
    destinations are geolocated, intermediate hops never are.  Every source
    also gets an ALL row pooled over its destinations.
    """
    groups: dict[tuple[str, str], list[set[str]]] = {}
    for ann in annotated:
        vendors = {label for label in ann.hop_labels if label is not None}
        continent = geo.lookup(ann.trace.dst)
        for key in ((ann.trace.source_country, continent), (ann.trace.source_country, "ALL")):
            groups.setdefault(key, []).append(vendors)
    rows = []
    for (source, continent), vendor_sets in sorted(groups.items()):
        n = len(vendor_sets)
        tally: dict[str, int] = {}
        for vendors in vendor_sets:
            for vendor in vendors:
                tally[vendor] = tally.get(vendor, 0) + 1
        for vendor, count in sorted(tally.items()):
            rows.append({
                "source": source,
                "continent": continent,
                "vendor": vendor,
                "probability": count / n,
                "n": n,
            })
    return PrevalenceTable(rows)
