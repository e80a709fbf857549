"""Vendor labeling from banner corpora.

Two routes produce labels: direct vendor-name matching against the shipped
40-vendor table, and mined fingerprint rules (regexes linked to a vendor by
human review, with priorities for the supersede relation and a blacklist
for consumer-gear fingerprints).  Conflicts that survive precedence leave
the IP unlabeled but flagged, and the audit pass reports rules that co-fire
with other vendors so a reviewer can retire or re-prioritize them.
"""

from __future__ import annotations

import base64
import json
import random
import re
from dataclasses import dataclass, field
from importlib import resources

from ..errors import ConfigError, DataError
from .cluster import cluster_banners
from .distance import pairwise_distance_matrix
from .mining import mine_frequent_substrings

PROTOCOLS = ("SSH", "TELNET", "SNMP")


@dataclass(frozen=True)
class BannerRecord:
    ip: str
    protocol: str
    text: str  # raw banner, control characters preserved


def save_banners(banners: list[BannerRecord], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in banners:
            doc = {
                "ip": rec.ip,
                "protocol": rec.protocol,
                "text_b64": base64.b64encode(rec.text.encode("utf-8")).decode("ascii"),
            }
            fh.write(json.dumps(doc) + "\n")


def load_banners(path: str) -> list[BannerRecord]:
    out = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
                rec = BannerRecord(
                    ip=doc["ip"],
                    protocol=doc["protocol"],
                    text=base64.b64decode(doc["text_b64"]).decode("utf-8"),
                )
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise DataError(f"bad banner record: {exc}", line=lineno, path=path) from exc
            if (rec.ip, rec.protocol) in seen:
                raise DataError(
                    f"duplicate banner for ({rec.ip}, {rec.protocol})", line=lineno, path=path
                )
            seen.add((rec.ip, rec.protocol))
            out.append(rec)
    return out


@dataclass(frozen=True)
class FingerprintRule:
    id: str
    pattern: str
    vendor: str
    priority: int = 0
    blacklist: bool = False
    provenance: str = ""

    def compiled(self) -> re.Pattern:
        try:
            return re.compile(self.pattern, re.IGNORECASE | re.DOTALL)
        except re.error as exc:
            raise ConfigError(f"rule {self.id}: bad pattern {self.pattern!r}: {exc}") from exc


def load_rules(path: str) -> list[FingerprintRule]:
    with open(path, encoding="utf-8") as fh:
        docs = json.load(fh)
    rules = []
    for doc in docs:
        try:
            rule = FingerprintRule(**doc)
        except TypeError as exc:
            raise ConfigError(f"bad rule entry {doc!r}: {exc}") from exc
        rule.compiled()
        rules.append(rule)
    ids = [r.id for r in rules]
    if len(ids) != len(set(ids)):
        raise ConfigError("duplicate rule ids in rules file")
    return rules


def save_rules(rules: list[FingerprintRule], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([rule.__dict__ for rule in rules], fh, indent=1)
        fh.write("\n")


# ---------------------------------------------------------------------------
# vendor-name matching (the simple first-pass heuristic)


def load_vendor_names(path: str | None = None) -> dict[str, list[str]]:
    if path is None:
        text = resources.files("netvendor.data").joinpath("vendor_names.json").read_text()
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    return json.loads(text)


def regex_match_vendor(banner: BannerRecord, vendor_patterns: dict[str, list[str]]) -> set[str]:
    """All vendors whose name patterns appear in the banner (case-insensitive).

    Deliberately naive: "extreme consequences for unauthorized connections"
    matches the vendor "extreme".  The caller counts such conflicts.
    """
    hits = set()
    lowered = banner.text.lower()
    for vendor, patterns in vendor_patterns.items():
        if any(p.lower() in lowered for p in patterns):
            hits.add(vendor)
    return hits


# ---------------------------------------------------------------------------
# rule application


@dataclass(frozen=True)
class LabelResult:
    vendor: str | None
    rule_ids: frozenset[str]
    conflicted: bool


@dataclass
class LabelAssignment:
    assignments: dict[str, LabelResult] = field(default_factory=dict)
    blacklisted: set[str] = field(default_factory=set)

    def labels(self) -> dict[str, str]:
        return {
            ip: res.vendor
            for ip, res in self.assignments.items()
            if res.vendor is not None and not res.conflicted
        }


def apply_rules(corpus: list[BannerRecord], rules: list[FingerprintRule]) -> LabelAssignment:
    """Label every IP its banners allow.

    Blacklist matches exclude the IP outright.  Among vendor rules the
    highest priority wins; surviving multi-vendor matches mark the IP
    conflicted with no label.  Order-independent and idempotent.
    """
    compiled = [(rule, rule.compiled()) for rule in rules]
    per_ip: dict[str, set[FingerprintRule]] = {}
    blacklisted: set[str] = set()
    for rec in corpus:
        matched = {rule for rule, rx in compiled if rx.search(rec.text)}
        if any(r.blacklist for r in matched):
            blacklisted.add(rec.ip)
        vendor_rules = {r for r in matched if not r.blacklist}
        if vendor_rules:
            per_ip.setdefault(rec.ip, set()).update(vendor_rules)

    result = LabelAssignment(blacklisted=blacklisted)
    for ip, matched in per_ip.items():
        if ip in blacklisted:
            continue
        top = max(r.priority for r in matched)
        winners = {r for r in matched if r.priority == top}
        vendors = {r.vendor for r in winners}
        result.assignments[ip] = LabelResult(
            vendor=vendors.pop() if len(vendors) == 1 else None,
            rule_ids=frozenset(r.id for r in winners),
            conflicted=len({r.vendor for r in winners}) > 1,
        )
    return result


@dataclass(frozen=True)
class RuleAudit:
    rule_id: str
    vendor: str
    fires: int
    co_vendors: dict[str, int]
    flagged_for_removal: bool  # conflicts with more than one other vendor
    precedence_candidate: bool  # conflicts with exactly one other vendor


def audit_rules(corpus: list[BannerRecord], rules: list[FingerprintRule]) -> list[RuleAudit]:
    """Per-rule co-fire report; removal itself stays a human CLI action."""
    compiled = [(rule, rule.compiled()) for rule in rules if not rule.blacklist]
    audits = []
    for rule, rx in compiled:
        fires = 0
        co: dict[str, int] = {}
        for rec in corpus:
            if not rx.search(rec.text):
                continue
            fires += 1
            for other, orx in compiled:
                if other.vendor != rule.vendor and orx.search(rec.text):
                    co[other.vendor] = co.get(other.vendor, 0) + 1
        audits.append(
            RuleAudit(
                rule_id=rule.id,
                vendor=rule.vendor,
                fires=fires,
                co_vendors=co,
                flagged_for_removal=len(co) > 1,
                precedence_candidate=len(co) == 1,
            )
        )
    return audits


# ---------------------------------------------------------------------------
# iterative sample -> cluster -> mine loop


def iterate_labeling(
    corpus: list[BannerRecord],
    rules: list[FingerprintRule],
    sample_size: int,
    rounds: int,
    rng: random.Random,
    candidates_path: str | None = None,
    min_cluster_size: int = 5,
    min_samples: int = 5,
    min_substring_len: int = 8,
) -> list[dict]:
    """Per round and protocol: sample unlabeled banners, cluster, mine,
    emit candidate fingerprints for human review.

    The human step (linking candidates to vendors and appending rules)
    happens outside; with a fixed rule set the unlabeled pool cannot
    shrink, so the loop stops as soon as a round leaves it unchanged.
    Returns one progress row per (round, protocol).
    """
    if sample_size > 1000:
        raise ConfigError("sample_size capped at 1000")
    log: list[dict] = []
    candidates: list[dict] = []
    prev_unlabeled: int | None = None
    for round_no in range(1, rounds + 1):
        assignment = apply_rules(corpus, rules)
        labeled = set(assignment.labels())
        pool = [
            rec for rec in corpus
            if rec.ip not in labeled and rec.ip not in assignment.blacklisted
        ]
        for protocol in PROTOCOLS:
            proto_pool = [rec for rec in pool if rec.protocol == protocol]
            if not proto_pool:
                continue
            sample = rng.sample(proto_pool, min(sample_size, len(proto_pool)))
            matrix = pairwise_distance_matrix([rec.text for rec in sample])
            clusters = cluster_banners(matrix, min_cluster_size, min_samples)
            emitted = 0
            for idx, cluster in enumerate(c for c in clusters if not c.is_noise):
                texts = [sample[i].text for i in cluster.member_indices]
                mined = mine_frequent_substrings(texts, min_substring_len)
                candidates.append({
                    "round": round_no,
                    "protocol": protocol,
                    "cluster": idx,
                    "size": len(cluster.member_indices),
                    "sample_ips": [sample[i].ip for i in cluster.member_indices[:5]],
                    "top_substrings": [[s, n] for s, n in mined[:10]],
                })
                emitted += 1
            log.append({
                "round": round_no,
                "protocol": protocol,
                "sampled": len(sample),
                "clusters": emitted,
                "labeled": len(labeled),
                "unlabeled_pool": len(pool),
            })
        if prev_unlabeled is not None and len(pool) >= prev_unlabeled:
            break
        prev_unlabeled = len(pool)
    if candidates_path is not None:
        with open(candidates_path, "w", encoding="utf-8") as fh:
            for row in candidates:
                fh.write(json.dumps(row) + "\n")
    return log
