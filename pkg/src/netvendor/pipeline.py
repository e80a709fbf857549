"""End-to-end synthetic pipeline: banners -> labels -> scan -> features ->
train -> predict -> insights.

Every stage writes its artifact under one output directory, every random
choice derives from the single seed, and the summary contains no wall
clock, so two runs with the same seed produce byte-identical files.
"""

from __future__ import annotations

import datetime as dt
import ipaddress
import json
import os
import random
from dataclasses import asdict, dataclass
from importlib import resources

from .classify import (
    Dataset,
    SearchSpace,
    balance_classes,
    evaluate_final,
    feature_importance_report,
    fit_ohe,
    random_search,
    save_leaderboard,
    save_model,
    select_unknown_threshold,
    stratified_kfold,
    train_forest,
    transform_many,
)
from .errors import DataError
from .features import build_schema, extract_features, save_features, save_schema
from .labeling import BannerRecord, apply_rules, load_rules, save_banners
from .probes import ProbeSet, ProbeStatics
from .scan import ScanConfig, drop_unresponsive, response_count_histogram, save_records
from .sim import load_profiles, make_network, save_network, synthesize_banners, synthesize_dataset
from .topology import (
    GeoTable,
    TracerouteRecord,
    annotate_traceroutes,
    dealias,
    filter_top_vendors,
    parse_itdk_nodes,
    prevalence,
    save_geo,
    save_traces,
)

FEATURE_SETS = (("nmap", "nmap"), ("icmp", "fuzz"), ("nmap+topicmp", "nmap+topicmp"))
SIM_EPOCH = dt.datetime(2020, 5, 27, tzinfo=dt.timezone.utc)

_CONTINENTS = ("NA", "EU", "AS", "SA", "OC", "AF")


@dataclass
class E2EConfig:
    outdir: str
    seed: int = 7
    per_vendor: int = 200  # devices per vendor
    alias_pairs_per_vendor: int = 5
    loss: float = 0.2
    search_configs: int = 8
    inner_k: int = 3
    outer_k: int = 5
    cap: int = 17000
    top_k_vendors: int = 11
    n_traces: int = 400
    profiles_path: str | None = None
    rules_path: str | None = None


def default_rules_path() -> str:
    return str(resources.files("netvendor.data").joinpath("rules.json"))


def _write_nodes_file(alias_groups: list[list[str]], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# synthetic alias groups (one router, several interfaces)\n")
        for i, group in enumerate(alias_groups, start=1):
            fh.write(f"node N{i}: {' '.join(group)}\n")


def _toy_geo_table() -> GeoTable:
    # targets live in 10.0.b.c; carve /23s so each continent owns b-ranges
    entries = [(ipaddress.IPv4Network("10.0.0.0/8"), "AF")]
    for i, continent in enumerate(_CONTINENTS[:5]):
        entries.append((ipaddress.IPv4Network(f"10.0.{2 * i}.0/23"), continent))
    return GeoTable(entries)


def _synthesize_traces(targets: list[str], n_traces: int, rng: random.Random):
    sources = (("ark-us", "US"), ("ark-de", "DE"))
    traces = []
    for i in range(n_traces):
        source_id, country = sources[i % len(sources)]
        dst = rng.choice(targets)
        n_hops = rng.randint(3, 8)
        hops: list[str | None] = [rng.choice(targets) for _ in range(n_hops)]
        for h in range(n_hops):
            if rng.random() < 0.10:
                hops[h] = None
        hops.append(dst)
        traces.append(TracerouteRecord(source_id, country, dst, hops))
    return traces


def run_e2e(config: E2EConfig) -> dict:
    os.makedirs(config.outdir, exist_ok=True)
    out = lambda name: os.path.join(config.outdir, name)
    seed = config.seed
    statics = ProbeStatics(timestamp_originate_ms=(seed * 9973) % 86_400_000)
    scan_time = SIM_EPOCH + dt.timedelta(seconds=seed % 86_400)

    # network + ground truth
    profiles = load_profiles(config.profiles_path)
    network, alias_groups, truth = make_network(
        profiles, config.per_vendor, seed=seed, loss=config.loss,
        alias_pairs_per_vendor=config.alias_pairs_per_vendor,
    )
    save_network(network, out("network.json"))
    _write_nodes_file(alias_groups, out("nodes.txt"))

    # banners -> labels
    banners = [BannerRecord(**doc) for doc in synthesize_banners(network, seed)]
    save_banners(banners, out("banners.jsonl"))
    rules = load_rules(config.rules_path or default_rules_path())
    assignment = apply_rules(banners, rules)
    labels = assignment.labels()
    with open(out("labels.csv"), "w", encoding="utf-8") as fh:
        fh.write("ip,vendor\n")
        for ip in sorted(labels, key=lambda s: tuple(int(p) for p in s.split("."))):
            fh.write(f"{ip},{labels[ip]}\n")

    # scan everything once with the probe superset
    scan_set = ProbeSet("nmap+topicmp+fuzz", statics)
    scan_config = ScanConfig(rng_seed=seed)
    records, _ = synthesize_dataset(network, scan_set, scan_config, now=scan_time)
    records, dropped_unresponsive = drop_unresponsive(records)
    save_records(records, out("fingerprints.jsonl"))
    response_hist = response_count_histogram(records, len(scan_set.probe_ids))

    # dealias to devices, filter to the top vendor classes, balance
    amap = parse_itdk_nodes(out("nodes.txt"))
    deal = dealias(records, labels, amap)
    filt = filter_top_vendors(deal.labels, k=config.top_k_vendors)
    device_records = [r for r in deal.records if r.target in filt.labels]
    device_labels = filt.labels
    balanced = balance_classes(
        Dataset(
            [r.target for r in device_records],
            [{} for _ in device_records],  # placeholder; per-set vectors fill below
            [device_labels[r.target] for r in device_records],
        ),
        config.cap,
        random.Random(seed + 17),
    )
    keep = set(balanced.targets)
    device_records = [r for r in device_records if r.target in keep]

    # per-feature-set extraction, search, evaluation
    summary_sets = {}
    search_space = SearchSpace()
    final_dataset = None
    final_best = None
    for set_name, probeset_name in FEATURE_SETS:
        probeset = ProbeSet(probeset_name, statics)
        vectors = [extract_features(r, probeset) for r in device_records]
        dataset = Dataset(
            [r.target for r in device_records],
            vectors,
            [device_labels[r.target] for r in device_records],
        )
        save_features(list(zip(dataset.targets, vectors)), out(f"features_{set_name}.jsonl"))
        save_schema(build_schema(probeset.probe_ids), out(f"schema_{set_name}.json"))
        best, leaderboard = random_search(
            dataset, search_space, n_configs=config.search_configs,
            inner_k=config.inner_k, rng=random.Random(seed + 101),
        )
        save_leaderboard(leaderboard, out(f"leaderboard_{set_name}.csv"))
        report = evaluate_final(dataset, best, outer_k=config.outer_k, rng=random.Random(seed + 202))
        summary_sets[set_name] = {
            "best_params": asdict(best),
            "search_best_score": leaderboard[0]["score"],
            "metrics": report.to_dict(),
        }
        if set_name == "nmap+topicmp":
            final_dataset, final_best = dataset, best

    # final model: fit on 80%, tune the unknown threshold on the held-out 20%
    rng_split = random.Random(seed + 303)
    splits = stratified_kfold(final_dataset.labels, 5, rng_split)
    train_idx, val_idx = splits[0][0], splits[0][1]
    train_ds = final_dataset.subset(train_idx)
    val_ds = final_dataset.subset(val_idx)
    vocabulary = fit_ohe(train_ds.vectors)
    X_train = transform_many(vocabulary, train_ds.vectors)
    model = train_forest(X_train, train_ds.labels, final_best, vocabulary)
    X_val = transform_many(vocabulary, val_ds.vectors)
    model.unknown_threshold = select_unknown_threshold(model, X_val, val_ds.labels)
    save_model(model, out("model.json"))

    final_probeset = ProbeSet("nmap+topicmp", statics)
    importance = feature_importance_report(model, build_schema(final_probeset.probe_ids))

    # traceroute insights
    geo = _toy_geo_table()
    save_geo(geo, out("geo.csv"))
    traces = _synthesize_traces(network.targets, config.n_traces, random.Random(seed + 404))
    save_traces(traces, out("traces.jsonl"))
    fingerprints = {r.target: r for r in records}
    annotated = annotate_traceroutes(traces, model, fingerprints, final_probeset)
    prev = prevalence(annotated, geo)
    prev.to_csv(out("prevalence.csv"))

    f1 = {name: summary_sets[name]["metrics"]["micro_f1"] for name, _p in FEATURE_SETS}
    config_echo = asdict(config)
    config_echo.pop("outdir")  # keep the summary byte-identical across outdirs
    summary = {
        "config": config_echo,
        "dataset": {
            "targets_scanned": len(network.targets),
            "dropped_unresponsive": dropped_unresponsive,
            "devices_merged": deal.devices_merged,
            "alias_conflicts_dropped": len(deal.dropped_conflicts),
            "devices": len(device_records),
            "label_histogram": dict(sorted(
                final_dataset.class_histogram().items()
            )),
            "response_count_histogram": response_hist,
            "banner_label_count": len(labels),
        },
        "feature_sets": summary_sets,
        "feature_set_ordering_micro_f1": {
            "nmap_plus_topicmp_gt_nmap": f1["nmap+topicmp"] > f1["nmap"],
            "nmap_gt_icmp": f1["nmap"] > f1["icmp"],
        },
        "final_model": {
            "unknown_threshold": model.unknown_threshold,
            "classes": list(model.classes),
            "ohe_width": vocabulary.width,
            "top_importances": [[fam, round(v, 6)] for fam, v in importance[:10]],
        },
        "prevalence_rows": len(prev.rows),
    }
    with open(out("summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return summary


def load_labels_csv(path: str) -> dict[str, str]:
    labels = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line == "ip,vendor":
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise DataError("expected 'ip,vendor'", line=lineno, path=path)
            labels[parts[0]] = parts[1]
    return labels


def save_labels_csv(labels: dict[str, str], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("ip,vendor\n")
        for ip in sorted(labels, key=lambda s: tuple(int(p) for p in s.split("."))):
            fh.write(f"{ip},{labels[ip]}\n")
