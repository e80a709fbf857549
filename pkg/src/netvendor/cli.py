"""netvendor command line: one binary wiring the whole pipeline.

Exit codes: 0 success, 1 usage error, 2 data/configuration error,
3 internal error.  With --json-errors failures additionally print one JSON
object on stderr.  Options resolve as CLI flag > config file (TOML, via
--config) > built-in default.
"""

from __future__ import annotations

import datetime as dt
import json
import random
import sys

import click

try:
    import tomllib  # py311+
except ModuleNotFoundError:  # pragma: no cover - py310 path
    import tomli as tomllib

from . import pipeline as pl
from .classify import (
    Dataset,
    SearchSpace,
    balance_classes,
    evaluate_final,
    fit_ohe,
    load_model,
    predict,
    predict_proba,
    random_search,
    save_leaderboard,
    save_model,
    select_unknown_threshold,
    stratified_kfold,
    train_forest,
    transform_many,
)
from .errors import ConfigError, NetvendorError
from .features import build_schema, extract_features, load_features, save_features, save_schema
from .labeling import (
    apply_rules,
    audit_rules,
    iterate_labeling,
    load_banners,
    load_rules,
    load_vendor_names,
    mine_frequent_substrings,
    regex_match_vendor,
)
from .packet import hex_dump
from .probes import ProbeSet, ProbeStatics
from .scan import ScanConfig, load_records, run_scan, save_records
from .sim import SimTransport, load_network, load_profiles, make_network, save_network, synthesize_dataset
from .topology import annotate_traceroutes, dealias, filter_top_vendors, load_geo, load_traces, parse_itdk_nodes, prevalence


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _cfg(ctx, section: str, key: str, default):
    """CLI flag > config file > default (flags use None sentinels)."""
    config = ctx.obj.get("config", {})
    return config.get(section, {}).get(key, default)


def _parse_port_range(text: str) -> tuple[int, int]:
    try:
        lo, hi = text.split(":")
        return int(lo), int(hi)
    except ValueError as exc:
        raise ConfigError(f"bad port range {text!r}, expected LO:HI") from exc


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="TOML config file; CLI flags override it.")
@click.option("--json-errors", is_flag=True, default=False,
              help="Emit machine-readable errors on stderr.")
@click.pass_context
def cli(ctx, config_path, json_errors):
    """Network device vendor fingerprinting toolkit."""
    ctx.ensure_object(dict)
    ctx.obj["config"] = _load_config(config_path)
    ctx.obj["json_errors"] = json_errors


# --------------------------------------------------------------------- probes


@cli.group()
def probes():
    """Inspect the probe catalog."""


@probes.command("dump")
@click.option("--target", required=True)
@click.option("--port", type=int, required=True)
@click.option("--probeset", "probeset_name", default="nmap+topicmp")
@click.option("--dump-hex", is_flag=True, default=False)
@click.option("--timestamp-ms", type=int, default=0, help="Fixed originate timestamp.")
def probes_dump(target, port, probeset_name, dump_hex, timestamp_ms):
    """Print every probe for one target."""
    statics = ProbeStatics(timestamp_originate_ms=timestamp_ms)
    for spec in ProbeSet(probeset_name, statics).build(target, port):
        dst = f" port {spec.dst_port}" if spec.dst_port is not None else ""
        click.echo(f"{spec.probe_id}: {len(spec.packet.data)} bytes ttl {spec.sent_ttl}{dst}")
        if dump_hex:
            click.echo(hex_dump(spec.packet))
        else:
            click.echo(f"  {spec.packet.data.hex()}")


# ------------------------------------------------------------------------ sim


@cli.group()
def sim():
    """Simulated vendor stacks."""


@sim.command("make-dataset")
@click.option("--profiles", "profiles_path", type=click.Path(exists=True), default=None)
@click.option("--per-vendor", type=int, default=None)
@click.option("--alias-pairs", type=int, default=0, help="Two-interface devices per vendor.")
@click.option("--seed", type=int, default=None)
@click.option("--loss", type=float, default=None)
@click.option("--probeset", "probeset_name", default="nmap+topicmp+fuzz")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--labels", "labels_path", required=True, type=click.Path())
@click.option("--network", "network_path", type=click.Path(), default=None,
              help="Write the generated network spec here (or load it if it exists).")
@click.option("--nodes", "nodes_path", type=click.Path(), default=None,
              help="Write alias groups as an ITDK-style nodes file.")
@click.pass_context
def sim_make_dataset(ctx, profiles_path, per_vendor, alias_pairs, seed, loss,
                     probeset_name, out_path, labels_path, network_path, nodes_path):
    """Scan a simulated network and write fingerprints + ground-truth labels."""
    import os

    seed = seed if seed is not None else _cfg(ctx, "sim", "seed", 0)
    per_vendor = per_vendor if per_vendor is not None else _cfg(ctx, "sim", "per_vendor", 200)
    loss = loss if loss is not None else _cfg(ctx, "sim", "loss", 0.0)
    profiles = load_profiles(profiles_path)
    if network_path and os.path.exists(network_path):
        network = load_network(network_path, profiles)
        alias_groups = []
        labels = {ip: network.profiles[ip].vendor for ip in network.targets}
    else:
        network, alias_groups, labels = make_network(
            profiles, per_vendor, seed=seed, loss=loss, alias_pairs_per_vendor=alias_pairs
        )
        if network_path:
            save_network(network, network_path)
    statics = ProbeStatics(timestamp_originate_ms=(seed * 9973) % 86_400_000)
    records, labels = synthesize_dataset(
        network, ProbeSet(probeset_name, statics), ScanConfig(rng_seed=seed),
        now=pl.SIM_EPOCH + dt.timedelta(seconds=seed % 86_400),
    )
    save_records(records, out_path)
    pl.save_labels_csv(labels, labels_path)
    if nodes_path:
        pl._write_nodes_file(alias_groups, nodes_path)
    click.echo(f"wrote {len(records)} fingerprint records to {out_path}")


# ----------------------------------------------------------------------- scan


@cli.command("scan")
@click.option("--targets", "targets_path", required=True, type=click.Path(exists=True),
              help="File with one IPv4 address per line.")
@click.option("--probeset", "probeset_name", default="nmap+topicmp")
@click.option("--port-range", default=None, help="High-port range LO:HI.")
@click.option("--seed", type=int, default=None)
@click.option("--retries", type=int, default=None)
@click.option("--timeout-ms", type=int, default=None)
@click.option("--transport", "transport_kind", type=click.Choice(["sim", "live"]), default="sim")
@click.option("--profiles", "profiles_path", type=click.Path(exists=True), default=None,
              help="Stack profiles for the sim transport.")
@click.option("--network", "network_path", type=click.Path(exists=True), default=None,
              help="Simulated network spec (sim transport).")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.pass_context
def scan_cmd(ctx, targets_path, probeset_name, port_range, seed, retries, timeout_ms,
             transport_kind, profiles_path, network_path, out_path):
    """Probe targets and persist fingerprint records."""
    seed = seed if seed is not None else _cfg(ctx, "scan", "seed", 0)
    port_range = port_range or _cfg(ctx, "scan", "port_range", "49152:65535")
    retries = retries if retries is not None else _cfg(ctx, "scan", "retries", 3)
    timeout_ms = timeout_ms if timeout_ms is not None else _cfg(ctx, "scan", "timeout_ms", 1000)
    with open(targets_path, encoding="utf-8") as fh:
        targets = [line.strip() for line in fh if line.strip() and not line.startswith("#")]
    if transport_kind == "live":
        raise ConfigError(
            "the live raw-socket transport is not included in this build; "
            "use --transport sim with --network/--profiles"
        )
    if network_path is None:
        raise ConfigError("--transport sim requires --network (see `sim make-dataset --network`)")
    network = load_network(network_path, load_profiles(profiles_path))
    statics = ProbeStatics(timestamp_originate_ms=(seed * 9973) % 86_400_000)
    config = ScanConfig(retries=retries, timeout_ms=timeout_ms,
                        port_range=_parse_port_range(port_range), rng_seed=seed)
    records = run_scan(targets, ProbeSet(probeset_name, statics), SimTransport(network), config,
                       now=pl.SIM_EPOCH + dt.timedelta(seconds=seed % 86_400))
    save_records(records, out_path)
    click.echo(f"scanned {len(targets)} targets on port {records[0].scan_port} -> {out_path}")


# -------------------------------------------------------------------- extract


@cli.command("extract")
@click.option("--records", "records_path", required=True, type=click.Path(exists=True))
@click.option("--probeset", "probeset_name", default="nmap+topicmp")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--schema", "schema_path", type=click.Path(), default=None)
@click.option("--timestamp-ms", type=int, default=0)
def extract_cmd(records_path, probeset_name, out_path, schema_path, timestamp_ms):
    """Fingerprint records -> categorical feature vectors."""
    statics = ProbeStatics(timestamp_originate_ms=timestamp_ms)
    probeset = ProbeSet(probeset_name, statics)
    records = load_records(records_path)
    rows = [(r.target, extract_features(r, probeset)) for r in records]
    save_features(rows, out_path)
    if schema_path:
        save_schema(build_schema(probeset.probe_ids), schema_path)
    click.echo(f"extracted {len(rows)} vectors ({len(build_schema(probeset.probe_ids).slots)} slots)")


# ---------------------------------------------------------------------- label


@cli.group()
def label():
    """Banner labeling: vendor names, clustering, rules."""


@label.command("regex")
@click.option("--banners", "banners_path", required=True, type=click.Path(exists=True))
@click.option("--names", "names_path", type=click.Path(exists=True), default=None)
@click.option("--out", "out_path", required=True, type=click.Path())
def label_regex(banners_path, names_path, out_path):
    """Vendor-name matching; conflicted IPs are reported, not labeled."""
    names = load_vendor_names(names_path)
    banners = load_banners(banners_path)
    per_ip: dict[str, set[str]] = {}
    for rec in banners:
        per_ip.setdefault(rec.ip, set()).update(regex_match_vendor(rec, names))
    labels = {ip: vendors.pop() for ip, vendors in per_ip.items() if len(vendors) == 1}
    conflicts = sum(1 for vendors in per_ip.values() if len(vendors) > 1)
    pl.save_labels_csv(labels, out_path)
    click.echo(f"labeled {len(labels)} IPs, {conflicts} conflicts")


@label.command("cluster")
@click.option("--banners", "banners_path", required=True, type=click.Path(exists=True))
@click.option("--rules", "rules_path", type=click.Path(exists=True), default=None)
@click.option("--sample", "sample_size", type=int, default=1000)
@click.option("--rounds", type=int, default=1)
@click.option("--seed", type=int, default=0)
@click.option("--min-cluster-size", type=int, default=5)
@click.option("--min-samples", type=int, default=5)
@click.option("--candidates", "candidates_path", required=True, type=click.Path())
def label_cluster(banners_path, rules_path, sample_size, rounds, seed,
                  min_cluster_size, min_samples, candidates_path):
    """Sample unlabeled banners, cluster, mine candidate fingerprints."""
    banners = load_banners(banners_path)
    rules = load_rules(rules_path) if rules_path else []
    log = iterate_labeling(
        banners, rules, sample_size, rounds, random.Random(seed),
        candidates_path=candidates_path,
        min_cluster_size=min_cluster_size, min_samples=min_samples,
    )
    for row in log:
        click.echo(json.dumps(row))


@label.command("mine")
@click.option("--banners", "banners_path", required=True, type=click.Path(exists=True))
@click.option("--min-len", type=int, default=8)
@click.option("--top", type=int, default=20)
def label_mine(banners_path, min_len, top):
    """Frequent substrings across all given banners."""
    banners = load_banners(banners_path)
    for substring, freq in mine_frequent_substrings([b.text for b in banners], min_len)[:top]:
        click.echo(f"{freq}\t{substring!r}")


@label.command("apply")
@click.option("--banners", "banners_path", required=True, type=click.Path(exists=True))
@click.option("--rules", "rules_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--report", "report_path", type=click.Path(), default=None)
def label_apply(banners_path, rules_path, out_path, report_path):
    """Apply fingerprint rules; blacklist excludes, priorities resolve."""
    banners = load_banners(banners_path)
    assignment = apply_rules(banners, load_rules(rules_path))
    labels = assignment.labels()
    pl.save_labels_csv(labels, out_path)
    conflicted = [ip for ip, res in assignment.assignments.items() if res.conflicted]
    if report_path:
        with open(report_path, "w", encoding="utf-8") as fh:
            json.dump({
                "labeled": len(labels),
                "conflicted": sorted(conflicted),
                "blacklisted": sorted(assignment.blacklisted),
            }, fh, indent=1, sort_keys=True)
            fh.write("\n")
    click.echo(
        f"labeled {len(labels)}, conflicted {len(conflicted)}, "
        f"blacklisted {len(assignment.blacklisted)}"
    )


@label.command("audit")
@click.option("--banners", "banners_path", required=True, type=click.Path(exists=True))
@click.option("--rules", "rules_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", type=click.Path(), default=None)
def label_audit(banners_path, rules_path, out_path):
    """Report rules that co-fire with other vendors."""
    audits = audit_rules(load_banners(banners_path), load_rules(rules_path))
    rows = [a.__dict__ for a in audits]
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=1, sort_keys=True)
            fh.write("\n")
    for a in audits:
        flag = "REMOVE" if a.flagged_for_removal else ("PRECEDENCE" if a.precedence_candidate else "ok")
        click.echo(f"{a.rule_id}: fires={a.fires} co={a.co_vendors} [{flag}]")


# -------------------------------------------------------------------- dealias


@cli.command("dealias")
@click.option("--records", "records_path", required=True, type=click.Path(exists=True))
@click.option("--labels", "labels_path", required=True, type=click.Path(exists=True))
@click.option("--nodes", "nodes_path", required=True, type=click.Path(exists=True))
@click.option("--top-k", type=int, default=None, help="Also filter to the top K vendors.")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--out-labels", "out_labels_path", required=True, type=click.Path())
def dealias_cmd(records_path, labels_path, nodes_path, top_k, out_path, out_labels_path):
    """Collapse aliased IPs to devices; optionally keep only top-K vendors."""
    records = load_records(records_path)
    labels = pl.load_labels_csv(labels_path)
    result = dealias(records, labels, parse_itdk_nodes(nodes_path))
    out_labels = result.labels
    kept_records = result.records
    if top_k is not None:
        filt = filter_top_vendors(out_labels, k=top_k)
        out_labels = filt.labels
        kept_records = [r for r in kept_records if r.target in out_labels]
        if filt.warned:
            click.echo(f"warning: only {len(filt.kept_vendors)} classes present", err=True)
    save_records(kept_records, out_path)
    pl.save_labels_csv(out_labels, out_labels_path)
    click.echo(
        f"{len(records)} records -> {len(kept_records)} devices "
        f"(merged {result.devices_merged}, conflicts {len(result.dropped_conflicts)})"
    )


# ---------------------------------------------------------------------- train


@cli.command("train")
@click.option("--features", "features_path", required=True, type=click.Path(exists=True))
@click.option("--labels", "labels_path", required=True, type=click.Path(exists=True))
@click.option("--cap", type=int, default=None)
@click.option("--search", "n_search", type=int, default=None)
@click.option("--inner-k", type=int, default=None)
@click.option("--outer-k", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--threshold", default="auto", help="auto | none | float")
@click.option("--out", "model_path", required=True, type=click.Path())
@click.option("--leaderboard", "leaderboard_path", type=click.Path(), default=None)
@click.option("--report", "report_path", type=click.Path(), default=None)
@click.pass_context
def train_cmd(ctx, features_path, labels_path, cap, n_search, inner_k, outer_k, seed,
              threshold, model_path, leaderboard_path, report_path):
    """Balance, search hyperparameters, cross-validate, fit, and persist."""
    cap = cap if cap is not None else _cfg(ctx, "train", "cap", 17000)
    n_search = n_search if n_search is not None else _cfg(ctx, "train", "search", 50)
    inner_k = inner_k if inner_k is not None else _cfg(ctx, "train", "inner_k", 3)
    outer_k = outer_k if outer_k is not None else _cfg(ctx, "train", "outer_k", 5)
    seed = seed if seed is not None else _cfg(ctx, "train", "seed", 0)
    rows = load_features(features_path)
    labels = pl.load_labels_csv(labels_path)
    rows = [(t, v) for t, v in rows if t in labels]
    dataset = Dataset([t for t, _ in rows], [v for _, v in rows], [labels[t] for t, _ in rows])
    dataset = balance_classes(dataset, cap, random.Random(seed + 17))
    best, leaderboard = random_search(
        dataset, SearchSpace(), n_configs=n_search, inner_k=inner_k, rng=random.Random(seed + 101)
    )
    if leaderboard_path:
        save_leaderboard(leaderboard, leaderboard_path)
    report = evaluate_final(dataset, best, outer_k=outer_k, rng=random.Random(seed + 202))
    splits = stratified_kfold(dataset.labels, 5, random.Random(seed + 303))
    train_ds, val_ds = dataset.subset(splits[0][0]), dataset.subset(splits[0][1])
    vocabulary = fit_ohe(train_ds.vectors)
    model = train_forest(
        transform_many(vocabulary, train_ds.vectors), train_ds.labels, best, vocabulary
    )
    if threshold == "auto":
        model.unknown_threshold = select_unknown_threshold(
            model, transform_many(vocabulary, val_ds.vectors), val_ds.labels
        )
    elif threshold != "none":
        model.unknown_threshold = float(threshold)
    save_model(model, model_path)
    if report_path:
        with open(report_path, "w", encoding="utf-8") as fh:
            json.dump(report.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")
    click.echo(
        f"balanced_accuracy={report.balanced_accuracy:.4f} "
        f"roc_auc_ovr={report.roc_auc_ovr:.4f} micro_f1={report.micro_f1:.4f} "
        f"threshold={model.unknown_threshold}"
    )


# -------------------------------------------------------------------- predict


@cli.command("predict")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--features", "features_path", required=True, type=click.Path(exists=True))
@click.option("--threshold", default="auto", help="auto (stored) | none | float")
@click.option("--out", "out_path", required=True, type=click.Path())
def predict_cmd(model_path, features_path, threshold, out_path):
    """Predict a vendor (or unknown) per feature vector."""
    model = load_model(model_path)
    if threshold == "auto":
        used = model.unknown_threshold
    elif threshold == "none":
        used = None
    else:
        used = float(threshold)
    rows = load_features(features_path)
    X = transform_many(model.vocabulary, [v for _t, v in rows])
    proba = predict_proba(model, X)
    preds = predict(model, X, threshold=used)
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"meta": {
            "model": model_path, "threshold": used, "classes": list(model.classes),
        }}) + "\n")
        for (target, _v), vendor, p in zip(rows, preds, proba):
            fh.write(json.dumps({
                "target": target, "vendor": vendor, "confidence": round(float(p.max()), 6),
            }) + "\n")
    click.echo(f"predicted {len(rows)} targets (threshold={used}) -> {out_path}")


# ------------------------------------------------------------------- insights


@cli.command("insights")
@click.option("--traces", "traces_path", required=True, type=click.Path(exists=True))
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--records", "records_path", required=True, type=click.Path(exists=True),
              help="Fingerprints for hop IPs.")
@click.option("--probeset", "probeset_name", default="nmap+topicmp")
@click.option("--timestamp-ms", type=int, default=0)
@click.option("--geo", "geo_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--annotated", "annotated_path", type=click.Path(), default=None)
def insights_cmd(traces_path, model_path, records_path, probeset_name, timestamp_ms,
                 geo_path, out_path, annotated_path):
    """Annotate traceroutes with vendors and compute prevalence."""
    model = load_model(model_path)
    statics = ProbeStatics(timestamp_originate_ms=timestamp_ms)
    probeset = ProbeSet(probeset_name, statics)
    records = load_records(records_path)
    traces = load_traces(traces_path)
    annotated = annotate_traceroutes(traces, model, {r.target: r for r in records}, probeset)
    if annotated_path:
        with open(annotated_path, "w", encoding="utf-8") as fh:
            for ann in annotated:
                fh.write(json.dumps({
                    "source_id": ann.trace.source_id,
                    "source_country": ann.trace.source_country,
                    "dst": ann.trace.dst,
                    "hops": ann.trace.hops,
                    "hop_labels": ann.hop_labels,
                }) + "\n")
    table = prevalence(annotated, load_geo(geo_path))
    table.to_csv(out_path)
    click.echo(f"annotated {len(annotated)} traceroutes, {len(table.rows)} prevalence rows")


# ------------------------------------------------------------------------ e2e


@cli.command("e2e")
@click.option("--sim", "use_sim", is_flag=True, required=True,
              help="Run against the simulator (the only transport in this build).")
@click.option("--outdir", required=True, type=click.Path())
@click.option("--seed", type=int, default=None)
@click.option("--per-vendor", type=int, default=None)
@click.option("--alias-pairs", type=int, default=None)
@click.option("--loss", type=float, default=None)
@click.option("--search", "n_search", type=int, default=None)
@click.option("--traces", "n_traces", type=int, default=None)
@click.option("--profiles", "profiles_path", type=click.Path(exists=True), default=None)
@click.option("--rules", "rules_path", type=click.Path(exists=True), default=None)
@click.pass_context
def e2e_cmd(ctx, use_sim, outdir, seed, per_vendor, alias_pairs, loss, n_search,
            n_traces, profiles_path, rules_path):
    """Full synthetic pipeline; writes artifacts plus summary.json."""
    get = lambda flag, key, default: flag if flag is not None else _cfg(ctx, "e2e", key, default)
    config = pl.E2EConfig(
        outdir=outdir,
        seed=get(seed, "seed", 7),
        per_vendor=get(per_vendor, "per_vendor", 200),
        alias_pairs_per_vendor=get(alias_pairs, "alias_pairs", 5),
        loss=get(loss, "loss", 0.2),
        search_configs=get(n_search, "search", 8),
        n_traces=get(n_traces, "traces", 400),
        profiles_path=profiles_path,
        rules_path=rules_path,
    )
    summary = pl.run_e2e(config)
    f1 = {name: data["metrics"]["micro_f1"] for name, data in summary["feature_sets"].items()}
    click.echo(json.dumps({"micro_f1": f1,
                           "ordering": summary["feature_set_ordering_micro_f1"],
                           "summary": f"{outdir}/summary.json"}))


def main(argv=None):
    json_errors = "--json-errors" in (argv if argv is not None else sys.argv[1:])

    def fail(code, kind, message):
        if json_errors:
            sys.stderr.write(json.dumps({"error": message, "kind": kind}) + "\n")
        else:
            sys.stderr.write(f"error: {message}\n")
        return code

    try:
        cli(args=argv, standalone_mode=False, obj={})
        return 0
    except click.exceptions.Abort:
        return 1
    except click.UsageError as exc:
        hint = exc.ctx.get_usage() if exc.ctx else ""
        if not json_errors and hint:
            sys.stderr.write(hint + "\n")
        return fail(1, "usage", exc.format_message())
    except NetvendorError as exc:
        return fail(2, type(exc).__name__, str(exc))
    except Exception as exc:  # pragma: no cover - defensive
        return fail(3, type(exc).__name__, f"internal error: {exc}")


if __name__ == "__main__":
    sys.exit(main())
