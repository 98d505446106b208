"""Command-line front end.

Each subcommand is one pipeline stage reading and writing the documented
file formats, so any stage can be rerun from files alone:

    scan      probe targets, write scan records (JSONL)
    import    map an external service snapshot into scan records
    identify  extract identifiers from scan records (CSV)
    resolve   group identifiers into alias sets (JSONL)
    validate  compare two alias-set files over their common addresses
    report    emit the analysis bundle (CSV directory)
    simnet    run or inspect a simulated host fleet

Exit codes: 0 success, 1 operational error, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time

from aliaskit import SCHEMA_VERSIONS, __version__
from aliaskit import aslevel, grouping, identity, ingest, probe, simnet, validation
from aliaskit.records import PROTO_BGP, PROTO_SSH, ProbeTarget


def _read_target_file(path: str) -> list:
    """One address or prefix per line; blank lines and # comments skipped."""
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                out.append(line)
    return out


def _resolver_from_map(path: str):
    """Build a dial hook from a fleet address map so probes for fleet
    addresses land on the right loopback port and anything else hits a
    closed one instead of leaving the machine."""
    with open(path) as fh:
        doc = json.load(fh)
    if "bind_host" not in doc:
        raise ValueError("%s: not a fleet address map (no bind_host)" % path)
    host = doc["bind_host"]
    dead = int(doc.get("dead_port", 1))
    ports = {
        (address, protocol): int(port)
        for protocol, addrs in doc.get("ports", {}).items()
        for address, port in addrs.items()
    }

    def resolver(target: ProbeTarget) -> tuple:
        return (host, ports.get((target.address, target.protocol), dead))

    return resolver


def cmd_scan(args, parser) -> int:
    if args.rate <= 0:
        parser.error("--rate must be positive")
    if args.per_target_interval < 0:
        parser.error("--per-target-interval must be >= 0")
    protocols = [p.strip() for p in args.protocols.split(",") if p.strip()]
    for p in protocols:
        if p not in (PROTO_SSH, PROTO_BGP):
            parser.error("unknown protocol %r" % p)
    inputs = _read_target_file(args.targets)
    targets = probe.plan_targets(inputs, protocols, seed=args.seed)
    config = probe.ProbeConfig(
        connect_timeout=args.connect_timeout,
        ssh_read_timeout=args.ssh_read_timeout,
        bgp_wait=args.bgp_wait,
        resolver=_resolver_from_map(args.addr_map) if args.addr_map else None,
    )
    records, summary = probe.run_scan(
        targets,
        rate=args.rate,
        per_target_interval=args.per_target_interval,
        concurrency=args.concurrency,
        config=config,
        retries=args.retries,
    )
    ingest.write_scan_records(args.out, records)
    by_status = " ".join("%s=%d" % (k, v) for k, v in sorted(summary.by_status.items()))
    print(
        "scanned %d targets in %.1fs (%s, retried=%d) -> %s"
        % (summary.total, summary.duration, by_status, summary.retried, args.out)
    )
    return 0


def cmd_import(args, parser) -> int:
    result = ingest.import_external_services(
        args.infile,
        port_filter=not args.keep_nonstandard_ports,
        include_ipv6=args.include_ipv6,
    )
    ingest.write_scan_records(args.out, result.records)
    print(
        "imported %d records (dropped: %d non-default port, %d ipv6; skipped: %d) -> %s"
        % (
            len(result.records),
            result.dropped_nonstandard_port,
            result.dropped_ipv6,
            len(result.skipped),
            args.out,
        )
    )
    for lineno, reason in result.skipped:
        print("  line %d: %s" % (lineno, reason), file=sys.stderr)
    return 0


def cmd_identify(args, parser) -> int:
    loaded = []
    for path in args.records:
        res = ingest.load_scan_records(path)
        loaded.extend(res.records)
        for lineno, reason in res.skipped:
            print("%s line %d: %s" % (path, lineno, reason), file=sys.stderr)
    # source accounting keys off each record's own tag, so one merge
    # call over the concatenation covers any number of input files
    store = ingest.merge_sources(loaded, [])
    external_rows = (
        ingest.read_external_identifiers(args.external_ids) if args.external_ids else ()
    )
    result = identity.extract_identifiers(
        store.records,
        external_rows=external_rows,
        include_c2s=args.include_c2s,
        default_key_threshold=args.key_threshold,
    )
    identity.write_identifier_csv(args.out, result.mappings)
    if args.overlap_out:
        with open(args.overlap_out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["protocol", "family", "active", "imported", "overlap", "union"])
            w.writerows(store.overlap_rows)
    if args.report:
        rep = result.report
        with open(args.report, "w") as fh:
            json.dump(
                {
                    "by_protocol": rep.by_protocol,
                    "by_completeness": {
                        "%s/%s" % k: v for k, v in rep.by_completeness.items()
                    },
                    "skipped": rep.skipped,
                    "key_groups_nonsingleton": rep.key_groups_nonsingleton,
                    "key_groups_capability_mismatch": rep.key_groups_capability_mismatch,
                    "capability_mismatch_fraction": rep.capability_mismatch_fraction,
                    "default_key_suspects": sorted(rep.default_key_suspects),
                },
                fh,
                indent=2,
                sort_keys=True,
            )
            fh.write("\n")
    print(
        "%d identifier mappings (%d records skipped without artifacts) -> %s"
        % (len(result.mappings), result.report.skipped, args.out)
    )
    return 0


def cmd_resolve(args, parser) -> int:
    rows = identity.read_identifier_csv(args.infile)
    if args.protocol:
        rows = [r for r in rows if r.protocol_label == args.protocol]
        if not rows:
            print("error: no rows for protocol %r" % args.protocol, file=sys.stderr)
            return 1
    by_label: dict = {}
    for r in rows:
        by_label.setdefault(r.protocol_label, []).append(r)
    families = [grouping.group_by_identifier(v) for _k, v in sorted(by_label.items())]
    merged, report = grouping.merge_cross_protocol(*families)
    grouping.write_alias_sets(args.out, merged)
    if args.dual_out:
        dual, hist = grouping.derive_dual_stack(merged)
        grouping.write_alias_sets(args.dual_out, [d.alias_set for d in dual])
        print("dual-stack: %d sets %s" % (len(dual), dict(sorted(hist.items()))))
    non_singleton = sum(1 for s in merged if len(s.addresses) > 1)
    print(
        "%d alias sets (%d non-singleton) from %d mappings -> %s"
        % (len(merged), non_singleton, len(rows), args.out)
    )
    return 0


def cmd_validate(args, parser) -> int:
    a_sets = grouping.read_alias_sets(args.a)
    b_sets = grouping.read_alias_sets(args.b)
    if args.sample is not None:
        picked = validation.sample_sets(
            a_sets,
            max_set_size=args.max_size,
            count=args.sample,
            seed=args.seed,
            family=args.family,
        )
        a_sets = picked.sample
    report = validation.cross_protocol_agreement(
        a_sets, b_sets, a_label=args.a_label, b_label=args.b_label
    )
    with open(args.out, "w") as fh:
        json.dump(report.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(
        "%s vs %s: %d agree, %d disagree over %d common addresses -> %s"
        % (
            args.a_label,
            args.b_label,
            report.agree,
            report.disagree,
            report.universe_size,
            args.out,
        )
    )
    return 0


def cmd_report(args, parser) -> int:
    sets = grouping.read_alias_sets(args.sets)
    table = aslevel.load_prefix_table(args.pfx2as)
    dual, hist = grouping.derive_dual_stack(sets)
    agreement = []
    for path in args.agreement or []:
        with open(path) as fh:
            agreement.append(validation.agreement_from_json(json.load(fh)))
    overview_rows = []
    if args.overview:
        with open(args.overview, newline="") as fh:
            r = csv.reader(fh)
            next(r, None)
            overview_rows = [row for row in r if row]
    inputs = aslevel.ReportInputs(
        merged_sets=sets,
        dual_stack=dual,
        dual_histogram=hist,
        size_cdf=grouping.set_size_distribution(sets),
        asn_per_set=aslevel.asn_per_set_distribution(sets, table),
        sets_per_as_result=aslevel.sets_per_as(sets, table, top_n=args.top_n, dual_stack=dual),
        overview_rows=overview_rows,
        agreement_reports=agreement,
    )
    written = aslevel.emit_report(inputs, args.out)
    print("wrote %d files to %s: %s" % (len(written), args.out, ", ".join(written)))
    return 0


def cmd_simnet(args, parser) -> int:
    spec = simnet.FleetSpec.from_toml_file(args.spec)
    truth = simnet.ground_truth_sets(spec)
    if args.ground_truth_out:
        with open(args.ground_truth_out, "w") as fh:
            json.dump(
                {
                    "alias_sets": [sorted(s) for s in sorted(truth.alias_sets, key=sorted)],
                    "dual_stack_sets": [
                        sorted(s) for s in sorted(truth.dual_stack_sets, key=sorted)
                    ],
                    "dual_stack_histogram": truth.dual_stack_histogram(),
                },
                fh,
                indent=2,
                sort_keys=True,
            )
            fh.write("\n")
    if not args.serve:
        print(
            "%d hosts, %d interfaces; ground truth: %d alias sets, %d dual-stack"
            % (
                len(spec.hosts),
                sum(len(h.interfaces) for h in spec.hosts),
                len(truth.alias_sets),
                len(truth.dual_stack_sets),
            )
        )
        return 0
    with simnet.launch_fleet(spec, bind_host=args.bind) as fleet:
        doc = fleet.addr_map_json()
        if args.addr_map_out:
            with open(args.addr_map_out, "w") as fh:
                json.dump(doc, fh, indent=2, sort_keys=True)
                fh.write("\n")
        else:
            print(json.dumps(doc, indent=2, sort_keys=True))
        print(
            "serving %d listeners on %s; interrupt to stop" % (fleet.listener_count, args.bind),
            file=sys.stderr,
        )
        try:
            while True:
                time.sleep(1)
        except KeyboardInterrupt:
            pass
    return 0


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="aliaskit",
        description="alias resolution and dual-stack inference from SSH/BGP handshake identifiers",
    )
    schemas = " ".join("%s=%d" % (k, v) for k, v in sorted(SCHEMA_VERSIONS.items()))
    ap.add_argument(
        "--version",
        action="version",
        version="aliaskit %s (%s)" % (__version__, schemas),
    )
    sub = ap.add_subparsers(dest="cmd", required=True)

    sp = sub.add_parser("scan", help="probe targets and write scan records")
    sp.add_argument("--targets", required=True, help="file with one address or prefix per line")
    sp.add_argument("--protocols", default="ssh,bgp")
    sp.add_argument("--rate", type=float, required=True, help="global probes per second")
    sp.add_argument("--concurrency", type=int, default=8)
    sp.add_argument("--seed", type=int, default=0, help="target order seed")
    sp.add_argument("--per-target-interval", type=float, default=1.0)
    sp.add_argument("--retries", type=int, default=0)
    sp.add_argument("--connect-timeout", type=float, default=5.0)
    sp.add_argument("--ssh-read-timeout", type=float, default=10.0)
    sp.add_argument("--bgp-wait", type=float, default=2.0)
    sp.add_argument("--addr-map", help="fleet address map JSON; dials loopback ports instead")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_scan)

    si = sub.add_parser("import", help="map an external service snapshot into scan records")
    si.add_argument("--in", dest="infile", required=True)
    si.add_argument("--keep-nonstandard-ports", action="store_true")
    si.add_argument("--include-ipv6", action="store_true")
    si.add_argument("--out", required=True)
    si.set_defaults(func=cmd_import)

    sid = sub.add_parser("identify", help="extract identifiers from scan records")
    sid.add_argument("--records", action="append", required=True, help="repeatable")
    sid.add_argument("--external-ids", help="CSV address,protocol_label,digest,source")
    sid.add_argument("--include-c2s", action="store_true")
    sid.add_argument("--key-threshold", type=int, default=identity.DEFAULT_KEY_THRESHOLD)
    sid.add_argument("--overlap-out", help="write per-source coverage CSV")
    sid.add_argument("--report", help="write extraction report JSON")
    sid.add_argument("--out", required=True)
    sid.set_defaults(func=cmd_identify)

    sr = sub.add_parser("resolve", help="group identifiers into alias sets")
    sr.add_argument("--in", dest="infile", required=True)
    sr.add_argument("--protocol", help="restrict to one protocol label")
    sr.add_argument("--dual-out", help="also write dual-stack sets")
    sr.add_argument("--out", required=True)
    sr.set_defaults(func=cmd_resolve)

    sv = sub.add_parser("validate", help="compare two alias-set files")
    sv.add_argument("--a", required=True)
    sv.add_argument("--b", required=True)
    sv.add_argument("--a-label", default="a")
    sv.add_argument("--b-label", default="b")
    sv.add_argument("--sample", type=int, help="validate a random sample of a-sets")
    sv.add_argument("--max-size", type=int, default=64)
    sv.add_argument("--seed", type=int, default=0)
    sv.add_argument("--family", choices=["v4", "v6"])
    sv.add_argument("--out", required=True)
    sv.set_defaults(func=cmd_validate)

    sre = sub.add_parser("report", help="emit the analysis bundle")
    sre.add_argument("--sets", required=True)
    sre.add_argument("--pfx2as", required=True, help="prefix/len asn per line")
    sre.add_argument("--top-n", type=int, default=10)
    sre.add_argument("--agreement", action="append", help="validation JSON, repeatable")
    sre.add_argument("--overview", help="coverage CSV from identify --overlap-out")
    sre.add_argument("--out", required=True, help="output directory")
    sre.set_defaults(func=cmd_report)

    ss = sub.add_parser("simnet", help="run or inspect a simulated host fleet")
    ss.add_argument("--spec", required=True)
    ss.add_argument("--serve", action="store_true")
    ss.add_argument("--bind", default="127.0.0.1")
    ss.add_argument("--addr-map-out")
    ss.add_argument("--ground-truth-out")
    ss.set_defaults(func=cmd_simnet)
    return ap


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, parser)
    except (
        OSError,
        ValueError,
        KeyError,
        aslevel.ParseError,
        simnet.FleetSpecError,
        simnet.PortUnavailable,
        validation.NotEnoughEligible,
        probe.EmptyInput,
        probe.TooManyTargets,
    ) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
