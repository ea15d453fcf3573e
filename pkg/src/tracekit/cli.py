"""Command-line entry point: scenario runner, service mode, report generation.

Exit codes are the only machine channel: 0 success, 1 bad input, 2 at least
one requested adversary check returned Vulnerable. All quantitative data
goes to the output files.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import adversary, server as server_mod, service, sim, tan

log = logging.getLogger("tracekit")

DEFAULT_CHECKS = ["A3", "MA3", "C2", "A4"]

MUTANT_SERVERS = {
    "peer_logging": adversary.PeerLoggingServer,
    "no_tan": adversary.NoTanCheckServer,
    "no_backup_purge": adversary.NoBackupPurgeServer,
}

# Protection-measure compliance table. "verified" rows are backed by a
# named executable check or test; "documented-only" rows are organizational
# or deployment obligations this artifact records but cannot execute.
MEASURES = [
    ("M 0.2", "Decentralized architecture preferred", True, "verified",
     "server state schema holds published identifiers only; matching runs client-side"),
    ("M 0.10", "Certification of specialist applications", False, "documented-only",
     "certification is an organizational process outside this artifact"),
    ("M 0.12", "Transport encryption for all communication", False, "documented-only",
     "TLS termination assumed provided by deployment"),
    ("M A.1", "Separate storage of own and foreign identifiers", True, "verified",
     "disjoint container types; separation asserted by tests"),
    ("M A.2", "Contact events stored only locally", True, "verified",
     "no client operation transmits foreign events; server schema test"),
    ("M A.3", "Mutually unlinkable rotating identifiers", True, "verified",
     "MA3 linkage check plus whitebox generator audit"),
    ("M A.4", "Beacon format reveals no structure", True, "verified",
     "token is version byte plus uniform bytes; codec tests"),
    ("M A.5", "Backup of own identifiers", True, "documented-only",
     "device backup strategy is a platform concern"),
    ("M B.1", "No server-side de-anonymization records", True, "verified",
     "A3 metadata-freeness check, two-peer and permutation state equality"),
    ("M B.3", "Publish aggregate server statistics", True, "verified",
     "stats endpoint returns counts and day histogram only"),
    ("M B.4", "Two-half single-use time-boxed TAN", True, "verified",
     "TAN state machine and C2 injection check"),
    ("M B.5", "Non-enumerable identifier value range", True, "verified",
     "128-bit identifiers; TAN guess-resistance bound"),
    ("M B.6", "Specified TAN management process", True, "verified",
     "issue/hand-over/release/consume/deactivate lifecycle with issuance log"),
    ("M B.7", "Deletion of already uploaded identifiers", True, "verified",
     "revocation check: matches drop on next sync"),
    ("M B.8", "Delay upload while server unavailable", True, "documented-only",
     "no network failure model in the simulator"),
    ("M B.9", "Deletion periods extend to backups", True, "verified",
     "A4 retention check covers backup snapshots"),
    ("M B.10", "High availability of the server", True, "documented-only",
     "deployment concern, not simulated"),
    ("M C.1", "Correctable notification decisions", True, "verified",
     "revocation clears exposure state on next sync"),
    ("M C.2", "Backup of received identifiers", True, "documented-only",
     "device backup strategy is a platform concern"),
]


def _setup_logging():
    level = os.environ.get("TRACEKIT_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))


def _wall_scenario(seed: int, attenuation_db: float) -> sim.WorldConfig:
    """Staged A1 geometry: an infectious agent and a neighbor one meter
    apart on opposite sides of a wall, plus distant bystanders."""
    return sim.WorldConfig(
        n_agents=4,
        adoption_rate=1.0,
        sim_days=4,
        seed_infectious=1,
        sample_delay_days=0,
        test_delay_days=1,
        wall_attenuation_db=attenuation_db,
        wall_pairs=((0, 1),),
        fixed_positions={0: (10.0, 10.0), 1: (10.0, 11.0), 2: (60.0, 60.0), 3: (90.0, 90.0)},
        move_prob=0.0,
        arena_size_m=100.0,
        rng_seed=seed,
    )


def _policy_scenario(seed: int, policy: str) -> sim.WorldConfig:
    """Staged A5 geometry: pre-diagnosis and post-upload contact partners."""
    return sim.WorldConfig(
        n_agents=6,
        adoption_rate=1.0,
        sim_days=8,
        seed_infectious=1,
        sample_delay_days=0,
        test_delay_days=1,
        infectious_days=6,
        policy_after_diagnosis=policy,
        fixed_positions={0: (10.0, 10.0), 1: (10.0, 11.0)},
        move_prob=0.3,
        arena_size_m=40.0,
        rng_seed=seed,
    )


def run_checks(checks, config: sim.WorldConfig, mutant_server: str | None,
               mutant_ids: bool):
    verdicts = []
    seed = config.rng_seed

    def server_factory():
        cls = MUTANT_SERVERS.get(mutant_server, server_mod.TraceServer)
        return cls(registry=tan.TanRegistry(), retention_days=config.retention_days)

    for check in checks:
        if check == "A3":
            verdicts.append(adversary.check_A3_metadata(server_factory, seed=seed))
        elif check == "MA3":
            factory = None
            if mutant_ids:
                factory = lambda rng: adversary.CounterTempIdGenerator(rng.randbytes(16))
            ids_by_user = adversary.generate_user_ids(50, 96, seed, generator_factory=factory)
            verdicts.append(adversary.check_MA3_linkage(ids_by_user, seed=seed))
        elif check == "C2":
            verdicts.append(adversary.check_C2_injection(server_factory, seed=seed))
        elif check == "A4":
            verdicts.append(adversary.check_A4_retention(
                server_factory, seed=seed, retention_days=config.retention_days))
        elif check == "A1":
            report, _ = sim.run(_wall_scenario(seed, attenuation_db=5.0))
            verdicts.append(adversary.check_A1_false_positive(report))
        elif check == "A5":
            reports = {}
            for policy in ("KeepRunning", "Uninstall", "LeavePhoneHome"):
                reports[policy], _ = sim.run(_policy_scenario(seed, policy))
            verdicts.append(adversary.check_A5_integrity(reports))
        else:
            raise ValueError(f"unknown check: {check}")
    return verdicts


def cmd_simulate(args) -> int:
    try:
        config = sim.WorldConfig.from_json(Path(args.config).read_text())
        if args.seed is not None:
            config = replace(config, rng_seed=args.seed)
        config.validate()
        checks = [c for c in args.checks.split(",") if c] if args.checks else list(DEFAULT_CHECKS)
        for c in checks:
            if c not in ("A1", "A3", "A4", "A5", "C2", "MA3"):
                raise ValueError(f"unknown check: {c}")
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    server = None
    if args.mutant_server:
        server = MUTANT_SERVERS[args.mutant_server](retention_days=config.retention_days)
    report, log_lines = sim.run(config, server=server)
    verdicts = run_checks(checks, config, args.mutant_server, args.mutant_ids)

    (out / "events.ndjson").write_text("\n".join(log_lines) + "\n")
    (out / "report.json").write_text(report.to_json() + "\n")
    (out / "verdicts.json").write_text(
        json.dumps([v.to_dict() for v in verdicts], sort_keys=True, indent=2) + "\n"
    )
    manifest = {
        "config": json.loads(config.to_json()),
        "seed": config.rng_seed,
        "checks": checks,
        "outputs": {
            name: hashlib.sha256((out / name).read_bytes()).hexdigest()
            for name in ("events.ndjson", "report.json", "verdicts.json")
        },
    }
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")

    for v in verdicts:
        print(f"{v.attack_id.value}: {v.outcome.value} ({v.description})")
    print(f"tpr={report.tpr:.4f} fpr={report.fpr:.4f} notified={report.n_notified}")
    if any(v.outcome is adversary.Outcome.VULNERABLE for v in verdicts):
        return 2
    return 0


def cmd_serve(args) -> int:
    registry = tan.TanRegistry()
    trace_server = server_mod.TraceServer(registry=registry)
    if args.demo_tans:
        batch = tan.issue_batch(registry, args.demo_tans)
        for rec in batch:
            tan.hand_over_half_a(rec)
            tan.release_half_b(rec, now=0, call_duration_minutes=10**9, lab_positive=True)
            print(rec.full_code)
    try:
        httpd = service.make_http_server(trace_server, args.port)
    except OSError as exc:
        print(f"error: cannot bind port {args.port}: {exc}", file=sys.stderr)
        return 1
    log.info("serving on port %d", httpd.server_address[1])
    try:
        httpd.serve_forever()
    except KeyboardInterrupt:
        pass
    return 0


def cmd_report(args) -> int:
    try:
        lines = Path(args.event_log).read_text().splitlines()
        records = [json.loads(line) for line in lines if line]
    except (OSError, ValueError) as exc:
        print(f"error: cannot read event log: {exc}", file=sys.stderr)
        return 1

    counts = {}
    summary = None
    for rec in records:
        counts[rec.get("ev", "?")] = counts.get(rec.get("ev", "?"), 0) + 1
        if rec.get("ev") == "report":
            summary = rec["summary"]

    verdicts = {}
    if args.verdicts:
        try:
            for v in json.loads(Path(args.verdicts).read_text()):
                verdicts[v["attack"]] = v["outcome"]
        except (OSError, ValueError, KeyError) as exc:
            print(f"error: cannot read verdicts: {exc}", file=sys.stderr)
            return 1

    print("event counts:")
    for ev, n in sorted(counts.items()):
        print(f"  {ev:12s} {n}")
    if summary:
        print(f"\ntpr={summary['tpr']:.4f} fpr={summary['fpr']:.4f} "
              f"notified={summary['n_notified']} agents={summary['n_agents']}")

    print("\nprotection measure compliance:")
    for mid, title, in_scope, status, how in MEASURES:
        if verdicts and status == "verified":
            # downgrade rows whose backing check came back Vulnerable
            backing = {"M B.1": "A3", "M A.3": "MA3", "M B.4": "C2", "M B.9": "A4"}.get(mid)
            if backing and verdicts.get(backing) == "Vulnerable":
                status = "FAILED"
        scope = "in-scope" if in_scope else "extra"
        print(f"  {mid:7s} {status:15s} {scope:9s} {title} -- {how}")
    return 0


def in_scope_measures():
    return [m for m in MEASURES if m[2]]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tracekit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a scenario and adversary checks")
    p.add_argument("--config", required=True, help="world config JSON path")
    p.add_argument("--seed", type=int, default=None, help="override rng seed")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--checks", default=None,
                   help="comma list from A1,A3,A4,A5,C2,MA3 (default A3,MA3,C2,A4)")
    p.add_argument("--mutant-server", choices=sorted(MUTANT_SERVERS), default=None,
                   help="swap in a non-compliant server fixture")
    p.add_argument("--mutant-ids", action="store_true",
                   help="use the counter-chained identifier fixture for MA3")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("serve", help="run the publication server endpoints")
    p.add_argument("--port", type=int, default=8321)
    p.add_argument("--demo-tans", type=int, default=0,
                   help="issue and activate N TANs, printing their codes")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("report", help="summarize an event log")
    p.add_argument("event_log", help="events.ndjson path")
    p.add_argument("--verdicts", default=None, help="verdicts.json path")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
