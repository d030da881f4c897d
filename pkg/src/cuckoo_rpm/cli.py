"""Command-line entry point.

Structured results go to stdout as JSON or NDJSON, logs to stderr. Exit codes:
0 success, 1 assertion or verdict mismatch, 2 bad arguments or config.
"""

from __future__ import annotations

import argparse
import json
import logging
import random
import sys
import time
from pathlib import Path

from . import anomaly, simnet
from .errors import ConfigError, FilterFull, RpmError
from .filter_core import CuckooFilter, FilterParams
from .registry import EXPECTED_VERDICT, PairReceiver, PseudoId, RaDirectory, Role, Verdict

log = logging.getLogger("cuckoo_rpm")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True)


# -- scenario-run ---------------------------------------------------------------


def cmd_scenario_run(args) -> int:
    config = simnet.SimConfig.load(args.config)
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    if not config.name:
        config = config.replace(name=Path(args.config).stem)
    transcript = simnet.run_scenario(config)
    summary = transcript.summary
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "transcript.ndjson").write_text(transcript.to_ndjson())
        (out / "summary.json").write_text(_dump(summary) + "\n")
        (out / "final_states.json").write_text(_dump(transcript.final_states) + "\n")
    print(_dump(summary))
    for check in summary["assertions"]:
        if not check["ok"]:
            log.error("assertion %s failed: %s", check["name"], check["detail"])
    return EXIT_OK if summary["ok"] else EXIT_FAIL


# -- filter-bench ---------------------------------------------------------------


def _per_op(ns: int, count: int):
    return round(ns / count, 1) if count else None


def cmd_filter_bench(args) -> int:
    if not 0.0 <= args.load <= 1.0:
        raise ConfigError("--load must be in [0, 1]")
    if args.queries < 0:
        raise ConfigError("--queries must be >= 0")
    rng = random.Random(args.seed)
    params = FilterParams(args.m, args.n, args.f, hash_seed=rng.getrandbits(64))
    cf = CuckooFilter(params, rng=random.Random(rng.getrandbits(64)))
    target = int(args.load * params.capacity)
    # Members and probes share one 16-byte space; probes carry a distinct prefix so none is a member.
    members = [b"\x00" + rng.randbytes(15) for _ in range(target)]
    probes = [b"\x01" + rng.randbytes(15) for _ in range(args.queries)]

    inserted = []
    t0 = time.perf_counter_ns()
    for item in members:
        try:
            cf.insert(item)
        except FilterFull:
            log.warning("filter full after %d inserts", len(inserted))
            break
        inserted.append(item)
    t_insert = time.perf_counter_ns() - t0

    t0 = time.perf_counter_ns()
    false_pos = sum(cf.lookup(p) for p in probes)
    t_lookup = time.perf_counter_ns() - t0

    false_neg = sum(not cf.lookup(x) for x in inserted)

    t0 = time.perf_counter_ns()
    for item in inserted:
        cf.delete(item)
    t_delete = time.perf_counter_ns() - t0

    report = {
        "params": {"m": args.m, "n": args.n, "f": args.f, "seed": args.seed},
        "target_load": args.load,
        "inserted": len(inserted),
        "filter_full": len(inserted) < target,
        "load_factor": round(len(inserted) / params.capacity, 6),
        "queries": args.queries,
        "false_positives": false_pos,
        "fp_rate": false_pos / args.queries if args.queries else 0.0,
        "fp_bound": 2 * args.n / 2 ** args.f,
        "false_negatives": false_neg,
        "empty_after_delete": len(cf) == 0,
    }
    if not args.no_timing:
        report["ns_per_op"] = {
            "insert": _per_op(t_insert, len(inserted)),
            "lookup": _per_op(t_lookup, args.queries),
            "delete": _per_op(t_delete, len(inserted)),
        }
    print(_dump(report))
    return EXIT_OK


# -- registry-demo --------------------------------------------------------------


def _new_directory(seed, fingerprint_bits, bucket_count, key_bits):
    params = FilterParams(bucket_count, 4, fingerprint_bits)
    return RaDirectory(random.Random(seed), params={r: params for r in Role},
                       key_bits=key_bits, kdf_iterations=100)


def case4_sweep(role: Role, registered: int, revoked: int, seeds: int, fingerprint_bits: int,
                bucket_count: int, base_seed, key_bits: int) -> dict | None:
    """Search seeds for a directory where some principal hits both filters.

    Returns the first collision found, with the verdict after resolution.
    """
    for s in range(seeds):
        d = _new_directory(f"{base_seed}/sweep/{s}", fingerprint_bits, bucket_count, key_bits)
        pids = [d.register(role, f"principal-{i}", "pw")[0] for i in range(registered)]
        for pid in pids[:revoked]:
            d.revoke(pid)
        for pid in pids:
            if d.classify(pid) is Verdict.ESCALATE_TO_RA:
                status = d.status_of(pid)
                d.resolve_escalation(pid)
                return {"sweep_seed": s, "pid": pid.hex, "status": status.value,
                        "observed": Verdict.ESCALATE_TO_RA.value,
                        "resolved": d.classify(pid).value,
                        "expected": EXPECTED_VERDICT[status].value,
                        "others_consistent": not d.mismatches(role)}
    return None


def run_registry_script(script: dict, seed) -> tuple[list[dict], bool]:
    seed = script.get("seed", 0) if seed is None else seed
    f = script.get("fingerprint_bits", 16)
    m = script.get("bucket_count", 64)
    key_bits = script.get("key_bits", 512)
    d = _new_directory(seed, f, m, key_bits)
    receiver = PairReceiver(d.public_key)
    names: dict[str, PseudoId] = {}
    strangers = random.Random(f"{seed}/strangers")
    results, all_ok = [], True

    for i, step in enumerate(script.get("steps", []), start=1):
        op = step.get("op")
        row = {"step": i, "op": op}
        try:
            if op == "register":
                role = Role.parse(step["role"])
                pid, _ = d.register(role, step.get("identity", step["name"]),
                                    step.get("password", "pw"), username=step["name"])
                names[step["name"]] = pid
                row.update(name=step["name"], pid=pid.hex)
            elif op in ("revoke", "deregister"):
                pid = names[step["name"]]
                released = getattr(d, op)(pid)
                row.update(name=step["name"], status=d.status_of(pid).value,
                           released=len(released))
            elif op == "publish":
                roles = [Role.parse(step["role"])] if "role" in step else list(Role)
                for role in roles:
                    pair = d.publish_pair(role)
                    receiver.accept(pair)
                row.update(epochs={r.short: receiver.epoch(r) for r in roles})
            elif op in ("classify", "resolve"):
                if step.get("name") in names:
                    pid = names[step["name"]]
                else:
                    # A pseudo-ID the RA never minted.
                    pid = PseudoId(Role.parse(step.get("role", "p")), strangers.randbytes(16))
                if op == "resolve":
                    pair = d.resolve_escalation(pid)
                    receiver.accept(pair)
                source = step.get("source", "published")
                verdict = receiver.classify(pid) if source == "published" else d.classify(pid)
                row.update(name=step.get("name"), source=source, verdict=verdict.value)
            elif op == "case4_sweep":
                found = case4_sweep(Role.parse(step.get("role", "mp")), step.get("register", 12),
                                    step.get("revoke", 6), step.get("seeds", 200),
                                    step.get("fingerprint_bits", 4), step.get("bucket_count", 4),
                                    seed, key_bits)
                if found is None:
                    row.update(verdict=None, error="NoCollisionFound")
                else:
                    row.update(found, verdict=found["observed"])
                    if found["resolved"] != found["expected"] or not found["others_consistent"]:
                        row["ok"] = False
            else:
                raise ConfigError(f"unknown op {op!r}")
        except RpmError as exc:
            if isinstance(exc, ConfigError):
                raise
            row["error"] = type(exc).__name__
        except KeyError as exc:
            raise ConfigError(f"step {i}: missing {exc}") from None

        if "expect" in step:
            row["expect"] = step["expect"]
            row["ok"] = row.get("ok", True) and row.get("verdict") == step["expect"]
        if "expect_error" in step:
            row["ok"] = row.get("ok", True) and row.get("error") == step["expect_error"]
        elif "error" in row and "expect" not in step:
            row["ok"] = False
        all_ok &= row.get("ok", True)
        results.append(row)
    return results, all_ok


def cmd_registry_demo(args) -> int:
    try:
        script = json.loads(Path(args.script).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{args.script}: {exc}") from None
    if isinstance(script, list):
        script = {"steps": script}
    results, ok = run_registry_script(script, args.seed)
    for row in results:
        print(json.dumps(row, sort_keys=True))
        if not row.get("ok", True):
            log.error("step %d (%s) mismatch: got %s, expected %s", row["step"], row["op"],
                      row.get("verdict") or row.get("error"), row.get("expect"))
    return EXIT_OK if ok else EXIT_FAIL


# -- anomaly-run ----------------------------------------------------------------


def cmd_anomaly_run(args) -> int:
    readings = anomaly.load_readings(args.readings)
    rules = anomaly.load_rules(args.rules) if args.rules else list(anomaly.DEFAULT_RULES)
    metrics = anomaly.load_metrics(args.metrics) if args.metrics else None
    suspects: list = []
    findings = anomaly.analyze(readings, rules, metrics, suspects)
    out = "".join(json.dumps({"type": "SuspectReading", **r.to_dict()}, sort_keys=True) + "\n"
                  for r in suspects)
    out += anomaly.findings_to_ndjson(findings)
    sys.stdout.write(out)
    return EXIT_OK


# -------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cuckoo-rpm", description=__doc__.splitlines()[0])
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scenario-run", help="run a simulator scenario")
    p.add_argument("config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="directory for transcript.ndjson and summary.json")
    p.set_defaults(func=cmd_scenario_run)

    p = sub.add_parser("filter-bench", help="measure load, FP rate and per-op cost")
    p.add_argument("--m", type=int, default=1024, help="bucket count (power of two)")
    p.add_argument("--n", type=int, default=4, help="entries per bucket")
    p.add_argument("--f", type=int, default=16, help="fingerprint bits")
    p.add_argument("--load", type=float, default=0.7)
    p.add_argument("--queries", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-timing", action="store_true", help="omit wall-clock fields")
    p.set_defaults(func=cmd_filter_bench)

    p = sub.add_parser("registry-demo", help="replay a lifecycle script against a fresh RA")
    p.add_argument("--script", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_registry_demo)

    p = sub.add_parser("anomaly-run", help="apply correlation rules to a reading stream")
    p.add_argument("--readings", required=True, help="NDJSON {node_id, metric, value, ts}")
    p.add_argument("--rules", help="JSON list of rules (default: built-in set)")
    p.add_argument("--metrics", help="JSON list of metric declarations")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_anomaly_run)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
