"""Command-line entry point: ``qstrom {run,attack,verify,vectors}``."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

from .chain import Genesis, read_log, replay
from .crypto.drbg import child_seed
from .privacy import TRANSCRIPT_NAMES, AdversaryView, MismatchedScenario, SealedFieldPresent, attack, score
from .scenario import PRIVACY_HEADER, InvalidConfig, ScenarioConfig, ScenarioError, run_batch


def _fail(msg: str, code: int = 1) -> int:
    print(f"qstrom: {msg}", file=sys.stderr)
    return code


def cmd_run(args) -> int:
    try:
        cfg = ScenarioConfig.load(args.config)
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.variant is not None:
            overrides["variant"] = args.variant.upper()
        if overrides:
            cfg = ScenarioConfig.from_json(dict(cfg.to_json(), **overrides))
    except (OSError, InvalidConfig, TypeError) as exc:
        return _fail(f"bad config: {exc}", 2)
    try:
        results = run_batch(cfg, args.out, parallel=args.parallel)
    except ScenarioError as exc:
        return _fail(f"run failed: {exc}")
    for rows, summary in results:
        checks = summary["checks"]
        print(f"seed {summary['config']['seed']}: " + ", ".join(
            f"{name} {v['slots']} slots {v['trades']} trades" for name, v in sorted(summary["variants"].items()))
              + f"; checks {sorted(checks)}")
    return 0


def cmd_attack(args) -> int:
    try:
        with open(args.truth) as fh:
            truth = json.load(fh)
        with open(os.path.join(args.transcript, "config.json")) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        return _fail(f"cannot read inputs: {exc}", 2)
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(PRIVACY_HEADER)
    for variant in ("A", "TRANSPARENT_BASELINE", "B"):
        if variant not in truth:
            continue
        try:
            view = AdversaryView.from_dir(args.transcript, variant, network_timing=args.timing)
            seed = child_seed(cfg.get("seed", 0), "attack") if args.seed is None else args.seed
            metrics = score(attack(view, seed), truth[variant])
        except (OSError, ValueError) as exc:
            kind = "mismatch" if isinstance(exc, MismatchedScenario) else (
                "sealed data in view" if isinstance(exc, SealedFieldPresent) else "bad transcript")
            return _fail(f"{variant}: {kind}: {exc}", 2)
        writer.writerow([cfg.get("seed", ""), variant, metrics.k, cfg.get("ring_size", ""),
                         int(bool(cfg.get("change_reuse", False))), metrics.targets, f"{metrics.accuracy:.6f}",
                         f"{metrics.mean_anonymity_set:.6f}", f"{metrics.mean_entropy_bits:.6f}"])
    return 0


def _verify_paths(args):
    if args.run is not None:
        tag = TRANSCRIPT_NAMES[{"a": "A", "baseline": "TRANSPARENT_BASELINE", "b": "B"}[args.variant]]
        tdir = os.path.join(args.run, "transcripts")
        return os.path.join(tdir, f"chain_{tag}.jsonl"), os.path.join(tdir, f"genesis_{tag}.json")
    return args.log, args.genesis


def cmd_verify(args) -> int:
    log_path, genesis_path = _verify_paths(args)
    if not log_path or not genesis_path:
        return _fail("verify needs --run DIR or both --log and --genesis", 2)
    try:
        genesis = Genesis.load(genesis_path)
        entries = read_log(log_path)
    except (OSError, ValueError, TypeError) as exc:
        return _fail(f"cannot load log: {exc}", 2)
    rep = replay(genesis, entries)
    if not rep.ok:
        return _fail(f"entry {rep.bad_index} tx {rep.bad_tx}: {rep.reason}")
    if args.state_hash and rep.state_hash != args.state_hash:
        return _fail(f"final state hash {rep.state_hash} != expected {args.state_hash}")
    print(f"ok: {rep.applied} transactions replayed, state hash {rep.state_hash}")
    return 0


def cmd_vectors(args) -> int:
    from .crypto.vectors import generate_vectors

    text = json.dumps(generate_vectors(args.profile), indent=2, sort_keys=True) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qstrom", description="P2P energy market simulator and linking adversary")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a scenario file and write a report directory")
    p.add_argument("--config", required=True, help="scenario JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--variant", choices=["a", "b", "both"], help="override the config variant")
    p.add_argument("--parallel", type=int, default=1, help="worker processes for multi-run configs")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("attack", help="run the linking adversary on a report directory")
    p.add_argument("--transcript", required=True, help="report directory written by `run`")
    p.add_argument("--truth", required=True, help="truth.json of the same run")
    p.add_argument("--seed", type=int, help="tie-break seed (default: derived from the run seed)")
    p.add_argument("--timing", action="store_true", help="let the adversary use log adjacency")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("verify", help="replay a chain log and check its state hashes")
    p.add_argument("--run", help="report directory (uses transcripts/chain_<variant>.jsonl)")
    p.add_argument("--variant", choices=["a", "baseline", "b"], default="a")
    p.add_argument("--log", help="chain log (length-prefixed JSON lines)")
    p.add_argument("--genesis", help="genesis JSON")
    p.add_argument("--state-hash", help="expected final state hash")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("vectors", help="emit crypto test vectors as JSON")
    p.add_argument("--profile", choices=["demo", "standard"], default="demo")
    p.add_argument("--out", help="write to a file instead of stdout")
    p.set_defaults(func=cmd_vectors)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
