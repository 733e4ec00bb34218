"""Command-line entry point.

    tgextract run --scenario s.json --algo basic --trace out.jsonl
    tgextract check --trace out.jsonl --scenario s.json
    tgextract family --family RING --n 4
    tgextract counterexample --kind pair --flips 3 --out pair.json

Exit status: 0 success, 1 a property failed, 2 bad usage or input.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

from .graphs import CapacityError, StructuralError, format_graph, generate_family, is_dicut_closed
from .harness import (
    PROTOCOLS,
    InputError,
    check_properties,
    pair_counterexample,
    run_scenario,
    tree_nonexact_counterexample,
)
from .simnet import ConfigError, Trace, dump_scenario, load_scenario

log = logging.getLogger("tgextract")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def cmd_run(args) -> int:
    scenario = load_scenario(args.scenario)
    if args.seed is not None:
        scenario = replace(scenario, seed=args.seed)
    trace = run_scenario(scenario, args.algo, args.horizon)
    if args.trace:
        trace.write(args.trace)
        log.info("wrote %d events to %s", len(trace.events), args.trace)
    report = check_properties(trace, scenario)
    tick = report.stabilization_tick
    print(f"stabilization_tick: {tick if tick is not None else 'none'}")
    print(f"final_graph: {format_graph(report.final_graph) or 'none'}")
    return EXIT_OK


def cmd_check(args) -> int:
    scenario = load_scenario(args.scenario)
    try:
        trace = Trace.read(args.trace)
    except (OSError, ValueError, KeyError) as e:
        raise InputError(f"cannot read trace: {e}") from None
    report = check_properties(trace, scenario)
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK if report.all_pass else EXIT_FAIL


def cmd_family(args) -> int:
    fam = generate_family(args.family, args.n)
    if not args.count_only:
        for g in fam.members:
            print(format_graph(g))
    print(f"members: {len(fam)}")
    closed, witness = is_dicut_closed(fam)
    if closed:
        print("dicut-closed")
    else:
        w = witness
        print(
            "not dicut-closed: "
            f"{format_graph(w.member)} with cut X={sorted(w.dicut.x_side)} Y={sorted(w.dicut.y_side)} "
            f"reduces to {format_graph(w.reduced)}"
        )
    return EXIT_OK


def cmd_counterexample(args) -> int:
    build = {"pair": pair_counterexample, "tree": tree_nonexact_counterexample}[args.kind]
    script = build(args.flips)
    dump_scenario(script.scenario, args.out)
    print(json.dumps({"name": script.name, "algo": script.algo, "expected": script.expected}, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tgextract", description="Timeliness graph extraction simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("run", help="simulate a scenario")
    p.add_argument("--scenario", required=True)
    p.add_argument("--algo", choices=sorted(PROTOCOLS), default="basic")
    p.add_argument("--horizon", type=int, default=None, help="ticks to run (default: scenario horizon)")
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p.add_argument("--trace", help="write the event trace here")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("check", help="check a trace against its scenario")
    p.add_argument("--trace", required=True)
    p.add_argument("--scenario", required=True)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("family", help="enumerate a family and test dicut closure")
    p.add_argument("--family", required=True, type=str.upper)
    p.add_argument("--n", required=True, type=int)
    p.add_argument("--count-only", action="store_true", help="skip the member listing")
    p.set_defaults(func=cmd_family)

    p = sub.add_parser("counterexample", help="write an adversarial scenario")
    p.add_argument("--kind", required=True, choices=["pair", "tree"])
    p.add_argument("--flips", required=True, type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_counterexample)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, InputError, StructuralError, CapacityError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
