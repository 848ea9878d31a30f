"""Command line entry point: ``fac train|eval|ablate|verify|report``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import harness, nn
from .envs import REGISTRY, make_env
from .learner import evaluate


def _train(args) -> int:
    cfg = harness.load_config(args.config)
    if args.seed_override is not None:
        cfg = cfg.replace(seeds=[args.seed_override])
    try:
        results = harness.run(cfg, parallel=args.parallel)
    except harness.RunFailed as e:
        print(f"error: {e}", file=sys.stderr)
        results, code = e.results, 1
    else:
        code = 0
    for r in results:
        print(f"seed {r.seed}: final success {r.final_success():.3f}")
    print(f"results in {cfg.out_path}")
    return code


def _eval(args) -> int:
    actor = nn.load_checkpoint(args.checkpoint)
    env = make_env(args.env, args.seed)
    if actor.dims[0] != env.spec.state_dim or actor.dims[-1] != env.spec.action_dim:
        print(f"error: checkpoint dims {actor.dims[0]}->{actor.dims[-1]} do not match {args.env}", file=sys.stderr)
        return 2
    rate = evaluate(actor, env, args.episodes, args.seed)
    print(f"{args.env}: success rate {rate:.3f} over {args.episodes} episodes")
    return 0


def _ablate(args) -> int:
    base = harness.load_config(args.config)
    code = 0
    for cfg in harness.ablation_suite(args.suite, base):
        print(f"== {cfg.name}")
        try:
            harness.run(cfg, parallel=args.parallel)
        except harness.RunFailed as e:
            print(f"error: {e}", file=sys.stderr)
            code = 1
    rows = harness.report(base.out_path / args.suite)
    print(harness.format_report(rows))
    return code


def _verify(args) -> int:
    if args.which == "shaping":
        rows = harness.shaping_suite(args.instances, args.max_states, args.seed)
        columns = harness.SHAPING_COLUMNS
        ok = all(r["policy_agreement"] and r["max_q_deviation"] <= 1e-6 for r in rows)
    else:
        rows = harness.mixing_suite(args.instances, args.seed)
        columns = harness.MIXING_COLUMNS
        ok = all(r["identity_error"] <= 1e-12 and r["bound_satisfied"] for r in rows)
    if args.out:
        with open(args.out, "w", newline="") as f:
            harness.write_rows(rows, columns, f)
    else:
        harness.write_rows(rows, columns, sys.stdout)
    print(f"{args.which}: {len(rows)} instances, {'all passed' if ok else 'FAILURES'}", file=sys.stderr)
    return 0 if ok else 1


def _report(args) -> int:
    try:
        rows = harness.report(args.dir)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    print(harness.format_report(rows))
    harness.write_report_csv(rows, Path(args.dir) / "report.csv")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fac", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one config over its seeds")
    t.add_argument("--config", required=True)
    t.add_argument("--seed-override", type=int)
    t.add_argument("--parallel", action="store_true", help="one process per seed")
    t.set_defaults(func=_train)

    e = sub.add_parser("eval", help="evaluate a saved actor")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--env", required=True, choices=sorted(REGISTRY))
    e.add_argument("--episodes", type=int, default=10)
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=_eval)

    a = sub.add_parser("ablate", help="run an ablation suite built from a base config")
    a.add_argument("--suite", required=True, choices=harness.SUITES)
    a.add_argument("--config", required=True)
    a.add_argument("--parallel", action="store_true")
    a.set_defaults(func=_ablate)

    v = sub.add_parser("verify", help="tabular shaping or mixing-bound checks, CSV to stdout")
    v.add_argument("which", choices=["shaping", "mixing"])
    v.add_argument("--instances", type=int)
    v.add_argument("--max-states", type=int, default=25)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out")
    v.set_defaults(func=_verify)

    r = sub.add_parser("report", help="summary table of a results directory")
    r.add_argument("dir")
    r.set_defaults(func=_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "which", None) is not None and args.instances is None:
        args.instances = 200 if args.which == "shaping" else 1000
    try:
        return args.func(args)
    except harness.ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
