"""Command line entry point: ``adiaflow run|check|list-problems``."""

import argparse
import json
import logging
import sys

from .errors import ConfigError
from .harness import load_config, run_experiment
from .problems import list_problems


def _run(args):
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    code, summary = run_experiment(cfg, output_dir=args.output_dir)
    for name, entry in summary.get("suites", {}).items():
        status = "PASS" if entry["passed"] else "FAIL"
        extra = f"  ({entry['error']})" if "error" in entry else ""
        print(f"{status}  {name:<11} {entry['runtime_s']:7.2f} s{extra}")
    print(f"summary written to {args.output_dir or cfg.output_dir}/summary.json")
    return code


def _check(args):
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(cfg.to_dict(), indent=2))
    return 0


def _list(args):
    data = list_problems()
    if args.json:
        print(json.dumps(data, indent=2))
        return 0
    for p in data:
        print(f"{p['name']:<8} dim={p['dim']}  {p['description']}")
        for c in p["critical_points"]:
            x = ", ".join(f"{v:+.4f}" for v in c["x"])
            print(f"    x=({x})  f={c['f_value']:+.4f}  tau={c['tau']:+.4f}  "
                  f"index_f={c['index_f']}  index_FH={c['index_FH']}")
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="adiaflow",
                                 description="Adiabatic-limit experiments for constrained gradient flows.")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the suites of a JSON config")
    r.add_argument("config")
    r.add_argument("-o", "--output-dir", default=None, help="overrides output_dir of the config")
    r.set_defaults(func=_run)
    c = sub.add_parser("check", help="validate a config and print it normalized")
    c.add_argument("config")
    c.set_defaults(func=_check)
    lp = sub.add_parser("list-problems", help="describe the built-in problems")
    lp.add_argument("--json", action="store_true")
    lp.set_defaults(func=_list)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
