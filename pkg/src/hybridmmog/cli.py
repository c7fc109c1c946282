"""Command line: run a config, sweep parameters, run presets, check the oracles.

Exit codes: 0 success, 1 configuration error, 2 a runtime assertion failed.
"""

import argparse
import logging
import sys

from . import config as configmod
from . import harness, oracles, presets, sam, vsdht

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


def _seeds(text):
    try:
        return tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"seeds must be comma separated integers: {text!r}") from exc


def _param(text):
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=v1,v2,... got {text!r}")
    key, values = text.split("=", 1)
    vals = [v.strip() for v in values.split(",") if v.strip()]
    if not vals:
        raise argparse.ArgumentTypeError(f"no values for {key!r}")
    return key.strip(), vals


def build_parser():
    ap = argparse.ArgumentParser(prog="hybridmmog", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, seeds=False):
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config field, e.g. manager.risk_limit=0.5 (repeatable)")
        p.add_argument("--out", help="output directory (CSV files and manifest)")
        if seeds:
            p.add_argument("--seeds", type=_seeds, help="comma separated seeds, e.g. 0,1,2")

    p = sub.add_parser("run", help="run one configuration file")
    p.add_argument("config")
    p.add_argument("--seed", type=int)
    common(p)

    p = sub.add_parser("sweep", help="run a configuration over a grid of parameter values")
    p.add_argument("config", nargs="?", help="config file (defaults if omitted)")
    p.add_argument("--param", type=_param, action="append", required=True, metavar="KEY=V1,V2,...",
                   help="parameter and values; repeat for a cartesian product")
    common(p, seeds=True)

    p = sub.add_parser("preset", help="run a named scenario")
    p.add_argument("name", nargs="?")
    p.add_argument("--list", action="store_true", help="list presets and exit")
    p.add_argument("--dump", action="store_true", help="print the preset's base config and exit")
    common(p, seeds=True)

    p = sub.add_parser("oracle-check", help="compare both greedy heuristics with exhaustive search")
    p.add_argument("--coverage-instances", type=int, default=500)
    p.add_argument("--placement-instances", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    return ap


def _print_rows(rows):
    for r in rows:
        track = f" {r['track']}" if r["track"] else ""
        parts = [f"{k}={harness._fmt(r[k])}" for k in ("mean_jc", "mean_ac", "server_bytes_per_s",
                                                        "mean_cost_per_minute", "mean_availability")
                 if isinstance(r[k], float) and r[k] == r[k]]
        print(f"{r['run']} seed={r['seed']} {r['params']}{track} " + " ".join(parts))


def cmd_run(args):
    cfg = configmod.load(args.config)
    cfg = configmod.apply_overrides(cfg, args.overrides)
    if args.seed is not None:
        cfg = configmod.override(cfg, "sim.seed", str(args.seed))
    if args.out:
        cfg = configmod.override(cfg, "sim.out_dir", args.out)
    result = harness.run(cfg.validate())
    for k, v in result.summary.items():
        print(f"{k}={harness._fmt(v) if isinstance(v, float) else v}")
    return EXIT_OK


def cmd_sweep(args):
    cfg = configmod.load(args.config) if args.config else harness.SimConfig()
    cfg = configmod.apply_overrides(cfg, args.overrides).validate()
    grid = dict(args.param)
    for key in grid:
        configmod.resolve_key(key)
    seeds = args.seeds or (cfg.seed,)
    rows = presets.run_grid(cfg, grid, seeds, args.out, progress=_print_rows)
    return EXIT_OK if rows else EXIT_RUNTIME


def cmd_preset(args):
    if args.list or not args.name:
        for name in sorted(presets.PRESETS):
            print(f"{name:18s} {presets.PRESETS[name].description}")
        for name in sorted(presets.ANALYTIC):
            print(f"{name:18s} {presets.ANALYTIC[name]}")
        return EXIT_OK if args.list else EXIT_CONFIG
    if args.name in presets.ANALYTIC:
        cfg = configmod.apply_overrides(harness.SimConfig(), args.overrides).validate()
        header, rows = presets.run_analytic(args.name, args.out, seed=(args.seeds or (0,))[0], rtt_file=cfg.rtt_file)
        print(",".join(header))
        for r in rows:
            print(",".join(f"{v:.4g}" if isinstance(v, float) else str(v) for v in r))
        return EXIT_OK
    if args.name not in presets.PRESETS:
        raise configmod.ConfigError(f"unknown preset {args.name!r}; known: {', '.join(presets.names())}")
    pre = presets.PRESETS[args.name]
    base = configmod.apply_overrides(pre.base, args.overrides).validate()
    if args.dump:
        print(configmod.dumps(base))
        return EXIT_OK
    rows = presets.run_grid(base, pre.grid, args.seeds or pre.seeds, args.out, progress=_print_rows)
    return EXIT_OK if rows else EXIT_RUNTIME


def cmd_oracle(args):
    cov = oracles.check_greedy_coverage(args.coverage_instances, args.seed)
    print(f"coverage: {cov.instances} instances, {cov.violations} below (1-1/e) of optimum, "
          f"worst ratio {cov.worst_ratio:.4f}")
    plc = oracles.check_placement_sandwich(args.placement_instances, args.seed)
    print(f"placement: {plc.instances} instances, {plc.violations} outside optimal <= greedy <= all-cloud, "
          f"{plc.infeasible_greedy} infeasible greedy plans")
    return EXIT_OK if cov.ok and plc.ok else EXIT_RUNTIME


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "preset": cmd_preset, "oracle-check": cmd_oracle}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except configmod.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG
    except (AssertionError, sam.ManagerError, vsdht.CorruptionError) as exc:
        print(f"runtime assertion failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
