"""Command-line front end.

Subcommands:
  plan              build and save the centralized offline plan
  run               run one scheme's seeded episodes, write a summary CSV
  sweep             run a parameter sweep over schemes, write CSVs
  optimize-packets  print/save optimized per-hop secondary packet sizes
  dump-model        export the transition matrices to a diagnostic CSV

Exit codes: 0 success, 2 configuration error, 3 numerical error.
"""
from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from . import harness as hz
from . import netmodel as nm
from . import planner_central as pc
from . import planner_decentral as pd
from .errors import ConfigError, NumericalError


def _add_common(p):
    p.add_argument("--config", required=True, help="scenario JSON path")
    p.add_argument("--seed", type=int, default=None, help="override base seed")
    p.add_argument("--runs", type=int, default=None, help="override run count")
    p.add_argument("--horizon", type=int, default=None, help="override horizon")
    p.add_argument("--paper-scale", action="store_true",
                   help="use the full-scale horizon/run count from the config")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--jobs", type=int, default=1,
                   help="parallel episode workers (results are identical)")


def build_parser():
    ap = argparse.ArgumentParser(prog="uwcognet")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="build the centralized offline plan")
    _add_common(p)

    p = sub.add_parser("run", help="run one scheme")
    _add_common(p)
    p.add_argument("--scheme", required=True, choices=hz.SCHEMES)

    p = sub.add_parser("sweep", help="run a sweep over schemes")
    _add_common(p)
    p.add_argument("--scheme", action="append", choices=hz.SCHEMES,
                   help="scheme to include (repeatable; default from config)")
    p.add_argument("--sweep", default=None, help="sweep axis")
    p.add_argument("--values", default=None,
                   help="comma-separated sweep values")
    p.add_argument("--long", action="store_true",
                   help="also write the long-format CSV")

    p = sub.add_parser("optimize-packets", help="optimize secondary packet sizes")
    _add_common(p)

    p = sub.add_parser("dump-model", help="export transition matrices")
    _add_common(p)
    return ap


def _load(args) -> hz.ScenarioConfig:
    cfg = hz.load_config(args.config)
    if args.paper_scale:
        cfg = replace(cfg, runs=cfg.paper_runs)
        cfg = replace(cfg, scenario=replace(
            cfg.scenario, slotting=replace(cfg.scenario.slotting,
                                           horizon=cfg.paper_horizon)))
    if args.seed is not None:
        cfg = replace(cfg, base_seed=args.seed)
    if args.runs is not None:
        cfg = replace(cfg, runs=args.runs)
    if args.horizon is not None:
        cfg = replace(cfg, scenario=replace(
            cfg.scenario, slotting=replace(cfg.scenario.slotting,
                                           horizon=args.horizon)))
    return cfg


def _parse_values(axis: str, text: str):
    vals = [v.strip() for v in text.split(",") if v.strip()]
    if axis == "su_packet":
        return vals
    return [float(v) for v in vals]


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load(args)
        os.makedirs(args.out, exist_ok=True)
        if args.command == "plan":
            model = nm.build_transition_model(cfg.scenario)
            plan = pc.offline_plan(model, cfg.scenario.slotting.horizon, cfg.beta)
            path = os.path.join(args.out, f"{os.path.basename(args.config)}.plan.npz")
            plan.save(path)
            print(f"plan written to {path}")
        elif args.command == "run":
            table = hz.run_sweep(cfg, axis="none", values=[None],
                                 schemes=[args.scheme], jobs=args.jobs)
            path = os.path.join(args.out, f"run_{args.scheme}.csv")
            hz.export_results(table, path)
            s = table[0].summary()
            print(f"{args.scheme}: pu={s['pu_bits_mean']:.0f} "
                  f"su={s['su_bits_mean']:.0f} total={s['total_bits_mean']:.0f} "
                  f"ratio={s['pu_ratio_mean']:.3f}")
            print(f"summary written to {path}")
        elif args.command == "sweep":
            axis = args.sweep or cfg.sweep_axis or "none"
            values = _parse_values(axis, args.values) if args.values else None
            table = hz.run_sweep(cfg, axis=axis, values=values,
                                 schemes=args.scheme, jobs=args.jobs)
            path = os.path.join(args.out, f"sweep_{axis}.csv")
            long_path = os.path.join(args.out, f"sweep_{axis}_long.csv") \
                if args.long else None
            hz.export_results(table, path, long_path)
            print(f"sweep written to {path}")
        elif args.command == "optimize-packets":
            rows = []
            for i in range(cfg.scenario.topology.ns_hops):
                plan = pd.optimize_packet_size(cfg.scenario, i, cfg.beta)
                rows.append(plan)
                print(f"su hop {i}: {plan.chosen_bits} bits "
                      f"({plan.chosen_bits // 8} bytes), objective "
                      f"{plan.objective:.1f}, candidates {plan.candidates}")
            path = os.path.join(args.out, "packet_sizes.csv")
            with open(path, "w") as f:
                f.write("su_hop,chosen_bits,objective\n")
                for p in rows:
                    f.write(f"{p.su_hop},{p.chosen_bits},{p.objective:.10g}\n")
            print(f"sizes written to {path}")
        elif args.command == "dump-model":
            model = nm.build_transition_model(cfg.scenario)
            path = os.path.join(args.out, "transitions.csv")
            hz.export_transitions(model, path)
            print(f"transitions written to {path}")
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 2
    except NumericalError as e:
        print(f"numerical error: {e}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
