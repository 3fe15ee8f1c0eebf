"""Command line entry point: ``activeirs --spec fig6 --out results/fig6``.

``--spec`` takes a preset name (``--list`` prints them), an experiment JSON
file or a ``manifest.json`` of an earlier run.  Experiment file schema::

    {
      "name": "my-sweep",
      "problem": "P1",                      # "P1" sum power, "P2" sum rate
      "scenario": {"M": 4, "N": 16, "K_I": 2, "K_E": 4,
                   "P_A_dbm": 30, "P_I_dbm": 10, "sigma_z2_dbm": -80,
                   "sigma_i2_dbm": -80, "gamma_db": 5, "E_uW": 0,
                   "geometry": {"d_IRS": 8, "d_E": 8, "d_I": 50},
                   "fading": {"alpha_Au": 3.2, "K_factor_db": 3}},
      "sweep": {"name": "gamma_db", "values": [0, 5, 10], "tied": []},
      "trials": 20, "seed": 0,
      "schemes": ["proposed", "identical", "passive", "no-irs-iu-link"],
      "settings": {"outer_tol": 1e-4, "draws": 500, "conic": {"eps_feas": 1e-8}},
      "workers": 1
    }

Powers are given in dBm and dB and E in microwatts; results are in watts
(P1) or bps/Hz (P2).
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

from .experiment import (PRESETS, ExperimentAborted, ExperimentSpec, emit_results, full_scale, load_spec,
                         preset, run_experiment, SCHEMES)


def _values(text):
    return [float(v) for v in text.replace(",", " ").split()]


def build_parser():
    p = argparse.ArgumentParser(prog="activeirs", description="Monte-Carlo sweeps for active-IRS SWIPT designs.")
    p.add_argument("--spec", help="preset name, experiment JSON file or run manifest")
    p.add_argument("--out", help="output directory (default: results/<name>)")
    p.add_argument("--trials", type=int, help="channel realizations per sweep point")
    p.add_argument("--seed", type=int, help="seed of the first realization")
    p.add_argument("--scheme", action="append", choices=SCHEMES,
                   help="scheme to run; repeat for several (default: those of the spec)")
    p.add_argument("--sweep", help="override the sweep as NAME=v1,v2,... (values in input units)")
    p.add_argument("--full-scale", action="store_true", help="N = 50 and 100 trials")
    p.add_argument("--workers", type=int, help="worker processes")
    p.add_argument("--list", action="store_true", help="list presets and exit")
    p.add_argument("--quiet", action="store_true")
    return p


def resolve_spec(args) -> ExperimentSpec:
    if not args.spec:
        raise SystemExit("--spec is required (see --list)")
    spec = preset(args.spec) if args.spec in PRESETS and not os.path.exists(args.spec) else load_spec(args.spec)
    if args.full_scale:
        spec = full_scale(spec)
    changes = {}
    if args.trials is not None:
        changes["trials"] = args.trials
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.scheme:
        changes["schemes"] = tuple(dict.fromkeys(args.scheme))
    if args.workers is not None:
        changes["workers"] = args.workers
    if args.sweep:
        name, _, vals = args.sweep.partition("=")
        changes["sweep"] = name.strip()
        if vals:
            changes["values"] = _values(vals)
        if changes["sweep"] != spec.sweep:
            changes["tied"] = ()
    out = args.out or spec.out or os.path.join("results", spec.name)
    return replace(spec, out=out, **changes)


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.list:
        for name in PRESETS:
            s = preset(name)
            print(f"{name:6s} {s.problem}  sweep {s.sweep} over {list(s.values)}  schemes {', '.join(s.schemes)}")
        return 0
    try:
        spec = resolve_spec(args)
    except (KeyError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    done = [0]
    total = len(spec.values) * len(spec.schemes) * spec.trials

    def progress(rec):
        done[0] += 1
        if not args.quiet:
            mark = "" if rec.ok else f"  FAILED {rec.error}"
            print(f"[{done[0]}/{total}] {spec.sweep}={rec.value:g} {rec.scheme} trial {rec.trial}"
                  f" -> {rec.objective:.6g} ({rec.runtime:.1f}s){mark}", file=sys.stderr)

    try:
        table = run_experiment(spec, progress=progress)
    except ExperimentAborted as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return 3
    try:
        paths = emit_results(table, spec.out)
    except OSError as exc:
        print(f"error writing results: {exc}", file=sys.stderr)
        return 2
    unit = table.rows[0].unit if table.rows else ""
    for r in table.rows:
        print(f"{spec.sweep}={r.value:g}  {r.scheme:15s} mean {r.mean:.6g} {unit}  std {r.std:.3g}  n={r.n}"
              f"{'  failed=' + str(r.failed) if r.failed else ''}")
    print(f"wrote {paths['results']} and {paths['manifest']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
