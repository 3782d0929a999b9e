"""Command-line entry point: ``ddsignal {estimate,diagnose,simulate,sweep,balance}``.

Exit codes: 2 configuration error, 3 data error, 4 estimation error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings

from . import __version__
from . import reporting as rp
from .data import ColumnMapping, DDCellMeans, ingest_csv
from .diagnostics import diagnose_from_cells, diagnose_from_fits
from .estimators import balance_table, drop_nonpositive, estimate_dd, parse_absorb
from .exceptions import ConfigError, DataError, EstimationError
from .simulation import (
    SWEEP_PRESETS,
    TABLE1,
    TABLEC1,
    SimConfig,
    SweepConfig,
    resolve_threads,
    run_monte_carlo,
    run_sweep,
    sweep_preset,
    table_preset,
)

EXIT_CONFIG, EXIT_DATA, EXIT_ESTIMATION = 2, 3, 4


def _split(s):
    return [p.strip() for p in s.split(",") if p.strip()] if s else []


def _load_json(path, what):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"{what} file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{what} file {path} is not valid JSON: {e}") from None


class Outputs:
    """Writes result files in the requested formats, each with its own manifest."""

    def __init__(self, args, command, config, seed=None, inputs=()):
        self.dir = args.out_dir
        self.formats = {"csv", "json"} if args.format == "both" else {args.format}
        self.command = command
        self.config = config
        self.seed = seed
        self.inputs = [p for p in inputs if p]
        self.written = []
        os.makedirs(self.dir, exist_ok=True)

    def _done(self, path):
        rp.write_manifest(path, self.command, self.config, self.seed, self.inputs)
        self.written.append(path)

    def csv(self, stem, header, rows):
        if "csv" in self.formats:
            self._done(rp.write_csv(os.path.join(self.dir, f"{stem}.csv"), header, rows))

    def json(self, stem, obj):
        if "json" in self.formats:
            self._done(rp.write_json(os.path.join(self.dir, f"{stem}.json"), obj))


# --------------------------------------------------------------------------
# commands


def _load_dataset(args):
    mapping = ColumnMapping.from_json(args.mapping)
    if not os.path.exists(args.data):
        raise DataError(f"data file not found: {args.data}")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        data = ingest_csv(args.data, mapping)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    return mapping, data


def _controls(args, data):
    if not args.controls:
        return ()
    if args.controls == "all":
        return data.covariate_names
    return tuple(_split(args.controls))


def _estimate_fits(args, data, transforms):
    controls = _controls(args, data)
    absorb = parse_absorb(_split(args.absorb))
    interact = tuple(_split(getattr(args, "interact_post", None)))
    dropped = 0
    if "log" in transforms:
        data, dropped = drop_nonpositive(data)
    fits = {}
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        for t in transforms:
            fits[t] = estimate_dd(data, t, controls=controls, absorb=absorb, interact_post=interact,
                                  se_type=args.se.upper())
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    return fits, dropped, data


def cmd_estimate(args):
    mapping, data = _load_dataset(args)
    transforms = ["level", "log"] if args.transform == "both" else [args.transform]
    fits, dropped, sample = _estimate_fits(args, data, transforms)
    config = {"mapping": mapping.to_dict(), "transform": args.transform, "se": args.se,
              "controls": args.controls, "absorb": args.absorb}
    out = Outputs(args, "estimate", config, inputs=[args.data, args.mapping])
    report = {
        "n_obs": sample.n_obs,
        "dropped_nonpositive": dropped,
        "ingest": {"rows_read": data.ingest_report.rows_read, "rows_kept": data.ingest_report.rows_kept,
                   "dropped_by_filter": data.ingest_report.dropped_by_filter},
        "fits": {t: f.to_dict() for t, f in fits.items()},
    }
    out.json("estimate", report)
    out.csv("estimate", *rp.dd_fit_table(list(fits.values()), [f"{t}" for t in fits]))
    for t, f in fits.items():
        line = f"{t:>5}: DD = {f.dd_estimate:.6g} (se {f.dd_se:.4g})"
        if f.exp_minus_one:
            line += f"; exp(b4)-1 = {f.exp_minus_one[0]:.6g} (se {f.exp_minus_one[1]:.4g})"
        print(line)
    print(f"N = {sample.n_obs}" + (f" (dropped {dropped} non-positive outcome rows from all fits)" if dropped else ""))
    return out


def cmd_diagnose(args):
    if args.cells:
        vals = _split(args.cells)
        if len(vals) != 4:
            raise ConfigError("--cells expects four comma-separated means: C0,C1,T0,T1")
        try:
            cells = DDCellMeans.from_values(*map(float, vals))
        except ValueError:
            raise ConfigError(f"--cells values must be numbers: {args.cells}") from None
        report = diagnose_from_cells(cells, args.tol)
        config, inputs = {"cells": list(cells.as_tuple()), "tol": args.tol}, []
    else:
        if not (args.data and args.mapping):
            raise ConfigError("diagnose needs --cells or a dataset with --mapping")
        mapping, data = _load_dataset(args)
        fits, _, _ = _estimate_fits(args, data, ["level", "log"])
        report = diagnose_from_fits(fits["level"], fits["log"], args.tol)
        config = {"mapping": mapping.to_dict(), "se": args.se, "controls": args.controls, "absorb": args.absorb,
                  "tol": args.tol}
        inputs = [args.data, args.mapping]
    print(report.render())
    out = Outputs(args, "diagnose", config, inputs=inputs)
    out.json("diagnose", report.to_dict())
    return out


def _sim_overrides(args):
    ov = {}
    if args.runs is not None:
        ov["runs"] = args.runs
    if args.seed is not None:
        ov["base_seed"] = args.seed
    if args.bootstrap_reps is not None:
        ov["bootstrap_reps"] = args.bootstrap_reps
    return ov


def cmd_simulate(args):
    ov = _sim_overrides(args)
    threads = resolve_threads(args.threads)
    groups = []
    if args.paper_tables:
        groups = [("table1", [table_preset(n, **ov) for n in TABLE1]),
                  ("tablec1", [table_preset(n, **ov) for n in TABLEC1])]
    elif args.preset:
        groups = [("simulate", [table_preset(n, **ov) for n in args.preset])]
    elif args.config:
        cfg = _load_json(args.config, "simulation config")
        items = cfg if isinstance(cfg, list) else [cfg]
        groups = [("simulate", [SimConfig.from_dict({**c, **ov}) for c in items])]
    else:
        raise ConfigError("simulate needs a config file, --preset or --paper-tables")
    out = Outputs(args, "simulate", {"groups": {g: [c.to_dict() for c in cs] for g, cs in groups}},
                  seed=args.seed, inputs=[args.config])
    for stem, configs in groups:
        results = [run_monte_carlo(c, threads=threads) for c in configs]
        out.csv(stem, *rp.simulation_table(results))
        out.json(stem, [r.to_dict() for r in results])
        for r in results:
            print(f"{r.config.name or stem}: alpha4 {r.mean['alpha4']:.4f} ({r.bootstrap_se['alpha4']:.2g}), "
                  f"exp(beta4)-1 {r.mean['expb4m1']:.4f} ({r.bootstrap_se['expb4m1']:.2g})")
    return out


def cmd_sweep(args):
    ov = _sim_overrides(args)
    threads = resolve_threads(args.threads)
    if args.paper_tables:
        configs = [sweep_preset(n, **ov) for n in SWEEP_PRESETS]
    elif args.preset:
        configs = [sweep_preset(n, **ov) for n in args.preset]
    elif args.config:
        cfg = _load_json(args.config, "sweep config")
        configs = [SweepConfig.from_dict({**c, **ov}) for c in (cfg if isinstance(cfg, list) else [cfg])]
    else:
        raise ConfigError("sweep needs a config file, --preset or --paper-tables")
    out = Outputs(args, "sweep", {"sweeps": [c.to_dict() for c in configs]}, seed=args.seed, inputs=[args.config])
    for i, c in enumerate(configs):
        res = run_sweep(c, threads=threads)
        stem = c.name or f"sweep{i + 1}"
        out.csv(stem, *rp.sweep_table(res))
        out.json(stem, res.to_dict())
        cross = res.crossings
        msg = ", ".join(f"{x:.4g}" for x in cross) if cross else "no crossing"
        print(f"{stem}: log-DD zero crossing at {msg} (analytic {res.config.analytic_crossing()})")
    return out


def cmd_balance(args):
    mapping, data = _load_dataset(args)
    covs = _split(args.covariates) or None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rows = balance_table(data, covs, se_type=args.se.upper())
    out = Outputs(args, "balance", {"mapping": mapping.to_dict(), "covariates": covs, "se": args.se},
                  inputs=[args.data, args.mapping])
    out.csv("balance", *rp.balance_csv(rows))
    out.json("balance", {"cell_counts": {f"{t}{p}": n for (t, p), n in data.cell_counts().items()},
                         "rows": [r.to_dict() for r in rows]})
    for r in rows:
        print(f"{r.covariate}: p_DD = {r.p_dd:.3f}" + (" (degenerate)" if r.degenerate else ""))
    return out


# --------------------------------------------------------------------------
# parser


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="base seed for simulation commands")
    common.add_argument("--threads", type=int, default=None, help="worker threads (default: $DD_SIGNAL_THREADS or 1)")
    common.add_argument("--out-dir", default=".", help="directory for output files")
    common.add_argument("--format", choices=("csv", "json", "both"), default="both")

    data_args = argparse.ArgumentParser(add_help=False)
    data_args.add_argument("--mapping", help="JSON column mapping")
    data_args.add_argument("--se", choices=("hc0", "hc1"), default="hc1", type=str.lower)
    data_args.add_argument("--controls", help="comma-separated covariates, or 'all'")
    data_args.add_argument("--absorb", help="comma-separated fixed effects; join with '*' to cross, e.g. state*year")
    data_args.add_argument("--interact-post", help="covariates to interact with Post")

    sim_args = argparse.ArgumentParser(add_help=False)
    sim_args.add_argument("config", nargs="?", help="JSON config file")
    sim_args.add_argument("--runs", type=int, help="override the number of Monte Carlo runs")
    sim_args.add_argument("--bootstrap-reps", type=int, help="override bootstrap resamples")
    sim_args.add_argument("--paper-tables", action="store_true", help="run every built-in preset")

    p = argparse.ArgumentParser(prog="ddsignal", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("estimate", parents=[common, data_args], help="level/log DD regressions on a CSV")
    e.add_argument("data")
    e.add_argument("--transform", choices=("level", "log", "ihs", "both"), default="both")
    e.set_defaults(func=cmd_estimate)

    d = sub.add_parser("diagnose", parents=[common, data_args], help="sign-switch prediction")
    d.add_argument("data", nargs="?")
    d.add_argument("--cells", help="C0,C1,T0,T1 cell means")
    d.add_argument("--tol", type=float, default=1e-9)
    d.set_defaults(func=cmd_diagnose)

    s = sub.add_parser("simulate", parents=[common, sim_args], help="Monte Carlo tables")
    s.add_argument("--preset", action="append", choices=sorted([*TABLE1, *TABLEC1]))
    s.set_defaults(func=cmd_simulate)

    w = sub.add_parser("sweep", parents=[common, sim_args], help="parameter sweeps with crossing detection")
    w.add_argument("--preset", action="append", choices=sorted(SWEEP_PRESETS))
    w.set_defaults(func=cmd_sweep)

    b = sub.add_parser("balance", parents=[common, data_args], help="covariate balance table")
    b.add_argument("data")
    b.add_argument("--covariates", help="comma-separated covariates (default: all mapped)")
    b.set_defaults(func=cmd_balance)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "command", None) in ("estimate", "balance") and not args.mapping:
        parser.error(f"{args.command} requires --mapping")
    component = args.command
    try:
        args.func(args)
    except ConfigError as e:
        print(f"ddsignal {component}: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as e:
        print(f"ddsignal {component}: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (EstimationError, ArithmeticError, ValueError) as e:
        print(f"ddsignal {component}: estimation error: {e}", file=sys.stderr)
        return EXIT_ESTIMATION
    return 0


if __name__ == "__main__":
    sys.exit(main())
