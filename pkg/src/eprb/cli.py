"""Command-line interface: ``eprb <command> [options]``.

Every command writes its outputs (CSV, with a JSON mirror) under ``--out`` and
finishes with ``run_report.json`` listing the echoed configuration, output
files with SHA-256 digests, verdicts and wall time.

Exit codes: 0 success, 2 bad arguments, 3 data errors (unreadable input,
empty cells, missing runs), 4 a failed hypothesis test under ``--strict``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import importlib
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .coincidence import (
    DEFAULT_BIN_PS,
    DEFAULT_RANGE_PS,
    CountsTable,
    count_coincidences,
    difference_histogram,
    estimate_global_offset,
    match_coincidences,
)
from .dataset import Dataset, load_dataset, write_dataset
from .efficiency import consistency_table, measured_from_estimates
from .errors import EprbError
from .sim import Efficiency, LocalTimeTag, Product, SimConfig, Singlet, simulate
from .stats import (
    CELL_NAMES,
    CHSH_DEFAULT_DEG,
    SWEEP_HEADER,
    chsh,
    chsh_cells,
    combine_rotated_runs,
    estimates_from_counts,
    hypothesis_test,
    window_sweep,
)

EXIT_ARGS = 2
EXIT_DATA = 3
EXIT_STRICT = 4
DEFAULT_GRID = "1000:100000:1000"
POLICY_NAMES = {"greedy": "greedy-delta", "sequential": "sequential"}


class UsageError(Exception):
    """Argument combination rejected after parsing (exit 2)."""


# ---------------------------------------------------------------- parsing helpers

def parse_angles(text):
    """'chsh-default' or 'A,AP,B,BP' in degrees -> (degrees tuple, radians tuple)."""
    if text == "chsh-default":
        deg = CHSH_DEFAULT_DEG
    else:
        try:
            deg = tuple(float(v) for v in text.split(","))
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad angle list {text!r}") from None
        if len(deg) != 4:
            raise argparse.ArgumentTypeError("--angles takes four values A,AP,B,BP (degrees)")
    rad = tuple(math.radians(d % 360.0) for d in deg)
    return deg, rad


def parse_grid(text):
    """'START:STOP:STEP' in ps, STOP included when on the grid."""
    try:
        start, stop, step = (int(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"window grid must be START:STOP:STEP, got {text!r}") from None
    if start < 0 or step <= 0 or stop < start:
        raise argparse.ArgumentTypeError("window grid needs 0 <= START <= STOP and STEP > 0")
    return list(range(start, stop + 1, step))


def parse_pair(text):
    try:
        p, m = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'PLUS,MINUS', got {text!r}") from None
    return (p, m)


def parse_delta(text):
    if text == "auto":
        return text
    try:
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"--delta-g takes an integer (ps) or 'auto', got {text!r}") from None


# ---------------------------------------------------------------- output helpers

class Run:
    """Collects outputs and verdicts for the run report."""

    def __init__(self, args, argv):
        self.args = args
        self.argv = list(argv)
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.files = []
        self.verdicts = {}
        self.acausal = False
        self.extra = {}
        self.t0 = time.perf_counter()

    def path(self, name):
        p = self.out / name
        self.files.append(p)
        return p

    def table(self, stem, header, rows):
        """Write ``stem``.csv and its JSON mirror."""
        rows = [list(r) for r in rows]
        with open(self.path(stem + ".csv"), "w", newline="\n") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_fmt(v) for v in r])
        self.json(stem, {"columns": list(header), "rows": [[_jsonable(v) for v in r] for r in rows]})

    def json(self, stem, doc):
        with open(self.path(stem + ".json"), "w") as fh:
            json.dump(_jsonable(doc), fh, indent=1, sort_keys=True)
            fh.write("\n")

    def finish(self, exit_code):
        config = {k: _jsonable(v) for k, v in vars(self.args).items() if k != "func"}
        manifest = []
        for p in dict.fromkeys(self.files):
            if p.exists():
                manifest.append({"path": str(p.relative_to(self.out)), "bytes": p.stat().st_size,
                                 "sha256": hashlib.sha256(p.read_bytes()).hexdigest()})
        report = {
            "command": self.args.command,
            "argv": self.argv,
            "version": __version__,
            "config": config,
            "acausal_flag": self.acausal,
            "manifest": manifest,
            "verdicts": self.verdicts,
            "exit_code": exit_code,
            "wall_time_s": round(time.perf_counter() - self.t0, 6),
        }
        report.update(self.extra)
        with open(self.out / "run_report.json", "w") as fh:
            json.dump(_jsonable(report), fh, indent=1, sort_keys=True)
            fh.write("\n")


def _fmt(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return v


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.generic):
        v = v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, Path):
        return str(v)
    return v


# ---------------------------------------------------------------- input helpers

def _dataset(args) -> Dataset:
    if not args.data:
        raise UsageError(f"{args.command} needs --data DIR")
    return load_dataset(args.data)


def _offset(run, d, args):
    delta = args.delta_g
    if delta == "auto":
        h = difference_histogram(d.station1, d.station2, args.bin_ps, args.range_ps)
        delta = estimate_global_offset(h)
        run.extra["delta_g_estimated_ps"] = delta
    if delta:
        run.acausal = True
    return int(delta)


def _policy(args):
    return POLICY_NAMES[args.policy]


def _read_counts(path, rotated):
    """Counts CSV -> {(a_rad, b_rad): CountsTable or ++ count}."""
    need = ["a_deg", "b_deg", "Cpp"] + ([] if rotated else ["Cpm", "Cmp", "Cmm"])
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise _DataError(f"cannot read counts file {path}: {exc.strerror}") from None
    with fh:
        reader = csv.DictReader(fh)
        missing = [c for c in need if c not in (reader.fieldnames or [])]
        if missing:
            raise _DataError(f"{path}: missing column(s) {', '.join(missing)}")
        out = {}
        for n, row in enumerate(reader, start=1):
            try:
                a = math.radians(float(row["a_deg"]))
                b = math.radians(float(row["b_deg"]))
                vals = [int(row[c]) for c in need[2:]]
            except (TypeError, ValueError):
                raise _DataError(f"{path}: row {n}: malformed value") from None
            out[a, b] = vals[0] if rotated else CountsTable(*vals, a=a, b=b)
    return out


class _DataError(EprbError):
    pass


def _lookup_table(tables, a, b):
    for (ka, kb), t in tables.items():
        if abs(ka - a) < 1e-9 and abs(kb - b) < 1e-9:
            return t
    raise _DataError(f"no counts for a={math.degrees(a):g}, b={math.degrees(b):g}")


def _cell_tables(run, args):
    """Counts tables for (a,b), (a,b'), (a',b), (a',b') from --counts or --data/--window."""
    deg, (a, ap, b, bp) = args.angles
    pairs = [(a, b), (a, bp), (ap, b), (ap, bp)]
    if args.counts:
        if args.rotated_runs:
            tables = combine_rotated_runs(_read_counts(args.counts, True), pairs=pairs)
        else:
            tables = _read_counts(args.counts, False)
        return [_lookup_table(tables, *p) for p in pairs]
    d = _dataset(args)
    if args.window is None:
        raise UsageError(f"{args.command} with --data needs --window PS")
    delta = _offset(run, d, args)
    p = match_coincidences(d.station1, d.station2, args.window, policy=_policy(args), offset_ps=delta)
    counts = count_coincidences(p, d.station1, d.station2)
    return [counts[c] for c in chsh_cells(d, args.angles[1])]


def _estimates_rows(tables, per_pair):
    for name, t, e in zip(CELL_NAMES, tables, per_pair):
        yield [name, math.degrees(t.a), math.degrees(t.b), t.pp, t.pm, t.mp, t.mm, t.nc,
               e.e1, e.e2, e.e, e.bound]


ESTIMATE_HEADER = ["cell", "a_deg", "b_deg", "Cpp", "Cpm", "Cmp", "Cmm", "Nc", "E1", "E2", "E", "bound"]


# ---------------------------------------------------------------- commands

def cmd_simulate(run, args):
    if args.config:
        try:
            cfg = SimConfig.from_json(Path(args.config).read_text())
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read --config: {exc}") from None
    else:
        deg, rad = args.angles
        if args.model == "singlet":
            model = Singlet()
        elif args.model == "product":
            model = Product(math.radians(args.p1), math.radians(args.p2))
        else:
            model = LocalTimeTag(args.t0_ps, args.d, args.sign_rule)
        eff = None
        if args.eta1 or args.eta2:
            eff = Efficiency(args.eta1 or (1.0, 1.0), args.eta2 or (1.0, 1.0))
        if args.settings == "fixed":
            angles1, angles2 = (rad[0],), (rad[2],)
        else:
            angles1, angles2 = rad[:2], rad[2:]
        cfg = SimConfig(
            n_pairs=args.pairs, mean_interval_ps=args.mean_interval_ps, jitter_ps=args.jitter_ps,
            settings_mode=args.settings, angles1=angles1, angles2=angles2, outcome_model=model,
            efficiency=eff, single_detector=args.single_detector, seed=args.seed,
        )
    d = simulate(cfg)
    root = write_dataset(d, run.out)
    for name in ("meta.json", "station1.csv", "station2.csv"):
        run.files.append(root / name)
    run.extra["sim_config"] = cfg.to_dict()
    print(f"wrote {len(d.station1)} + {len(d.station2)} events to {root}")
    return 0


def cmd_histogram(run, args):
    d = _dataset(args)
    h = difference_histogram(d.station1, d.station2, args.bin_ps, args.range_ps)
    h.to_csv(run.path("histogram.csv"))
    run.json("histogram", {"bin_ps": h.bin_ps, "range_ps": h.range_ps,
                           "columns": ["bin_center_ps", "count"],
                           "rows": [list(r) for r in zip(h.centers.tolist(), h.counts.tolist())]})
    print(f"{h.total} differences in {len(h.counts)} bins")
    return 0


def cmd_offset(run, args):
    d = _dataset(args)
    h = difference_histogram(d.station1, d.station2, args.bin_ps, args.range_ps)
    delta = estimate_global_offset(h)
    run.json("offset", {"delta_g_ps": delta, "bin_ps": h.bin_ps, "range_ps": h.range_ps,
                        "peak_count": int(h.counts.max()), "acausal_if_applied": delta != 0})
    print(f"delta_g={delta} ps")
    if delta:
        print("note: applying a non-zero global offset makes the coincidence analysis acausal")
    return 0


def cmd_coincidences(run, args):
    d = _dataset(args)
    if args.window is None:
        raise UsageError("coincidences needs --window PS")
    delta = _offset(run, d, args)
    p = match_coincidences(d.station1, d.station2, args.window, policy=_policy(args), offset_ps=delta)
    p.to_csv(run.path("pairs.csv"))
    counts = count_coincidences(p, d.station1, d.station2)
    rows = [[math.degrees(t.a), math.degrees(t.b), t.pp, t.pm, t.mp, t.mm, t.nc] for t in counts.values()]
    run.table("counts", ["a_deg", "b_deg", "Cpp", "Cpm", "Cmp", "Cmm", "Nc"], rows)
    run.extra["coincidences"] = len(p)
    print(f"{len(p)} coincidences at W={args.window} ps")
    return 0


def cmd_sweep(run, args):
    d = _dataset(args)
    delta = _offset(run, d, args)
    table = window_sweep(d, args.angles[1], args.window_grid, delta_ps=delta, policy=_policy(args))
    table.to_csv(run.path("sweep.csv"))
    table.to_json(run.path("sweep.json"))
    print(f"{len(table.rows)} windows written to {run.out / 'sweep.csv'}")
    return 0


def cmd_chsh(run, args):
    tables = _cell_tables(run, args)
    per_pair = [estimates_from_counts(t) for t in tables]
    res = chsh(per_pair, args.angles[1])
    run.table("estimates", ESTIMATE_HEADER, _estimates_rows(tables, per_pair))
    run.json("chsh", {"S": res.s, "S_bound": res.bound, "angles_deg": args.angles[0],
                      "violates_2": abs(res.s) > 2})
    run.verdicts["chsh"] = {"S": res.s, "S_bound": res.bound, "abs_S_gt_2": abs(res.s) > 2}
    print(f"S={res.s:.3f} (bound {res.bound:.3f})")
    return 0


def cmd_hypothesis(run, args):
    tables = _cell_tables(run, args)
    per_pair = [estimates_from_counts(t) for t in tables]
    rep = hypothesis_test(per_pair, acausal=run.acausal)
    run.table("estimates", ESTIMATE_HEADER, _estimates_rows(tables, per_pair))
    rows = [[c.quantity, c.left, c.right, c.value_left, c.value_right, c.difference,
             c.combined_bound, c.threshold, c.sigmas_combined, c.sigmas_single, c.verdict]
            for c in rep.comparisons]
    run.table("hypothesis", ["quantity", "left", "right", "value_left", "value_right", "difference",
                             "combined_bound", "threshold", "sigmas_combined", "sigmas_single", "verdict"], rows)
    run.json("hypothesis_report", rep.to_dict())
    run.verdicts["hypothesis"] = rep.overall
    print(f"hypothesis test: {rep.overall}")
    for w in rep.warnings:
        print(f"warning: {w}")
    if args.strict and not rep.passed:
        return EXIT_STRICT
    return 0


def cmd_efficiency_fit(run, args):
    tables = _cell_tables(run, args)
    per_pair = [estimates_from_counts(t) for t in tables]
    deg = args.angles[0]
    pairs = [(deg[0], deg[2]), (deg[0], deg[3]), (deg[1], deg[2]), (deg[1], deg[3])]
    table = consistency_table(measured_from_estimates(pairs, per_pair), seed=args.seed)
    table.to_csv(run.path("efficiency.csv"))
    run.json("efficiency", table.to_dict())
    run.verdicts["efficiency_discrepancy"] = table.discrepancy
    print(f"discrepancy={table.discrepancy:.3g}")
    return 0


def cmd_report(run, args):
    if not args.data:
        raise _DataError("report needs input data: --data DIR is missing")
    if not Path(args.data).is_dir():
        raise _DataError(f"report input data directory {args.data} does not exist")
    if args.delta_g != 0 and not args.allow_acausal:
        raise UsageError("refusing a non-zero --delta-g without --allow-acausal: "
                         "coincidences should be counted without compensating a global time shift")
    d = load_dataset(args.data)
    delta = _offset(run, d, args)
    table = window_sweep(d, args.angles[1], args.window_grid, delta_ps=delta, policy=_policy(args))
    recs = list(table.records())
    col = {name: k for k, name in enumerate(SWEEP_HEADER)}

    run.table("s_vs_window", ["W_ps", "S", "S_bound", "Nc", "low_counts"],
              [[r[col[c]] for c in ("W_ps", "S", "S_bound", "Nc", "low_counts")] for r in recs])
    singles = ["E1_ab", "E1_abp", "E1_apb", "E1_apbp", "E2_ab", "E2_apb", "E2_abp", "E2_apbp"]
    run.table("singles_vs_window", ["W_ps"] + singles, [[r[0]] + [r[col[c]] for c in singles] for r in recs])
    counts_rows = []
    for row in table.rows:
        for name, t in zip(CELL_NAMES, row.counts):
            counts_rows.append([row.window_ps, name, math.degrees(t.a), math.degrees(t.b),
                                t.pp, t.pm, t.mp, t.mm])
    run.table("counts_vs_window", ["W_ps", "cell", "a_deg", "b_deg", "Cpp", "Cpm", "Cmp", "Cmm"], counts_rows)
    corr = ["E_ab", "E_abp", "E_apb", "E_apbp"]
    corr_rows = []
    for row, r in zip(table.rows, recs):
        bounds = [p.bound if p is not None else math.nan for p in row.per_pair]
        corr_rows.append([r[0]] + [r[col[c]] for c in corr] + bounds)
    run.table("correlation_vs_window", ["W_ps"] + corr + ["bound_" + n for n in CELL_NAMES], corr_rows)

    verdicts = {}
    for row in table.rows:
        if all(p is not None for p in row.per_pair):
            verdicts[str(row.window_ps)] = hypothesis_test(row.per_pair, acausal=run.acausal).overall
    run.verdicts["hypothesis_by_window"] = verdicts
    run.verdicts["violation_windows_ps"] = [row.window_ps for row in table.rows
                                            if row.chsh is not None and abs(row.chsh.s) > 2]
    print(f"report for {len(table.rows)} windows written to {run.out}")
    if args.strict and any(v == "fail" for v in verdicts.values()):
        return EXIT_STRICT
    return 0


def cmd_ingest(run, args):
    mod_name, _, func_name = args.converter.partition(":")
    if not func_name:
        raise UsageError("--converter must look like module:function")
    try:
        func = getattr(importlib.import_module(mod_name), func_name)
    except (ImportError, AttributeError) as exc:
        raise UsageError(f"cannot load converter {args.converter}: {exc}") from None
    d = func(args.source)
    if not isinstance(d, Dataset):
        raise _DataError(f"converter {args.converter} returned {type(d).__name__}, not a Dataset")
    root = write_dataset(d, run.out)
    for name in ("meta.json", "station1.csv", "station2.csv"):
        run.files.append(root / name)
    print(f"ingested {args.source} into {root}")
    return 0


# ---------------------------------------------------------------- parser

def build_parser():
    parser = argparse.ArgumentParser(prog="eprb", description="Two-station time-tag analysis and simulation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def common(p, data=True, angles=False, window=False, grid=False, delta=False, policy=False):
        p.add_argument("--out", default=".", help="output directory (default: current)")
        if data:
            p.add_argument("--data", help="dataset directory")
        if angles:
            p.add_argument("--angles", type=parse_angles, default=parse_angles("chsh-default"),
                           help="A,AP,B,BP in degrees or 'chsh-default'")
        if window:
            p.add_argument("--window", type=int, help="coincidence window W in ps")
        if grid:
            p.add_argument("--window-grid", type=parse_grid, default=parse_grid(DEFAULT_GRID),
                           help=f"START:STOP:STEP in ps (default {DEFAULT_GRID})")
        if delta:
            p.add_argument("--delta-g", type=parse_delta, default=0,
                           help="global offset added to station 1 tags, ps, or 'auto' (default 0)")
            p.add_argument("--bin-ps", type=int, default=DEFAULT_BIN_PS, help=argparse.SUPPRESS)
            p.add_argument("--range-ps", type=int, default=DEFAULT_RANGE_PS, help=argparse.SUPPRESS)
        if policy:
            p.add_argument("--policy", choices=sorted(POLICY_NAMES), default="greedy")
        return p

    p = common(sub.add_parser("simulate", help="generate a synthetic dataset"), data=False, angles=True)
    p.add_argument("--config", help="SimConfig JSON (overrides the model flags)")
    p.add_argument("--model", choices=["singlet", "product", "local"], default="singlet")
    p.add_argument("--pairs", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mean-interval-ps", type=float, default=30e6)
    p.add_argument("--jitter-ps", type=float, default=1000.0)
    p.add_argument("--settings", choices=["switched", "fixed"], default="switched")
    p.add_argument("--p1", type=float, default=0.0, help="product model polarization, station 1 (deg)")
    p.add_argument("--p2", type=float, default=0.0, help="product model polarization, station 2 (deg)")
    p.add_argument("--t0-ps", type=float, default=1e6, help="local model maximum delay")
    p.add_argument("--d", type=float, default=2.0, help="local model delay exponent")
    p.add_argument("--sign-rule", choices=["deterministic", "malus"], default="deterministic")
    p.add_argument("--eta1", type=parse_pair, help="station 1 efficiencies PLUS,MINUS")
    p.add_argument("--eta2", type=parse_pair, help="station 2 efficiencies PLUS,MINUS")
    p.add_argument("--single-detector", action="store_true", help="record only +1 detections")
    p.set_defaults(func=cmd_simulate)

    for name, func in (("histogram", cmd_histogram), ("offset", cmd_offset)):
        p = common(sub.add_parser(name, help=f"difference {name}" if name == "histogram" else "estimate the global offset"))
        p.add_argument("--bin-ps", type=int, default=DEFAULT_BIN_PS)
        p.add_argument("--range-ps", type=int, default=DEFAULT_RANGE_PS)
        p.set_defaults(func=func)

    p = common(sub.add_parser("coincidences", help="pair events within a window"),
               window=True, delta=True, policy=True)
    p.set_defaults(func=cmd_coincidences)

    p = common(sub.add_parser("sweep", help="S and estimates as a function of W"),
               angles=True, grid=True, delta=True, policy=True)
    p.set_defaults(func=cmd_sweep)

    for name, func, hlp in (("chsh", cmd_chsh, "Bell function S"),
                            ("hypothesis", cmd_hypothesis, "setting-independence test of the singles"),
                            ("efficiency-fit", cmd_efficiency_fit, "detector-efficiency consistency table")):
        p = common(sub.add_parser(name, help=hlp), angles=True, window=True, delta=True, policy=True)
        p.add_argument("--counts", help="counts CSV instead of --data")
        p.add_argument("--rotated-runs", action="store_true",
                       help="--counts holds single-detector runs (a_deg,b_deg,Cpp)")
        if name == "hypothesis":
            p.add_argument("--strict", action="store_true", help="exit 4 when the test fails")
        if name == "efficiency-fit":
            p.add_argument("--seed", type=int, default=0, help="seed for solver restarts")
        p.set_defaults(func=func)

    p = common(sub.add_parser("report", help="the four window-dependence artifacts"),
               angles=True, grid=True, delta=True, policy=True)
    p.add_argument("--allow-acausal", action="store_true", help="permit a non-zero --delta-g")
    p.add_argument("--strict", action="store_true")
    p.set_defaults(func=cmd_report)

    p = common(sub.add_parser("ingest", help="convert foreign data with a plug-in converter"), data=False)
    p.add_argument("--converter", required=True, help="module:function returning a Dataset")
    p.add_argument("--source", required=True)
    p.set_defaults(func=cmd_ingest)
    return parser


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on bad arguments
    try:
        run = Run(args, argv)
    except OSError as exc:
        print(f"error: cannot create output directory: {exc}", file=sys.stderr)
        return EXIT_DATA
    try:
        code = args.func(run, args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"eprb {args.command}: error: {exc}", file=sys.stderr)
        code = EXIT_ARGS
    except EprbError as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_DATA
    run.finish(code)
    return code


if __name__ == "__main__":
    sys.exit(main())
