"""Correlation estimators, CHSH, window sweeps and the setting-independence test."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np

from . import kernels
from .coincidence import CountsTable, count_coincidences, greedy_keep, match_coincidences
from .dataset import Dataset, apply_offset
from .errors import EmptyCellError, IncompleteSetError, NotTestableError, ParameterError

ANGLE_TOL = 1e-9
DECISION_SIGMAS = 5.0
WARNING_SIGMAS = 4.0
ERROR_BAR_SIGMAS = 2.5
NC_FLOOR = 100
CHSH_DEFAULT_DEG = (0.0, 45.0, 22.5, 67.5)

# cell order used everywhere: (a,b), (a,b'), (a',b), (a',b')
CELL_NAMES = ("ab", "abp", "apb", "apbp")


@dataclass(frozen=True)
class Estimates:
    e1: float
    e2: float
    e: float
    nc: int
    bound: float
    # integer numerators; e1 == num1 / nc exactly, etc.
    num1: int = field(default=0, repr=False)
    num2: int = field(default=0, repr=False)
    num12: int = field(default=0, repr=False)

    def exact(self):
        """(E1, E2, E) as exact fractions."""
        return (Fraction(self.num1, self.nc), Fraction(self.num2, self.nc), Fraction(self.num12, self.nc))


def estimates_from_counts(c: CountsTable) -> Estimates:
    pp, pm, mp, mm = c.as_tuple()
    nc = pp + pm + mp + mm
    if nc < 1:
        raise EmptyCellError(f"no coincidences for setting pair a={c.a!r}, b={c.b!r}")
    num1 = pp - mm + pm - mp
    num2 = pp - mm - pm + mp
    num12 = pp + mm - pm - mp
    return Estimates(num1 / nc, num2 / nc, num12 / nc, nc, nc ** -0.5, num1, num2, num12)


@dataclass(frozen=True)
class ChshResult:
    s: float
    angles: tuple[float, float, float, float]
    per_pair: tuple[Estimates, Estimates, Estimates, Estimates]

    @property
    def bound(self) -> float:
        """sqrt(sum 1/Nc): upper bound on the standard deviation of S."""
        return math.sqrt(sum(1.0 / p.nc for p in self.per_pair))


def chsh(per_pair, angles=None) -> ChshResult:
    """S = E(a,b) - E(a,b') + E(a',b) + E(a',b'); ``per_pair`` in that cell order."""
    per_pair = tuple(per_pair)
    if len(per_pair) != 4:
        raise ParameterError("chsh needs exactly four setting pairs")
    ab, abp, apb, apbp = per_pair
    s = ab.e - abp.e + apb.e + apbp.e
    if angles is None:
        angles = (math.nan,) * 4
    return ChshResult(s, tuple(float(a) for a in angles), per_pair)


def _same_angle(x, y, period=2 * math.pi, tol=ANGLE_TOL):
    d = x - y
    if period:
        d = (d + period / 2) % period - period / 2
    return abs(d) <= tol


def find_setting(table, angle, station=None) -> int:
    """Index of ``angle`` (radians) in a station's angle table."""
    for k, a in enumerate(table):
        if _same_angle(a, angle):
            return k
    where = f" at station {station}" if station else ""
    raise IncompleteSetError(f"angle {math.degrees(angle):g} deg not in angle table{where}")


def chsh_cells(d: Dataset, angles):
    """Setting-index pairs for (a,b), (a,b'), (a',b), (a',b') given radians (a, a', b, b')."""
    a, ap, b, bp = angles
    ia, iap = find_setting(d.station1.angles, a, 1), find_setting(d.station1.angles, ap, 1)
    ib, ibp = find_setting(d.station2.angles, b, 2), find_setting(d.station2.angles, bp, 2)
    return [(ia, ib), (ia, ibp), (iap, ib), (iap, ibp)]


@dataclass(frozen=True)
class Comparison:
    quantity: str
    left: str
    right: str
    value_left: float
    value_right: float
    difference: float
    combined_bound: float
    threshold: float
    single_bound: float
    single_threshold: float
    verdict: str

    @property
    def sigmas_combined(self):
        return abs(self.difference) / self.combined_bound

    @property
    def sigmas_single(self):
        return abs(self.difference) / self.single_bound


@dataclass(frozen=True)
class HypothesisReport:
    comparisons: tuple[Comparison, ...]
    overall: str  # "pass", "pass-with-warnings" or "fail"
    acausal_flag: bool = False
    warnings: tuple[str, ...] = ()
    error_bars: dict = field(default_factory=dict)
    note: str = (
        "each comparison is tested separately against 5*sqrt(1/Nc + 1/Nc'); "
        "overall passes only if every comparison passes"
    )

    @property
    def passed(self) -> bool:
        return self.overall != "fail"

    def to_dict(self):
        out = asdict(self)
        for c, src in zip(out["comparisons"], self.comparisons):
            c["sigmas_combined"] = src.sigmas_combined
            c["sigmas_single"] = src.sigmas_single
        return out


# (quantity, left cell, right cell): station-1 singles must not depend on b,
# station-2 singles must not depend on a.
_COMPARISONS = (
    ("E1", 0, 1),
    ("E1", 2, 3),
    ("E2", 0, 2),
    ("E2", 1, 3),
)


def hypothesis_test(per_pair, acausal=False) -> HypothesisReport:
    """Check that E1 is independent of b and E2 of a, at five times the 1/sqrt(Nc) bound."""
    per_pair = tuple(per_pair)
    if len(per_pair) != 4:
        raise ParameterError("hypothesis_test needs exactly four setting pairs")
    for name, p in zip(CELL_NAMES, per_pair):
        if p is None or p.nc < 1:
            raise NotTestableError(f"cell {name} has no coincidences")
    comps = []
    warns = []
    for qty, l, r in _COMPARISONS:
        pl, pr = per_pair[l], per_pair[r]
        vl = pl.e1 if qty == "E1" else pl.e2
        vr = pr.e1 if qty == "E1" else pr.e2
        diff = vl - vr
        combined = math.sqrt(1.0 / pl.nc + 1.0 / pr.nc)
        single = 1.0 / math.sqrt(min(pl.nc, pr.nc))
        verdict = "fail" if abs(diff) > DECISION_SIGMAS * combined else "pass"
        c = Comparison(qty, CELL_NAMES[l], CELL_NAMES[r], vl, vr, diff, combined,
                       DECISION_SIGMAS * combined, single, DECISION_SIGMAS * single, verdict)
        comps.append(c)
        if abs(diff) > WARNING_SIGMAS * single:
            warns.append(
                f"{qty}({c.left}) vs {qty}({c.right}): |diff|={abs(diff):.4g} is "
                f"{c.sigmas_single:.2f}x the single-cell bound ({c.sigmas_combined:.2f}x combined)"
            )
    if any(c.verdict == "fail" for c in comps):
        overall = "fail"
    elif warns:
        overall = "pass-with-warnings"
    else:
        overall = "pass"
    bars = {name: ERROR_BAR_SIGMAS * p.bound for name, p in zip(CELL_NAMES, per_pair)}
    return HypothesisReport(tuple(comps), overall, bool(acausal), tuple(warns), bars)


def combine_rotated_runs(runs: dict, pairs=None) -> dict:
    """Build four-outcome tables from single-detector runs.

    ``runs`` maps (a, b) in radians to the ++ count of that run; the other
    outcomes come from the runs with a polarizer rotated by 90 degrees.  An
    exact angle match is preferred, otherwise angles match modulo 180 degrees.
    ``pairs`` defaults to every run whose full rotated set is present.
    """
    keys = list(runs)

    def lookup(a, b):
        for k in keys:
            if _same_angle(k[0], a, period=None) and _same_angle(k[1], b, period=None):
                return runs[k]
        for k in keys:
            if _same_angle(k[0], a, period=math.pi) and _same_angle(k[1], b, period=math.pi):
                return runs[k]
        return None

    q = math.pi / 2
    explicit = pairs is not None
    if pairs is None:
        pairs = keys
    out = {}
    for a, b in pairs:
        parts = []
        for label, da, db in (("a, b", 0, 0), ("a, b+90", 0, q), ("a+90, b", q, 0), ("a+90, b+90", q, q)):
            c = lookup(a + da, b + db)
            if c is None:
                if not explicit:
                    break
                names = label.split(", ")
                va, vb = math.degrees(a + da), math.degrees(b + db)
                raise IncompleteSetError(f"missing rotated run {names[0]}={va:g}, {names[1]}={vb:g}")
            parts.append(int(c))
        else:
            out[a, b] = CountsTable(*parts, a=a, b=b)
    return out


@dataclass(frozen=True)
class SweepRow:
    window_ps: int
    nc: tuple[int, int, int, int]
    per_pair: tuple  # Estimates or None per cell
    chsh: ChshResult | None
    low_counts: bool
    counts: tuple[CountsTable, ...] = ()


SWEEP_HEADER = [
    "W_ps", "S", "S_bound", "Nc",
    "E1_ab", "E1_abp", "E1_apb", "E1_apbp",
    "E2_ab", "E2_apb", "E2_abp", "E2_apbp",
    "E_ab", "E_abp", "E_apb", "E_apbp",
    "low_counts",
]


@dataclass(frozen=True)
class SweepTable:
    angles: tuple[float, float, float, float]
    rows: tuple[SweepRow, ...]
    offset_ps: int = 0
    policy: str = "greedy-delta"

    @property
    def acausal(self):
        return self.offset_ps != 0

    def column(self, name):
        return [r[SWEEP_HEADER.index(name)] for r in self.records()]

    def records(self):
        nan = float("nan")
        for row in self.rows:
            pp = row.per_pair

            def get(attr, k):
                return getattr(pp[k], attr) if pp[k] is not None else nan

            s = row.chsh.s if row.chsh else nan
            sb = row.chsh.bound if row.chsh else nan
            yield [
                row.window_ps, s, sb, sum(row.nc),
                get("e1", 0), get("e1", 1), get("e1", 2), get("e1", 3),
                get("e2", 0), get("e2", 2), get("e2", 1), get("e2", 3),
                get("e", 0), get("e", 1), get("e", 2), get("e", 3),
                int(row.low_counts),
            ]

    def to_csv(self, path):
        with open(path, "w", newline="\n") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SWEEP_HEADER)
            for rec in self.records():
                w.writerow([repr(v) if isinstance(v, float) else v for v in rec])

    def to_json(self, path):
        doc = {
            "angles_rad": list(self.angles),
            "offset_ps": self.offset_ps,
            "acausal": self.acausal,
            "policy": self.policy,
            "columns": SWEEP_HEADER,
            "rows": [[None if isinstance(v, float) and math.isnan(v) else v for v in rec]
                     for rec in self.records()],
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=1)


def _row(window_ps, tables, angles, floor):
    per_pair = []
    for t in tables:
        per_pair.append(estimates_from_counts(t) if t.nc else None)
    nc = tuple(t.nc for t in tables)
    result = chsh(per_pair, angles) if all(p is not None for p in per_pair) else None
    return SweepRow(int(window_ps), nc, tuple(per_pair), result, min(nc) < floor, tuple(tables))


def window_sweep(d: Dataset, angles, w_grid, delta_ps=0, policy="greedy-delta",
                 nc_floor=NC_FLOOR) -> SweepTable:
    """Coincidences, estimates and S for each window in ``w_grid``.

    ``angles`` are (a, a', b, b') in radians.  With the greedy policy the
    candidate list is built and accepted once at the largest window: greedy
    decisions only depend on candidates with smaller |dt|, so the matching at
    any smaller W is the accepted set restricted to |dt| <= W.
    """
    w_grid = [int(w) for w in w_grid]
    if not w_grid:
        raise ParameterError("empty window grid")
    if any(b <= a for a, b in zip(w_grid, w_grid[1:])):
        raise ParameterError("window grid must be strictly increasing")
    cells = chsh_cells(d, angles)
    s1, s2 = d.station1, d.station2
    rows = []
    if policy == "greedy-delta":
        s1o = apply_offset(s1, delta_ps)
        i, j, dt = kernels.candidate_pairs(s1o.t, s2.t, w_grid[-1])
        keep = greedy_keep(i, j, dt, len(s1), len(s2))
        i, j, dt = i[keep], j[keep], dt[keep]
        order = np.argsort(np.abs(dt), kind="stable")
        i, j, absd = i[order], j[order], np.abs(dt[order])
        n1, n2 = len(s1.angles), len(s2.angles)
        code = ((s1.setting[i].astype(np.int64) * n2 + s2.setting[j]) * 2
                + (s1.outcome[i] < 0)) * 2 + (s2.outcome[j] < 0)
        for w in w_grid:
            k = np.searchsorted(absd, w, side="right")
            flat = np.bincount(code[:k], minlength=n1 * n2 * 4).reshape(n1, n2, 2, 2)
            tables = [
                CountsTable(*(int(v) for v in flat[ia, ib].ravel()),
                            a=s1.angles[ia], b=s2.angles[ib], setting1=ia, setting2=ib)
                for ia, ib in cells
            ]
            rows.append(_row(w, tables, angles, nc_floor))
    else:
        for w in w_grid:
            p = match_coincidences(s1, s2, w, policy=policy, offset_ps=delta_ps)
            counts = count_coincidences(p, s1, s2)
            rows.append(_row(w, [counts[c] for c in cells], angles, nc_floor))
    return SweepTable(tuple(float(a) for a in angles), tuple(rows), int(delta_ps), policy)


def analyze_window(d: Dataset, angles, window_ps, delta_ps=0, policy="greedy-delta"):
    """Counts tables (cell order) for one window."""
    p = match_coincidences(d.station1, d.station2, window_ps, policy=policy, offset_ps=delta_ps)
    counts = count_coincidences(p, d.station1, d.station2)
    return [counts[c] for c in chsh_cells(d, angles)]
