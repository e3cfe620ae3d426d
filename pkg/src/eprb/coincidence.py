"""Pairing of detection events across the two stations.

Covers the difference histogram and global-offset estimate, window matching
with each event used at most once, per-setting coincidence counts, and an
exact maximum-matching oracle for small test instances.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .dataset import StationStream, apply_offset
from .errors import NoPeakError, ParameterError, SizeError

POLICIES = ("greedy-delta", "sequential")
DEFAULT_BIN_PS = 500
DEFAULT_RANGE_PS = 1_000_000
ORACLE_MAX_EVENTS = 64


@dataclass(frozen=True)
class Histogram:
    bin_ps: int
    range_ps: int
    counts: np.ndarray

    @property
    def centers(self) -> np.ndarray:
        half = (len(self.counts) - 1) // 2
        return np.arange(-half, half + 1, dtype=np.int64) * self.bin_ps

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_csv(self, path):
        with open(path, "w", newline="\n") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin_center_ps", "count"])
            w.writerows(zip(self.centers.tolist(), self.counts.tolist()))


@dataclass(frozen=True)
class PairList:
    """Accepted coincidences: station-1 index, station-2 index, t1 - t2."""

    i1: np.ndarray
    i2: np.ndarray
    delta_ps: np.ndarray
    window_ps: int
    offset_ps: int = 0
    policy: str = "greedy-delta"

    def __len__(self):
        return len(self.i1)

    @property
    def acausal(self) -> bool:
        return self.offset_ps != 0

    def to_csv(self, path):
        with open(path, "w", newline="\n") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["i1", "i2", "delta_ps"])
            w.writerows(zip(self.i1.tolist(), self.i2.tolist(), self.delta_ps.tolist()))


@dataclass(frozen=True)
class CountsTable:
    """C++, C+-, C-+, C-- for one setting pair (first sign: station 1)."""

    pp: int
    pm: int
    mp: int
    mm: int
    a: float = float("nan")
    b: float = float("nan")
    setting1: int | None = field(default=None, compare=False)
    setting2: int | None = field(default=None, compare=False)

    @property
    def nc(self) -> int:
        return self.pp + self.pm + self.mp + self.mm

    def as_tuple(self):
        return (self.pp, self.pm, self.mp, self.mm)


def _check_sorted(s: StationStream):
    if len(s) > 1 and np.any(np.diff(s.t) < 0):
        raise ParameterError(f"station {s.station_id} stream is not sorted")


def difference_histogram(s1: StationStream, s2: StationStream,
                         bin_ps: int = DEFAULT_BIN_PS,
                         range_ps: int = DEFAULT_RANGE_PS) -> Histogram:
    """Histogram of t1 - t2 over all cross-station pairs with |t1 - t2| <= range_ps.

    Bin k is centred on k * bin_ps and holds differences in
    [k*bin_ps - bin_ps/2, k*bin_ps + bin_ps/2).
    """
    bin_ps, range_ps = int(bin_ps), int(range_ps)
    if bin_ps <= 0 or range_ps < bin_ps:
        raise ParameterError(f"need bin_ps > 0 and range_ps >= bin_ps (got {bin_ps}, {range_ps})")
    _check_sorted(s1)
    _check_sorted(s2)
    counts = kernels.diff_histogram(s1.t, s2.t, bin_ps, range_ps)
    counts.flags.writeable = False
    return Histogram(bin_ps, range_ps, counts)


def estimate_global_offset(h: Histogram) -> int:
    """Offset to add to station 1 so the histogram peak moves to zero.

    Ties between equally high bins go to the smallest |offset|, then to the
    negative one.
    """
    if h.total == 0:
        raise NoPeakError("histogram is empty; no peak to align")
    peak = h.counts.max()
    candidates = [-int(c) for c in h.centers[h.counts == peak]]
    return min(candidates, key=lambda d: (abs(d), d > 0))


def greedy_keep(i, j, d, n1, n2):
    """Greedy-delta acceptance mask over candidates listed in (i, j) order.

    Candidates are taken by increasing |delta|, ties going to the earlier
    station-1 event and then the earlier station-2 event; tags are sorted, so
    index order is tag order.  Because the input is already in (i, j) order a
    stable sort on |delta| alone realizes that tie-break.
    """
    if len(i) == 0 or (np.all(np.diff(i) > 0) and np.all(np.diff(j) > 0)):
        # no event has two candidates, nothing to arbitrate
        return np.ones(len(i), dtype=bool)
    order = np.argsort(np.abs(d), kind="stable")
    keep = np.empty(len(i), dtype=bool)
    keep[order] = kernels.greedy_accept(i[order], j[order], n1, n2)
    return keep


def match_coincidences(s1: StationStream, s2: StationStream, window_ps: int,
                       policy: str = "greedy-delta", offset_ps: int = 0) -> PairList:
    """Pair events with |t1 + offset - t2| <= window_ps, each event at most once.

    ``greedy-delta`` accepts in-window candidates by increasing |t1 - t2|;
    ``sequential`` lets each station-1 event, in time order, take the earliest
    unused station-2 event in its window.  A non-zero ``offset_ps`` marks the
    result acausal.
    """
    window_ps = int(window_ps)
    if window_ps < 0:
        raise ParameterError("window_ps must be >= 0")
    if policy not in POLICIES:
        raise ParameterError(f"unknown policy {policy!r}; expected one of {POLICIES}")
    if offset_ps:
        s1 = apply_offset(s1, offset_ps)
    _check_sorted(s1)
    _check_sorted(s2)

    if policy == "greedy-delta":
        i, j, d = kernels.candidate_pairs(s1.t, s2.t, window_ps)
        keep = greedy_keep(i, j, d, len(s1), len(s2))
        i, j, d = i[keep], j[keep], d[keep]
    else:
        i, j = kernels.sequential_match(s1.t, s2.t, window_ps)
        d = s1.t[i] - s2.t[j]
    return PairList(i, j, d, window_ps, int(offset_ps), policy)


def count_coincidences(p: PairList, s1: StationStream, s2: StationStream) -> dict:
    """Counts table for every (setting1, setting2) index pair of the two angle tables."""
    n1, n2 = len(s1.angles), len(s2.angles)
    a = s1.setting[p.i1].astype(np.int64)
    b = s2.setting[p.i2].astype(np.int64)
    xm = (s1.outcome[p.i1] < 0).astype(np.int64)
    ym = (s2.outcome[p.i2] < 0).astype(np.int64)
    code = ((a * n2 + b) * 2 + xm) * 2 + ym
    flat = np.bincount(code, minlength=n1 * n2 * 4).reshape(n1, n2, 2, 2)
    out = {}
    for ia in range(n1):
        for ib in range(n2):
            c = flat[ia, ib]
            out[ia, ib] = CountsTable(
                int(c[0, 0]), int(c[0, 1]), int(c[1, 0]), int(c[1, 1]),
                s1.angles[ia], s2.angles[ib], ia, ib,
            )
    return out


def oracle_max_matching(s1: StationStream, s2: StationStream, window_ps: int) -> int:
    """Maximum number of disjoint in-window pairs, by augmenting-path search.

    Test oracle only; refuses instances above ORACLE_MAX_EVENTS per station.
    """
    n1, n2 = len(s1), len(s2)
    if n1 > ORACLE_MAX_EVENTS or n2 > ORACLE_MAX_EVENTS:
        raise SizeError(f"oracle limited to {ORACLE_MAX_EVENTS} events per station (got {n1}, {n2})")
    t1 = s1.t.tolist()
    t2 = s2.t.tolist()
    adj = [[m for m in range(n2) if abs(t1[n] - t2[m]) <= window_ps] for n in range(n1)]
    match2 = [-1] * n2

    def augment(n, seen):
        for m in adj[n]:
            if seen[m]:
                continue
            seen[m] = True
            if match2[m] == -1 or augment(match2[m], seen):
                match2[m] = n
                return True
        return False

    return sum(augment(n, [False] * n2) for n in range(n1))
