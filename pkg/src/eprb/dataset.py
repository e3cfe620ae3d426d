"""Canonical two-station dataset: types, CSV/JSON storage and time offsets.

On disk a dataset is a directory holding::

    meta.json      style, tick_ps, angles_station1, angles_station2, provenance
    station1.csv   t_ps,setting,outcome
    station2.csv   t_ps,setting,outcome

Time tags are signed 64-bit integer picoseconds, settings index into the
station's angle table (radians) and outcomes are +1 / -1.
"""

from __future__ import annotations

import json
import math
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from .errors import LoadError, ParseError, RangeError

STYLES = ("switched", "fixed-run", "swept")
CSV_HEADER = "t_ps,setting,outcome"
INT64_MIN = -(2**63)
INT64_MAX = 2**63 - 1
# rows the vectorized reader may take: at most 18 digits for t (always fits int64)
_INT_CELL = re.compile(r"\s*-?\d+\s*")
_PLAIN_ROWS = re.compile(r"(?:-?\d{1,18},-?\d{1,5},-?\d{1,5}\n)*-?\d{1,18},-?\d{1,5},-?\d{1,5}\n?")


class EventRecord(NamedTuple):
    t: int
    setting: int
    outcome: int


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class StationStream:
    """Time-ordered events recorded at one station.

    Stored column-wise (``t``, ``setting``, ``outcome`` arrays) rather than as
    a list of records; iterate to get :class:`EventRecord` tuples.
    """

    station_id: int
    angles: tuple[float, ...]
    t: np.ndarray
    setting: np.ndarray
    outcome: np.ndarray
    tick_ps: int = 1
    resorted: bool = False

    def __post_init__(self):
        object.__setattr__(self, "angles", tuple(float(a) for a in self.angles))
        object.__setattr__(self, "t", _frozen(self.t, np.int64))
        object.__setattr__(self, "setting", _frozen(self.setting, np.int16))
        object.__setattr__(self, "outcome", _frozen(self.outcome, np.int8))
        self.validate()

    def validate(self):
        if self.station_id not in (1, 2):
            raise ValueError(f"station_id must be 1 or 2, got {self.station_id}")
        if not self.tick_ps > 0:
            raise ValueError("tick_ps must be positive")
        for a in self.angles:
            if not 0.0 <= a < 2 * math.pi:
                raise ValueError(f"angle {a!r} outside [0, 2*pi)")
        n = len(self.t)
        if len(self.setting) != n or len(self.outcome) != n:
            raise ValueError("t, setting and outcome must have equal length")
        if n and np.any(np.diff(self.t) < 0):
            raise ValueError("events must be sorted by time tag")
        if n and not np.all(np.abs(self.outcome) == 1):
            raise ValueError("outcomes must be +1 or -1")
        if n and (self.setting.min() < 0 or self.setting.max() >= len(self.angles)):
            raise ValueError("setting index outside the angle table")

    def __len__(self):
        return len(self.t)

    def __iter__(self) -> Iterator[EventRecord]:
        for t, s, x in zip(self.t.tolist(), self.setting.tolist(), self.outcome.tolist()):
            yield EventRecord(t, s, x)

    def __eq__(self, other):
        if not isinstance(other, StationStream):
            return NotImplemented
        return (
            self.station_id == other.station_id
            and self.angles == other.angles
            and self.tick_ps == other.tick_ps
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.setting, other.setting)
            and np.array_equal(self.outcome, other.outcome)
        )


@dataclass(frozen=True, eq=True)
class Dataset:
    station1: StationStream
    station2: StationStream
    style: str = "switched"
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.style not in STYLES:
            raise ValueError(f"unknown style {self.style!r}; expected one of {STYLES}")
        if self.style == "fixed-run":
            for s in (self.station1, self.station2):
                if len(s.angles) != 1:
                    raise ValueError("fixed-run stations carry exactly one angle")
                if len(s) and np.any(s.outcome != 1):
                    raise ValueError("fixed-run datasets hold only +1 outcomes")

    @property
    def resorted(self):
        return self.station1.resorted or self.station2.resorted


def _read_station_csv(path: Path, station_id: int, angles, tick_ps) -> StationStream:
    if not path.is_file():
        raise LoadError(f"missing file {path}")
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise ParseError(path, 0, f"expected header {CSV_HEADER!r}, got {header!r}")
        body = fh.read()
    lines = body.splitlines()
    n = len(lines)
    t = np.empty(n, dtype=np.int64)
    setting = np.empty(n, dtype=np.int64)
    outcome = np.empty(n, dtype=np.int64)
    if n and _PLAIN_ROWS.fullmatch(body):
        # every cell is a short plain integer, so numpy cannot coerce or overflow
        arr = np.loadtxt(lines, dtype=np.int64, delimiter=",", ndmin=2, comments=None)
        t, setting, outcome = arr[:, 0], arr[:, 1], arr[:, 2]
    elif n:
        for row, line in enumerate(lines, start=1):
            cells = line.split(",")
            if len(cells) != 3:
                raise ParseError(path, row, f"expected 3 fields, got {len(cells)}")
            vals = []
            for name, cell in zip(("t_ps", "setting", "outcome"), cells):
                if not _INT_CELL.fullmatch(cell):
                    raise ParseError(path, row, f"{name} is not an integer: {cell!r}")
                vals.append(int(cell))
            if not INT64_MIN <= vals[0] <= INT64_MAX:
                raise ParseError(path, row, "t_ps outside signed 64-bit range")
            if vals[2] not in (1, -1):
                raise ParseError(path, row, f"outcome must be ±1, got {vals[2]}")
            if not 0 <= vals[1] < len(angles):
                raise ParseError(path, row, f"setting index {vals[1]} outside angle table of length {len(angles)}")
            t[row - 1], setting[row - 1], outcome[row - 1] = vals

    bad = np.flatnonzero((outcome != 1) & (outcome != -1))
    if bad.size:
        raise ParseError(path, int(bad[0]) + 1, f"outcome must be ±1, got {int(outcome[bad[0]])}")
    bad = np.flatnonzero((setting < 0) | (setting >= len(angles)))
    if bad.size:
        raise ParseError(
            path, int(bad[0]) + 1,
            f"setting index {int(setting[bad[0]])} outside angle table of length {len(angles)}",
        )

    resorted = False
    if n and np.any(np.diff(t) < 0):
        order = np.argsort(t, kind="stable")
        t, setting, outcome = t[order], setting[order], outcome[order]
        resorted = True
        warnings.warn(f"{path}: events were not sorted by t_ps; re-sorted", stacklevel=3)
    return StationStream(station_id, angles, t, setting, outcome, tick_ps=tick_ps, resorted=resorted)


def load_dataset(path) -> Dataset:
    """Read a canonical dataset directory.

    Raises :class:`LoadError` for missing files or bad metadata and
    :class:`ParseError` (with the offending row) for malformed events.
    Unsorted station files are re-sorted and the stream's ``resorted`` flag set.
    """
    root = Path(path)
    meta_path = root / "meta.json"
    if not meta_path.is_file():
        raise LoadError(f"missing file {meta_path}")
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        style = meta["style"]
        tick_ps = int(meta["tick_ps"])
        angles1 = [float(a) for a in meta["angles_station1"]]
        angles2 = [float(a) for a in meta["angles_station2"]]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise LoadError(f"{meta_path}: invalid metadata ({exc})") from None

    try:
        s1 = _read_station_csv(root / "station1.csv", 1, angles1, tick_ps)
        s2 = _read_station_csv(root / "station2.csv", 2, angles2, tick_ps)
        return Dataset(s1, s2, style=style, meta=meta)
    except ValueError as exc:
        if isinstance(exc, ParseError):
            raise
        raise LoadError(f"{root}: {exc}") from None


def _write_station_csv(path: Path, s: StationStream):
    cols = np.column_stack([s.t, s.setting.astype(np.int64), s.outcome.astype(np.int64)])
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(CSV_HEADER + "\n")
        if len(cols):
            np.savetxt(fh, cols, fmt="%d", delimiter=",", newline="\n")


def write_dataset(d: Dataset, path) -> Path:
    """Write ``d`` in the canonical layout; returns the directory."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    meta = {
        "style": d.style,
        "tick_ps": d.station1.tick_ps,
        "angles_station1": list(d.station1.angles),
        "angles_station2": list(d.station2.angles),
        "provenance": d.meta.get("provenance", {}),
    }
    (root / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _write_station_csv(root / "station1.csv", d.station1)
    _write_station_csv(root / "station2.csv", d.station2)
    return root


def apply_offset(s: StationStream, delta_ps: int) -> StationStream:
    """Shift every time tag of ``s`` by ``delta_ps`` picoseconds."""
    delta_ps = int(delta_ps)
    if len(s):
        lo, hi = int(s.t[0]) + delta_ps, int(s.t[-1]) + delta_ps
        if lo < INT64_MIN or hi > INT64_MAX:
            raise RangeError(f"offset {delta_ps} ps overflows signed 64-bit time tags")
    if delta_ps == 0:
        return s
    return StationStream(
        s.station_id, s.angles, s.t + np.int64(delta_ps), s.setting, s.outcome,
        tick_ps=s.tick_ps, resorted=s.resorted,
    )


def stream_from_records(station_id, angles, records, tick_ps=1) -> StationStream:
    """Build a stream from (t, setting, outcome) tuples, sorting by t."""
    records = sorted(records, key=lambda r: r[0])
    if records:
        t, s, x = zip(*records)
    else:
        t, s, x = (), (), ()
    return StationStream(station_id, angles, t, s, x, tick_ps=tick_ps)
