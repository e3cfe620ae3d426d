import math

import numpy as np
import pytest

from eprb import kernels
from eprb.dataset import Dataset, StationStream

# criterion number -> (passed, detail); filled by test_acceptance, printed at the end
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(params=sorted(kernels.backends()))
def backend(request, monkeypatch):
    """Run the test once per available kernel backend."""
    mod = kernels.backends()[request.param]
    for name in ("candidate_pairs", "greedy_accept", "sequential_match", "diff_histogram"):
        monkeypatch.setattr(kernels, name, getattr(mod, name))
    return request.param


def stream(station_id, tags, settings=None, outcomes=None, angles=(0.0,)):
    tags = np.asarray(tags, dtype=np.int64)
    n = len(tags)
    settings = np.zeros(n, dtype=np.int16) if settings is None else settings
    outcomes = np.ones(n, dtype=np.int8) if outcomes is None else outcomes
    return StationStream(station_id, angles, tags, settings, outcomes)


def random_switched(rng, n, angles1=(0.0, math.pi / 4), angles2=(math.pi / 8, 3 * math.pi / 8),
                    span=10_000, jitter=30, keep=0.8):
    """Random two-station dataset: shared emission times, jitter, independent losses."""
    base = np.sort(rng.integers(0, span, n))
    t1 = base[rng.random(n) < keep]
    t1 = t1 + rng.integers(-jitter, jitter + 1, len(t1))
    t2 = base[rng.random(n) < keep]
    t2 = t2 + rng.integers(-jitter, jitter + 1, len(t2))
    t1, t2 = np.sort(t1), np.sort(t2)
    s1 = StationStream(1, angles1, t1, rng.integers(0, len(angles1), len(t1)), rng.choice([-1, 1], len(t1)))
    s2 = StationStream(2, angles2, t2, rng.integers(0, len(angles2), len(t2)), rng.choice([-1, 1], len(t2)))
    return Dataset(s1, s2)


def table2_runs():
    """The bundled 36-run fixed-setting ++ counts as {(a_rad, b_rad): count}."""
    import csv
    from importlib.resources import files

    text = files("eprb").joinpath("data/fixed_run_counts.csv").read_text()
    return {
        (math.radians(float(r["a_deg"])), math.radians(float(r["b_deg"]))): int(r["Cpp"])
        for r in csv.DictReader(text.splitlines())
    }


CHSH_DEG = (0.0, 45.0, 22.5, 67.5)
CHSH_RAD = tuple(math.radians(x) for x in CHSH_DEG)


def chsh_pairs(angles=CHSH_RAD):
    a, ap, b, bp = angles
    return [(a, b), (a, bp), (ap, b), (ap, bp)]
