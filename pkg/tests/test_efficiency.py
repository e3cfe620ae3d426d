import math

import numpy as np
import pytest

from eprb.efficiency import (
    EffParams,
    Measured,
    consistency_table,
    find_roots,
    forward_counts,
    forward_model,
    pair_probabilities,
    relative_efficiency,
    solve_triple,
)
from eprb.errors import InsufficientSolutionsError, InvalidMomentError, ParameterError, SingularModelError
from eprb.stats import estimates_from_counts

CELLS = [("a", "b"), ("a", "b'"), ("a'", "b"), ("a'", "b'")]
LABELS = ("a", "a'", "b", "b'")
# measured values no efficiency model reproduces for most leave-one-out triples
NO_SOLUTION = [
    Measured(c, *v)
    for c, v in zip(CELLS, [(-0.03, 0.78, 0.87), (-0.28, 0.14, -0.36), (0.19, -0.32, -0.22), (0.78, -0.55, 0.25)])
]


def params(r1, r2, e1=(0.0, 0.0), e2=(0.0, 0.0), e=None, **kw):
    if e is None:
        # singlet correlations at the usual CHSH angles
        s = math.sqrt(0.5)
        e = (-s, s, -s, -s)
    return EffParams(r1, r2, dict(zip(("a", "a'"), e1)), dict(zip(("b", "b'"), e2)), dict(zip(CELLS, e)), **kw)


def random_params(rng):
    while True:
        r1, r2 = rng.uniform(-0.3, 0.3, 2)
        p = params(r1, r2, rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 4))
        if all(min(pair_probabilities(p.ehat1[a], p.ehat2[b], p.ehat[a, b])) >= 0 for a, b in CELLS):
            return p


def measure(p, form="counts"):
    return [Measured(c, *forward_model(p, c, form)) for c in CELLS]


def test_forward_r_zero_identity():
    p = params(0.0, 0.0, (0.3, -0.2), (0.1, 0.4), (0.5, -0.1, 0.2, 0.7))
    for a, b in CELLS:
        assert forward_model(p, (a, b)) == (p.ehat1[a], p.ehat2[b], p.ehat[a, b])


@pytest.mark.parametrize("form", ["counts", "swapped"])
def test_forward_worked_example(form):
    p = EffParams(0.2, -0.1, {"a": 0.0}, {"b": 0.0}, {("a", "b"): -0.70711})
    e1, e2, e = forward_model(p, ("a", "b"), form)
    d = 1 + 0.2 * -0.1 * -0.70711
    assert d == pytest.approx(1.014142, abs=1e-6)
    assert e1 == pytest.approx(0.26694, abs=1e-5)
    # hand evaluation: (r2 + r1*Ehat) / D and (r1*r2 + Ehat) / D
    assert e2 == pytest.approx((-0.1 + 0.2 * -0.70711) / d, abs=1e-12)
    assert e2 == pytest.approx(-0.23806, abs=1e-5)
    assert e == pytest.approx(-0.71697, abs=1e-5)


def test_forward_dead_minus_detector():
    p = EffParams(1.0, 0.0, {"a": 0.0}, {"b": 0.0}, {("a", "b"): 0.0})
    assert forward_model(p, ("a", "b"))[0] == 1


def test_forward_singular():
    p = EffParams(-1.0, 0.0, {"a": 1.0}, {"b": 0.0}, {("a", "b"): 0.0})
    with pytest.raises(SingularModelError):
        forward_model(p, ("a", "b"))
    with pytest.raises(ParameterError):
        forward_model(params(0.1, 0.1), ("a", "b"), form="printed")


def test_forward_matches_weighted_counts():
    # the counts form is the exact ratio of efficiency-weighted counts
    rng = np.random.default_rng(0)
    for _ in range(20):
        eta1, eta2 = rng.uniform(0.2, 1, 2), rng.uniform(0.2, 1, 2)
        p = random_params(rng)
        p = EffParams.from_efficiencies(eta1, eta2, p.ehat1, p.ehat2, p.ehat, n_pairs=1000)
        for c in CELLS:
            est = estimates_from_counts(forward_counts(p, c))
            assert (est.e1, est.e2, est.e) == pytest.approx(forward_model(p, c), abs=1e-12)


def test_swapped_form_differs_when_singles_nonzero():
    p = params(0.2, -0.1, (0.5, 0.0), (0.0, 0.0))
    e1c = forward_model(p, ("a", "b"))[0]
    e1s = forward_model(p, ("a", "b"), "swapped")[0]
    num = 0.2 + 0.5 + 0.2 * -0.1 * 0.0 + -0.1 * p.ehat["a", "b"]
    assert e1c == pytest.approx(num / (1 + 0.2 * 0.5 + 0.2 * -0.1 * p.ehat["a", "b"]))
    assert e1s == pytest.approx(num / (1 + -0.1 * 0.5 + 0.2 * -0.1 * p.ehat["a", "b"]))


def test_forward_counts_examples():
    p = EffParams(0, 0, {"a": 0.0}, {"b": 0.0}, {("a", "b"): -1.0}, eta1=(1, 1), eta2=(1, 1), n_pairs=1000)
    assert forward_counts(p, ("a", "b")).as_tuple() == (0, 500, 500, 0)
    # (0.9, -0.9, -0.99) is a valid triple: its smallest probability is 0.0025
    assert min(pair_probabilities(0.9, -0.9, -0.99)) == pytest.approx(0.0025)
    bad = EffParams(0, 0, {"a": 0.9}, {"b": 0.9}, {("a", "b"): -0.5}, eta1=(1, 1), eta2=(1, 1), n_pairs=1000)
    with pytest.raises(InvalidMomentError):
        forward_counts(bad, ("a", "b"))
    with pytest.raises(ParameterError):
        forward_counts(params(0, 0), ("a", "b"))


def test_forward_counts_total_and_sampling():
    p = EffParams(0, 0, {"a": 0.2}, {"b": -0.1}, {("a", "b"): 0.3},
                  kappa1={"a": 0.5}, kappa2={"b": 0.9}, eta1=(0.8, 0.4), eta2=(0.6, 0.7), n_pairs=10_000)
    c = forward_counts(p, ("a", "b"))
    probs = pair_probabilities(0.2, -0.1, 0.3)
    assert sum(probs) == pytest.approx(1)
    assert c.nc == pytest.approx(0.5 * 0.9 * 10_000 * sum(
        pr * ex * ey for pr, (ex, ey) in zip(probs, [(0.8, 0.6), (0.8, 0.7), (0.4, 0.6), (0.4, 0.7)])))
    assert forward_counts(p, ("a", "b"), rng=3).as_tuple() == forward_counts(p, ("a", "b"), rng=3).as_tuple()
    assert all(isinstance(v, int) for v in forward_counts(p, ("a", "b"), rng=3).as_tuple())


def test_relative_efficiency_recovered_from_counts():
    eta1, eta2 = (0.8, 0.4), (0.5, 0.6)
    assert relative_efficiency(*eta1) == pytest.approx(1 / 3)
    base = params(0, 0, (0.1, -0.2), (0.15, 0.05), (-0.6, 0.55, -0.5, -0.65))
    p = EffParams.from_efficiencies(eta1, eta2, base.ehat1, base.ehat2, base.ehat, n_pairs=10**6)
    meas = []
    for c in CELLS:
        est = estimates_from_counts(forward_counts(p, c))
        meas.append(Measured(c, est.e1, est.e2, est.e))
    sol = solve_triple(meas[:3], CELLS[3], labels=LABELS)
    assert sol.converged
    assert sol.params.r1 == pytest.approx(1 / 3, abs=1e-6)
    assert sol.params.r2 == pytest.approx(relative_efficiency(*eta2), abs=1e-6)


def test_solve_triple_roundtrip_example():
    p = params(0.17, -0.01, (0.12, -0.08), (0.05, 0.2), (-0.6, 0.65, -0.7, -0.55))
    sol = solve_triple(measure(p)[:3], CELLS[3], labels=LABELS)
    assert sol.converged and sol.residual < 1e-10
    truth = [p.r1, p.r2, *p.ehat1.values(), *p.ehat2.values(), *(p.ehat[c] for c in CELLS[:3])]
    assert np.allclose(sol.vector()[:9], truth, atol=1e-6)
    for c in CELLS[:3]:
        assert forward_model(sol.params, c) == pytest.approx(forward_model(p, c), abs=1e-10)


def test_solve_triple_r_zero_fixed_point():
    p = params(0.0, 0.0, (0.3, -0.1), (0.2, 0.0), (-0.5, 0.4, -0.3, -0.6))
    meas = measure(p)
    sol = solve_triple(meas[:3], CELLS[3])
    assert abs(sol.params.r1) < 1e-8 and abs(sol.params.r2) < 1e-8
    for m in meas[:3]:
        assert sol.params.ehat[m.pair] == pytest.approx(m.e, abs=1e-10)


def test_solve_triple_structure_checks():
    meas = measure(params(0.1, 0.1))
    with pytest.raises(ParameterError):
        solve_triple(meas[:2])
    with pytest.raises(ParameterError):
        solve_triple([meas[0], meas[0], meas[1]])


def test_solve_triple_reports_failure():
    sol = solve_triple(NO_SOLUTION[:3], seed=1)
    assert not sol.converged
    assert sol.residual >= 1e-10 and "no solution" in sol.message
    assert sol.restarts <= 20


def test_consistency_exact_data():
    p = params(0.12, -0.2, (0.1, -0.3), (0.25, -0.05), (-0.5, 0.6, -0.4, -0.7))
    ct = consistency_table(measure(p))
    assert ct.discrepancy < 1e-6
    assert len(ct.rows()) == 4 and all(s.converged for s in ct.solutions)
    # each row leaves out one correlation
    assert [sum(math.isnan(v) for v in row) for row in ct.rows()] == [1, 1, 1, 1]


def test_consistency_singlet_r_zero_identical():
    ct = consistency_table(measure(params(0.0, 0.0)))
    rows = np.array([row[:6] for row in ct.rows()])
    assert np.all(rows == rows[0]) or np.max(np.abs(rows - rows[0])) < 1e-15
    assert ct.discrepancy < 1e-12


def test_consistency_single_moment_perturbation():
    p = params(0.12, -0.2, (0.1, -0.3), (0.25, -0.05), (-0.5, 0.6, -0.4, -0.7))
    q = params(0.12, -0.2, (0.2, -0.3), (0.25, -0.05), (-0.5, 0.6, -0.4, -0.7))
    meas = measure(p)
    meas[0] = Measured(CELLS[0], *forward_model(q, CELLS[0]))
    assert consistency_table(meas).discrepancy > 1e-2


def test_consistency_correlation_perturbation_is_absorbed():
    # a shifted correlation on one pair is just another valid correlation: the
    # nine-unknown model fits it exactly, so no inconsistency can show up
    p = params(0.12, -0.2, (0.1, -0.3), (0.25, -0.05), (-0.5, 0.6, -0.4, -0.7))
    q = params(0.12, -0.2, (0.1, -0.3), (0.25, -0.05), (-0.4, 0.6, -0.4, -0.7))
    meas = measure(p)
    meas[0] = Measured(CELLS[0], *forward_model(q, CELLS[0]))
    assert consistency_table(meas).discrepancy < 1e-6


def test_consistency_mixed_params_flagged():
    p = params(0.12, -0.2, (0.1, -0.3), (0.25, -0.05), (-0.5, 0.6, -0.4, -0.7))
    q = params(-0.15, 0.1, (0.1, -0.3), (0.25, -0.05), (-0.5, 0.6, -0.4, -0.7))
    meas = measure(p)[:2] + measure(q)[2:]
    assert consistency_table(meas).discrepancy > 1e-2


def test_consistency_insufficient():
    with pytest.raises(InsufficientSolutionsError) as exc:
        consistency_table(NO_SOLUTION)
    assert len(exc.value.solutions) == 4


def test_consistency_order_checked():
    meas = measure(params(0.1, 0.1))
    with pytest.raises(ParameterError):
        consistency_table([meas[1], meas[0], meas[2], meas[3]])


def test_consistency_exports(tmp_path):
    ct = consistency_table(measure(params(0.1, -0.1, (0.2, 0.1), (0.0, 0.3))))
    ct.to_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0].startswith("r1,r2,E1_a") and len(lines) == 5 and "--" in lines[1]
    doc = ct.to_dict()
    assert doc["discrepancy"] == ct.discrepancy and len(doc["rows"]) == 4


def test_sign_flip_maps_to_flipped_singles():
    # flipping (r1, r2, E1hat, E2hat) with Ehat fixed flips the measured singles
    # and keeps E, so distinct measured data map to the two parameter sets
    p = params(0.2, -0.1, (0.3, 0.1), (-0.2, 0.4))
    f = params(-0.2, 0.1, (-0.3, -0.1), (0.2, -0.4))
    for form in ("counts", "swapped"):
        for c in CELLS:
            e1, e2, e = forward_model(p, c, form)
            g1, g2, g = forward_model(f, c, form)
            assert (g1, g2, g) == pytest.approx((-e1, -e2, e), abs=1e-15)
            assert abs(e1) > 1e-3 and g1 != pytest.approx(e1)


def test_find_roots_contains_truth():
    rng = np.random.default_rng(7)
    for _ in range(10):
        p = random_params(rng)
        roots = find_roots(measure(p)[:3], CELLS[3], LABELS)
        assert roots
        assert any(abs(r.params.r1 - p.r1) < 1e-6 and abs(r.params.r2 - p.r2) < 1e-6 for r in roots)
