"""Detector-efficiency model and the consistency analysis built on it.

Detector asymmetry at station i is parameterized by
r_i = (eta_i(+1) - eta_i(-1)) / (eta_i(+1) + eta_i(-1)).  Given r1, r2 and the
setting-independent moments (single-station moments per angle, correlation per
angle pair), :func:`forward_model` gives the coincidence-conditioned E1, E2, E.
Three setting pairs give nine equations in nine unknowns; :func:`solve_triple`
solves them and :func:`consistency_table` compares the four ways of leaving
one pair out.

Two forms of the denominator are available.  ``form="counts"`` (default) is
what the count model C_xy ~ eta_1(x) eta_2(y) P(xy|ab) gives when expanded,
D = 1 + r1*E1hat + r2*E2hat + r1*r2*Ehat.  ``form="swapped"`` uses
D = 1 + r2*E1hat + r1*E2hat + r1*r2*Ehat, an alternative convention;
the two agree whenever the single-station moments vanish.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .coincidence import CountsTable
from .errors import InsufficientSolutionsError, InvalidMomentError, ParameterError, SingularModelError

TOL = 1e-10
MAX_ITER = 200
MAX_RESTARTS = 20
FD_STEP = 1e-7
ROOT_SEARCH_TOL = 1e-6
FORMS = ("counts", "swapped")
SHARED = ("r1", "r2", "E1_a", "E1_ap", "E2_b", "E2_bp")
TABLE_COLUMNS = SHARED + ("E_ab", "E_abp", "E_apb", "E_apbp")


@dataclass(frozen=True)
class EffParams:
    """Efficiency asymmetries plus setting-independent moments.

    ``ehat1``/``ehat2`` map a station's setting label to its single-station
    moment; ``ehat`` maps (label1, label2) to the correlation.  Labels are any
    hashable (angles, or names such as "a", "a'").  The optional fields are
    only needed by :func:`forward_counts`.
    """

    r1: float
    r2: float
    ehat1: dict
    ehat2: dict
    ehat: dict
    kappa1: dict | None = None
    kappa2: dict | None = None
    eta1: tuple[float, float] | None = None  # (eta(+1), eta(-1))
    eta2: tuple[float, float] | None = None
    n_pairs: int | None = None

    @classmethod
    def from_efficiencies(cls, eta1, eta2, ehat1, ehat2, ehat, **kw):
        return cls(relative_efficiency(*eta1), relative_efficiency(*eta2), ehat1, ehat2, ehat,
                   eta1=tuple(eta1), eta2=tuple(eta2), **kw)


def relative_efficiency(eta_plus, eta_minus):
    return (eta_plus - eta_minus) / (eta_plus + eta_minus)


class Measured(NamedTuple):
    pair: tuple
    e1: float
    e2: float
    e: float


def _dcoef(r1, r2, form):
    # coefficients of E1hat and E2hat in the denominator
    if form == "counts":
        return r1, r2
    if form == "swapped":
        return r2, r1
    raise ParameterError(f"unknown form {form!r}; expected one of {FORMS}")


def _forward(r1, r2, m1, m2, m12, form="counts"):
    c1, c2 = _dcoef(r1, r2, form)
    d = 1 + c1 * m1 + c2 * m2 + r1 * r2 * m12
    return (
        (r1 + m1 + r1 * r2 * m2 + r2 * m12) / d,
        (r2 + r1 * r2 * m1 + m2 + r1 * m12) / d,
        (r1 * r2 + r2 * m1 + r1 * m2 + m12) / d,
        d,
    )


def forward_model(p: EffParams, pair, form="counts"):
    """(E1, E2, E) seen in coincidence for setting pair ``pair``."""
    a, b = pair
    m1, m2, m12 = p.ehat1[a], p.ehat2[b], p.ehat[a, b]
    c1, c2 = _dcoef(p.r1, p.r2, form)
    d = 1 + c1 * m1 + c2 * m2 + p.r1 * p.r2 * m12
    if not d > 0:
        raise SingularModelError(f"denominator {d!r} <= 0 at pair {pair!r}")
    return _forward(p.r1, p.r2, m1, m2, m12, form)[:3]


def pair_probabilities(m1, m2, m12):
    """P(x, y) for (x, y) in (++, +-, -+, --)."""
    return tuple((1 + x * m1 + y * m2 + x * y * m12) / 4 for x, y in ((1, 1), (1, -1), (-1, 1), (-1, -1)))


def forward_counts(p: EffParams, pair, rng=None):
    """Expected coincidence counts for ``pair``; integer multinomial draws if ``rng`` is given.

    ``rng`` may be a numpy Generator or an integer seed.
    """
    if p.eta1 is None or p.eta2 is None or p.n_pairs is None:
        raise ParameterError("forward_counts needs eta1, eta2 and n_pairs")
    a, b = pair
    probs = pair_probabilities(p.ehat1[a], p.ehat2[b], p.ehat[a, b])
    if min(probs) < 0:
        raise InvalidMomentError(
            f"moments at {pair!r} give a negative outcome probability {min(probs):.4g}"
        )
    k1 = p.kappa1[a] if p.kappa1 else 1.0
    k2 = p.kappa2[b] if p.kappa2 else 1.0
    weights = []
    for (x, y), pr in zip(((1, 1), (1, -1), (-1, 1), (-1, -1)), probs):
        eta_x = p.eta1[0] if x > 0 else p.eta1[1]
        eta_y = p.eta2[0] if y > 0 else p.eta2[1]
        weights.append(k1 * k2 * eta_x * eta_y * pr)
    if rng is None:
        return CountsTable(*(p.n_pairs * w for w in weights), a=_num(a), b=_num(b))
    rng = np.random.default_rng(rng)
    draw = rng.multinomial(p.n_pairs, weights + [max(0.0, 1.0 - sum(weights))])
    return CountsTable(*(int(v) for v in draw[:4]), a=_num(a), b=_num(b))


def _num(label):
    return float(label) if isinstance(label, (int, float)) else float("nan")


@dataclass(frozen=True)
class EffSolution:
    params: EffParams
    excluded_pair: tuple | None
    residual: float
    converged: bool
    iterations: int = 0
    restarts: int = 0
    message: str = ""
    labels: tuple = field(default=(), repr=False)  # (a, a', b, b')

    def vector(self):
        """Values in TABLE_COLUMNS order; NaN for the excluded correlation."""
        a, ap, b, bp = self.labels
        p = self.params
        vals = [p.r1, p.r2, p.ehat1[a], p.ehat1[ap], p.ehat2[b], p.ehat2[bp]]
        for pair in ((a, b), (a, bp), (ap, b), (ap, bp)):
            vals.append(p.ehat.get(pair, math.nan))
        return vals

    @property
    def physical(self) -> bool:
        """All parameters inside [-1, 1]."""
        return all(abs(v) <= 1 for v in self.vector() if not math.isnan(v))


def _structure(pairs):
    firsts, seconds = [], []
    for a, b in pairs:
        if a not in firsts:
            firsts.append(a)
        if b not in seconds:
            seconds.append(b)
    return firsts, seconds


class _Triple:
    """Residuals of the nine equations, evaluated for a batch of unknown vectors.

    Unknown layout: r1, r2, ehat1[a], ehat1[a'], ehat2[b], ehat2[b'], then the
    correlation of each measured pair in input order.
    """

    def __init__(self, measured, form="counts"):
        _dcoef(0.0, 0.0, form)
        self.form = form
        self.measured = measured
        self.pairs = [m.pair for m in measured]
        self.firsts, self.seconds = _structure(self.pairs)
        self.idx1 = np.array([2 + self.firsts.index(p[0]) for p in self.pairs])
        self.idx2 = np.array([4 + self.seconds.index(p[1]) for p in self.pairs])
        self.target = np.array([[m.e1, m.e2, m.e] for m in measured])

    def __call__(self, x):
        x = np.atleast_2d(x)
        r1, r2 = x[:, :1], x[:, 1:2]
        m1, m2, m12 = x[:, self.idx1], x[:, self.idx2], x[:, 6:9]
        with np.errstate(divide="ignore", invalid="ignore"):
            e1, e2, e, d = _forward(r1, r2, m1, m2, m12, self.form)
            out = np.stack([e1, e2, e], axis=2) - self.target
        out[~(d > 0)] = np.nan
        return out.reshape(len(x), 9)

    def undo(self, r1, r2):
        """Per-pair moments implied by trial efficiencies (broadcasts over r1, r2).

        With r1, r2 fixed the three equations of a pair are linear in its
        moments.  Returns an array (..., 3 pairs, 3 moments) holding
        E1hat, E2hat, Ehat; NaN where the system is singular.
        """
        r1, r2 = np.broadcast_arrays(np.asarray(r1, dtype=float), np.asarray(r2, dtype=float))
        r1, r2 = r1[..., None], r2[..., None]
        c1, c2 = _dcoef(r1, r2, self.form)
        q = r1 * r2
        e1, e2, e = self.target.T
        # rows: E1*D = num1, E2*D = num2, E*D = num12, unknowns (E1hat, E2hat, Ehat)
        mat = np.stack([
            np.stack([1 - e1 * c1, q - e1 * c2, r2 - e1 * q], -1),
            np.stack([q - e2 * c1, 1 - e2 * c2, r1 - e2 * q], -1),
            np.stack([r2 - e * c1, r1 - e * c2, 1 - e * q], -1),
        ], -2)
        rhs = np.stack([e1 - r1, e2 - r2, e - q], -1)
        out = np.full(rhs.shape, np.nan)
        ok = np.abs(np.linalg.det(mat)) > 1e-14
        out[ok] = np.linalg.solve(mat[ok], rhs[ok][..., None])[..., 0]
        return out

    def start(self, r1=0.0, r2=0.0):
        """Unknown vector at trial r1, r2 with shared moments averaged over pairs."""
        m = self.undo(r1, r2)
        x0 = [r1, r2]
        x0 += [m[[k for k, p in enumerate(self.pairs) if p[0] == a], 0].mean() for a in self.firsts]
        x0 += [m[[k for k, p in enumerate(self.pairs) if p[1] == b], 1].mean() for b in self.seconds]
        x0 += list(m[:, 2])
        return np.array(x0, dtype=float)

    def mismatch(self, r1, r2):
        """The two consistency conditions left once r1, r2 are fixed.

        A station-1 setting shared by two pairs must give one E1, and likewise
        for station 2; both differences vanish exactly at a root.
        """
        m = self.undo(r1, r2)
        out = []
        for col, names, pos in ((0, self.firsts, 0), (1, self.seconds, 1)):
            for lab in names:
                ks = [k for k, p in enumerate(self.pairs) if p[pos] == lab]
                if len(ks) == 2:
                    out.append(m[..., ks[0], col] - m[..., ks[1], col])
        return out


def _newton(x0, residual):
    """Damped Newton from ``x0``; returns (x, max residual, iterations, singular steps).

    The Jacobian is central-differenced.  Once below TOL a few extra steps
    are taken while they still shrink the residual.
    """
    n = len(x0)
    x = np.array(x0, dtype=float)
    f = residual(x)[0]
    if not np.all(np.isfinite(f)):
        return x, math.inf, 0, 0
    eye = np.eye(n) * FD_STEP
    singular = 0
    polish = 0
    it = 0
    for it in range(1, MAX_ITER + 1):
        if np.max(np.abs(f)) < TOL:
            polish += 1
            if polish > 3:
                break
        fb = residual(np.vstack([x + eye, x - eye]))
        if not np.all(np.isfinite(fb)):
            break
        jac = ((fb[:n] - fb[n:]) / (2 * FD_STEP)).T
        try:
            if np.linalg.cond(jac) > 1e12:
                raise np.linalg.LinAlgError
            step = np.linalg.solve(jac, -f)
        except np.linalg.LinAlgError:
            singular += 1
            # Levenberg-style damping of a (near-)singular Newton system
            lam = 1e-6 * max(1.0, float(np.max(np.abs(jac))))
            step = np.linalg.solve(jac.T @ jac + lam * np.eye(n), -jac.T @ f)
        norm0 = np.linalg.norm(f)
        ts = 0.5 ** np.arange(21)
        trial = residual(x + ts[:, None] * step)
        norms = np.linalg.norm(trial, axis=1)
        ok = np.flatnonzero(np.isfinite(norms) & (norms < norm0))
        if not ok.size:
            break
        k = ok[0]
        x, f = x + ts[k] * step, trial[k]
    return x, float(np.max(np.abs(f))), it, singular


def _solution(triple, x, res, it, attempt, msg, excluded_pair, labels):
    params = EffParams(
        float(x[0]), float(x[1]),
        {a: float(x[2 + k]) for k, a in enumerate(triple.firsts)},
        {b: float(x[4 + k]) for k, b in enumerate(triple.seconds)},
        {p: float(x[6 + k]) for k, p in enumerate(triple.pairs)},
    )
    if labels is None:
        labels = (triple.firsts[0], triple.firsts[1], triple.seconds[0], triple.seconds[1])
    return EffSolution(params, excluded_pair, res, res < TOL, it, attempt, msg, labels)


def _triple(measured, form="counts"):
    measured = [Measured(*m) for m in measured]
    if len(measured) != 3:
        raise ParameterError("solve_triple needs exactly three measured pairs")
    pairs = [m.pair for m in measured]
    firsts, seconds = _structure(pairs)
    if len(firsts) != 2 or len(seconds) != 2 or len(set(pairs)) != 3:
        raise ParameterError("the three pairs must be three distinct cells of a 2x2 setting grid")
    return _Triple(measured, form)


def solve_triple(measured, excluded_pair=None, seed=0, labels=None, form="counts") -> EffSolution:
    """Solve for r1, r2 and the moments from three measured setting pairs.

    Newton starts from r1 = r2 = 0 with the moments set to the measured
    values and stops once every residual is below 1e-10; on failure it
    restarts from seeded random perturbations of that start.  ``labels``
    fixes which setting is a, a', b, b' in :meth:`EffSolution.vector`
    (default: order of first appearance).
    """
    triple = _triple(measured, form)
    x0 = [0.0, 0.0]
    x0 += [np.mean([m.e1 for m in triple.measured if m.pair[0] == a]) for a in triple.firsts]
    x0 += [np.mean([m.e2 for m in triple.measured if m.pair[1] == b]) for b in triple.seconds]
    x0 += [m.e for m in triple.measured]
    x0 = np.array(x0)
    rng = np.random.default_rng(seed)
    best = None
    singular = 0
    for attempt in range(MAX_RESTARTS + 1):
        start = x0 if attempt == 0 else x0 + rng.uniform(-0.5, 0.5, len(x0))
        x, res, it, sing = _newton(start, triple)
        singular += sing
        if best is None or res < best[1]:
            best = (x, res, it, attempt)
        if res < TOL:
            break
    x, res, it, attempt = best
    msg = ""
    if res >= TOL:
        msg = "no solution found after restarts"
        if singular:
            msg += f"; jacobian singular on {singular} iterations"
    return _solution(triple, x, res, it, attempt, msg, excluded_pair, labels)


def find_roots(measured, excluded_pair=None, labels=None, grid=121, form="counts"):
    """Every distinct solution with -1 < r1, r2 < 1.

    Three setting pairs do not always pin the unknowns down: different
    parameter sets can reproduce the same nine measured values.  With r1, r2
    fixed the moments follow exactly, leaving two scalar conditions.  For the
    counts form these are polynomials of degree two in each of r1 and r2, and
    their common roots come from the resultant in r2.  The swapped form falls
    back to sign changes on a (grid x grid) lattice.  Candidates are polished
    by Newton on the full nine-equation system.
    """
    triple = _triple(measured, form)
    if form == "counts":
        starts = _algebraic_starts(triple)
    else:
        starts = _lattice_starts(triple, grid)
    roots = []
    for r in [np.array([0.0, 0.0])] + starts:
        x, res, it, _ = _newton(triple.start(*r), triple)
        if res < TOL and not any(np.max(np.abs(x - y.x)) < 1e-6 for y in roots):
            roots.append(_Root(x, res, it))
    return [_solution(triple, r.x, r.res, r.it, 0, "", excluded_pair, labels) for r in roots]


def _bilinear(e1, e2, e):
    """Numerators and denominator of the moments implied by (r1, r2), counts form.

    Each is c[i, j] * r1**i * r2**j: the inverse of the forward map is the
    forward map at (-r1, -r2).
    """
    den = np.array([[1.0, -e2], [-e1, e]])
    n1 = np.array([[e1, -e], [-1.0, e2]])
    n2 = np.array([[e2, -1.0], [-e, e1]])
    return den, n1, n2


def _mul2(p, q):
    out = np.zeros((p.shape[0] + q.shape[0] - 1, p.shape[1] + q.shape[1] - 1))
    for i, j in np.ndindex(p.shape):
        out[i:i + q.shape[0], j:j + q.shape[1]] += p[i, j] * q
    return out


def _conditions(triple):
    """Cleared consistency conditions as 3x3 coefficient arrays in (r1, r2)."""
    polys = [_bilinear(*t) for t in triple.target]
    out = []
    for col, names, pos in ((1, triple.firsts, 0), (2, triple.seconds, 1)):
        for lab in names:
            ks = [n for n, p in enumerate(triple.pairs) if p[pos] == lab]
            if len(ks) != 2:
                continue
            k, l = ks
            out.append(_mul2(polys[k][col], polys[l][0]) - _mul2(polys[l][col], polys[k][0]))
    return out


def _algebraic_starts(triple):
    g1, g2 = _conditions(triple)
    scale = max(np.max(np.abs(g1)), np.max(np.abs(g2)), 1e-300)
    g1, g2 = g1 / scale, g2 / scale

    def coeffs(g, r2):
        # coefficients of r1**0, r1**1, r1**2 at this r2
        return g @ np.array([1.0, r2, r2 * r2])

    def resultant(r2):
        a, b = coeffs(g1, r2), coeffs(g2, r2)
        syl = np.array([
            [a[2], a[1], a[0], 0.0],
            [0.0, a[2], a[1], a[0]],
            [b[2], b[1], b[0], 0.0],
            [0.0, b[2], b[1], b[0]],
        ])
        return np.linalg.det(syl)

    nodes = np.cos(np.pi * (np.arange(33) + 0.5) / 33)
    vals = np.array([resultant(t) for t in nodes])
    if np.max(np.abs(vals)) < 1e-12:
        return []  # a continuum of solutions; nothing to enumerate
    cheb = np.polynomial.chebyshev.chebfit(nodes, vals, 8)
    starts = []
    for z in np.polynomial.chebyshev.chebroots(cheb):
        if abs(z.imag) > 1e-3 or not -1 < z.real < 1:
            continue
        r2 = z.real
        a, b = coeffs(g1, r2), coeffs(g2, r2)
        poly, other = (a, b) if np.max(np.abs(a)) >= np.max(np.abs(b)) else (b, a)
        for w in np.roots(poly[::-1]):
            if abs(w.imag) < 1e-3 and -1 < w.real < 1:
                starts.append(np.array([w.real, r2]))
    return starts


def _lattice_starts(triple, grid):
    axis = np.linspace(-0.995, 0.995, grid)
    starts = []
    for i, j in _straddling(triple, axis, axis):
        # two nearby roots can share a cell; look again on a finer lattice
        sub1 = np.linspace(axis[max(i - 1, 0)], axis[min(i + 2, grid - 1)], 13)
        sub2 = np.linspace(axis[max(j - 1, 0)], axis[min(j + 2, grid - 1)], 13)
        fine = _straddling(triple, sub1, sub2)
        starts += [np.array([(sub1[k] + sub1[k + 1]) / 2, (sub2[m] + sub2[m + 1]) / 2]) for k, m in fine]
    return starts


def _straddling(triple, ax1, ax2):
    """Lattice cells in which both consistency conditions change sign."""
    r1, r2 = np.meshgrid(ax1, ax2, indexing="ij")
    with np.errstate(divide="ignore", invalid="ignore"):
        g1, g2 = triple.mismatch(r1, r2)

    def straddles(g):
        corners = np.stack([g[:-1, :-1], g[1:, :-1], g[:-1, 1:], g[1:, 1:]])
        return (np.nanmax(corners, 0) >= 0) & (np.nanmin(corners, 0) <= 0)

    return np.argwhere(straddles(g1) & straddles(g2))


class _Root(NamedTuple):
    x: np.ndarray
    res: float
    it: int


@dataclass(frozen=True)
class ConsistencyTable:
    solutions: tuple[EffSolution, ...]
    discrepancy: float
    labels: tuple  # (a, a', b, b')
    root_search: bool = False
    roots_per_variant: tuple[int, ...] = ()

    def rows(self):
        return [sol.vector() for sol in self.solutions]

    def to_csv(self, path):
        with open(path, "w", newline="\n") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TABLE_COLUMNS)
            for row in self.rows():
                w.writerow(["--" if math.isnan(v) else f"{v:.6f}" for v in row])

    def to_dict(self):
        return {
            "columns": list(TABLE_COLUMNS),
            "rows": [[None if math.isnan(v) else v for v in row] for row in self.rows()],
            "excluded": [list(map(str, s.excluded_pair)) for s in self.solutions],
            "converged": [s.converged for s in self.solutions],
            "residual": [s.residual for s in self.solutions],
            "discrepancy": self.discrepancy,
            "root_search": self.root_search,
            "roots_per_variant": list(self.roots_per_variant),
        }


def _spread(sols):
    vecs = np.array([s.vector()[: len(SHARED)] for s in sols])
    return float(np.max(vecs.max(axis=0) - vecs.min(axis=0)))


def consistency_table(measured, seed=0, form="counts") -> ConsistencyTable:
    """Solve the four leave-one-pair-out systems and measure their disagreement.

    ``measured`` holds the four pairs (a,b), (a,b'), (a',b), (a',b'), in that
    order.  Rows leave out (a',b'), (a',b), (a,b'), (a,b) respectively.  The
    discrepancy is the largest spread (max - min) of any unknown shared by all
    variants, over the converged solutions.

    A single system can have more than one exact root, so when the plain
    Newton solutions disagree every root of every variant is enumerated and
    the most mutually consistent combination is reported instead.
    """
    measured = [Measured(*m) for m in measured]
    if len(measured) != 4:
        raise ParameterError("consistency_table needs all four setting pairs")
    (a, b), (a2, bp), (ap, b2), (ap2, bp2) = (m.pair for m in measured)
    if not (a == a2 and b == b2 and ap == ap2 and bp == bp2 and a != ap and b != bp):
        raise ParameterError("pairs must be ordered (a,b), (a,b'), (a',b), (a',b')")
    labels = (a, ap, b, bp)
    variants = []
    for drop in (3, 2, 1, 0):
        keep = [m for k, m in enumerate(measured) if k != drop]
        variants.append((keep, measured[drop].pair))
    sols = [solve_triple(keep, ex, seed=seed, labels=labels, form=form) for keep, ex in variants]
    good = [s for s in sols if s.converged]
    if len(good) < 2:
        err = InsufficientSolutionsError(f"only {len(good)} of 4 leave-one-out systems converged")
        err.solutions = sols
        raise err
    spread = _spread(good)
    if spread <= ROOT_SEARCH_TOL:
        return ConsistencyTable(tuple(sols), spread, labels, False, (1,) * 4)

    options = []
    for sol, (keep, ex) in zip(sols, variants):
        roots = find_roots(keep, ex, labels, form=form)
        if sol.converged and not any(
            np.nanmax(np.abs(np.subtract(sol.vector(), r.vector()))) < 1e-6 for r in roots
        ):
            roots.insert(0, sol)
        options.append(roots or [sol])
    best = None
    for combo in itertools.product(*options):
        conv = [s for s in combo if s.converged]
        if len(conv) < 2:
            continue
        d = _spread(conv)
        if best is None or (-len(conv), d) < (-len(best[0]), best[1]):
            best = ([s for s in combo if s.converged], d, combo)
    if best is None or best[1] >= spread:
        chosen, spread = sols, spread
    else:
        chosen, spread = list(best[2]), best[1]
    return ConsistencyTable(tuple(chosen), spread, labels, True, tuple(len(o) for o in options))


def measured_from_estimates(pairs, estimates):
    return [Measured(p, e.e1, e.e2, e.e) for p, e in zip(pairs, estimates)]
