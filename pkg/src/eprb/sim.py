"""Event-by-event generation of synthetic two-station datasets.

A Poisson source emits pairs; each station picks a setting, produces an
outcome and a detection time, adds Gaussian tag jitter and may lose the event.
Three outcome models are provided:

* ``Singlet``: quantum singlet moments, E1 = E2 = 0, E(a,b) = -cos 2(a-b).
* ``Product``: uncorrelated Malus-law photons polarized along p1 and p2.
* ``LocalTimeTag``: a local hidden-variable model in which each photon carries
  a polarization theta and the detection delay depends on theta and the local
  setting, so the correlations seen depend on the coincidence window.

Random numbers come from counter-based Philox generators, one per stream:
stream 0 drives the source, streams 1 and 2 drive the stations.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import Dataset, StationStream
from .errors import ConfigError, InvalidMomentError

SETTINGS_MODES = ("switched", "fixed")
SIGN_RULES = ("deterministic", "malus")
CHSH_ANGLES1 = (0.0, math.pi / 4)
CHSH_ANGLES2 = (math.pi / 8, 3 * math.pi / 8)


@dataclass(frozen=True)
class Singlet:
    kind: str = field(default="singlet", init=False)

    def moments(self, a, b):
        a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
        zero = np.zeros(a.shape)
        return zero, zero, -np.cos(2 * (a - b))


@dataclass(frozen=True)
class Product:
    """Independent photons with polarizations p1, p2 (radians)."""

    p1: float = 0.0
    p2: float = 0.0
    kind: str = field(default="product", init=False)

    def moments(self, a, b):
        m1 = np.cos(2 * (np.asarray(a, dtype=float) - self.p1))
        m2 = np.cos(2 * (np.asarray(b, dtype=float) - self.p2))
        return m1, m2, m1 * m2


@dataclass(frozen=True)
class LocalTimeTag:
    """Local model: delay uniform in [0, t0_ps * |sin 2(theta - setting)|**d]."""

    t0_ps: float = 1000.0
    d: float = 2.0
    sign_rule: str = "deterministic"
    kind: str = field(default="local_timetag", init=False)


MODELS = {"singlet": Singlet, "product": Product, "local_timetag": LocalTimeTag}


@dataclass(frozen=True)
class Efficiency:
    """Per-station detector efficiencies (eta(+1), eta(-1)) and per-setting kappa."""

    eta1: tuple[float, float] = (1.0, 1.0)
    eta2: tuple[float, float] = (1.0, 1.0)
    kappa1: tuple[float, ...] | None = None  # one entry per station-1 angle
    kappa2: tuple[float, ...] | None = None


@dataclass(frozen=True)
class SimConfig:
    n_pairs: int = 100_000
    mean_interval_ps: float = 30e6
    jitter_ps: float = 1000.0
    settings_mode: str = "switched"
    angles1: tuple[float, ...] = CHSH_ANGLES1
    angles2: tuple[float, ...] = CHSH_ANGLES2
    outcome_model: Singlet | Product | LocalTimeTag = field(default_factory=Singlet)
    efficiency: Efficiency | None = None
    single_detector: bool = False  # keep only +1 detections (one detector per station)
    seed: int = 0

    def validate(self):
        if not isinstance(self.n_pairs, (int, np.integer)) or self.n_pairs < 1:
            raise ConfigError(f"n_pairs must be an integer >= 1, got {self.n_pairs!r}")
        if not self.mean_interval_ps > 0:
            raise ConfigError("mean_interval_ps must be positive")
        if not self.jitter_ps >= 0:
            raise ConfigError("jitter_ps must be >= 0")
        if self.settings_mode not in SETTINGS_MODES:
            raise ConfigError(f"settings_mode must be one of {SETTINGS_MODES}")
        for name, angles in (("angles1", self.angles1), ("angles2", self.angles2)):
            if not angles:
                raise ConfigError(f"{name} is empty")
            if any(not 0 <= a < 2 * math.pi for a in angles):
                raise ConfigError(f"{name} must lie in [0, 2*pi)")
            if self.settings_mode == "fixed" and len(angles) != 1:
                raise ConfigError(f"fixed settings take exactly one angle per station ({name})")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        m = self.outcome_model
        if isinstance(m, LocalTimeTag):
            if not m.t0_ps > 0:
                raise ConfigError("t0_ps must be positive")
            if not m.d >= 1:
                raise ConfigError("delay exponent d must be >= 1")
            if m.sign_rule not in SIGN_RULES:
                raise ConfigError(f"sign_rule must be one of {SIGN_RULES}")
        elif isinstance(m, (Singlet, Product)):
            a, b = np.meshgrid(self.angles1, self.angles2, indexing="ij")
            try:
                _probabilities(*m.moments(a, b))
            except InvalidMomentError as exc:
                raise ConfigError(str(exc)) from None
        else:
            raise ConfigError(f"unknown outcome model {m!r}")
        eff = self.efficiency
        if eff is not None:
            vals = list(eff.eta1) + list(eff.eta2)
            for name, kap, angles in (("kappa1", eff.kappa1, self.angles1), ("kappa2", eff.kappa2, self.angles2)):
                if kap is not None:
                    if len(kap) != len(angles):
                        raise ConfigError(f"{name} needs one value per angle")
                    vals += list(kap)
            if len(eff.eta1) != 2 or len(eff.eta2) != 2:
                raise ConfigError("eta1 and eta2 are (eta(+1), eta(-1)) pairs")
            if any(not 0 < v <= 1 for v in vals):
                raise ConfigError("efficiencies must lie in (0, 1]")
        return self

    def to_dict(self):
        doc = asdict(self)
        doc["outcome_model"] = asdict(self.outcome_model)
        return doc

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        m = dict(doc.pop("outcome_model", {"kind": "singlet"}))
        kind = m.pop("kind", "singlet")
        if kind not in MODELS:
            raise ConfigError(f"unknown outcome model {kind!r}")
        eff = doc.pop("efficiency", None)
        try:
            if eff is not None:
                eff = Efficiency(**{k: tuple(v) if isinstance(v, list) else v for k, v in eff.items()})
            for k in ("angles1", "angles2"):
                if k in doc:
                    doc[k] = tuple(doc[k])
            return cls(outcome_model=MODELS[kind](**m), efficiency=eff, **doc)
        except TypeError as exc:
            raise ConfigError(f"bad simulation config: {exc}") from None

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def _probabilities(m1, m2, m12):
    probs = np.stack([(1 + x * m1 + y * m2 + x * y * m12) / 4 for x, y in ((1, 1), (1, -1), (-1, 1), (-1, -1))])
    if np.any(probs < -1e-12):
        raise InvalidMomentError("outcome moments give a negative pair probability")
    return np.clip(probs, 0.0, 1.0)


def _generator(seed, stream):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), stream])))


def _draw(probs, rng):
    # probs: (4, ...) over outcomes ++, +-, -+, --
    u = rng.random(probs.shape[1:])
    c0 = probs[0]
    c1 = c0 + probs[1]
    c2 = c1 + probs[2]
    k = (u >= c0).astype(np.int8) + (u >= c1) + (u >= c2)
    x = np.where(k < 2, 1, -1).astype(np.int8)
    y = np.where(k % 2 == 0, 1, -1).astype(np.int8)
    return x, y


def sample_pair_quantum(a, b, model, rng):
    """Draw outcomes (x, y) from P(xy|ab) = (1 + x E1 + y E2 + xy E) / 4.

    ``a`` and ``b`` may be scalars or arrays of angles (radians).
    """
    x, y = _draw(_probabilities(*model.moments(a, b)), rng)
    if x.ndim == 0:
        return int(x), int(y)
    return x, y


def local_timetag_event(theta, setting, params: LocalTimeTag, rng):
    """Outcome and detection delay (ps) of one photon with polarization ``theta``."""
    theta = np.asarray(theta, dtype=float)
    phi = theta - setting
    if params.sign_rule == "deterministic":
        x = np.where(np.cos(2 * phi) >= 0, 1, -1)
    else:
        x = np.where(rng.random(phi.shape) < np.cos(phi) ** 2, 1, -1)
    delay = rng.random(phi.shape) * params.t0_ps * np.abs(np.sin(2 * phi)) ** params.d
    x = x.astype(np.int8)
    if x.ndim == 0:
        return int(x), float(delay)
    return x, delay


def _station(cfg, k, rng, n, emit, setting, outcome, delay):
    angles = cfg.angles1 if k == 1 else cfg.angles2
    t = emit + delay
    if cfg.jitter_ps:
        t = t + rng.normal(0.0, cfg.jitter_ps, n)
    keep = np.ones(n, dtype=bool)
    eff = cfg.efficiency
    if eff is not None:
        eta = eff.eta1 if k == 1 else eff.eta2
        kappa = eff.kappa1 if k == 1 else eff.kappa2
        p = np.where(outcome > 0, eta[0], eta[1])
        if kappa is not None:
            p = p * np.asarray(kappa)[setting]
        keep &= rng.random(n) < p
    if cfg.single_detector:
        keep &= outcome > 0
    t = np.rint(t[keep]).astype(np.int64)
    setting, outcome = setting[keep], outcome[keep]
    order = np.argsort(t, kind="stable")
    return StationStream(k, angles, t[order], setting[order], outcome[order])


def simulate(cfg: SimConfig) -> Dataset:
    """Generate a canonical dataset; identical configs give identical data."""
    cfg.validate()
    n = int(cfg.n_pairs)
    src = _generator(cfg.seed, 0)
    rng1 = _generator(cfg.seed, 1)
    rng2 = _generator(cfg.seed, 2)
    emit = np.cumsum(src.exponential(cfg.mean_interval_ps, n))
    s1 = rng1.integers(0, len(cfg.angles1), n).astype(np.int16)
    s2 = rng2.integers(0, len(cfg.angles2), n).astype(np.int16)
    a = np.asarray(cfg.angles1)[s1]
    b = np.asarray(cfg.angles2)[s2]
    m = cfg.outcome_model
    if isinstance(m, LocalTimeTag):
        theta = src.uniform(0.0, 2 * math.pi, n)
        x, d1 = local_timetag_event(theta, a, m, rng1)
        y, d2 = local_timetag_event(theta + math.pi / 2, b, m, rng2)
    else:
        # outcome probabilities per setting combination, then per event
        ga, gb = np.meshgrid(cfg.angles1, cfg.angles2, indexing="ij")
        probs = _probabilities(*m.moments(ga, gb))
        x, y = _draw(probs[:, s1, s2], rng=src)
        d1 = d2 = np.zeros(n)
    st1 = _station(cfg, 1, rng1, n, emit, s1, x, d1)
    st2 = _station(cfg, 2, rng2, n, emit, s2, y, d2)
    if cfg.settings_mode == "switched":
        style = "switched"
    elif cfg.single_detector:
        style = "fixed-run"
    else:
        style = "swept"
    meta = {"provenance": {"generator": "eprb.sim", "config": cfg.to_dict()}}
    return Dataset(st1, st2, style=style, meta=meta)
