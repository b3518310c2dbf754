"""Alternating-gradient and gradient-descent-ascent training loops."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng as streams
from .exceptions import ConfigError, LeftStabilizingSet, Unstable
from .gradient import exact_gradient
from .model import ModelParams, PolicyProfile, check_policy, check_stability
from .rng import Stream
from .simulator import SimSpec, estimate_gradient_player

METHODS = ("ag", "gda")
MODES = ("exact", "sampled")


@dataclass(frozen=True)
class TrainSpec:
    method: str = "gda"
    mode: str = "exact"
    eta1: float = 0.1
    eta2: float = 0.1
    n1max: int = 10
    n2max: int = 200
    iters: int = 2000
    theta0: PolicyProfile | None = None
    estimator: SimSpec = field(default_factory=SimSpec)
    log_every: int = 1
    crn: bool = False
    baseline: bool = False
    n_jobs: int | None = None
    replication: int = 0

    def __post_init__(self):
        object.__setattr__(self, "method", str(self.method).lower())
        object.__setattr__(self, "mode", str(self.mode).lower())
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        for name in ("eta1", "eta2"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("n1max", "n2max", "iters", "log_every"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ConfigError(f"{name} must be a positive integer")
            object.__setattr__(self, name, int(v))

    @property
    def total_iterations(self) -> int:
        return self.n1max * self.n2max if self.method == "ag" else self.iters


@dataclass(frozen=True)
class IterateRecord:
    iter: int
    theta: PolicyProfile
    cost: float
    rel_error: float | None
    grad_norm: float
    in_Theta: bool


@dataclass
class IterateLog:
    records: list = field(default_factory=list)
    reference: float | None = None

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def append(self, rec: IterateRecord):
        if self.records and rec.iter <= self.records[-1].iter:
            raise ValueError("iteration counter must increase")
        self.records.append(rec)

    @property
    def final(self) -> IterateRecord:
        return self.records[-1]

    def params(self) -> np.ndarray:
        return np.array([r.theta.as_vector() for r in self.records])

    def column(self, name) -> np.ndarray:
        return np.array([np.nan if getattr(r, name) is None else getattr(r, name)
                         for r in self.records], dtype=float)


# ------------------------------------------------------ gradient sources

class ExactGradient:
    """Model-based gradients."""

    def __call__(self, theta, m, iteration, player):
        try:
            return exact_gradient(theta, m).player(player)
        except Unstable as exc:
            raise LeftStabilizingSet(str(exc), iteration=iteration) from exc

    def both(self, theta, m, iteration):
        try:
            g = exact_gradient(theta, m)
        except Unstable as exc:
            raise LeftStabilizingSet(str(exc), iteration=iteration) from exc
        return g.player(1), g.player(2)


class SampledGradient:
    """Sphere-smoothing estimates; each (iteration, player) owns a substream."""

    def __init__(self, spec: SimSpec, *, crn=False, baseline=False, n_jobs=None, replication=0):
        self.spec = spec
        self.crn = crn
        self.baseline = baseline
        self.n_jobs = n_jobs
        self.root = Stream(spec.seed).child(streams.TRAIN, replication)

    def __call__(self, theta, m, iteration, player):
        est = estimate_gradient_player(theta, player, m, self.spec, self.root.child(iteration, player),
                                       crn=self.crn, baseline=self.baseline, n_jobs=self.n_jobs)
        return est.dK, est.dL

    def both(self, theta, m, iteration):
        return self(theta, m, iteration, 1), self(theta, m, iteration, 2)


def make_source(spec: TrainSpec):
    if spec.mode == "exact":
        return ExactGradient()
    return SampledGradient(spec.estimator, crn=spec.crn, baseline=spec.baseline,
                           n_jobs=spec.n_jobs, replication=spec.replication)


# ----------------------------------------------------------------- loops

def record_iterate(k, theta, m, reference):
    in_theta = check_stability(theta, m).in_theta
    if in_theta:
        g = exact_gradient(theta, m)
        cost, gnorm = g.cost, g.norm()
    else:
        cost, gnorm = float("nan"), float("nan")
    rel = None
    if reference is not None:
        rel = abs(cost - reference) / abs(reference) if reference != 0 else abs(cost)
    return IterateRecord(k, theta, cost, rel, gnorm, in_theta)


def _start(m, spec):
    theta = spec.theta0 if spec.theta0 is not None else PolicyProfile.zeros(m.ell, m.d)
    theta = check_policy(theta, m)
    if spec.mode == "exact" and not check_stability(theta, m).in_theta:
        raise LeftStabilizingSet("initial profile is outside the stabilizing set", iteration=0)
    return theta


def _guard(k, theta, m, spec, log, reference, total):
    """Log the iterate when due and abort exact runs that leave the stabilizing set."""
    due = k % spec.log_every == 0 or k == total
    rec = None
    if due or spec.mode == "exact":
        rec = record_iterate(k, theta, m, reference)
    if rec is not None and spec.mode == "exact" and not rec.in_Theta:
        log.append(rec)
        raise LeftStabilizingSet(f"iterate {k} left the stabilizing set", log=log, iteration=k)
    if rec is not None and np.isnan(rec.cost) and spec.mode == "exact":
        raise LeftStabilizingSet(f"cost became non-finite at iterate {k}", log=log, iteration=k)
    if due:
        log.append(rec)


def _step(theta, player, grad, eta):
    K, L = theta.player(player)
    dK, dL = grad
    sign = -1.0 if player == 1 else 1.0
    return theta.with_player(player, K + sign * eta * dK, L + sign * eta * dL)


def train_gda(m: ModelParams, spec: TrainSpec, gradient_source=None, *,
              reference: float | None = None) -> IterateLog:
    """Simultaneous descent for player 1 and ascent for player 2."""
    source = gradient_source or make_source(spec)
    theta = _start(m, spec)
    log = IterateLog(reference=reference)
    for k in range(1, spec.iters + 1):
        g1, g2 = source.both(theta, m, k)
        theta = _step(_step(theta, 1, g1, spec.eta1), 2, g2, spec.eta2)
        _guard(k, theta, m, spec, log, reference, spec.iters)
    return log


def train_ag(m: ModelParams, spec: TrainSpec, gradient_source=None, *,
             reference: float | None = None) -> IterateLog:
    """n1max descent steps for player 1 between consecutive ascent steps for player 2.

    Global iteration k counts inner steps; player 2 moves at every multiple
    of n1max, with its gradient taken at the updated player-1 gains.  Player 1
    warm-starts each inner loop from where the previous one stopped.
    """
    source = gradient_source or make_source(spec)
    theta = _start(m, spec)
    log = IterateLog(reference=reference)
    total = spec.n1max * spec.n2max
    k = 0
    for _ in range(spec.n2max):
        for n1 in range(1, spec.n1max + 1):
            k += 1
            theta = _step(theta, 1, source(theta, m, k, 1), spec.eta1)
            if n1 < spec.n1max:
                _guard(k, theta, m, spec, log, reference, total)
        theta = _step(theta, 2, source(theta, m, k, 2), spec.eta2)
        _guard(k, theta, m, spec, log, reference, total)
    return log


def train(m: ModelParams, spec: TrainSpec, gradient_source=None, *, reference=None) -> IterateLog:
    fn = train_ag if spec.method == "ag" else train_gda
    return fn(m, spec, gradient_source, reference=reference)
