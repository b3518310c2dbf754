"""Game coefficients, noise laws, feedback policies and the stabilizing set.

A game is described by :class:`ModelParams`.  Player 1 minimizes and player 2
maximizes the same discounted utility; a linear closed-loop profile is a
:class:`PolicyProfile` with player ``i`` playing

    u_i = (-1)^i K_i (x - xbar) + (-1)^i L_i xbar.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from functools import cached_property
from typing import Any, Mapping

import numpy as np

from .exceptions import (
    DimensionMismatch,
    GammaOutOfRange,
    NotPositiveDefinite,
    NotSymmetric,
)

SYM_TOL = 1e-12
EIG_TOL = 1e-10

MATRIX_KEYS = ("A", "Abar", "B1", "B1bar", "B2", "B2bar",
               "Q", "Qbar", "R1", "R1bar", "R2", "R2bar")
SYMMETRIC_KEYS = ("Q", "Qbar", "R1", "R1bar", "R2", "R2bar")


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def as_matrix(value, name="matrix") -> np.ndarray:
    """Coerce a scalar, list or array into a 2-d float array."""
    a = np.asarray(value, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(-1, 1)
    elif a.ndim != 2:
        raise DimensionMismatch(f"{name} must be at most 2-dimensional, got shape {a.shape}")
    return a


# --------------------------------------------------------------------- noise

DISTRIBUTION_KINDS = ("point", "uniform", "gaussian")


@dataclass(frozen=True)
class DistributionSpec:
    """A mean-zero law on R^d.

    ``point`` is the point mass at zero, ``uniform`` has i.i.d. coordinates
    U([-high_j, high_j]) and ``gaussian`` is N(0, cov).
    """

    kind: str = "point"
    high: np.ndarray | None = None
    cov: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in DISTRIBUTION_KINDS:
            raise DimensionMismatch(f"unknown distribution kind {self.kind!r}")
        if self.kind == "uniform":
            if self.high is None:
                raise DimensionMismatch("uniform distribution needs 'high'")
            high = np.atleast_1d(np.asarray(self.high, dtype=float)).ravel()
            if np.any(high < 0):
                raise DimensionMismatch("uniform 'high' must be non-negative")
            object.__setattr__(self, "high", _frozen(high))
        if self.kind == "gaussian":
            if self.cov is None:
                raise DimensionMismatch("gaussian distribution needs 'cov'")
            cov = as_matrix(self.cov, "cov")
            _check_psd(cov, "gaussian cov")
            object.__setattr__(self, "cov", _frozen(cov))

    @classmethod
    def point(cls):
        return cls("point")

    @classmethod
    def uniform(cls, high):
        return cls("uniform", high=high)

    @classmethod
    def gaussian(cls, cov):
        return cls("gaussian", cov=cov)

    def dim(self) -> int | None:
        if self.kind == "uniform":
            return self.high.size
        if self.kind == "gaussian":
            return self.cov.shape[0]
        return None

    def covariance(self, d: int) -> np.ndarray:
        if self.kind == "point":
            return np.zeros((d, d))
        if self.kind == "uniform":
            return np.diag(self.high ** 2 / 3.0)
        return np.array(self.cov)

    @cached_property
    def _cov_factor(self):
        w, v = np.linalg.eigh(self.cov)
        return v * np.sqrt(np.clip(w, 0.0, None))

    def sample(self, rng: np.random.Generator, shape, d: int) -> np.ndarray:
        """Draw an array of shape ``shape + (d,)``."""
        shape = tuple(np.atleast_1d(shape)) if not isinstance(shape, tuple) else shape
        if self.kind == "point":
            return np.zeros(shape + (d,))
        if self.kind == "uniform":
            u = rng.random(shape + (d,))
            return (2.0 * u - 1.0) * self.high
        g = rng.standard_normal(shape + (d,))
        if d == 1:
            return g * self._cov_factor[0, 0]
        return g @ self._cov_factor.T

    def to_dict(self) -> dict:
        if self.kind == "uniform":
            return {"kind": "uniform", "high": self.high.tolist()}
        if self.kind == "gaussian":
            return {"kind": "gaussian", "cov": self.cov.tolist()}
        return {"kind": "point"}

    @classmethod
    def from_dict(cls, doc) -> "DistributionSpec":
        if isinstance(doc, DistributionSpec):
            return doc
        if isinstance(doc, str):
            doc = {"kind": doc}
        doc = dict(doc)
        kind = doc.pop("kind", "point")
        if kind == "uniform" and "low" in doc:
            low = np.atleast_1d(np.asarray(doc.pop("low"), dtype=float))
            high = np.atleast_1d(np.asarray(doc.get("high", -low), dtype=float))
            if not np.allclose(low, -high, rtol=0, atol=1e-15):
                raise DimensionMismatch("uniform laws must be centred (low = -high)")
            doc["high"] = high
        if kind == "gaussian" and "var" in doc:
            doc["cov"] = doc.pop("var")
        unknown = set(doc) - {"high", "cov"}
        if unknown:
            raise DimensionMismatch(f"unknown distribution keys {sorted(unknown)}")
        return cls(kind, high=doc.get("high"), cov=doc.get("cov"))


def _check_psd(m, name):
    if np.max(np.abs(m - m.T), initial=0.0) > SYM_TOL:
        raise NotSymmetric(name, float(np.max(np.abs(m - m.T))))
    w = np.linalg.eigvalsh((m + m.T) / 2)
    if w.size and w.min() < -EIG_TOL:
        raise NotPositiveDefinite(name + " (positive semidefinite required)", float(w.min()))


@dataclass(frozen=True)
class NoiseSpec:
    """Initial and per-step noise laws.

    ``init_common``/``step_common`` drive the conditional mean (common noise),
    ``init_idio``/``step_idio`` the deviation from it.  ``Sigma0`` and ``Sigma1``
    are the step covariances; they are derived from the laws when omitted.
    """

    init_common: DistributionSpec = field(default_factory=DistributionSpec.point)
    init_idio: DistributionSpec = field(default_factory=DistributionSpec.point)
    step_common: DistributionSpec = field(default_factory=DistributionSpec.point)
    step_idio: DistributionSpec = field(default_factory=DistributionSpec.point)
    Sigma0: np.ndarray | None = None
    Sigma1: np.ndarray | None = None

    def resolve(self, d: int) -> "NoiseSpec":
        """Return a copy with covariances filled in and checked against ``d``."""
        for name in ("init_common", "init_idio", "step_common", "step_idio"):
            dist = getattr(self, name)
            k = dist.dim()
            if k is not None and k != d:
                raise DimensionMismatch(f"noise {name} has dimension {k}, state has {d}")
        sig0 = self.step_common.covariance(d)
        sig1 = self.step_idio.covariance(d)
        for name, given, derived in (("Sigma0", self.Sigma0, sig0), ("Sigma1", self.Sigma1, sig1)):
            if given is not None:
                given = as_matrix(given, name)
                if given.shape != (d, d):
                    raise DimensionMismatch(f"{name} must be {d}x{d}")
                _check_psd(given, name)
                if not np.allclose(given, derived, rtol=1e-9, atol=1e-12):
                    raise DimensionMismatch(f"{name} is inconsistent with the declared step law")
        return replace(self, Sigma0=_frozen(sig0), Sigma1=_frozen(sig1))

    def init_cov_common(self, d):
        return self.init_common.covariance(d)

    def init_cov_idio(self, d):
        return self.init_idio.covariance(d)

    def to_dict(self) -> dict:
        return {name: getattr(self, name).to_dict()
                for name in ("init_common", "init_idio", "step_common", "step_idio")}

    @classmethod
    def from_dict(cls, doc: Mapping | None) -> "NoiseSpec":
        if doc is None:
            return cls()
        if isinstance(doc, NoiseSpec):
            return doc
        doc = dict(doc)
        kwargs = {}
        for name in ("init_common", "init_idio", "step_common", "step_idio"):
            if name in doc:
                kwargs[name] = DistributionSpec.from_dict(doc.pop(name))
        for name in ("Sigma0", "Sigma1"):
            if name in doc:
                kwargs[name] = doc.pop(name)
        if doc:
            raise DimensionMismatch(f"unknown noise keys {sorted(doc)}")
        return cls(**kwargs)


# --------------------------------------------------------------------- model

@dataclass(frozen=True)
class TildeParams:
    Atil: np.ndarray
    Qtil: np.ndarray
    B1til: np.ndarray
    B2til: np.ndarray
    R1til: np.ndarray
    R2til: np.ndarray


@dataclass(frozen=True)
class ModelParams:
    """Coefficients of the game.

    The raw constructor only coerces shapes; use :func:`build_model` to get a
    validated instance.  Arrays are stored read-only.
    """

    A: np.ndarray
    Abar: np.ndarray
    B1: np.ndarray
    B1bar: np.ndarray
    B2: np.ndarray
    B2bar: np.ndarray
    Q: np.ndarray
    Qbar: np.ndarray
    R1: np.ndarray
    R1bar: np.ndarray
    R2: np.ndarray
    R2bar: np.ndarray
    gamma: float
    noise: NoiseSpec = field(default_factory=NoiseSpec)

    def __post_init__(self):
        for key in MATRIX_KEYS:
            object.__setattr__(self, key, _frozen(as_matrix(getattr(self, key), key)))
        object.__setattr__(self, "gamma", float(self.gamma))
        d, ell = self.A.shape[0], self.B1.shape[1]
        _check_shapes(self, d, ell)
        noise = self.noise if isinstance(self.noise, NoiseSpec) else NoiseSpec.from_dict(self.noise)
        object.__setattr__(self, "noise", noise.resolve(d))

    @property
    def d(self) -> int:
        return self.A.shape[0]

    @property
    def ell(self) -> int:
        return self.B1.shape[1]

    @cached_property
    def tilde(self) -> TildeParams:
        return derive_tilde(self)

    @property
    def Sigma0(self):
        return self.noise.Sigma0

    @property
    def Sigma1(self):
        return self.noise.Sigma1

    @property
    def init_cov_idio(self):
        return self.noise.init_cov_idio(self.d)

    @property
    def init_cov_common(self):
        return self.noise.init_cov_common(self.d)

    def replace(self, **changes) -> "ModelParams":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        doc = {key: getattr(self, key).tolist() for key in MATRIX_KEYS}
        doc["gamma"] = self.gamma
        doc["noise"] = self.noise.to_dict()
        return doc


def _check_shapes(m, d, ell):
    want = {"A": (d, d), "Abar": (d, d), "Q": (d, d), "Qbar": (d, d),
            "B1": (d, ell), "B1bar": (d, ell), "B2": (d, ell), "B2bar": (d, ell),
            "R1": (ell, ell), "R1bar": (ell, ell), "R2": (ell, ell), "R2bar": (ell, ell)}
    for key, shape in want.items():
        got = getattr(m, key).shape
        if got != shape:
            raise DimensionMismatch(f"{key} has shape {got}, expected {shape} (d={d}, ell={ell})")


def _min_eig(m):
    return float(np.linalg.eigvalsh((m + m.T) / 2).min())


def validate_model(m: ModelParams) -> ModelParams:
    """Check symmetry, positivity and the discount factor; symmetrize inputs."""
    if not 0.0 < m.gamma < 1.0:
        raise GammaOutOfRange(f"gamma must lie in (0, 1), got {m.gamma!r}")
    sym = {}
    for key in SYMMETRIC_KEYS:
        a = getattr(m, key)
        asym = float(np.max(np.abs(a - a.T)))
        if asym > SYM_TOL:
            raise NotSymmetric(key, asym)
        sym[key] = (a + a.T) / 2
    checks = (("R1", sym["R1"]), ("R2", sym["R2"]),
              ("R1+R1bar", sym["R1"] + sym["R1bar"]), ("R2+R2bar", sym["R2"] + sym["R2bar"]))
    for name, a in checks:
        lo = _min_eig(a)
        if lo <= EIG_TOL:
            raise NotPositiveDefinite(name, lo)
    return replace(m, **sym)


def build_model(config: Mapping[str, Any]) -> ModelParams:
    """Build a validated :class:`ModelParams` from a key-value document.

    Matrices may be given as scalars (1x1) or nested lists.  ``d`` and ``ell``
    are optional; when present they must match the matrices.  The optional
    ``noise`` entry is a mapping accepted by :meth:`NoiseSpec.from_dict`.
    """
    config = dict(config)
    missing = [k for k in MATRIX_KEYS + ("gamma",) if k not in config]
    if missing:
        raise DimensionMismatch(f"config is missing keys: {', '.join(missing)}")
    arrays = {k: as_matrix(config[k], k) for k in MATRIX_KEYS}
    d, ell = arrays["A"].shape[0], arrays["B1"].shape[1]
    if "d" in config and int(config["d"]) != d:
        raise DimensionMismatch(f"d={config['d']} but A is {arrays['A'].shape}")
    if "ell" in config and int(config["ell"]) != ell:
        raise DimensionMismatch(f"ell={config['ell']} but B1 is {arrays['B1'].shape}")
    gamma = float(config["gamma"])
    if not 0.0 < gamma < 1.0:
        raise GammaOutOfRange(f"gamma must lie in (0, 1), got {gamma!r}")
    m = ModelParams(**arrays, gamma=gamma, noise=NoiseSpec.from_dict(config.get("noise")))
    return validate_model(m)


def as_model(model) -> ModelParams:
    """Accept a ModelParams or a config mapping; always return a validated model."""
    if isinstance(model, ModelParams):
        return model
    if isinstance(model, Mapping):
        return build_model(model)
    raise TypeError(f"expected ModelParams or a mapping, got {type(model).__name__}")


def derive_tilde(m: ModelParams) -> TildeParams:
    return TildeParams(
        Atil=_frozen(m.A + m.Abar),
        Qtil=_frozen(m.Q + m.Qbar),
        B1til=_frozen(m.B1 + m.B1bar),
        B2til=_frozen(m.B2 + m.B2bar),
        R1til=_frozen(m.R1 + m.R1bar),
        R2til=_frozen(m.R2 + m.R2bar),
    )


def table1_config() -> dict:
    """Scalar game used for the reference experiments."""
    return {
        "A": 0.4, "Abar": 0.4,
        "B1": 0.4, "B1bar": 0.4,
        "B2": 0.3, "B2bar": 0.3,
        "Q": 0.4, "Qbar": 0.4,
        "R1": 0.4, "R1bar": 0.4,
        "R2": 0.4, "R2bar": 0.4,
        "gamma": 0.9,
        "noise": {
            "init_common": {"kind": "uniform", "high": [1.0]},
            "init_idio": {"kind": "uniform", "high": [1.0]},
            "step_common": {"kind": "gaussian", "cov": [[0.01]]},
            "step_idio": {"kind": "gaussian", "cov": [[0.01]]},
        },
    }


def table1_model() -> ModelParams:
    return build_model(table1_config())


def build_two_population(pop1: Mapping, pop2: Mapping, *, R1, R1bar, R2, R2bar,
                         gamma, noise=None) -> ModelParams:
    """Assemble the block game where each player steers its own population.

    Each ``pop`` mapping holds the sub-blocks of one half of the state:
    ``A`` (own drift), ``B`` (own player's control matrix: B_1^1 for
    population 1, B_2^2 for population 2), ``Abar`` (pair of mean-field
    blocks acting on the two halves), ``B1bar`` and ``B2bar`` (rows of the
    mean-field control matrices) and optionally ``Q``, ``Qbar``.
    """
    blocks = []
    for k, pop in enumerate((pop1, pop2), start=1):
        pop = dict(pop)
        A = as_matrix(pop["A"], f"pop{k}.A")
        dp = A.shape[0]
        Ab = pop.get("Abar", (np.zeros((dp, dp)), np.zeros((dp, dp))))
        if len(Ab) != 2:
            raise DimensionMismatch(f"pop{k}.Abar must be a pair of blocks")
        blocks.append({
            "A": A,
            "B": as_matrix(pop["B"], f"pop{k}.B"),
            "Abar": [as_matrix(b, f"pop{k}.Abar") for b in Ab],
            "B1bar": as_matrix(pop.get("B1bar", 0.0), f"pop{k}.B1bar"),
            "B2bar": as_matrix(pop.get("B2bar", 0.0), f"pop{k}.B2bar"),
            "Q": as_matrix(pop.get("Q", np.zeros((dp, dp))), f"pop{k}.Q"),
            "Qbar": as_matrix(pop.get("Qbar", np.zeros((dp, dp))), f"pop{k}.Qbar"),
        })
    p1, p2 = blocks
    dp = p1["A"].shape[0]
    if p2["A"].shape[0] != dp:
        raise DimensionMismatch("both populations must share the state sub-dimension")
    ell = p1["B"].shape[1]
    if p2["B"].shape[1] != ell:
        raise DimensionMismatch("both control blocks must share the control dimension")

    def fit(b, shape, name):
        if b.shape == (1, 1) and shape != (1, 1):
            b = np.full(shape, b[0, 0]) if b[0, 0] == 0.0 else b
        if b.shape != shape:
            raise DimensionMismatch(f"{name} has shape {b.shape}, expected {shape}")
        return b

    for k, p in enumerate(blocks, start=1):
        p["B"] = fit(p["B"], (dp, ell), f"pop{k}.B")
        p["B1bar"] = fit(p["B1bar"], (dp, ell), f"pop{k}.B1bar")
        p["B2bar"] = fit(p["B2bar"], (dp, ell), f"pop{k}.B2bar")
        p["Abar"] = [fit(b, (dp, dp), f"pop{k}.Abar") for b in p["Abar"]]
        p["Q"] = fit(p["Q"], (dp, dp), f"pop{k}.Q")
        p["Qbar"] = fit(p["Qbar"], (dp, dp), f"pop{k}.Qbar")

    Z = np.zeros((dp, dp))
    Zb = np.zeros((dp, ell))
    config = {
        "A": np.block([[p1["A"], Z], [Z, p2["A"]]]),
        "Abar": np.block([p1["Abar"], p2["Abar"]]),
        "B1": np.vstack([p1["B"], Zb]),
        "B2": np.vstack([Zb, p2["B"]]),
        "B1bar": np.vstack([p1["B1bar"], p2["B1bar"]]),
        "B2bar": np.vstack([p1["B2bar"], p2["B2bar"]]),
        "Q": np.block([[p1["Q"], Z], [Z, p2["Q"]]]),
        "Qbar": np.block([[p1["Qbar"], Z], [Z, p2["Qbar"]]]),
        "R1": R1, "R1bar": R1bar, "R2": R2, "R2bar": R2bar,
        "gamma": gamma,
        "noise": noise,
    }
    return build_model(config)


# ------------------------------------------------------------------ policies

@dataclass(frozen=True)
class PolicyProfile:
    """Feedback gains (K1, L1, K2, L2), each ell x d."""

    K1: np.ndarray
    L1: np.ndarray
    K2: np.ndarray
    L2: np.ndarray

    def __post_init__(self):
        shapes = set()
        for f in fields(self):
            a = _frozen(as_matrix(getattr(self, f.name), f.name))
            object.__setattr__(self, f.name, a)
            shapes.add(a.shape)
        if len(shapes) != 1:
            raise DimensionMismatch(f"gain blocks have inconsistent shapes {sorted(shapes)}")

    @classmethod
    def zeros(cls, ell: int, d: int) -> "PolicyProfile":
        z = np.zeros((ell, d))
        return cls(z, z, z, z)

    @classmethod
    def from_vector(cls, vec, ell: int, d: int) -> "PolicyProfile":
        vec = np.asarray(vec, dtype=float).ravel()
        n = ell * d
        if vec.size != 4 * n:
            raise DimensionMismatch(f"expected {4 * n} entries, got {vec.size}")
        parts = [vec[i * n:(i + 1) * n].reshape(ell, d) for i in range(4)]
        return cls(*parts)

    @property
    def shape(self):
        return self.K1.shape

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.K1.ravel(), self.L1.ravel(), self.K2.ravel(), self.L2.ravel()])

    def blocks(self):
        return self.K1, self.L1, self.K2, self.L2

    def player(self, i: int):
        return (self.K1, self.L1) if i == 1 else (self.K2, self.L2)

    def with_player(self, i: int, K, L) -> "PolicyProfile":
        if i == 1:
            return PolicyProfile(K, L, self.K2, self.L2)
        return PolicyProfile(self.K1, self.L1, K, L)

    def replace(self, **changes) -> "PolicyProfile":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {name: getattr(self, name).tolist() for name in ("K1", "L1", "K2", "L2")}

    def controls(self, x, x_mean):
        """Controls (u1, u2) for states ``x`` (n x d) and conditional mean ``x_mean``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        x_mean = np.broadcast_to(np.asarray(x_mean, dtype=float), x.shape)
        y = x - x_mean
        u1 = -(y @ self.K1.T) - x_mean @ self.L1.T
        u2 = y @ self.K2.T + x_mean @ self.L2.T
        return u1, u2


def check_policy(theta, m: ModelParams) -> PolicyProfile:
    """Validate gain dimensions against a model."""
    if not isinstance(theta, PolicyProfile):
        if isinstance(theta, Mapping):
            theta = PolicyProfile(**theta)
        else:
            theta = PolicyProfile.from_vector(theta, m.ell, m.d)
    if theta.shape != (m.ell, m.d):
        raise DimensionMismatch(f"gains are {theta.shape}, model needs {(m.ell, m.d)}")
    return theta


def closed_loop_y(K1, K2, m: ModelParams) -> np.ndarray:
    return m.A - m.B1 @ K1 + m.B2 @ K2


def closed_loop_z(L1, L2, m: ModelParams) -> np.ndarray:
    t = m.tilde
    return t.Atil - t.B1til @ L1 + t.B2til @ L2


@dataclass(frozen=True)
class StabilityReport:
    in_theta: bool
    norm_y: float
    norm_z: float


def check_stability(theta: PolicyProfile, m: ModelParams) -> StabilityReport:
    """Membership of ``theta`` in the stabilizing set (operator 2-norm test)."""
    theta = check_policy(theta, m)
    norm_y = float(np.linalg.norm(closed_loop_y(theta.K1, theta.K2, m), 2))
    norm_z = float(np.linalg.norm(closed_loop_z(theta.L1, theta.L2, m), 2))
    ok = m.gamma * norm_y ** 2 < 1.0 and m.gamma * norm_z ** 2 < 1.0
    return StabilityReport(bool(ok), norm_y, norm_z)
