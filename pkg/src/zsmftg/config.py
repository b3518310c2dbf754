"""Experiment configuration files.

Grammar (one statement per line)::

    # comment             full-line comments and blank lines are ignored
    [section]             starts a section: model, noise, train, estimator,
                          output or experiment
    key = <json value>    numbers, strings, true/false, null, lists, objects

Matrices are nested lists (``[[0.4, 0], [0, 0.4]]``); a bare number is read
as a 1x1 matrix.  Serialization writes floats with 17 significant digits, so
parse -> serialize -> parse is the identity.  Any key can be overridden from
the environment as ``ZSMFTG_<SECTION>_<KEY>`` (case-insensitive key match)
holding a JSON value.
"""
from __future__ import annotations

import copy
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

from .exceptions import ConfigError
from .model import MATRIX_KEYS, PolicyProfile, build_model, table1_config
from .optimize import TrainSpec
from .simulator import SimSpec

ENV_PREFIX = "ZSMFTG_"

SECTION_KEYS = {
    "model": set(MATRIX_KEYS) | {"gamma", "d", "ell"},
    "noise": {"init_common", "init_idio", "step_common", "step_idio", "Sigma0", "Sigma1"},
    "train": {"method", "mode", "eta1", "eta2", "n1max", "n2max", "iters", "theta0",
              "log_every", "crn", "baseline"},
    "estimator": {"horizon", "n_perturbations", "radius", "n_agents"},
    "output": {"dir", "formats"},
    "experiment": {"seed", "replications", "jobs", "n_samples", "agent_counts", "n_reps",
                   "mc_horizon"},
}
SECTIONS = tuple(SECTION_KEYS)


@dataclass
class ExperimentConfig:
    model: dict = field(default_factory=dict)
    noise: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    estimator: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)
    experiment: dict = field(default_factory=dict)

    def section(self, name) -> dict:
        return getattr(self, name)

    def copy(self) -> "ExperimentConfig":
        return copy.deepcopy(self)

    @property
    def seed(self) -> int:
        return int(self.experiment.get("seed", 0))

    def build_model(self):
        doc = dict(self.model)
        doc["noise"] = dict(self.noise) or None
        try:
            return build_model(doc)
        except ConfigError as exc:
            raise ConfigError(f"[model]/[noise]: {exc}") from exc

    def sim_spec(self) -> SimSpec:
        est = self.estimator
        try:
            return SimSpec(horizon=est.get("horizon", 50), n_agents=est.get("n_agents", 1),
                           n_perturbations=est.get("n_perturbations", 10_000),
                           radius=est.get("radius", 0.1), seed=self.seed)
        except ConfigError as exc:
            raise ConfigError(f"[estimator]: {exc}") from exc

    def train_spec(self, m=None) -> TrainSpec:
        tr = dict(self.train)
        theta0 = tr.pop("theta0", None)
        if theta0 is not None:
            try:
                theta0 = PolicyProfile(**theta0)
            except (TypeError, ConfigError) as exc:
                raise ConfigError(f"[train] theta0: {exc}") from exc
        try:
            return TrainSpec(theta0=theta0, estimator=self.sim_spec(),
                             n_jobs=self.experiment.get("jobs"), **tr)
        except (TypeError, ConfigError) as exc:
            raise ConfigError(f"[train]: {exc}") from exc


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return "null"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if math.isnan(v) or math.isinf(v):
            raise ConfigError(f"cannot serialize non-finite number {v!r}")
        text = format(v, ".17g")
        if not any(c in text for c in ".en"):
            text += ".0"
        return text
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_format(x) for x in v) + "]"
    if isinstance(v, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {_format(x)}" for k, x in v.items()) + "}"
    if hasattr(v, "tolist"):
        return _format(v.tolist())
    raise ConfigError(f"cannot serialize value of type {type(v).__name__}")


def _check_key(section, key, where):
    allowed = SECTION_KEYS[section]
    if key not in allowed:
        raise ConfigError(f"{where}: unknown key {key!r} in [{section}] "
                          f"(allowed: {', '.join(sorted(allowed))})")


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    cfg = ExperimentConfig()
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        where = f"{source}:{lineno}"
        if not line or line.startswith("#"):
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"{where}: malformed section header {line!r}")
            section = line[1:-1].strip()
            if section not in SECTION_KEYS:
                raise ConfigError(f"{where}: unknown section [{section}] "
                                  f"(expected one of {', '.join(SECTIONS)})")
            continue
        if "=" not in line:
            raise ConfigError(f"{where}: expected 'key = value', got {line!r}")
        if section is None:
            raise ConfigError(f"{where}: key outside of any section")
        key, value = (s.strip() for s in line.split("=", 1))
        _check_key(section, key, where)
        try:
            parsed = json.loads(value)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{where}: key {key!r}: invalid value ({exc.msg})") from None
        target = cfg.section(section)
        if key in target:
            raise ConfigError(f"{where}: duplicate key {key!r} in [{section}]")
        target[key] = parsed
    return cfg


def serialize_config(cfg: ExperimentConfig) -> str:
    lines = []
    for name in SECTIONS:
        sec = cfg.section(name)
        if not sec:
            continue
        if lines:
            lines.append("")
        lines.append(f"[{name}]")
        for key, value in sec.items():
            lines.append(f"{key} = {_format(value)}")
    return "\n".join(lines) + "\n"


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    return parse_config(text, str(path))


def apply_env(cfg: ExperimentConfig, environ=None) -> ExperimentConfig:
    """Return a copy with ZSMFTG_<SECTION>_<KEY> overrides applied."""
    environ = os.environ if environ is None else environ
    out = cfg.copy()
    for name, value in sorted(environ.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX):]
        section, _, key = rest.partition("_")
        section = section.lower()
        if section not in SECTION_KEYS or not key:
            raise ConfigError(f"environment variable {name}: expected {ENV_PREFIX}<SECTION>_<KEY>")
        matches = [k for k in SECTION_KEYS[section] if k.lower() == key.lower()]
        if not matches:
            raise ConfigError(f"environment variable {name}: unknown key {key!r} in [{section}]")
        try:
            out.section(section)[matches[0]] = json.loads(value)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"environment variable {name}: invalid value ({exc.msg})") from None
    return out


def table1_experiment() -> ExperimentConfig:
    base = table1_config()
    noise = base.pop("noise")
    return ExperimentConfig(
        model=base,
        noise=noise,
        train={"method": "gda", "mode": "exact", "eta1": 0.1, "eta2": 0.1,
               "n1max": 10, "n2max": 200, "iters": 2000, "log_every": 1},
        estimator={"horizon": 50, "n_perturbations": 10_000, "radius": 0.1},
        output={"dir": "out", "formats": ["csv", "svg"]},
        experiment={"seed": 0, "replications": 1},
    )


PRESETS = {"table1": table1_experiment}


def preset(name: str) -> ExperimentConfig:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown preset {name!r} (available: {', '.join(PRESETS)})") from None
