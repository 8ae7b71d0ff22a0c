"""Experiment configuration: YAML/JSON files validated against a JSON schema.

Complex entries may be written as numbers, ``"1+2j"`` strings or ``[re, im]``
pairs. Example::

    kind: fim
    seed: 7
    samples: 1000000
    generator: {kind: student-t, nu: 5}
    model:
      M: 3
      A: [[1, 0.2, 0], [0, 1, "0.1j"], [0, 0, 1]]
      kappa: [0.3, 0.6, 0.2]
      params:
        - {target: mu, index: [0], part: re}
        - {target: a, index: [0, 1], part: re}
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from .ces import NcCesModel
from .doa import DoaModel, NcDoaModel
from .errors import CesBoundError, ConfigError
from .fisher import ParamModel, ParamSpec, entry_param_model
from .generators import DensityGenerator, make_generator

_COMPLEX = {
    "oneOf": [
        {"type": "number"},
        {"type": "string"},
        {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
    ]
}
_VECTOR = {"type": "array", "items": {"type": "number"}, "minItems": 1}
_CVECTOR = {"type": "array", "items": _COMPLEX, "minItems": 1}
_CMATRIX = {"type": "array", "items": _CVECTOR, "minItems": 1}

SCHEMA = {
    "type": "object",
    "required": ["kind", "seed"],
    "additionalProperties": False,
    "properties": {
        "kind": {"enum": ["xi", "fim", "scrb", "validate"]},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "samples": {"type": "integer", "minimum": 1000},
        "batch": {"type": "integer", "minimum": 1},
        "workers": {"type": "integer", "minimum": 1},
        "generator": {
            "type": "object",
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["gaussian", "student-t", "generalized-gaussian"]},
                "nu": {"type": "number", "exclusiveMinimum": 0},
                "s": {"type": "number", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
        "model": {
            "type": "object",
            "properties": {
                "M": {"type": "integer", "minimum": 1},
                "mu": _CVECTOR,
                "A": _CMATRIX,
                "kappa": _VECTOR,
                "params": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "required": ["target", "index"],
                        "additionalProperties": False,
                        "properties": {
                            "target": {"enum": ["mu", "a", "kappa"]},
                            "index": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                            "part": {"enum": ["re", "im"]},
                        },
                    },
                },
                "circular": {"type": "boolean"},
                "theta": _VECTOR,
                "R_s": _CMATRIX,
                "R_r": {"type": "array", "items": _VECTOR},
                "powers": _VECTOR,
                "source_correlation": {"type": "number", "minimum": -1, "maximum": 1},
                "phi": _VECTOR,
                "sigma2": {"type": "number", "exclusiveMinimum": 0},
                "snr_db": {"type": "number"},
                "snapshots": {"type": "integer", "minimum": 1},
                "xi2": {"type": "number", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
        "sweep": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["path", "values"],
                "additionalProperties": False,
                "properties": {
                    "path": {"type": "string", "pattern": r"^[A-Za-z_]\w*(\.[A-Za-z_]\w*|\.\d+)*$"},
                    "values": {"type": "array", "items": {"type": "number"}},
                },
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "path": {"type": "string"},
                "format": {"enum": ["csv", "report"]},
            },
        },
    },
}

DEFAULT_SAMPLES = 200_000
DEFAULT_BATCH = 100_000


@dataclass
class ExperimentConfig:
    kind: str
    seed: int
    samples: int = DEFAULT_SAMPLES
    batch: int = DEFAULT_BATCH
    workers: int = 1
    generator: dict = field(default_factory=lambda: {"kind": "gaussian"})
    model: dict = field(default_factory=dict)
    sweep: list = field(default_factory=list)
    output_path: str | None = None
    output_format: str = "report"

    def as_dict(self) -> dict:
        out = {
            "kind": self.kind, "seed": self.seed, "samples": self.samples, "batch": self.batch,
            "generator": self.generator, "model": self.model,
        }
        if self.sweep:
            out["sweep"] = self.sweep
        return out

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form (output location and worker count excluded)."""
        text = json.dumps(self.as_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def with_value(self, path: str, value) -> "ExperimentConfig":
        """Copy with the dotted ``path`` (e.g. ``model.snr_db``, ``model.theta.0``) set to ``value``."""
        new = copy.deepcopy(self)
        keys = path.split(".")
        root = {"model": new.model, "generator": new.generator}
        if keys[0] not in root or len(keys) < 2:
            raise ConfigError(f"sweep path must start with 'model.' or 'generator.', got {path!r}", ("sweep",))
        node = root[keys[0]]
        try:
            for key in keys[1:-1]:
                node = node[int(key)] if isinstance(node, list) else node[key]
            last = keys[-1]
            if isinstance(node, list):
                node[int(last)] = value
            else:
                node[last] = value
        except (KeyError, IndexError, ValueError, TypeError):
            raise ConfigError(f"sweep path {path!r} does not exist in the configuration", ("sweep",))
        validate_dict(new.as_dict())
        return new


def validate_dict(raw: dict) -> None:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise ConfigError(err.message, err.absolute_path)


def parse_config(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a mapping")
    validate_dict(raw)
    out = raw.get("output", {})
    cfg = ExperimentConfig(
        kind=raw["kind"],
        seed=raw["seed"],
        samples=raw.get("samples", DEFAULT_SAMPLES),
        batch=raw.get("batch", DEFAULT_BATCH),
        workers=raw.get("workers", 1),
        generator=dict(raw.get("generator", {"kind": "gaussian"})),
        model=copy.deepcopy(raw.get("model", {})),
        sweep=copy.deepcopy(raw.get("sweep", [])),
        output_path=out.get("path"),
        output_format=out.get("format", "report"),
    )
    if "sweep" in raw and not cfg.sweep:
        raise ConfigError("sweep grid is empty", ("sweep",))
    for i, axis in enumerate(cfg.sweep):
        if not axis["values"]:
            raise ConfigError("sweep axis has no values", ("sweep", i, "values"))
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}")
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path} is not valid YAML/JSON: {exc}")
    return parse_config(raw)


# -- object builders ---------------------------------------------------------

def _complex(v, path):
    try:
        if isinstance(v, list):
            return complex(v[0], v[1])
        return complex(str(v).replace(" ", "")) if isinstance(v, str) else complex(v)
    except ValueError:
        raise ConfigError(f"cannot parse complex number {v!r}", path)


def _cmatrix(rows, path):
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ConfigError("matrix rows have unequal lengths", path)
    return np.array([[_complex(v, (*path, i, j)) for j, v in enumerate(r)] for i, r in enumerate(rows)])


def _wrap(fn, path):
    try:
        return fn()
    except ConfigError:
        raise
    except CesBoundError as exc:
        raise ConfigError(str(exc), path)


def build_generator(cfg: ExperimentConfig) -> DensityGenerator:
    spec = dict(cfg.generator)
    kind = spec.pop("kind")
    return _wrap(lambda: make_generator(kind, **spec), ("generator",))


def model_dimension(cfg: ExperimentConfig) -> int:
    model = cfg.model
    for key, size in (("M", lambda v: v), ("A", len), ("mu", len), ("kappa", len)):
        if key in model:
            return int(size(model[key]))
    raise ConfigError("model dimension M is required", ("model",))


def build_ces_model(cfg: ExperimentConfig) -> NcCesModel:
    spec = cfg.model
    m = model_dimension(cfg)
    a = _cmatrix(spec["A"], ("model", "A")) if "A" in spec else np.eye(m)
    mu = np.array([_complex(v, ("model", "mu", i)) for i, v in enumerate(spec.get("mu", [0] * m))])
    kappa = spec.get("kappa", [0.0] * m)
    gen = build_generator(cfg)
    return _wrap(lambda: NcCesModel(mu, a, kappa, gen), ("model",))


def build_param_model(cfg: ExperimentConfig) -> ParamModel:
    base = build_ces_model(cfg)
    specs = cfg.model.get("params")
    if not specs:
        raise ConfigError("fim experiments need model.params", ("model", "params"))
    parsed = [
        _wrap(lambda s=s: ParamSpec(s["target"], tuple(s["index"]), s.get("part", "re")), ("model", "params", i))
        for i, s in enumerate(specs)
    ]
    return _wrap(lambda: entry_param_model(base, parsed), ("model", "params"))


def _sigma2(spec) -> float:
    if "sigma2" in spec and "snr_db" in spec:
        raise ConfigError("give either sigma2 or snr_db, not both", ("model",))
    if "snr_db" in spec:
        return float(10.0 ** (-spec["snr_db"] / 10.0))
    return float(spec.get("sigma2", 1.0))


def _source_matrix(spec, k, key):
    if key in spec:
        return _cmatrix(spec[key], ("model", key))
    powers = np.asarray(spec.get("powers", [1.0] * k), dtype=float)
    if powers.shape != (k,):
        raise ConfigError(f"powers must have {k} entries", ("model", "powers"))
    rho = float(spec.get("source_correlation", 0.0))
    root = np.sqrt(powers)
    corr = np.full((k, k), rho)
    np.fill_diagonal(corr, 1.0)
    return corr * np.outer(root, root)


def build_doa_model(cfg: ExperimentConfig) -> DoaModel | NcDoaModel:
    spec = cfg.model
    if "theta" not in spec or "M" not in spec:
        raise ConfigError("scrb experiments need model.M and model.theta", ("model",))
    theta = np.asarray(spec["theta"], dtype=float)
    m, k = int(spec["M"]), theta.size
    sigma2 = _sigma2(spec)
    snapshots = int(spec.get("snapshots", 1))
    if spec.get("circular", True):
        r_s = _source_matrix(spec, k, "R_s")
        return _wrap(lambda: DoaModel.ula(theta, m, r_s, sigma2, snapshots), ("model",))
    r_r = _source_matrix(spec, k, "R_r")
    if np.any(np.abs(r_r.imag) > 0):
        raise ConfigError("R_r must be real", ("model", "R_r"))
    phi = np.asarray(spec.get("phi", [0.0] * k), dtype=float)
    return _wrap(lambda: NcDoaModel.ula(theta, m, r_r.real, phi, sigma2, snapshots), ("model",))
