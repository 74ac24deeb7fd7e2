"""Experiment configuration: one YAML file per experiment, flag-overridable.

The file format is documented by the commented example in
configs/toy_faces.yaml.  Flags win over file values; the manifest written by
each command embeds `config_hash(cfg)` so reruns can be checked for drift.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .core import PkdConfig
from .models import MlpSpec, TrainConfig
from .synth import AttributeMixtureSpec


class ConfigError(Exception):
    """Raised for missing files, malformed sections, or bad values."""


@dataclass
class SweepConfig:
    lambda_lo: float
    lambda_hi: float
    points: int = 8
    epsilon: float = 1e-3
    fixed_batch: bool = True

    def grid(self) -> np.ndarray:
        if self.points < 1:
            raise ConfigError("sweep.points must be >= 1")
        if not 0 < self.lambda_lo <= self.lambda_hi:
            raise ConfigError("sweep grid needs 0 < lambda_lo <= lambda_hi")
        return np.geomspace(self.lambda_lo, self.lambda_hi, self.points)


@dataclass
class ExperimentConfig:
    seed: int
    output_dir: Path
    data: AttributeMixtureSpec
    generator_spec: MlpSpec
    generator_init_seed: int
    generator_train: TrainConfig
    posterior_hidden: tuple[int, ...]
    posterior_samples: int
    posterior_data_seed: int
    posterior_init_seed: int
    posterior_train: TrainConfig
    pkd: PkdConfig
    probes: list[str] = field(default_factory=list)
    sweep: SweepConfig | None = None
    raw: dict = field(default_factory=dict, repr=False)

    def posterior_spec(self) -> MlpSpec:
        return MlpSpec(
            in_dim=self.data.dimension, hidden=self.posterior_hidden, out_dim=1
        )


def _train_config(d: dict, **defaults) -> TrainConfig:
    known = {f for f in TrainConfig.__dataclass_fields__}
    bad = set(d) - known
    if bad:
        raise ConfigError(f"unknown training keys: {sorted(bad)}")
    merged = {**defaults, **d}
    return TrainConfig(**merged)


def load_experiment(path) -> ExperimentConfig:
    """Parse a YAML experiment file into validated domain objects."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise ConfigError(f"config root must be a mapping: {path}")
    try:
        data = AttributeMixtureSpec.from_dict(raw["data"])
        gen = raw["generator"]
        gen_spec = MlpSpec(
            in_dim=data.dimension,
            hidden=tuple(int(h) for h in gen.get("hidden", [])),
            out_dim=data.dimension,
            output_gain=float(gen.get("output_gain", 1.0)),
        )
        post = raw["posterior"]
        pkd_raw = dict(raw.get("pkd", {}))
        if "lambda" in pkd_raw:  # "lambda" is reserved in python
            pkd_raw["lam"] = pkd_raw.pop("lambda")
        if "lambda0" in pkd_raw:
            pkd_raw["lam0"] = pkd_raw.pop("lambda0")
        pkd = PkdConfig(seed=int(raw.get("seed", 0)), **pkd_raw)
        sweep = None
        if "sweep" in raw:
            sweep = SweepConfig(**raw["sweep"])
        cfg = ExperimentConfig(
            seed=int(raw.get("seed", 0)),
            output_dir=Path(raw.get("output_dir", "runs/experiment")),
            data=data,
            generator_spec=gen_spec,
            generator_init_seed=int(gen.get("init_seed", 0)),
            generator_train=_train_config(gen.get("train", {})),
            posterior_hidden=tuple(int(h) for h in post.get("hidden", [])),
            posterior_samples=int(post.get("samples", 4000)),
            posterior_data_seed=int(post.get("data_seed", 0)),
            posterior_init_seed=int(post.get("init_seed", 0)),
            posterior_train=_train_config(post.get("train", {})),
            pkd=pkd,
            probes=list(raw.get("probes", [])),
            sweep=sweep,
            raw=raw,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad config {path}: {exc}") from exc
    for probe in cfg.probes:
        _parse_probe(probe, cfg)
    return cfg


def _parse_probe(text: str, cfg: ExperimentConfig) -> tuple[str, str]:
    """Probe selectors are "posterior:<attr>" or "coord:<index>"."""
    kind, _, arg = text.partition(":")
    if kind == "posterior":
        if arg not in cfg.data.attributes or arg == cfg.data.knowledge:
            raise ConfigError(f"probe {text!r} must name a remaining attribute")
    elif kind == "coord":
        if not arg.isdigit() or int(arg) >= cfg.data.dimension:
            raise ConfigError(f"probe {text!r} needs a coordinate < dimension")
    else:
        raise ConfigError(f"unknown probe selector {text!r}")
    return kind, arg


def apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    """Fold recognized CLI flags into the config; flags win over the file."""
    pkd_over = {}
    for flag, field_name in (
        ("lam", "lam"),
        ("epsilon", "epsilon"),
        ("steps", "steps"),
        ("batch", "batch_size"),
        ("seed", "seed"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            pkd_over[field_name] = value
    if pkd_over:
        cfg.pkd = replace(cfg.pkd, **pkd_over)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "out", None) is not None:
        cfg.output_dir = Path(args.out)
    return cfg


def config_hash(cfg: ExperimentConfig) -> str:
    """Stable digest of the effective configuration (file plus overrides)."""
    effective = dict(cfg.raw)
    pkd = {f: getattr(cfg.pkd, f) for f in PkdConfig.__dataclass_fields__}
    pkd["lambda"] = pkd.pop("lam")
    effective["pkd"] = pkd
    effective["seed"] = cfg.seed
    blob = json.dumps(effective, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]
