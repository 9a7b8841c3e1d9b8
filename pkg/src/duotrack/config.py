"""Layered run configuration: preset defaults < config file < CLI overrides."""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict, fields
from pathlib import Path

from .predictor import PRESETS, PredictorConfig
from .tracker import TrackerConfig
from .data import AugmentPolicy


@dataclass
class RunConfig:
    seed: int = 0
    preset: str = "desk"
    # model
    d_m: int = 64
    layers: int = 2
    heads: int = 4
    n_past: int = 10
    pooling: str = "mean"
    enable_mhsa: bool = True
    enable_dymlp: bool = True
    dropout: float = 0.0
    # training
    steps: int = 1500
    batch_size: int = 32
    warmup: int = 400
    drop_prob: float = 0.1
    jitter: float = 0.05
    random_length: bool = False
    # tracker
    predictor: str = "learned"  # learned | kalman | none
    iou_gate: float = 0.3
    t_max: int = 30
    spawn_conf: float = 0.6

    def predictor_config(self) -> PredictorConfig:
        return PredictorConfig(
            d_m=self.d_m, layers=self.layers, heads=self.heads,
            n_past=self.n_past, pooling=self.pooling,
            enable_mhsa=self.enable_mhsa, enable_dymlp=self.enable_dymlp,
            dropout=self.dropout,
        )

    def tracker_config(self) -> TrackerConfig:
        return TrackerConfig(iou_gate=self.iou_gate, t_max=self.t_max,
                             spawn_conf=self.spawn_conf, n_past=self.n_past)

    def augment_policy(self) -> AugmentPolicy:
        return AugmentPolicy(drop_prob=self.drop_prob, jitter=self.jitter,
                             random_length=self.random_length)

    def save(self, path):
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")

    @staticmethod
    def load(path) -> "RunConfig":
        return build_config(config_file=path)


_FIELD_NAMES = {f.name for f in fields(RunConfig)}

# run-level presets extend the model presets with training settings; the
# full-size recipe uses a larger batch, the desk preset only shrinks the model
_RUN_PRESETS = {name: dict(vals) for name, vals in PRESETS.items()}
_RUN_PRESETS["paper"]["batch_size"] = 64


def build_config(preset: str | None = None, config_file=None,
                 overrides: dict | None = None) -> RunConfig:
    """Merge defaults, preset, optional JSON file, and explicit overrides."""
    merged = asdict(RunConfig())
    file_vals = {}
    if config_file is not None:
        file_vals = json.loads(Path(config_file).read_text())
        unknown = set(file_vals) - _FIELD_NAMES
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
    name = preset or file_vals.get("preset") or merged["preset"]
    if name not in _RUN_PRESETS:
        raise ValueError(f"unknown preset '{name}'")
    merged["preset"] = name
    for key, value in _RUN_PRESETS[name].items():
        merged[key] = value
    merged.update(file_vals)
    merged["preset"] = name
    if overrides:
        for key, value in overrides.items():
            if value is None:
                continue
            if key not in _FIELD_NAMES:
                raise ValueError(f"unknown config override: {key}")
            merged[key] = value
    return RunConfig(**merged)
