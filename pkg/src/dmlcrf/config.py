"""Run configuration: defaults, ``key = value`` config files and presets."""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

from .crf.engine import PRESETS, CrfParams
from .dml_net import TrainConfig
from .hsi_data import AugmentConfig

SALINAS_SHAPE = (512, 217, 204)
PAVIA_SHAPE = (610, 340, 103)

SWEEP_PARAMS = ("w_app", "w_smo", "theta_alpha", "theta_beta", "theta_gamma", "k")


@dataclass
class RunConfig:
    # paths
    cube: Optional[str] = None
    labels: Optional[str] = None
    checkpoint: Optional[str] = None
    pred: Optional[str] = None
    train_mask: Optional[str] = None
    out: str = "."
    # data
    per_class: int = 200
    virtual_per_class: Optional[int] = None
    mix_low: float = 0.0
    mix_high: float = 1.0
    normalize_scope: str = "cube"
    # network
    lam: float = 1.0
    center_rate: float = 0.5
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 64
    epochs: int = 400
    center_loss_form: str = "norm"
    hidden: str = "128,64"
    feature_dim: int = 32
    # crf; None means "take it from the preset"
    crf: bool = True
    preset: str = "auto"
    w_app: Optional[float] = None
    w_smo: Optional[float] = None
    theta_alpha: Optional[float] = None
    theta_beta: Optional[float] = None
    theta_gamma: Optional[float] = None
    filter_size: Optional[int] = None
    iterations: Optional[int] = None
    window: Optional[str] = None
    export_unary: bool = False
    # protocol
    repeats: int = 1
    fixed_seed: bool = False
    seed: int = 0
    # synth
    height: int = 64
    width: int = 64
    bands: int = 16
    classes: int = 5
    noise: float = 1.0

    def __post_init__(self):
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if self.normalize_scope not in ("cube", "train"):
            raise ValueError("normalize_scope is 'cube' or 'train'")

    def train_config(self, seed=None) -> TrainConfig:
        return TrainConfig(
            lam=self.lam, center_rate=self.center_rate, learning_rate=self.learning_rate,
            momentum=self.momentum, batch_size=self.batch_size, epochs=self.epochs,
            seed=self.seed if seed is None else seed, center_loss_form=self.center_loss_form,
            hidden=tuple(int(v) for v in str(self.hidden).split(",") if v.strip()),
            feature_dim=self.feature_dim,
        )

    def augment_config(self, seed=None) -> AugmentConfig:
        return AugmentConfig(self.virtual_per_class, self.mix_low, self.mix_high,
                             self.seed if seed is None else seed)

    def crf_params(self, cube_shape=None) -> CrfParams:
        preset = resolve_preset(self.preset, cube_shape)
        overrides = {name: getattr(self, name) for name in
                     ("w_app", "w_smo", "theta_alpha", "theta_beta", "theta_gamma",
                      "filter_size", "iterations", "window")
                     if getattr(self, name) is not None}
        return PRESETS[preset].with_(**overrides)


def resolve_preset(name, cube_shape=None) -> str:
    """``auto`` picks ``salinas`` (k=15) for Salinas-shaped cubes, else ``pavia`` (k=7)."""
    if name != "auto":
        if name not in PRESETS:
            raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)} or 'auto'")
        return name
    if cube_shape is not None and (tuple(cube_shape) == SALINAS_SHAPE
                                   or tuple(cube_shape[:2]) == SALINAS_SHAPE[:2]
                                   or cube_shape[-1] == SALINAS_SHAPE[2]):
        return "salinas"
    return "pavia"


_FIELD_TYPES = {f.name: f for f in fields(RunConfig)}


def _coerce(name, raw):
    if name not in _FIELD_TYPES:
        raise KeyError(f"unknown config key {name!r}")
    hint = str(_FIELD_TYPES[name].type)
    text = str(raw).strip()
    if text.lower() in ("none", "") and "Optional" in hint:
        return None
    if "bool" in hint:
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{name}: expected a boolean, got {raw!r}")
    if "int" in hint:
        return int(text)
    if "float" in hint:
        return float(text)
    return text


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; blank lines and ``#`` comments are skipped."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.lstrip("-").replace("-", "_")
        values[key] = _coerce(key, value)
    return values


def build_config(file_values=None, overrides=None) -> RunConfig:
    """Defaults, then file values, then explicitly given overrides (None = not given)."""
    merged = dict(file_values or {})
    for key, value in (overrides or {}).items():
        if value is not None:
            merged[key] = _coerce(key, value) if isinstance(value, str) else value
    return RunConfig(**merged)
