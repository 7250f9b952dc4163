"""Run configuration: one flat key set shared by the CLI, trainer and engine.

Defaults are the full-scale reference recipe (lr 1e-4, batch 128, 100
epochs, blend weight 5/6, threshold 0.55, 10 refinement iterations, 448 px
windows with stride 224). Desk-scale runs override them; every value is
echoed into output artifacts so runs are reproducible from their outputs.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 128
    epochs: int = 100
    seed: int = 0
    temperature: float = 1.0
    aggregation: str = "max_head"  # max_head | mean_heads | cls_only
    projection: str = "mlp"  # mlp | linear
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8


@dataclass
class EngineOptions:
    background_cleaning: bool = False
    lam: float = 5.0 / 6.0
    threshold: float = 0.55
    mask_refinement: bool = False
    window: int = 448  # pixels
    stride: int = 224  # pixels
    pamr_iterations: int = 10
    pamr_dilations: tuple[int, ...] = (1, 2, 4, 8, 12, 24)
    pamr_sigma_floor: float = 1e-4

    def validate(self) -> None:
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must be in [0, 1], got {self.lam}")
        if self.window <= 0 or self.stride <= 0 or self.stride > self.window:
            raise ValueError(
                f"need 0 < stride <= window, got window={self.window} stride={self.stride}"
            )
        if self.pamr_iterations < 0:
            raise ValueError("pamr_iterations must be >= 0")


_BOOL_KEYS = {"background_cleaning", "mask_refinement"}
_INT_KEYS = {"batch_size", "epochs", "seed", "window", "stride", "pamr_iterations"}
_FLOAT_KEYS = {
    "lr", "temperature", "lam", "threshold", "beta1", "beta2", "adam_eps", "pamr_sigma_floor",
}
_STR_KEYS = {"aggregation", "projection"}
# "lambda" is accepted as an alias for "lam" in config files and flags.
KNOWN_KEYS = _BOOL_KEYS | _INT_KEYS | _FLOAT_KEYS | _STR_KEYS | {"pamr_dilations"}


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    engine: EngineOptions = field(default_factory=EngineOptions)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self.train)
        d.update(dataclasses.asdict(self.engine))
        d["pamr_dilations"] = list(self.engine.pamr_dilations)
        return d

    def set_key(self, key: str, value) -> None:
        if key == "lambda":
            key = "lam"
        if key not in KNOWN_KEYS:
            raise KeyError(f"unknown config key {key!r}")
        if isinstance(value, str):
            value = _parse_value(key, value)
        target = self.train if hasattr(self.train, key) else self.engine
        setattr(target, key, value)

    @classmethod
    def from_file(cls, path: str | os.PathLike, base: "RunConfig | None" = None) -> "RunConfig":
        cfg = base if base is not None else cls()
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError(f"{os.fspath(path)}:{lineno}: expected 'key = value'")
                key, _, val = line.partition("=")
                try:
                    cfg.set_key(key.strip(), val.strip())
                except KeyError as exc:
                    raise ValueError(f"{os.fspath(path)}:{lineno}: {exc.args[0]}") from None
        return cfg


def _parse_value(key: str, text: str):
    if key in _BOOL_KEYS:
        low = text.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {text!r}")
    if key in _INT_KEYS:
        return int(text)
    if key in _FLOAT_KEYS:
        return float(text)
    if key == "pamr_dilations":
        return tuple(int(v) for v in text.replace(",", " ").split())
    return text
