"""INI-style run configuration shared by every CLI subcommand.

::

    [grid]
    M = 12
    N = 12
    m = 4
    n = 4
    lambda = 0.5
    alpha1 = 0.5
    alpha2 = 2.0

    [model]
    backbone_channels = 16,32,64,96,128
    reduced_channels = 8
    align_size = 9
    head_width = 768
    tap_strides = 8,16,32
    stage_depth = 1
    short_side = 256
    input_mean = 0.485,0.456,0.406
    input_std = 0.229,0.224,0.225

    [train]
    epochs = 80
    lr = 0.0001
    crops_per_batch = 64
    seed = 0
    val_fraction = 0.1
    brightness = 0.8,1.2
    contrast = 0.8,1.2
    saturation = 0.8,1.2
    hue = -0.05,0.05
    flip_prob = 0.5

    [paths]
    annotations = data/train/annotations.txt
    test_annotations = data/test/annotations.txt
    checkpoint = runs/model.ckpt
    report = runs/report.txt

Every key is optional; missing keys keep the defaults shown.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Optional, Union

from .data.transforms import AugmentConfig
from .geometry import GridSpec
from .model import ModelConfig
from .training import TrainConfig

PATH_KEYS = ("annotations", "test_annotations", "checkpoint", "report", "out_dir")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    grid: GridSpec = field(default_factory=GridSpec)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    paths: Dict[str, str] = field(default_factory=dict)


def _ints(text: str):
    return tuple(int(v) for v in text.split(","))


def _floats(text: str):
    return tuple(float(v) for v in text.split(","))


_GRID_KEYS: Dict[str, tuple] = {
    "M": ("M", int), "N": ("N", int), "m": ("m", int), "n": ("n", int),
    "lambda": ("lam", float), "alpha1": ("alpha1", float), "alpha2": ("alpha2", float),
}
_MODEL_KEYS: Dict[str, tuple] = {
    "backbone_channels": ("backbone_channels", _ints), "reduced_channels": ("reduced_channels", int),
    "align_size": ("align_size", int), "head_width": ("head_width", int),
    "tap_strides": ("tap_strides", _ints), "stage_depth": ("stage_depth", int),
    "short_side": ("short_side", int), "input_mean": ("input_mean", _floats), "input_std": ("input_std", _floats),
}
_TRAIN_KEYS: Dict[str, tuple] = {
    "epochs": ("epochs", int), "lr": ("lr", float), "crops_per_batch": ("crops_per_batch", int),
    "seed": ("seed", int), "val_fraction": ("val_fraction", float),
}
_AUGMENT_KEYS: Dict[str, tuple] = {
    "brightness": ("brightness", _floats), "contrast": ("contrast", _floats),
    "saturation": ("saturation", _floats), "hue": ("hue", _floats), "flip_prob": ("flip_prob", float),
}


def _section_values(parser: configparser.ConfigParser, section: str, keys: Dict[str, tuple],
                    source: str) -> Dict[str, object]:
    out = {}
    if not parser.has_section(section):
        return out
    for key, raw in parser.items(section):
        if key not in keys:
            raise ConfigError(f"{source}: [{section}] unknown key {key!r}")
        attr, conv = keys[key]
        try:
            out[attr] = conv(raw.strip())
        except ValueError:
            raise ConfigError(f"{source}: [{section}] {key} = {raw!r} is not valid") from None
    return out


def _build(factory: Callable, values: Dict[str, object], section: str, source: str, base=None):
    try:
        return dataclasses.replace(base, **values) if base is not None else factory(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: [{section}] {exc}") from None


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # M and m are different keys
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    known = {"grid", "model", "train", "paths"}
    for section in parser.sections():
        if section not in known:
            raise ConfigError(f"{source}: unknown section [{section}]")

    grid = _build(GridSpec, _section_values(parser, "grid", _GRID_KEYS, source), "grid", source)
    model = _build(ModelConfig, _section_values(parser, "model", _MODEL_KEYS, source), "model", source)
    aug_values = _section_values(parser, "train", {**_TRAIN_KEYS, **_AUGMENT_KEYS}, source)
    train_values = {k: v for k, v in aug_values.items() if k in {a for a, _ in _TRAIN_KEYS.values()}}
    aug_only = {k: v for k, v in aug_values.items() if k not in train_values}
    augment = _build(AugmentConfig, aug_only, "train", source)
    train = _build(TrainConfig, {**train_values, "augment": augment}, "train", source)
    _check_train(train, source)

    paths = {}
    if parser.has_section("paths"):
        for key, raw in parser.items("paths"):
            if key not in PATH_KEYS:
                raise ConfigError(f"{source}: [paths] unknown key {key!r}")
            p = Path(raw.strip())
            # relative paths resolve against the config file's directory
            if not p.is_absolute() and source not in ("<config>",):
                p = Path(source).parent / p
            paths[key] = str(p)
    return RunConfig(grid, model, train, paths)


def _check_train(train: TrainConfig, source: str) -> None:
    if train.epochs < 0:
        raise ConfigError(f"{source}: [train] epochs must be >= 0")
    if train.lr <= 0:
        raise ConfigError(f"{source}: [train] lr must be positive")
    if train.crops_per_batch < 1:
        raise ConfigError(f"{source}: [train] crops_per_batch must be >= 1")
    if not 0.0 <= train.val_fraction < 1.0:
        raise ConfigError(f"{source}: [train] val_fraction must be in [0, 1)")
    for name in ("brightness", "contrast", "saturation", "hue"):
        rng = getattr(train.augment, name)
        if len(rng) != 2 or rng[0] > rng[1]:
            raise ConfigError(f"{source}: [train] {name} must be 'low,high' with low <= high")
    if not 0.0 <= train.augment.flip_prob <= 1.0:
        raise ConfigError(f"{source}: [train] flip_prob must be in [0, 1]")


def load_config(path: Optional[Union[str, Path]]) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    return parse_config(text, str(path))
