"""Hypergraph-enhanced real-time detector: Python bindings."""

import json

from ._core import (
    Network,
    ShapeError,
    WeightFileError,
    decode,
    make_scene,
    nms,
    normalize_config,
    participation,
    preset_config,
    toy_train,
)
from ._core import profile as _profile
from ._core import reference_checks as _reference_checks

__all__ = [
    "Network",
    "ShapeError",
    "WeightFileError",
    "build",
    "config",
    "decode",
    "make_scene",
    "nms",
    "participation",
    "profile",
    "reference_checks",
    "toy_train",
]


def config(variant="n", **overrides):
    """Preset config as a dict, with top-level fields replaced by overrides."""
    cfg = json.loads(preset_config(variant))
    cfg.update(overrides)
    return json.loads(normalize_config(json.dumps(cfg)))


def build(variant="n", seed=0, **overrides):
    net = Network(json.dumps(config(variant, **overrides)))
    net.init(seed)
    return net


def profile(cfg, size=640):
    if isinstance(cfg, dict):
        cfg = json.dumps(cfg)
    return json.loads(_profile(cfg, size))


def reference_checks():
    return json.loads(_reference_checks())
