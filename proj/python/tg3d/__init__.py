import json

from ._tg3d import (
    ClipModel,
    ConfigError,
    DiffusionModel,
    Generator,
    PoseExtractor,
    analytic_scene,
    derive_seed,
    diversity,
    invert,
    kid,
    read_png,
    resolve_config,
    sample_generator,
    style_reference,
    write_png,
)

__all__ = [
    "ClipModel",
    "ConfigError",
    "DiffusionModel",
    "Generator",
    "PoseExtractor",
    "analytic_scene",
    "config",
    "derive_seed",
    "diversity",
    "invert",
    "kid",
    "read_png",
    "resolve_config",
    "sample_generator",
    "style_reference",
    "write_png",
]


def config(path="", overrides=()):
    """Resolved configuration tree as a dict."""
    return json.loads(resolve_config(path, list(overrides)))
