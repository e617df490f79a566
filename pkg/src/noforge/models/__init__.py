"""Operator models, their configurations and checkpoints."""
from __future__ import annotations

import numpy as np

from ..errors import InvalidConfig
from .base import OperatorModel
from .configs import (CONFIG_TYPES, MODEL_KINDS, DeepOnetConfig, FfnoConfig, FnoConfig, MgfnoConfig,
                      config_from_dict, full_config, toy_config)
from .deeponet import DeepONet
from .fno import FFNO3d, FNO3d
from .mgfno import MGFNO, decompose, global_context, reassemble

MODEL_TYPES = {"fno": FNO3d, "ffno": FFNO3d, "mgfno": MGFNO, "deeponet": DeepONet}


def build_model(kind: str, config=None, seed: int = 0, dtype=np.float32, meta: bool = False) -> OperatorModel:
    """Construct a model; ``meta=True`` skips allocation (shapes only)."""
    if kind not in MODEL_TYPES:
        raise InvalidConfig(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")
    if config is None:
        config = full_config(kind)
    elif isinstance(config, dict):
        config = config_from_dict(kind, config)
    rng = None if meta else np.random.default_rng(seed)
    return MODEL_TYPES[kind](config, rng, dtype)


from .checkpoint import load_checkpoint, load_into, save_checkpoint  # noqa: E402

__all__ = [
    "OperatorModel", "FNO3d", "FFNO3d", "MGFNO", "DeepONet", "FnoConfig", "FfnoConfig", "MgfnoConfig",
    "DeepOnetConfig", "CONFIG_TYPES", "MODEL_KINDS", "build_model", "config_from_dict", "full_config",
    "toy_config", "decompose", "reassemble", "global_context", "save_checkpoint", "load_checkpoint",
    "load_into",
]
