"""Binary neural networks trained with a contrastive mutual-information objective.

Thin wrapper over the C++ core; see the README for the command-line tool.
"""

import json

from ._core import (
    BnnError,
    Model,
    binarized_activation_mi,
    critic,
    layer_weight,
    mutual_information,
    nce_loss,
    sign_l1_identity,
    synth,
    train,
    verify_nce_bound,
    xnor_matmul,
)
from ._core import preset as _preset_json
from ._core import resolve_config as _resolve_json


def preset(name):
    """A named preset as a dict."""
    return json.loads(_preset_json(name))


def resolve_config(preset="desk", overrides=()):
    """Preset plus ``key=value`` overrides, as a dict."""
    return json.loads(_resolve_json(preset, list(overrides)))


__all__ = [
    "BnnError",
    "Model",
    "binarized_activation_mi",
    "critic",
    "layer_weight",
    "mutual_information",
    "nce_loss",
    "preset",
    "resolve_config",
    "sign_l1_identity",
    "synth",
    "train",
    "verify_nce_bound",
    "xnor_matmul",
]
