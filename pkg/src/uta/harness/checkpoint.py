"""Checkpoints in the weight-container format (see ``uta.weights``).

Array names: ``model.<state_dict key>`` for parameters and buffers and
``optim.<param name>.momentum_buffer`` for SGD state. The metadata carries
the format version, variant, epoch, global step, the config and the data
RNG state.
"""
from __future__ import annotations

from dataclasses import asdict

import torch

from uta.core import Config
from uta.harness.model import build_model
from uta.weights import WeightFileError, load_arrays, save_arrays

FORMAT = 1


def save_checkpoint(path, model, optimizer=None, epoch=0, step=0, rng_state=None, variant="uta"):
    arrays = {f"model.{k}": v for k, v in model.state_dict().items()}
    if optimizer is not None:
        names = {id(p): n for n, p in model.named_parameters()}
        for group in optimizer.param_groups:
            for p in group["params"]:
                buf = optimizer.state.get(p, {}).get("momentum_buffer")
                if buf is not None:
                    arrays[f"optim.{names[id(p)]}.momentum_buffer"] = buf
    meta = {
        "format": FORMAT,
        "variant": variant,
        "epoch": epoch,
        "step": step,
        "config": asdict(model.cfg),
        "rng_state": rng_state,
    }
    save_arrays(path, arrays, meta)


def load_checkpoint(path, optimizer_factory=None, variant=None):
    """Rebuild the model (and optionally an optimizer) from ``path``.

    Returns ``(model, optimizer_or_None, meta)``.
    """
    arrays, meta = load_arrays(path)
    if meta.get("format") != FORMAT:
        raise WeightFileError(f"{path}: unsupported checkpoint format {meta.get('format')}")
    cfg = Config(**{**meta["config"], "backbone_weights": ""})
    variant = variant or meta.get("variant", "uta")
    model = build_model(cfg, variant)
    state = {k[len("model."):]: torch.from_numpy(v) for k, v in arrays.items() if k.startswith("model.")}
    model.load_state_dict(state, strict=True)
    model.cfg = Config(**meta["config"])
    optimizer = None
    if optimizer_factory is not None:
        optimizer = optimizer_factory(model)
        params = dict(model.named_parameters())
        for key, v in arrays.items():
            if key.startswith("optim.") and key.endswith(".momentum_buffer"):
                name = key[len("optim."):-len(".momentum_buffer")]
                optimizer.state[params[name]]["momentum_buffer"] = torch.from_numpy(v).clone()
    return model, optimizer, meta
