"""Versioned binary checkpoint container: named arrays + JSON metadata header."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

FORMAT_VERSION = 1
_META_KEY = "__meta__"


def save_checkpoint(path, arrays: dict, meta: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = json.dumps({"format_version": FORMAT_VERSION, **meta})
    payload = {k: np.asarray(v) for k, v in arrays.items()}
    if _META_KEY in payload:
        raise ValueError(f"array name {_META_KEY!r} is reserved")
    np.savez_compressed(path, **payload, **{_META_KEY: np.array(header)})
    return path


def load_checkpoint(path):
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z[_META_KEY]))
        if meta.pop("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version in {path}")
        arrays = {k: z[k] for k in z.files if k != _META_KEY}
    return arrays, meta


def module_arrays(module: torch.nn.Module) -> dict:
    return {name: tensor.detach().cpu().numpy()
            for name, tensor in module.state_dict().items()}


def load_module_arrays(module: torch.nn.Module, arrays: dict):
    state = {name: torch.as_tensor(arr) for name, arr in arrays.items()}
    module.load_state_dict(state)
    return module
