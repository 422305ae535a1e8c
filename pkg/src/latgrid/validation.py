"""Input validation helpers shared by the estimators."""
from __future__ import annotations

import numpy as np


def check_observations(X, expected_hw=None) -> np.ndarray:
    """Validate an (N, H, W, 3) observation batch.

    Accepts float arrays in [0, 1] or uint8 (converted lazily by callers);
    returns the array unchanged apart from np.asarray.
    """
    X = np.asarray(X)
    if X.ndim != 4 or X.shape[-1] != 3:
        raise ValueError(f"expected (N, H, W, 3) observations, got shape {X.shape}")
    if X.shape[0] == 0:
        raise ValueError("empty observation batch")
    if expected_hw is not None and tuple(X.shape[1:3]) != tuple(expected_hw):
        raise ValueError(f"expected {expected_hw} observations, got {X.shape[1:3]}")
    if X.dtype not in (np.uint8, np.float32, np.float64):
        raise ValueError(f"unsupported observation dtype {X.dtype}")
    return X


def as_float_batch(X, idx=None) -> np.ndarray:
    """Materialize (a slice of) observations as float32 in [0, 1]."""
    batch = X if idx is None else X[idx]
    if batch.dtype == np.uint8:
        return batch.astype(np.float32) / 255.0
    return batch.astype(np.float32, copy=False)


def check_matrix(Z, dim=None, name="latents") -> np.ndarray:
    Z = np.asarray(Z, dtype=np.float32)
    if Z.ndim == 1:
        Z = Z[None, :]
    if Z.ndim != 2:
        raise ValueError(f"expected 2-D {name}, got shape {Z.shape}")
    if dim is not None and Z.shape[1] != dim:
        raise ValueError(f"expected {name} of dim {dim}, got {Z.shape[1]}")
    if not np.isfinite(Z).all():
        raise ValueError(f"non-finite values in {name}")
    return Z
