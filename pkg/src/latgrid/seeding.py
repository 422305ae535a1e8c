"""Master-seed fan-out into named, independent component streams."""
from __future__ import annotations

import numpy as np
import torch


def spawn_rngs(master_seed: int, names):
    """One independent numpy Generator per name, keyed by position."""
    children = np.random.SeedSequence(master_seed).spawn(len(names))
    return {name: np.random.default_rng(ss) for name, ss in zip(names, children)}


def derive_seed(master_seed: int, tag: str) -> int:
    """Stable 31-bit integer seed for libraries that want a plain int."""
    ss = np.random.SeedSequence([master_seed, sum(tag.encode())])
    return int(ss.generate_state(1)[0] & 0x7FFFFFFF)


def seed_torch(master_seed: int, tag: str = "torch"):
    torch.manual_seed(derive_seed(master_seed, tag))
