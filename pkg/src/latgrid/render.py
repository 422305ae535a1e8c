"""Pixel rendering for gridworld states.

Rendering is a pure function of the environment state: equal states produce
bit-identical observations. All colors are multiples of 1/255 so float
observations round-trip exactly through uint8 storage.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

# Fixed palette, frozen by golden tests. uint8 RGB.
FLOOR = (0, 0, 0)
WALL = (100, 100, 100)
GOAL = (0, 200, 0)
AGENT = (230, 0, 0)
KEY = (220, 200, 50)
DOOR_LOCKED = (120, 70, 20)
DOOR_CLOSED = (190, 120, 40)
DOOR_OPEN = (190, 120, 40)  # drawn as a frame, floor visible through it

# Tile size in pixels per scale profile, chosen so full-scale observation
# dims land on 48/54/64 for the 6/9/8-cell grids.
TILE_SIZE = {
    "full": {"empty": 8, "crossing": 6, "door_key": 8},
    "desk": {"empty": 4, "crossing": 3, "door_key": 4},
}


def tile_size_for(env_id: str, scale: str) -> int:
    try:
        return TILE_SIZE[scale][env_id]
    except KeyError:
        raise ValueError(f"unknown scale/env combination: {scale!r}/{env_id!r}") from None


@lru_cache(maxsize=None)
def triangle_mask(size: int, direction: int) -> np.ndarray:
    """Boolean (size, size) wedge pointing N/E/S/W for direction 0/1/2/3."""
    i, j = np.mgrid[0:size, 0:size]
    m = size - 1
    east = np.abs(2 * i - m) <= (m - j)
    if direction == 1:  # E
        mask = east
    elif direction == 3:  # W
        mask = east[:, ::-1]
    else:
        south = np.abs(2 * j - m) <= (m - i)
        mask = south if direction == 2 else south[::-1, :]
    mask = mask.copy()
    mask.setflags(write=False)
    return mask


@lru_cache(maxsize=None)
def key_mask(size: int) -> np.ndarray:
    """Center block plus all four corners.

    Every agent wedge leaves at least two corners uncovered, so a key under
    the agent stays visible and carrying/not-carrying render differently.
    """
    mask = np.zeros((size, size), dtype=bool)
    a, b = size // 3, size - size // 3
    mask[a:b, a:b] = True
    for i in (0, size - 1):
        for j in (0, size - 1):
            mask[i, j] = True
    mask.setflags(write=False)
    return mask


@lru_cache(maxsize=None)
def frame_mask(size: int) -> np.ndarray:
    mask = np.ones((size, size), dtype=bool)
    mask[1 : size - 1, 1 : size - 1] = False
    mask.setflags(write=False)
    return mask


def render_state(state, tile: int) -> np.ndarray:
    """Render an EnvState to an (H, W, 3) float32 array with values in [0, 1]."""
    layout = state.layout
    h, w = layout.height, layout.width
    canvas = np.zeros((h * tile, w * tile, 3), dtype=np.uint8)
    canvas[:] = FLOOR

    def blit(cell, color, mask=None):
        x, y = cell
        view = canvas[y * tile : (y + 1) * tile, x * tile : (x + 1) * tile]
        if mask is None:
            view[:] = color
        else:
            view[mask] = color

    for cell in layout.wall_cells:
        blit(cell, WALL)
    blit(layout.goal_cell, GOAL)

    if layout.key_cell is not None and not state.carrying_key:
        blit(layout.key_cell, KEY, key_mask(tile))
    if layout.door_cell is not None:
        ds = state.door_state
        if ds == 0:  # locked
            blit(layout.door_cell, DOOR_LOCKED)
        elif ds == 2:  # closed, unlocked
            blit(layout.door_cell, DOOR_CLOSED)
        else:  # open
            blit(layout.door_cell, DOOR_OPEN, frame_mask(tile))

    blit(state.agent_pos, AGENT, triangle_mask(tile, int(state.agent_dir)))
    return canvas.astype(np.float32) / 255.0
