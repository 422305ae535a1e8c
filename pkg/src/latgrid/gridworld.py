"""Native empty / crossing / door-key gridworlds with pixel observations.

Environments are value-semantic: `step` is a pure function of (state, action,
rng) and returns a fresh state. The crossing and door-key environments have a
10% action slip; empty is deterministic. Layouts are reproducible from a seed
and can be re-randomized for continual experiments while goal and outer walls
stay fixed.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from enum import IntEnum

import numpy as np

from .render import render_state, tile_size_for

ENV_IDS = ("empty", "crossing", "door_key")
SLIP_PROB = 0.1


class Action(IntEnum):
    LEFT = 0
    RIGHT = 1
    FORWARD = 2
    PICKUP = 3
    USE = 4


class Direction(IntEnum):
    N = 0
    E = 1
    S = 2
    W = 3


class DoorState(IntEnum):
    LOCKED = 0
    OPEN = 1
    CLOSED = 2  # unlocked but shut


# (dx, dy) with y growing downward.
DIR_VEC = {Direction.N: (0, -1), Direction.E: (1, 0), Direction.S: (0, 1), Direction.W: (-1, 0)}


class ConfigurationError(ValueError):
    pass


class UsageError(RuntimeError):
    pass


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class GridLayout:
    env_id: str
    width: int
    height: int
    wall_cells: frozenset
    goal_cell: tuple
    key_cell: tuple | None
    door_cell: tuple | None
    door_init: DoorState | None
    agent_start: tuple
    agent_start_dir: Direction
    layout_seed: int

    def is_wall(self, cell) -> bool:
        return cell in self.wall_cells

    def floor_cells(self):
        """Interior non-wall, non-door cells (goal and key cells included), row-major."""
        out = []
        for y in range(1, self.height - 1):
            for x in range(1, self.width - 1):
                c = (x, y)
                if c not in self.wall_cells and c != self.door_cell:
                    out.append(c)
        return out


@dataclass(frozen=True)
class EnvState:
    layout: GridLayout
    agent_pos: tuple
    agent_dir: Direction
    carrying_key: bool
    door_state: DoorState | None
    t: int
    T_max: int
    terminated: bool

    def config_key(self):
        """Hashable dynamic configuration (ignores t / T_max bookkeeping)."""
        return (self.agent_pos, int(self.agent_dir), self.carrying_key,
                None if self.door_state is None else int(self.door_state))


GRID_CELLS = {"empty": 6, "crossing": 9, "door_key": 8}


def obs_hw(env_id: str, scale: str = "full"):
    """Observation (H, W) for an environment at a scale profile."""
    if env_id not in GRID_CELLS:
        raise ConfigurationError(f"unknown env_id {env_id!r}; expected one of {ENV_IDS}")
    side = GRID_CELLS[env_id] * tile_size_for(env_id, scale)
    return (side, side)


def action_count(env_id: str) -> int:
    return 5 if env_id == "door_key" else 3


def actions_for(env_id: str):
    return [Action(a) for a in range(action_count(env_id))]


def is_stochastic(env_id: str) -> bool:
    return env_id in ("crossing", "door_key")


def _border_walls(width, height):
    walls = set()
    for x in range(width):
        walls.add((x, 0))
        walls.add((x, height - 1))
    for y in range(height):
        walls.add((0, y))
        walls.add((width - 1, y))
    return walls


def make_layout(env_id: str, layout_seed: int = 0) -> GridLayout:
    """Seed-reproducible base layout for an environment."""
    if env_id not in ENV_IDS:
        raise ConfigurationError(f"unknown env_id {env_id!r}; expected one of {ENV_IDS}")
    rng = np.random.default_rng([layout_seed, hash(env_id) & 0xFFFF])
    if env_id == "empty":
        w = h = 6
        walls = _border_walls(w, h)
        return GridLayout(env_id, w, h, frozenset(walls), (4, 4), None, None, None,
                          (1, 1), Direction.E, layout_seed)
    if env_id == "crossing":
        w = h = 9
        walls = _border_walls(w, h)
        wall_col = int(rng.integers(3, 6))
        gap_row = int(rng.integers(1, 8))
        for y in range(1, 8):
            if y != gap_row:
                walls.add((wall_col, y))
        return GridLayout(env_id, w, h, frozenset(walls), (7, 7), None, None, None,
                          (1, 1), Direction.E, layout_seed)
    # door_key: dividing wall pinned at column 2 in the base layout so the
    # reachable state space has its canonical size.
    w = h = 8
    walls = _border_walls(w, h)
    wall_col = 2
    door_row = int(rng.integers(1, 7))
    key_row = int(rng.integers(2, 7))  # agent start occupies (1, 1)
    for y in range(1, 7):
        if y != door_row:
            walls.add((wall_col, y))
    return GridLayout(env_id, w, h, frozenset(walls), (6, 6), (1, key_row),
                      (wall_col, door_row), DoorState.LOCKED, (1, 1), Direction.E, layout_seed)


def randomize_layout(env_id: str, seed: int, max_tries: int = 100) -> GridLayout:
    """Resample interior walls / key / door; goal and outer walls stay fixed.

    The agent start is kept in crossing and resampled in door-key. Raises
    GenerationError if no solvable layout appears within `max_tries`.
    """
    if env_id not in ("crossing", "door_key"):
        raise ConfigurationError(f"randomize_layout supports crossing/door_key, got {env_id!r}")
    for attempt in range(max_tries):
        rng = np.random.default_rng([seed, attempt, 0x51AB])
        if env_id == "crossing":
            w = h = 9
            walls = _border_walls(w, h)
            wall_col = int(rng.integers(3, 6))
            gap_row = int(rng.integers(1, 8))
            for y in range(1, 8):
                if y != gap_row:
                    walls.add((wall_col, y))
            layout = GridLayout(env_id, w, h, frozenset(walls), (7, 7), None, None, None,
                                (1, 1), Direction.E, seed)
        else:
            w = h = 8
            walls = _border_walls(w, h)
            wall_col = int(rng.integers(2, 6))
            door_row = int(rng.integers(1, 7))
            left = [(x, y) for x in range(1, wall_col) for y in range(1, 7)]
            key_cell, start = [left[i] for i in rng.choice(len(left), size=2, replace=False)]
            for y in range(1, 7):
                if y != door_row:
                    walls.add((wall_col, y))
            layout = GridLayout(env_id, w, h, frozenset(walls), (6, 6), key_cell,
                                (wall_col, door_row), DoorState.LOCKED, start, Direction.E, seed)
        if layout_solvable(layout):
            return layout
    raise GenerationError(f"no solvable {env_id} layout after {max_tries} tries (seed {seed})")


def initial_state(layout: GridLayout, T_max: int) -> EnvState:
    if T_max < 1:
        raise ConfigurationError(f"T_max must be >= 1, got {T_max}")
    return EnvState(layout, layout.agent_start, layout.agent_start_dir,
                    carrying_key=False, door_state=layout.door_init,
                    t=0, T_max=T_max, terminated=False)


def reset(env_id: str, layout_seed: int = 0, T_max: int = 10_000, scale: str = "full"):
    """Build the seeded layout and return (initial EnvState, observation)."""
    layout = make_layout(env_id, layout_seed)
    state = initial_state(layout, T_max)
    return state, observe(state, scale)


def observe(state: EnvState, scale: str = "full") -> np.ndarray:
    return render_state(state, tile_size_for(state.layout.env_id, scale))


def _cell_enterable(state: EnvState, cell) -> bool:
    layout = state.layout
    x, y = cell
    if not (0 <= x < layout.width and 0 <= y < layout.height):
        return False
    if layout.is_wall(cell):
        return False
    if cell == layout.door_cell and state.door_state != DoorState.OPEN:
        return False
    return True  # floor, goal and key cells are all walk-over


def apply_action(state: EnvState, action: Action) -> EnvState:
    """Deterministic transition core (no slip, no step accounting)."""
    layout = state.layout
    if action == Action.LEFT:
        return replace(state, agent_dir=Direction((int(state.agent_dir) - 1) % 4))
    if action == Action.RIGHT:
        return replace(state, agent_dir=Direction((int(state.agent_dir) + 1) % 4))
    ahead = tuple(np.add(state.agent_pos, DIR_VEC[state.agent_dir]))
    if action == Action.FORWARD:
        if _cell_enterable(state, ahead):
            return replace(state, agent_pos=ahead)
        return state
    if action == Action.PICKUP:
        if (layout.key_cell is not None and not state.carrying_key
                and ahead == layout.key_cell):
            return replace(state, carrying_key=True)
        return state
    if action == Action.USE:
        if layout.door_cell is None or ahead != layout.door_cell:
            return state
        ds = state.door_state
        if ds == DoorState.LOCKED:
            if state.carrying_key:
                return replace(state, door_state=DoorState.OPEN)
            return state
        return replace(state, door_state=DoorState.CLOSED if ds == DoorState.OPEN
                       else DoorState.OPEN)
    raise ConfigurationError(f"unknown action {action!r}")


def step(state: EnvState, action, rng=None, scale: str = "full", render: bool = True):
    """One environment step. Returns (state', observation, reward, done).

    In crossing/door-key a different action is enacted with probability 0.1
    (uniform over the remaining ones); `rng` is required there. Stepping a
    terminated state is a usage error.
    """
    if state.terminated:
        raise UsageError("step() called on a terminated state")
    env_id = state.layout.env_id
    action = Action(action)
    if int(action) >= action_count(env_id):
        raise ConfigurationError(f"action {action!r} not available in {env_id}")
    if is_stochastic(env_id):
        if rng is None:
            raise UsageError(f"{env_id} is stochastic; an rng is required")
        if rng.random() < SLIP_PROB:
            others = [a for a in actions_for(env_id) if a != action]
            action = others[int(rng.integers(len(others)))]
    nxt = apply_action(state, action)
    t = state.t + 1
    reward = 0.0
    done = False
    if nxt.agent_pos == state.layout.goal_cell:
        reward = 1.0 - 0.9 * t / state.T_max
        done = True
    elif t >= state.T_max:
        done = True
    nxt = replace(nxt, t=t, terminated=done)
    obs = observe(nxt, scale) if render else None
    return nxt, obs, reward, done


def enumerate_states(env_id: str, layout_seed: int = 0, scale: str = "full",
                     layout: GridLayout | None = None):
    """Exhaustive reachable configurations and their rendered observations.

    Enumeration is constructive (region x phase x direction) in a fixed,
    deterministic order; goal cells carry all four directions (turning in
    place is part of the state graph even on the terminal cell).
    """
    if layout is None:
        layout = make_layout(env_id, layout_seed)
    states = []

    def add(pos, d, carrying, door):
        st = EnvState(layout, pos, Direction(d), carrying, door,
                      t=0, T_max=10_000, terminated=(pos == layout.goal_cell))
        states.append(st)

    if env_id in ("empty", "crossing"):
        for pos in layout.floor_cells():
            for d in range(4):
                add(pos, d, False, None)
    elif env_id == "door_key":
        wall_col = layout.door_cell[0]
        floors = layout.floor_cells()
        left = [c for c in floors if c[0] < wall_col]
        everywhere = sorted(floors + [layout.door_cell], key=lambda c: (c[1], c[0]))
        phases = [(False, DoorState.LOCKED, left),
                  (True, DoorState.LOCKED, left),
                  (True, DoorState.OPEN, everywhere),
                  (True, DoorState.CLOSED, floors)]
        for carrying, door, cells in phases:
            for pos in cells:
                for d in range(4):
                    add(pos, d, carrying, door)
    else:
        raise ConfigurationError(f"unknown env_id {env_id!r}")

    tile = tile_size_for(env_id, scale)
    return [(st, render_state(st, tile)) for st in states]


def layout_solvable(layout: GridLayout) -> bool:
    """Breadth-first reachability of the goal through the deterministic core."""
    start = initial_state(layout, T_max=1)
    seen = {start.config_key()}
    frontier = [start]
    acts = actions_for(layout.env_id)
    while frontier:
        nxt_frontier = []
        for st in frontier:
            if st.agent_pos == layout.goal_cell:
                return True
            for a in acts:
                ns = apply_action(st, a)
                k = ns.config_key()
                if k not in seen:
                    seen.add(k)
                    nxt_frontier.append(ns)
        frontier = nxt_frontier
    return False


def export_manifest(env_id: str, layout_seed: int = 0, scale: str = "full", path=None):
    """State-index manifest (JSON): index -> serialized EnvState."""
    entries = []
    for idx, (st, _) in enumerate(enumerate_states(env_id, layout_seed, scale)):
        entries.append({
            "index": idx,
            "agent_pos": list(st.agent_pos),
            "agent_dir": int(st.agent_dir),
            "carrying_key": st.carrying_key,
            "door_state": None if st.door_state is None else int(st.door_state),
            "terminal": st.terminated,
        })
    manifest = {"env_id": env_id, "layout_seed": layout_seed, "scale": scale,
                "count": len(entries), "states": entries}
    if path is not None:
        with open(path, "w") as f:
            json.dump(manifest, f, indent=1)
    return manifest


class GridworldEnv:
    """Stateful convenience wrapper around the pure core (used by the RL loop)."""

    def __init__(self, env_id: str, layout_seed: int = 0, T_max: int = 10_000,
                 scale: str = "full", rng=None, layout: GridLayout | None = None):
        self.env_id = env_id
        self.T_max = T_max
        self.scale = scale
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.layout = layout if layout is not None else make_layout(env_id, layout_seed)
        self.state = None

    @property
    def n_actions(self) -> int:
        return action_count(self.env_id)

    def reset(self):
        self.state = initial_state(self.layout, self.T_max)
        return observe(self.state, self.scale)

    def step(self, action):
        self.state, obs, reward, done = step(self.state, action, self.rng, self.scale)
        return obs, reward, done

    def set_layout(self, layout: GridLayout):
        """Swap the layout (continual mode); takes effect on the next reset."""
        self.layout = layout
