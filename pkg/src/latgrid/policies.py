"""Fixed behavior policies used by the world-model fidelity protocol.

Each maps an EnvState to an action distribution over the legal action set:
a uniform random walk (empty), a forward-biased walk that never leaves the
right half once it crosses the wall (crossing), and a shortest-path controller
that picks up the key, opens the door and heads to the goal, replanning every
step so slips cannot derail it (door-key).
"""
from __future__ import annotations

from collections import deque

import numpy as np

from .gridworld import DIR_VEC, Action, Direction, DoorState, EnvState, action_count

FORWARD_BIAS = 0.5


def random_policy(state: EnvState) -> np.ndarray:
    return np.full(3, 1.0 / 3.0)


def _wall_column(layout) -> int:
    cols = {x for (x, y) in layout.wall_cells if 1 <= x < layout.width - 1
            and 1 <= y < layout.height - 1}
    if len(cols) != 1:
        raise ValueError("expected a single interior wall column")
    return cols.pop()


def right_half_explorer(state: EnvState) -> np.ndarray:
    """Forward-biased random walk that refuses to step back across the wall."""
    wall_col = _wall_column(state.layout)
    probs = np.array([0.25, 0.25, FORWARD_BIAS])
    ahead = (state.agent_pos[0] + DIR_VEC[state.agent_dir][0],
             state.agent_pos[1] + DIR_VEC[state.agent_dir][1])
    moves = ahead not in state.layout.wall_cells and \
        1 <= ahead[0] < state.layout.width - 1 and 1 <= ahead[1] < state.layout.height - 1
    if moves and state.agent_pos[0] >= wall_col and ahead[0] < wall_col:
        probs[Action.FORWARD] = 0.0
        probs /= probs.sum()
    return probs


def _passable(state: EnvState, cell) -> bool:
    layout = state.layout
    x, y = cell
    if not (1 <= x < layout.width - 1 and 1 <= y < layout.height - 1):
        return False
    if cell in layout.wall_cells:
        return False
    if cell == layout.door_cell and state.door_state != DoorState.OPEN:
        return False
    return True


def _first_action_to(state: EnvState, targets) -> Action | None:
    """First action of a BFS-shortest (pos, dir) path into `targets`."""
    start = (state.agent_pos, int(state.agent_dir))
    if start in targets:
        return None
    queue = deque([start])
    first = {start: None}
    while queue:
        pos, d = queue.popleft()
        for action in (Action.LEFT, Action.RIGHT, Action.FORWARD):
            if action == Action.LEFT:
                nxt = (pos, (d - 1) % 4)
            elif action == Action.RIGHT:
                nxt = (pos, (d + 1) % 4)
            else:
                ahead = (pos[0] + DIR_VEC[Direction(d)][0], pos[1] + DIR_VEC[Direction(d)][1])
                if not _passable(state, ahead):
                    continue
                nxt = (ahead, d)
            if nxt in first:
                continue
            inherited = first[(pos, d)]
            first[nxt] = action if inherited is None else inherited
            if nxt in targets:
                return first[nxt]
            queue.append(nxt)
    return None


def _facing_targets(state: EnvState, cell):
    out = set()
    for d in range(4):
        dx, dy = DIR_VEC[Direction(d)]
        pos = (cell[0] - dx, cell[1] - dy)
        if _passable(state, pos):
            out.add((pos, d))
    return out


def goal_navigator(state: EnvState) -> np.ndarray:
    """Deterministic phase-aware shortest-path controller (door-key)."""
    layout = state.layout
    probs = np.zeros(action_count(layout.env_id))
    ahead = (state.agent_pos[0] + DIR_VEC[state.agent_dir][0],
             state.agent_pos[1] + DIR_VEC[state.agent_dir][1])

    if not state.carrying_key:
        if ahead == layout.key_cell:
            probs[Action.PICKUP] = 1.0
            return probs
        action = _first_action_to(state, _facing_targets(state, layout.key_cell))
    elif state.door_state != DoorState.OPEN:
        if ahead == layout.door_cell:
            probs[Action.USE] = 1.0
            return probs
        action = _first_action_to(state, _facing_targets(state, layout.door_cell))
    else:
        action = _first_action_to(state, {(layout.goal_cell, d) for d in range(4)})

    probs[action if action is not None else Action.FORWARD] = 1.0
    return probs


BEHAVIOR_POLICIES = {
    "empty": random_policy,
    "crossing": right_half_explorer,
    "door_key": goal_navigator,
}


def behavior_policy_for(env_id: str):
    return BEHAVIOR_POLICIES[env_id]


def policy_matrix(states, policy, n_actions: int) -> np.ndarray:
    """(S, A) action distributions for a list of manifest states."""
    mat = np.zeros((len(states), n_actions))
    for i, st in enumerate(states):
        p = policy(st)
        mat[i, : len(p)] = p
    if not np.allclose(mat.sum(axis=1), 1.0):
        raise ValueError("policy rows must sum to 1")
    return mat
