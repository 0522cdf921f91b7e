"""Seeded toy grid environments with a train/test level split.

Two families: ``GridMaze`` (perfect maze from randomized DFS carving, start in
a seeded corner, goal at the cell farthest from it) and ``LavaRun`` (three-row corridor with
hazard cells, start on the left, goal on the right). Observations are one-hot
planes ``[wall, agent, goal, hazard]`` flattened channel-major.
"""

from __future__ import annotations

import dataclasses
from collections import deque
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .rng import stable_key

EMPTY, WALL, HAZARD = 0, 1, 2
UP, DOWN, LEFT, RIGHT, NOOP = range(5)
ACTION_COUNT = 5
MOVES = {UP: (-1, 0), DOWN: (1, 0), LEFT: (0, -1), RIGHT: (0, 1), NOOP: (0, 0)}
CHANNELS = 4
HAZARD_DENSITY = 0.2


class EnvId(str, Enum):
    GRID_MAZE = "GridMaze"
    LAVA_RUN = "LavaRun"


class UnsolvableLevelError(RuntimeError):
    pass


class EpisodeDoneError(RuntimeError):
    pass


@dataclass(frozen=True)
class EnvSpec:
    env_id: EnvId = EnvId.GRID_MAZE
    grid_size: int = 7
    max_steps: int = 64
    channels: int = CHANNELS
    train_level_count: int = 40
    test_level_count: int = 100

    def __post_init__(self):
        object.__setattr__(self, "env_id", EnvId(self.env_id))
        if self.grid_size < 5 or self.grid_size % 2 == 0:
            raise ValueError(f"grid_size must be odd and >= 5, got {self.grid_size}")
        if self.max_steps < 2 * self.grid_size:
            raise ValueError(f"max_steps must be >= 2*grid_size, got {self.max_steps}")
        if self.channels != CHANNELS:
            raise ValueError(f"channels must be {CHANNELS}")

    @property
    def obs_dim(self) -> int:
        return self.grid_size * self.grid_size * self.channels

    @property
    def action_count(self) -> int:
        return ACTION_COUNT

    @property
    def train_levels(self) -> range:
        return range(self.train_level_count)

    @property
    def test_levels(self) -> range:
        return range(self.train_level_count, self.train_level_count + self.test_level_count)


@dataclass(frozen=True)
class Level:
    env_id: EnvId
    seed: int
    layout: np.ndarray  # (n, n) of EMPTY / WALL / HAZARD
    start: tuple[int, int]
    goal: tuple[int, int]

    def fingerprint(self) -> bytes:
        return self.layout.tobytes() + bytes(self.start) + bytes(self.goal)


@dataclass(frozen=True)
class EnvState:
    level: Level
    agent_pos: tuple[int, int]
    step_count: int = 0
    done: bool = False


def _level_rng(env_id: EnvId, seed: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(stable_key("level:" + env_id.value),))
    return np.random.Generator(np.random.PCG64(ss))


def _neighbors(pos, n):
    r, c = pos
    for a in (UP, DOWN, LEFT, RIGHT):
        dr, dc = MOVES[a]
        rr, cc = r + dr, c + dc
        if 0 <= rr < n and 0 <= cc < n:
            yield a, (rr, cc)


def bfs_distances(layout: np.ndarray, source: tuple[int, int]) -> np.ndarray:
    """Shortest-path step counts over non-wall, non-hazard cells; -1 if unreachable."""
    n = layout.shape[0]
    dist = np.full(layout.shape, -1, dtype=np.int64)
    dist[source] = 0
    queue = deque([source])
    while queue:
        cur = queue.popleft()
        for _, nxt in _neighbors(cur, n):
            if layout[nxt] == EMPTY and dist[nxt] < 0:
                dist[nxt] = dist[cur] + 1
                queue.append(nxt)
    return dist


def _maze_layout(n: int, rng: np.random.Generator):
    layout = np.full((n, n), WALL, dtype=np.int8)
    cells = (n - 1) // 2
    origin = (2 * int(rng.integers(cells)) + 1, 2 * int(rng.integers(cells)) + 1)
    layout[origin] = EMPTY
    stack = [origin]
    while stack:
        r, c = stack[-1]
        options = [
            (dr, dc)
            for dr, dc in ((-2, 0), (2, 0), (0, -2), (0, 2))
            if 0 < r + dr < n - 1 and 0 < c + dc < n - 1 and layout[r + dr, c + dc] == WALL
        ]
        if not options:
            stack.pop()
            continue
        dr, dc = options[rng.integers(len(options))]
        layout[r + dr // 2, c + dc // 2] = EMPTY
        layout[r + dr, c + dc] = EMPTY
        stack.append((r + dr, c + dc))
    corners = [(1, 1), (1, n - 2), (n - 2, 1), (n - 2, n - 2)]
    start = corners[int(rng.integers(4))]
    dist = bfs_distances(layout, start)
    goal = np.unravel_index(int(np.argmax(dist)), dist.shape)  # first max in row-major order
    return layout, start, (int(goal[0]), int(goal[1]))


def _lava_layout(n: int, rng: np.random.Generator):
    mid = n // 2
    base = np.full((n, n), WALL, dtype=np.int8)
    base[mid - 1 : mid + 2, 1 : n - 1] = EMPTY
    start, goal = (mid, 1), (mid, n - 2)
    density = HAZARD_DENSITY
    while True:
        for _ in range(100):
            layout = base.copy()
            mask = (rng.random((n, n)) < density) & (base == EMPTY)
            mask[start] = mask[goal] = False
            layout[mask] = HAZARD
            if bfs_distances(layout, start)[goal] >= 0:
                return layout, start, goal
        density *= 0.5


def generate_level(spec: EnvSpec, seed: int) -> Level:
    if seed < 0:
        raise ValueError(f"level seed must be >= 0, got {seed}")
    rng = _level_rng(spec.env_id, seed)
    if spec.env_id is EnvId.GRID_MAZE:
        layout, start, goal = _maze_layout(spec.grid_size, rng)
    else:
        layout, start, goal = _lava_layout(spec.grid_size, rng)
    layout.setflags(write=False)
    return Level(spec.env_id, int(seed), layout, start, goal)


def observe(state: EnvState) -> np.ndarray:
    level = state.level
    n = level.layout.shape[0]
    planes = np.zeros((CHANNELS, n, n))
    planes[0] = level.layout == WALL
    planes[1][state.agent_pos] = 1.0
    planes[2][level.goal] = 1.0
    planes[3] = level.layout == HAZARD
    return planes.reshape(-1)


def reset(spec: EnvSpec, level_seed: int, level: Level | None = None) -> tuple[EnvState, np.ndarray]:
    level = level if level is not None else generate_level(spec, level_seed)
    state = EnvState(level, level.start, 0, False)
    return state, observe(state)


def step(spec: EnvSpec, state: EnvState, action: int) -> tuple[EnvState, np.ndarray, float, bool]:
    if state.done:
        raise EpisodeDoneError("step called on a finished episode; call reset")
    if action not in MOVES:
        raise ValueError(f"action must be in 0..{ACTION_COUNT - 1}, got {action}")
    layout = state.level.layout
    dr, dc = MOVES[int(action)]
    r, c = state.agent_pos
    nxt = (r + dr, c + dc)
    if not (0 <= nxt[0] < layout.shape[0] and 0 <= nxt[1] < layout.shape[1]) or layout[nxt] == WALL:
        nxt = state.agent_pos
    count = state.step_count + 1
    reward, done = 0.0, False
    if nxt == state.level.goal:
        reward, done = 1.0, True
    elif layout[nxt] == HAZARD:
        done = True
    elif count >= spec.max_steps:
        done = True
    new_state = dataclasses.replace(state, agent_pos=nxt, step_count=count, done=done)
    return new_state, observe(new_state), reward, done


def expert_action(level: Level, pos: tuple[int, int], dist_to_goal: np.ndarray | None = None) -> int:
    """First action (in UP, DOWN, LEFT, RIGHT order) that moves one step closer to the goal."""
    dist = dist_to_goal if dist_to_goal is not None else bfs_distances(level.layout, level.goal)
    here = dist[pos]
    if here < 0:
        raise UnsolvableLevelError(f"level {level.seed}: no path from {pos} to goal")
    if here == 0:
        return NOOP
    for a, nxt in _neighbors(pos, level.layout.shape[0]):
        if dist[nxt] == here - 1 and level.layout[nxt] == EMPTY:
            return a
    raise UnsolvableLevelError(f"level {level.seed}: inconsistent distance map at {pos}")


def solve_level(level: Level) -> list[int]:
    """Shortest start-to-goal action sequence (BFS)."""
    dist = bfs_distances(level.layout, level.goal)
    if dist[level.start] < 0:
        raise UnsolvableLevelError(f"level {level.seed} has no start-to-goal path")
    pos, actions = level.start, []
    while pos != level.goal:
        a = expert_action(level, pos, dist)
        actions.append(a)
        pos = (pos[0] + MOVES[a][0], pos[1] + MOVES[a][1])
    return actions
