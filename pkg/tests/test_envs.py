from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from imac import envs
from imac.envs import EnvSpec, EpisodeDoneError

MAZE = EnvSpec()
LAVA = EnvSpec("LavaRun")


def _bfs_oracle(layout, start, goal):
    """Plain BFS over non-wall, non-hazard cells; returns path length or -1."""
    n = layout.shape[0]
    frontier, seen, d = [start], {start}, 0
    while frontier:
        if goal in frontier:
            return d
        nxt = []
        for r, c in frontier:
            for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                q = (r + dr, c + dc)
                if 0 <= q[0] < n and 0 <= q[1] < n and q not in seen and layout[q] == envs.EMPTY:
                    seen.add(q)
                    nxt.append(q)
        frontier, d = nxt, d + 1
    return -1


def test_levels_differ_by_seed():
    a, b = envs.generate_level(MAZE, 0), envs.generate_level(MAZE, 1)
    assert a.fingerprint() != b.fingerprint()
    assert envs.generate_level(MAZE, 0).fingerprint() == a.fingerprint()


@pytest.mark.parametrize("spec", [MAZE, LAVA], ids=["maze", "lava"])
def test_every_level_is_solvable(spec):
    for seed in range(1000):
        lv = envs.generate_level(spec, seed)
        assert _bfs_oracle(lv.layout, lv.start, lv.goal) > 0, seed


def test_solution_reaches_goal_with_bfs_length():
    for seed in range(100):
        lv = envs.generate_level(MAZE, seed)
        actions = envs.solve_level(lv)
        assert len(actions) == _bfs_oracle(lv.layout, lv.start, lv.goal)
        state, _ = envs.reset(MAZE, seed)
        total = 0.0
        for a in actions:
            state, _, r, done = envs.step(MAZE, state, a)
            total += r
        assert total == 1.0 and done


def test_observation_planes():
    state, obs = envs.reset(MAZE, 3)
    planes = obs.reshape(4, 7, 7)
    assert obs.shape == (MAZE.obs_dim,)
    assert planes[1].sum() == 1 and planes[1][state.agent_pos] == 1
    assert planes[2][state.level.goal] == 1
    assert planes[3].sum() == 0
    np.testing.assert_array_equal(planes[0], state.level.layout == envs.WALL)


def test_walls_block_and_timeout_terminates():
    spec = EnvSpec(max_steps=14)
    state, _ = envs.reset(spec, 0)
    start = state.agent_pos
    # the outer ring is wall, so one of UP/LEFT from a corner is blocked
    blocked = [a for a in (envs.UP, envs.DOWN, envs.LEFT, envs.RIGHT)
               if envs.step(spec, state, a)[0].agent_pos == start]
    assert blocked
    done = False
    for _ in range(spec.max_steps):
        state, _, r, done = envs.step(spec, state, envs.NOOP)
    assert done and r == 0.0
    with pytest.raises(EpisodeDoneError):
        envs.step(spec, state, envs.NOOP)


def test_hazard_terminates_without_reward():
    for seed in range(50):
        lv = envs.generate_level(LAVA, seed)
        hazards = np.argwhere(lv.layout == envs.HAZARD)
        for r, c in hazards:
            for a, (dr, dc) in envs.MOVES.items():
                src = (int(r - dr), int(c - dc))
                if 0 <= src[0] < 7 and 0 <= src[1] < 7 and lv.layout[src] == envs.EMPTY and src != lv.goal:
                    state = envs.EnvState(lv, src)
                    _, _, rew, done = envs.step(LAVA, state, a)
                    assert done and rew == 0.0
                    return
    pytest.fail("no hazard adjacent to an empty cell found")


def test_invalid_arguments():
    with pytest.raises(ValueError):
        EnvSpec(grid_size=6)
    with pytest.raises(ValueError):
        EnvSpec(max_steps=5)
    state, _ = envs.reset(MAZE, 0)
    with pytest.raises(ValueError):
        envs.step(MAZE, state, 7)


def test_train_and_test_seed_ranges_are_disjoint():
    assert set(MAZE.train_levels).isdisjoint(MAZE.test_levels)
    assert len(MAZE.test_levels) == 100


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.lists(st.integers(0, 4), min_size=1, max_size=30))
def test_agent_stays_on_free_cells(seed, actions):
    state, _ = envs.reset(MAZE, seed)
    for a in actions:
        if state.done:
            break
        state, obs, r, _ = envs.step(MAZE, state, a)
        assert state.level.layout[state.agent_pos] == envs.EMPTY
        assert obs.reshape(4, 7, 7)[1].sum() == 1
        assert r in (0.0, 1.0)
