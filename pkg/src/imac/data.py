"""Mixed-quality offline dataset: collection, binary serialization, segment sampling.

File layout (all integers little-endian)::

    header  : b"IMAC" | version u16 | env_id u8 | grid_size u8 | channels u8
              | action_count u8 | episode_count u32
    episode : level_seed u64 | policy_tag u8 | length u32 | length x transition
    transition : obs bit-packed (ceil(obs_dim / 8) bytes, little bit order)
                 | action u8 | reward f32 | done u8
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np

from . import envs
from .envs import EnvId, EnvSpec

MAGIC = b"IMAC"
VERSION = 1
_HEADER = struct.Struct("<4sHBBBBI")
_EP_HEADER = struct.Struct("<QBI")
_ENV_CODES = {EnvId.GRID_MAZE: 0, EnvId.LAVA_RUN: 1}


class DatasetFormatError(ValueError):
    pass


class PolicyTag(IntEnum):
    EXPERT = 0
    MEDIUM = 1
    RANDOM = 2


@dataclass
class Episode:
    level_seed: int
    policy_tag: PolicyTag
    obs: np.ndarray  # (n, obs_dim) uint8 in {0, 1}
    actions: np.ndarray  # (n,) int64
    rewards: np.ndarray  # (n,) float32
    dones: np.ndarray  # (n,) bool

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def episode_return(self) -> float:
        return float(self.rewards.sum())

    def __eq__(self, other) -> bool:
        if not isinstance(other, Episode):
            return NotImplemented
        return (
            self.level_seed == other.level_seed
            and self.policy_tag == other.policy_tag
            and np.array_equal(self.obs, other.obs)
            and np.array_equal(self.actions, other.actions)
            and np.array_equal(self.rewards, other.rewards)
            and np.array_equal(self.dones, other.dones)
        )


@dataclass
class Dataset:
    env_id: EnvId
    grid_size: int
    channels: int
    action_count: int
    episodes: list[Episode]

    @property
    def obs_dim(self) -> int:
        return self.grid_size * self.grid_size * self.channels

    @property
    def transition_count(self) -> int:
        return sum(len(e) for e in self.episodes)

    def count_by_tag(self) -> dict[PolicyTag, int]:
        out = {t: 0 for t in PolicyTag}
        for e in self.episodes:
            out[e.policy_tag] += len(e)
        return out

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            (self.env_id, self.grid_size, self.channels, self.action_count)
            == (other.env_id, other.grid_size, other.channels, other.action_count)
            and self.episodes == other.episodes
        )


# ---------------------------------------------------------------- collection


def _rollout(spec: EnvSpec, level, dist, tag: PolicyTag, rng: np.random.Generator) -> Episode:
    state, obs = envs.reset(spec, level.seed, level)
    rows, acts, rews, dones = [], [], [], []
    done = False
    while not done:
        if tag is PolicyTag.EXPERT or (tag is PolicyTag.MEDIUM and rng.random() < 0.5):
            a = envs.expert_action(level, state.agent_pos, dist)
        else:
            a = int(rng.integers(spec.action_count))
        rows.append(obs)
        state, obs, r, done = envs.step(spec, state, a)
        acts.append(a)
        rews.append(r)
        dones.append(done)
    return Episode(
        level.seed,
        tag,
        np.asarray(rows, dtype=np.uint8),
        np.asarray(acts, dtype=np.int64),
        np.asarray(rews, dtype=np.float32),
        np.asarray(dones, dtype=bool),
    )


def collect_dataset(spec: EnvSpec, train_level_count: int, total_transitions: int, rng: np.random.Generator) -> Dataset:
    """Equal thirds of expert, medium (50% expert) and uniform-random transitions.

    Levels cycle round-robin over ``0..train_level_count-1``; each third stops
    at the first episode boundary past ``total_transitions / 3``.
    """
    if total_transitions < 3 * spec.max_steps:
        raise ValueError(f"total_transitions must be >= 3*max_steps ({3 * spec.max_steps})")
    levels = [envs.generate_level(spec, s) for s in range(train_level_count)]
    dists = [envs.bfs_distances(lv.layout, lv.goal) for lv in levels]
    target = total_transitions / 3.0
    episodes: list[Episode] = []
    cursor = 0
    for tag in PolicyTag:
        count = 0
        while count < target:
            i = cursor % train_level_count
            cursor += 1
            ep = _rollout(spec, levels[i], dists[i], tag, rng)
            episodes.append(ep)
            count += len(ep)
    return Dataset(spec.env_id, spec.grid_size, spec.channels, spec.action_count, episodes)


# ------------------------------------------------------------- serialization


def _transition_dtype(obs_dim: int) -> np.dtype:
    nbytes = (obs_dim + 7) // 8
    return np.dtype([("obs", "u1", (nbytes,)), ("action", "u1"), ("reward", "<f4"), ("done", "u1")])


def dumps(dataset: Dataset) -> bytes:
    tdt = _transition_dtype(dataset.obs_dim)
    parts = [
        _HEADER.pack(
            MAGIC,
            VERSION,
            _ENV_CODES[dataset.env_id],
            dataset.grid_size,
            dataset.channels,
            dataset.action_count,
            len(dataset.episodes),
        )
    ]
    for ep in dataset.episodes:
        rec = np.zeros(len(ep), dtype=tdt)
        rec["obs"] = np.packbits(ep.obs.astype(np.uint8), axis=1, bitorder="little")
        rec["action"] = ep.actions
        rec["reward"] = ep.rewards
        rec["done"] = ep.dones
        parts.append(_EP_HEADER.pack(int(ep.level_seed), int(ep.policy_tag), len(ep)))
        parts.append(rec.tobytes())
    return b"".join(parts)


def loads(buf: bytes) -> Dataset:
    if len(buf) < _HEADER.size:
        raise DatasetFormatError("truncated header")
    magic, version, env_code, grid, channels, n_actions, n_eps = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise DatasetFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise DatasetFormatError(f"unsupported version {version}")
    codes = {v: k for k, v in _ENV_CODES.items()}
    if env_code not in codes:
        raise DatasetFormatError(f"unknown env code {env_code}")
    obs_dim = grid * grid * channels
    tdt = _transition_dtype(obs_dim)
    offset = _HEADER.size
    episodes = []
    for k in range(n_eps):
        if offset + _EP_HEADER.size > len(buf):
            raise DatasetFormatError(f"truncated body: episode {k} of {n_eps} missing (episode_count mismatch)")
        seed, tag, length = _EP_HEADER.unpack_from(buf, offset)
        offset += _EP_HEADER.size
        end = offset + length * tdt.itemsize
        if end > len(buf):
            raise DatasetFormatError(f"truncated body in episode {k}")
        rec = np.frombuffer(buf, dtype=tdt, count=length, offset=offset)
        offset = end
        obs = np.unpackbits(rec["obs"], axis=1, count=obs_dim, bitorder="little")
        episodes.append(
            Episode(
                int(seed),
                PolicyTag(tag),
                obs,
                rec["action"].astype(np.int64),
                rec["reward"].astype(np.float32),
                rec["done"].astype(bool),
            )
        )
    if offset != len(buf):
        raise DatasetFormatError(f"episode_count mismatch: {len(buf) - offset} trailing bytes after {n_eps} episodes")
    return Dataset(codes[env_code], grid, channels, n_actions, episodes)


def write_dataset(dataset: Dataset, path) -> None:
    Path(path).write_bytes(dumps(dataset))


def read_dataset(path) -> Dataset:
    return loads(Path(path).read_bytes())


# ------------------------------------------------------------------ sampling


def normalize_obs(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64) * 2.0 - 1.0


@dataclass
class Segment:
    """``context + horizon`` consecutive transitions from one episode.

    Rows ``0..context-1`` are context (left-padded with repeats of the first
    frame and noop actions when the window starts before the episode);
    rows ``>= length`` are zero filler past a terminal transition.
    """

    obs: np.ndarray  # (context + horizon, obs_dim) float64 in {0, 1}
    actions: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    length: int
    pad: int
    context: int
    episode_index: int
    start: int

    @property
    def mask(self) -> np.ndarray:
        return np.arange(len(self.actions)) < self.length


def _window(ep: Episode, lo: int, hi: int, noop: int):
    """Rows lo..hi-1 of the episode, padding indices < 0 with frame 0 + noop."""
    idx = np.arange(lo, hi)
    pad = int(np.sum(idx < 0))
    src = np.clip(idx, 0, len(ep) - 1)
    obs = ep.obs[src].astype(np.float64)
    actions = ep.actions[src].copy()
    rewards = ep.rewards[src].astype(np.float64)
    dones = ep.dones[src].copy()
    actions[:pad] = noop
    rewards[:pad] = 0.0
    dones[:pad] = False
    return obs, actions, rewards, dones, pad


def eligible_episodes(dataset: Dataset, min_length: int = 1) -> np.ndarray:
    return np.array([i for i, e in enumerate(dataset.episodes) if len(e) >= min_length], dtype=np.int64)


def sample_training_segment(
    dataset: Dataset,
    L: int,
    H: int,
    rng: np.random.Generator,
    min_length: int = 1,
    eligible: np.ndarray | None = None,
) -> Segment:
    """Uniform episode, then uniform first-horizon index ``s`` in ``[0, len-1]``.

    The context covers transitions ``s-L .. s-1``; the horizon ``s .. s+H-1``
    is cut at the episode's terminal transition.
    """
    if eligible is None:
        eligible = eligible_episodes(dataset, min_length)
    if len(eligible) == 0:
        raise ValueError(f"no episode of length >= {min_length} to sample a segment from")
    ei = int(eligible[rng.integers(len(eligible))])
    ep = dataset.episodes[ei]
    s = int(rng.integers(len(ep)))
    noop = envs.NOOP
    obs, actions, rewards, dones, pad = _window(ep, s - L, s + H, noop)
    end = min(s + H, len(ep))
    length = L + (end - s)
    n = L + H
    if length < n:
        obs[length:] = 0.0
        actions[length:] = noop
        rewards[length:] = 0.0
        dones[length:] = False
    return Segment(obs, actions, rewards, dones, length, pad, L, ei, s)


def sample_batch(dataset: Dataset, L: int, H: int, batch: int, rng: np.random.Generator, eligible=None) -> dict:
    """Stack ``batch`` segments; returns arrays keyed like :class:`Segment`."""
    if eligible is None:
        eligible = eligible_episodes(dataset)
    segs = [sample_training_segment(dataset, L, H, rng, eligible=eligible) for _ in range(batch)]
    return {
        "obs": np.stack([s.obs for s in segs]),
        "actions": np.stack([s.actions for s in segs]),
        "rewards": np.stack([s.rewards for s in segs]),
        "dones": np.stack([s.dones for s in segs]),
        "mask": np.stack([s.mask for s in segs]),
        "length": np.array([s.length for s in segs]),
    }
