from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from imac import data, envs
from imac.data import DatasetFormatError, PolicyTag
from imac.envs import EnvSpec
from imac.rng import seeded_rng

SPEC = EnvSpec()


@pytest.fixture(scope="module")
def small():
    return data.collect_dataset(SPEC, 10, 3000, seeded_rng(0, "data"))


def test_thirds_and_policy_quality(small):
    counts = small.count_by_tag()
    for tag in PolicyTag:
        assert abs(counts[tag] - 1000) <= SPEC.max_steps
    by_tag = {t: [e.episode_return for e in small.episodes if e.policy_tag is t] for t in PolicyTag}
    assert np.mean(by_tag[PolicyTag.EXPERT]) == 1.0
    assert np.mean(by_tag[PolicyTag.RANDOM]) < 0.2
    assert np.mean(by_tag[PolicyTag.EXPERT]) >= np.mean(by_tag[PolicyTag.MEDIUM]) >= np.mean(by_tag[PolicyTag.RANDOM])


def test_only_training_levels(small):
    assert {e.level_seed for e in small.episodes} <= set(range(10))


def test_episodes_are_consistent(small):
    for ep in small.episodes:
        n = len(ep)
        assert ep.obs.shape == (n, SPEC.obs_dim) and ep.actions.shape == (n,)
        assert ep.dones[-1] and not ep.dones[:-1].any()
        assert n <= SPEC.max_steps


def test_too_small_budget_rejected():
    with pytest.raises(ValueError):
        data.collect_dataset(SPEC, 10, 100, seeded_rng(0))


def test_roundtrip_is_byte_exact(small, tmp_path):
    buf = data.dumps(small)
    assert buf[:4] == data.MAGIC
    back = data.loads(buf)
    assert back == small
    assert data.dumps(back) == buf
    data.write_dataset(small, tmp_path / "d.imac")
    assert (tmp_path / "d.imac").read_bytes() == buf
    assert data.read_dataset(tmp_path / "d.imac") == small


def test_format_errors(small):
    buf = data.dumps(small)
    with pytest.raises(DatasetFormatError, match="magic"):
        data.loads(b"XXXX" + buf[4:])
    with pytest.raises(DatasetFormatError, match="version"):
        data.loads(buf[:4] + (99).to_bytes(2, "little") + buf[6:])
    with pytest.raises(DatasetFormatError, match="truncated"):
        data.loads(buf[:-3])
    with pytest.raises(DatasetFormatError, match="episode_count"):
        data.loads(buf + b"\x00\x00")


def test_same_seed_same_bytes():
    a = data.dumps(data.collect_dataset(SPEC, 5, 600, seeded_rng(3, "data")))
    b = data.dumps(data.collect_dataset(SPEC, 5, 600, seeded_rng(3, "data")))
    assert a == b


def test_segment_shapes_and_padding(small):
    rng = np.random.default_rng(0)
    saw_pad = False
    for _ in range(500):
        seg = data.sample_training_segment(small, 4, 15, rng)
        assert seg.obs.shape[0] == 19 and seg.length <= 19
        ep = small.episodes[seg.episode_index]
        assert seg.length == 4 + min(15, len(ep) - seg.start)
        if seg.start == 0:
            saw_pad = True
            assert seg.pad == 4
            assert (seg.actions[:4] == envs.NOOP).all()
            np.testing.assert_array_equal(seg.obs[:4], np.repeat(ep.obs[:1], 4, axis=0))
        # horizon rows are the episode rows, untouched
        k = seg.length - 4
        np.testing.assert_array_equal(seg.obs[4:4 + k], ep.obs[seg.start:seg.start + k])
        assert not seg.mask[seg.length:].any()
    assert saw_pad


def test_segment_coverage(small):
    rng = np.random.default_rng(1)
    eligible = data.eligible_episodes(small)
    seen = {data.sample_training_segment(small, 4, 15, rng, eligible=eligible).episode_index for _ in range(100_000)}
    long_eps = {i for i, e in enumerate(small.episodes) if len(e) >= 19}
    assert long_eps <= seen


def test_normalize_obs():
    np.testing.assert_array_equal(data.normalize_obs(np.array([0, 1], dtype=np.uint8)), [-1.0, 1.0])


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000), st.integers(1, 6), st.integers(1, 20))
def test_segments_never_cross_episodes(seed, L, H):
    ds = data.collect_dataset(SPEC, 3, 3 * SPEC.max_steps, seeded_rng(seed))
    seg = data.sample_training_segment(ds, L, H, np.random.default_rng(seed))
    ep = ds.episodes[seg.episode_index]
    assert 0 <= seg.start < len(ep)
    assert seg.dones[:seg.length].sum() <= 1
    if seg.dones[:seg.length].any():
        assert seg.dones[seg.length - 1]
