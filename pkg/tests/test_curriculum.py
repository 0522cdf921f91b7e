from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from imac.config import CurriculumConfig, HorizonConfig
from imac.curriculum import Curriculum, PLRBuffer, PLREntry, buffer_insert, curriculum_round, plr_score, sample_replay
from imac.imagination import ConditioningBuffer, ImaginedTrajectory

from .oracles import discounted_score_oracle, plr_distribution_oracle

CTX = ConditioningBuffer(np.zeros((4, 2)), np.zeros(4, dtype=np.int64))

# discounted score on deltas (0.5, -1, 2) with gamma=0.985, lam=0.95, frozen from the brute-force oracle
DISCOUNTED_EXAMPLE = 2.0409187083333333


def _entry(score, horizon=10):
    return PLREntry(CTX, horizon, score)


def test_score_examples():
    assert plr_score([-1.0, -0.5, 0.0], 0.9, 0.9) == 0.0
    assert plr_score([1.0], 0.9, 0.9) == 1.0 == plr_score([1.0], 0.9, 0.9, "mean")
    assert plr_score([0.5, -1.0, 2.0], 0.985, 0.95) == pytest.approx(DISCOUNTED_EXAMPLE, abs=1e-12)
    assert plr_score([0.5, -1.0, 2.0], 0.985, 0.95, "mean") == pytest.approx(2.5 / 3)
    with pytest.raises(ValueError):
        plr_score([], 0.9, 0.9)
    with pytest.raises(ValueError):
        plr_score([1.0], 0.9, 0.9, "median")


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=25), st.floats(0, 0.999), st.floats(0, 1))
def test_score_matches_oracle(deltas, gamma, lam):
    assert plr_score(deltas, gamma, lam) == pytest.approx(discounted_score_oracle(deltas, gamma, lam), abs=1e-12)
    assert plr_score(deltas, gamma, lam) >= 0.0


@given(st.floats(-10, 10), st.floats(0, 0.999), st.floats(0, 1))
def test_variants_coincide_for_single_step(delta, gamma, lam):
    assert plr_score([delta], gamma, lam, "discounted") == plr_score([delta], gamma, lam, "mean")


def test_entry_rejects_bad_scores():
    with pytest.raises(ValueError):
        _entry(-0.1)
    with pytest.raises(ValueError):
        _entry(float("nan"))


def test_insert_rules():
    buf = PLRBuffer(buffer_size=3)
    assert buffer_insert(buf, _entry(1.0)) and len(buf) == 1
    buffer_insert(buf, _entry(2.0))
    buffer_insert(buf, _entry(3.0))
    assert buffer_insert(buf, _entry(2.5))
    assert sorted(buf.scores) == [2.0, 2.5, 3.0]
    assert not buffer_insert(buf, _entry(1.5))
    assert not buffer_insert(buf, _entry(2.0))  # must beat the minimum strictly
    assert sorted(buf.scores) == [2.0, 2.5, 3.0]


def test_insert_replaces_oldest_minimum():
    buf = PLRBuffer(buffer_size=3)
    for h in (5, 6, 7):
        buffer_insert(buf, _entry(1.0, horizon=h))
    buffer_insert(buf, _entry(2.0, horizon=8))
    assert [e.horizon for e in buf.entries] == [8, 6, 7]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 10), min_size=1, max_size=40), st.integers(1, 8))
def test_buffer_invariants(scores, size):
    buf = PLRBuffer(buffer_size=size)
    for s in scores:
        before = buf.scores.min() if len(buf) == size else None
        ok = buffer_insert(buf, _entry(s))
        assert len(buf) <= size
        if before is not None and ok:
            assert buf.scores.min() >= before
        assert np.all(np.isfinite(buf.scores)) and np.all(buf.scores >= 0)


def _frozen_buffer(rho, n=10):
    rng = np.random.default_rng(0)
    buf = PLRBuffer(buffer_size=n, staleness=rho, temperature=0.1)
    for s in rng.permutation(n):
        buffer_insert(buf, _entry(float(s) + 1.0))
    # spread out staleness
    for e, t in zip(buf.entries, rng.integers(0, 50, size=n)):
        e.last_sampled = int(t)
    buf.counter = 60
    return buf


@pytest.mark.parametrize("rho", [0.0, 0.1, 1.0])
def test_distribution_matches_oracle(rho):
    buf = _frozen_buffer(rho)
    p = buf.probabilities()
    oracle = plr_distribution_oracle([e.score for e in buf.entries], [e.seq for e in buf.entries],
                                     [e.last_sampled for e in buf.entries], buf.counter, rho, 0.1)
    np.testing.assert_allclose(p, oracle, rtol=1e-12)
    assert p.sum() == pytest.approx(1.0)


def test_rank_distribution_with_ties_and_staleness_fallback():
    buf = PLRBuffer(buffer_size=3, staleness=0.0)
    for _ in range(3):
        buffer_insert(buf, _entry(1.0))
    w = np.array([1.0, 2.0**-10, 3.0**-10])
    np.testing.assert_allclose(buf.probabilities(), w / w.sum())
    buf.staleness = 1.0  # every entry inserted at c=0, never drawn: zero staleness -> uniform
    np.testing.assert_allclose(buf.probabilities(), np.full(3, 1 / 3))


def test_sampling_updates_counters():
    buf = PLRBuffer(buffer_size=4)
    with pytest.raises(ValueError):
        sample_replay(buf, np.random.default_rng(0))
    buffer_insert(buf, _entry(1.0))
    rng = np.random.default_rng(0)
    for k in range(5):
        e = sample_replay(buf, rng)
        assert e.last_sampled == k
    assert buf.counter == 5
    buffer_insert(buf, _entry(0.5))
    assert buf.entries[1].insert_time == 5 == buf.entries[1].last_sampled


def test_snapshot_export(tmp_path):
    buf = PLRBuffer(buffer_size=4)
    buffer_insert(buf, _entry(1.5, horizon=12))
    buf.export_jsonl(tmp_path / "buf.jsonl")
    rows = [json.loads(x) for x in (tmp_path / "buf.jsonl").read_text().splitlines()]
    assert rows == [{"score": 1.5, "horizon": 12, "last_sampled": 0, "insert_time": 0}]


class StubSampler:
    def sample(self, rng):
        return ConditioningBuffer(rng.normal(size=(4, 2)), np.zeros(4, dtype=np.int64))


class StubImaginer:
    """Trajectories with random TD-errors; length equals the horizon."""

    def __init__(self):
        self.calls = 0

    def imagine(self, actor, ctx, horizon, rng):
        self.calls += 1
        T = horizon
        return ImaginedTrajectory(ctx, horizon, np.zeros((T + 1, 2)), np.zeros(T, dtype=np.int64), np.zeros(T),
                                  np.zeros(T, dtype=bool), np.zeros(T), np.zeros(T + 1), rng.normal(size=T))


def _curriculum(**kw):
    cfg = CurriculumConfig(**{"buffer_size": 50, **kw})
    return Curriculum(cfg, HorizonConfig(), StubSampler(), 0.985, 0.95)


def test_explore_fraction_is_half():
    cur, imag, rng = _curriculum(), StubImaginer(), np.random.default_rng(0)
    explored = sum(not curriculum_round(cur, imag, None, rng)[0].is_replay for _ in range(10_000))
    assert abs(explored / 10_000 - 0.5) <= 0.02


def test_replay_prob_zero_always_explores():
    cur, imag, rng = _curriculum(replay_prob=0.0), StubImaginer(), np.random.default_rng(0)
    for _ in range(100):
        prop, traj = curriculum_round(cur, imag, None, rng)
        assert not prop.is_replay and traj is not None
    assert cur.buffer.counter == 0 and all(not e.sampled for e in cur.buffer.entries)


def test_replay_prob_one_never_grows():
    cur, imag, rng = _curriculum(replay_prob=1.0), StubImaginer(), np.random.default_rng(0)
    curriculum_round(cur, imag, None, rng)  # empty buffer falls back to explore
    assert len(cur.buffer) == 1
    for _ in range(50):
        prop, _ = curriculum_round(cur, imag, None, rng)
        assert prop.is_replay
    assert len(cur.buffer) == 1


def test_replay_refreshes_score_and_keeps_horizon():
    cur, imag, rng = _curriculum(replay_prob=1.0), StubImaginer(), np.random.default_rng(1)
    curriculum_round(cur, imag, None, rng)
    entry = cur.buffer.entries[0]
    old = entry.score
    prop, traj = curriculum_round(cur, imag, None, rng)
    assert prop.entry is entry and traj.horizon == entry.horizon and traj.context is entry.context
    assert entry.score == pytest.approx(plr_score(traj.deltas, 0.985, 0.95)) and entry.score != old


def test_stored_replay_reuses_trajectory():
    cur, imag, rng = _curriculum(replay_prob=1.0, reimagine=False), StubImaginer(), np.random.default_rng(1)
    _, first = curriculum_round(cur, imag, None, rng)
    _, again = curriculum_round(cur, imag, None, rng)
    assert again is first and imag.calls == 1


def test_explore_without_training():
    cur, imag, rng = _curriculum(replay_prob=0.0, explore_train=False), StubImaginer(), np.random.default_rng(1)
    _, traj = curriculum_round(cur, imag, None, rng)
    assert traj is None and len(cur.buffer) == 1


@pytest.mark.parametrize("mode,expected", [("fixed", {15}), ("random", set(range(5, 23)))])
def test_non_plr_modes_only_explore(mode, expected):
    cur, imag, rng = _curriculum(mode=mode), StubImaginer(), np.random.default_rng(0)
    hs = set()
    for _ in range(2000):
        prop, traj = curriculum_round(cur, imag, None, rng)
        assert not prop.is_replay and traj is not None
        hs.add(prop.horizon)
    assert cur.buffer is None and hs == expected
