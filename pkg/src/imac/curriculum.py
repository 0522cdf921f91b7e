"""Prioritized Level Replay over imagined starting contexts.

Buffer entries pair a conditioning window with an imagination horizon. Replay
draws from ``(1 - rho) * P_S + rho * P_C``: ``P_S`` is rank-based on score with
temperature ``beta`` (rank 1 = highest score) and ``P_C`` is proportional to
staleness ``c - C_i``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import CurriculumConfig, HorizonConfig
from .imagination import ConditioningBuffer, ContextSampler, HorizonPolicy, ImaginedTrajectory, sample_horizon


def plr_score(deltas, gamma: float, lam: float, variant: str = "discounted") -> float:
    """Learning-potential score from TD-errors, using positive parts only.

    ``discounted``: (1/T) sum_t sum_{k>=t} (gamma*lam)^(k-t) max(0, delta_k);
    ``mean``: (1/T) sum_k max(0, delta_k).
    """
    pos = np.maximum(np.asarray(deltas, dtype=np.float64), 0.0)
    T = len(pos)
    if T == 0:
        raise ValueError("plr_score needs at least one TD-error")
    if variant == "mean":
        return float(pos.mean())
    if variant != "discounted":
        raise ValueError(f"unknown score variant {variant!r}")
    # discounted suffix sums, accumulated backwards
    acc, total = 0.0, 0.0
    decay = gamma * lam
    for k in range(T - 1, -1, -1):
        acc = pos[k] + decay * acc
        total += acc
    return float(total / T)


@dataclass
class PLREntry:
    context: ConditioningBuffer
    horizon: int
    score: float
    last_sampled: int = 0
    insert_time: int = 0
    seq: int = 0
    trajectory: ImaginedTrajectory | None = field(default=None, repr=False)
    sampled: bool = False

    def __post_init__(self):
        if not np.isfinite(self.score) or self.score < 0:
            raise ValueError(f"PLR score must be finite and >= 0, got {self.score}")


class PLRBuffer:
    def __init__(self, buffer_size: int = 2500, staleness: float = 0.1, temperature: float = 0.1):
        if buffer_size < 1:
            raise ValueError("buffer_size must be >= 1")
        self.buffer_size = buffer_size
        self.staleness = staleness
        self.temperature = temperature
        self.entries: list[PLREntry] = []
        self.counter = 0
        self._seq = 0

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def scores(self) -> np.ndarray:
        return np.array([e.score for e in self.entries])

    def insert(self, entry: PLREntry) -> bool:
        """Append, or replace the lowest score (oldest among ties) if beaten."""
        entry.insert_time = self.counter
        entry.last_sampled = self.counter
        entry.seq = self._seq
        self._seq += 1
        if len(self.entries) < self.buffer_size:
            self.entries.append(entry)
            return True
        scores = self.scores
        lo = scores.min()
        if entry.score <= lo:
            return False
        ties = [i for i in np.flatnonzero(scores == lo)]
        victim = min(ties, key=lambda i: self.entries[i].seq)
        self.entries[victim] = entry
        return True

    def probabilities(self) -> np.ndarray:
        n = len(self.entries)
        if n == 0:
            raise ValueError("PLR buffer is empty")
        seqs = np.array([e.seq for e in self.entries])
        order = np.lexsort((seqs, -self.scores))  # score desc, then insertion order
        ranks = np.empty(n)
        ranks[order] = np.arange(1, n + 1)
        p_s = ranks ** (-1.0 / self.temperature)
        p_s /= p_s.sum()
        stale = np.array([self.counter - e.last_sampled for e in self.entries], dtype=np.float64)
        p_c = stale / stale.sum() if stale.sum() > 0 else np.full(n, 1.0 / n)
        return (1.0 - self.staleness) * p_s + self.staleness * p_c

    def sample(self, rng: np.random.Generator) -> PLREntry:
        p = self.probabilities()
        i = int(rng.choice(len(p), p=p))
        entry = self.entries[i]
        entry.last_sampled = self.counter
        entry.sampled = True
        self.counter += 1
        return entry

    def snapshot(self) -> list[dict]:
        return [
            {"score": e.score, "horizon": e.horizon, "last_sampled": e.last_sampled, "insert_time": e.insert_time}
            for e in self.entries
        ]

    def export_jsonl(self, path) -> None:
        Path(path).write_text("".join(json.dumps(r) + "\n" for r in self.snapshot()), encoding="utf-8")


def buffer_insert(buffer: PLRBuffer, entry: PLREntry) -> bool:
    return buffer.insert(entry)


def sample_replay(buffer: PLRBuffer, rng: np.random.Generator) -> PLREntry:
    return buffer.sample(rng)


@dataclass
class Proposal:
    context: ConditioningBuffer
    horizon: int
    entry: PLREntry | None  # set for replays

    @property
    def is_replay(self) -> bool:
        return self.entry is not None


class Curriculum:
    """Chooses starting contexts and horizons for each imagined rollout.

    ``fixed`` and ``random`` always draw a fresh dataset context (fixed or
    uniform horizon). ``plr`` flips a ``replay_prob`` coin: replay a buffer
    entry, or explore with a fresh context and random horizon.
    """

    def __init__(self, cfg: CurriculumConfig, horizon: HorizonConfig, contexts: ContextSampler,
                 gamma: float, lam: float):
        self.cfg = cfg
        self.mode = cfg.mode
        self.contexts = contexts
        self.gamma = gamma
        self.lam = lam
        self.horizon_policy = HorizonPolicy.from_config(horizon, "fixed" if cfg.mode == "fixed" else "random")
        self.buffer = PLRBuffer(cfg.buffer_size, cfg.staleness, cfg.temperature) if cfg.mode == "plr" else None

    def propose(self, rng: np.random.Generator) -> Proposal:
        if self.buffer is not None and len(self.buffer) > 0 and rng.random() < self.cfg.replay_prob:
            entry = self.buffer.sample(rng)
            return Proposal(entry.context, entry.horizon, entry)
        return Proposal(self.contexts.sample(rng), sample_horizon(self.horizon_policy, rng), None)

    def score(self, traj: ImaginedTrajectory) -> float:
        return plr_score(traj.deltas, self.gamma, self.lam, self.cfg.score)

    def uses_stored(self, proposal: Proposal) -> bool:
        """Replay without re-imagination trains on the trajectory kept in the entry."""
        return proposal.is_replay and not self.cfg.reimagine and proposal.entry.trajectory is not None

    def record(self, proposal: Proposal, traj: ImaginedTrajectory | None) -> ImaginedTrajectory | None:
        """Update the buffer with a round's outcome; returns the trajectory to train on, if any.

        ``traj`` is the freshly imagined rollout (None when ``uses_stored``).
        """
        if self.uses_stored(proposal):
            return proposal.entry.trajectory
        if self.buffer is None:
            return traj
        s = self.score(traj)
        if proposal.is_replay:
            proposal.entry.score = s
            return traj
        keep = None if self.cfg.reimagine else traj  # stored only when replays reuse it
        self.buffer.insert(PLREntry(proposal.context, proposal.horizon, s, trajectory=keep))
        return traj if self.cfg.explore_train else None


def curriculum_round(curriculum: Curriculum, imaginer, actor, rng: np.random.Generator):
    """One propose / imagine / record cycle; returns (proposal, trajectory to train on)."""
    proposal = curriculum.propose(rng)
    traj = None if curriculum.uses_stored(proposal) else imaginer.imagine(actor, proposal.context, proposal.horizon, rng)
    return proposal, curriculum.record(proposal, traj)
