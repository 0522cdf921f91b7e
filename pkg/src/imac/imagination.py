"""Autoregressive rollouts inside the frozen world model.

A conditioning window holds ``L`` normalized frames (oldest first) and, for
each frame, the action that led into it. Rollouts warm up the reward model and
the actor on the first ``L-1`` frames, then step from the newest frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from . import reward_model as rtm
from .agent import ActorCritic, act, td_errors
from .config import HorizonConfig
from .data import Dataset, normalize_obs
from .envs import NOOP
from .world_model import DenoiserModel, NoiseSchedule, sample_next_obs


@dataclass
class ConditioningBuffer:
    obs: np.ndarray  # (L, D) normalized
    actions: np.ndarray  # (L,) action that produced each frame

    def __post_init__(self):
        if self.obs.shape[0] != self.actions.shape[0]:
            raise ValueError("conditioning buffer needs one action per frame")

    def __len__(self) -> int:
        return self.obs.shape[0]

    def push(self, frame: np.ndarray, action: int) -> ConditioningBuffer:
        return ConditioningBuffer(
            np.concatenate([self.obs[1:], frame[None]], axis=0),
            np.concatenate([self.actions[1:], [action]]).astype(np.int64),
        )


@dataclass
class ImaginedTrajectory:
    context: ConditioningBuffer
    horizon: int
    obs: np.ndarray  # (T+1, D)
    actions: np.ndarray  # (T,)
    rewards: np.ndarray
    dones: np.ndarray
    log_probs: np.ndarray
    values: np.ndarray  # (T+1,); last entry 0 after a predicted done
    deltas: np.ndarray  # (T,)
    uncertainty: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def length(self) -> int:
        return len(self.actions)

    @property
    def context_obs(self) -> np.ndarray:
        return self.context.obs


@dataclass(frozen=True)
class HorizonPolicy:
    mode: str = "fixed"  # fixed | random
    fixed_h: int = 15
    h_min: int = 5
    h_max: int = 22

    def __post_init__(self):
        if self.mode not in ("fixed", "random"):
            raise ValueError(f"horizon mode must be fixed|random, got {self.mode!r}")
        if not 1 <= self.h_min <= self.h_max:
            raise ValueError("need 1 <= h_min <= h_max")

    @classmethod
    def from_config(cls, cfg: HorizonConfig, mode: str) -> HorizonPolicy:
        return cls(mode, cfg.fixed_h, cfg.h_min, cfg.h_max)


def sample_horizon(policy: HorizonPolicy, rng: np.random.Generator) -> int:
    if policy.mode == "fixed":
        return policy.fixed_h
    return int(rng.integers(policy.h_min, policy.h_max + 1))


class ContextSampler:
    """Uniform episode, then a uniform non-terminal frame as the newest context frame."""

    def __init__(self, dataset: Dataset, context: int = 4):
        self.dataset = dataset
        self.context = context
        self.candidates = [i for i, ep in enumerate(dataset.episodes) if (~ep.dones).any()]
        if not self.candidates:
            raise ValueError("dataset has no non-terminal frame to start imagination from")

    def sample_index(self, rng: np.random.Generator) -> tuple[int, int]:
        """(episode index, row of the newest context frame)."""
        ei = self.candidates[int(rng.integers(len(self.candidates)))]
        nonterminal = np.flatnonzero(~self.dataset.episodes[ei].dones)
        return ei, int(nonterminal[rng.integers(len(nonterminal))])

    def window(self, ei: int, t: int) -> ConditioningBuffer:
        ep = self.dataset.episodes[ei]
        idx = np.arange(t - self.context + 1, t + 1)
        obs = normalize_obs(ep.obs[np.clip(idx, 0, None)])
        prev = idx - 1
        actions = np.where(prev >= 0, ep.actions[np.clip(prev, 0, None)], NOOP).astype(np.int64)
        return ConditioningBuffer(obs, actions)

    def sample(self, rng: np.random.Generator) -> ConditioningBuffer:
        return self.window(*self.sample_index(rng))


def initial_context_from_dataset(dataset: Dataset, rng: np.random.Generator, context: int = 4) -> ConditioningBuffer:
    return ContextSampler(dataset, context).sample(rng)


def _take(state, mask):
    """Rows of a recurrent (hidden, cell) state."""
    parts = [ag.Tensor(t.data[mask]) for t in state]
    return rtm.RecurrentState(*parts) if isinstance(state, rtm.RecurrentState) else tuple(parts)


@dataclass
class Imaginer:
    """Frozen world + reward models and the rollout settings."""

    world_model: DenoiserModel
    schedule: NoiseSchedule
    reward_model: rtm.RTModel
    gamma: float = 0.985
    reward_mode: str = "argmax"
    rebinarize: bool = False

    def imagine_batch(self, actor: ActorCritic, contexts: list[ConditioningBuffer], horizons, rng: np.random.Generator):
        """Roll all contexts together; each stops at its horizon or first predicted done.

        Finished rows drop out of the batch, so the cost follows the total rollout length.
        """
        horizons = np.asarray(horizons, dtype=np.int64)
        b = len(contexts)
        win_obs = np.stack([c.obs for c in contexts])
        win_act = np.stack([c.actions for c in contexts])
        rt_state = rtm.burn_in(self.reward_model, win_obs[:, :-1], win_act[:, 1:])
        ac_state = actor.burn_in(win_obs[:, :-1])
        h_max = int(horizons.max())
        frames = np.zeros((b, h_max + 1, win_obs.shape[-1]))
        frames[:, 0] = win_obs[:, -1]
        acts = np.zeros((b, h_max), dtype=np.int64)
        rews, lps, uncs = np.zeros((b, h_max)), np.zeros((b, h_max)), np.zeros((b, h_max))
        dns = np.zeros((b, h_max), dtype=bool)
        vals = np.zeros((b, h_max + 1))
        lengths = np.zeros(b, dtype=np.int64)
        rows = np.arange(b)
        for i in range(h_max):
            x = frames[rows, i]
            a, logp, v, ac_state = act(actor, x, ac_state, rng)
            r, d, rt_state, unc = rtm.predict(self.reward_model, x, a, rt_state, self.reward_mode)
            x_next = sample_next_obs(self.world_model, self.schedule, win_obs, win_act, a, rng)
            if self.rebinarize:
                x_next = np.where(x_next > 0.0, 1.0, -1.0)
            acts[rows, i], rews[rows, i], dns[rows, i] = a, r, d
            lps[rows, i], vals[rows, i], uncs[rows, i] = logp, v, unc
            frames[rows, i + 1] = x_next
            lengths[rows] += 1
            keep = ~d & (i + 1 < horizons[rows])
            cut = ~keep & ~d  # reached the horizon alive: bootstrap on V(x_next)
            if cut.any():
                with ag.no_grad():
                    _, v_next, _ = actor(x_next[cut], _take(ac_state, cut))
                vals[rows[cut], i + 1] = v_next.data
            if not keep.any():
                break
            rows = rows[keep]
            win_obs = np.concatenate([win_obs[keep, 1:], x_next[keep, None]], axis=1)
            win_act = np.concatenate([win_act[keep, 1:], a[keep, None]], axis=1)
            ac_state = _take(ac_state, keep)
            rt_state = _take(rt_state, keep)
        out = []
        for k in range(b):
            n = int(lengths[k])
            done = dns[k, :n].copy()
            values = vals[k, : n + 1].copy()  # zero after a predicted done
            out.append(
                ImaginedTrajectory(
                    context=contexts[k],
                    horizon=int(horizons[k]),
                    obs=frames[k, : n + 1],
                    actions=acts[k, :n],
                    rewards=rews[k, :n],
                    dones=done,
                    log_probs=lps[k, :n],
                    values=values,
                    deltas=td_errors(rews[k, :n], values, done, self.gamma),
                    uncertainty=uncs[k, :n],
                )
            )
        return out

    def imagine(self, actor: ActorCritic, ctx: ConditioningBuffer, horizon: int, rng: np.random.Generator) -> ImaginedTrajectory:
        return self.imagine_batch(actor, [ctx], [horizon], rng)[0]
