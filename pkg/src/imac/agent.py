"""Recurrent actor-critic trained with A2C on lambda-returns."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autograd as ag
from . import checkpoint, envs
from .autograd import Tensor
from .config import AgentConfig
from .data import normalize_obs
from .envs import EnvSpec
from .nn import MLP, Linear, LSTMCell, Module
from .rng import categorical

MAGIC = b"IMAP"


class ActorCritic(Module):
    """Shared MLP encoder + LSTM cell feeding policy-logit and value heads."""

    def __init__(self, obs_dim: int, action_count: int, hidden=(256, 128), lstm: int = 128,
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.obs_dim = obs_dim
        self.action_count = action_count
        self.hidden = tuple(hidden)
        self.lstm_size = lstm
        self.encoder = MLP([obs_dim, *self.hidden], rng, final_activation=True)
        self.cell = LSTMCell(self.hidden[-1], lstm, rng)
        self.policy_head = Linear(lstm, action_count, rng, init_scale=0.1)
        self.value_head = Linear(lstm, 1, rng, init_scale=0.1)

    @property
    def meta(self) -> dict:
        return {"obs_dim": self.obs_dim, "action_count": self.action_count,
                "hidden": list(self.hidden), "lstm": self.lstm_size}

    def zero_state(self, batch: int):
        return self.cell.zero_state(batch)

    def __call__(self, obs, state):
        """(logits (B, A), value (B,), next_state) for normalized obs (B, D)."""
        h, c = self.cell(self.encoder(obs), state)
        value = ag.reshape(self.value_head(h), (h.shape[0],))
        return self.policy_head(h), value, (h, c)

    def burn_in(self, ctx_obs: np.ndarray):
        """Recurrent state after (B, k, D) normalized frames, without gradients."""
        state = self.zero_state(ctx_obs.shape[0])
        with ag.no_grad():
            for j in range(ctx_obs.shape[1]):
                _, _, state = self(ctx_obs[:, j], state)
        return tuple(s.detach() for s in state)

    def save(self, path) -> None:
        checkpoint.save(path, MAGIC, self.meta, self.state_arrays())

    @classmethod
    def load(cls, path) -> ActorCritic:
        meta, arrays = checkpoint.load(path, MAGIC)
        model = cls(**meta)
        model.load_arrays(arrays)
        return model


def _probs(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def act(model: ActorCritic, obs, state, rng: np.random.Generator, greedy: bool = False):
    """Sample (or argmax) an action per row: (action, log_prob, value, next_state)."""
    with ag.no_grad():
        logits, value, nxt = model(np.atleast_2d(obs), state)
    p = _probs(logits.data)
    action = p.argmax(axis=-1) if greedy else categorical(rng, p)
    log_prob = np.log(p[np.arange(len(action)), action])
    return action, log_prob, value.data, nxt


def lambda_returns(rewards, values, dones, gamma: float, lam: float) -> np.ndarray:
    """G_t = r_t + gamma (1 - d_t) [(1 - lam) V_{t+1} + lam G_{t+1}], closing on V_T.

    ``values`` has one more row than ``rewards``; extra trailing axes are batch.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    if values.shape[0] != rewards.shape[0] + 1 or dones.shape != rewards.shape:
        raise ValueError(
            f"lambda_returns: need len(values) == len(rewards) + 1 and len(dones) == len(rewards), "
            f"got {values.shape}, {rewards.shape}, {dones.shape}"
        )
    out = np.empty_like(rewards)
    nxt = values[-1]
    for t in range(rewards.shape[0] - 1, -1, -1):
        nxt = rewards[t] + gamma * (1.0 - dones[t]) * ((1.0 - lam) * values[t + 1] + lam * nxt)
        out[t] = nxt
    return out


def td_errors(rewards, values, dones, gamma: float) -> np.ndarray:
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    return rewards + gamma * (1.0 - np.asarray(dones, dtype=np.float64)) * values[1:] - values[:-1]


@dataclass
class TrajectoryBatch:
    """Padded stack of trajectories for the learner.

    ``burn_obs`` (B, k, D) frames used only to warm up the recurrence; ``obs``
    (B, T+1, D); ``mask`` (B, T) marks real transitions.
    """

    burn_obs: np.ndarray
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    mask: np.ndarray
    lengths: np.ndarray

    @classmethod
    def from_trajectories(cls, trajs: Sequence) -> TrajectoryBatch:
        b = len(trajs)
        t_max = max(t.length for t in trajs)
        d = trajs[0].obs.shape[1]
        obs = np.zeros((b, t_max + 1, d))
        actions = np.zeros((b, t_max), dtype=np.int64)
        rewards = np.zeros((b, t_max))
        dones = np.zeros((b, t_max), dtype=bool)
        mask = np.zeros((b, t_max), dtype=bool)
        for i, tr in enumerate(trajs):
            n = tr.length
            obs[i, : n + 1] = tr.obs
            actions[i, :n] = tr.actions
            rewards[i, :n] = tr.rewards
            dones[i, :n] = tr.dones
            mask[i, :n] = True
        burn = np.stack([tr.context_obs[:-1] for tr in trajs])
        return cls(burn, obs, actions, rewards, dones, mask, np.array([t.length for t in trajs]))


@dataclass
class A2CLosses:
    total: Tensor
    policy_loss: Tensor
    value_loss: Tensor
    entropy: Tensor
    values: np.ndarray
    returns: np.ndarray
    advantages: np.ndarray


def compute_targets(values: np.ndarray, batch: TrajectoryBatch, gamma: float, lam: float):
    """Per-trajectory lambda-returns and advantages, zero outside the mask.

    ``values`` (B, T+1). The bootstrap value is V at the final observation on
    truncation and 0 after a predicted done.
    """
    b, t_max = batch.actions.shape
    returns = np.zeros((b, t_max))
    for i in range(b):
        n = int(batch.lengths[i])
        v = values[i, : n + 1].copy()
        if batch.dones[i, n - 1]:
            v[n] = 0.0
        returns[i, :n] = lambda_returns(batch.rewards[i, :n], v, batch.dones[i, :n], gamma, lam)
    advantages = (returns - values[:, :t_max]) * batch.mask
    return returns, advantages


def a2c_losses(model: ActorCritic, batch: TrajectoryBatch, hp: AgentConfig, targets=None) -> A2CLosses:
    """policy = -sum log pi(a) A ; value = sum (V - G)^2 ; entropy = sum H(pi).

    Sums run over valid steps and are averaged over trajectories. Returns and
    advantages are constants (``targets`` may supply them explicitly).
    """
    b, t_max = batch.actions.shape
    state = model.burn_in(batch.burn_obs)
    logps, ents, vals = [], [], []
    for t in range(t_max + 1):
        logits, value, state = model(batch.obs[:, t], state)
        vals.append(value)
        if t < t_max:
            lp = ag.log_softmax(logits)
            logps.append(ag.gather(lp, batch.actions[:, t]))
            ents.append(ag.scale(ag.tsum(ag.mul(ag.exp(lp), lp), axis=-1), -1.0))
    values_np = np.stack([v.data for v in vals], axis=1)
    if targets is None:
        returns, advantages = compute_targets(values_np, batch, hp.gamma, hp.lam)
    else:
        returns, advantages = targets
    mask = batch.mask.astype(np.float64)
    logp = ag.stack(logps, axis=1)
    ent = ag.stack(ents, axis=1)
    v = ag.stack(vals[:t_max], axis=1)
    policy_loss = ag.scale(ag.tsum(ag.mul(logp, -advantages * mask)), 1.0 / b)
    value_loss = ag.scale(ag.tsum(ag.mul(ag.square(ag.sub(v, returns)), mask)), 1.0 / b)
    entropy = ag.scale(ag.tsum(ag.mul(ent, mask)), 1.0 / b)
    total = ag.add(ag.add(policy_loss, ag.scale(value_loss, hp.value_coeff)), ag.scale(entropy, -hp.entropy_weight))
    return A2CLosses(total, policy_loss, value_loss, entropy, values_np, returns, advantages)


# ---------------------------------------------------------------- evaluation


class ActorPolicy:
    """Wraps an ActorCritic for real-environment rollouts (state reset per episode)."""

    def __init__(self, model: ActorCritic, greedy: bool = False):
        self.model = model
        self.greedy = greedy
        self.state = None

    def begin(self, n: int) -> None:
        self.state = self.model.zero_state(n)

    def act(self, obs: np.ndarray, env_states, rng: np.random.Generator) -> np.ndarray:
        action, _, _, self.state = act(self.model, normalize_obs(obs), self.state, rng, self.greedy)
        return action


class ExpertPolicy:
    """BFS planner as a policy; reference point for evaluation."""

    def begin(self, n: int) -> None:
        pass

    def act(self, obs, env_states, rng) -> np.ndarray:
        return np.array([envs.expert_action(s.level, s.agent_pos) for s in env_states])


def evaluate_policy(policy, spec: EnvSpec, level_seeds: Sequence[int], episodes_per_level: int,
                    rng: np.random.Generator) -> dict:
    """Roll episodes on real levels in lockstep; returns per-level and mean returns."""
    if isinstance(policy, ActorCritic):
        policy = ActorPolicy(policy)
    seeds = [int(s) for s in level_seeds for _ in range(episodes_per_level)]
    pairs = [envs.reset(spec, s) for s in seeds]
    states = [p[0] for p in pairs]
    obs = np.stack([p[1] for p in pairs])
    returns = np.zeros(len(seeds))
    policy.begin(len(seeds))
    alive = np.ones(len(seeds), dtype=bool)
    while alive.any():
        actions = policy.act(obs, states, rng)
        for i in np.flatnonzero(alive):
            states[i], obs[i], r, done = envs.step(spec, states[i], int(actions[i]))
            returns[i] += r
            alive[i] = not done
    per_level: dict[int, float] = {}
    for s in dict.fromkeys(seeds):
        per_level[s] = float(returns[[i for i, x in enumerate(seeds) if x == s]].mean())
    return {"per_level": per_level, "mean_return": float(returns.mean()) if len(seeds) else 0.0}
