"""Reward / termination predictor: shared encoder + LSTM, E classifier heads.

Each head emits 2-class logits for the reward sign ({0, +}) and for the done
flag. The ensemble prediction is the arithmetic mean of the heads' softmax
probabilities; head disagreement (variance of those probabilities) is kept as
an uncertainty diagnostic only.
"""

from __future__ import annotations

import logging
import math

import numpy as np

from . import autograd as ag
from . import checkpoint
from .autograd import Tensor
from .config import RewardModelConfig
from .data import Dataset, eligible_episodes, normalize_obs, sample_batch
from .nn import MLP, Linear, LSTMCell, Module, one_hot
from .optim import AdamW, FrozenModelError
from .world_model import TrainingError

log = logging.getLogger(__name__)

MAGIC = b"IMRT"
N_CLASSES = 2


class RecurrentState(tuple):
    """(hidden, cell) pair of Tensors."""

    __slots__ = ()

    def __new__(cls, hidden: Tensor, cell: Tensor):
        return super().__new__(cls, (hidden, cell))

    @property
    def hidden(self) -> Tensor:
        return self[0]

    @property
    def cell(self) -> Tensor:
        return self[1]


class RTModel(Module):
    def __init__(
        self,
        obs_dim: int,
        action_count: int,
        ensemble: int = 10,
        hidden=(256,),
        lstm: int = 128,
        rng: np.random.Generator | None = None,
    ):
        if ensemble < 1:
            raise ValueError("ensemble must be >= 1")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.obs_dim = obs_dim
        self.action_count = action_count
        self.ensemble = ensemble
        self.hidden = tuple(hidden)
        self.lstm_size = lstm
        self.encoder = MLP([obs_dim + action_count, *self.hidden], rng, final_activation=True)
        self.cell = LSTMCell(self.hidden[-1], lstm, rng)
        # column block [e*4 : e*4+4] belongs to head e: reward logits then done logits
        self.heads = Linear(lstm, ensemble * 2 * N_CLASSES, rng)
        self.frozen = False

    @property
    def meta(self) -> dict:
        return {
            "obs_dim": self.obs_dim,
            "action_count": self.action_count,
            "ensemble": self.ensemble,
            "hidden": list(self.hidden),
            "lstm": self.lstm_size,
        }

    def zero_state(self, batch: int) -> RecurrentState:
        return RecurrentState(*self.cell.zero_state(batch))

    def save(self, path) -> None:
        checkpoint.save(path, MAGIC, self.meta, self.state_arrays())

    @classmethod
    def load(cls, path) -> RTModel:
        meta, arrays = checkpoint.load(path, MAGIC)
        model = cls(**meta)
        model.load_arrays(arrays)
        model.frozen = True
        return model


def rt_step(model: RTModel, obs, action, state: RecurrentState):
    """One recurrent step on normalized ``obs`` (B, D) and ``action`` (B,).

    Returns (reward_logits, done_logits, next_state); logits are (B, E, 2).
    """
    action = np.asarray(action, dtype=np.int64).reshape(-1)
    x = ag.concat([ag.as_tensor(obs), one_hot(action, model.action_count)], axis=-1)
    h, c = model.cell(model.encoder(x), tuple(state))
    out = ag.reshape(model.heads(h), (h.shape[0], model.ensemble, 2, N_CLASSES))
    return out[:, :, 0, :], out[:, :, 1, :], RecurrentState(h, c)


def _softmax_np(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def aggregate(logits) -> np.ndarray:
    """Mean over heads of per-head class probabilities: (B, E, C) -> (B, C)."""
    z = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    return _softmax_np(z).mean(axis=-2)


def disagreement(logits) -> np.ndarray:
    """Variance across heads of the positive-class probability, per row."""
    z = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    return _softmax_np(z)[..., 1].var(axis=-1)


def predict(model: RTModel, obs, action, state: RecurrentState, reward_mode: str = "argmax"):
    """Inference step: (reward (B,), done (B,) bool, next_state, uncertainty (B,))."""
    with ag.no_grad():
        rl, dl, nxt = rt_step(model, obs, action, state)
    p_r = aggregate(rl)
    p_d = aggregate(dl)
    reward = p_r[:, 1] if reward_mode == "expected" else (p_r.argmax(axis=-1) == 1).astype(np.float64)
    done = p_d[:, 1] > 0.5
    return reward, done, nxt, disagreement(dl) + disagreement(rl)


def burn_in(model: RTModel, ctx_obs: np.ndarray, ctx_actions: np.ndarray) -> RecurrentState:
    """Run the recurrence over (B, k, D) frames with the actions taken at them."""
    ctx_obs = np.asarray(ctx_obs, dtype=np.float64)
    state = model.zero_state(ctx_obs.shape[0])
    with ag.no_grad():
        for j in range(ctx_obs.shape[1]):
            _, _, state = rt_step(model, ctx_obs[:, j], ctx_actions[:, j], state)
    return RecurrentState(state.hidden.detach(), state.cell.detach())


def _ce(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Per-(row, head) cross-entropy for (B, E, C) logits and (B,) labels."""
    labels = np.broadcast_to(np.asarray(labels, dtype=np.int64)[:, None], logits.shape[:-1])
    return ag.scale(ag.gather(ag.log_softmax(logits), labels), -1.0)


def rt_loss(model: RTModel, batch: dict, burn: int) -> Tensor:
    """Cross-entropy over reward sign and done, summed over heads and post-burn-in steps.

    ``batch`` comes from ``sample_batch(dataset, burn, H, ...)``; the first
    ``burn`` rows only advance the recurrent state. Averaged over the batch.
    """
    obs = normalize_obs(batch["obs"])
    actions, rewards, dones, mask = batch["actions"], batch["rewards"], batch["dones"], batch["mask"]
    b, n = actions.shape
    state = burn_in(model, obs[:, :burn], actions[:, :burn])
    terms = []
    for t in range(burn, n):
        rl, dl, state = rt_step(model, obs[:, t], actions[:, t], state)
        valid = mask[:, t].astype(np.float64)
        if not valid.any():
            break
        per_head = ag.add(_ce(rl, (rewards[:, t] > 0).astype(np.int64)), _ce(dl, dones[:, t].astype(np.int64)))
        terms.append(ag.tsum(ag.mul(ag.tsum(per_head, axis=-1), valid)))
    if not terms:
        return ag.Tensor(0.0)
    total = terms[0]
    for term in terms[1:]:
        total = ag.add(total, term)
    return ag.scale(total, 1.0 / b)


def train_rt_model(
    model: RTModel,
    dataset: Dataset,
    cfg: RewardModelConfig,
    rng: np.random.Generator,
) -> tuple[RTModel, list[float]]:
    if model.frozen:
        raise FrozenModelError("reward/termination model is frozen")
    params = model.parameters()
    opt = AdamW(params, lr=cfg.lr, eps=cfg.eps, weight_decay=cfg.weight_decay, max_grad_norm=cfg.grad_clip)
    eligible = eligible_episodes(dataset)
    losses = []
    for step in range(cfg.steps):
        batch = sample_batch(dataset, cfg.burn_in, cfg.horizon, cfg.batch_size, rng, eligible)
        loss = rt_loss(model, batch, cfg.burn_in)
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingError(f"reward model: non-finite loss {value} at step {step}")
        opt.step(ag.grad(loss, params))
        losses.append(value)
        if (step + 1) % cfg.steps_per_epoch == 0:
            log.info("rt step %d loss %.4f", step + 1, float(np.mean(losses[-cfg.steps_per_epoch :])))
    model.frozen = True
    return model, losses


def evaluate_rt(model: RTModel, dataset: Dataset, burn: int, horizon: int, n_segments: int, rng: np.random.Generator,
                use_burn_in: bool = True) -> dict:
    """Done accuracy over all valid post-burn-in steps; reward accuracy at reward steps."""
    eligible = eligible_episodes(dataset)
    batch = sample_batch(dataset, burn, horizon, n_segments, rng, eligible)
    obs = normalize_obs(batch["obs"])
    actions = batch["actions"]
    if use_burn_in:
        state = burn_in(model, obs[:, :burn], actions[:, :burn])
    else:
        state = model.zero_state(n_segments)
    done_hits = done_n = rew_hits = rew_n = 0
    for t in range(burn, actions.shape[1]):
        reward, done, state, _ = predict(model, obs[:, t], actions[:, t], state)
        valid = batch["mask"][:, t]
        done_hits += int(np.sum((done == batch["dones"][:, t]) & valid))
        done_n += int(valid.sum())
        goal = valid & (batch["rewards"][:, t] > 0)
        rew_hits += int(np.sum((reward > 0.5) & goal))
        rew_n += int(goal.sum())
    return {
        "done_accuracy": done_hits / max(done_n, 1),
        "reward_accuracy": rew_hits / max(rew_n, 1),
        "done_steps": done_n,
        "reward_steps": rew_n,
    }
