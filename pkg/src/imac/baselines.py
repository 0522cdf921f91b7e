"""Behavior cloning reference: the actor network fit to dataset actions."""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .agent import ActorCritic
from .config import RunConfig
from .data import Dataset, eligible_episodes, normalize_obs, sample_batch
from .optim import AdamW
from .rng import seeded_rng


def bc_loss(model: ActorCritic, batch: dict) -> ag.Tensor:
    """Mean cross-entropy of dataset actions over valid steps, from a zero recurrent state."""
    obs = normalize_obs(batch["obs"])
    b, n = batch["actions"].shape
    state = model.zero_state(b)
    mask = batch["mask"].astype(np.float64)
    total = None
    for t in range(n):
        logits, _, state = model(obs[:, t], state)
        nll = ag.scale(ag.gather(ag.log_softmax(logits), batch["actions"][:, t]), -1.0)
        term = ag.tsum(ag.mul(nll, mask[:, t]))
        total = term if total is None else ag.add(total, term)
    return ag.scale(total, 1.0 / max(mask.sum(), 1.0))


def bc_accuracy(model: ActorCritic, dataset: Dataset, n_segments: int, seq_len: int, rng) -> float:
    batch = sample_batch(dataset, 0, seq_len, n_segments, rng, eligible_episodes(dataset))
    obs = normalize_obs(batch["obs"])
    state = model.zero_state(n_segments)
    hits = total = 0
    with ag.no_grad():
        for t in range(seq_len):
            logits, _, state = model(obs[:, t], state)
            valid = batch["mask"][:, t]
            hits += int(np.sum((logits.data.argmax(axis=-1) == batch["actions"][:, t]) & valid))
            total += int(valid.sum())
    return hits / max(total, 1)


def train_bc(dataset: Dataset, cfg: RunConfig, seed: int) -> tuple[ActorCritic, list[float]]:
    c = cfg.bc
    rng = seeded_rng(seed, "bc")
    model = ActorCritic(dataset.obs_dim, dataset.action_count, cfg.agent.hidden, cfg.agent.lstm, rng)
    # value head is unused: leave it out of the optimizer
    params = [p for name, p in model.named_parameters() if not name.startswith("value_head")]
    opt = AdamW(params, lr=c.lr, weight_decay=c.weight_decay, max_grad_norm=cfg.agent.grad_clip)
    eligible = eligible_episodes(dataset)
    losses = []
    for _ in range(c.steps):
        batch = sample_batch(dataset, 0, c.seq_len, c.batch_size, rng, eligible)
        loss = bc_loss(model, batch)
        opt.step(ag.grad(loss, params))
        losses.append(loss.item())
    return model, losses


def bc_baseline(dataset: Dataset, cfg: RunConfig, seed: int):
    """Train BC on the full dataset and evaluate it like the imagined-trained agent."""
    from .pipeline import evaluate

    model, losses = train_bc(dataset, cfg, seed)
    report = evaluate(model, cfg, seed, tag="bc")
    report["final_loss"] = float(np.mean(losses[-50:])) if losses else None
    return model, report
