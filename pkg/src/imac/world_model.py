"""EDM-preconditioned diffusion denoiser for next-observation prediction.

The network sees the noisy next observation (scaled by ``c_in``), the last
``L`` normalized observations, one-hot encodings of the ``L`` actions ending
with the action just taken, and a Fourier embedding of ``c_noise``. Sampling
integrates the probability-flow ODE with Euler steps on a rho-spaced sigma grid.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from . import checkpoint
from .autograd import Tensor
from .config import WorldModelConfig
from .data import Dataset, eligible_episodes, normalize_obs, sample_batch
from .nn import MLP, Module, one_hot
from .optim import AdamW, FrozenModelError

log = logging.getLogger(__name__)

MAGIC = b"IMWM"


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    p_mean: float = -0.4
    p_std: float = 1.2
    sigma_min: float = 0.002
    sigma_max: float = 20.0
    rho: float = 7.0
    n_steps: int = 5
    churn: float = 0.0

    def __post_init__(self):
        if not 0 < self.sigma_min < self.sigma_max:
            raise ValueError("need 0 < sigma_min < sigma_max")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")

    @classmethod
    def from_config(cls, cfg: WorldModelConfig) -> NoiseSchedule:
        return cls(cfg.p_mean, cfg.p_std, cfg.sigma_min, cfg.sigma_max, cfg.rho, cfg.n_steps, cfg.churn)


def edm_precondition(sigma, sigma_data: float = 0.5):
    """(c_in, c_skip, c_out, c_noise); c_noise is -inf at sigma = 0."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma < 0):
        raise ValueError("sigma must be non-negative")
    s2 = sigma * sigma + sigma_data * sigma_data
    c_in = 1.0 / np.sqrt(s2)
    c_skip = sigma_data**2 / s2
    c_out = sigma * sigma_data / np.sqrt(s2)
    with np.errstate(divide="ignore"):
        c_noise = np.log(sigma) / 4.0
    return c_in, c_skip, c_out, c_noise


def loss_weight(sigma, sigma_data: float = 0.5):
    sigma = np.asarray(sigma, dtype=np.float64)
    return (sigma**2 + sigma_data**2) / (sigma * sigma_data) ** 2


def sigma_grid(schedule: NoiseSchedule) -> np.ndarray:
    """Decreasing sigmas of length n_steps + 1, the last one exactly 0."""
    n = schedule.n_steps
    inv = 1.0 / schedule.rho
    if n == 1:
        sig = np.array([schedule.sigma_max])
    else:
        i = np.arange(n, dtype=np.float64)
        sig = (schedule.sigma_max**inv + i / (n - 1) * (schedule.sigma_min**inv - schedule.sigma_max**inv)) ** schedule.rho
    return np.concatenate([sig, [0.0]])


def noise_embedding(c_noise: np.ndarray, dim: int) -> np.ndarray:
    freqs = np.arange(1, dim // 2 + 1, dtype=np.float64)
    ang = np.asarray(c_noise, dtype=np.float64)[:, None] * freqs[None, :]
    return np.concatenate([np.cos(ang), np.sin(ang)], axis=-1)


class DenoiserModel(Module):
    def __init__(
        self,
        obs_dim: int,
        action_count: int,
        context: int = 4,
        hidden=(512, 512),
        sigma_data: float = 0.5,
        noise_emb_dim: int = 16,
        residual: bool = False,
        rng: np.random.Generator | None = None,
    ):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.obs_dim = obs_dim
        self.action_count = action_count
        self.context = context
        self.hidden = tuple(hidden)
        self.sigma_data = float(sigma_data)
        self.noise_emb_dim = noise_emb_dim
        self.residual = bool(residual)
        n_in = obs_dim * (1 + context) + action_count * context + noise_emb_dim
        self.net = MLP([n_in, *self.hidden, obs_dim], rng)
        self.frozen = False

    @property
    def meta(self) -> dict:
        return {
            "obs_dim": self.obs_dim,
            "action_count": self.action_count,
            "context": self.context,
            "hidden": list(self.hidden),
            "sigma_data": self.sigma_data,
            "noise_emb_dim": self.noise_emb_dim,
            "residual": self.residual,
        }

    def condition(self, ctx_obs: np.ndarray, cond_actions: np.ndarray) -> np.ndarray:
        """Flatten (B, L, D) normalized observations and (B, L) actions."""
        b = ctx_obs.shape[0]
        return np.concatenate(
            [ctx_obs.reshape(b, -1), one_hot(cond_actions, self.action_count).reshape(b, -1)], axis=-1
        )

    def denoise(self, x_noisy, sigma: np.ndarray, cond: np.ndarray) -> Tensor:
        """D(x; sigma) = c_skip * x + c_out * net(c_in * x, cond, c_noise)."""
        x = ag.as_tensor(x_noisy)
        sigma = np.asarray(sigma, dtype=np.float64).reshape(-1)
        c_in, c_skip, c_out, c_noise = edm_precondition(sigma, self.sigma_data)
        emb = noise_embedding(c_noise, self.noise_emb_dim)
        inp = ag.concat([ag.mul(x, c_in[:, None]), cond, emb], axis=-1)
        out = self.net(inp)
        return ag.add(ag.mul(x, c_skip[:, None]), ag.mul(out, c_out[:, None]))

    def save(self, path) -> None:
        checkpoint.save(path, MAGIC, self.meta, self.state_arrays())

    @classmethod
    def load(cls, path) -> DenoiserModel:
        meta, arrays = checkpoint.load(path, MAGIC)
        model = cls(**meta)
        model.load_arrays(arrays)
        model.frozen = True
        return model


def denoiser_loss(
    model: DenoiserModel,
    batch: dict,
    rng: np.random.Generator | None,
    schedule: NoiseSchedule,
    sigma: np.ndarray | None = None,
    noise: np.ndarray | None = None,
) -> Tensor:
    """EDM-weighted reconstruction loss on the observation after the context.

    ``batch`` holds raw segments as produced by ``sample_batch(..., H=1)``.
    ``sigma`` / ``noise`` override the random draws (used by exact tests).
    """
    L = model.context
    obs = normalize_obs(batch["obs"])
    ctx_obs = obs[:, :L]
    target = obs[:, L]
    if model.residual:
        target = target - obs[:, L - 1]
    b = target.shape[0]
    if sigma is None:
        sigma = np.exp(schedule.p_mean + schedule.p_std * rng.standard_normal(b))
    if noise is None:
        noise = rng.standard_normal(target.shape)
    sigma = np.asarray(sigma, dtype=np.float64).reshape(b)
    x_noisy = target + sigma[:, None] * noise
    cond = model.condition(ctx_obs, batch["actions"][:, :L])
    denoised = model.denoise(x_noisy, sigma, cond)
    err = ag.tsum(ag.square(ag.sub(denoised, target)), axis=-1)
    weighted = ag.mul(err, loss_weight(sigma, model.sigma_data))
    return ag.mean(weighted)


def sample_next_obs(
    model: DenoiserModel,
    schedule: NoiseSchedule,
    ctx_obs: np.ndarray,
    ctx_actions: np.ndarray,
    action: np.ndarray,
    rng: np.random.Generator,
    denoise_fn=None,
) -> np.ndarray:
    """Euler-integrate the probability-flow ODE from sigma_max down to 0.

    ``ctx_obs`` (B, L, D) normalized frames oldest first; ``ctx_actions`` (B, L)
    where entry j is the action that led into frame j; ``action`` (B,) is the
    action taken at the newest frame. With ``schedule.churn > 0`` noise is
    re-injected before each step (EDM stochastic sampler).
    """
    ctx_obs = np.asarray(ctx_obs, dtype=np.float64)
    action = np.asarray(action, dtype=np.int64).reshape(-1)
    b = ctx_obs.shape[0]
    cond_actions = np.concatenate([np.asarray(ctx_actions)[:, 1:], action[:, None]], axis=1)
    cond = model.condition(ctx_obs, cond_actions)
    sigmas = sigma_grid(schedule)
    n = schedule.n_steps
    x = rng.standard_normal((b, model.obs_dim)) * sigmas[0]
    if denoise_fn is None:

        def denoise_fn(xx, s):
            with ag.no_grad():
                return model.denoise(xx, np.full(b, s), cond).data

    for i in range(n):
        s_cur, s_next = sigmas[i], sigmas[i + 1]
        if schedule.churn > 0:
            gamma = min(schedule.churn / n, math.sqrt(2.0) - 1.0)
            s_hat = s_cur * (1.0 + gamma)
            x = x + math.sqrt(s_hat**2 - s_cur**2) * rng.standard_normal(x.shape)
            s_cur = s_hat
        denoised = denoise_fn(x, s_cur)
        if s_next == 0.0:
            x = denoised  # the Euler step to sigma = 0, without the rounding of x - (x - D)
        else:
            x = x + (s_next - s_cur) * (x - denoised) / s_cur
    if model.residual:
        x = ctx_obs[:, -1] + x
    return np.clip(x, -1.0, 1.0)


def train_world_model(
    model: DenoiserModel,
    dataset: Dataset,
    cfg: WorldModelConfig,
    rng: np.random.Generator,
) -> tuple[DenoiserModel, list[float]]:
    """AdamW on ``denoiser_loss`` for ``cfg.steps`` steps, then freeze."""
    if model.frozen:
        raise FrozenModelError("world model is frozen")
    if not dataset.episodes:
        raise ValueError("dataset is empty")
    schedule = NoiseSchedule.from_config(cfg)
    params = model.parameters()
    opt = AdamW(params, lr=cfg.lr, eps=cfg.eps, weight_decay=cfg.weight_decay, max_grad_norm=cfg.grad_clip)
    eligible = eligible_episodes(dataset)
    losses = []
    for step in range(cfg.steps):
        batch = sample_batch(dataset, model.context, 1, cfg.batch_size, rng, eligible)
        loss = denoiser_loss(model, batch, rng, schedule)
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingError(f"world model: non-finite loss {value} at step {step}")
        opt.step(ag.grad(loss, params))
        losses.append(value)
        if (step + 1) % cfg.steps_per_epoch == 0:
            log.info("world model step %d loss %.4f", step + 1, float(np.mean(losses[-cfg.steps_per_epoch :])))
    model.frozen = True
    return model, losses


def one_step_mse(
    model: DenoiserModel,
    schedule: NoiseSchedule,
    dataset: Dataset,
    n_segments: int,
    rng: np.random.Generator,
    batch_size: int = 256,
) -> float:
    """Per-cell MSE (normalized space) of sampled next frames on dataset segments."""
    eligible = eligible_episodes(dataset)
    L = model.context
    errs = []
    remaining = n_segments
    while remaining > 0:
        b = min(batch_size, remaining)
        batch = sample_batch(dataset, L, 1, b, rng, eligible)
        obs = normalize_obs(batch["obs"])
        pred = sample_next_obs(model, schedule, obs[:, :L], _prior_actions(batch["actions"], L), batch["actions"][:, L - 1], rng)
        errs.append(np.mean((pred - obs[:, L]) ** 2, axis=-1))
        remaining -= b
    return float(np.mean(np.concatenate(errs)))


def _prior_actions(actions: np.ndarray, L: int) -> np.ndarray:
    """Actions leading into each context frame: (a_{-1}=noop-padded, a_0 .. a_{L-2})."""
    from .envs import NOOP

    lead = np.full((actions.shape[0], 1), NOOP, dtype=np.int64)
    return np.concatenate([lead, actions[:, : L - 1]], axis=1)
