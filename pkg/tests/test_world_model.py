from __future__ import annotations

import numpy as np
import pytest

from imac import autograd as ag
from imac import world_model as wm
from imac.config import WorldModelConfig
from imac.data import collect_dataset, sample_batch
from imac.envs import EnvSpec
from imac.optim import AdamW, FrozenModelError
from imac.rng import seeded_rng

from .oracles import central_differences, max_relative_error

SCHED = wm.NoiseSchedule()


class ZeroNet:
    def __call__(self, x):
        return ag.Tensor(np.zeros((x.shape[0], self.dim)))

    def __init__(self, dim):
        self.dim = dim


def test_precondition_identity_on_grid():
    sig = wm.sigma_grid(SCHED)
    c_in, c_skip, c_out, _ = wm.edm_precondition(sig, 0.5)
    np.testing.assert_allclose(c_in**2 * (sig**2 + 0.25), 1.0, rtol=1e-14)
    assert np.all((0 < c_skip) & (c_skip <= 1)) and np.all(c_out >= 0)


def test_precondition_at_sigma_data_and_zero():
    c_in, c_skip, c_out, c_noise = wm.edm_precondition(0.5, 0.5)
    assert c_skip == pytest.approx(0.5)
    c_in, c_skip, c_out, c_noise = wm.edm_precondition(0.0, 0.5)
    assert (c_in, c_skip, c_out) == (2.0, 1.0, 0.0) and c_noise == -np.inf
    with pytest.raises(ValueError):
        wm.edm_precondition(-1.0)


def test_sigma_grid_monotone():
    g = wm.sigma_grid(SCHED)
    assert len(g) == 6 and g[0] == pytest.approx(20.0) and g[-2] == pytest.approx(0.002) and g[-1] == 0.0
    assert np.all(np.diff(g) < 0)
    np.testing.assert_array_equal(wm.sigma_grid(wm.NoiseSchedule(n_steps=1)), [20.0, 0.0])


def _toy_model(rng, dim=6, L=2, residual=False, hidden=(16,)):
    return wm.DenoiserModel(dim, 3, L, hidden, 0.5, 8, residual, rng)


def _toy_batch(rng, b=5, dim=6, L=2):
    obs = rng.integers(0, 2, size=(b, L + 1, dim)).astype(np.float64)
    return {"obs": obs, "actions": rng.integers(0, 3, size=(b, L + 1))}


def test_zero_network_denoiser_and_loss_closed_form(rng):
    model = _toy_model(rng)
    model.net = ZeroNet(model.obs_dim)
    batch = _toy_batch(rng)
    x = batch["obs"][:, 2] * 2 - 1
    sigma = np.array([0.1, 0.5, 1.0, 3.0, 20.0])
    eps = rng.normal(size=x.shape)
    cond = model.condition(batch["obs"][:, :2] * 2 - 1, batch["actions"][:, :2])
    _, c_skip, _, _ = wm.edm_precondition(sigma)
    x_noisy = x + sigma[:, None] * eps
    np.testing.assert_array_equal(model.denoise(x_noisy, sigma, cond).data, c_skip[:, None] * x_noisy)
    lam = wm.loss_weight(sigma)
    expected = np.mean(lam * np.sum(((c_skip - 1)[:, None] * x + (c_skip * sigma)[:, None] * eps) ** 2, axis=-1))
    got = wm.denoiser_loss(model, batch, None, SCHED, sigma=sigma, noise=eps).item()
    assert got == pytest.approx(expected, rel=1e-12)


def test_zero_network_expected_loss(rng):
    # E||c_skip(x + sigma e) - x||^2 = (1 - c_skip)^2 ||x||^2 + c_skip^2 sigma^2 dim
    model = _toy_model(rng)
    model.net = ZeroNet(model.obs_dim)
    batch = _toy_batch(rng, b=1)
    batch = {k: np.repeat(v, 20_000, axis=0) for k, v in batch.items()}
    x = batch["obs"][0, 2] * 2 - 1
    sigma = np.full(20_000, 0.7)
    _, c_skip, _, _ = wm.edm_precondition(0.7)
    closed = wm.loss_weight(0.7) * ((1 - c_skip) ** 2 * np.sum(x**2) + c_skip**2 * 0.49 * 6)
    got = wm.denoiser_loss(model, batch, rng, SCHED, sigma=sigma).item()
    assert got == pytest.approx(closed, rel=0.02)


def test_loss_gradient_matches_finite_differences(rng):
    model = _toy_model(rng, hidden=(8,))
    batch = _toy_batch(rng, b=3)
    sigma = np.array([0.05, 0.8, 5.0])
    eps = rng.normal(size=(3, 6))
    params = model.parameters()

    def f():
        with ag.no_grad():
            return wm.denoiser_loss(model, batch, None, SCHED, sigma=sigma, noise=eps).item()

    analytic = ag.grad(wm.denoiser_loss(model, batch, None, SCHED, sigma=sigma, noise=eps), params)
    assert max_relative_error(analytic, central_differences(f, params)) < 1e-5


@pytest.mark.parametrize("n_steps", [1, 5])
def test_oracle_sampler_recovers_target(rng, n_steps):
    model = _toy_model(rng)
    target = rng.choice([-1.0, 1.0], size=(4, 6))
    ctx = rng.choice([-1.0, 1.0], size=(4, 2, 6))
    out = wm.sample_next_obs(model, wm.NoiseSchedule(n_steps=n_steps), ctx, np.zeros((4, 2), int), np.zeros(4, int),
                             rng, denoise_fn=lambda x, s: target)
    np.testing.assert_array_equal(out, target)


def test_sampler_deterministic_and_bounded(rng):
    model = _toy_model(rng)
    ctx = rng.choice([-1.0, 1.0], size=(3, 2, 6))
    args = (model, wm.NoiseSchedule(churn=1.0), ctx, np.zeros((3, 2), int), np.ones(3, int))
    a = wm.sample_next_obs(*args, seeded_rng(1))
    b = wm.sample_next_obs(*args, seeded_rng(1))
    np.testing.assert_array_equal(a, b)
    assert np.all(np.abs(a) <= 1.0)


def _corridor_batch(rng, b):
    """Two cells, one-hot position; action 1 swaps cells, action 0 stays."""
    pos = rng.integers(0, 2, size=(b, 3))
    acts = rng.integers(0, 2, size=(b, 3))
    # make the last row consistent with the action taken at row 1
    pos[:, 2] = np.where(acts[:, 1] == 1, 1 - pos[:, 1], pos[:, 1])
    obs = np.eye(2)[pos]
    return {"obs": obs, "actions": acts}


def _train_corridor(residual, steps=2000, seed=0):
    rng = np.random.default_rng(seed)
    model = wm.DenoiserModel(2, 2, 2, (32,), 0.5, 8, residual, rng)
    opt = AdamW(model.parameters(), lr=3e-3)
    for _ in range(steps):
        loss = wm.denoiser_loss(model, _corridor_batch(rng, 32), rng, SCHED)
        opt.step(ag.grad(loss, model.parameters()))
    batch = _corridor_batch(rng, 500)
    obs = batch["obs"] * 2 - 1
    pred = wm.sample_next_obs(model, SCHED, obs[:, :2], np.concatenate([np.zeros((500, 1), int), batch["actions"][:, :1]], 1),
                              batch["actions"][:, 1], rng)
    return pred, obs[:, 2]


@pytest.fixture(scope="module")
def corridor():
    return {mode: _train_corridor(mode) for mode in (False, True)}


def test_corridor_fidelity(corridor):
    pred, truth = corridor[False]
    assert np.mean((pred - truth) ** 2) < 0.05


def test_residual_and_absolute_agree(corridor):
    (pa, truth), (pr, truth_r) = corridor[False], corridor[True]
    np.testing.assert_array_equal(truth, truth_r)
    assert np.mean((pa - pr) ** 2) < 0.1
    assert np.mean((pr - truth) ** 2) < 0.05


@pytest.fixture(scope="module")
def toy_dataset():
    return collect_dataset(EnvSpec(), 5, 1500, seeded_rng(0, "data"))


def test_training_loss_trends_down_and_freezes(toy_dataset):
    cfg = WorldModelConfig(hidden=(64,), steps=300, batch_size=16)
    model = wm.DenoiserModel(toy_dataset.obs_dim, 5, 4, (64,), rng=np.random.default_rng(0))
    model, losses = wm.train_world_model(model, toy_dataset, cfg, seeded_rng(0, "diffusion"))

    def ema(xs, a=0.05):
        e = xs[0]
        for v in xs:
            e = (1 - a) * e + a * v
        return e

    assert ema(losses[-100:]) < ema(losses[:100])
    assert model.frozen
    with pytest.raises(FrozenModelError):
        wm.train_world_model(model, toy_dataset, cfg, seeded_rng(0))


def test_checkpoint_roundtrip(tmp_path, rng):
    model = _toy_model(rng, residual=True)
    model.save(tmp_path / "wm.ckpt")
    back = wm.DenoiserModel.load(tmp_path / "wm.ckpt")
    assert back.frozen and back.residual and back.meta == model.meta
    for a, b in zip(model.state_arrays(), back.state_arrays()):
        np.testing.assert_array_equal(a, b)


def test_batch_layout_feeds_loss(toy_dataset, rng):
    batch = sample_batch(toy_dataset, 4, 1, 8, rng)
    model = wm.DenoiserModel(toy_dataset.obs_dim, 5, 4, (8,), rng=rng)
    assert np.isfinite(wm.denoiser_loss(model, batch, rng, SCHED).item())
