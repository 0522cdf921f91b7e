"""Three-phase driver: world model, then reward/termination model, then agent.

The first two phases end with a freeze; the agent phase trains only on
imagined rollouts chosen by the curriculum. Metrics are one JSON object per
epoch. Wall-clock times go to a separate file so that reruns with the same
seed produce byte-identical metrics.
"""

from __future__ import annotations

import contextlib
import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import agent as agent_mod
from . import autograd as ag
from . import checkpoint
from . import reward_model as rtm
from . import world_model as wm
from .config import ConfigError, RunConfig, dump_config
from .curriculum import Curriculum
from .data import Dataset, collect_dataset, read_dataset, write_dataset
from .imagination import ContextSampler, Imaginer
from .optim import AdamW
from .rng import seeded_rng

log = logging.getLogger(__name__)

MODES = ("fixed", "random", "plr")


class PhaseError(RuntimeError):
    def __init__(self, phase: str, cause: BaseException):
        super().__init__(f"[{phase}] {type(cause).__name__}: {cause}")
        self.phase = phase
        self.cause = cause


@contextlib.contextmanager
def phase(tag: str):
    try:
        yield
    except PhaseError:
        raise
    except Exception as exc:
        raise PhaseError(tag, exc) from exc


class BarrierError(RuntimeError):
    pass


def model_checksum(model) -> str:
    return checkpoint.checksum(model.state_arrays())


# ------------------------------------------------------------------ phases


def build_dataset(cfg: RunConfig, seed: int) -> Dataset:
    spec = cfg.env.spec()
    return collect_dataset(spec, spec.train_level_count, cfg.data.total_transitions, seeded_rng(seed, "data"))


def train_world(cfg: RunConfig, dataset: Dataset, seed: int) -> tuple[wm.DenoiserModel, list[float]]:
    c = cfg.world_model
    rng = seeded_rng(seed, "diffusion")
    model = wm.DenoiserModel(dataset.obs_dim, dataset.action_count, c.context, c.hidden, c.sigma_data,
                             c.noise_emb_dim, c.residual, rng)
    return wm.train_world_model(model, dataset, c, rng)


def train_reward(cfg: RunConfig, dataset: Dataset, seed: int) -> tuple[rtm.RTModel, list[float]]:
    c = cfg.rt
    rng = seeded_rng(seed, "reward")
    model = rtm.RTModel(dataset.obs_dim, dataset.action_count, c.ensemble, c.hidden, c.lstm, rng)
    return rtm.train_rt_model(model, dataset, c, rng)


def new_actor(cfg: RunConfig, dataset: Dataset, seed: int) -> agent_mod.ActorCritic:
    return agent_mod.ActorCritic(dataset.obs_dim, dataset.action_count, cfg.agent.hidden, cfg.agent.lstm,
                                 seeded_rng(seed, "agent-init"))


def evaluate(actor, cfg: RunConfig, seed: int, n_train: int | None = None, n_test: int | None = None,
             episodes: int | None = None, tag: str = "eval") -> dict:
    """Mean returns on the first ``n_train`` train and ``n_test`` test levels (all if None)."""
    spec = cfg.env.spec()
    episodes = cfg.train.eval_episodes if episodes is None else episodes
    train_levels = list(spec.train_levels)[:n_train]
    test_levels = list(spec.test_levels)[:n_test]
    policy = actor if not isinstance(actor, agent_mod.ActorCritic) else agent_mod.ActorPolicy(actor, cfg.agent.greedy_eval)
    rng = seeded_rng(seed, "env:" + tag)
    tr = agent_mod.evaluate_policy(policy, spec, train_levels, episodes, rng)
    te = agent_mod.evaluate_policy(policy, spec, test_levels, episodes, rng)
    return {"train_return": tr["mean_return"], "test_return": te["mean_return"],
            "train_per_level": tr["per_level"], "test_per_level": te["per_level"]}


def _stats(x) -> dict | None:
    if len(x) == 0:
        return None
    x = np.asarray(x, dtype=np.float64)
    return {"min": float(x.min()), "mean": float(x.mean()), "max": float(x.max())}


def _mean(x) -> float | None:
    return float(np.mean(x)) if len(x) else None


@dataclass
class AgentRun:
    actor: agent_mod.ActorCritic
    records: list[dict]
    curriculum: Curriculum
    timings: list[float] = field(default_factory=list)


def train_agent(cfg: RunConfig, dataset: Dataset, world: wm.DenoiserModel, reward: rtm.RTModel, seed: int,
                metrics_path=None, timing_path=None) -> AgentRun:
    """A2C inside imagination; one metrics record per epoch."""
    hp = cfg.agent
    mode = cfg.curriculum.mode
    actor = new_actor(cfg, dataset, seed)
    params = actor.parameters()
    opt = AdamW(params, lr=hp.lr, eps=hp.eps, weight_decay=hp.weight_decay, max_grad_norm=hp.grad_clip)
    imaginer = Imaginer(world, wm.NoiseSchedule.from_config(cfg.world_model), reward, hp.gamma,
                        cfg.rt.reward_mode, cfg.imagination.rebinarize)
    curriculum = Curriculum(cfg.curriculum, cfg.horizon, ContextSampler(dataset, world.context), hp.gamma, hp.lam)
    roll_rng = seeded_rng(seed, "agent")
    cur_rng = seeded_rng(seed, "curriculum")
    records, timings = [], []
    metrics_file = open(metrics_path, "w", encoding="utf-8") if metrics_path else None
    timing_file = open(timing_path, "w", encoding="utf-8") if timing_path else None
    try:
        for epoch in range(cfg.train.epochs):
            t0 = time.perf_counter()
            losses = {"total": [], "policy": [], "value": [], "entropy": []}
            horizons, replay_h, lengths, returns = [], [], [], []
            explored = 0
            for _ in range(cfg.train.steps_per_epoch):
                proposals = [curriculum.propose(cur_rng) for _ in range(hp.batch_size)]
                fresh = [p for p in proposals if not curriculum.uses_stored(p)]
                imagined = iter(imaginer.imagine_batch(actor, [p.context for p in fresh], [p.horizon for p in fresh],
                                                       roll_rng) if fresh else [])
                train_on = []
                for p in proposals:
                    traj = curriculum.record(p, None if curriculum.uses_stored(p) else next(imagined))
                    horizons.append(p.horizon)
                    if p.is_replay:
                        replay_h.append(p.horizon)
                    else:
                        explored += 1
                    if traj is not None:
                        train_on.append(traj)
                        lengths.append(traj.length)
                        returns.append(float(traj.rewards.sum()))
                if not train_on:
                    continue
                batch = agent_mod.TrajectoryBatch.from_trajectories(train_on)
                out = agent_mod.a2c_losses(actor, batch, hp)
                opt.step(ag.grad(out.total, params))
                losses["total"].append(out.total.item())
                losses["policy"].append(out.policy_loss.item())
                losses["value"].append(out.value_loss.item())
                losses["entropy"].append(out.entropy.item())
            rec = {
                "epoch": epoch,
                "phase": "agent",
                "mode": mode,
                "losses": {k: _mean(v) for k, v in losses.items()},
                "mean_imagined_length": _mean(lengths),
                "mean_imagined_return": _mean(returns),
            }
            if mode != "fixed":
                rec["mean_sampled_horizon"] = _mean(horizons)
            if mode == "plr":
                rec["mean_replay_horizon"] = _mean(replay_h)
                rec["buffer_size"] = len(curriculum.buffer)
                rec["buffer_score_stats"] = _stats(curriculum.buffer.scores)
                rec["buffer_mean_horizon"] = _mean([e.horizon for e in curriculum.buffer.entries])
                rec["explore_fraction"] = explored / max(len(horizons), 1)
            last = epoch == cfg.train.epochs - 1
            if (epoch + 1) % cfg.train.eval_every == 0 or last:
                ev = evaluate(actor, cfg, seed, cfg.train.eval_train_levels, cfg.train.eval_test_levels,
                              tag=f"epoch{epoch}")
                rec["eval_return_train"] = ev["train_return"]
                rec["eval_return_test"] = ev["test_return"]
            else:
                rec["eval_return_train"] = rec["eval_return_test"] = None
            records.append(rec)
            timings.append(time.perf_counter() - t0)
            if metrics_file:
                metrics_file.write(json.dumps(rec, sort_keys=True) + "\n")
                metrics_file.flush()
            if timing_file:
                timing_file.write(json.dumps({"epoch": epoch, "wall_time": timings[-1]}) + "\n")
                timing_file.flush()
            log.info("agent[%s] epoch %d loss %s test %s", mode, epoch, rec["losses"]["total"], rec["eval_return_test"])
    finally:
        if metrics_file:
            metrics_file.close()
        if timing_file:
            timing_file.close()
    return AgentRun(actor, records, curriculum, timings)


# ---------------------------------------------------------------- artifacts


@dataclass
class Artifacts:
    out: Path

    @property
    def dataset(self) -> Path:
        return self.out / "dataset.imac"

    @property
    def world_model(self) -> Path:
        return self.out / "wm.ckpt"

    @property
    def reward_model(self) -> Path:
        return self.out / "rt.ckpt"

    def agent(self, mode: str) -> Path:
        return self.out / f"agent_{mode}.ckpt"

    def metrics(self, mode: str) -> Path:
        return self.out / f"metrics_{mode}.jsonl"

    def timing(self, mode: str) -> Path:
        return self.out / f"timing_{mode}.jsonl"

    def report(self, mode: str) -> Path:
        return self.out / f"eval_{mode}.jsonl"

    def buffer(self, mode: str) -> Path:
        return self.out / f"buffer_{mode}.jsonl"


def require(path: Path, what: str) -> Path:
    if not Path(path).exists():
        raise FileNotFoundError(f"missing {what}: {path}")
    return Path(path)


def write_report(path, report: dict, **extra) -> None:
    rows = [{"split": split, "level": int(level), "return": ret, **extra}
            for split in ("train", "test") for level, ret in report[f"{split}_per_level"].items()]
    rows.append({"split": "summary", "train_return": report["train_return"], "test_return": report["test_return"], **extra})
    Path(path).write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in rows), encoding="utf-8")


def prepare_models(cfg: RunConfig, seed: int, out) -> tuple[Dataset, wm.DenoiserModel, rtm.RTModel]:
    """Phases 1-2 (with data collection), reusing checkpoints already in ``out``."""
    art = Artifacts(Path(out))
    art.out.mkdir(parents=True, exist_ok=True)
    with phase("data"):
        if art.dataset.exists():
            dataset = read_dataset(art.dataset)
        else:
            dataset = build_dataset(cfg, seed)
            write_dataset(dataset, art.dataset)
    with phase("world_model"):
        if art.world_model.exists():
            world = wm.DenoiserModel.load(art.world_model)
        else:
            world, _ = train_world(cfg, dataset, seed)
            world.save(art.world_model)
    with phase("reward_model"):
        if art.reward_model.exists():
            reward = rtm.RTModel.load(art.reward_model)
        else:
            reward, _ = train_reward(cfg, dataset, seed)
            reward.save(art.reward_model)
    return dataset, world, reward


def run_agent_phase(cfg: RunConfig, seed: int, out, dataset, world, reward) -> dict:
    """Phase 3 under ``cfg.curriculum.mode`` plus the final evaluation; returns the summary row."""
    art = Artifacts(Path(out))
    mode = cfg.curriculum.mode
    before = (model_checksum(world), model_checksum(reward))
    with phase("agent"):
        run = train_agent(cfg, dataset, world, reward, seed, art.metrics(mode), art.timing(mode))
        run.actor.save(art.agent(mode))
        if run.curriculum.buffer is not None:
            run.curriculum.buffer.export_jsonl(art.buffer(mode))
    if (model_checksum(world), model_checksum(reward)) != before:
        raise BarrierError("frozen model parameters changed during agent training")
    with phase("eval"):
        report = evaluate(run.actor, cfg, seed, tag="final")
        write_report(art.report(mode), report, mode=mode, seed=seed)
    return {"mode": mode, "seed": seed, "train_return": report["train_return"], "test_return": report["test_return"],
            "records": run.records}


def run_pipeline(cfg: RunConfig, seed: int, out) -> dict:
    cfg.validate()
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(dump_config(cfg), encoding="utf-8")
    dataset, world, reward = prepare_models(cfg, seed, out)
    return run_agent_phase(cfg, seed, out, dataset, world, reward)


def _runtime_path(seed_dir: Path) -> Path:
    return seed_dir / "runtime.json"


def record_runtime(seed_dir: Path, key: str, seconds: float) -> None:
    path = _runtime_path(seed_dir)
    times = json.loads(path.read_text(encoding="utf-8")) if path.exists() else {}
    times[key] = seconds
    path.write_text(json.dumps(times, sort_keys=True) + "\n", encoding="utf-8")


def total_runtime(out) -> float:
    """Seconds recorded by ``run_ablation`` across all seed directories."""
    return float(sum(sum(json.loads(p.read_text(encoding="utf-8")).values())
                     for p in Path(out).glob("seed_*/runtime.json")))


def _finished_row(seed_dir: Path, mode: str, seed: int) -> dict | None:
    art = Artifacts(seed_dir)
    if not (art.report(mode).exists() and art.metrics(mode).exists()):
        return None
    summary = read_records(art.report(mode))[-1]
    return {"mode": mode, "seed": seed, "train_return": summary["train_return"],
            "test_return": summary["test_return"], "records": read_records(art.metrics(mode))}


def prepare_run_dir(cfg: RunConfig, out, resume: bool = False) -> Path:
    """Create ``out`` and write its config.ini; a resumed directory must match ``cfg``."""
    cfg.validate()
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    cfg_path = out / "config.ini"
    text = dump_config(cfg)
    if resume and cfg_path.exists() and cfg_path.read_text(encoding="utf-8") != text:
        raise ConfigError(f"{cfg_path} was written by a different config; use a fresh --out")
    cfg_path.write_text(text, encoding="utf-8")
    return out


def run_ablation(cfg: RunConfig, seeds, out, modes=MODES, include_bc: bool = False, resume: bool = False) -> list[dict]:
    """Every mode for every seed; models are trained once per seed and shared across modes.

    With ``resume``, arms whose report already exists are read back instead of rerun;
    the directory must have been produced by the same config.
    """
    from .baselines import bc_baseline

    out = prepare_run_dir(cfg, out, resume)
    rows = []
    for seed in seeds:
        seed_dir = out / f"seed_{seed}"
        t0 = time.perf_counter()
        had_models = Artifacts(seed_dir).reward_model.exists()
        dataset, world, reward = prepare_models(cfg, seed, seed_dir)
        if not had_models:
            record_runtime(seed_dir, "models", time.perf_counter() - t0)
        for mode in modes:
            row = _finished_row(seed_dir, mode, seed) if resume else None
            if row is None:
                t0 = time.perf_counter()
                row = run_agent_phase(cfg.replace(curriculum={"mode": mode}), seed, seed_dir, dataset, world, reward)
                record_runtime(seed_dir, mode, time.perf_counter() - t0)
            rows.append(row)
        if include_bc:
            t0 = time.perf_counter()
            with phase("bc"):
                _, report = bc_baseline(dataset, cfg, seed)
            record_runtime(seed_dir, "bc", time.perf_counter() - t0)
            rows.append({"mode": "bc", "seed": seed, "train_return": report["train_return"],
                         "test_return": report["test_return"], "records": []})
    write_summary(out, rows)
    return rows


def write_summary(out, rows) -> str:
    out = Path(out)
    with open(out / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["mode", "seed", "train_return", "test_return"])
        for r in rows:
            w.writerow([r["mode"], r["seed"], repr(r["train_return"]), repr(r["test_return"])])
    table = summary_table(rows)
    (out / "summary.md").write_text(table, encoding="utf-8")
    return table


def summary_table(rows) -> str:
    """Mean +- std (population) of train/test returns per mode over seeds."""
    lines = ["| mode | seeds | train return | test return |", "|---|---|---|---|"]
    for mode in dict.fromkeys(r["mode"] for r in rows):
        sel = [r for r in rows if r["mode"] == mode]
        tr = np.array([r["train_return"] for r in sel])
        te = np.array([r["test_return"] for r in sel])
        lines.append(f"| {mode} | {len(sel)} | {tr.mean():.3f} ± {tr.std():.3f} | {te.mean():.3f} ± {te.std():.3f} |")
    return "\n".join(lines) + "\n"


def read_records(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]
