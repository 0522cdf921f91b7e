"""Command-line entry point: ``imac <subcommand> [--config F] [--seed N] [--out DIR]``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline as pl
from . import reward_model as rtm
from . import world_model as wm
from .agent import ActorCritic
from .config import ConfigError, RunConfig, load_config
from .data import read_dataset, write_dataset
from .optim import FrozenModelError


def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be a u64, got {text}")
    return value


def _seeds(text: str) -> list[int]:
    return [_seed(s) for s in text.split(",") if s.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="imac", description="Offline world-model RL with an imagined curriculum.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text, mode=False, seed=True):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, help="INI-style config file")
        if seed:
            p.add_argument("--seed", type=_seed, default=0, help="u64 root seed")
        p.add_argument("--out", type=Path, default=Path("runs/default"))
        if mode:
            p.add_argument("--mode", choices=pl.MODES, help="curriculum mode (overrides the config)")
        return p

    add("collect-data", "collect the mixed offline dataset")
    add("train-wm", "train and freeze the diffusion world model")
    add("train-rt", "train and freeze the reward/termination model")
    add("train-agent", "train the agent in imagination", mode=True)
    ev = add("eval", "evaluate an agent on train and test levels", mode=True)
    ev.add_argument("--agent", type=Path, help="agent checkpoint (default: <out>/agent_<mode>.ckpt)")
    ev.add_argument("--untrained", action="store_true", help="evaluate a freshly initialized agent")
    add("run-all", "collect, train all three phases and evaluate", mode=True)
    ab = add("ablation", "fixed / random / plr arms over several seeds", seed=False)
    ab.add_argument("--seeds", type=_seeds, default=[1, 2, 3], help="comma-separated root seeds")
    ab.add_argument("--bc", action="store_true", help="add a behavior-cloning row per seed")
    ab.add_argument("--resume", action="store_true", help="reuse arms already finished in --out")
    return parser


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "mode", None):
        cfg = cfg.replace(curriculum={"mode": args.mode})
    return cfg.validate()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return _run(args)
    except (ConfigError, FileNotFoundError, FrozenModelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except pl.PhaseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _run(args) -> int:
    cfg = _config(args)
    out: Path = args.out
    art = pl.Artifacts(out)
    cmd = args.command
    if cmd != "ablation":
        out.mkdir(parents=True, exist_ok=True)
    if cmd == "collect-data":
        with pl.phase("data"):
            ds = pl.build_dataset(cfg, args.seed)
            write_dataset(ds, art.dataset)
        print(f"wrote {art.dataset} ({ds.transition_count} transitions, {len(ds.episodes)} episodes)")
    elif cmd == "train-wm":
        ds = read_dataset(pl.require(art.dataset, "dataset"))
        with pl.phase("world_model"):
            model, losses = pl.train_world(cfg, ds, args.seed)
            model.save(art.world_model)
        print(f"wrote {art.world_model} (final loss {losses[-1]:.4f})" if losses else f"wrote {art.world_model}")
    elif cmd == "train-rt":
        ds = read_dataset(pl.require(art.dataset, "dataset"))
        with pl.phase("reward_model"):
            model, losses = pl.train_reward(cfg, ds, args.seed)
            model.save(art.reward_model)
        print(f"wrote {art.reward_model} (final loss {losses[-1]:.4f})" if losses else f"wrote {art.reward_model}")
    elif cmd == "train-agent":
        ds = read_dataset(pl.require(art.dataset, "dataset"))
        world = wm.DenoiserModel.load(pl.require(art.world_model, "world model checkpoint"))
        reward = rtm.RTModel.load(pl.require(art.reward_model, "reward model checkpoint"))
        row = pl.run_agent_phase(cfg, args.seed, out, ds, world, reward)
        print(f"{row['mode']} seed {row['seed']}: train {row['train_return']:.3f} test {row['test_return']:.3f}")
    elif cmd == "eval":
        mode = cfg.curriculum.mode
        if args.untrained:
            ds = read_dataset(pl.require(art.dataset, "dataset"))
            actor = pl.new_actor(cfg, ds, args.seed)
        else:
            actor = ActorCritic.load(pl.require(args.agent or art.agent(mode), "agent checkpoint"))
        with pl.phase("eval"):
            report = pl.evaluate(actor, cfg, args.seed, tag="final")
            pl.write_report(art.report(mode), report, mode=mode, seed=args.seed)
        print(f"train {report['train_return']:.3f} test {report['test_return']:.3f} -> {art.report(mode)}")
    elif cmd == "run-all":
        row = pl.run_pipeline(cfg, args.seed, out)
        print(f"{row['mode']} seed {row['seed']}: train {row['train_return']:.3f} test {row['test_return']:.3f}")
    elif cmd == "ablation":
        rows = pl.run_ablation(cfg, args.seeds, out, include_bc=args.bc, resume=args.resume)
        print(pl.summary_table(rows), end="")
    return 0


if __name__ == "__main__":
    sys.exit(main())
