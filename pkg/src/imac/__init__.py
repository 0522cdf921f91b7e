"""Offline model-based RL: a diffusion world model, a reward/termination
ensemble, and an actor-critic trained in imagination under a replay curriculum."""

__version__ = "0.1.0"
