"""Tiny environments for exercising the optimiser."""
from __future__ import annotations

import numpy as np

from .env import EpisodeResult


class BanditEnv:
    """One-step bandit with a constant observation; arm ``best`` pays +1."""

    def __init__(self, n_arms: int = 2, best: int = 0, obs_dim: int = 1):
        self.n_actions = n_arms
        self.best = best
        self.obs_dim = obs_dim
        self.active_segment = 0
        self._last = 0.0

    def reset(self) -> np.ndarray:
        return np.ones(self.obs_dim)

    def step(self, action):
        self._last = 1.0 if action == self.best else 0.0
        return np.ones(self.obs_dim), self._last, True

    def result(self) -> EpisodeResult:
        return EpisodeResult(frozenset(), 0, 1)
