"""Non-learned reference agents: uniform random and experience-frequency rule."""

from __future__ import annotations

import numpy as np

from ..data import Action, PlayerState, Position
from ..experience import ExperienceIndex, empirical_distributions
from .base import Agent


class RandomAgent(Agent):
    """Uniform shot type, uniform landing and move over [-1, 1]^2."""

    def __init__(self, n_shot_types: int = 12):
        self.n_shot_types = n_shot_types
        self._info: dict = {}

    def act(self, history, current: PlayerState, player_id: str, seed: int) -> Action:
        rng = np.random.default_rng(seed)
        shot = int(rng.integers(self.n_shot_types))
        lx, ly, mx, my = rng.uniform(-1.0, 1.0, size=4)
        self._info = {"shot_dist": [1.0 / self.n_shot_types] * self.n_shot_types}
        return Action(landing=Position(lx, ly), shot=shot, move=Position(mx, my))

    def last_act_info(self) -> dict:
        return self._info


class RuleAgent(Agent):
    """Retrieves experiences for the current state and samples the shot from
    their first-action histogram, landing and move uniformly from the
    retrieved sample sets."""

    def __init__(self, index: ExperienceIndex, n_shot_types: int = 12):
        self.index = index
        self.n_shot_types = n_shot_types
        self._info: dict = {}

    def act(self, history, current: PlayerState, player_id: str, seed: int) -> Action:
        rng = np.random.default_rng(seed)
        hist, landings, moves = empirical_distributions(self.index, current)
        if not landings:
            raise RuntimeError("experience index returned no candidates")
        shot_ids = np.array(sorted(hist), dtype=np.int64)
        probs = np.array([hist[i] for i in shot_ids], dtype=np.float64)
        probs = probs / probs.sum()
        shot = int(rng.choice(shot_ids, p=probs))
        land = landings[int(rng.integers(len(landings)))]
        move = moves[int(rng.integers(len(moves)))]
        dist = np.zeros(self.n_shot_types)
        for i, p in zip(shot_ids, probs):
            if i < self.n_shot_types:
                dist[i] = p
        self._info = {"shot_dist": (dist / dist.sum()).tolist()}
        return Action(landing=land, shot=shot, move=move)

    def last_act_info(self) -> dict:
        return self._info
