"""Synthetic expert generator for desk-scale verification.

Rallies are produced by scripted two-mode expert agents rolled out through
the same engine that evaluation uses, so generated states obey exactly the
transition rule agents will see. Each rally draws one of two tactical modes
(mirrored landing plans distinguished by the serve); per-stroke error hazards
are solved in closed form from the requested mean rally length and starter
win rate, and a losing stroke is emitted as a "can't reach" shot.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import (
    CANT_REACH,
    N_SHOT_TYPES,
    NORMALIZED_COURT,
    RECEIVING,
    SHOT_TYPE_IDS,
    Action,
    Dataset,
    PlayerState,
    Position,
)
from .engine import rollout_rally


class InvalidSpecError(ValueError):
    """The generator config cannot produce a valid dataset."""


# Post-serve play cycles through six phases shared between modes, so
# mid-rally shot types do not reveal the mode; landing plans are mirrored in
# x. Each phase offers a primary and an alternative (shot, target) option so
# the expert is low-entropy but stochastic, with a unique modal action.
_PHASE_OPTIONS = [
    (("net shot", (-0.55, 0.20)), ("lob", (-0.30, 0.80))),
    (("clear", (0.30, 0.85)), ("drop", (0.55, 0.15))),
    (("smash", (-0.40, 0.55)), ("drive", (-0.70, 0.40))),
    (("defensive shot", (0.55, 0.80)), ("push/rush", (0.25, 0.20))),
    (("lob", (-0.20, 0.75)), ("net shot", (-0.45, 0.15))),
    (("drop", (0.50, 0.20)), ("clear", (0.75, 0.70))),
]
_ALT_PROB = 0.3
_SERVES = [("short service", (-0.25, 0.20)), ("long service", (0.25, 0.85))]
# Recovery positions cycle with the rally phase. They sit on cell centers at
# pairwise Chebyshev distance >= 2 cells, so retrieval still tells phases
# apart after one ring of grid relaxation.
_MOVE_CYCLE = [
    (-0.70, -0.70),
    (-0.10, -0.30),
    (0.50, -0.70),
    (-0.70, -0.30),
    (0.50, -0.30),
    (-0.10, -0.70),
]
_FIXED_HOME = (-0.25, -0.45)


@dataclass
class SyntheticConfig:
    n_rallies: int = 2000
    mean_length: float = 7.0
    win_rate_starter: float = 0.6
    players: tuple[str, str] = ("P0", "P1")
    n_modes: int = 2
    landing_jitter: float = 0.14
    move_jitter: float = 0.05
    max_len: int = 60
    n_shot_types: int = N_SHOT_TYPES
    # Constant-policy override: every non-terminal action uses this shot and
    # landing (no jitter). Used by degenerate fixtures.
    fixed_shot: str | int | None = None
    fixed_landing: tuple[float, float] | None = None

    def validate(self):
        if self.n_shot_types <= 0:
            raise InvalidSpecError("generator spec declares zero shot types")
        if self.n_rallies <= 0:
            raise InvalidSpecError("n_rallies must be positive")
        if not 0 < self.win_rate_starter < 1:
            raise InvalidSpecError("win_rate_starter must be in (0, 1)")
        if self.mean_length < 1.5:
            raise InvalidSpecError("mean_length must be at least 1.5")
        if not 1 <= self.n_modes <= 2:
            raise InvalidSpecError("n_modes must be 1 or 2")


def solve_hazards(mean_length: float, win_rate_starter: float) -> tuple[float, float]:
    """Per-stroke error hazards (starter, second) from mean length and win rate.

    With hazard a on odd steps and b on even steps, P(starter errs first)
    = a / (1 - q) with q = (1-a)(1-b), and E[length] = (2 - a) / (1 - q).
    Substituting the win-rate constraint b(1-a) = a*w/(1-w) gives a closed
    form for a.
    """
    w = win_rate_starter
    a = 2.0 * (1.0 - w) / (mean_length + 1.0 - w)
    b = (a * w / (1.0 - w)) / (1.0 - a)
    if not (0 < a < 1 and 0 < b < 1):
        raise InvalidSpecError(
            f"no valid hazards for mean_length={mean_length}, win rate={w}"
        )
    return a, b


def _clip(v, lo, hi):
    return float(min(max(v, lo), hi))


class ScriptedExpert:
    """Low-entropy expert with jittered landings and error hazard.

    `offset` is 0 for the rally starter and 1 for the second player; the
    global step of the h-th own stroke is 2h + 1 + offset.
    """

    def __init__(self, cfg: SyntheticConfig, mode: int, hazard: float, offset: int):
        self.cfg = cfg
        self.mode = mode
        self.hazard = hazard
        self.offset = offset

    def reset_rally(self):
        pass

    def _plan(self, step: int, rng: np.random.Generator):
        """(shot id, landing target) for a global step, per this rally's mode."""
        cfg = self.cfg
        if cfg.fixed_shot is not None or cfg.fixed_landing is not None:
            shot = cfg.fixed_shot if cfg.fixed_shot is not None else "clear"
            sid = shot if isinstance(shot, int) else SHOT_TYPE_IDS[shot]
            target = cfg.fixed_landing or (0.5, 0.8)
            return sid, target
        sign = 1.0 if self.mode == 0 else -1.0
        if step == 1:
            name, target = _SERVES[self.mode % len(_SERVES)]
            return SHOT_TYPE_IDS[name], (sign * target[0], target[1])
        k = (step - 2) % len(_PHASE_OPTIONS)
        primary, alt = _PHASE_OPTIONS[k]
        name, (tx, ty) = alt if rng.random() < _ALT_PROB else primary
        return SHOT_TYPE_IDS[name], (sign * tx, ty)

    def act(self, history, current: PlayerState, player_id: str, seed: int) -> Action:
        cfg = self.cfg
        rng = np.random.default_rng(seed)
        step = 2 * len(history) + 1 + self.offset
        sid, (tx, ty) = self._plan(step, rng)
        if cfg.fixed_landing is not None or cfg.fixed_shot is not None:
            landing = Position(tx, ty)
        else:
            jx, jy = rng.normal(0.0, cfg.landing_jitter, size=2)
            landing = Position(_clip(tx + jx, -0.95, 0.95), _clip(ty + jy, 0.05, 0.95))
        if cfg.fixed_landing is not None or cfg.fixed_shot is not None:
            hx, hy = _FIXED_HOME
        else:
            hx, hy = _MOVE_CYCLE[(step - 1) % len(_MOVE_CYCLE)]
            hx *= 1.0 if self.mode == 0 else -1.0
        mx, my = rng.normal(0.0, cfg.move_jitter, size=2)
        move = Position(_clip(hx + mx, -0.95, 0.95), _clip(hy + my, -0.95, -0.05))
        if rng.random() < self.hazard:
            sid = CANT_REACH
        return Action(landing=landing, shot=sid, move=move)


def initial_state(cfg: SyntheticConfig | None = None) -> PlayerState:
    """Canonical serve state: shuttle at the server, receiver at their base."""
    return PlayerState(
        score_info=(0, 0, 1),
        shuttle_pos=Position(0.0, -0.3),
        incoming_shot=RECEIVING,
        self_pos=Position(0.0, -0.3),
        opp_pos=Position(0.0, -0.35),
        opp_move_vec=(0.0, 0.0),
    )


def rally_mode(rally_id: str) -> int | None:
    """Recover the generator mode label encoded in a synthetic rally id."""
    if "-m" in rally_id:
        try:
            return int(rally_id.rsplit("-m", 1)[1])
        except ValueError:
            return None
    return None


def generate_synthetic_dataset(cfg: SyntheticConfig, seed: int) -> Dataset:
    """Reproducible synthetic dataset; the expert policy has a unique modal action per state."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    hazard_a, hazard_b = solve_hazards(cfg.mean_length, cfg.win_rate_starter)
    p_a, p_b = cfg.players
    init = initial_state(cfg)
    rallies = []
    for i in range(cfg.n_rallies):
        mode = int(rng.integers(cfg.n_modes))
        agent_a = ScriptedExpert(cfg, mode, hazard_a, offset=0)
        agent_b = ScriptedExpert(cfg, mode, hazard_b, offset=1)
        trace = rollout_rally(
            agent_a,
            agent_b,
            init,
            seed=int(rng.integers(0, 2**63 - 1)),
            max_len=cfg.max_len,
            rally_id=f"syn-{i:05d}-m{mode}",
            player_a=p_a,
            player_b=p_b,
        )
        rally = trace.rally
        rally.source = "synthetic"
        rallies.append(rally)
    return Dataset(rallies=rallies, players=list(cfg.players), court=dict(NORMALIZED_COURT))
