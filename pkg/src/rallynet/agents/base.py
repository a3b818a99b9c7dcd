"""Shared agent interface and the common head-output-to-Action emission."""

from __future__ import annotations

import numpy as np

from ..data import Action, PlayerState, Position
from ..model.networks import MixtureParams


class Agent:
    """Interface all policies implement.

    act() must return an Action with a shot id in [0, n_shot_types) and
    finite positions; reset_rally() clears any per-rally latches.
    """

    def act(self, history, current: PlayerState, player_id: str, seed: int) -> Action:
        raise NotImplementedError

    def reset_rally(self):
        pass

    def last_act_info(self) -> dict:
        return {}


# Legal emission region, slightly inside the court: landings stay above the
# net band, moves stay in the mover's own half.
_LANDING_BOX = ((-0.98, 0.98), (0.03, 0.98))
_MOVE_BOX = ((-0.98, 0.98), (-0.98, -0.02))


def _project(p: Position, box) -> Position:
    (xlo, xhi), (ylo, yhi) = box
    return Position(min(max(p.x, xlo), xhi), min(max(p.y, ylo), yhi))


def emit_action(
    shot_probs: np.ndarray,
    landing: MixtureParams,
    move: MixtureParams,
    mode: str,
    rng: np.random.Generator,
) -> Action:
    """Turn head outputs into an Action, by sampling or by the weighted mode
    (argmax shot; mean of the highest-weight component).

    Continuous outputs are projected into the legal action region, so learned
    policies terminate rallies through the miss channel (the "can't reach"
    shot) rather than through Gaussian tail mass leaking out of court.
    """
    if mode == "mode":
        shot = int(np.argmax(shot_probs))
        land_pos = landing.top_component_mean()
        move_pos = move.top_component_mean()
    elif mode == "sample":
        shot = int(rng.choice(len(shot_probs), p=shot_probs / shot_probs.sum()))
        land_pos = landing.sample(rng)
        move_pos = move.sample(rng)
    else:
        raise ValueError(f"unknown emission mode {mode!r}")
    return Action(
        landing=_project(land_pos, _LANDING_BOX),
        shot=shot,
        move=_project(move_pos, _MOVE_BOX),
    )


def mirror_position(p: Position) -> Position:
    return Position(-p.x, -p.y)
