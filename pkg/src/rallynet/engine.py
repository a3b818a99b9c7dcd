"""Turn-based rally simulator: transition rule, termination, rollouts, matchups.

The engine alternates two agents, starting with the rally's starter on odd
steps. Each player's own coordinates live in their own hitter frame (own half
y < 0); the transition copies the actor's action fields into the opponent's
next observation, so the fields describing the opponent are expressed in the
opponent's frame. The synthetic generator and all agents share this
convention, which keeps rollouts and data mutually consistent.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .data import CANT_REACH, RECEIVING, Action, PlayerState, Position, Rally

MAX_RALLY_LENGTH = 100
NET_EPSILON = 0.02


class TerminationReason(enum.Enum):
    CANT_REACH = "cant_reach"
    INTO_NET = "into_net"
    OUT_OF_BOUNDS = "out_of_bounds"
    MAX_LENGTH = "max_length"


class InvalidActionError(Exception):
    """An agent emitted a non-finite or structurally invalid action."""


@dataclass
class RolloutTrace:
    """A generated rally plus per-stroke rollout metadata."""

    rally: Rally
    reason: TerminationReason
    loser: str
    step_infos: list[dict] = field(default_factory=list)
    aborted: bool = False
    error: str | None = None


def mirror(p: Position) -> Position:
    """Convert a point between the two players' hitter frames (180° rotation)."""
    return Position(-p.x, -p.y)


def transition(actor_state: PlayerState, actor_action: Action, opponent_pos: Position) -> PlayerState:
    """Next observation of the receiving player after the actor's stroke.

    `opponent_pos` is the receiver's current position in their own frame:
    their last move destination, or their initial position at rally start.
    """
    for p in (actor_action.landing, actor_action.move):
        if not (math.isfinite(p.x) and math.isfinite(p.y)):
            raise InvalidActionError(f"non-finite action coordinates: {actor_action}")
    own, opp, set_idx = actor_state.score_info
    return PlayerState(
        score_info=(opp, own, set_idx),
        shuttle_pos=actor_action.landing,
        incoming_shot=actor_action.shot,
        self_pos=opponent_pos,
        opp_pos=actor_action.move,
        opp_move_vec=(
            actor_action.move.x - actor_state.self_pos.x,
            actor_action.move.y - actor_state.self_pos.y,
        ),
    )


def check_termination(
    action: Action,
    step: int,
    max_len: int = MAX_RALLY_LENGTH,
    net_epsilon: float = NET_EPSILON,
) -> TerminationReason | None:
    """Return the termination reason fired by this stroke, if any.

    A legal landing lies in the opponent's half [-1, 1] x (0, 1] of the
    hitter frame; landings in the band (-net_epsilon, 0] hit the net.
    """
    if action.shot == CANT_REACH:
        return TerminationReason.CANT_REACH
    x, y = action.landing.x, action.landing.y
    if -net_epsilon < y <= 0.0:
        return TerminationReason.INTO_NET
    if not (-1.0 <= x <= 1.0 and 0.0 < y <= 1.0):
        return TerminationReason.OUT_OF_BOUNDS
    if step >= max_len:
        return TerminationReason.MAX_LENGTH
    return None


def rollout_rally(
    agent_a,
    agent_b,
    init: PlayerState,
    seed: int,
    max_len: int = MAX_RALLY_LENGTH,
    rally_id: str = "rollout",
    player_a: str = "A",
    player_b: str = "B",
    forced_actions: list[Action] | None = None,
    init_b_pos: Position | None = None,
) -> RolloutTrace:
    """Alternate the two agents from an initial state until termination.

    `forced_actions` force-plays the first strokes (e.g. the data rally's
    first two actions) before handing control to the agents. Deterministic
    given the seed and deterministic agents.
    """
    rng = np.random.default_rng(seed)
    agents = {player_a: agent_a, player_b: agent_b}
    for agent in (agent_a, agent_b):
        reset = getattr(agent, "reset_rally", None)
        if reset is not None:
            reset()

    histories: dict[str, list[PlayerState]] = {player_a: [], player_b: []}
    # opp_pos of a state is expressed in the opponent's own frame (the
    # transition copies the opponent's move destination verbatim), so the
    # receiver's starting position defaults to it directly.
    positions = {
        player_a: init.self_pos,
        player_b: init_b_pos if init_b_pos is not None else init.opp_pos,
    }
    strokes: list[tuple[str, PlayerState, Action]] = []
    infos: list[dict] = []
    state = init
    actor = player_a
    step = 1
    reason = None
    loser = None
    forced = list(forced_actions or [])

    while True:
        other = player_b if actor == player_a else player_a
        if forced:
            action = forced.pop(0)
            info = {"forced": True}
        else:
            agent = agents[actor]
            stroke_seed = int(rng.integers(0, 2**63 - 1))
            try:
                action = agent.act(histories[actor], state, actor, stroke_seed)
            except Exception as exc:  # aborted trace is flagged, not dropped
                rally = Rally(
                    rally_id=rally_id,
                    starter=player_a,
                    second=player_b,
                    strokes=strokes or [(actor, state, Action(Position(0, 0.5), CANT_REACH, Position(0, -0.5)))],
                    winner=other,
                    source="generated",
                )
                return RolloutTrace(
                    rally=rally,
                    reason=TerminationReason.CANT_REACH,
                    loser=actor,
                    step_infos=infos,
                    aborted=True,
                    error=f"{type(exc).__name__}: {exc}",
                )
            info = getattr(agent, "last_act_info", None)
            info = dict(info() if callable(info) else {})
        strokes.append((actor, state, action))
        histories[actor].append(state)
        positions[actor] = action.move
        reason = check_termination(action, step, max_len=max_len)
        info["step"] = step
        info["actor"] = actor
        if reason is not None:
            info["termination"] = reason.value
        infos.append(info)
        if reason is not None:
            loser = actor
            break
        state = transition(state, action, positions[other])
        actor = other
        step += 1

    winner = player_b if loser == player_a else player_a
    rally = Rally(
        rally_id=rally_id,
        starter=player_a,
        second=player_b,
        strokes=strokes,
        winner=winner,
        source="generated",
    )
    return RolloutTrace(rally=rally, reason=reason, loser=loser, step_infos=infos)


def simulate_matchup(
    agent_a,
    agent_b,
    inits: list[PlayerState],
    n_per_init: int,
    seed: int,
    max_len: int = MAX_RALLY_LENGTH,
    player_a: str = "A",
    player_b: str = "B",
) -> tuple[float, list[RolloutTrace]]:
    """Roll out every initial state n_per_init times; win rate of A = losses by B / total."""
    if not inits:
        raise ValueError("simulate_matchup needs at least one initial state")
    rng = np.random.default_rng(seed)
    traces = []
    losses_b = 0
    for i, init in enumerate(inits):
        for j in range(n_per_init):
            trace = rollout_rally(
                agent_a,
                agent_b,
                init,
                seed=int(rng.integers(0, 2**63 - 1)),
                max_len=max_len,
                rally_id=f"matchup-{i}-{j}",
                player_a=player_a,
                player_b=player_b,
            )
            traces.append(trace)
            if trace.loser == player_b:
                losses_b += 1
    return losses_b / len(traces), traces
