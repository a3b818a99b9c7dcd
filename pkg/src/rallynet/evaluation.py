"""Evaluation harness: rollout-based scoring against ground-truth rallies,
normalized-score reports, length realism, case studies, and intent decoding.

Scoring protocol: every test rally is re-simulated from its initial state
(optionally with the first two true strokes forced), then each player's
landing and move sequences are compared by DTW and the shot-distribution
sequence by CTC against the truth. Per-rally values are averaged, then
averaged over seeds; RNS divides by random/rule anchors evaluated under the
identical seeds.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, N_SHOT_TYPES, Position, Rally
from .engine import rollout_rally
from .experience import discretize_position
from .metrics import (
    CTC_BLANK,
    N_CTC_SYMBOLS,
    InfeasibleAlignmentError,
    ctc_loss,
    ctc_required_frames,
    dtw_distance,
    length_jsd,
    mrns,
    rns,
)

BLANK_MASS = 1.0 / N_CTC_SYMBOLS  # explicit blank probability in CTC inputs
SHOT_SMOOTHING = 0.02  # uniform mass over the 12 shots (keeps labels feasible)
BASE_METRICS = ("land_dtw", "shot_ctc", "move_dtw")


class MissingAnchorError(ValueError):
    """RNS was requested without random/rule anchor scores."""


def extend_shot_dist(dist) -> np.ndarray:
    """Lift a 12-way shot distribution to the 13-symbol CTC vocabulary.

    A fixed blank probability is reserved so a frame the true sequence does
    not use costs the same as a padded frame, and a little uniform mass keeps
    every label feasible under confidently wrong predictions.
    """
    d = np.asarray(dist, dtype=np.float64)
    if d.sum() <= 0:
        d = np.full(len(d), 1.0 / len(d))
    p = np.empty(N_CTC_SYMBOLS)
    scale = 1.0 - BLANK_MASS - SHOT_SMOOTHING
    p[: len(d)] = scale * d / d.sum() + SHOT_SMOOTHING / len(d)
    p[CTC_BLANK] = BLANK_MASS
    return p


def _pad_frame() -> np.ndarray:
    """CTC frame for a step where the agent generated no stroke: almost all
    mass on the blank, with the same smoothing floor over the shot labels."""
    p = np.full(N_CTC_SYMBOLS, SHOT_SMOOTHING / N_SHOT_TYPES)
    p[CTC_BLANK] = 1.0 - SHOT_SMOOTHING
    return p


@dataclass
class RawScores:
    """Per-seed per-rally-averaged base metrics for one agent."""

    name: str
    mode: str
    seeds: list[int]
    per_seed: dict[str, list[float]]
    gen_lengths: list[int]
    errors: list[dict] = field(default_factory=list)

    def mean(self, metric: str) -> float:
        return float(np.mean(self.per_seed[metric]))


@dataclass
class MetricReport:
    name: str
    mode: str
    seeds: list[int]
    dataset_hash: str
    land_dtw: float
    shot_ctc: float
    move_dtw: float
    rns_land: float
    rns_shot: float
    rns_move: float
    mrns: float
    length_jsd: float
    per_seed: dict[str, list[float]]
    anchors: dict[str, dict[str, float]]
    averaging: str = "per-rally then per-seed"
    win_rate_diffs: dict[str, float] = field(default_factory=dict)
    n_errors: int = 0

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def rally_initial_conditions(rally: Rally):
    """Initial state and the receiver's starting position for re-simulation."""
    init = rally.strokes[0][1]
    init_b_pos = None
    for pid, state, _ in rally.strokes:
        if pid == rally.second:
            init_b_pos = state.self_pos
            break
    return init, init_b_pos


def _player_metrics(true_rally: Rally, gen_rally: Rally, shot_dists: list) -> dict:
    """Mean over the two players of DTW land/move and CTC shot metrics.

    shot_dists[i] is the 12-way distribution emitted at generated stroke i.
    Raises InfeasibleAlignmentError when the generated rally is too short to
    align a player's true shot labels.
    """
    gen_players = {}
    for i, (pid, _, action) in enumerate(gen_rally.strokes):
        gen_players.setdefault(pid, []).append((action, shot_dists[i]))
    land, move, shot = [], [], []
    for pid in (true_rally.starter, true_rally.second):
        true_actions = [a for p, _, a in true_rally.strokes if p == pid]
        if not true_actions:
            # single-stroke rallies: the receiver never hit, nothing to score
            continue
        gen = gen_players.get(pid, [])
        if not gen:
            raise InfeasibleAlignmentError(
                f"player {pid} generated no strokes to compare against "
                f"{len(true_actions)} true strokes"
            )
        land.append(
            dtw_distance([a.landing for a, _ in gen], [a.landing for a in true_actions])
        )
        move.append(
            dtw_distance([a.move for a, _ in gen], [a.move for a in true_actions])
        )
        labels = [a.shot for a in true_actions]
        pred = np.stack([extend_shot_dist(d) for _, d in gen])
        need = ctc_required_frames(labels)
        if pred.shape[0] < need:
            # Generated rally ended early: the missing frames carry no stroke,
            # so they are near-certain blanks. Emitting a label from one is
            # possible but expensive, which penalizes under-generation
            # symmetrically with the blank cost an over-long rally pays.
            pad = np.tile(_pad_frame(), (need - pred.shape[0], 1))
            pred = np.concatenate([pred, pad], axis=0)
        shot.append(ctc_loss(pred, labels, blank=CTC_BLANK))
    return {
        "land_dtw": float(np.mean(land)),
        "shot_ctc": float(np.mean(shot)),
        "move_dtw": float(np.mean(move)),
    }


def _rollout_seed(seed: int, rally_index: int) -> int:
    return int(np.random.default_rng([seed, rally_index]).integers(2**63 - 1))


def evaluate_agent(
    factory,
    test: Dataset,
    mode: str = "init_only",
    seeds=(0, 1, 2, 3, 4),
    max_len: int = 100,
    name: str = "agent",
) -> RawScores:
    """Roll out every test rally under each seed and average the base metrics.

    `factory(rally)` returns the (agent_a, agent_b) pair used to re-simulate
    that rally (both sides may be the same object). Per-rally errors are
    collected, not fatal.
    """
    if mode not in ("init_only", "two_step"):
        raise ValueError(f"unknown mode {mode!r}")
    per_seed: dict[str, list[float]] = {m: [] for m in BASE_METRICS}
    gen_lengths: list[int] = []
    errors: list[dict] = []
    for seed in seeds:
        rows: list[dict] = []
        for ri, rally in enumerate(test.rallies):
            if not rally.strokes:
                continue
            try:
                agent_a, agent_b = factory(rally)
                init, init_b_pos = rally_initial_conditions(rally)
                forced = None
                if mode == "two_step":
                    forced = [a for _, _, a in rally.strokes[:2]]
                trace = rollout_rally(
                    agent_a,
                    agent_b,
                    init,
                    seed=_rollout_seed(seed, ri),
                    max_len=max_len,
                    rally_id=rally.rally_id,
                    player_a=rally.starter,
                    player_b=rally.second,
                    forced_actions=forced,
                    init_b_pos=init_b_pos,
                )
                if trace.aborted:
                    raise RuntimeError(f"rollout aborted: {trace.error}")
                gen_lengths.append(len(trace.rally.strokes))
                dists = [
                    info.get("shot_dist") or [1.0 / 12] * 12
                    for info in trace.step_infos
                ]
                rows.append(_player_metrics(rally, trace.rally, dists))
            except Exception as exc:
                errors.append(
                    {
                        "rally_id": rally.rally_id,
                        "seed": seed,
                        "error": f"{type(exc).__name__}: {exc}",
                    }
                )
        if not rows:
            raise RuntimeError(f"no test rally could be scored for seed {seed}")
        for m in BASE_METRICS:
            per_seed[m].append(float(np.mean([r[m] for r in rows])))
    return RawScores(
        name=name,
        mode=mode,
        seeds=list(seeds),
        per_seed=per_seed,
        gen_lengths=gen_lengths,
        errors=errors,
    )


def evaluate_predictions(
    pred: Dataset, test: Dataset, name: str = "external"
) -> RawScores:
    """Score pre-generated rallies (matched by rally id) against the truth.

    External predictions carry discrete shots only, so CTC sees their one-hot
    distributions lifted to the 13-symbol vocabulary.
    """
    truth = {r.rally_id: r for r in test.rallies}
    rows, errors, gen_lengths = [], [], []
    for rally in pred.rallies:
        true_rally = truth.get(rally.rally_id)
        if true_rally is None or not rally.strokes:
            errors.append({"rally_id": rally.rally_id, "seed": None, "error": "unmatched or empty"})
            continue
        gen_lengths.append(len(rally.strokes))
        dists = []
        for _, _, action in rally.strokes:
            onehot = np.zeros(12)
            onehot[action.shot] = 1.0
            dists.append(onehot)
        try:
            rows.append(_player_metrics(true_rally, rally, dists))
        except Exception as exc:
            errors.append(
                {"rally_id": rally.rally_id, "seed": None, "error": f"{type(exc).__name__}: {exc}"}
            )
    if not rows:
        raise RuntimeError("no prediction rally could be scored")
    per_seed = {m: [float(np.mean([r[m] for r in rows]))] for m in BASE_METRICS}
    return RawScores(
        name=name, mode="external", seeds=[0], per_seed=per_seed,
        gen_lengths=gen_lengths, errors=errors,
    )


def build_report(
    agent: RawScores,
    random_scores: RawScores,
    rule_scores: RawScores,
    test: Dataset,
    win_rate_diffs: dict[str, float] | None = None,
) -> MetricReport:
    """Combine raw scores with the anchors into a normalized report."""
    if random_scores is None or rule_scores is None:
        raise MissingAnchorError("both random and rule anchor scores are required")
    rvals = {}
    for m in BASE_METRICS:
        rvals[m] = rns(random_scores.mean(m), rule_scores.mean(m), agent.mean(m))
    true_lengths = [len(r.strokes) for r in test.rallies if r.strokes]
    return MetricReport(
        name=agent.name,
        mode=agent.mode,
        seeds=agent.seeds,
        dataset_hash=test.content_hash(),
        land_dtw=agent.mean("land_dtw"),
        shot_ctc=agent.mean("shot_ctc"),
        move_dtw=agent.mean("move_dtw"),
        rns_land=rvals["land_dtw"],
        rns_shot=rvals["shot_ctc"],
        rns_move=rvals["move_dtw"],
        mrns=mrns(rvals["land_dtw"], rvals["shot_ctc"], rvals["move_dtw"]),
        length_jsd=length_jsd(true_lengths, agent.gen_lengths),
        per_seed=agent.per_seed,
        anchors={
            "random": {m: random_scores.mean(m) for m in BASE_METRICS},
            "rule": {m: rule_scores.mean(m) for m in BASE_METRICS},
        },
        win_rate_diffs=dict(win_rate_diffs or {}),
        n_errors=len(agent.errors),
    )


def render_report(report: MetricReport) -> str:
    """Human-readable table for one report."""
    lines = [
        f"agent: {report.name}   mode: {report.mode}   seeds: {report.seeds}",
        f"dataset: {report.dataset_hash[:12]}   errors: {report.n_errors}",
        "",
        f"{'metric':<12}{'score':>10}{'random':>10}{'rule':>10}{'RNS':>10}",
    ]
    for label, m, r in (
        ("land DTW", "land_dtw", report.rns_land),
        ("shot CTC", "shot_ctc", report.rns_shot),
        ("move DTW", "move_dtw", report.rns_move),
    ):
        lines.append(
            f"{label:<12}{getattr(report, m):>10.4f}"
            f"{report.anchors['random'][m]:>10.4f}"
            f"{report.anchors['rule'][m]:>10.4f}{r:>10.4f}"
        )
    lines.append(f"{'MRNS':<12}{'':>30}{report.mrns:>10.4f}")
    lines.append(f"{'length JSD':<12}{report.length_jsd:>10.4f}")
    for k, v in report.win_rate_diffs.items():
        lines.append(f"win-rate diff {k}: {v:.4f}")
    return "\n".join(lines)


# --------------------------------------------------------------- case study
class EmptyFilterWarning(UserWarning):
    pass


def case_study_distributions(
    data: Dataset,
    shot_type: int,
    shuttle_cell: tuple[int, int] | None = None,
    out_prefix=None,
):
    """Landing/move point sets for strokes playing `shot_type`, optionally
    restricted to a shuttle grid cell, with density plots when a path prefix
    is given. Works on ground-truth and generated datasets alike."""
    landings: list[Position] = []
    moves: list[Position] = []
    for rally in data.rallies:
        for _, state, action in rally.strokes:
            if action.shot != shot_type:
                continue
            if shuttle_cell is not None:
                if discretize_position(state.shuttle_pos) != tuple(shuttle_cell):
                    continue
            landings.append(action.landing)
            moves.append(action.move)
    if not landings:
        warnings.warn("case-study filter matched no strokes", EmptyFilterWarning)
        return landings, moves, []
    files = []
    if out_prefix is not None:
        files = _plot_densities(landings, moves, out_prefix)
    return landings, moves, files


def _plot_densities(landings, moves, out_prefix) -> list[str]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    files = []
    for label, points in (("landing", landings), ("move", moves)):
        xs = np.array([p.x for p in points])
        ys = np.array([p.y for p in points])
        fig, ax = plt.subplots(figsize=(4, 4))
        if len(points) >= 3 and (np.std(xs) > 0 or np.std(ys) > 0):
            # Scott's-rule product-kernel density, for the plot only
            n = len(xs)
            h = n ** (-1.0 / 6.0)
            bx = max(h * np.std(xs), 1e-3)
            by = max(h * np.std(ys), 1e-3)
            gx, gy = np.meshgrid(np.linspace(-1, 1, 60), np.linspace(-1, 1, 60))
            dens = np.exp(
                -0.5 * ((gx.ravel()[:, None] - xs[None, :]) / bx) ** 2
                - 0.5 * ((gy.ravel()[:, None] - ys[None, :]) / by) ** 2
            ).sum(axis=1) / (2 * np.pi * bx * by * n)
            ax.contourf(gx, gy, dens.reshape(gx.shape), levels=12, cmap="viridis")
        ax.scatter(xs, ys, s=6, c="white", edgecolors="black", linewidths=0.3)
        ax.set_xlim(-1, 1)
        ax.set_ylim(-1, 1)
        ax.set_title(f"{label} ({len(points)} pts)")
        path = f"{out_prefix}_{label}.png"
        fig.savefig(path, dpi=100)
        plt.close(fig)
        files.append(path)
    return files


# ------------------------------------------------------------ intent tools
def decode_intent(policy, ctx, horizon: int, shot_names=None) -> list[dict]:
    """Readable decode of a context vector: shot name + modal positions per step."""
    from .data import SHOT_TYPES

    names = shot_names if shot_names is not None else SHOT_TYPES
    steps = policy.decode_context(ctx, horizon)
    out = []
    for probs, land, move in steps:
        shot = int(np.argmax(probs))
        out.append(
            {
                "shot": names[shot] if shot < len(names) else str(shot),
                "shot_id": shot,
                "landing": land.top_component_mean().to_json(),
                "move": move.top_component_mean().to_json(),
            }
        )
    return out


def reconstruction_metrics(policy, test: Dataset, seed: int = 0) -> dict:
    """Encode each player's true action sequence and score its decode against
    the truth with the same land/shot/move metrics used for imitation."""
    rng = np.random.default_rng(seed)
    land, move, shot = [], [], []
    for rally in test.rallies:
        for pid in (rally.starter, rally.second):
            actions = [a for p, _, a in rally.strokes if p == pid]
            if not actions:
                continue
            ctx = policy.encode_context(actions, sample=False)
            labels = [a.shot for a in actions]
            horizon = ctc_required_frames(labels)
            steps = policy.decode_context(ctx, horizon)
            land.append(
                dtw_distance(
                    [m[1].top_component_mean() for m in steps],
                    [a.landing for a in actions],
                )
            )
            move.append(
                dtw_distance(
                    [m[2].top_component_mean() for m in steps],
                    [a.move for a in actions],
                )
            )
            pred = np.stack([extend_shot_dist(m[0]) for m in steps])
            shot.append(ctc_loss(pred, labels, blank=CTC_BLANK))
    if not land:
        raise RuntimeError("no sequences to reconstruct")
    return {
        "land_dtw": float(np.mean(land)),
        "shot_ctc": float(np.mean(shot)),
        "move_dtw": float(np.mean(move)),
    }
