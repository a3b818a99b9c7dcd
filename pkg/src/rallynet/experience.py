"""Grid-discretized retrieval of historical action sequences.

Strokes are keyed by 10x10 grid cells of the shuttle, self and opponent
positions plus the incoming shot type. A query relaxes along a fixed ladder
until it finds matches: level 0 is the exact key, level 1 drops the shot
constraint, and levels 2..10 widen every position cell to its Chebyshev
neighborhood of radius level-1 (radius 9 matches everything, so a non-empty
index always yields a result). Matches are ordered nearest-first by the sum
of the three cell distances, ties broken by (rally_id, step).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .data import Action, Dataset, PlayerState, Position

GRID_SIZE = 10
DEFAULT_CAP = 5
MAX_RELAXATION = GRID_SIZE + 1  # level 10 = radius 9 = global fallback


class InvalidPositionError(ValueError):
    """A position with non-finite coordinates cannot be discretized."""


def discretize_position(p: Position) -> tuple[int, int]:
    """Cell of a normalized position on the 10x10 grid; 1.0 clamps to index 9."""
    if not (math.isfinite(p.x) and math.isfinite(p.y)):
        raise InvalidPositionError(f"non-finite position ({p.x}, {p.y})")

    def cell(c):
        return min(int((c + 1.0) / 0.2), GRID_SIZE - 1)

    return (cell(p.x), cell(p.y))


def grid_key(s: PlayerState) -> tuple:
    return (
        discretize_position(s.shuttle_pos),
        discretize_position(s.self_pos),
        discretize_position(s.opp_pos),
        s.incoming_shot,
    )


@dataclass
class ExperienceSet:
    """EXP output for one query: the true future (training only) plus retrieved sequences."""

    target_seq: list[Action] | None
    retrieved: list[list[Action]]
    relaxation_level: int


@dataclass
class ExperienceIndex:
    cap: int = DEFAULT_CAP
    dataset_hash: str = ""
    # parallel per-entry records
    keys: list[tuple] = field(default_factory=list)
    refs: list[tuple[str, int]] = field(default_factory=list)  # (rally_id, stroke step, 1-based)
    sequences: list[list[Action]] = field(default_factory=list)
    _exact: dict = field(default_factory=dict, repr=False)
    _cells_only: dict = field(default_factory=dict, repr=False)
    _cell_array: np.ndarray | None = field(default=None, repr=False)

    def __len__(self):
        return len(self.keys)

    def _finalize(self):
        self._exact = {}
        self._cells_only = {}
        for i, key in enumerate(self.keys):
            self._exact.setdefault(key, []).append(i)
            self._cells_only.setdefault(key[:3], []).append(i)
        if self.keys:
            self._cell_array = np.array(
                [[*k[0], *k[1], *k[2]] for k in self.keys], dtype=np.int8
            )
        else:
            self._cell_array = np.zeros((0, 6), dtype=np.int8)

    def match_at_level(self, s: PlayerState, level: int) -> list[int]:
        """Entry indices matching the query under the given relaxation level."""
        key = grid_key(s)
        if level == 0:
            return list(self._exact.get(key, []))
        if level == 1:
            return list(self._cells_only.get(key[:3], []))
        radius = level - 1
        if len(self.keys) == 0:
            return []
        q = np.array([*key[0], *key[1], *key[2]], dtype=np.int16)
        d = np.abs(self._cell_array.astype(np.int16) - q)
        cheb = np.maximum(d[:, 0::2], d[:, 1::2])  # per-position Chebyshev distance
        mask = (cheb <= radius).all(axis=1)
        return np.flatnonzero(mask).tolist()

    def _order(self, s: PlayerState, indices: list[int]) -> list[int]:
        key = grid_key(s)
        q = np.array([*key[0], *key[1], *key[2]], dtype=np.int16)

        def sort_key(i):
            d = np.abs(self._cell_array[i].astype(np.int16) - q)
            total = int(max(d[0], d[1]) + max(d[2], d[3]) + max(d[4], d[5]))
            return (total, self.refs[i][0], self.refs[i][1])

        return sorted(indices, key=sort_key)

    def to_json(self):
        return {
            "cap": self.cap,
            "dataset_hash": self.dataset_hash,
            "entries": [
                {
                    "key": [list(k[0]), list(k[1]), list(k[2]), k[3]],
                    "ref": [self.refs[i][0], self.refs[i][1]],
                    "seq": [a.to_json() for a in self.sequences[i]],
                }
                for i, k in enumerate(self.keys)
            ],
        }

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_json(), f)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            obj = json.load(f)
        idx = cls(cap=obj["cap"], dataset_hash=obj["dataset_hash"])
        for e in obj["entries"]:
            k = e["key"]
            idx.keys.append((tuple(k[0]), tuple(k[1]), tuple(k[2]), k[3]))
            idx.refs.append((e["ref"][0], e["ref"][1]))
            idx.sequences.append([Action.from_json(a) for a in e["seq"]])
        idx._finalize()
        return idx


def build_index(train: Dataset, cap: int = DEFAULT_CAP) -> ExperienceIndex:
    """Index every stroke of the training set under its grid key.

    The stored sequence for a stroke at step t is the acting player's own
    actions from t onward in that rally.
    """
    idx = ExperienceIndex(cap=cap, dataset_hash=train.content_hash())
    for rally in train.rallies:
        for t, (pid, state, _) in enumerate(rally.strokes):
            seq = [a for p, _, a in rally.strokes[t:] if p == pid]
            idx.keys.append(grid_key(state))
            idx.refs.append((rally.rally_id, t + 1))
            idx.sequences.append(seq)
    idx._finalize()
    return idx


def target_sequence(rally, stroke_idx: int) -> list[Action]:
    """The acting player's own remaining actions from a 0-based stroke index."""
    pid = rally.strokes[stroke_idx][0]
    return [a for p, _, a in rally.strokes[stroke_idx:] if p == pid]


def extract_experiences(
    idx: ExperienceIndex,
    s: PlayerState,
    rally_ctx: tuple | None = None,
    cap: int | None = None,
) -> ExperienceSet:
    """EXP: retrieve up to `cap` nearest matching action sequences for a state.

    `rally_ctx` is (rally, stroke_idx) during training and provides the
    target sequence; it is absent at inference.
    """
    cap = idx.cap if cap is None else cap
    level = 0
    matches: list[int] = []
    while level <= MAX_RELAXATION:
        matches = idx.match_at_level(s, level)
        if matches:
            break
        level += 1
    if not matches:
        level = MAX_RELAXATION  # empty index
    ordered = idx._order(s, matches)[:cap]
    target = target_sequence(*rally_ctx) if rally_ctx is not None else None
    return ExperienceSet(
        target_seq=target,
        retrieved=[idx.sequences[i] for i in ordered],
        relaxation_level=level,
    )


def empirical_distributions(idx: ExperienceIndex, s: PlayerState):
    """Shot histogram and landing/move sample sets from first actions of retrieved sequences."""
    exp = extract_experiences(idx, s)
    firsts = [seq[0] for seq in exp.retrieved if seq]
    if not firsts:
        return {}, [], []
    hist: dict[int, float] = {}
    for a in firsts:
        hist[a.shot] = hist.get(a.shot, 0.0) + 1.0
    total = sum(hist.values())
    hist = {k: v / total for k, v in hist.items()}
    landings = [a.landing for a in firsts]
    moves = [a.move for a in firsts]
    return hist, landings, moves
