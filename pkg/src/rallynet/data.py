"""Rally data model, CSV ingestion, normalization, splitting, and JSONL I/O.

Coordinates are stored in the hitter's frame: the acting player's own half is
y in [-1, 0) and the opponent's half is y in (0, 1]. Raw datasets carry court
ranges; :func:`normalize_coordinates` maps each axis affinely onto [-1, 1].
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field, replace

SHOT_TYPES = [
    "receiving",
    "short service",
    "long service",
    "net shot",
    "clear",
    "push/rush",
    "smash",
    "defensive shot",
    "drive",
    "lob",
    "drop",
    "can't reach",
]
N_SHOT_TYPES = len(SHOT_TYPES)
SHOT_TYPE_IDS = {name: i for i, name in enumerate(SHOT_TYPES)}
RECEIVING = SHOT_TYPE_IDS["receiving"]
CANT_REACH = SHOT_TYPE_IDS["can't reach"]


class DatasetError(Exception):
    """Base class for dataset construction and ingestion failures."""


class SchemaError(DatasetError):
    """A required column is missing from the ingestion schema or the file."""


class MalformedRowError(DatasetError):
    """A CSV row cannot be interpreted (e.g. unknown shot type label)."""


class MalformedRallyError(DatasetError):
    """A rally violates structural invariants (e.g. broken alternation)."""


class DegenerateCourtError(DatasetError):
    """A court axis has zero width, so normalization is undefined."""


class EmptyDatasetError(DatasetError):
    """An operation that needs at least one rally received none."""


def shot_id(label) -> int:
    """Map a shot label (name or integer id) to its integer id."""
    if isinstance(label, int):
        if not 0 <= label < N_SHOT_TYPES:
            raise MalformedRowError(f"shot id out of range: {label}")
        return label
    try:
        return SHOT_TYPE_IDS[label]
    except KeyError:
        raise MalformedRowError(f"unknown shot type label: {label!r}") from None


@dataclass(frozen=True)
class Position:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite position ({self.x}, {self.y})")

    def to_json(self):
        return [self.x, self.y]

    @classmethod
    def from_json(cls, obj):
        return cls(float(obj[0]), float(obj[1]))


@dataclass(frozen=True)
class PlayerState:
    """Observation of the player about to hit the shuttle."""

    score_info: tuple[int, int, int]  # (own score, opponent score, set index)
    shuttle_pos: Position
    incoming_shot: int
    self_pos: Position
    opp_pos: Position
    opp_move_vec: tuple[float, float]

    def to_json(self):
        return {
            "score": list(self.score_info),
            "shuttle": self.shuttle_pos.to_json(),
            "incoming": self.incoming_shot,
            "self": self.self_pos.to_json(),
            "opp": self.opp_pos.to_json(),
            "opp_move": list(self.opp_move_vec),
        }

    @classmethod
    def from_json(cls, obj):
        return cls(
            score_info=tuple(int(v) for v in obj["score"]),
            shuttle_pos=Position.from_json(obj["shuttle"]),
            incoming_shot=int(obj["incoming"]),
            self_pos=Position.from_json(obj["self"]),
            opp_pos=Position.from_json(obj["opp"]),
            opp_move_vec=tuple(float(v) for v in obj["opp_move"]),
        )


@dataclass(frozen=True)
class Action:
    """Decision of the acting player: landing spot, shot type, move target."""

    landing: Position
    shot: int
    move: Position

    def to_json(self):
        return {"landing": self.landing.to_json(), "shot": self.shot, "move": self.move.to_json()}

    @classmethod
    def from_json(cls, obj):
        return cls(
            landing=Position.from_json(obj["landing"]),
            shot=int(obj["shot"]),
            move=Position.from_json(obj["move"]),
        )


@dataclass
class Rally:
    """Ordered stroke sequence of alternating player state-action pairs."""

    rally_id: str
    starter: str
    second: str
    strokes: list[tuple[str, PlayerState, Action]]
    winner: str
    source: str = "real"  # one of {real, synthetic, generated}

    def validate(self):
        if len(self.strokes) < 1:
            raise MalformedRallyError(f"rally {self.rally_id}: empty stroke list")
        for i, (pid, _, _) in enumerate(self.strokes):
            expected = self.starter if i % 2 == 0 else self.second
            if pid != expected:
                raise MalformedRallyError(
                    f"rally {self.rally_id}: stroke {i + 1} by {pid!r}, expected {expected!r}"
                )
        if self.winner not in (self.starter, self.second):
            raise MalformedRallyError(
                f"rally {self.rally_id}: winner {self.winner!r} is not a participant"
            )

    def player_strokes(self, player_id: str):
        """Strokes taken by one player, preserving order."""
        return [(s, a) for pid, s, a in self.strokes if pid == player_id]

    def to_json(self):
        return {
            "rally_id": self.rally_id,
            "starter": self.starter,
            "second": self.second,
            "winner": self.winner,
            "source": self.source,
            "strokes": [
                {"player": pid, "state": s.to_json(), "action": a.to_json()}
                for pid, s, a in self.strokes
            ],
        }

    @classmethod
    def from_json(cls, obj):
        return cls(
            rally_id=obj["rally_id"],
            starter=obj["starter"],
            second=obj["second"],
            winner=obj["winner"],
            source=obj.get("source", "real"),
            strokes=[
                (
                    st["player"],
                    PlayerState.from_json(st["state"]),
                    Action.from_json(st["action"]),
                )
                for st in obj["strokes"]
            ],
        )


DEFAULT_COURT = {"x": (0.0, 610.0), "y": (0.0, 1340.0)}
NORMALIZED_COURT = {"x": (-1.0, 1.0), "y": (-1.0, 1.0)}


@dataclass
class Dataset:
    rallies: list[Rally]
    players: list[str] = field(default_factory=list)
    court: dict = field(default_factory=lambda: dict(DEFAULT_COURT))

    def __post_init__(self):
        if not self.players:
            seen = []
            for r in self.rallies:
                for pid in (r.starter, r.second):
                    if pid not in seen:
                        seen.append(pid)
            self.players = seen

    @property
    def normalized(self) -> bool:
        return all(tuple(self.court[ax]) == (-1.0, 1.0) for ax in ("x", "y"))

    def validate(self):
        registry = set(self.players)
        for r in self.rallies:
            r.validate()
            for pid, _, _ in r.strokes:
                if pid not in registry:
                    raise MalformedRallyError(
                        f"rally {r.rally_id}: player {pid!r} missing from registry"
                    )

    def content_hash(self) -> str:
        """Stable hash over rally content, used to detect stale derived artifacts."""
        h = hashlib.sha256()
        for r in self.rallies:
            h.update(json.dumps(r.to_json(), sort_keys=True).encode())
        h.update(json.dumps({k: list(v) for k, v in sorted(self.court.items())}).encode())
        return h.hexdigest()


def _affine(v, lo, hi):
    return 2.0 * (v - lo) / (hi - lo) - 1.0


def normalize_coordinates(d: Dataset) -> Dataset:
    """Map every coordinate affinely so the court range endpoints land on -1 and 1.

    Idempotent: ranges already equal to [-1, 1] yield the identity map.
    """
    for ax in ("x", "y"):
        lo, hi = d.court[ax]
        if hi - lo <= 0:
            raise DegenerateCourtError(f"court {ax} range [{lo}, {hi}] has non-positive width")
    xlo, xhi = d.court["x"]
    ylo, yhi = d.court["y"]

    def npos(p: Position) -> Position:
        return Position(_affine(p.x, xlo, xhi), _affine(p.y, ylo, yhi))

    def nvec(v):
        # Displacements scale without the offset.
        return (2.0 * v[0] / (xhi - xlo), 2.0 * v[1] / (yhi - ylo))

    rallies = []
    for r in d.rallies:
        strokes = []
        for pid, s, a in r.strokes:
            s2 = replace(
                s,
                shuttle_pos=npos(s.shuttle_pos),
                self_pos=npos(s.self_pos),
                opp_pos=npos(s.opp_pos),
                opp_move_vec=nvec(s.opp_move_vec),
            )
            a2 = replace(a, landing=npos(a.landing), move=npos(a.move))
            strokes.append((pid, s2, a2))
        rallies.append(replace(r, strokes=strokes))
    return Dataset(rallies=rallies, players=list(d.players), court=dict(NORMALIZED_COURT))


def split_dataset(d: Dataset, ratio: float) -> tuple[Dataset, Dataset]:
    """Split by rally order: first floor(ratio * n) rallies train, rest test."""
    if not 0 < ratio < 1:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    if not d.rallies:
        raise EmptyDatasetError("cannot split an empty dataset")
    k = int(len(d.rallies) * ratio)
    train = Dataset(rallies=d.rallies[:k], players=list(d.players), court=dict(d.court))
    test = Dataset(rallies=d.rallies[k:], players=list(d.players), court=dict(d.court))
    return train, test


def save_jsonl(d: Dataset, path):
    """Write the canonical on-disk format: a header record, then one rally per line."""
    with open(path, "w") as f:
        header = {
            "kind": "header",
            "court": {k: list(v) for k, v in d.court.items()},
            "players": d.players,
        }
        f.write(json.dumps(header) + "\n")
        for r in d.rallies:
            f.write(json.dumps(r.to_json()) + "\n")


def load_jsonl(path) -> Dataset:
    with open(path) as f:
        first = f.readline()
        if not first:
            raise EmptyDatasetError(f"{path} is empty")
        header = json.loads(first)
        if header.get("kind") != "header":
            raise SchemaError(f"{path}: first record must be the dataset header")
        rallies = [Rally.from_json(json.loads(line)) for line in f if line.strip()]
    court = {k: tuple(v) for k, v in header["court"].items()}
    return Dataset(rallies=rallies, players=list(header["players"]), court=court)


DEFAULT_CSV_SCHEMA = {
    "rally_id": "rally_id",
    "player_id": "player",
    "shot_type": "shot_type",
    "shuttle_x": "shuttle_x",
    "shuttle_y": "shuttle_y",
    "self_x": "player_x",
    "self_y": "player_y",
    "opp_x": "opponent_x",
    "opp_y": "opponent_y",
    "landing_x": "landing_x",
    "landing_y": "landing_y",
    "move_x": "move_x",
    "move_y": "move_y",
    # optional columns
    "own_score": "own_score",
    "opp_score": "opp_score",
    "set_index": "set_index",
    "winner": "winner",
}

_REQUIRED_FIELDS = [
    "rally_id",
    "player_id",
    "shot_type",
    "shuttle_x",
    "shuttle_y",
    "self_x",
    "self_y",
    "opp_x",
    "opp_y",
    "landing_x",
    "landing_y",
    "move_x",
    "move_y",
]


def ingest_csv(path, schema=None, court=None) -> Dataset:
    """Read a stroke-per-row CSV into a Dataset, grouping rows into rallies.

    `schema` maps logical field names (keys of DEFAULT_CSV_SCHEMA) to the
    file's column names. Raw coordinates are preserved; rows appear in file
    order within each rally. The incoming shot of stroke t is the shot of
    stroke t-1 ("receiving" for the first stroke), and the opponent move
    vector is derived from the previous stroke's move.
    """
    schema = {**DEFAULT_CSV_SCHEMA, **(schema or {})}
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        columns = reader.fieldnames or []
        for field_name in _REQUIRED_FIELDS:
            if schema[field_name] not in columns:
                raise SchemaError(
                    f"missing required column {schema[field_name]!r} (field {field_name})"
                )
        rows = list(reader)

    def get(row, field_name, default=None):
        col = schema.get(field_name)
        if col in columns:
            return row[col]
        return default

    groups: dict[str, list[dict]] = {}
    for row in rows:
        groups.setdefault(str(row[schema["rally_id"]]), []).append(row)

    rallies = []
    for rid, group in groups.items():
        strokes = []
        prev_shot = RECEIVING
        prev_move = None
        prev_self = None
        players_in_rally = []
        for row in group:
            pid = str(row[schema["player_id"]])
            if pid not in players_in_rally:
                players_in_rally.append(pid)
            sid = shot_id(row[schema["shot_type"]])
            self_pos = Position(float(row[schema["self_x"]]), float(row[schema["self_y"]]))
            if prev_move is None:
                move_vec = (0.0, 0.0)
            else:
                move_vec = (prev_move.x - prev_self.x, prev_move.y - prev_self.y)
            state = PlayerState(
                score_info=(
                    int(get(row, "own_score", 0) or 0),
                    int(get(row, "opp_score", 0) or 0),
                    int(get(row, "set_index", 1) or 1),
                ),
                shuttle_pos=Position(
                    float(row[schema["shuttle_x"]]), float(row[schema["shuttle_y"]])
                ),
                incoming_shot=prev_shot,
                self_pos=self_pos,
                opp_pos=Position(float(row[schema["opp_x"]]), float(row[schema["opp_y"]])),
                opp_move_vec=move_vec,
            )
            action = Action(
                landing=Position(float(row[schema["landing_x"]]), float(row[schema["landing_y"]])),
                shot=sid,
                move=Position(float(row[schema["move_x"]]), float(row[schema["move_y"]])),
            )
            strokes.append((pid, state, action))
            prev_shot = sid
            prev_move = action.move
            prev_self = self_pos
        if len(players_in_rally) != 2:
            raise MalformedRallyError(
                f"rally {rid}: expected exactly 2 players, saw {players_in_rally}"
            )
        starter, second = players_in_rally
        winner_label = get(group[0], "winner")
        if winner_label:
            winner = str(winner_label)
        else:
            # The player committing the terminal stroke loses.
            loser = strokes[-1][0]
            winner = second if loser == starter else starter
        rally = Rally(
            rally_id=rid,
            starter=starter,
            second=second,
            strokes=strokes,
            winner=winner,
            source="real",
        )
        rally.validate()
        rallies.append(rally)

    d = Dataset(rallies=rallies, court=dict(court or DEFAULT_COURT))
    d.validate()
    return d
