"""Scenario model and its JSON file format.

All coordinates are meters in the scenario frame; the ego sits at the origin
heading +x at t = 0 for freshly generated scenarios. Agent and ego states are
rows ``(t, x, y, heading, speed)``. Rows with t <= 0 form the observed
history; rows with t > 0 are the logged future used for replay.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

SCENARIO_VERSION = 1
SCENARIO_KINDS = ("straight", "curve", "blocked-lane", "intersection")

_STATE_ROW = {"type": "array", "items": {"type": "number"}, "minItems": 5, "maxItems": 5}
_POINT = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}
_PATH = {"type": "array", "items": _POINT, "minItems": 2}

SCENARIO_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["version", "name", "dt", "ego", "map", "agents"],
    "additionalProperties": False,
    "properties": {
        "version": {"const": SCENARIO_VERSION},
        "name": {"type": "string"},
        "kind": {"type": "string"},
        "seed": {"type": "integer"},
        "dt": {"type": "number", "exclusiveMinimum": 0},
        "ego": {
            "type": "object",
            "required": ["length", "width", "states"],
            "additionalProperties": False,
            "properties": {
                "length": {"type": "number", "exclusiveMinimum": 0},
                "width": {"type": "number", "exclusiveMinimum": 0},
                "states": {"type": "array", "items": _STATE_ROW, "minItems": 1},
            },
        },
        "map": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "kind", "points", "half_width", "speed_limit"],
                "additionalProperties": False,
                "properties": {
                    "id": {"type": "string"},
                    "kind": {"enum": ["lane"]},
                    "points": _PATH,
                    "half_width": {"type": "number", "exclusiveMinimum": 0},
                    "speed_limit": {"type": "number", "exclusiveMinimum": 0},
                },
            },
        },
        "agents": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "length", "width", "states"],
                "additionalProperties": False,
                "properties": {
                    "id": {"type": "string"},
                    "length": {"type": "number", "exclusiveMinimum": 0},
                    "width": {"type": "number", "exclusiveMinimum": 0},
                    "parked": {"type": "boolean"},
                    "lane": {"type": ["string", "null"]},
                    "states": {"type": "array", "items": _STATE_ROW, "minItems": 1},
                },
            },
        },
        "route": {"type": "array", "items": {"type": "string"}},
        "expert": {"oneOf": [_PATH, {"type": "null"}]},
        "positives": {"type": "array", "items": _PATH},
    },
}


class ScenarioParseError(ValueError):
    """Malformed scenario document; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(message if line is None else f"line {line}: {message}")


class SceneError(ValueError):
    """Scenario content unusable for encoding (e.g. an empty modality)."""


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    w = np.mod(np.asarray(a) + np.pi, 2 * np.pi) - np.pi
    w = np.where(w == -np.pi, np.pi, w)
    return float(w) if np.ndim(w) == 0 else w


@dataclass
class Lane:
    id: str
    points: np.ndarray          # (n, 2) centerline
    half_width: float = 1.75
    speed_limit: float = 13.9
    kind: str = "lane"


@dataclass
class AgentTrack:
    id: str
    states: np.ndarray          # (n, 5) rows (t, x, y, heading, speed)
    length: float = 4.6
    width: float = 1.9
    parked: bool = False
    lane: str | None = None

    def history(self) -> np.ndarray:
        return self.states[self.states[:, 0] <= 1e-9]

    def state_at(self, t: float) -> np.ndarray:
        """Linear interpolation of (x, y, heading, speed); clamps outside the log."""
        s = self.states
        if len(s) == 1 or t <= s[0, 0]:
            return s[0, 1:].copy()
        if t >= s[-1, 0]:
            return s[-1, 1:].copy()
        i = int(np.searchsorted(s[:, 0], t) - 1)
        w = (t - s[i, 0]) / (s[i + 1, 0] - s[i, 0])
        out = (1 - w) * s[i, 1:] + w * s[i + 1, 1:]
        dh = wrap_angle(s[i + 1, 3] - s[i, 3])
        out[2] = wrap_angle(s[i, 3] + w * dh)
        return out


@dataclass
class Scenario:
    name: str
    dt: float
    ego_states: np.ndarray      # (n, 5), last row with t <= 0 is the current state
    lanes: list[Lane]
    agents: list[AgentTrack]
    ego_length: float = 4.8
    ego_width: float = 2.0
    kind: str = ""
    seed: int = 0
    route: list[str] = field(default_factory=list)
    expert: np.ndarray | None = None              # (H, 2)
    positives: list[np.ndarray] = field(default_factory=list)

    @property
    def ego_history(self) -> np.ndarray:
        return self.ego_states[self.ego_states[:, 0] <= 1e-9]

    @property
    def ego_now(self) -> np.ndarray:
        """Current (x, y, heading, speed)."""
        return self.ego_history[-1, 1:].copy()

    def lane_by_id(self, lane_id: str) -> Lane:
        for ln in self.lanes:
            if ln.id == lane_id:
                return ln
        raise KeyError(lane_id)

    def positive_array(self) -> np.ndarray:
        return np.stack(self.positives) if self.positives else np.zeros((0, 0, 2))

    # -- serialization -------------------------------------------------------
    def to_dict(self) -> dict:
        doc = {
            "version": SCENARIO_VERSION,
            "name": self.name,
            "kind": self.kind,
            "seed": int(self.seed),
            "dt": float(self.dt),
            "ego": {"length": self.ego_length, "width": self.ego_width,
                    "states": self.ego_states.tolist()},
            "map": [{"id": ln.id, "kind": ln.kind, "points": ln.points.tolist(),
                     "half_width": ln.half_width, "speed_limit": ln.speed_limit}
                    for ln in self.lanes],
            "agents": [{"id": a.id, "length": a.length, "width": a.width, "parked": a.parked,
                        "lane": a.lane, "states": a.states.tolist()} for a in self.agents],
            "route": list(self.route),
            "expert": None if self.expert is None else self.expert.tolist(),
            "positives": [p.tolist() for p in self.positives],
        }
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "Scenario":
        ego = doc["ego"]
        lanes = [Lane(m["id"], np.array(m["points"], dtype=np.float64), float(m["half_width"]),
                      float(m["speed_limit"]), m["kind"]) for m in doc["map"]]
        agents = [AgentTrack(a["id"], np.array(a["states"], dtype=np.float64), float(a["length"]),
                             float(a["width"]), bool(a.get("parked", False)), a.get("lane"))
                  for a in doc["agents"]]
        expert = doc.get("expert")
        return cls(
            name=doc["name"], dt=float(doc["dt"]),
            ego_states=np.array(ego["states"], dtype=np.float64),
            lanes=lanes, agents=agents,
            ego_length=float(ego["length"]), ego_width=float(ego["width"]),
            kind=doc.get("kind", ""), seed=int(doc.get("seed", 0)),
            route=list(doc.get("route", [])),
            expert=None if expert is None else np.array(expert, dtype=np.float64),
            positives=[np.array(p, dtype=np.float64) for p in doc.get("positives", [])],
        )

    def to_json(self) -> str:
        return dumps_document(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "Scenario":
        return cls.from_dict(parse_document(text))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "Scenario":
        return cls.from_json(Path(path).read_text())


def dumps_document(doc: dict) -> str:
    """Stable layout: one key per line so schema errors map to useful line numbers."""
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def _locate(text: str, path) -> int | None:
    """Best-effort line of the element at JSON ``path`` (keys and indices)."""
    keys = [p for p in path if isinstance(p, str)]
    if not keys:
        return 1
    pos = 0
    for k in keys:
        nxt = text.find(json.dumps(k) + ":", pos)
        if nxt < 0:
            break
        pos = nxt
    return text.count("\n", 0, pos) + 1


def parse_document(text: str) -> dict:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioParseError(e.msg, e.lineno) from e
    validator = jsonschema.Draft202012Validator(SCENARIO_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ScenarioParseError(f"{where}: {e.message}", _locate(text, list(e.absolute_path)))
    for obj in [doc["ego"], *doc["agents"]]:
        ts = [row[0] for row in obj["states"]]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ScenarioParseError("state timestamps must increase",
                                     _locate(text, ["states"]))
        if not any(t <= 1e-9 for t in ts):
            raise ScenarioParseError("track has no observed state at t <= 0",
                                     _locate(text, ["states"]))
    if not all(math.isfinite(v) for row in doc["ego"]["states"] for v in row):
        raise ScenarioParseError("non-finite ego state", _locate(text, ["ego"]))
    return doc
