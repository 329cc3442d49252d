"""Seeded synthetic driving scenes with an expert plan and filter-checked alternatives.

Scenes are built in the ego frame at t = 0: ego at the origin heading +x in
lane ``L0``. ``L1`` is the parallel lane to the left. Agent logs cover
t in [-1, 16] s so that an 8 s episode plus an 8 s planning horizon never
runs past the log.
"""

from __future__ import annotations

import numpy as np

from ..scene import AgentTrack, Lane, Scenario
from ..scene.scenario import SCENARIO_KINDS
from .corpus import smoothstep
from .geometry import Path
from .selection import hard_filter, logged_predictions

DT = 0.1
HORIZON = 80
LOG_START, LOG_END = -1.0, 16.0
LANE_GAP = 3.5
HALF_WIDTH = 1.75
SPEED_LIMIT = 13.9
MAX_POSITIVES = 8


def _lane_points(kind: str, rng: np.random.Generator) -> dict[str, np.ndarray]:
    xs = np.arange(-30.0, 400.0 + 1e-9, 2.0)
    if kind in ("straight", "blocked-lane"):
        return {"L0": np.stack([xs, np.zeros_like(xs)], 1), "L1": np.stack([xs, np.full_like(xs, LANE_GAP)], 1)}
    if kind == "curve":
        R = rng.uniform(60.0, 100.0) * rng.choice([-1.0, 1.0])
        base = _arc_path(R, np.pi / 2, lead=30.0, tail=200.0)
        return {"L0": base, "L1": _offset(base, LANE_GAP)}
    # intersection: through lane, a left-turn lane sharing the approach, a crossing lane
    R = 15.0
    xa = rng.uniform(18.0, 26.0)
    approach = np.stack([np.arange(-30.0, xa, 2.0), np.zeros(len(np.arange(-30.0, xa, 2.0)))], 1)
    ang = np.linspace(-np.pi / 2, 0.0, 16)
    arc = np.stack([xa + R * np.cos(ang), R + R * np.sin(ang)], 1)
    up = np.arange(R + 2.0, 300.0, 2.0)
    exit_ = np.stack([np.full_like(up, xa + R), up], 1)
    cross_y = np.arange(-200.0, 300.0, 2.0)
    return {
        "L0": np.stack([xs, np.zeros_like(xs)], 1),
        "T0": np.concatenate([approach, arc, exit_]),
        "X0": np.stack([np.full_like(cross_y, xa + R), cross_y], 1),
    }


def _arc_path(R: float, sweep: float, lead: float, tail: float) -> np.ndarray:
    """Straight lead-in to the origin, a constant-radius arc (left when R > 0), then straight."""
    pre = np.stack([np.arange(-lead, 0.0, 2.0), np.zeros(int(np.ceil(lead / 2.0)))], 1)
    n = max(int(abs(R) * sweep / 2.0), 8)
    th = np.linspace(0.0, sweep, n + 1)
    sgn = np.sign(R)
    arc = np.stack([abs(R) * np.sin(th), sgn * abs(R) * (1 - np.cos(th))], 1)
    end_h = sgn * sweep
    d = np.arange(2.0, tail, 2.0)
    post = arc[-1] + d[:, None] * np.array([np.cos(end_h), np.sin(end_h)])
    return np.concatenate([pre, arc, post])


def _offset(points: np.ndarray, lateral: float) -> np.ndarray:
    """Shift a polyline sideways (left positive) by its local normal."""
    t = np.gradient(points, axis=0)
    t /= np.linalg.norm(t, axis=1, keepdims=True)
    return points + lateral * np.stack([-t[:, 1], t[:, 0]], 1)


def follow(path: Path, s: np.ndarray, lateral: np.ndarray | float = 0.0) -> np.ndarray:
    """Points at arc lengths ``s`` along ``path``, displaced sideways by ``lateral``."""
    p = path.at(s)
    lat = np.broadcast_to(lateral, s.shape)
    return np.stack([p[:, 0] - lat * np.sin(p[:, 2]), p[:, 1] + lat * np.cos(p[:, 2])], 1)


def lane_track(name: str, path: Path, s0: float, speed: float, lane: str,
               lateral: float = 0.0, parked: bool = False, length: float = 4.6, width: float = 1.9) -> AgentTrack:
    """Constant-speed log along a lane covering the full log window."""
    t = np.round(np.arange(LOG_START, LOG_END + 1e-9, DT), 10)
    s = s0 + speed * t
    p = follow(path, s, lateral)
    h = path.at(s)[:, 2]
    states = np.stack([t, p[:, 0], p[:, 1], h, np.full_like(t, speed)], 1)
    return AgentTrack(name, states, length, width, parked, lane)


def ego_history(speed: float) -> np.ndarray:
    t = np.round(np.arange(LOG_START, 1e-9, DT), 10)
    return np.stack([t, speed * t, np.zeros_like(t), np.zeros_like(t), np.full_like(t, speed)], 1)


def _times() -> np.ndarray:
    return DT * np.arange(1, HORIZON + 1)


def _profile(v0: float, accel: float = 0.0) -> np.ndarray:
    """Arc length at waypoint times for a constant-acceleration profile that never reverses."""
    t = _times()
    v = np.maximum(v0 + accel * t, 0.0)
    return np.cumsum(v * DT)


def _lane_change(rng_t0, dur, offset=LANE_GAP) -> np.ndarray:
    return offset * smoothstep((_times() - rng_t0) / dur)


def _candidates(kind: str, paths: dict[str, Path], v: float, rng: np.random.Generator, route: str):
    """Expert first, then alternative plans to be screened by the filter."""
    L0 = paths["L0"]
    if kind == "blocked-lane":
        t0, dur = rng.uniform(0.2, 0.8), rng.uniform(2.6, 3.4)
        yield follow(L0, _profile(v), _lane_change(t0, dur))
        for dt0, ddur, f in [(-0.2, -0.3, 1.0), (0.2, 0.3, 1.0), (0.0, 0.0, 0.9), (0.0, 0.0, 1.08),
                             (-0.1, 0.4, 0.95), (0.3, -0.2, 1.04), (0.1, 0.0, 0.85), (0.0, 0.5, 1.0)]:
            yield follow(L0, _profile(v * f), _lane_change(max(t0 + dt0, 0.0), dur + ddur))
        return
    path = paths[route]
    yield follow(path, _profile(v))
    for f, lat, acc in [(0.92, 0.0, 0.0), (1.06, 0.0, 0.0), (1.0, 0.25, 0.0), (1.0, -0.25, 0.0),
                        (1.0, 0.0, 0.3), (1.0, 0.0, -0.3), (0.85, 0.15, 0.0), (1.1, -0.15, 0.0)]:
        yield follow(path, _profile(v * f, acc), lat)


def make_scenario(kind: str, seed: int) -> Scenario:
    """Deterministic scene of ``kind`` with an expert plan and 2 to 8 filter-passing positives."""
    if kind not in SCENARIO_KINDS:
        raise ValueError(f"unknown scenario kind {kind!r}; choose from {SCENARIO_KINDS}")
    rng = np.random.default_rng([SCENARIO_KINDS.index(kind), seed])
    lanes_pts = _lane_points(kind, rng)
    lanes = [Lane(k, p, HALF_WIDTH, SPEED_LIMIT) for k, p in lanes_pts.items()]
    # arc length 0 at the ego origin for ego lanes, at the conflict point for the crossing lane
    paths = {k: _ShiftedPath(Path(p), 200.0 if k == "X0" else 30.0) for k, p in lanes_pts.items()}
    agents: list[AgentTrack] = []
    route = "L0"

    if kind == "straight":
        v = rng.uniform(8.0, 12.0)
        agents.append(lane_track("lead", paths["L0"], rng.uniform(25.0, 40.0), v + rng.uniform(0.0, 1.5), "L0"))
        agents.append(lane_track("side", paths["L1"], rng.uniform(-15.0, 40.0), rng.uniform(8.0, 12.0), "L1"))
    elif kind == "blocked-lane":
        v = rng.uniform(7.0, 10.0)
        agents.append(lane_track("parked", paths["L0"], rng.uniform(30.0, 45.0), 0.0, "L0", parked=True))
        agents.append(lane_track("far", paths["L1"], rng.uniform(90.0, 120.0), rng.uniform(10.0, 12.0), "L1"))
    elif kind == "curve":
        v = rng.uniform(7.0, 11.0)
        agents.append(lane_track("lead", paths["L0"], rng.uniform(30.0, 45.0), v + rng.uniform(0.0, 1.5), "L0"))
        agents.append(lane_track("side", paths["L1"], rng.uniform(-15.0, 40.0), rng.uniform(7.0, 11.0), "L1"))
    else:
        route = "T0" if rng.random() < 0.5 else "L0"
        v = rng.uniform(5.0, 7.0) if route == "T0" else rng.uniform(7.0, 10.0)
        # the crossing agent approaches from far enough back to reach the conflict area late
        agents.append(lane_track("cross", paths["X0"], -rng.uniform(60.0, 90.0), rng.uniform(6.0, 9.0), "X0"))
        agents.append(lane_track("lead", paths["L0"], rng.uniform(25.0, 40.0), rng.uniform(9.0, 11.0), "L0"))

    route_lanes = [route, "L1"] if kind == "blocked-lane" else [route]
    sc = Scenario(f"{kind}-{seed}", DT, ego_history(v), lanes, agents, kind=kind, seed=seed, route=route_lanes)
    pred = logged_predictions(sc, HORIZON)
    accepted = []
    for i, cand in enumerate(_candidates(kind, paths, v, rng, route)):
        if len(hard_filter(cand[None], sc, pred)) == 1:
            accepted.append(cand)
        elif i == 0:
            raise RuntimeError(f"{sc.name}: expert plan fails the filter")
        if len(accepted) == MAX_POSITIVES:
            break
    if len(accepted) < 2:
        raise RuntimeError(f"{sc.name}: only {len(accepted)} compliant plans")
    sc.expert = accepted[0]
    sc.positives = accepted
    return sc


class _ShiftedPath:
    """A lane path re-indexed so arc length 0 sits at the ego origin."""

    def __init__(self, path: Path, origin_s: float):
        self.path, self.s0 = path, origin_s

    def at(self, s):
        return self.path.at(np.asarray(s) + self.s0)


def scenario_set(kind: str, seeds) -> list[Scenario]:
    return [make_scenario(kind, int(s)) for s in seeds]
