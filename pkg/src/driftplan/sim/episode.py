"""Closed-loop episodes: replan, filter, select, track; agents replay logs or follow IDM."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from typing import IO, Protocol

import numpy as np

from ..decoder import GenerationError, ProposalSet
from ..scene import AgentTrack, Lane, Scenario
from ..scene.scenario import wrap_angle
from .geometry import Path, box_corners, boxes_overlap, drivable, from_frame, to_frame
from .idm import IdmParams, idm_accel
from .selection import ACCEL_REF, WEIGHTS, constant_velocity_predictions, score_proposal, hard_filter

MODES = ("nr", "r")
BRAKE_DECEL = 4.0
HISTORY_TICKS = 10
FILTER_INFLATE = 0.25


class PlannerLike(Protocol):
    def generate(self, scenario: Scenario, k: int, alpha: float, seed: int) -> ProposalSet: ...


class ConstantVelocityPlanner:
    """Scripted planner: every proposal holds the current speed and heading."""

    horizon = 80

    def generate(self, scenario: Scenario, k: int, alpha: float, seed: int) -> ProposalSet:
        x, y, h, v = scenario.ego_now
        t = scenario.dt * np.arange(1, self.horizon + 1)
        traj = np.stack([x + v * t * np.cos(h), y + v * t * np.sin(h)], 1)
        return ProposalSet(np.repeat(traj[None], k, axis=0), np.zeros((k, 0)), float(alpha), int(seed))


@dataclass
class EpisodeReport:
    scenario: str
    mode: str
    seed: int
    ticks: int
    collisions: int
    off_drivable_ticks: int
    progress: float
    max_abs_accel: float
    max_abs_jerk: float
    score: float
    generation_failures: int = 0
    brake_replans: int = 0
    previous_plan_replans: int = 0
    left_start_lane: bool = False
    fallback: bool = False
    error: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def outcome_score(collisions: int, off_ticks: int, ticks: int, progress: float, reference: float,
                  max_accel: float) -> float:
    """0 with any collision; otherwise a weighted blend of progress, on-road share and comfort."""
    if collisions > 0:
        return 0.0
    w = np.asarray(WEIGHTS)
    terms = np.array([min(progress / reference, 1.0), 1.0 - off_ticks / max(ticks, 1),
                      1.0 - min(max_accel / ACCEL_REF, 1.0)])
    return float(w @ terms)


def brake_plan(pose: np.ndarray, horizon: int, dt: float, decel: float = BRAKE_DECEL) -> np.ndarray:
    """Constant-deceleration stop along the current heading, in the frame of ``pose``."""
    v = pose[3]
    t = dt * np.arange(1, horizon + 1)
    t_stop = v / decel
    tc = np.minimum(t, t_stop)
    s = v * tc - 0.5 * decel * tc ** 2
    traj = np.stack([s * np.cos(pose[2]), s * np.sin(pose[2])], 1)
    return traj + pose[:2]


def extend_plan(rest: np.ndarray, horizon: int, start: np.ndarray, dt: float) -> np.ndarray | None:
    """Pad the unused tail of a plan to ``horizon`` waypoints at its final velocity."""
    if len(rest) == 0:
        return None
    prev = rest[-2] if len(rest) > 1 else start
    step = rest[-1] - prev
    extra = rest[-1] + step * np.arange(1, horizon - len(rest) + 1)[:, None]
    return np.concatenate([rest, extra.reshape(-1, 2)])[:horizon]


class _Agent:
    def __init__(self, track: AgentTrack, lanes: dict[str, Lane], mode: str):
        self.track = track
        self.reactive = mode == "r" and not track.parked and track.lane in lanes
        s = track.state_at(0.0)
        self.x, self.y, self.h, self.v = s
        self.a = 0.0
        self.history = [row.copy() for row in track.history()]
        if self.reactive:
            self.path = Path(lanes[track.lane].points)
            sp, lat = self.path.project(np.array([self.x, self.y]))
            self.s, self.lat = float(sp), float(lat)
            self.params = IdmParams(v0=max(self.v, 1.0))

    @property
    def id(self) -> str:
        return self.track.id

    def pose(self) -> np.ndarray:
        return np.array([self.x, self.y, self.h, self.v])


class Episode:
    """Mutable closed-loop state for one scenario; ``run`` drives it to completion."""

    def __init__(self, scenario: Scenario, planner: PlannerLike, mode: str = "nr", k: int = 64,
                 alpha: float = 1.0, seed: int = 0, horizon: int = 80, weights=WEIGHTS,
                 inflate: float = FILTER_INFLATE):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        self.sc, self.planner, self.mode = scenario, planner, mode
        self.k, self.alpha, self.seed, self.H = k, alpha, seed, horizon
        self.weights, self.inflate = weights, inflate
        self.dt = scenario.dt
        self.t = 0.0
        self.lanes = {ln.id: ln for ln in scenario.lanes}
        self.ego = scenario.ego_now.astype(np.float64)
        self.ego_trace = [row.copy() for row in scenario.ego_history]
        self.agents = [_Agent(a, self.lanes, mode) for a in scenario.agents]
        self.plan: np.ndarray | None = None     # world-frame waypoints from the last replan
        self.plan_origin = self.ego[:2].copy()
        self.plan_tick = 0
        self.replans = 0
        self.counts = dict(generation_failures=0, brake_replans=0, previous_plan_replans=0)
        self.start_lane = Path(self.lanes[scenario.route[0]].points) if scenario.route else None

    # -- local scene -----------------------------------------------------------
    def local_scene(self) -> Scenario:
        """The world re-expressed in the current ego frame with the last second of history."""
        pose = self.ego[:3]

        def rows(hist):
            h = np.array(hist[-(HISTORY_TICKS + 1):])
            out = h.copy()
            out[:, 0] = np.round(h[:, 0] - self.t, 10)
            out[:, 1:3] = to_frame(h[:, 1:3], pose)
            out[:, 3] = wrap_angle(h[:, 3] - pose[2])
            return out

        lanes = [Lane(ln.id, to_frame(ln.points, pose), ln.half_width, ln.speed_limit, ln.kind)
                 for ln in self.sc.lanes]
        agents = [AgentTrack(a.id, rows(a.history), a.track.length, a.track.width, a.track.parked, a.track.lane)
                  for a in self.agents]
        return Scenario(f"{self.sc.name}@{self.t:.1f}", self.dt, rows(self.ego_trace), lanes, agents,
                        self.sc.ego_length, self.sc.ego_width, self.sc.kind, self.sc.seed, list(self.sc.route))

    # -- planning ----------------------------------------------------------------
    def replan(self) -> dict:
        local = self.local_scene()
        pose = self.ego[:3]
        pred = constant_velocity_predictions(local, self.H)
        here = np.array([0.0, 0.0, 0.0, self.ego[3]])
        try:
            props = self.planner.generate(local, self.k, self.alpha, self.seed * 1000 + self.replans)
            cands = [props.trajectories]
        except GenerationError:
            props = None
            self.counts["generation_failures"] += 1
        self.replans += 1
        if props is None:
            chosen, kind, n_ok = brake_plan(here, self.H, self.dt), "brake", 0
        else:
            prev = None
            if self.plan is not None:
                used = self.plan_tick
                rest = to_frame(self.plan[used:], pose)
                prev = extend_plan(rest, self.H, to_frame(self.plan[used - 1], pose) if used else np.zeros(2),
                                   self.dt)
            if prev is not None:
                cands.append(prev[None])
            trajs = np.concatenate(cands)
            ok = hard_filter(trajs, local, pred, self.inflate)
            n_ok = len(ok)
            if n_ok:
                scores = [score_proposal(trajs[i], local, pred, self.weights) for i in ok]
                best = int(ok[int(np.argmax(scores))])
                chosen = trajs[best]
                kind = "previous" if (prev is not None and best == len(trajs) - 1) else "proposal"
                if kind == "previous":
                    self.counts["previous_plan_replans"] += 1
            else:
                chosen, kind, best = brake_plan(here, self.H, self.dt), "brake", None
                self.counts["brake_replans"] += 1
        self.plan = from_frame(chosen, pose)
        self.plan_origin = self.ego[:2].copy()
        self.plan_tick = 0
        return {"kind": kind, "survivors": int(n_ok),
                "index": None if kind != "proposal" else best}

    # -- control -----------------------------------------------------------------
    def ego_control(self) -> tuple[float, float]:
        """Pure pursuit on the current plan: (acceleration, yaw rate)."""
        j = self.plan_tick
        prev = self.plan[j - 1] if j else self.plan_origin
        target = self.plan[min(j, len(self.plan) - 1)]
        v_des = float(np.hypot(*(target - prev))) / self.dt
        a = float(np.clip((v_des - self.ego[3]) / self.dt, -8.0, 4.0))
        pts = np.concatenate([self.plan_origin[None], self.plan])
        seg = np.hypot(*np.diff(pts, axis=0).T)
        if seg.sum() < 0.5:
            return a, 0.0
        path = Path(pts)
        s, _ = path.project(self.ego[:2])
        look = max(3.0, 0.8 * self.ego[3])
        gx, gy, _ = path.at(min(float(s) + look, path.length))
        rel = to_frame(np.array([gx, gy]), self.ego[:3])
        ld = max(float(np.hypot(*rel)), 1e-6)
        curvature = 2.0 * rel[1] / ld ** 2
        return a, float(np.clip(curvature * self.ego[3], -1.0, 1.0))

    def agent_accel(self, ag: _Agent) -> float:
        gap, v_lead = np.inf, 0.0
        bodies = [(o.x, o.y, o.h, o.v, o.track.length) for o in self.agents if o is not ag]
        bodies.append((*self.ego, self.sc.ego_length))
        for x, y, h, v, length in bodies:
            s, lat = ag.path.project(np.array([x, y]))
            lane = self.lanes[ag.track.lane]
            if abs(lat) > lane.half_width or s <= ag.s:
                continue
            g = float(s) - ag.s - 0.5 * (length + ag.track.length)
            if g < gap:
                gap = g
                v_lead = v * np.cos(h - ag.path.at(float(s))[2])
        return idm_accel(ag.v, ag.params.v0, gap, ag.v - v_lead, ag.params)

    def advance(self) -> None:
        a, w = self.ego_control()
        accels = [self.agent_accel(ag) if ag.reactive else None for ag in self.agents]
        dt = self.dt
        x, y, h, v = self.ego
        v = max(v + a * dt, 0.0)
        h = wrap_angle(h + w * dt)
        self.ego = np.array([x + v * np.cos(h) * dt, y + v * np.sin(h) * dt, h, v])
        self.t = round(self.t + dt, 10)
        self.plan_tick += 1
        self.ego_trace.append(np.array([self.t, *self.ego]))
        for ag, acc in zip(self.agents, accels):
            if acc is None:
                old_v = ag.v
                ag.x, ag.y, ag.h, ag.v = ag.track.state_at(self.t)
                ag.a = (ag.v - old_v) / dt
            else:
                ag.a = acc
                ag.v = max(ag.v + acc * dt, 0.0)
                ag.s += ag.v * dt
                px, py, ph = ag.path.at(ag.s)
                ag.x, ag.y, ag.h = px - ag.lat * np.sin(ph), py + ag.lat * np.cos(ph), ph
            ag.history.append(np.array([self.t, ag.x, ag.y, ag.h, ag.v]))

    def overlaps(self) -> np.ndarray:
        if not self.agents:
            return np.zeros(0, dtype=bool)
        ego = box_corners(*self.ego[:3], self.sc.ego_length, self.sc.ego_width)
        others = np.array([box_corners(ag.x, ag.y, ag.h, ag.track.length, ag.track.width) for ag in self.agents])
        return boxes_overlap(ego[None], others)

    def run(self, ticks: int = 80, replan_period: int = 10, trace: IO[str] | None = None) -> EpisodeReport:
        collisions, off_ticks, left = 0, 0, False
        touching = np.zeros(len(self.agents), dtype=bool)
        speeds = [self.ego[3]]
        dist = 0.0
        for tick in range(ticks):
            decision = self.replan() if tick % replan_period == 0 or self.plan is None else None
            prev = self.ego[:2].copy()
            self.advance()
            dist += float(np.hypot(*(self.ego[:2] - prev)))
            speeds.append(self.ego[3])
            now = self.overlaps()
            collisions += int(np.sum(now & ~touching))
            touching = now
            if not drivable(self.ego[None, :2], self.sc.lanes)[0]:
                off_ticks += 1
            if self.start_lane is not None:
                _, lat = self.start_lane.project(self.ego[:2])
                left |= bool(abs(lat) > self.lanes[self.sc.route[0]].half_width)
            if trace is not None:
                row = {"tick": tick, "t": self.t, "ego": [float(u) for u in self.ego], "decision": decision,
                       "agents": [{"id": ag.id, "x": float(ag.x), "y": float(ag.y), "h": float(ag.h),
                                   "v": float(ag.v), "a": float(ag.a)} for ag in self.agents]}
                trace.write(json.dumps(row, sort_keys=True) + "\n")
        sp = np.array(speeds)
        acc = np.diff(sp) / self.dt
        jerk = np.diff(acc) / self.dt
        max_a = float(np.abs(acc).max()) if len(acc) else 0.0
        max_j = float(np.abs(jerk).max()) if len(jerk) else 0.0
        limit = max(ln.speed_limit for ln in self.sc.lanes)
        score = outcome_score(collisions, off_ticks, ticks, dist, limit * ticks * self.dt, max_a)
        return EpisodeReport(self.sc.name, self.mode, self.seed, ticks, collisions, off_ticks, dist, max_a, max_j,
                             score, left_start_lane=left,
                             fallback=bool(self.counts["generation_failures"]), **self.counts)


def run_episode(scenario: Scenario, planner: PlannerLike, mode: str = "nr", ticks: int = 80,
                replan_period: int = 10, k: int = 64, alpha: float = 1.0, seed: int = 0,
                weights=WEIGHTS, inflate: float = FILTER_INFLATE, trace: IO[str] | None = None) -> EpisodeReport:
    ep = Episode(scenario, planner, mode, k, alpha, seed, weights=weights, inflate=inflate)
    return ep.run(ticks, replan_period, trace)
