"""Proposal filtering and scoring against a scenario and agent predictions.

Trajectories, lanes and predictions share the scenario frame. Waypoint i of a
trajectory is the ego centre at ``(i + 1) * dt`` after the scenario's t = 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..scene import Scenario
from .geometry import DRIVABLE_MARGIN, Path, box_corners, box_distance, boxes_overlap, drivable, path_headings

WEIGHTS = (0.5, 0.3, 0.2)

# normalizers for the composite score
SAFETY_REF = 2.0       # clearance (m) at which the safety term saturates
ACCEL_REF = 4.0        # |a| (m/s^2) at which the acceleration half of comfort reaches 0
JERK_REF = 8.0         # |j| (m/s^3) at which the jerk half of comfort reaches 0


@dataclass
class Predictions:
    poses: np.ndarray      # (A, H, 3) x, y, heading at waypoint times
    dims: np.ndarray       # (A, 2) length, width

    @property
    def n(self) -> int:
        return len(self.poses)


def constant_velocity_predictions(scenario: Scenario, horizon: int) -> Predictions:
    """Roll every agent's last observed state forward at constant speed and heading."""
    t = scenario.dt * np.arange(1, horizon + 1)
    poses, dims = [], []
    for a in scenario.agents:
        _, x, y, h, v = a.history()[-1]
        poses.append(np.stack([x + v * np.cos(h) * t, y + v * np.sin(h) * t, np.full_like(t, h)], axis=-1))
        dims.append((a.length, a.width))
    return Predictions(np.array(poses).reshape(-1, horizon, 3), np.array(dims, dtype=np.float64).reshape(-1, 2))


def logged_predictions(scenario: Scenario, horizon: int) -> Predictions:
    """Agents' own logged futures, held at the last logged state."""
    t = scenario.dt * np.arange(1, horizon + 1)
    poses = [np.array([a.state_at(ti)[:3] for ti in t]) for a in scenario.agents]
    dims = [(a.length, a.width) for a in scenario.agents]
    return Predictions(np.array(poses).reshape(-1, horizon, 3), np.array(dims, dtype=np.float64).reshape(-1, 2))


def _trajectories(proposals) -> np.ndarray:
    traj = getattr(proposals, "trajectories", proposals)
    traj = np.asarray(traj, dtype=np.float64)
    return traj[None] if traj.ndim == 2 else traj


def ego_boxes(trajs: np.ndarray, scenario: Scenario, inflate: float = 0.0) -> np.ndarray:
    """(K, H, 4, 2) ego footprints along each trajectory."""
    x0, y0, h0, _ = scenario.ego_now
    heads = path_headings(trajs, start=np.array([x0, y0]), start_heading=h0)
    return box_corners(trajs[..., 0], trajs[..., 1], heads,
                       scenario.ego_length + 2 * inflate, scenario.ego_width + 2 * inflate)


def agent_boxes(pred: Predictions, horizon: int) -> np.ndarray:
    p = pred.poses[:, :horizon]
    return box_corners(p[..., 0], p[..., 1], p[..., 2], pred.dims[:, 0, None], pred.dims[:, 1, None])


def collision_free(trajs: np.ndarray, scenario: Scenario, pred: Predictions, inflate: float = 0.0) -> np.ndarray:
    K, H = trajs.shape[:2]
    if pred.n == 0:
        return np.ones(K, dtype=bool)
    ego = ego_boxes(trajs, scenario, inflate)[:, None]          # (K, 1, H, 4, 2)
    other = agent_boxes(pred, H)[None]                          # (1, A, H, 4, 2)
    return ~boxes_overlap(ego, other).any(axis=(1, 2))


def hard_filter(proposals, scenario: Scenario, predictions: Predictions | None = None,
                inflate: float = 0.0, margin: float = DRIVABLE_MARGIN) -> np.ndarray:
    """Indices of proposals with no footprint overlap at any waypoint and every waypoint drivable.

    ``inflate`` grows the ego footprint on every side; 0 gives the exact test.
    """
    trajs = _trajectories(proposals)
    if len(trajs) == 0:
        raise ValueError("no proposals to filter")
    if predictions is None:
        predictions = constant_velocity_predictions(scenario, trajs.shape[1])
    ok = np.isfinite(trajs).all(axis=(1, 2))
    safe = np.where(ok[:, None, None], trajs, 0.0)
    ok &= drivable(safe, scenario.lanes, margin).all(axis=1)
    ok &= collision_free(safe, scenario, predictions, inflate)
    return np.flatnonzero(ok)


def _progress(traj: np.ndarray, scenario: Scenario) -> float:
    """Best advance along any lane whose corridor holds the final waypoint.

    The advance runs from the start's projection onto that lane, so a lane
    change earns the distance covered along the target lane.
    """
    start = scenario.ego_now[:2]
    best = 0.0
    for ln in scenario.lanes:
        path = Path(ln.points)
        s, lat = path.project(np.stack([start, traj[-1]]))
        if abs(lat[1]) <= ln.half_width + DRIVABLE_MARGIN:
            best = max(best, float(s[1] - s[0]))
    return best


def _kinematics(traj: np.ndarray, scenario: Scenario) -> tuple[np.ndarray, np.ndarray]:
    """Acceleration and jerk magnitudes, with the current velocity prepended."""
    x, y, h, v = scenario.ego_now
    dt = scenario.dt
    p0 = np.array([x, y])
    prev = p0 - dt * v * np.array([np.cos(h), np.sin(h)])
    pts = np.concatenate([prev[None], p0[None], traj], axis=0)
    vel = np.diff(pts, axis=0) / dt
    acc = np.diff(vel, axis=0) / dt
    jerk = np.diff(acc, axis=0) / dt
    return np.linalg.norm(acc, axis=1), np.linalg.norm(jerk, axis=1)


def progress_reference(scenario: Scenario) -> float:
    """Distance covered at the highest lane speed limit over the horizon."""
    limit = max((ln.speed_limit for ln in scenario.lanes), default=13.9)
    return limit * scenario.dt


def score_terms(traj: np.ndarray, scenario: Scenario, predictions: Predictions | None = None
                ) -> tuple[float, float, float]:
    """Normalized (progress, safety, comfort), each in [0, 1]."""
    traj = np.asarray(traj, dtype=np.float64)
    H = len(traj)
    if predictions is None:
        predictions = constant_velocity_predictions(scenario, H)
    progress = float(np.clip(_progress(traj, scenario) / (progress_reference(scenario) * H), 0.0, 1.0))
    if predictions.n:
        gap = box_distance(ego_boxes(traj[None], scenario)[0][None], agent_boxes(predictions, H)).min()
        safety = float(np.clip(gap / SAFETY_REF, 0.0, 1.0))
    else:
        safety = 1.0
    acc, jerk = _kinematics(traj, scenario)
    comfort = 0.5 * (1 - min(acc.max() / ACCEL_REF, 1.0)) + 0.5 * (1 - min(jerk.max() / JERK_REF, 1.0))
    return progress, safety, float(comfort)


def combine(terms, weights=WEIGHTS) -> float:
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-9:
        raise ValueError("score weights must be positive and sum to 1")
    return float(w @ np.asarray(terms, dtype=np.float64))


def score_proposal(traj: np.ndarray, scenario: Scenario, predictions: Predictions | None = None,
                   weights=WEIGHTS) -> float:
    return combine(score_terms(traj, scenario, predictions), weights)


def select_trajectory(proposals, scenario: Scenario, predictions: Predictions | None = None,
                      weights=WEIGHTS, inflate: float = 0.0) -> int | None:
    """Highest-scoring survivor of the filter; lowest index on ties; None without survivors."""
    trajs = _trajectories(proposals)
    if predictions is None:
        predictions = constant_velocity_predictions(scenario, trajs.shape[1])
    survivors = hard_filter(trajs, scenario, predictions, inflate)
    best, best_score = None, -np.inf
    for i in survivors:
        s = score_proposal(trajs[i], scenario, predictions, weights)
        if s > best_score:
            best, best_score = int(i), s
    return best
