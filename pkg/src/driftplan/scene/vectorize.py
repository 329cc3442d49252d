"""Scenario → padded vector tensors for the polyline encoder.

Each pair of consecutive points becomes one vector row
``[sx, sy, ex, ey, onehot(lane, agent, ego), speed_limit, vx, vy, cos h, sin h, parked]``
with coordinates divided by ``COORD_SCALE``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scenario import Scenario, SceneError

COORD_SCALE = 25.0
SPEED_SCALE = 10.0
KINDS = ("lane", "agent", "ego")
VECTOR_WIDTH = 4 + len(KINDS) + 6


@dataclass
class VectorizedScene:
    map_vectors: np.ndarray      # (Pm, L, C)
    map_mask: np.ndarray         # (Pm, L) bool
    agent_vectors: np.ndarray    # (Pa, L, C)
    agent_mask: np.ndarray       # (Pa, L)

    @property
    def n_map(self) -> int:
        return len(self.map_vectors)

    @property
    def n_agent(self) -> int:
        return len(self.agent_vectors)


@dataclass
class SceneBatch:
    """Scenes padded to common polyline counts; ``*_poly`` marks real polylines."""

    map_vectors: np.ndarray      # (B, Pm, L, C)
    map_mask: np.ndarray         # (B, Pm, L)
    map_poly: np.ndarray         # (B, Pm)
    agent_vectors: np.ndarray
    agent_mask: np.ndarray
    agent_poly: np.ndarray

    @property
    def size(self) -> int:
        return len(self.map_vectors)


def _rows(points: np.ndarray, kind: str, extras: np.ndarray) -> np.ndarray:
    """(n, 2) points and (n, 6) per-point extras → (n-1, C) vectors; extras from the end point."""
    p = points / COORD_SCALE
    onehot = np.zeros((len(points) - 1, len(KINDS)))
    onehot[:, KINDS.index(kind)] = 1.0
    return np.concatenate([p[:-1], p[1:], onehot, extras[1:]], axis=1)


def _nearest_window(rows: np.ndarray, max_vectors: int) -> np.ndarray:
    """Keep the ``max_vectors`` rows whose midpoint is closest to the origin, in path order."""
    if len(rows) <= max_vectors:
        return rows
    mid = 0.5 * (rows[:, 0:2] + rows[:, 2:4])
    keep = np.sort(np.argsort(np.hypot(mid[:, 0], mid[:, 1]), kind="stable")[:max_vectors])
    return rows[keep]


def _track_extras(states: np.ndarray, parked: bool) -> np.ndarray:
    h, v = states[:, 3], states[:, 4]
    return np.stack([np.zeros(len(states)), v * np.cos(h) / SPEED_SCALE, v * np.sin(h) / SPEED_SCALE,
                     np.cos(h), np.sin(h), np.full(len(states), float(parked))], axis=1)


def _stationary_segment(points):
    # a single observed state still needs one vector: repeat the state
    return np.vstack([points, points]) if len(points) == 1 else points


def polyline_vectors(scenario: Scenario, max_vectors: int = 20,
                     max_map: int = 32, max_agents: int = 12) -> tuple[list, list]:
    """Unpadded vector arrays per polyline, truncated by distance to the ego frame origin."""
    maps = []
    for ln in scenario.lanes:
        ex = np.zeros((len(ln.points), 6))
        ex[:, 0] = ln.speed_limit / SPEED_SCALE
        maps.append(_nearest_window(_rows(ln.points, "lane", ex), max_vectors))

    agents = []
    ego_hist = _stationary_segment(scenario.ego_history)
    agents.append(_rows(ego_hist[:, 1:3], "ego", _track_extras(ego_hist, False))[-max_vectors:])
    for a in scenario.agents:
        hist = _stationary_segment(a.history())
        agents.append(_rows(hist[:, 1:3], "agent", _track_extras(hist, a.parked))[-max_vectors:])

    def distance(rows):
        return float(np.min(np.hypot(rows[:, 2], rows[:, 3])))

    maps = sorted(maps, key=distance)[:max_map]
    # ego stays first; other agents by proximity
    agents = agents[:1] + sorted(agents[1:], key=distance)[:max_agents - 1]
    return maps, agents


def _pad(polys: list[np.ndarray], length: int) -> tuple[np.ndarray, np.ndarray]:
    out = np.zeros((len(polys), length, VECTOR_WIDTH))
    mask = np.zeros((len(polys), length), dtype=bool)
    for i, p in enumerate(polys):
        out[i, :len(p)] = p
        mask[i, :len(p)] = True
    return out, mask


def vectorize(scenario: Scenario, max_vectors: int = 20, max_map: int = 32,
              max_agents: int = 12) -> VectorizedScene:
    maps, agents = polyline_vectors(scenario, max_vectors, max_map, max_agents)
    if not maps:
        raise SceneError(f"scenario {scenario.name!r} has no map polylines")
    if not agents:
        raise SceneError(f"scenario {scenario.name!r} has no agent polylines")
    mv, mm = _pad(maps, max(len(p) for p in maps))
    av, am = _pad(agents, max(len(p) for p in agents))
    return VectorizedScene(mv, mm, av, am)


def collate(scenes: list[VectorizedScene]) -> SceneBatch:
    """Pad a list of scenes to shared polyline and vector counts."""
    if not scenes:
        raise SceneError("empty scene batch")

    def stack(vecs, masks):
        P = max(len(v) for v in vecs)
        L = max(v.shape[1] for v in vecs)
        V = np.zeros((len(vecs), P, L, VECTOR_WIDTH))
        M = np.zeros((len(vecs), P, L), dtype=bool)
        for b, (v, m) in enumerate(zip(vecs, masks)):
            V[b, :v.shape[0], :v.shape[1]] = v
            M[b, :m.shape[0], :m.shape[1]] = m
        return V, M, M.any(axis=2)

    mv, mm, mp = stack([s.map_vectors for s in scenes], [s.map_mask for s in scenes])
    av, am, ap = stack([s.agent_vectors for s in scenes], [s.agent_mask for s in scenes])
    return SceneBatch(mv, mm, mp, av, am, ap)
