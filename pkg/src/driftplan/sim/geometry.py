"""Planar geometry: polyline paths, frames, oriented rectangles, drivable corridors."""

from __future__ import annotations

import numpy as np


def wrap(a):
    return (np.asarray(a) + np.pi) % (2 * np.pi) - np.pi


class Path:
    """Arc-length parameterized polyline."""

    def __init__(self, points: np.ndarray):
        pts = np.asarray(points, dtype=np.float64)
        seg = np.diff(pts, axis=0)
        keep = np.concatenate([[True], np.hypot(seg[:, 0], seg[:, 1]) > 1e-9])
        self.points = pts[keep]
        if len(self.points) < 2:
            raise ValueError("a path needs two distinct points")
        seg = np.diff(self.points, axis=0)
        self.seg_len = np.hypot(seg[:, 0], seg[:, 1])
        self.s = np.concatenate([[0.0], np.cumsum(self.seg_len)])
        self.seg_heading = np.arctan2(seg[:, 1], seg[:, 0])

    @property
    def length(self) -> float:
        return float(self.s[-1])

    def at(self, s) -> np.ndarray:
        """(…,) arc lengths → (…, 3) rows (x, y, heading); extrapolates linearly at the ends."""
        s = np.asarray(s, dtype=np.float64)
        i = np.clip(np.searchsorted(self.s, s, side="right") - 1, 0, len(self.seg_len) - 1)
        u = s - self.s[i]
        h = self.seg_heading[i]
        x = self.points[i, 0] + u * np.cos(h)
        y = self.points[i, 1] + u * np.sin(h)
        return np.stack([x, y, h], axis=-1)

    def project(self, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(…, 2) points → (arc length, signed lateral offset, left positive) of the nearest point."""
        p = np.asarray(p, dtype=np.float64)
        flat = p.reshape(-1, 2)
        a = self.points[:-1]
        d = np.diff(self.points, axis=0)
        rel = flat[:, None, :] - a[None]
        t = np.clip(np.sum(rel * d[None], axis=-1) / (self.seg_len ** 2)[None], 0.0, 1.0)
        foot = a[None] + t[..., None] * d[None]
        dist = np.hypot(*np.moveaxis(flat[:, None, :] - foot, -1, 0))
        j = np.argmin(dist, axis=1)
        rows = np.arange(len(flat))
        cross = d[j, 0] * rel[rows, j, 1] - d[j, 1] * rel[rows, j, 0]
        lat = np.sign(cross) * dist[rows, j]
        s = self.s[j] + t[rows, j] * self.seg_len[j]
        return s.reshape(p.shape[:-1]), lat.reshape(p.shape[:-1])


# -- frames ----------------------------------------------------------------
def to_frame(points: np.ndarray, pose) -> np.ndarray:
    """World (…, 2) → frame of ``pose = (x, y, heading)``."""
    x, y, h = pose[0], pose[1], pose[2]
    c, s = np.cos(h), np.sin(h)
    d = np.asarray(points, dtype=np.float64) - np.array([x, y])
    return np.stack([c * d[..., 0] + s * d[..., 1], -s * d[..., 0] + c * d[..., 1]], axis=-1)


def from_frame(points: np.ndarray, pose) -> np.ndarray:
    x, y, h = pose[0], pose[1], pose[2]
    c, s = np.cos(h), np.sin(h)
    p = np.asarray(points, dtype=np.float64)
    return np.stack([x + c * p[..., 0] - s * p[..., 1], y + s * p[..., 0] + c * p[..., 1]], axis=-1)


def states_to_frame(states: np.ndarray, pose) -> np.ndarray:
    """Rows (t, x, y, heading, speed) re-expressed in the frame of ``pose``."""
    out = states.copy()
    out[:, 1:3] = to_frame(states[:, 1:3], pose)
    out[:, 3] = wrap(states[:, 3] - pose[2])
    return out


def path_headings(traj: np.ndarray, start=None, start_heading: float | None = None) -> np.ndarray:
    """Heading at each waypoint from the direction of travel; holds the last heading when stopped.

    ``traj`` is (…, H, 2). ``start`` is the point preceding waypoint 0.
    """
    traj = np.asarray(traj, dtype=np.float64)
    if start is None:
        start = np.zeros(2)
    prev = np.concatenate([np.broadcast_to(start, traj[..., :1, :].shape), traj[..., :-1, :]], axis=-2)
    d = traj - prev
    moving = np.hypot(d[..., 0], d[..., 1]) > 1e-3
    h = np.arctan2(d[..., 1], d[..., 0])
    h0 = 0.0 if start_heading is None else start_heading
    out = np.empty_like(h)
    last = np.full(h.shape[:-1], h0)
    for i in range(h.shape[-1]):
        last = np.where(moving[..., i], h[..., i], last)
        out[..., i] = last
    return out


# -- oriented rectangles -------------------------------------------------------
def box_corners(x, y, h, length, width) -> np.ndarray:
    """Broadcast poses → (…, 4, 2) corners, counter-clockwise."""
    x, y, h = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float), np.asarray(h, float))
    length, width = np.broadcast_to(length, x.shape), np.broadcast_to(width, x.shape)
    c, s = np.cos(h), np.sin(h)
    hl, hw = length / 2, width / 2
    lx = np.stack([hl, -hl, -hl, hl], axis=-1)
    ly = np.stack([hw, hw, -hw, -hw], axis=-1)
    cx = x[..., None] + c[..., None] * lx - s[..., None] * ly
    cy = y[..., None] + s[..., None] * lx + c[..., None] * ly
    return np.stack([cx, cy], axis=-1)


def boxes_overlap(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Separating-axis test for broadcastable (…, 4, 2) rectangles; touching counts as overlap."""
    a, b = np.broadcast_arrays(a, b)
    overlap = np.ones(a.shape[:-2], dtype=bool)
    for poly in (a, b):
        for e in range(2):
            edge = poly[..., (e + 1) % 4, :] - poly[..., e, :]
            axis = np.stack([-edge[..., 1], edge[..., 0]], axis=-1)[..., None, :]
            pa = np.sum(a * axis, axis=-1)
            pb = np.sum(b * axis, axis=-1)
            sep = (pa.max(axis=-1) < pb.min(axis=-1)) | (pb.max(axis=-1) < pa.min(axis=-1))
            overlap &= ~sep
    return overlap


def _point_segment_distance(p, a, b):
    d = b - a
    t = np.clip(np.sum((p - a) * d, axis=-1) / np.maximum(np.sum(d * d, axis=-1), 1e-12), 0.0, 1.0)
    foot = a + t[..., None] * d
    return np.hypot(*np.moveaxis(p - foot, -1, 0))


def box_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Gap between broadcastable rectangles; 0 where they overlap."""
    a, b = np.broadcast_arrays(a, b)
    best = np.full(a.shape[:-2], np.inf)
    for src, dst in ((a, b), (b, a)):
        for v in range(4):
            p = src[..., v, :]
            for e in range(4):
                best = np.minimum(best, _point_segment_distance(p, dst[..., e, :], dst[..., (e + 1) % 4, :]))
    return np.where(boxes_overlap(a, b), 0.0, best)


# -- drivable area -------------------------------------------------------------
DRIVABLE_MARGIN = 0.2


def drivable(points: np.ndarray, lanes, margin: float = DRIVABLE_MARGIN) -> np.ndarray:
    """True where a point lies within some lane's half-width plus ``margin`` of its centerline.

    Points beyond a lane's ends do not count for that lane.
    """
    pts = np.asarray(points, dtype=np.float64)
    ok = np.zeros(pts.shape[:-1], dtype=bool)
    for ln in lanes:
        path = ln if isinstance(ln, Path) else Path(ln.points)
        hw = getattr(ln, "half_width", 1.75)
        s, lat = path.project(pts)
        inside = (np.abs(lat) <= hw + margin) & (s > 1e-9) & (s < path.length - 1e-9)
        ok |= inside
    return ok
