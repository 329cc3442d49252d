"""Synthetic expert-trajectory corpus with 16 kinematic labels and 6 intent tags.

Every trajectory starts at the origin heading +x and holds H waypoints at
t = dt, 2dt, ..., H*dt. Within-class nuisance (speed level, timing, turn
rate) is drawn per sample so classes have realistic spread.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TAGS = ("stationary", "cruising", "lane-change", "left-turn", "right-turn", "high-interaction")

LABELS = (
    "stationary", "slow-cruise", "medium-cruise", "fast-cruise", "accelerate",
    "lane-change-left", "lane-change-right", "left-turn", "right-turn",
    "curve-left", "curve-right", "yield-stop", "hard-brake", "stop-and-go",
    "u-turn", "double-lane-change",
)

TAG_OF_LABEL = np.array([0, 1, 1, 1, 1, 2, 2, 3, 4, 3, 4, 5, 5, 5, 3, 2])


def rollout(speed: np.ndarray, yaw_rate: np.ndarray, dt: float,
            heading0: float = 0.0, origin=(0.0, 0.0)) -> np.ndarray:
    """Integrate a unicycle; ``speed[t]``/``yaw_rate[t]`` act over step t."""
    heading = heading0 + np.cumsum(yaw_rate * dt)
    x = origin[0] + np.cumsum(speed * np.cos(heading) * dt)
    y = origin[1] + np.cumsum(speed * np.sin(heading) * dt)
    return np.stack([x, y], axis=1)


def smoothstep(u: np.ndarray) -> np.ndarray:
    u = np.clip(u, 0.0, 1.0)
    return u * u * u * (10 - 15 * u + 6 * u * u)


def speed_profile(v0: float, accel: np.ndarray, dt: float) -> np.ndarray:
    """Speeds after each step, floored at zero."""
    v = v0 + np.cumsum(accel * dt)
    return np.maximum(v, 0.0)


def lateral_shift(xs: np.ndarray, t: np.ndarray, offset: float, t0: float, dur: float) -> np.ndarray:
    return offset * smoothstep((t - t0) / dur)


def sample_label(label: int, rng: np.random.Generator, h: int, dt: float) -> np.ndarray:
    t = dt * np.arange(1, h + 1)
    zero = np.zeros(h)
    u = rng.uniform
    if label == 0:
        v = np.full(h, u(0.0, 0.3))
        return rollout(v, zero, dt)
    if label in (1, 2, 3):
        lo, hi = {1: (3, 6), 2: (8, 11), 3: (13, 16)}[label]
        v = speed_profile(u(lo, hi), np.full(h, u(-0.2, 0.2)), dt)
        return rollout(v, zero, dt)
    if label == 4:
        v = speed_profile(u(1, 4), np.full(h, u(1.0, 2.0)), dt)
        return rollout(v, zero, dt)
    if label in (5, 6, 15):
        v = speed_profile(u(7, 12) if label != 15 else u(9, 13), np.zeros(h), dt)
        xs = np.cumsum(v * dt)
        sign = 1.0 if label != 6 else -1.0
        off = sign * u(3.2, 3.8)
        t0, dur = u(0.5, 2.0), u(3.0, 5.0)
        ys = lateral_shift(xs, t, off, t0, dur)
        if label == 15:
            dur = u(2.0, 2.8)
            ys = lateral_shift(xs, t, off, t0, dur) - lateral_shift(xs, t, off, t0 + dur + u(0.8, 1.5), dur)
        return np.stack([xs, ys], axis=1)
    if label in (7, 8, 14):
        sign = -1.0 if label == 8 else 1.0
        angle = np.pi / 2 if label != 14 else np.pi
        v = speed_profile(u(4, 7) if label != 14 else u(3, 5), np.zeros(h), dt)
        t0 = u(0.5, 2.0)
        dur = u(2.5, 4.0) if label != 14 else u(4.0, 5.5)
        w = np.where((t > t0) & (t <= t0 + dur), sign * angle / dur, 0.0)
        return rollout(v, w, dt)
    if label in (9, 10):
        sign = 1.0 if label == 9 else -1.0
        v = speed_profile(u(8, 12), np.zeros(h), dt)
        kappa = sign * u(1 / 150, 1 / 60)
        return rollout(v, kappa * v, dt)
    if label == 11:
        v0, t_stop = u(6, 11), u(3, 6)
        a = np.where(t <= t_stop, -v0 / t_stop, 0.0)
        return rollout(speed_profile(v0, a, dt), zero, dt)
    if label == 12:
        v0 = u(10, 15)
        a = np.full(h, -u(4, 6))
        return rollout(speed_profile(v0, a, dt), zero, dt)
    if label == 13:
        v0, t1 = u(6, 10), u(2, 3.5)
        vmin = u(0.5, 1.5)
        a = np.where(t <= t1, -(v0 - vmin) / t1, u(1.0, 2.0))
        return rollout(speed_profile(v0, a, dt), zero, dt)
    raise ValueError(f"unknown label {label}")


@dataclass
class TrajectoryCorpus:
    trajectories: np.ndarray  # (N, H, 2)
    labels: np.ndarray        # (N,) 16-way kinematic label
    tags: np.ndarray          # (N,) 6-way intent tag

    def __len__(self) -> int:
        return len(self.labels)

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {"trajectories": self.trajectories, "labels": self.labels, "tags": self.tags}

    @classmethod
    def from_arrays(cls, a: dict[str, np.ndarray]) -> "TrajectoryCorpus":
        return cls(a["trajectories"].astype(np.float64), a["labels"].astype(np.int64),
                   a["tags"].astype(np.int64))


def make_corpus(n: int, seed: int, horizon: int = 80, dt: float = 0.1) -> TrajectoryCorpus:
    """Balanced corpus: labels cycle 0..15, so every label is present once n >= 16."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % len(LABELS)
    trajs = np.stack([sample_label(int(k), rng, horizon, dt) for k in labels])
    return TrajectoryCorpus(trajs, labels.astype(np.int64), TAG_OF_LABEL[labels].astype(np.int64))
