"""Car-following acceleration for reactive background agents."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class IdmParams:
    v0: float = 13.9       # desired speed, m/s
    T: float = 1.5         # time headway, s
    s0: float = 2.0        # jam distance, m
    a_max: float = 1.5     # m/s^2
    b: float = 2.0         # comfortable deceleration, m/s^2
    delta: float = 4.0
    b_max: float = 8.0     # emergency deceleration, m/s^2

    def __post_init__(self):
        for name in ("v0", "T", "s0", "a_max", "b", "delta", "b_max"):
            if not getattr(self, name) > 0:
                raise ValueError(f"IDM parameter {name} must be positive")


def desired_gap(v: float, dv: float, p: IdmParams) -> float:
    """Dynamic part floored at zero so a receding leader never shrinks the jam distance."""
    return p.s0 + max(0.0, v * p.T + v * dv / (2.0 * np.sqrt(p.a_max * p.b)))


def idm_accel(v: float, v0: float | None, gap: float, dv: float, params: IdmParams = IdmParams()) -> float:
    """Acceleration for speed ``v`` behind a leader ``gap`` metres ahead closing at ``dv = v - v_lead``.

    ``gap = inf`` means free road. A non-positive gap returns ``-b_max``.
    """
    p = params
    v0 = p.v0 if v0 is None else v0
    if v0 <= 0:
        raise ValueError("desired speed must be positive")
    if gap <= 0:
        return -p.b_max
    free = (max(v, 0.0) / v0) ** p.delta
    interact = 0.0 if np.isinf(gap) else (desired_gap(v, dv, p) / gap) ** 2
    a = p.a_max * (1.0 - free - interact)
    return float(np.clip(a, -p.b_max, p.a_max))
