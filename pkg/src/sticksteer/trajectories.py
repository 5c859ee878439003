"""Reference pose trajectories for the stick-steering task.

The lower endpoint traces a named curve in the horizontal plane below the
grasp; the desired axis runs from the curve point through a fixed anchor
near the grasp pivot, and the upper desired endpoint sits one stick length
along that axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import TaskConfig


class DegeneratePoints(ValueError):
    """Desired endpoints coincide; no axis direction exists."""


class UnknownKind(ValueError):
    pass


def desired_axis(p1d: np.ndarray, p2d: np.ndarray) -> np.ndarray:
    """Unit vector of the desired major axis, from lower to upper endpoint."""
    d = np.asarray(p1d, dtype=float) - np.asarray(p2d, dtype=float)
    n = float(np.linalg.norm(d))
    if n < 1e-9:
        raise DegeneratePoints("desired endpoints coincide")
    return d / n


def _triangle(x: float, half: float) -> float:
    """Triangle wave from 0, amplitude +-half, continuous."""
    y = math.fmod(x + half, 4.0 * half)
    if y < 0:
        y += 4.0 * half
    if y < 2.0 * half:
        return y - half
    return 3.0 * half - y


def curve_point(kind: str, cfg: TaskConfig, t: float, line_dir: np.ndarray | None = None):
    """Planar offset of the lower endpoint from the curve center at time t."""
    if kind == "line":
        if line_dir is None:
            line_dir = np.array([1.0, 0.0])
        s = _triangle(cfg.line_speed * t, cfg.line_half_length)
        return s * line_dir[0], s * line_dir[1]
    if kind == "circle":
        a = cfg.omega * t
        return cfg.radius * math.cos(a), cfg.radius * math.sin(a)
    if kind == "spiral":
        a = cfg.omega * t
        k = (cfg.spiral_r1 - cfg.spiral_r0) / (cfg.spiral_laps * 2.0 * math.pi)
        rho = min(cfg.spiral_r0 + k * a, cfg.spiral_r1)
        return rho * math.cos(a), rho * math.sin(a)
    if kind == "eight":
        tau = 2.0 * math.pi * t / cfg.eight_period
        return (
            cfg.eight_half_width * math.sin(tau),
            cfg.eight_half_width * math.sin(tau) * math.cos(tau),
        )
    raise UnknownKind(f"no reference kind {kind!r}")


@dataclass
class ReferenceTrajectory:
    """Callable reference built per episode around the settled stick pose."""

    kind: str
    cfg: TaskConfig
    center: np.ndarray        # settled lower endpoint (curve center)
    anchor: np.ndarray        # grasp pivot on the settled stick axis
    stick_length: float
    line_dir: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("line", "circle", "spiral", "eight"):
            raise UnknownKind(f"no reference kind {self.kind!r}")
        self.center = np.asarray(self.center, dtype=float)
        self.anchor = np.asarray(self.anchor, dtype=float)

    def sample(self, t: float):
        """Desired (P1, P2, u) at time t; P2 traces the named curve."""
        ox, oy = curve_point(self.kind, self.cfg, t, self.line_dir)
        p2 = self.center + np.array([ox, oy, 0.0])
        u = desired_axis(self.anchor, p2)
        p1 = p2 + u * self.stick_length
        return p1, p2, u


def sample_reference(kind: str, cfg: TaskConfig, t: float, center, anchor,
                     stick_length: float, line_dir=None):
    """One-shot form of ReferenceTrajectory.sample."""
    return ReferenceTrajectory(
        kind, cfg, center, anchor, stick_length, line_dir
    ).sample(t)
