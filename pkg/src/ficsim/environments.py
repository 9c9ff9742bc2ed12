"""Contact environments for the four scenario families.

Every environment answers one question per tick: what wrench does the
world exert on the tool at this pose and twist?  Wrenches are world
frame.  The soft phantom is a polynomial penetration spring with normal
damping; the rehabilitation partner is a scripted time profile; the
probe surface is a gently rippled heightfield; the brittle object is a
stiff squeeze spring that latches broken beyond its rated force.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .geometry import Pose, Twist, Wrench


@dataclass
class SoftPhantom:
    """Compliant slab: k * depth^p spring along the surface normal."""

    stiffness: float = 2000.0
    exponent: float = 1.5
    surface_pose: Pose = field(default_factory=Pose.identity)
    damping: float = 30.0

    def __post_init__(self):
        self._normal = self.surface_pose.matrix() @ np.array([0.0, 0.0, 1.0])
        self._origin = self.surface_pose.translation

    def wrench(self, tool_pose: Pose, tool_twist: Twist, t: float) -> Wrench:
        depth = float(self._normal @ (self._origin - tool_pose.translation))
        if depth <= 0.0:
            return Wrench.zero()
        rate = float(self._normal @ tool_twist.linear)
        magnitude = self.stiffness * depth ** self.exponent - self.damping * rate
        return Wrench(force=self._normal * max(0.0, magnitude))

    def kernel_spec(self, t: float):
        par = np.zeros(9)
        par[0:3] = self._normal
        par[3] = self._normal @ self._origin
        par[4:7] = self.stiffness, self.exponent, self.damping
        return kernels.ENV_PLANE, par, np.zeros(6)


@dataclass
class HumanPartner:
    """Scripted interaction wrench, linearly interpolated over time."""

    times: np.ndarray
    wrenches: np.ndarray  # one [torque; force] row per time sample

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float).reshape(-1)
        self.wrenches = np.asarray(self.wrenches, dtype=float).reshape(len(self.times), 6)
        if np.any(np.diff(self.times) < 0.0):
            raise ValueError("partner profile times must be non-decreasing")

    def wrench(self, tool_pose: Pose, tool_twist: Twist, t: float) -> Wrench:
        row = self.sample(t)
        return Wrench(row[:3], row[3:])

    def sample(self, t: float) -> np.ndarray:
        if t <= self.times[0]:
            return self.wrenches[0].copy()
        if t >= self.times[-1]:
            return self.wrenches[-1].copy()
        i = int(np.searchsorted(self.times, t, side="right") - 1)
        span = self.times[i + 1] - self.times[i]
        a = (t - self.times[i]) / span if span > 0.0 else 0.0
        return (1.0 - a) * self.wrenches[i] + a * self.wrenches[i + 1]

    def kernel_spec(self, t: float):
        # position-independent: held constant across one control tick
        return kernels.ENV_CONSTANT, np.zeros(9), self.sample(t)


@dataclass
class ProbeSurface:
    """Rippled heightfield z = base + amp * sin(2 pi x / wl) * sin(2 pi y / wl)."""

    base_height: float = 0.0
    amplitude: float = 0.0
    wavelength: float = 0.2
    stiffness: float = 2000.0
    exponent: float = 1.5
    damping: float = 30.0

    def height(self, x: float, y: float) -> float:
        if self.amplitude == 0.0:
            return self.base_height
        k = 2.0 * np.pi / self.wavelength
        return self.base_height + self.amplitude * np.sin(k * x) * np.sin(k * y)

    def wrench(self, tool_pose: Pose, tool_twist: Twist, t: float) -> Wrench:
        p = tool_pose.translation
        depth = self.height(p[0], p[1]) - p[2]
        if depth <= 0.0:
            return Wrench.zero()
        rate = float(tool_twist.linear[2])
        magnitude = self.stiffness * depth ** self.exponent - self.damping * rate
        return Wrench(force=np.array([0.0, 0.0, max(0.0, magnitude)]))

    def kernel_spec(self, t: float):
        par = np.zeros(9)
        par[0:6] = (self.base_height, self.amplitude, self.wavelength,
                    self.stiffness, self.exponent, self.damping)
        return kernels.ENV_HEIGHTFIELD, par, np.zeros(6)


@dataclass
class BrittleObject:
    """Thin rigid plate squeezed between two tools; breaks beyond rated force.

    The plate rides with the grasp midpoint.  Each tool presses on its
    own face along the squeeze axis; once either contact force passes
    break_force the object is broken for the rest of the run and stops
    producing any wrench.
    """

    mass: float = 0.01
    break_force: float = 2.0
    half_width: float = 0.01
    contact_stiffness: float = 1e4
    damping: float = 5.0
    pose: Pose = field(default_factory=Pose.identity)
    axis: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0]))
    broken: bool = False

    def update_pose(self, tool_poses):
        """Ride the grasp: origin at the tool midpoint, squeeze axis along
        the tool-connection line (faces at +-half_width on that axis)."""
        p0 = tool_poses[0].translation
        p1 = tool_poses[1].translation
        mid = 0.5 * (p0 + p1)
        gap = np.linalg.norm(p1 - p0)
        if gap > 1e-12:
            self.axis = (p1 - p0) / gap
        self.pose = Pose(tool_poses[0].rotation, mid)

    def _axis(self, side: int) -> np.ndarray:
        # side 0 presses +axis toward the face at -half_width, side 1 the mirror
        return self.axis

    def contact_force(self, side: int, tool_pose: Pose, tool_twist: Twist) -> float:
        if self.broken:
            return 0.0
        axis = self._axis(side)
        rel = float(axis @ (tool_pose.translation - self.pose.translation))
        face = -self.half_width if side == 0 else self.half_width
        depth = rel - face if side == 0 else face - rel
        if depth <= 0.0:
            return 0.0
        rate = float(axis @ tool_twist.linear) * (1.0 if side == 0 else -1.0)
        return max(0.0, self.contact_stiffness * depth - self.damping * rate)

    def wrench(self, side: int, tool_pose: Pose, tool_twist: Twist) -> Wrench:
        """Reaction on the tool; positive squeeze pushes the tool back out.

        Pure evaluation (integrator stages call it on trial states); the
        break latch is applied by check_break on committed states only.
        """
        f = self.contact_force(side, tool_pose, tool_twist)
        axis = self._axis(side)
        direction = -axis if side == 0 else axis
        return Wrench(force=direction * f)

    def check_break(self, tool_poses, tool_twists) -> bool:
        """Latch the break if either committed contact exceeds the rating."""
        if not self.broken:
            for side in range(2):
                if self.contact_force(side, tool_poses[side], tool_twists[side]) > self.break_force:
                    self.broken = True
                    break
        return self.broken

    def latch_if(self, peak_force: float) -> bool:
        if peak_force > self.break_force:
            self.broken = True
        return self.broken

    def face_spec(self, side: int):
        par = np.zeros(9)
        par[0:3] = self.axis
        par[3] = self.axis @ self.pose.translation
        par[4] = -self.half_width if side == 0 else self.half_width
        par[5] = self.contact_stiffness
        par[6] = self.damping
        par[7] = 1.0 if side == 0 else -1.0
        par[8] = 1.0 if self.broken else 0.0
        return kernels.ENV_CHIP_FACE, par, np.zeros(6)


def environment_wrench(env, tool_pose: Pose, tool_twist: Twist, t: float) -> Wrench:
    """Wrench the environment exerts on the tool (world frame)."""
    if env is None:
        return Wrench.zero()
    return env.wrench(tool_pose, tool_twist, t)
