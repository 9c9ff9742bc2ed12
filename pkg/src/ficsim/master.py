"""Master-side pipeline: operator motion to replica commands, haptics mixing.

Position mode replays the device displacement on top of the pose
captured at mode entry; velocity mode integrates the device twist.  The
haptic output superimposes a virtual fractal-spring pull (toward home,
or toward the interior of a configurable workspace sphere) with the
gain-scaled remote wrench.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .controllers import CartesianNlpd
from .geometry import (
    Pose,
    Twist,
    Wrench,
    apply_displacement,
    displacement_between,
    integrate_twist,
)

POSITION = "position"
VELOCITY = "velocity"


@dataclass
class MasterMode:
    kind: str = POSITION
    x_d0: Pose = field(default_factory=Pose.identity)
    # device pose at mode entry; displacement is measured from here
    x_m0: Pose = field(default_factory=Pose.identity)


@dataclass
class MasterState:
    x_m: Pose = field(default_factory=Pose.identity)
    v_m: Twist = field(default_factory=Twist.zero)
    k_h: float = 0.0
    x_d_prev: Pose = field(default_factory=Pose.identity)


def set_haptic_gain(state: MasterState, raw: float) -> MasterState:
    state.k_h = min(1.0, max(0.0, float(raw)))
    return state


def master_transform(mode: MasterMode, state: MasterState, dt: float) -> Pose:
    """Desired replica pose for this tick; updates the held command.

    Position mode adds the device displacement since mode entry to the
    anchored replica pose (world-aligned translation, left-composed
    rotation); velocity mode integrates the device twist on the held
    command.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    if mode.kind == POSITION:
        disp = displacement_between(mode.x_m0, state.x_m)
        x_d = apply_displacement(mode.x_d0, disp)
    elif mode.kind == VELOCITY:
        x_d = integrate_twist(state.x_d_prev, state.v_m, dt)
    else:
        raise ValueError(f"unknown master mode {mode.kind!r}")
    state.x_d_prev = x_d.copy()
    return x_d


def workspace_excess(x_m: Pose, radius: float) -> Pose:
    """Device displacement reduced to its part beyond the workspace sphere."""
    if radius <= 0.0:
        return x_m
    t = x_m.translation
    dist = float(np.linalg.norm(t))
    if dist <= radius:
        return Pose(x_m.rotation, np.zeros(3))
    return Pose(x_m.rotation, t * (1.0 - radius / dist))


def master_haptics(nlpd: CartesianNlpd, state: MasterState, h_e: Wrench,
                   workspace_radius: float = 0.0) -> Wrench:
    """Feedback wrench: fractal pull on the negated displacement + K_H * h_e."""
    ref = workspace_excess(state.x_m, workspace_radius)
    virtual = nlpd.wrench(Pose.identity(), ref, state.v_m, frame=h_e.frame)
    return virtual + state.k_h * h_e


class MasterStation:
    """Stateful wrapper driving the transform/haptics pipeline tick by tick."""

    def __init__(self, nlpd: CartesianNlpd, workspace_radius: float = 0.0):
        self.nlpd = nlpd
        self.workspace_radius = workspace_radius
        self.mode = MasterMode()
        self.state = MasterState()

    def set_mode(self, kind: str):
        """Switch modes, re-anchoring so the command stays continuous."""
        if kind == self.mode.kind:
            return
        if kind == POSITION:
            self.mode = MasterMode(POSITION, self.state.x_d_prev.copy(),
                                   self.state.x_m.copy())
        elif kind == VELOCITY:
            self.mode = MasterMode(VELOCITY)
        else:
            raise ValueError(f"unknown master mode {kind!r}")

    def update(self, x_m: Pose, v_m: Twist, k_h_raw: float, dt: float) -> Pose:
        self.state.x_m = x_m.copy()
        self.state.v_m = v_m.copy()
        set_haptic_gain(self.state, k_h_raw)
        return master_transform(self.mode, self.state, dt)

    def haptics(self, h_e: Wrench) -> Wrench:
        return master_haptics(self.nlpd, self.state, h_e, self.workspace_radius)
