"""Passive impedance controllers: saturated PD and the fractal NLPD.

Both laws are built from decoupled mono-dimensional controllers.  The
PD is a linear spring that hard-saturates at force f beyond distance d.
The NLPD stiffens along a bounded force profile while the error grows
(Divergence) and releases the stored effort along a steeper spring
centred at half the peak error while it shrinks (Convergence), which
keeps the controller passive regardless of the error path.

Tuning is the intuitive (f, d, zeta) triple: kp = f/d, kd = 2*zeta*sqrt(kp).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose, Twist, Wrench, pose_error

# deadband on |error| changes used by the divergence detector; guards the
# phase against numerical dither.  Each reversal halves the remaining
# error, and halving continues only while per-tick error changes clear
# this threshold, so the deadband bounds the achievable resting error.
PHASE_DEADBAND = 1e-9


@dataclass(frozen=True)
class PdParams:
    """Saturated PD gains from (force bound, distance bound, damping ratio)."""

    f: float
    d: float
    zeta: float = 0.0

    def __post_init__(self):
        if self.f <= 0.0 or self.d <= 0.0 or self.zeta < 0.0:
            raise ValueError("require f > 0, d > 0, zeta >= 0")

    @property
    def kp(self) -> float:
        return self.f / self.d

    @property
    def kd(self) -> float:
        return 2.0 * self.zeta * math.sqrt(self.kp)


@dataclass(frozen=True)
class NlpdParams:
    """Fractal-controller parameters; xi sets where saturation starts."""

    f: float
    d: float
    zeta: float = 0.0
    xi: float = 0.9

    def __post_init__(self):
        if self.f <= 0.0 or self.d <= 0.0 or self.zeta < 0.0:
            raise ValueError("require f > 0, d > 0, zeta >= 0")
        if not 0.0 < self.xi < 1.0:
            raise ValueError("xi must lie in (0, 1)")

    @property
    def kp(self) -> float:
        return self.f / self.d

    @property
    def kd(self) -> float:
        return 2.0 * self.zeta * math.sqrt(self.kp)

    @property
    def e_max(self) -> float:
        # the tuning force bound doubles as the full saturation level
        return self.f

    @property
    def e_0(self) -> float:
        return self.xi * self.kp * self.d

    @property
    def lam(self) -> float:
        return self.e_max - self.e_0

    @property
    def x_b(self) -> float:
        # linear/saturation boundary; the tanh blend is centred between
        # x_b and d so the force reaches e_max as the error approaches d
        return self.xi * self.d

    @property
    def s(self) -> float:
        return (1.0 - self.xi) * self.d / (2.0 * math.pi)


class Phase(enum.Enum):
    DIVERGENCE = "divergence"
    CONVERGENCE = "convergence"


@dataclass
class NlpdAxisState:
    """Per-axis fractal memory: phase plus the peak error of the cycle."""

    phase: Phase = Phase.DIVERGENCE
    x_tilde_prev: float = 0.0
    x_max: float = 0.0

    def reset(self):
        self.phase = Phase.DIVERGENCE
        self.x_tilde_prev = 0.0
        self.x_max = 0.0

    def copy(self) -> "NlpdAxisState":
        return NlpdAxisState(self.phase, self.x_tilde_prev, self.x_max)


def pd_force(params: PdParams, x_d: float, x: float, dx: float) -> float:
    """Saturated PD: linear inside d, clipped at +-f outside, minus damping."""
    e = x_d - x
    if abs(e) < params.d:
        fk = params.kp * e
    else:
        fk = math.copysign(params.f, e)
    return fk - params.kd * dx


def saturation_profile(params: NlpdParams, x_tilde: float) -> float:
    """Bounded force profile E: linear below xi*d, tanh blend up to e_max."""
    mag = abs(x_tilde)
    if mag <= params.x_b:
        return params.kp * x_tilde
    arg = (mag - params.x_b) / params.s - math.pi
    e = 0.5 * params.lam * (math.tanh(arg) + 1.0) + params.e_0
    return math.copysign(e, x_tilde)


def nlpd_update_phase(state: NlpdAxisState, x_tilde: float) -> NlpdAxisState:
    """Advance the divergence/convergence detector for the new error sample.

    Divergence persists while |error| is non-decreasing and tracks the
    running peak; the first decrease freezes the peak and switches to
    Convergence.  Any subsequent increase (or a zero crossing) starts a
    fresh cycle from the reversal point: each reversal spawns a smaller
    cycle whose release line is anchored at the new local peak, which is
    what makes the controller settle instead of parking at the force
    zero of a stale release line.
    """
    prev = state.x_tilde_prev
    crossed = x_tilde == 0.0 or (prev != 0.0 and (x_tilde > 0.0) != (prev > 0.0))
    mag = abs(x_tilde)
    if crossed:
        state.phase = Phase.DIVERGENCE
        state.x_max = mag
    elif state.phase is Phase.DIVERGENCE:
        if mag >= abs(prev) - PHASE_DEADBAND:
            state.x_max = max(state.x_max, mag)
        else:
            state.phase = Phase.CONVERGENCE
    else:
        if mag > abs(prev) + PHASE_DEADBAND:
            state.phase = Phase.DIVERGENCE
            state.x_max = mag
    state.x_tilde_prev = x_tilde
    return state


def _restoring_force(params: NlpdParams, state: NlpdAxisState, x_tilde: float) -> float:
    if state.phase is Phase.DIVERGENCE:
        fk = saturation_profile(params, x_tilde)
    else:
        if state.x_max == 0.0:
            return 0.0
        peak = saturation_profile(params, state.x_max)
        anchor = math.copysign(state.x_max, x_tilde) if x_tilde != 0.0 else state.x_max
        fk = (2.0 * peak / state.x_max) * (x_tilde - 0.5 * anchor)
    # global force bound holds in either phase
    return max(-params.e_max, min(params.e_max, fk))


def nlpd_force(params: NlpdParams, state: NlpdAxisState, x_d: float, x: float,
               dx: float) -> float:
    """Fractal restoring force minus damping; phase must be current for this error."""
    return _restoring_force(params, state, x_d - x) - params.kd * dx


def effective_stiffness(params: NlpdParams, state: NlpdAxisState, x_tilde: float) -> float:
    """Slope dF/dx of the active branch at the operating point (telemetry)."""
    if state.phase is Phase.CONVERGENCE:
        if state.x_max == 0.0:
            return 0.0
        return 2.0 * abs(saturation_profile(params, state.x_max)) / state.x_max
    mag = abs(x_tilde)
    if mag <= params.x_b:
        return params.kp
    arg = (mag - params.x_b) / params.s - math.pi
    if abs(arg) > 300.0:  # sech^2 underflows to zero long before cosh overflows
        return 0.0
    return 0.5 * params.lam / (params.s * math.cosh(arg) ** 2)


class AxisNlpd:
    """One fractal axis: bundles params with its cycle memory."""

    def __init__(self, params: NlpdParams):
        self.params = params
        self.state = NlpdAxisState()

    def step(self, x_d: float, x: float, dx: float) -> float:
        nlpd_update_phase(self.state, x_d - x)
        return nlpd_force(self.params, self.state, x_d, x, dx)

    def stiffness(self, x_tilde: float) -> float:
        return effective_stiffness(self.params, self.state, x_tilde)

    def reset(self):
        self.state.reset()


class CartesianNlpd:
    """Six decoupled fractal axes: three rotation-log, three translation."""

    def __init__(self, angular: NlpdParams, linear: NlpdParams):
        self.axes = [AxisNlpd(angular) for _ in range(3)] + \
                    [AxisNlpd(linear) for _ in range(3)]

    def wrench(self, x_d: Pose, x: Pose, v: Twist, frame: str = "base") -> Wrench:
        err = pose_error(x_d, x)
        vel = v.as_array()
        out = np.array([ax.step(err[i], 0.0, vel[i]) for i, ax in enumerate(self.axes)])
        return Wrench(out[:3], out[3:], frame)

    def wrench_from_error(self, err: np.ndarray, vel: np.ndarray,
                          frame: str = "base") -> Wrench:
        out = np.array([ax.step(err[i], 0.0, vel[i]) for i, ax in enumerate(self.axes)])
        return Wrench(out[:3], out[3:], frame)

    def stiffness(self) -> np.ndarray:
        return np.array([ax.stiffness(ax.state.x_tilde_prev) for ax in self.axes])

    def reset(self):
        for ax in self.axes:
            ax.reset()


class CartesianPd:
    """Six decoupled saturated-PD axes (used for the relative-pose task)."""

    def __init__(self, angular: PdParams, linear: PdParams):
        self.angular = angular
        self.linear = linear

    def wrench(self, x_d: Pose, x: Pose, v: Twist, frame: str = "base") -> Wrench:
        err = pose_error(x_d, x)
        vel = v.as_array()
        torque = [pd_force(self.angular, err[i], 0.0, vel[i]) for i in range(3)]
        force = [pd_force(self.linear, err[i + 3], 0.0, vel[i + 3]) for i in range(3)]
        return Wrench(torque, force, frame)


class JointSpacePd:
    """Per-joint saturated PD pulling toward the commanded posture."""

    def __init__(self, params: PdParams, n: int):
        self.params = params
        self.n = n

    def torque(self, q_d: np.ndarray, q: np.ndarray, dq: np.ndarray) -> np.ndarray:
        return np.array([pd_force(self.params, q_d[i], q[i], dq[i])
                         for i in range(self.n)])


def nlpd_wrench(params, states, x_d: Pose, x: Pose, v: Twist,
                frame: str = "base") -> Wrench:
    """Functional form over explicit per-axis params/states (6 of each)."""
    err = pose_error(x_d, x)
    vel = v.as_array()
    out = np.empty(6)
    for i in range(6):
        nlpd_update_phase(states[i], err[i])
        out[i] = nlpd_force(params[i], states[i], err[i], 0.0, vel[i])
    return Wrench(out[:3], out[3:], frame)
