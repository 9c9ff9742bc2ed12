"""Replica-side pipeline: clamped admittance, command fusion and the
superimposed torque law.

The admittance turns residual interaction wrenches into a pose offset
x_F with a per-tick twist-change clamp; the offset composes with the
(possibly delayed) master command into x_delta.  The torque command
superimposes dynamics compensation, a weak joint-space posture PD, the
desired-wrench feedforward, the task-space fractal controller, and in
bimanual mode a relative-pose PD.  Every optional term is purely
additive.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .arm import ArmModel, ArmState, bias_torque, forward_kinematics, jacobian_world
from .controllers import CartesianNlpd, CartesianPd, JointSpacePd
from .geometry import Pose, Twist, Wrench, apply_displacement, integrate_twist


@dataclass
class AdmittanceState:
    """Integrated force-controller state with a per-axis twist-change clamp."""

    x_f: Pose = field(default_factory=Pose.identity)
    v_f: Twist = field(default_factory=Twist.zero)
    # diagonal inverse of the desired inertia, [angular; linear]
    m_inv: np.ndarray = field(default_factory=lambda: np.concatenate(
        [np.full(3, 1.0 / 0.5), np.full(3, 1.0 / 10.0)]))
    # largest allowed twist change per tick, [rad/s; m/s]
    dv_max: np.ndarray = field(default_factory=lambda: np.concatenate(
        [np.full(3, 0.02), np.full(3, 0.002)]))
    enabled: bool = True

    def __post_init__(self):
        self.m_inv = np.asarray(self.m_inv, dtype=float).reshape(6).copy()
        self.dv_max = np.asarray(self.dv_max, dtype=float).reshape(6).copy()
        if np.any(self.m_inv < 0.0):
            raise ValueError("desired-inertia inverse entries must be >= 0")

    def reset(self):
        self.x_f = Pose.identity()
        self.v_f = Twist.zero()


def estimate_interaction(h_e: Wrench, h_d: Wrench) -> Wrench:
    """Residual external interaction: measured minus desired wrench."""
    if h_e.frame != h_d.frame:
        raise ValueError(f"wrench frame mismatch: {h_e.frame!r} vs {h_d.frame!r}")
    return Wrench(h_e.torque - h_d.torque, h_e.force - h_d.force, h_e.frame)


def admittance_step(state: AdmittanceState, h_est: Wrench, h_d_ref: Wrench,
                    dt: float) -> AdmittanceState:
    """Integrate the desired-inertia response with the twist-change clamp.

    The pose advances with the pre-update velocity; the velocity then
    gains the clamped increment (per-axis magnitude clamp: the printed
    max() in the source material does not constrain, so the clamp uses
    min(), matching the stated intent).
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    if not state.enabled:
        state.reset()
        return state
    accel = state.m_inv * (h_est.as_array() - h_d_ref.as_array())
    dv = np.sign(accel) * np.minimum(np.abs(accel) * dt, state.dv_max)
    state.x_f = integrate_twist(state.x_f, state.v_f, dt)
    v = state.v_f.as_array() + dv
    state.v_f = Twist(v[:3], v[3:])
    return state


def fuse_command(x_d: Pose, x_f: Pose, x_auto: Pose | None = None) -> Pose:
    """Fuse the commanded pose: master command plus the admittance offset,
    plus an optional autonomous displacement.  All additions are world-
    aligned displacements (translations sum componentwise)."""
    out = apply_displacement(x_d, x_f)
    if x_auto is not None:
        out = apply_displacement(out, x_auto)
    return out


@dataclass
class ReplicaCommand:
    x_delta: Pose
    h_d: Wrench
    q_d: np.ndarray

    def __post_init__(self):
        self.q_d = np.asarray(self.q_d, dtype=float).reshape(-1)
        if not np.all(np.isfinite(self.h_d.as_array())):
            raise ValueError("desired wrench must be finite")


@dataclass
class BimanualTerm:
    """Relative-pose coupling for one arm: its block of the stacked Jacobian."""

    j_r_block: np.ndarray
    x_r_d: Pose
    x_r: Pose
    v_r: Twist
    pd_rel: CartesianPd


def replica_torque(model: ArmModel, state: ArmState, cmd: ReplicaCommand,
                   nlpd: CartesianNlpd, pd_joint: JointSpacePd | None = None,
                   bimanual: BimanualTerm | None = None,
                   j_l: np.ndarray | None = None,
                   clamp: bool = True) -> np.ndarray:
    """Superimposed torque law; optional terms contribute purely additively.

    j_l is the Jacobian at the desired interaction location; it defaults
    to the end-effector Jacobian (tool-tip interaction).
    """
    if cmd.q_d.shape[0] != model.n:
        raise ValueError("q_d dimension mismatch")
    # C(q,dq)dq + G(q) in a single recursion
    tau = bias_torque(model, state.q, state.dq)

    if pd_joint is not None:
        tau = tau + pd_joint.torque(cmd.q_d, state.q, state.dq)

    j_w = jacobian_world(model, state.q)
    if j_l is None:
        j_l = j_w
    tau = tau + j_l.T @ cmd.h_d.as_array()

    x = forward_kinematics(model, state.q)
    nu = j_w @ state.dq
    task = nlpd.wrench(cmd.x_delta, x, Twist(nu[:3], nu[3:]))
    tau = tau + j_w.T @ task.as_array()

    if bimanual is not None:
        rel = bimanual.pd_rel.wrench(bimanual.x_r_d, bimanual.x_r, bimanual.v_r)
        tau = tau + bimanual.j_r_block.T @ rel.as_array()

    if clamp:
        tau = np.clip(tau, -model.tau_max, model.tau_max)
    return tau


def torque_saturated(model: ArmModel, tau: np.ndarray, rtol: float = 1e-9) -> bool:
    return bool(np.any(np.abs(tau) >= model.tau_max * (1.0 - rtol)))
