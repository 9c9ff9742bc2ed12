"""Serial-chain arm models: kinematics, dynamics and plant stepping.

An arm is a chain of revolute joints.  Joint i sits at a fixed offset
from its parent and rotates about `axis` (unit vector, local frame);
link mass properties are expressed in the link frame.  Models are
immutable after construction; stepping mutates only the ArmState.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .geometry import Pose, Twist, Wrench, compose

MAX_PLANT_DT = 5e-3


@dataclass(frozen=True)
class JointSpec:
    axis: tuple
    offset: Pose
    mass: float
    com: tuple
    inertia: np.ndarray  # 3x3 about the com, link frame
    q_min: float = -2.9
    q_max: float = 2.9
    dq_max: float = 2.5
    tau_max: float = 50.0


class ArmModel:
    """Kinematic/dynamic description of one serial arm."""

    def __init__(self, joints, tool_offset: Pose | None = None,
                 gravity=(0.0, 0.0, -9.81), base_pose: Pose | None = None,
                 name: str = "arm"):
        if not 2 <= len(joints) <= 7:
            raise ValueError("arm must have between 2 and 7 joints")
        self.joints = list(joints)
        self.tool_offset = tool_offset.copy() if tool_offset else Pose.identity()
        self.gravity = np.asarray(gravity, dtype=float).reshape(3)
        self.base_pose = base_pose.copy() if base_pose else Pose.identity()
        self.name = name
        self.n = len(joints)

        for j in self.joints:
            if j.q_min >= j.q_max:
                raise ValueError("q_min must be below q_max")
            inertia = np.asarray(j.inertia, dtype=float)
            if not np.allclose(inertia, inertia.T, atol=1e-12):
                raise ValueError("link inertia must be symmetric")
            if np.any(np.linalg.eigvalsh(inertia) <= 0.0):
                raise ValueError("link inertia must be positive definite")

        # flat arrays consumed by the compiled kernels
        self._axis = np.stack([np.asarray(j.axis, dtype=float) / np.linalg.norm(j.axis)
                               for j in self.joints])
        self._off_r = np.stack([j.offset.matrix() for j in self.joints])
        self._off_p = np.stack([j.offset.translation for j in self.joints])
        self._mass = np.array([j.mass for j in self.joints], dtype=float)
        self._com = np.stack([np.asarray(j.com, dtype=float) for j in self.joints])
        self._inertia = np.stack([np.asarray(j.inertia, dtype=float) for j in self.joints])
        self._tool_r = self.tool_offset.matrix()
        self._tool_p = self.tool_offset.translation
        self.q_min = np.array([j.q_min for j in self.joints])
        self.q_max = np.array([j.q_max for j in self.joints])
        self.dq_max = np.array([j.dq_max for j in self.joints])
        self.tau_max = np.array([j.tau_max for j in self.joints])
        self._base_r = self.base_pose.matrix()
        self._base_identity = bool(
            np.allclose(self._base_r, np.eye(3), atol=1e-15)
            and np.allclose(self.base_pose.translation, 0.0, atol=1e-15))
        # gravity expressed in the base frame for the dynamics kernels
        self._gravity_base = self._base_r.T @ self.gravity

    def _check_q(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float).reshape(-1)
        if q.shape[0] != self.n:
            raise ValueError(f"expected {self.n} joint values, got {q.shape[0]}")
        return q


@dataclass
class ArmState:
    q: np.ndarray
    dq: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).reshape(-1).copy()
        self.dq = np.asarray(self.dq, dtype=float).reshape(-1).copy()
        if self.q.shape != self.dq.shape:
            raise ValueError("q and dq dimensions differ")
        if not (np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.dq))):
            raise ValueError("non-finite joint state")

    def copy(self) -> "ArmState":
        return ArmState(self.q, self.dq)


@dataclass
class DynamicsTerms:
    M: np.ndarray
    C_vec: np.ndarray
    G_vec: np.ndarray


def forward_kinematics(model: ArmModel, q) -> Pose:
    """Tool pose in the world frame."""
    q = model._check_q(q)
    r, p = kernels._fk_tool(model._axis, model._off_r, model._off_p,
                            model._tool_r, model._tool_p, q)
    local = Pose(_matrix_to_quat(r), p)
    return compose(model.base_pose, local)


def joint_positions(model: ArmModel, q) -> np.ndarray:
    """World positions of every joint origin plus the tool (for sketches)."""
    q = model._check_q(q)
    _, ps = kernels._fk_frames(model._axis, model._off_r, model._off_p, q)
    r, p = kernels._fk_tool(model._axis, model._off_r, model._off_p,
                            model._tool_r, model._tool_p, q)
    pts = np.vstack([np.zeros(3), ps, p])
    return (model._base_r @ pts.T).T + model.base_pose.translation


def jacobian_world(model: ArmModel, q) -> np.ndarray:
    """6xn Jacobian mapping dq to the tool twist, world frame, [ang; lin]."""
    q = model._check_q(q)
    jac = kernels._jacobian(model._axis, model._off_r, model._off_p,
                            model._tool_r, model._tool_p, q)
    if model._base_identity:
        return jac
    out = np.empty_like(jac)
    out[:3] = model._base_r @ jac[:3]
    out[3:] = model._base_r @ jac[3:]
    return out


def tool_twist(model: ArmModel, state: ArmState) -> Twist:
    v = jacobian_world(model, state.q) @ state.dq
    return Twist(v[:3], v[3:])


def jacobian_relative(left: ArmModel, right: ArmModel, q_l, q_r) -> np.ndarray:
    """6x(n_l+n_r) Jacobian of the right tool pose expressed in the left tool frame.

    Columns map stacked joint rates [dq_l; dq_r] to the rate of the
    relative pose (rotation-log / translation in left-tool coordinates).
    """
    q_l = left._check_q(q_l)
    q_r = right._check_q(q_r)
    x_l = forward_kinematics(left, q_l)
    x_r = forward_kinematics(right, q_r)
    j_l = jacobian_world(left, q_l)
    j_r = jacobian_world(right, q_r)
    r_lt = x_l.matrix().T
    p_rl = x_r.translation - x_l.translation
    sk = _skew(p_rl)
    out = np.zeros((6, left.n + right.n))
    out[:3, :left.n] = -r_lt @ j_l[:3]
    out[3:, :left.n] = r_lt @ (sk @ j_l[:3] - j_l[3:])
    out[:3, left.n:] = r_lt @ j_r[:3]
    out[3:, left.n:] = r_lt @ j_r[3:]
    return out


def relative_pose(left: ArmModel, right: ArmModel, q_l, q_r) -> Pose:
    x_l = forward_kinematics(left, q_l)
    x_r = forward_kinematics(right, q_r)
    return compose(x_l.inverse(), x_r)


def dynamics_terms(model: ArmModel, state: ArmState) -> DynamicsTerms:
    """Inertia matrix, Coriolis/centrifugal vector and gravity load.

    C_vec is the generalized-force vector C(q, dq) dq produced by the
    Newton-Euler recursion; the energy-conservation tests stand in for
    the usual skew-symmetry property of the underlying factorization.
    """
    q = model._check_q(state.q)
    dq = model._check_q(state.dq)
    m = kernels._crba(model._axis, model._off_r, model._off_p,
                      model._mass, model._com, model._inertia, q)
    zero = np.zeros(model.n)
    no_grav = np.zeros(3)
    c_vec = kernels._rnea(model._axis, model._off_r, model._off_p,
                          model._mass, model._com, model._inertia,
                          q, dq, zero, no_grav)
    g_vec = kernels._rnea(model._axis, model._off_r, model._off_p,
                          model._mass, model._com, model._inertia,
                          q, zero, zero, -model._gravity_base)
    return DynamicsTerms(m, c_vec, g_vec)


def bias_torque(model: ArmModel, q: np.ndarray, dq: np.ndarray) -> np.ndarray:
    """C(q, dq) dq + G(q) in one recursion (hot path of the integrator)."""
    return kernels._rnea(model._axis, model._off_r, model._off_p,
                         model._mass, model._com, model._inertia,
                         q, dq, np.zeros(model.n), -model._gravity_base)


def mass_matrix(model: ArmModel, q: np.ndarray) -> np.ndarray:
    return kernels._crba(model._axis, model._off_r, model._off_p,
                         model._mass, model._com, model._inertia, q)


def potential_energy(model: ArmModel, q: np.ndarray) -> float:
    coms = kernels._com_positions(model._axis, model._off_r, model._off_p,
                                  model._com, np.asarray(q, dtype=float))
    # base-frame gravity; constant offsets cancel in energy differences
    return float(-np.sum(model._mass * (coms @ model._gravity_base)))


def kinetic_energy(model: ArmModel, state: ArmState) -> float:
    m = mass_matrix(model, state.q)
    return float(0.5 * state.dq @ m @ state.dq)


def _accel(model: ArmModel, q, dq, tau, h_ext: np.ndarray | None):
    rhs = tau - bias_torque(model, q, dq)
    if h_ext is not None:
        rhs = rhs + jacobian_world(model, q).T @ h_ext
    m = mass_matrix(model, q)
    return np.linalg.solve(m, rhs)


def step_dynamics(model: ArmModel, state: ArmState, tau, external_wrench: Wrench | None,
                  dt: float, wrench_fn=None) -> ArmState:
    """Advance the plant one RK4 step of M qdd = tau + J^T h - C - G.

    `tau` is held over the step.  The external wrench is either a fixed
    Wrench or, via `wrench_fn(q, dq)`, re-evaluated at every RK4 stage
    (needed for stiff position-dependent contacts).  Joints driven into
    a limit are clamped there with zero velocity.
    """
    if not 0.0 < dt <= MAX_PLANT_DT:
        raise ValueError(f"dt must be in (0, {MAX_PLANT_DT}]")
    tau = np.asarray(tau, dtype=float).reshape(-1)
    if tau.shape[0] != model.n or not np.all(np.isfinite(tau)):
        raise ValueError("torque command must be finite and match the joint count")

    if wrench_fn is not None:
        h = lambda q, dq: wrench_fn(q, dq).as_array()
    elif external_wrench is not None:
        h_arr = external_wrench.as_array()
        h = lambda q, dq: h_arr
    else:
        h = lambda q, dq: None

    q0, dq0 = state.q, state.dq
    k1q = dq0
    k1v = _accel(model, q0, dq0, tau, h(q0, dq0))
    q_a, dq_a = q0 + 0.5 * dt * k1q, dq0 + 0.5 * dt * k1v
    k2q = dq_a
    k2v = _accel(model, q_a, dq_a, tau, h(q_a, dq_a))
    q_b, dq_b = q0 + 0.5 * dt * k2q, dq0 + 0.5 * dt * k2v
    k3q = dq_b
    k3v = _accel(model, q_b, dq_b, tau, h(q_b, dq_b))
    q_c, dq_c = q0 + dt * k3q, dq0 + dt * k3v
    k4q = dq_c
    k4v = _accel(model, q_c, dq_c, tau, h(q_c, dq_c))

    q_new = q0 + dt / 6.0 * (k1q + 2 * k2q + 2 * k3q + k4q)
    dq_new = dq0 + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)

    low = q_new < model.q_min
    high = q_new > model.q_max
    if np.any(low) or np.any(high):
        q_new = np.clip(q_new, model.q_min, model.q_max)
        dq_new = np.where(low | high, 0.0, dq_new)
    return ArmState(q_new, dq_new)


def _skew(v):
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def _matrix_to_quat(r: np.ndarray) -> np.ndarray:
    """Shepperd's method, branch on the largest diagonal term."""
    t = np.trace(r)
    if t > 0.0:
        s = np.sqrt(t + 1.0) * 2.0
        return np.array([0.25 * s, (r[2, 1] - r[1, 2]) / s,
                         (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s])
    i = int(np.argmax(np.diag(r)))
    if i == 0:
        s = np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2.0
        return np.array([(r[2, 1] - r[1, 2]) / s, 0.25 * s,
                         (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s])
    if i == 1:
        s = np.sqrt(1.0 - r[0, 0] + r[1, 1] - r[2, 2]) * 2.0
        return np.array([(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s,
                         0.25 * s, (r[1, 2] + r[2, 1]) / s])
    s = np.sqrt(1.0 - r[0, 0] - r[1, 1] + r[2, 2]) * 2.0
    return np.array([(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s,
                     (r[1, 2] + r[2, 1]) / s, 0.25 * s])


def _rod_inertia(mass: float, length: float, slender: float = 0.02) -> np.ndarray:
    """Uniform rod along local x with a small transverse radius."""
    i_long = 0.5 * mass * slender ** 2
    i_trans = mass * (length ** 2 / 12.0 + slender ** 2 / 4.0)
    return np.diag([i_long, i_trans, i_trans])


def planar_3dof(base_pose: Pose | None = None, name: str = "planar3") -> ArmModel:
    """Three z-axis joints moving in the horizontal plane (gravity-neutral)."""
    lengths = [0.40, 0.35, 0.25]
    masses = [4.0, 3.0, 1.2]
    joints = []
    prev = 0.0
    for ln, ms in zip(lengths, masses):
        joints.append(JointSpec(
            axis=(0.0, 0.0, 1.0),
            offset=Pose(translation=(prev, 0.0, 0.0)),
            mass=ms,
            com=(ln / 2.0, 0.0, 0.0),
            inertia=_rod_inertia(ms, ln),
            q_min=-2.8, q_max=2.8, dq_max=3.0, tau_max=60.0,
        ))
        prev = ln
    tool = Pose(translation=(lengths[2], 0.0, 0.0))
    return ArmModel(joints, tool_offset=tool, gravity=(0.0, 0.0, -9.81),
                    base_pose=base_pose, name=name)


def spatial_7dof(base_pose: Pose | None = None, name: str = "spatial7") -> ArmModel:
    """Anthropomorphic 7-joint arm (alternating z/y axes, desk-scale reach)."""
    z = (0.0, 0.0, 1.0)
    y = (0.0, 1.0, 0.0)
    spec = [
        # axis, offset translation, mass, link length for inertia
        (z, (0.0, 0.0, 0.333), 4.0, 0.30),
        (y, (0.0, 0.0, 0.0), 4.0, 0.30),
        (z, (0.0, 0.0, 0.316), 3.0, 0.30),
        (y, (0.0825, 0.0, 0.0), 3.0, 0.28),
        (z, (-0.0825, 0.0, 0.384), 2.0, 0.25),
        (y, (0.0, 0.0, 0.0), 1.5, 0.15),
        (z, (0.088, 0.0, 0.0), 0.5, 0.10),
    ]
    limits = [
        (-2.9, 2.9, 2.2, 87.0),
        (-1.8, 1.8, 2.2, 87.0),
        (-2.9, 2.9, 2.2, 87.0),
        (-2.9, 0.1, 2.2, 87.0),
        (-2.9, 2.9, 2.6, 12.0),
        (-0.1, 3.7, 2.6, 12.0),
        (-2.9, 2.9, 2.6, 12.0),
    ]
    joints = []
    for (axis, off, mass, ln), (lo, hi, dv, tq) in zip(spec, limits):
        com = (0.0, 0.0, -ln / 3.0)
        i_val = max(mass * ln ** 2 / 12.0, 1e-3)
        joints.append(JointSpec(
            axis=axis, offset=Pose(translation=off), mass=mass, com=com,
            inertia=np.diag([i_val, i_val, max(0.3 * i_val, 1e-3)]),
            q_min=lo, q_max=hi, dq_max=dv, tau_max=tq,
        ))
    tool = Pose(translation=(0.0, 0.0, 0.107))
    return ArmModel(joints, tool_offset=tool, gravity=(0.0, 0.0, -9.81),
                    base_pose=base_pose, name=name)


PRESETS = {"planar3": planar_3dof, "spatial7": spatial_7dof}
