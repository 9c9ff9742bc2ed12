"""Per-tick motion adaptation: project the desired state increment onto
the feasible set.

The commanded state is [q; h_d] (posture and end-effector wrenches, all
arms stacked).  Each tick, the desired increment is derived from the
task-pose error through a weighted Jacobian least-squares step, then a
single QP returns the weighted-closest feasible increment subject to
joint/velocity/torque boxes, a manipulability floor, and (bimanual) the
grasp static-equilibrium equality.  Feasible increments pass through
untouched; the sequential character comes from re-linearizing every
tick.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .arm import ArmModel, bias_torque, forward_kinematics, jacobian_world
from .geometry import Pose, pose_error
from .qpsolver import INFEASIBLE, OPTIMAL, solve_qp

STATUS_OPTIMAL = "Optimal"
STATUS_CLAMPED = "ClampedFeasible"
STATUS_INFEASIBLE = "Infeasible"

STATUS_CODES = {STATUS_OPTIMAL: 0, STATUS_CLAMPED: 1, STATUS_INFEASIBLE: 2}


@dataclass
class AdaptationWeights:
    task_translation: float = 1e4
    task_rotation: float = 1e3
    delta_q: float = 1.0
    delta_h: float = 1e-2


@dataclass
class AdaptationLimits:
    q_margin: float = 0.0
    torque_margin: float = 0.0
    manipulability_floor: float = 0.01
    # linearized rows are assembled only once the state nears the limit
    # (gradients cost finite differences); 0 forces them on every tick
    torque_row_threshold: float = 0.5
    sigma_row_margin: float = 4.0

    def __post_init__(self):
        if self.manipulability_floor <= 0.0:
            raise ValueError("manipulability floor must be positive")

    @property
    def sigma_gate(self) -> float:
        return max(self.sigma_row_margin * self.manipulability_floor,
                   self.manipulability_floor + 0.05)


@dataclass
class GraspSpec:
    """Grasp equality data: the matrix plus the object gravity wrench."""

    matrix: np.ndarray            # 6 x 6*arms, world frame about the object origin
    gravity_wrench: np.ndarray    # 6, [torque; force] of the object weight


@dataclass
class DesiredState:
    """Commanded posture and wrench state the optimisation evolves."""

    q: list                       # per-arm commanded joint vectors
    h_d: np.ndarray               # stacked desired wrenches, 6 per arm

    def __post_init__(self):
        self.q = [np.asarray(qi, dtype=float).copy() for qi in self.q]
        self.h_d = np.asarray(self.h_d, dtype=float).reshape(-1).copy()
        if self.h_d.shape[0] != 6 * len(self.q):
            raise ValueError("h_d must hold 6 entries per arm")

    def copy(self) -> "DesiredState":
        return DesiredState([qi.copy() for qi in self.q], self.h_d.copy())


@dataclass
class AdaptationProblem:
    models: list
    state: DesiredState
    delta_des: np.ndarray
    weights_vec: np.ndarray
    c_ineq_mat: np.ndarray
    c_ineq_vec: np.ndarray        # rows satisfy C x + c >= 0
    c_eq_mat: np.ndarray
    c_eq_vec: np.ndarray          # rows satisfy C x + c = 0
    q_slices: list
    h_slice: slice
    sigma_min: np.ndarray


@dataclass
class AdaptationSolution:
    delta_q: np.ndarray
    delta_h_d: np.ndarray
    status: str
    kkt_residual: float
    active_count: int = 0

    @property
    def status_code(self) -> int:
        return STATUS_CODES[self.status]


def grasp_matrix(object_pose: Pose, tool_poses) -> np.ndarray:
    """Map stacked contact wrenches to the net wrench at the object origin.

    Wrenches are world-frame [torque; force]; each contact contributes
    its force transported with the cross-product moment arm.
    """
    tool_poses = list(tool_poses)
    if len(tool_poses) != 2:
        raise ValueError("grasp matrix expects exactly two contacts")
    p0 = tool_poses[0].translation
    p1 = tool_poses[1].translation
    if np.linalg.norm(p0 - p1) < 1e-9:
        raise ValueError("coincident contact points")
    blocks = []
    for pose in tool_poses:
        r = pose.translation - object_pose.translation
        block = np.eye(6)
        block[0:3, 3:6] = _skew(r)
        blocks.append(block)
    return np.hstack(blocks)


def _skew(v):
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def _sigma_min_gradient(model: ArmModel, q: np.ndarray, h: float = 1e-6):
    """Smallest singular value of the task Jacobian and its gradient.

    Uses the singular-vector identity dsigma/dq_k = u^T (dJ/dq_k) v with
    finite-difference Jacobian derivatives (singular values are invariant
    under the rigid base transform, so everything runs in the base frame).
    Returns (sigma, None) when the two smallest singular values nearly
    coincide (gradient undefined there).
    """
    jac = kernels._jacobian(model._axis, model._off_r, model._off_p,
                            model._tool_r, model._tool_p, q)
    u, s, vt = np.linalg.svd(jac)
    sigma = float(s[-1])
    if len(s) > 1 and s[-2] - s[-1] < 1e-6:
        return sigma, None
    u_min = u[:, len(s) - 1]
    v_min = vt[len(s) - 1]
    stack = kernels._fd_jacobian_stack(model._axis, model._off_r, model._off_p,
                                       model._tool_r, model._tool_p, q, h)
    grad = np.array([u_min @ stack[k] @ v_min for k in range(model.n)])
    return sigma, grad


def build_problem(models, state: DesiredState, x_delta, dt: float,
                  weights: AdaptationWeights | None = None,
                  limits: AdaptationLimits | None = None,
                  grasp: GraspSpec | None = None,
                  h_target: np.ndarray | None = None,
                  h_rate: float = 0.05) -> AdaptationProblem:
    """Assemble the per-tick projection QP around the commanded state."""
    weights = weights or AdaptationWeights()
    limits = limits or AdaptationLimits()
    models = list(models)
    n_arms = len(models)
    if grasp is not None and n_arms != 2:
        raise ValueError("grasp equality requires exactly two arms")
    n_per = [m.n for m in models]
    n_total = int(sum(n_per))
    nx = n_total + 6 * n_arms

    q_slices = []
    start = 0
    for n in n_per:
        q_slices.append(slice(start, start + n))
        start += n
    h_slice = slice(n_total, nx)

    w_task = np.diag([weights.task_rotation] * 3 + [weights.task_translation] * 3)
    delta_des = np.zeros(nx)
    weights_vec = np.concatenate([
        np.full(n_total, weights.delta_q),
        np.full(6 * n_arms, weights.delta_h),
    ])

    rows = []
    offs = []
    sigma_min = np.zeros(n_arms)

    for a, model in enumerate(models):
        q = state.q[a]
        jac = jacobian_world(model, q)
        err = pose_error(x_delta[a], forward_kinematics(model, q))
        lhs = jac.T @ w_task @ jac + weights.delta_q * np.eye(model.n)
        delta_des[q_slices[a]] = np.linalg.solve(lhs, jac.T @ w_task @ err)

        # joint position and velocity boxes as a single tight box
        lb = np.maximum(model.q_min + limits.q_margin - q, -model.dq_max * dt)
        ub = np.minimum(model.q_max - limits.q_margin - q, model.dq_max * dt)
        for k in range(model.n):
            row = np.zeros(nx)
            row[q_slices[a].start + k] = 1.0
            rows.append(row.copy())
            offs.append(-lb[k])
            row[q_slices[a].start + k] = -1.0
            rows.append(row)
            offs.append(ub[k])

        # static torque box linearized at the commanded state (rows only
        # assembled once the load nears the actuator budget)
        h_arm = state.h_d[6 * a:6 * (a + 1)]
        r0 = _static_torque(model, q, h_arm)
        cap = model.tau_max - limits.torque_margin
        if np.max(np.abs(r0) / cap) >= limits.torque_row_threshold:
            h_base = h_arm if model._base_identity else np.concatenate(
                [model._base_r.T @ h_arm[:3], model._base_r.T @ h_arm[3:]])
            dj = kernels._fd_jacobian_stack(model._axis, model._off_r, model._off_p,
                                            model._tool_r, model._tool_p, q, 1e-6)
            dg = kernels._fd_gravity_stack(model._axis, model._off_r, model._off_p,
                                           model._mass, model._com, model._inertia,
                                           q, model._gravity_base, 1e-6)
            dr_dq = np.column_stack([dg[k] + dj[k].T @ h_base
                                     for k in range(model.n)])
            for k in range(model.n):
                row = np.zeros(nx)
                row[q_slices[a]] = -dr_dq[k]
                row[h_slice][6 * a:6 * (a + 1)] = -jac[:, k]
                rows.append(row)
                offs.append(cap[k] - r0[k])
                rows.append(-row)
                offs.append(cap[k] + r0[k])

        # manipulability floor on the smallest singular value; the gradient
        # row appears once sigma drops toward the floor
        sigma = float(np.linalg.svd(jac, compute_uv=False)[-1])
        sigma_min[a] = sigma
        if sigma < limits.sigma_gate:
            sigma, grad = _sigma_min_gradient(model, q)
            sigma_min[a] = sigma
            if grad is not None:
                row = np.zeros(nx)
                row[q_slices[a]] = grad
                rows.append(row)
                offs.append(sigma - limits.manipulability_floor)
            else:
                # near-repeated singular values: damp the posture increment
                weights_vec[q_slices[a]] *= 10.0

    if h_target is not None:
        h_target = np.asarray(h_target, dtype=float).reshape(6 * n_arms)
        delta_des[h_slice] = np.clip(h_target - state.h_d, -h_rate, h_rate)

    if grasp is not None:
        c_eq_mat = np.zeros((6, nx))
        c_eq_mat[:, h_slice] = grasp.matrix
        c_eq_vec = grasp.matrix @ state.h_d + grasp.gravity_wrench
    else:
        c_eq_mat = np.zeros((0, nx))
        c_eq_vec = np.zeros(0)

    return AdaptationProblem(
        models=models, state=state, delta_des=delta_des, weights_vec=weights_vec,
        c_ineq_mat=np.asarray(rows), c_ineq_vec=np.asarray(offs),
        c_eq_mat=c_eq_mat, c_eq_vec=c_eq_vec,
        q_slices=q_slices, h_slice=h_slice, sigma_min=sigma_min)


def _static_torque(model: ArmModel, q: np.ndarray, h_arm: np.ndarray) -> np.ndarray:
    g_vec = bias_torque(model, q, np.zeros(model.n))
    return g_vec + jacobian_world(model, q).T @ h_arm


def solve_sqp_step(problem: AdaptationProblem) -> AdaptationSolution:
    """One weighted projection of the desired increment onto the feasible set."""
    w = problem.weights_vec
    h = 2.0 * np.diag(w)
    g = -2.0 * w * problem.delta_des
    res = solve_qp(h, g,
                   a_eq=problem.c_eq_mat, b_eq=-problem.c_eq_vec,
                   a_in=problem.c_ineq_mat, b_in=-problem.c_ineq_vec)
    n_total = problem.h_slice.start
    if res.status == INFEASIBLE:
        # no meaningful stationarity residual; the status carries the news
        return AdaptationSolution(np.zeros(n_total),
                                  np.zeros(problem.delta_des.shape[0] - n_total),
                                  STATUS_INFEASIBLE, 0.0)
    delta = res.x
    transparent = float(np.max(np.abs(delta - problem.delta_des))) <= 1e-8
    status = STATUS_OPTIMAL if (transparent and res.status == OPTIMAL) else STATUS_CLAMPED
    return AdaptationSolution(delta[:n_total], delta[n_total:], status,
                              res.kkt_residual, len(res.active))


def apply_solution(state: DesiredState, sol: AdaptationSolution, models) -> DesiredState:
    """Advance the commanded state by the accepted increment."""
    if sol.status == STATUS_INFEASIBLE:
        raise ValueError("cannot apply an infeasible adaptation step")
    start = 0
    for i, model in enumerate(models):
        n = model.n
        state.q[i] = np.clip(state.q[i] + sol.delta_q[start:start + n],
                             model.q_min, model.q_max)
        start += n
    state.h_d = state.h_d + sol.delta_h_d
    return state
