"""Acceptance criteria, one test per criterion, each printing a
pass/fail line with its measured runtime (run with -s to see them all).
"""

import math
import multiprocessing
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import pytest
import yaml

from ficsim import kernels
from ficsim.adaptation import STATUS_OPTIMAL, DesiredState, build_problem, solve_sqp_step
from ficsim.arm import (
    ArmState,
    dynamics_terms,
    forward_kinematics,
    jacobian_world,
    kinetic_energy,
    mass_matrix,
    planar_3dof,
    potential_energy,
    spatial_7dof,
    step_dynamics,
)
from ficsim.controllers import (
    AxisNlpd,
    NlpdAxisState,
    NlpdParams,
    Phase,
    nlpd_force,
    nlpd_update_phase,
    saturation_profile,
)
from ficsim.geometry import Pose, pose_error
from ficsim.harness import load_trace, metrics, run_scenario
from ficsim.qpsolver import solve_qp
from ficsim.scenario import builtin_scenario_dir, parse_config

LIN = NlpdParams(f=40.0, d=0.08, zeta=0.8)


@pytest.fixture(scope="module", autouse=True)
def warm():
    kernels.warmup()


def report(name: str, ok: bool, elapsed: float, budget: float, detail: str = ""):
    status = "PASS" if ok else "FAIL"
    print(f"[{status}] {name}: {elapsed:.1f}s (budget {budget:.0f}s) {detail}")
    assert ok, f"{name}: {detail}"
    assert elapsed < budget, f"{name} exceeded its runtime budget ({elapsed:.1f}s)"


def fresh_raw(name):
    return yaml.safe_load((builtin_scenario_dir() / f"{name}.cfg").read_text())


# -- criterion 1: NLPD unit suite ------------------------------------------


def test_nlpd_unit_suite():
    t0 = time.time()
    ok = True
    detail = []

    # tuning rule for the tabulated linear parameters
    if not math.isclose(LIN.kp, 500.0, rel_tol=1e-12):
        ok, detail = False, ["kp != 500"]

    # saturation pins at the 40 N bound
    deep = NlpdAxisState()
    nlpd_update_phase(deep, 1.0)
    if abs(nlpd_force(LIN, deep, 1.0, 0.0, 0.0) - 40.0) > 1e-6:
        ok = False
        detail.append("saturation != 40 N")

    rng = np.random.default_rng(0)
    for peak in np.concatenate([rng.uniform(1e-4, 0.5, 400), [0.04, 0.08, 0.072]]):
        div = NlpdAxisState()
        nlpd_update_phase(div, peak)
        conv = NlpdAxisState(phase=Phase.CONVERGENCE, x_tilde_prev=peak, x_max=peak)
        f_div = nlpd_force(LIN, div, peak, 0.0, 0.0)
        f_conv = nlpd_force(LIN, conv, peak, 0.0, 0.0)
        if abs(f_div - f_conv) > 1e-9:
            ok = False
            detail.append(f"branch discontinuity at {peak}")
            break
        # midpoint zero crossing is exact
        if nlpd_force(LIN, conv, peak / 2.0, 0.0, 0.0) != 0.0:
            ok = False
            detail.append("midpoint force not exactly zero")
            break

    # hard force bound everywhere, both phases
    ax = AxisNlpd(LIN)
    for e in rng.uniform(-0.6, 0.6, 20000):
        if abs(ax.step(e, 0.0, 0.0)) > LIN.e_max + 1e-9:
            ok = False
            detail.append("force bound violated")
            break

    report("NLPD unit suite", ok, time.time() - t0, 1.0, ";".join(detail))


# -- criterion 2: passivity over closed cycles -----------------------------


def test_passivity_10k_cycles():
    t0 = time.time()
    rng = np.random.default_rng(99)
    worst = -np.inf
    for _ in range(10_000):
        n = int(rng.integers(80, 220))
        walk = np.cumsum(rng.normal(scale=0.01, size=n))
        window = np.sin(np.linspace(0.0, np.pi, n)) ** 2
        path = walk * window
        path[0] = path[-1] = 0.0
        ax = AxisNlpd(LIN)
        forces = [ax.step(e, 0.0, 0.0) for e in path]
        # controller output work onto the plant: -integral F d(err)
        w = 0.0
        for i in range(1, n):
            w -= 0.5 * (forces[i] + forces[i - 1]) * (path[i] - path[i - 1])
        worst = max(worst, w)
    ok = worst <= 1e-6
    report("passivity (10k closed cycles)", ok, time.time() - t0, 30.0,
           f"worst net work {worst:.2e} J")


# -- criterion 3: kinematics / dynamics oracles -----------------------------


def test_kinematics_dynamics_oracles():
    t0 = time.time()
    ok = True
    detail = []

    rng = np.random.default_rng(7)
    h = 1e-7
    worst_fd = 0.0
    for model, count in ((planar_3dof(), 250), (spatial_7dof(), 250)):
        for _ in range(count):
            q = rng.uniform(model.q_min * 0.9, model.q_max * 0.9)
            jac = jacobian_world(model, q)
            fd = np.zeros_like(jac)
            for i in range(model.n):
                qp, qm = q.copy(), q.copy()
                qp[i] += h
                qm[i] -= h
                fd[:, i] = pose_error(forward_kinematics(model, qp),
                                      forward_kinematics(model, qm)) / (2 * h)
            worst_fd = max(worst_fd, float(np.max(np.abs(jac - fd))))
    if worst_fd > 1e-6:
        ok = False
        detail.append(f"jacobian fd error {worst_fd:.2e}")

    # pendulum holding torque: m=1, l=1, com at l/2, g=9.81
    from test_arm import pendulum_1dof_pair
    pend = pendulum_1dof_pair()
    g_vec = dynamics_terms(pend, ArmState([0.0, 0.0], [0.0, 0.0])).G_vec
    if abs(g_vec[0] - 4.905) > 1e-9:
        ok = False
        detail.append(f"pendulum torque {g_vec[0]!r}")

    # unactuated energy drift, RK4 at 1e-4 over 10 s
    from test_arm import JointSpec
    from ficsim.arm import ArmModel
    joints = []
    prev = 0.0
    for ln, ms in [(0.4, 2.0), (0.35, 1.5), (0.3, 1.0)]:
        joints.append(JointSpec(axis=(0, 1, 0), offset=Pose(translation=(prev, 0, 0)),
                                mass=ms, com=(ln / 2, 0, 0),
                                inertia=np.diag([1e-4, ms * ln ** 2 / 12, ms * ln ** 2 / 12]),
                                q_min=-50.0, q_max=50.0))
        prev = ln
    chain = ArmModel(joints, gravity=(0.0, 0.0, -9.81))
    state = ArmState([0.4, -0.3, 0.2], [0.0, 0.0, 0.0])
    e0 = kinetic_energy(chain, state) + potential_energy(chain, state.q)
    scale = max(abs(e0), 1.0)
    worst_drift = 0.0
    tau = np.zeros(3)
    for k in range(100_000):
        state = step_dynamics(chain, state, tau, None, 1e-4)
        if k % 1000 == 999:
            e = kinetic_energy(chain, state) + potential_energy(chain, state.q)
            worst_drift = max(worst_drift, abs(e - e0) / scale)
    if worst_drift > 1e-3:
        ok = False
        detail.append(f"energy drift {worst_drift:.2e}")

    report("kinematics/dynamics oracles", ok, time.time() - t0, 60.0,
           ";".join(detail) or f"fd {worst_fd:.1e}, drift {worst_drift:.1e}")


# -- criterion 4: QP oracle equivalence -------------------------------------


def test_qp_oracle_equivalence():
    t0 = time.time()
    ok = True
    detail = []

    # 2-dof box corpus against dense grid search at 1e-4 resolution
    rng = np.random.default_rng(101)
    for _ in range(200):
        w = rng.uniform(0.5, 4.0, 2)
        target = rng.uniform(-0.02, 0.02, 2)
        lb = rng.uniform(-0.01, -0.002, 2)
        ub = rng.uniform(0.002, 0.01, 2)
        res = solve_qp(2 * np.diag(w), -2 * w * target,
                       a_in=np.vstack([np.eye(2), -np.eye(2)]),
                       b_in=np.concatenate([lb, -ub]))
        xs = np.arange(lb[0], ub[0] + 1e-12, 1e-4)
        ys = np.arange(lb[1], ub[1] + 1e-12, 1e-4)
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        cost = w[0] * (gx - target[0]) ** 2 + w[1] * (gy - target[1]) ** 2
        i, j = np.unravel_index(np.argmin(cost), cost.shape)
        if np.max(np.abs(res.x - [xs[i], ys[j]])) > 1e-3:
            ok = False
            detail.append("grid oracle mismatch")
            break
        slack = np.vstack([np.eye(2), -np.eye(2)]) @ res.x - np.concatenate([lb, -ub])
        if slack.min() < -1e-6:
            ok = False
            detail.append("constraint residual")
            break

    # transparency: feasible desired increments pass through to 1e-8
    model = planar_3dof()
    rng = np.random.default_rng(11)
    checked = 0
    attempts = 0
    while checked < 1000 and attempts < 20000:
        attempts += 1
        st = DesiredState([np.array([0.4, 1.3, 0.8]) + rng.uniform(-0.3, 0.3, 3)],
                          np.zeros(6))
        x_now = forward_kinematics(model, st.q[0])
        target = Pose(x_now.rotation,
                      x_now.translation + rng.normal(scale=2e-4, size=3) * [1, 1, 0])
        prob = build_problem([model], st, [target], 1e-3)
        slack = prob.c_ineq_mat @ prob.delta_des + prob.c_ineq_vec
        if slack.min() < 1e-10:
            continue
        checked += 1
        sol = solve_sqp_step(prob)
        full = np.concatenate([sol.delta_q, sol.delta_h_d])
        if sol.status != STATUS_OPTIMAL or np.max(np.abs(full - prob.delta_des)) > 1e-8:
            ok = False
            detail.append("transparency violated")
            break
    if checked < 1000:
        ok = False
        detail.append(f"only {checked} feasible instances")

    report("QP oracle equivalence", ok, time.time() - t0, 120.0, ";".join(detail))


# -- criterion 5: admittance/impedance switching (rehab) ---------------------


def test_rehab_regimes():
    t0 = time.time()
    cfg = parse_config(fresh_raw("rehab"), name="rehab")
    res = run_scenario(cfg, seed=0, out_dir="/tmp/ficsim_accept")
    m = metrics(res.trace_path)
    arm = m["arms"][0]
    free = arm["phases"]["free"]
    perturb = arm["phases"]["perturb"]

    ok = True
    detail = []
    if free["force_max"] > 10.0:
        ok = False
        detail.append(f"free-phase force {free['force_max']:.1f} N")
    if free["displacement"] < 0.01:
        ok = False
        detail.append(f"free-phase motion {free['displacement']:.4f} m")
    if not 35.0 <= perturb["force_max"] <= 45.0:
        ok = False
        detail.append(f"perturbation peak {perturb['force_max']:.1f} N")

    # stability: bounded kinetic energy, no torque-limit chatter
    data, sidecar = load_trace(res.trace_path)
    cols = {c: i for i, c in enumerate(sidecar["columns"])}
    model = cfg.arms[0]
    qs = data[::10, [cols[f"a0_q{j}"] for j in range(3)]]
    dqs = data[::10, [cols[f"a0_dq{j}"] for j in range(3)]]
    ke = np.array([0.5 * d @ mass_matrix(model, q) @ d for q, d in zip(qs, dqs)])
    if ke.max() > 5.0:
        ok = False
        detail.append(f"kinetic energy peak {ke.max():.2f} J")
    if arm["saturation_ticks"] > 0.01 * sidecar["n_ticks"]:
        ok = False
        detail.append(f"{arm['saturation_ticks']} saturated ticks")

    report("rehab admittance/impedance regimes", ok, time.time() - t0, 120.0,
           ";".join(detail) or
           f"free {free['force_max']:.1f}N/{free['displacement']*1000:.0f}mm, "
           f"perturb {perturb['force_max']:.1f}N, KE {ke.max():.2f}J")


# -- criterion 6: delay robustness (ultrasound) ------------------------------


def _ultrasound_energy(delay_ms: float):
    raw = fresh_raw("ultrasound")
    raw["channel"] = {"delay_ms": float(delay_ms)}
    raw["name"] = f"us_rtt{int(delay_ms)}"
    cfg = parse_config(raw)
    res = run_scenario(cfg, seed=0, out_dir=f"/tmp/ficsim_accept/rtt{int(delay_ms)}")
    data, sidecar = load_trace(res.trace_path)
    cols = {c: i for i, c in enumerate(sidecar["columns"])}
    model = cfg.arms[0]
    qs = data[::10, [cols[f"a0_q{j}"] for j in range(7)]]
    dqs = data[::10, [cols[f"a0_dq{j}"] for j in range(7)]]
    energy = np.array([
        0.5 * d @ mass_matrix(model, q) @ d + potential_energy(model, q)
        for q, d in zip(qs, dqs)])
    err = np.linalg.norm(data[:, [cols[f"a0_xd{j}"] for j in (4, 5, 6)]]
                         - data[:, [cols[f"a0_x{j}"] for j in (4, 5, 6)]], axis=1)
    peak = float(np.max(np.abs(energy - energy[0])))
    return peak, float(err.max())


def test_delay_robustness():
    t0 = time.time()
    ctx = multiprocessing.get_context("fork")
    with ProcessPoolExecutor(max_workers=2, mp_context=ctx) as pool:
        results = list(pool.map(_ultrasound_energy, [0.0, 100.0, 250.0, 500.0]))
    base_peak, base_err = results[0]
    ok = True
    detail = [f"peaks {[round(p, 3) for p, _ in results]} J"]
    for (peak, err), rtt in zip(results, (0, 100, 250, 500)):
        if err > 0.2:
            ok = False
            detail.append(f"tracking unbounded at {rtt} ms ({err:.3f} m)")
        if peak > 2.0 * base_peak:
            ok = False
            detail.append(f"energy {peak:.3f} J at {rtt} ms vs base {base_peak:.3f}")
    report("delay robustness 0/100/250/500 ms", ok, time.time() - t0, 180.0,
           ";".join(detail))


# -- criterion 7: bimanual invariants ----------------------------------------


def _relative_errors(data, cols):
    from ficsim.geometry import compose
    worst_lin = worst_ang = 0.0
    def rel(k):
        xl = Pose.from_array(data[k, [cols[f"a0_x{j}"] for j in range(7)]])
        xr = Pose.from_array(data[k, [cols[f"a1_x{j}"] for j in range(7)]])
        return compose(xl.inverse(), xr)
    rel0 = rel(0)
    for k in range(0, data.shape[0], 10):
        e = pose_error(rel0, rel(k))
        worst_lin = max(worst_lin, float(np.linalg.norm(e[3:])))
        worst_ang = max(worst_ang, float(np.linalg.norm(e[:3])))
    return worst_lin, worst_ang


def test_bimanual_invariants():
    t0 = time.time()
    ok = True
    detail = []

    cfg = parse_config(fresh_raw("bimanual"), name="bimanual")
    res = run_scenario(cfg, seed=0, out_dir="/tmp/ficsim_accept")
    data, sidecar = load_trace(res.trace_path)
    cols = {c: i for i, c in enumerate(sidecar["columns"])}

    grasp_res = float(data[:, cols["sol_grasp"]].max())
    if grasp_res >= 1e-6:
        ok = False
        detail.append(f"grasp residual {grasp_res:.2e}")

    worst_lin, worst_ang = _relative_errors(data, cols)
    if worst_lin >= 0.05 or worst_ang >= math.radians(5.0):
        ok = False
        detail.append(f"relative error {worst_lin*1000:.1f} mm / "
                      f"{math.degrees(worst_ang):.2f} deg")

    for i in range(2):
        force = np.linalg.norm(data[:, [cols[f"a{i}_he{j}"] for j in (3, 4, 5)]], axis=1)
        if force.max() > 2.0:
            ok = False
            detail.append(f"arm {i} contact force {force.max():.2f} N")
    if data[:, cols["env_broken"]].max() > 0.0:
        ok = False
        detail.append("nominal run broke the chip")

    sab_raw = fresh_raw("bimanual")
    sab_raw["duration"] = 6.0
    sab_raw["bimanual"]["squeeze"] = 4.0
    sab_raw["name"] = "bimanual_sabotage"
    sab = parse_config(sab_raw)
    res2 = run_scenario(sab, seed=0, out_dir="/tmp/ficsim_accept")
    data2, sidecar2 = load_trace(res2.trace_path)
    cols2 = {c: i for i, c in enumerate(sidecar2["columns"])}
    broken = data2[:, cols2["env_broken"]]
    if broken.max() < 1.0:
        ok = False
        detail.append("sabotage run never broke the chip")
    else:
        first = int(np.argmax(broken > 0.5))
        if np.any(broken[first:] < 0.5):
            ok = False
            detail.append("break flag did not latch")

    report("bimanual invariants", ok, time.time() - t0, 120.0,
           ";".join(detail) or
           f"residual {grasp_res:.1e}, rel {worst_lin*1000:.1f}mm/"
           f"{math.degrees(worst_ang):.2f}deg")


# -- criterion 8: determinism -------------------------------------------------


def _scalpel_bytes(out_dir):
    cfg = parse_config(fresh_raw("scalpel"), name="scalpel")
    res = run_scenario(cfg, seed=42, out_dir=out_dir)
    return res.trace_path.read_bytes()


def test_determinism_byte_identical():
    t0 = time.time()
    ctx = multiprocessing.get_context("fork")
    with ProcessPoolExecutor(max_workers=2, mp_context=ctx) as pool:
        a, b = list(pool.map(_scalpel_bytes,
                             ["/tmp/ficsim_accept/det_a", "/tmp/ficsim_accept/det_b"]))
    ok = a == b and len(a) > 0
    report("determinism (scalpel, seed 42, twice)", ok, time.time() - t0, 60.0,
           f"{len(a)} bytes")
