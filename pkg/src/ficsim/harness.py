"""Scenario orchestration: the fixed-step world loop, telemetry traces
and trace metrics.

One tick runs master input -> channel -> admittance/fusion -> motion
adaptation -> torque law -> plant substeps -> feedback channel.  Runs
are single-threaded and fully seeded, so a (config, seed) pair produces
byte-identical trace files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .adaptation import (
    STATUS_INFEASIBLE,
    AdaptationLimits,
    AdaptationWeights,
    DesiredState,
    GraspSpec,
    apply_solution,
    build_problem,
    grasp_matrix,
    solve_sqp_step,
)
from .arm import (
    ArmState,
    forward_kinematics,
    jacobian_relative,
    jacobian_world,
    kinetic_energy,
    potential_energy,
    relative_pose,
    step_dynamics,
)
from .channel import DelayChannel
from .controllers import JointSpacePd
from .environments import BrittleObject, environment_wrench
from .geometry import Pose, Twist, Wrench, compose, pose_error
from .master import MasterStation
from .replica import (
    AdmittanceState,
    BimanualTerm,
    ReplicaCommand,
    admittance_step,
    fuse_command,
    replica_torque,
    torque_saturated,
)
from .scenario import SCHEMA_VERSION, ScenarioConfig

SOLVER_CODES = {"Optimal": 0, "ClampedFeasible": 1, "Infeasible": 2}


class NumericalAbort(RuntimeError):
    def __init__(self, tick: int, message: str):
        super().__init__(f"non-finite state at tick {tick}: {message}")
        self.tick = tick


@dataclass
class TraceResult:
    trace_path: Path
    sidecar_path: Path
    ticks: int
    energy_balance_error: float


def trace_columns(cfg: ScenarioConfig) -> list:
    cols = ["t"]
    for i, model in enumerate(cfg.arms):
        n = model.n
        cols += [f"a{i}_q{j}" for j in range(n)]
        cols += [f"a{i}_dq{j}" for j in range(n)]
        cols += [f"a{i}_tau{j}" for j in range(n)]
        cols += [f"a{i}_sat"]
        cols += [f"a{i}_x{j}" for j in range(7)]
        cols += [f"a{i}_he{j}" for j in range(6)]
        cols += [f"a{i}_xd{j}" for j in range(7)]
        cols += [f"a{i}_k{j}" for j in range(6)]
    cols += [f"m_xM{j}" for j in range(7)]
    cols += [f"m_xd{j}" for j in range(7)]
    cols += ["m_KH"]
    cols += [f"m_hH{j}" for j in range(6)]
    cols += ["ch_m2r_depth", "ch_r2m_depth", "ch_dropped"]
    cols += ["sol_status", "sol_kkt", "sol_active", "sol_grasp"]
    cols += ["env_broken"]
    return cols


class Simulation:
    """Deterministic single-threaded world; one instance per run."""

    def __init__(self, cfg: ScenarioConfig, seed: int | None = None):
        kernels.warmup()
        self.cfg = cfg
        self.seed = cfg.seed if seed is None else int(seed)
        self.dt = cfg.dt
        self.n_arms = len(cfg.arms)
        self.models = cfg.arms
        self.states = [ArmState(q0, np.zeros(m.n))
                       for m, q0 in zip(cfg.arms, cfg.initial_q)]

        ctrl = cfg.controller
        self.nlpd = [ctrl.make_nlpd() for _ in range(self.n_arms)]
        self.pd_joint = [JointSpacePd(ctrl.pd_joint(), m.n) for m in cfg.arms]
        self.pd_rel = ctrl.pd_relative()
        self.master = MasterStation(ctrl.make_nlpd(), cfg.workspace_radius)

        self.admittance = AdmittanceState(
            m_inv=1.0 / cfg.admittance_inertia,
            dv_max=cfg.admittance_dv_max,
            enabled=cfg.admittance_enabled)

        self.adapt_state = DesiredState([q0.copy() for q0 in cfg.initial_q],
                                        np.zeros(6 * self.n_arms))
        self.weights = AdaptationWeights(**cfg.adaptation_weights)
        self.limits = AdaptationLimits(manipulability_floor=cfg.manipulability_floor)

        ss = np.random.SeedSequence(self.seed)
        child = ss.spawn(2)
        self.chan_m2r = DelayChannel(cfg.channel_delay / 2.0, cfg.channel_jitter / 2.0,
                                     cfg.channel_drop, seed=child[0])
        self.chan_r2m = DelayChannel(cfg.channel_delay / 2.0, cfg.channel_jitter / 2.0,
                                     cfg.channel_drop, seed=child[1])

        self.env = cfg.environment
        self.env_arm = cfg.environment_arm
        self.bimanual = cfg.bimanual

        tools = [forward_kinematics(m, s.q) for m, s in zip(self.models, self.states)]
        if self.bimanual:
            chip: BrittleObject = self.env
            chip.update_pose(tools)
            self.grasp_offsets = [compose(chip.pose.inverse(), tp) for tp in tools]
            self.x_home = chip.pose.copy()
            self.grasp_mat = grasp_matrix(chip.pose, tools)
            self.gravity_wrench = np.array([0, 0, 0, 0, 0, -chip.mass * 9.81])
            self.x_rel_desired = relative_pose(self.models[0], self.models[1],
                                               self.states[0].q, self.states[1].q)
            axis = tools[1].translation - tools[0].translation
            axis = axis / np.linalg.norm(axis)
            h_eq, *_ = np.linalg.lstsq(self.grasp_mat, -self.gravity_wrench, rcond=None)
            squeeze = np.concatenate([np.r_[0, 0, 0, cfg.squeeze * axis],
                                      np.r_[0, 0, 0, -cfg.squeeze * axis]])
            self.h_target = h_eq + squeeze
        else:
            self.grasp_offsets = None
            self.x_home = tools[0].copy()
            self.grasp_mat = None
            self.gravity_wrench = None
            self.x_rel_desired = None
            self.h_target = None

        # master command continuity: position mode anchors at the home pose
        self.master.state.x_d_prev = self.x_home.copy()
        self.master.mode.x_d0 = self.x_home.copy()
        self.x_d_replica = self.x_home.copy()
        self.h_e_feedback = np.zeros(6)

        # energy bookkeeping (diagnostic integrator check)
        self.work_actuation = 0.0
        self.work_environment = 0.0
        self.energy_start = self._mechanical_energy()
        self.energy_peak = 0.0
        self.balance_error = 0.0

        self.tick_index = 0
        self.columns = trace_columns(cfg)

    # -- helpers ----------------------------------------------------------

    def _mechanical_energy(self) -> float:
        return sum(kinetic_energy(m, s) + potential_energy(m, s.q)
                   for m, s in zip(self.models, self.states))

    def kinetic(self) -> float:
        return sum(kinetic_energy(m, s) for m, s in zip(self.models, self.states))

    def _tool_states(self):
        poses, twists = [], []
        for m, s in zip(self.models, self.states):
            poses.append(forward_kinematics(m, s.q))
            v = jacobian_world(m, s.q) @ s.dq
            twists.append(Twist(v[:3], v[3:]))
        return poses, twists

    def _env_wrench_on(self, arm: int, pose: Pose, twist: Twist, t: float) -> Wrench:
        if self.env is None:
            return Wrench.zero()
        if self.bimanual:
            return self.env.wrench(arm, pose, twist)
        if arm != self.env_arm:
            return Wrench.zero()
        return environment_wrench(self.env, pose, twist, t)

    def _env_spec(self, arm: int, t: float):
        if self.env is None or (not self.bimanual and arm != self.env_arm):
            return kernels.ENV_NONE, np.zeros(9), np.zeros(6)
        if self.bimanual:
            return self.env.face_spec(arm)
        return self.env.kernel_spec(t)

    # -- one control tick ---------------------------------------------------

    def step(self, minput) -> dict:
        t = self.tick_index * self.dt
        dt = self.dt
        for state in self.states:
            if not (np.all(np.isfinite(state.q)) and np.all(np.isfinite(state.dq))):
                raise NumericalAbort(self.tick_index, "joint state")
        mode, x_m, v_m, k_raw = minput
        mode = self.cfg.mode_at(t, mode)

        # master side: consume freshest delivered feedback, emit command
        for arr in self.chan_r2m.poll(t):
            self.h_e_feedback = arr
        self.master.set_mode(mode)
        x_d_master = self.master.update(x_m, v_m, k_raw, dt)
        h_h = self.master.haptics(Wrench.from_array(self.h_e_feedback))
        self.chan_m2r.send(x_d_master.as_array(), t)
        for arr in self.chan_m2r.poll(t):
            self.x_d_replica = Pose.from_array(arr)

        # replica side: measure, comply, adapt, actuate
        tools, twists = self._tool_states()
        h_e = [self._env_wrench_on(i, tools[i], twists[i], t)
               for i in range(self.n_arms)]

        if self.bimanual:
            stacked = np.concatenate([w.as_array() for w in h_e])
            h_est = Wrench.from_array(self.grasp_mat @ stacked)
        else:
            cmd_wrench = Wrench.from_array(self.adapt_state.h_d[:6])
            h_est = Wrench(h_e[0].torque - cmd_wrench.torque,
                           h_e[0].force - cmd_wrench.force)
        admittance_step(self.admittance, h_est, Wrench.zero(), dt)

        if self.bimanual:
            x_obj_d = fuse_command(self.x_d_replica, self.admittance.x_f)
            x_delta = [compose(x_obj_d, off) for off in self.grasp_offsets]
        else:
            x_delta = [fuse_command(self.x_d_replica, self.admittance.x_f)]

        grasp = None
        if self.bimanual:
            self.grasp_mat = grasp_matrix(self.env.pose, tools)
            grasp = GraspSpec(self.grasp_mat, self.gravity_wrench)
        problem = build_problem(self.models, self.adapt_state, x_delta, dt,
                                weights=self.weights, limits=self.limits,
                                grasp=grasp, h_target=self.h_target)
        sol = solve_sqp_step(problem)
        if sol.status != STATUS_INFEASIBLE:
            apply_solution(self.adapt_state, sol, self.models)
        grasp_residual = 0.0
        if self.bimanual:
            grasp_residual = float(np.max(np.abs(
                self.grasp_mat @ self.adapt_state.h_d + self.gravity_wrench)))

        taus, sats = [], []
        rel_jac = None
        if self.bimanual:
            rel_jac = jacobian_relative(self.models[0], self.models[1],
                                        self.states[0].q, self.states[1].q)
            x_rel = relative_pose(self.models[0], self.models[1],
                                  self.states[0].q, self.states[1].q)
            v_rel_vec = rel_jac @ np.concatenate([s.dq for s in self.states])
            v_rel = Twist(v_rel_vec[:3], v_rel_vec[3:])
        col = 0
        for i, (model, state) in enumerate(zip(self.models, self.states)):
            cmd = ReplicaCommand(
                x_delta=x_delta[i],
                h_d=Wrench.from_array(self.adapt_state.h_d[6 * i:6 * (i + 1)]),
                q_d=self.adapt_state.q[i])
            bim = None
            if self.bimanual:
                bim = BimanualTerm(rel_jac[:, col:col + model.n], self.x_rel_desired,
                                   x_rel, v_rel, self.pd_rel)
            tau = replica_torque(model, state, cmd, self.nlpd[i], self.pd_joint[i],
                                 bimanual=bim)
            col += model.n
            taus.append(tau)
            sats.append(torque_saturated(model, tau))

        row = self._record(t, x_m, x_d_master, k_raw, h_h, x_delta, h_e, taus, sats,
                           tools, sol, grasp_residual)

        # plant advance: torque held for the tick, contacts re-evaluated at
        # every integrator stage inside the fused kernel
        sub_dt = dt / self.cfg.plant_substeps
        for i, (model, state) in enumerate(zip(self.models, self.states)):
            kind, par, h_const = self._env_spec(i, t)
            q_new, dq_new, w_env, peak = kernels._plant_tick(
                model._axis, model._off_r, model._off_p, model._mass,
                model._com, model._inertia, model._tool_r, model._tool_p,
                model._base_r, model.base_pose.translation,
                model._gravity_base, model.q_min, model.q_max,
                state.q, state.dq, taus[i], h_const, kind, par,
                self.cfg.plant_substeps, sub_dt)
            self.work_actuation += float(taus[i] @ (q_new - state.q))
            self.work_environment += w_env
            self.states[i] = ArmState(q_new, dq_new)
            if self.bimanual:
                self.env.latch_if(peak)
        if self.bimanual:
            poses, _ = self._tool_states()
            self.env.update_pose(poses)

        # diagnostic energy balance
        e_now = self._mechanical_energy()
        self.energy_peak = max(self.energy_peak, abs(e_now - self.energy_start))
        drift = abs((e_now - self.energy_start)
                    - (self.work_actuation + self.work_environment))
        scale = max(1.0, abs(self.work_actuation) + abs(self.work_environment),
                    self.energy_peak)
        self.balance_error = max(self.balance_error, drift / scale)

        # feedback to the master: the measured interaction of this tick
        if self.bimanual:
            feedback = self.grasp_mat @ np.concatenate([w.as_array() for w in h_e])
        else:
            feedback = h_e[self.env_arm if self.env is not None else 0].as_array()
        self.chan_r2m.send(feedback, t)

        self.tick_index += 1
        return row

    def _record(self, t, x_m, x_d_master, k_raw, h_h, x_delta, h_e, taus, sats,
                tools, sol, grasp_residual) -> dict:
        vals = [t]
        for i, model in enumerate(self.models):
            state = self.states[i]
            vals += list(state.q)
            vals += list(state.dq)
            vals += list(taus[i])
            vals += [1.0 if sats[i] else 0.0]
            vals += list(tools[i].as_array())
            vals += list(h_e[i].as_array())
            vals += list(x_delta[i].as_array())
            vals += list(self.nlpd[i].stiffness())
        vals += list(x_m.as_array())
        vals += list(x_d_master.as_array())
        vals += [self.master.state.k_h]
        vals += list(h_h.as_array())
        vals += [float(self.chan_m2r.depth), float(self.chan_r2m.depth),
                 float(self.chan_m2r.dropped + self.chan_r2m.dropped)]
        vals += [float(SOLVER_CODES[sol.status]), sol.kkt_residual,
                 float(sol.active_count), grasp_residual]
        broken = 1.0 if (self.bimanual and self.env.broken) else 0.0
        vals += [broken]
        arr = np.asarray(vals, dtype=float)
        if not np.all(np.isfinite(arr)):
            bad = self.columns[int(np.argmin(np.isfinite(arr)))]
            raise NumericalAbort(self.tick_index, bad)
        return dict(zip(self.columns, arr))


def run_scenario(cfg: ScenarioConfig, seed: int | None = None,
                 out_dir=None) -> TraceResult:
    """Headless fixed-step run; returns the trace location."""
    if cfg.master_input is None:
        raise ValueError("headless runs need a scripted master input "
                         "(use serve mode for live sessions)")
    sim = Simulation(cfg, seed)
    out_dir = Path(out_dir) if out_dir else Path.cwd()
    out_dir.mkdir(parents=True, exist_ok=True)
    trace_path = out_dir / f"{cfg.name}_seed{sim.seed}.csv"
    sidecar_path = out_dir / f"{cfg.name}_seed{sim.seed}.json"

    n_ticks = int(round(cfg.duration / cfg.dt))
    with open(trace_path, "w") as fh:
        fh.write(",".join(sim.columns) + "\n")
        for k in range(n_ticks):
            minput = cfg.master_input.sample(k * cfg.dt)
            row = sim.step(minput)
            fh.write(",".join(repr(float(row[c])) for c in sim.columns) + "\n")

    sidecar = {
        "schema_version": SCHEMA_VERSION,
        "scenario": cfg.name,
        "seed": sim.seed,
        "dt": cfg.dt,
        "duration": cfg.duration,
        "n_ticks": n_ticks,
        "columns": sim.columns,
        "arms": [m.n for m in cfg.arms],
        "phases": cfg.phases,
        "settle_tol": cfg.settle_tol,
        "energy_balance_error": sim.balance_error,
        "config": _jsonable(cfg.raw),
    }
    with open(sidecar_path, "w") as fh:
        json.dump(sidecar, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return TraceResult(trace_path, sidecar_path, n_ticks, sim.balance_error)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return float(obj)
    return obj


def load_trace(trace_path):
    """Trace rows plus sidecar; rejects truncated traces."""
    trace_path = Path(trace_path)
    sidecar_path = trace_path.with_suffix(".json")
    if not sidecar_path.exists():
        raise ValueError(f"missing trace sidecar {sidecar_path}")
    with open(sidecar_path) as fh:
        sidecar = json.load(fh)
    data = np.loadtxt(trace_path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[0] != sidecar["n_ticks"]:
        raise ValueError(f"truncated trace: {data.shape[0]} rows, "
                         f"expected {sidecar['n_ticks']}")
    if data.shape[1] != len(sidecar["columns"]):
        raise ValueError("trace/sidecar column mismatch")
    return data, sidecar


def metrics(trace_path, settle_tol: float | None = None) -> dict:
    """Deterministic summary of one trace: force percentiles, tracking
    error, settling time, actuator cycle energy, saturation ticks."""
    data, sidecar = load_trace(trace_path)
    cols = {name: i for i, name in enumerate(sidecar["columns"])}
    dt = sidecar["dt"]
    tol = sidecar.get("settle_tol", 1e-3) if settle_tol is None else settle_tol
    t = data[:, cols["t"]]

    out = {
        "schema_version": SCHEMA_VERSION,
        "scenario": sidecar["scenario"],
        "seed": sidecar["seed"],
        "duration": sidecar["duration"],
        "arms": [],
        "dropped_messages": float(data[-1, cols["ch_dropped"]]),
        "solver_infeasible_ticks": int(np.sum(data[:, cols["sol_status"]] == 2.0)),
        "max_grasp_residual": float(np.max(data[:, cols["sol_grasp"]])),
        "energy_balance_error": sidecar.get("energy_balance_error", 0.0),
    }

    for i, n in enumerate(sidecar["arms"]):
        force = data[:, [cols[f"a{i}_he{j}"] for j in (3, 4, 5)]]
        force_norm = np.linalg.norm(force, axis=1)
        err = (data[:, [cols[f"a{i}_xd{j}"] for j in (4, 5, 6)]]
               - data[:, [cols[f"a{i}_x{j}"] for j in (4, 5, 6)]])
        err_norm = np.linalg.norm(err, axis=1)
        tau = data[:, [cols[f"a{i}_tau{j}"] for j in range(n)]]
        dq = data[:, [cols[f"a{i}_dq{j}"] for j in range(n)]]
        arm = {
            "force_norm": {
                "p50": float(np.percentile(force_norm, 50)),
                "p95": float(np.percentile(force_norm, 95)),
                "max": float(force_norm.max()),
            },
            "max_tracking_error": float(err_norm.max()),
            "settling_time": _settling_time(t, err_norm, tol),
            "cycle_energy": float(np.sum(tau * dq) * dt),
            "saturation_ticks": int(np.sum(data[:, cols[f"a{i}_sat"]] > 0.5)),
        }
        if sidecar.get("phases"):
            arm["phases"] = {}
            for ph in sidecar["phases"]:
                sel = (t >= ph["t_start"]) & (t < ph["t_end"])
                if np.any(sel):
                    arm["phases"][ph["name"]] = {
                        "force_p95": float(np.percentile(force_norm[sel], 95)),
                        "force_max": float(force_norm[sel].max()),
                        "displacement": float(np.max(np.linalg.norm(
                            data[sel][:, [cols[f"a{i}_x{j}"] for j in (4, 5, 6)]]
                            - data[sel][0, [cols[f"a{i}_x{j}"] for j in (4, 5, 6)]],
                            axis=1))),
                    }
        out["arms"].append(arm)
    return out


def _settling_time(t, err_norm, tol) -> float:
    above = err_norm >= tol
    if not np.any(above):
        return 0.0
    last = int(np.nonzero(above)[0][-1])
    if last + 1 >= len(t):
        return float("inf")
    return float(t[last + 1])
