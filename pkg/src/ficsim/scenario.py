"""Scenario configuration: one YAML file describes arms, controller
parameters, environment, channel and the master input source.

See the shipped presets under ficsim/scenarios for the grammar by
example; load_config validates everything up front so a bad file fails
before tick zero.  Controller parameter names mirror the usual tuning
table (f_lin, d_lin, zeta_lin, ...); angular distances are given in
degrees and converted here.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .arm import ArmModel, JointSpec, PRESETS
from .controllers import CartesianNlpd, CartesianPd, NlpdParams, PdParams
from .environments import BrittleObject, HumanPartner, ProbeSurface, SoftPhantom
from .geometry import Pose, Twist

SCHEMA_VERSION = 1
MAX_DT = 5e-3


class ConfigError(ValueError):
    """Raised for any scenario-file problem found before the run starts."""


@dataclass
class ControllerParams:
    f_lin: float = 40.0
    d_lin: float = 0.08
    zeta_lin: float = 0.8
    f_ang: float = 2.0
    d_ang: float = 8.0          # degrees
    zeta_ang: float = 0.2
    f_rel_lin: float = 50.0
    d_rel_lin: float = 0.05
    zeta_rel_lin: float = 0.4
    f_rel_ang: float = 5.0
    d_rel_ang: float = 5.0      # degrees
    zeta_rel_ang: float = 0.1
    f_joint: float = 0.3
    d_joint: float = 10.0       # degrees
    zeta_joint: float = 0.0
    xi: float = 0.9

    def nlpd_linear(self) -> NlpdParams:
        return NlpdParams(self.f_lin, self.d_lin, self.zeta_lin, self.xi)

    def nlpd_angular(self) -> NlpdParams:
        return NlpdParams(self.f_ang, math.radians(self.d_ang), self.zeta_ang, self.xi)

    def pd_joint(self) -> PdParams:
        return PdParams(self.f_joint, math.radians(self.d_joint), self.zeta_joint)

    def pd_relative(self) -> CartesianPd:
        return CartesianPd(PdParams(self.f_rel_ang, math.radians(self.d_rel_ang),
                                    self.zeta_rel_ang),
                           PdParams(self.f_rel_lin, self.d_rel_lin, self.zeta_rel_lin))

    def make_nlpd(self) -> CartesianNlpd:
        return CartesianNlpd(self.nlpd_angular(), self.nlpd_linear())


@dataclass
class InputRow:
    t: float
    mode: str
    x_m: np.ndarray
    v_m: np.ndarray
    k_h: float


class InputSchedule:
    """Scripted master input: zero-order hold, optional linear interpolation
    of the device translation between rows."""

    def __init__(self, rows, interp: str = "hold"):
        if not rows:
            raise ConfigError("master input script is empty")
        if interp not in ("hold", "linear"):
            raise ConfigError(f"unknown interpolation {interp!r}")
        self.rows = sorted(rows, key=lambda r: r.t)
        self.interp = interp
        self._times = np.array([r.t for r in self.rows])

    def sample(self, t: float):
        idx = int(np.searchsorted(self._times, t + 1e-12, side="right") - 1)
        idx = max(idx, 0)
        row = self.rows[idx]
        x_m = Pose.from_array(np.concatenate([row.x_m[:4], row.x_m[4:]]))
        if self.interp == "linear" and idx + 1 < len(self.rows):
            nxt = self.rows[idx + 1]
            span = nxt.t - row.t
            if span > 0.0 and t > row.t:
                a = min(1.0, (t - row.t) / span)
                trans = (1.0 - a) * row.x_m[4:] + a * nxt.x_m[4:]
                x_m = Pose(row.x_m[:4], trans)
        return row.mode, x_m, Twist.from_array(row.v_m), row.k_h


@dataclass
class ScenarioConfig:
    name: str
    duration: float
    dt: float
    plant_substeps: int
    seed: int
    arms: list                      # ArmModel instances
    initial_q: list                 # per arm
    controller: ControllerParams
    master_input: InputSchedule | None   # None => live session
    workspace_radius: float
    admittance_enabled: bool
    admittance_inertia: np.ndarray  # 6, [angular; linear] diagonal
    admittance_dv_max: np.ndarray   # 6
    adaptation_weights: dict
    manipulability_floor: float
    environment: object | None
    environment_arm: int
    bimanual: bool
    squeeze: float
    channel_delay: float
    channel_jitter: float
    channel_drop: float
    mode_schedule: list
    phases: list
    settle_tol: float
    serve_decimation: int
    serve_realtime: bool
    raw: dict

    def mode_at(self, t: float, scripted_mode: str) -> str:
        mode = scripted_mode
        for entry in self.mode_schedule:
            if t >= entry["t"]:
                mode = entry["mode"]
        return mode


def _as_pose(value, what: str) -> Pose:
    try:
        arr = np.asarray(value, dtype=float).reshape(7)
        return Pose.from_array(arr)
    except Exception as exc:
        raise ConfigError(f"bad pose for {what}: {value!r}") from exc


def _build_arm(entry: dict, index: int) -> tuple[ArmModel, np.ndarray]:
    base = _as_pose(entry.get("base_pose", [1, 0, 0, 0, 0, 0, 0]), f"arm {index} base_pose")
    if "preset" in entry:
        preset = entry["preset"]
        if preset not in PRESETS:
            raise ConfigError(f"unknown arm preset {preset!r} (have {sorted(PRESETS)})")
        model = PRESETS[preset](base_pose=base, name=f"{preset}_{index}")
    elif "joints" in entry:
        joints = []
        for j in entry["joints"]:
            joints.append(JointSpec(
                axis=tuple(j["axis"]),
                offset=_as_pose(j.get("offset", [1, 0, 0, 0, 0, 0, 0]), "joint offset"),
                mass=float(j["mass"]),
                com=tuple(j.get("com", (0, 0, 0))),
                inertia=np.diag(j["inertia_diag"]) if "inertia_diag" in j
                else np.asarray(j["inertia"], dtype=float),
                q_min=float(j.get("q_min", -2.9)), q_max=float(j.get("q_max", 2.9)),
                dq_max=float(j.get("dq_max", 2.5)), tau_max=float(j.get("tau_max", 50.0)),
            ))
        tool = _as_pose(entry.get("tool_offset", [1, 0, 0, 0, 0, 0, 0]), "tool offset")
        model = ArmModel(joints, tool_offset=tool,
                         gravity=tuple(entry.get("gravity", (0.0, 0.0, -9.81))),
                         base_pose=base, name=entry.get("name", f"arm{index}"))
    else:
        raise ConfigError(f"arm {index} needs either 'preset' or 'joints'")
    q0 = np.asarray(entry.get("initial_q", np.zeros(model.n)), dtype=float)
    if q0.shape[0] != model.n:
        raise ConfigError(f"arm {index} initial_q has {q0.shape[0]} entries, model has {model.n}")
    if np.any(q0 < model.q_min) or np.any(q0 > model.q_max):
        raise ConfigError(f"arm {index} initial_q violates joint limits")
    return model, q0


def _parse_input_rows(rows_raw) -> list:
    rows = []
    for r in rows_raw:
        rows.append(InputRow(
            t=float(r["t"]),
            mode=str(r.get("mode", "position")),
            x_m=np.asarray(r.get("x_M", [1, 0, 0, 0, 0, 0, 0]), dtype=float).reshape(7),
            v_m=np.asarray(r.get("v_M", [0, 0, 0, 0, 0, 0]), dtype=float).reshape(6),
            k_h=float(r.get("K_H", 0.0)),
        ))
        if rows[-1].mode not in ("position", "velocity"):
            raise ConfigError(f"unknown master mode {rows[-1].mode!r}")
    return rows


def load_master_csv(path: Path) -> list:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        expected = 2 + 7 + 6 + 1
        if len(header) != expected:
            raise ConfigError(f"master CSV needs {expected} columns, got {len(header)}")
        for line in reader:
            rows.append(InputRow(
                t=float(line[0]), mode=line[1].strip(),
                x_m=np.asarray(line[2:9], dtype=float),
                v_m=np.asarray(line[9:15], dtype=float),
                k_h=float(line[15]),
            ))
    return rows


def write_master_csv(path: Path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "mode",
                         "xM_qw", "xM_qx", "xM_qy", "xM_qz", "xM_tx", "xM_ty", "xM_tz",
                         "vM_wx", "vM_wy", "vM_wz", "vM_vx", "vM_vy", "vM_vz", "K_H"])
        for r in rows:
            writer.writerow([repr(float(r.t)), r.mode,
                             *[repr(float(v)) for v in r.x_m],
                             *[repr(float(v)) for v in r.v_m],
                             repr(float(r.k_h))])


def _build_environment(raw: dict | None, base_dir: Path):
    if not raw or raw.get("type", "none") == "none":
        return None
    kind = raw["type"]
    if kind == "soft_phantom":
        return SoftPhantom(
            stiffness=float(raw.get("stiffness", 2000.0)),
            exponent=float(raw.get("exponent", 1.5)),
            surface_pose=_as_pose(raw.get("surface_pose", [1, 0, 0, 0, 0, 0, 0]),
                                  "phantom surface"),
            damping=float(raw.get("damping", 30.0)))
    if kind == "human_partner":
        profile = raw.get("profile")
        if not profile:
            raise ConfigError("human_partner environment needs a force profile")
        times = [float(p["t"]) for p in profile]
        wrenches = [np.asarray(p["wrench"], dtype=float).reshape(6) for p in profile]
        return HumanPartner(times, np.vstack(wrenches))
    if kind == "probe_surface":
        return ProbeSurface(
            base_height=float(raw.get("base_height", 0.0)),
            amplitude=float(raw.get("amplitude", 0.0)),
            wavelength=float(raw.get("wavelength", 0.2)),
            stiffness=float(raw.get("stiffness", 2000.0)),
            exponent=float(raw.get("exponent", 1.5)),
            damping=float(raw.get("damping", 30.0)))
    if kind == "brittle_object":
        return BrittleObject(
            mass=float(raw.get("mass", 0.01)),
            break_force=float(raw.get("break_force", 2.0)),
            half_width=float(raw.get("half_width", 0.01)),
            contact_stiffness=float(raw.get("contact_stiffness", 1e4)),
            damping=float(raw.get("damping", 5.0)))
    raise ConfigError(f"unknown environment type {kind!r}")


def parse_config(raw: dict, base_dir: Path | None = None, name: str = "scenario") -> ScenarioConfig:
    base_dir = base_dir or Path.cwd()
    try:
        duration = float(raw["duration"])
        dt = float(raw.get("dt", 1e-3))
    except KeyError as exc:
        raise ConfigError(f"missing required field {exc}") from exc
    if not 0.0 < dt <= MAX_DT:
        raise ConfigError(f"dt must lie in (0, {MAX_DT}]")
    if duration <= 0.0:
        raise ConfigError("duration must be positive")

    arms_raw = raw.get("arms")
    if not arms_raw or len(arms_raw) > 2:
        raise ConfigError("scenario needs 1 or 2 arms")
    arms, initial_q = [], []
    for i, entry in enumerate(arms_raw):
        model, q0 = _build_arm(entry, i)
        arms.append(model)
        initial_q.append(q0)

    ctrl_raw = raw.get("controller", {})
    bad = set(ctrl_raw) - set(ControllerParams.__dataclass_fields__)
    if bad:
        raise ConfigError(f"unknown controller parameters: {sorted(bad)}")
    controller = ControllerParams(**{k: float(v) for k, v in ctrl_raw.items()})

    master_raw = raw.get("master", {})
    input_raw = master_raw.get("input", {"type": "live"})
    kind = input_raw.get("type", "live")
    if kind == "live":
        schedule = None
    elif kind == "inline":
        schedule = InputSchedule(_parse_input_rows(input_raw.get("rows", [])),
                                 interp=input_raw.get("interp", "hold"))
    elif kind == "csv":
        path = Path(input_raw["path"])
        if not path.is_absolute():
            path = base_dir / path
        if not path.exists():
            raise ConfigError(f"master input CSV not found: {path}")
        schedule = InputSchedule(load_master_csv(path),
                                 interp=input_raw.get("interp", "hold"))
    else:
        raise ConfigError(f"unknown master input type {kind!r}")

    adm_raw = raw.get("admittance", {})
    inertia = adm_raw.get("inertia", {})
    ang_i = float(inertia.get("angular", 0.5))
    lin_i = float(inertia.get("linear", 10.0))
    if ang_i <= 0.0 or lin_i <= 0.0:
        raise ConfigError("admittance inertia entries must be positive")
    dv = adm_raw.get("dv_max", {})
    dv_vec = np.concatenate([np.full(3, float(dv.get("angular", 0.02))),
                             np.full(3, float(dv.get("linear", 0.002)))])

    chan_raw = raw.get("channel", {})
    drop = float(chan_raw.get("drop_rate", 0.0))
    if not 0.0 <= drop < 1.0:
        raise ConfigError("channel drop_rate must lie in [0, 1)")

    bim_raw = raw.get("bimanual", {})
    bimanual = bool(bim_raw.get("enabled", False))
    if bimanual and len(arms) != 2:
        raise ConfigError("bimanual mode needs two arms")

    env = _build_environment(raw.get("environment"), base_dir)
    if bimanual and not isinstance(env, BrittleObject):
        raise ConfigError("bimanual scenarios use the brittle_object environment")

    phases = [{"name": str(p["name"]), "t_start": float(p["t_start"]),
               "t_end": float(p["t_end"])} for p in raw.get("phases", [])]
    mode_schedule = [{"t": float(m["t"]), "mode": str(m["mode"])}
                     for m in raw.get("mode_schedule", [])]
    for m in mode_schedule:
        if m["mode"] not in ("position", "velocity"):
            raise ConfigError(f"unknown mode {m['mode']!r} in mode_schedule")

    adapt_raw = raw.get("adaptation", {})
    weights = dict(adapt_raw.get("weights", {}))
    floor = float(adapt_raw.get("manipulability_floor", 0.01))
    if floor <= 0.0:
        raise ConfigError("manipulability_floor must be positive")

    serve_raw = raw.get("serve", {})

    return ScenarioConfig(
        name=str(raw.get("name", name)),
        duration=duration, dt=dt,
        plant_substeps=int(raw.get("plant_substeps", 4)),
        seed=int(raw.get("seed", 0)),
        arms=arms, initial_q=initial_q,
        controller=controller,
        master_input=schedule,
        workspace_radius=float(master_raw.get("workspace_radius", 0.10)),
        admittance_enabled=bool(adm_raw.get("enabled", False)),
        admittance_inertia=np.concatenate([np.full(3, ang_i), np.full(3, lin_i)]),
        admittance_dv_max=dv_vec,
        adaptation_weights=weights,
        manipulability_floor=floor,
        environment=env,
        environment_arm=int(raw.get("environment", {}).get("arm", 0) if raw.get("environment") else 0),
        bimanual=bimanual,
        squeeze=float(bim_raw.get("squeeze", 0.8)),
        channel_delay=float(chan_raw.get("delay_ms", 0.0)) / 1e3,
        channel_jitter=float(chan_raw.get("jitter_ms", 0.0)) / 1e3,
        channel_drop=drop,
        mode_schedule=mode_schedule,
        phases=phases,
        settle_tol=float(raw.get("metrics", {}).get("settle_tol", 1e-3)),
        serve_decimation=int(serve_raw.get("decimation", 10)),
        serve_realtime=bool(serve_raw.get("realtime", True)),
        raw=raw,
    )


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(path) as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"config is not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    return parse_config(raw, base_dir=path.parent, name=path.stem)


def builtin_scenario_dir():
    return resources.files("ficsim") / "scenarios"


def list_scenarios() -> list[str]:
    return sorted(p.name for p in builtin_scenario_dir().iterdir()
                  if p.name.endswith(".cfg"))


def load_builtin(name: str) -> ScenarioConfig:
    if not name.endswith(".cfg"):
        name = name + ".cfg"
    entry = builtin_scenario_dir() / name
    if not entry.is_file():
        raise ConfigError(f"no builtin scenario {name!r}; have {list_scenarios()}")
    raw = yaml.safe_load(entry.read_text())
    return parse_config(raw, name=name[:-4])


def resolve_config(spec: str) -> ScenarioConfig:
    """Accept either a filesystem path or the name of a shipped preset."""
    path = Path(spec)
    if path.exists():
        return load_config(path)
    try:
        return load_builtin(spec)
    except ConfigError:
        raise ConfigError(f"no config file or builtin scenario named {spec!r}")
