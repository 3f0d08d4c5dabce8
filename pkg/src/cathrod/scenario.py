"""Declarative scenarios: TOML parsing, single-rod and coupled runs, result files, sweeps."""

from __future__ import annotations

import csv
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import rod
from .cantilever import CantileverProblem, OracleRangeError, resample_by_arclength, solve
from .coupling import (CouplingConfig, CoupledSystem, make_tendon_on_lumen, simulate_coupled)
from .frame import directors_batch
from .metrics import Centerline2D, CurveFormatError, compare, read_centerline
from .rod import BoundaryConditions, ConfigurationError, RodParameters
from .stepper import IntegratorConfig, rod_system, run_system

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

STANDARD_GRAVITY = 9.80665
PLATEAU_FRACTION = 1e-3
ORACLE_SAMPLES = 201
SWEEP_PARAMETERS = {
    "K_p": "penalty_constant",
    "N": "num_points",
    "xi": "damping",
    "K_L": "lumen_constant",
    "K_E": "endpoint_compliance_constant",
    "K_C": "endpoint_coupling_constant",
    "N_T": "tendon_points",
    "N_C": "catheter_points",
}
_ALIASES = {"ξ": "xi", "Kp": "K_p", "KL": "K_L", "KE": "K_E", "KC": "K_C",
            "NT": "N_T", "NC": "N_C"}
_INTEGER_PARAMETERS = {"N", "N_T", "N_C"}
_ROD_KEYS = {f.name for f in fields(RodParameters)}
_COUPLING_KEYS = {f.name for f in fields(CouplingConfig)}
_INTEGRATOR_KEYS = {f.name for f in fields(IntegratorConfig)}
# coupled runs need central differences, a load ramp and heavier tendon inertia to converge
COUPLED_INTEGRATOR_DEFAULTS = {"timestep": 0.2, "fd_scheme": "central",
                               "adaptive_timestep": True, "max_steps": 3000}
COUPLED_TENDON_DEFAULTS = {"inertia_scale": 1e4}
DEFAULT_RAMP_TIME = 4.0


class ScenarioError(ValueError):
    """Invalid scenario file or option (CLI exit code 2)."""


@dataclass(frozen=True)
class Pose:
    position: tuple = (0.0, 0.0, 0.0)
    axis: tuple = (1.0, 0.0, 0.0)
    normal: tuple = (0.0, 1.0, 0.0)

    def quaternion(self) -> np.ndarray:
        return rod.orientation_quaternion(self.axis, self.normal)

    def frame(self) -> np.ndarray:
        """Rows d1, d2, d3 of the base frame."""
        return directors_batch(self.quaternion()[None, :])[0]


@dataclass(frozen=True)
class LoadSpec:
    """Endpoint load on a single rod: a hanging mass or a plain force."""

    mass_kg: float = 0.0
    force_n: float | None = None
    direction: tuple = (0.0, -1.0, 0.0)
    body_gravity: bool = False
    clamp: str = "frame"

    @property
    def magnitude(self) -> float:
        return self.force_n if self.force_n is not None else self.mass_kg * STANDARD_GRAVITY

    @property
    def unit(self) -> np.ndarray:
        d = np.asarray(self.direction, dtype=float)
        return d / np.linalg.norm(d)


@dataclass(frozen=True)
class ActuationSpec:
    force_n: float = 2.0
    site: str = "distal"
    ramp_time: float = DEFAULT_RAMP_TIME
    rest_on: str = "catheter"


@dataclass(frozen=True)
class ReferenceSpec:
    oracle: bool = False
    curve: str | None = None
    units: str = "m"


@dataclass(frozen=True)
class OutputSpec:
    trace: bool = True
    plot: bool = True


@dataclass(frozen=True)
class SweepSpec:
    parameter: str
    values: tuple


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    topology: str  # "single" | "coupled"
    integrator: IntegratorConfig
    rod: RodParameters | None = None
    catheter: RodParameters | None = None
    tendon: RodParameters | None = None
    coupling: CouplingConfig | None = None
    actuation: ActuationSpec = field(default_factory=ActuationSpec)
    pose: Pose = field(default_factory=Pose)
    load: LoadSpec = field(default_factory=LoadSpec)
    reference: ReferenceSpec = field(default_factory=ReferenceSpec)
    outputs: OutputSpec = field(default_factory=OutputSpec)
    sweep: SweepSpec | None = None
    patience: int = 3
    base_dir: str = "."

    @property
    def body(self) -> RodParameters:
        """The rod that carries the reported tip (the catheter when coupled)."""
        return self.rod if self.topology == "single" else self.catheter


# --- parsing ----------------------------------------------------------------

def _table(tree: dict, key: str, allowed: set | None = None, required: bool = False) -> dict:
    value = tree.get(key)
    if value is None:
        if required:
            raise ScenarioError(f"missing [{key}] section")
        return {}
    if not isinstance(value, dict):
        raise ScenarioError(f"[{key}] must be a table")
    if allowed is not None:
        unknown = sorted(set(value) - allowed)
        if unknown:
            raise ScenarioError(f"[{key}] has unknown keys: {', '.join(unknown)}")
    return dict(value)


def _vector(value, name: str) -> tuple:
    arr = np.asarray(value, dtype=float)
    if arr.shape != (3,) or not np.all(np.isfinite(arr)):
        raise ScenarioError(f"{name} must be three finite numbers")
    return tuple(float(v) for v in arr)


def _rod_params(section: dict, label: str, defaults: dict | None = None) -> RodParameters:
    merged = dict(defaults or {})
    merged.update(section)
    missing = [k for k in ("youngs_bend", "density", "radius", "length", "num_points")
               if k not in merged]
    if missing:
        raise ScenarioError(f"[{label}] missing keys: {', '.join(missing)}")
    try:
        return RodParameters(**merged)
    except ConfigurationError as exc:
        raise ScenarioError(f"[{label}] {exc}") from None
    except TypeError as exc:
        raise ScenarioError(f"[{label}] {exc}") from None


def _normalize_parameter(name: str) -> str:
    name = _ALIASES.get(name, name)
    if name not in SWEEP_PARAMETERS:
        raise ScenarioError(
            f"unknown sweep parameter {name!r}; expected one of {', '.join(SWEEP_PARAMETERS)}")
    return name


def parse_config(tree: dict, base_dir: str = ".") -> ScenarioConfig:
    top = {"name", "rod", "catheter", "tendon", "coupling", "actuation", "pose", "load",
           "integrator", "reference", "outputs", "sweep"}
    unknown = sorted(set(tree) - top)
    if unknown:
        raise ScenarioError(f"unknown top-level keys: {', '.join(unknown)}")
    has_single = "rod" in tree
    has_coupled = "catheter" in tree or "tendon" in tree
    if has_single == has_coupled:
        raise ScenarioError("a scenario needs exactly one of [rod] or [catheter] + [tendon]")
    topology = "single" if has_single else "coupled"
    name = str(tree.get("name", "scenario"))

    integ = _table(tree, "integrator", _INTEGRATOR_KEYS | {"patience"})
    patience = int(integ.pop("patience", 3))
    if patience < 1:
        raise ScenarioError("patience must be >= 1")
    if topology == "coupled":
        integ = {**COUPLED_INTEGRATOR_DEFAULTS, **integ}
    try:
        integrator = IntegratorConfig(**integ)
    except (ValueError, TypeError) as exc:
        raise ScenarioError(f"[integrator] {exc}") from None

    pose_t = _table(tree, "pose", {"position", "axis", "normal"})
    pose = Pose(**{k: _vector(v, f"pose.{k}") for k, v in pose_t.items()})
    try:
        pose.quaternion()
    except ConfigurationError as exc:
        raise ScenarioError(f"[pose] {exc}") from None

    ref_t = _table(tree, "reference", {"oracle", "curve", "units"})
    reference = ReferenceSpec(bool(ref_t.get("oracle", False)), ref_t.get("curve"),
                              str(ref_t.get("units", "m")))
    out_t = _table(tree, "outputs", {"trace", "plot"})
    outputs = OutputSpec(bool(out_t.get("trace", True)), bool(out_t.get("plot", True)))

    kwargs = dict(name=name, topology=topology, integrator=integrator, pose=pose,
                  reference=reference, outputs=outputs, patience=patience,
                  base_dir=str(base_dir))
    if topology == "single":
        for section in ("coupling", "actuation"):
            if section in tree:
                raise ScenarioError(f"[{section}] only applies to coupled scenarios")
        rod_t = _table(tree, "rod", _ROD_KEYS, required=True)
        kwargs["rod"] = _rod_params(rod_t, "rod")
        load_t = _table(tree, "load", {"mass_kg", "force_n", "direction", "body_gravity",
                                       "clamp"})
        if "mass_kg" in load_t and "force_n" in load_t:
            raise ScenarioError("[load] takes mass_kg or force_n, not both")
        load = LoadSpec(
            mass_kg=float(load_t.get("mass_kg", 0.0)),
            force_n=None if "force_n" not in load_t else float(load_t["force_n"]),
            direction=_vector(load_t.get("direction", (0.0, -1.0, 0.0)), "load.direction"),
            body_gravity=bool(load_t.get("body_gravity", False)),
            clamp=str(load_t.get("clamp", "frame")))
        if not (np.isfinite(load.magnitude) and load.magnitude >= 0):
            raise ScenarioError("load magnitude must be finite and non-negative")
        if np.linalg.norm(load.direction) == 0:
            raise ScenarioError("load.direction must be nonzero")
        if load.clamp not in rod.CLAMP_MODES:
            raise ScenarioError(f"load.clamp must be one of {rod.CLAMP_MODES}")
        kwargs["load"] = load
        if reference.oracle:
            axis = np.asarray(pose.axis) / np.linalg.norm(pose.axis)
            if abs(float(axis @ load.unit)) > 1e-9:
                raise ScenarioError("oracle reference needs a load perpendicular to the rod axis")
            if load.magnitude == 0:
                raise ScenarioError("oracle reference needs a positive load")
    else:
        if "load" in tree:
            raise ScenarioError("[load] only applies to single-rod scenarios")
        if reference.oracle:
            raise ScenarioError("the cantilever oracle only applies to single-rod scenarios")
        kwargs["catheter"] = _rod_params(_table(tree, "catheter", _ROD_KEYS, required=True),
                                         "catheter")
        kwargs["tendon"] = _rod_params(_table(tree, "tendon", _ROD_KEYS, required=True),
                                       "tendon", COUPLED_TENDON_DEFAULTS)
        try:
            kwargs["coupling"] = CouplingConfig(**_table(tree, "coupling", _COUPLING_KEYS))
        except ConfigurationError as exc:
            raise ScenarioError(f"[coupling] {exc}") from None
        act_t = _table(tree, "actuation", {"force_n", "site", "ramp_time", "rest_on"})
        actuation = ActuationSpec(float(act_t.get("force_n", 2.0)),
                                  str(act_t.get("site", "distal")),
                                  float(act_t.get("ramp_time", DEFAULT_RAMP_TIME)),
                                  str(act_t.get("rest_on", "catheter")))
        if not actuation.ramp_time >= 0:
            raise ScenarioError("actuation.ramp_time must be non-negative")
        kwargs["actuation"] = actuation

    sweep_t = _table(tree, "sweep", {"parameter", "values"})
    if sweep_t:
        if "parameter" not in sweep_t or "values" not in sweep_t:
            raise ScenarioError("[sweep] needs parameter and values")
        param = _normalize_parameter(str(sweep_t["parameter"]))
        values = sweep_t["values"]
        if not isinstance(values, list) or not values:
            raise ScenarioError("sweep values must be a non-empty list")
        try:
            vals = tuple(float(v) for v in values)
        except (TypeError, ValueError):
            raise ScenarioError("sweep values must be numbers") from None
        if not all(np.isfinite(vals)):
            raise ScenarioError("sweep values must be finite")
        kwargs["sweep"] = SweepSpec(param, vals)

    config = ScenarioConfig(**kwargs)
    if config.sweep is not None:
        # validate every sweep point up front
        for v in config.sweep.values:
            with_parameter(config, config.sweep.parameter, v)
    return config


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            tree = tomllib.load(fh)
    except OSError as exc:
        raise ScenarioError(f"cannot read {path}: {exc.strerror}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"{path}: {exc}") from None
    return parse_config(tree, base_dir=str(path.parent))


def with_parameter(config: ScenarioConfig, parameter: str, value: float) -> ScenarioConfig:
    """Copy of ``config`` with one sweepable parameter replaced."""
    parameter = _normalize_parameter(parameter)
    if parameter in _INTEGER_PARAMETERS:
        if value != int(value):
            raise ScenarioError(f"{parameter} must be an integer, got {value}")
        value = int(value)
    coupled = config.topology == "coupled"

    def rod_with(params: RodParameters, label: str, **change) -> RodParameters:
        try:
            return params.with_(**change)
        except ConfigurationError as exc:
            raise ScenarioError(f"{parameter}={value}: [{label}] {exc}") from None

    try:
        if parameter == "xi":
            return replace(config, integrator=replace(config.integrator, damping=float(value)))
        if parameter == "K_p":
            if coupled:
                return replace(config, catheter=rod_with(config.catheter, "catheter",
                                                         penalty_constant=float(value)))
            return replace(config, rod=rod_with(config.rod, "rod",
                                                penalty_constant=float(value)))
        if parameter in ("N", "N_C"):
            if coupled:
                return replace(config, catheter=rod_with(config.catheter, "catheter",
                                                         num_points=value))
            if parameter == "N_C":
                raise ScenarioError("N_C only applies to coupled scenarios")
            return replace(config, rod=rod_with(config.rod, "rod", num_points=value))
        if not coupled:
            raise ScenarioError(f"{parameter} only applies to coupled scenarios")
        if parameter == "N_T":
            return replace(config, tendon=rod_with(config.tendon, "tendon", num_points=value))
        return replace(config, coupling=replace(
            config.coupling, **{SWEEP_PARAMETERS[parameter]: float(value)}))
    except (ValueError, ConfigurationError) as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(f"{parameter}={value}: {exc}") from None


# --- results ----------------------------------------------------------------

@dataclass
class RunResult:
    name: str
    topology: str
    converged: bool
    steps: int
    newton_iterations: int
    wall_time: float
    tip: np.ndarray
    tip_deflection: float
    centerlines: dict  # label -> (n, 3)
    references: dict = field(default_factory=dict)  # label -> (n, 3)
    errors: dict = field(default_factory=dict)  # label -> ErrorReport dict
    constraints: dict = field(default_factory=dict)
    plateau_step: int = -1
    post_plateau_oscillation: float = float("nan")
    trace: np.ndarray | None = None  # (steps + 1, 3) tip positions
    trace_newton: np.ndarray | None = None
    trace_time: np.ndarray | None = None
    failure: str | None = None
    sweep_parameter: str | None = None
    sweep_value: float | None = None

    @property
    def primary_error(self) -> float:
        for key in ("oracle", "reference"):
            if key in self.errors:
                return self.errors[key]["tip_error_fraction"]
        return float("nan")

    def as_dict(self) -> dict:
        out = {
            "name": self.name,
            "topology": self.topology,
            "converged": self.converged,
            "failure": self.failure,
            "steps": self.steps,
            "newton_iterations": self.newton_iterations,
            "wall_time": self.wall_time,
            "tip": [float(v) for v in self.tip],
            "tip_deflection": self.tip_deflection,
            "plateau_step": self.plateau_step,
            "post_plateau_oscillation": self.post_plateau_oscillation,
            "errors": self.errors,
            "constraints": self.constraints,
            "centerlines": {k: v.tolist() for k, v in self.centerlines.items()},
        }
        out = _finite_or_none(out)
        if self.sweep_parameter is not None:
            out["sweep"] = {"parameter": self.sweep_parameter, "value": self.sweep_value}
        return out


def _finite_or_none(obj):
    """JSON-safe copy: non-finite floats become null."""
    if isinstance(obj, dict):
        return {k: _finite_or_none(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_finite_or_none(v) for v in obj]
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def plateau(trace: np.ndarray, length: float, fraction: float = PLATEAU_FRACTION):
    """First step whose tip is within ``fraction * length`` of the final tip, and the
    largest later departure from the final tip as a fraction of ``length``."""
    dev = np.linalg.norm(trace - trace[-1], axis=1) / length
    inside = np.flatnonzero(dev <= fraction)
    k = int(inside[0])
    return k, float(dev[k:].max())


def oracle_curve(config: ScenarioConfig, samples: int = ORACLE_SAMPLES) -> np.ndarray:
    """Analytical centerline for a single-rod scenario, in simulation coordinates."""
    p = config.rod
    problem = CantileverProblem.circular(config.load.magnitude, p.length, p.youngs_bend,
                                         p.radius)
    curve = solve(problem)
    xy = resample_by_arclength(problem, curve, samples)
    axis = np.asarray(config.pose.axis) / np.linalg.norm(config.pose.axis)
    base = np.asarray(config.pose.position)
    return base + xy[:, :1] * axis + xy[:, 1:] * config.load.unit


def _plane_coordinates(points: np.ndarray, config: ScenarioConfig) -> np.ndarray:
    """Single-rod points in the (axis, load) plane, origin at the base."""
    axis = np.asarray(config.pose.axis) / np.linalg.norm(config.pose.axis)
    rel = points - np.asarray(config.pose.position)
    return np.column_stack([rel @ axis, rel @ config.load.unit])


def _reference_curve(config: ScenarioConfig) -> Centerline2D | None:
    if config.reference.curve is None:
        return None
    path = Path(config.reference.curve)
    if not path.is_absolute():
        path = Path(config.base_dir) / path
    try:
        return read_centerline(path, units=config.reference.units)
    except CurveFormatError as exc:
        raise ScenarioError(str(exc)) from None


def _run_single(config: ScenarioConfig) -> RunResult:
    p = config.rod
    n = p.num_points
    load = config.load
    force = tuple(float(v) for v in load.magnitude * load.unit)
    # body gravity, when on, points along the hanging-load direction
    gravity = tuple(float(v) for v in STANDARD_GRAVITY * load.unit) if load.body_gravity else None
    bc = BoundaryConditions(point_loads=[(n - 1, force)], gravity=gravity, clamp=load.clamp)
    state = rod.make_rod(p, config.pose.position, config.pose.quaternion())
    system = rod_system(state, p, bc)
    t0 = time.perf_counter()
    eq = run_system(system, config.integrator, patience=config.patience)
    wall = time.perf_counter() - t0
    final = rod.RodState.from_vectors(system.x, system.v)
    pts = final.points
    result = RunResult(
        name=config.name, topology="single", converged=eq.converged, steps=eq.steps,
        newton_iterations=int(sum(r.newton_iterations for r in eq.reports)), wall_time=wall,
        tip=pts[-1].copy(), tip_deflection=float((pts[-1] - config.pose.position) @ load.unit),
        centerlines={"rod": pts.copy()}, failure=eq.failure,
        constraints={"max_director_defect": float(rod.director_defect(final).max())})
    _attach_trace(result, eq, p.length)
    if config.reference.oracle:
        ref = oracle_curve(config)
        result.references["oracle"] = ref
        report = compare(_plane_coordinates(pts, config), _plane_coordinates(ref, config),
                         p.length)
        result.errors["oracle"] = report.as_dict()
    return result


def _run_coupled(config: ScenarioConfig) -> RunResult:
    cp, tp = config.catheter, config.tendon
    catheter = rod.make_rod(cp, config.pose.position, config.pose.quaternion())
    try:
        tendon = make_tendon_on_lumen(catheter, tp, config.coupling)
        system = CoupledSystem(catheter, cp, tendon, tp, config.coupling,
                               actuation_force=config.actuation.force_n,
                               actuation_site=config.actuation.site,
                               clamp="frame", rest_on=config.actuation.rest_on)
    except ConfigurationError as exc:
        raise ScenarioError(str(exc)) from None
    t0 = time.perf_counter()
    out = simulate_coupled(system, config.integrator, patience=config.patience,
                           ramp_time=config.actuation.ramp_time)
    wall = time.perf_counter() - t0
    eq = out.equilibrium
    cat, ten = out.system.catheter, out.system.tendon
    d1, d2, _ = config.pose.frame()
    a, b = config.coupling.direction_weights
    lumen_side = a * d1 + b * d2
    constraints = dict(out.constraint_residuals)
    constraints["max_net_coupling_force_any_evaluation"] = out.max_net_coupling_force
    constraints["max_director_defect"] = float(rod.director_defect(cat).max())
    constraints["max_director_defect_tendon"] = float(rod.director_defect(ten).max())
    result = RunResult(
        name=config.name, topology="coupled", converged=eq.converged, steps=eq.steps,
        newton_iterations=int(sum(r.newton_iterations for r in eq.reports)), wall_time=wall,
        tip=cat.points[-1].copy(),
        tip_deflection=float((cat.points[-1] - config.pose.position) @ lumen_side),
        centerlines={"catheter": cat.points.copy(), "tendon": ten.points.copy()},
        constraints=constraints, failure=eq.failure)
    _attach_trace(result, eq, cp.length)
    return result


def _attach_trace(result: RunResult, eq, length: float) -> None:
    result.trace = np.asarray(eq.tip_trace)
    result.trace_newton = np.array([0] + [r.newton_iterations for r in eq.reports])
    result.trace_time = np.concatenate([[0.0], np.cumsum([r.h_used for r in eq.reports])])
    if len(result.trace) > 1:
        result.plateau_step, result.post_plateau_oscillation = plateau(result.trace, length)


def run_scenario(config: ScenarioConfig) -> RunResult:
    """Run a scenario to rest (no file output)."""
    reference = _reference_curve(config)
    try:
        result = _run_single(config) if config.topology == "single" else _run_coupled(config)
    except OracleRangeError as exc:
        raise ScenarioError(str(exc)) from None
    if reference is not None:
        body = result.centerlines["rod" if config.topology == "single" else "catheter"]
        result.references["reference"] = np.column_stack(
            [reference.points, np.zeros(len(reference.points))])
        result.errors["reference"] = compare(body[:, :2], reference, config.body.length).as_dict()
    return result


# --- file output ------------------------------------------------------------

def _write_xy(path: Path, points: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "x_m", "y_m"])
        for i, (x, y) in enumerate(points[:, :2]):
            w.writerow([i, repr(float(x)), repr(float(y))])


def write_trace(path: Path, result: RunResult, oracle_tip: np.ndarray | None = None,
                length: float | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = ["step", "time_s", "tip_x_m", "tip_y_m", "tip_z_m", "newton_iterations"]
        if oracle_tip is not None:
            header.append("tip_error_fraction")
        w.writerow(header)
        for k, tip in enumerate(result.trace):
            row = [k, repr(float(result.trace_time[k]))] + [repr(float(v)) for v in tip] + \
                [int(result.trace_newton[k])]
            if oracle_tip is not None:
                row.append(repr(float(np.linalg.norm(tip - oracle_tip) / length)))
            w.writerow(row)


def render_svg(curves: dict, width: int = 640, height: int = 480, margin: int = 48) -> str:
    """Polyline plot of ``label -> (n, >=2)`` curves in the x-y plane with simple axes."""
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    allpts = np.vstack([np.asarray(c)[:, :2] for c in curves.values()])
    lo, hi = allpts.min(axis=0), allpts.max(axis=0)
    span = max(float(np.max(hi - lo)), 1e-12)
    scale = min((width - 2 * margin), (height - 2 * margin)) / span

    def to_px(p):
        return margin + (p[:, 0] - lo[0]) * scale, height - margin - (p[:, 1] - lo[1]) * scale

    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>']
    ox, oy = to_px(np.array([[max(lo[0], min(0.0, hi[0])), max(lo[1], min(0.0, hi[1]))]]))
    lines.append(f'<line x1="{margin}" y1="{oy[0]:.2f}" x2="{width - margin}" '
                 f'y2="{oy[0]:.2f}" stroke="#888" stroke-width="1"/>')
    lines.append(f'<line x1="{ox[0]:.2f}" y1="{margin}" x2="{ox[0]:.2f}" '
                 f'y2="{height - margin}" stroke="#888" stroke-width="1"/>')
    lines.append(f'<text x="{width - margin}" y="{height - 12}" font-size="12" '
                 f'text-anchor="end">x [m], span {span:.4g}</text>')
    for i, (label, pts) in enumerate(curves.items()):
        px, py = to_px(np.asarray(pts, dtype=float))
        color = colors[i % len(colors)]
        coords = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px, py))
        lines.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" '
                     f'points="{coords}"/>')
        lines.append(f'<text x="{margin + 8}" y="{margin + 16 * (i + 1)}" font-size="12" '
                     f'fill="{color}">{label}</text>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def write_outputs(result: RunResult, config: ScenarioConfig, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for label, pts in result.centerlines.items():
        _write_xy(out / f"centerline_{label}.csv", pts)
    for label, pts in result.references.items():
        _write_xy(out / f"centerline_{label}.csv", pts)
    with open(out / "result.json", "w", encoding="utf-8") as fh:
        json.dump(result.as_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    if config.outputs.trace and result.trace is not None:
        oracle = result.references.get("oracle")
        write_trace(out / "trace.csv", result, None if oracle is None else oracle[-1],
                    config.body.length)
    if config.outputs.plot:
        curves = {**result.centerlines, **result.references}
        (out / "plot.svg").write_text(render_svg(curves), encoding="utf-8")
    return out


# --- sweeps -----------------------------------------------------------------

SUMMARY_COLUMNS = ["parameter", "value", "converged", "steps", "newton_iterations",
                   "plateau_step", "post_plateau_oscillation", "tip_x_m", "tip_y_m", "tip_z_m",
                   "tip_deflection_m", "tip_error_fraction", "area_error_m",
                   "max_director_defect", "max_abs_lumen_compliance", "wall_time_s"]


def _sweep_entry(args) -> RunResult:
    config, parameter, value, out_dir = args
    result = run_scenario(config)
    result.sweep_parameter, result.sweep_value = parameter, value
    if out_dir is not None:
        write_outputs(result, config, out_dir)
    return result


def _value_label(value: float) -> str:
    return f"{int(value)}" if value == int(value) else f"{value:g}"


def run_sweep(config: ScenarioConfig, out_dir=None, threads: int = 1) -> list[RunResult]:
    """One run per sweep value, in the given order; worker processes when ``threads > 1``."""
    if config.sweep is None:
        raise ScenarioError("scenario has no [sweep] section")
    param = config.sweep.parameter
    jobs = []
    for i, value in enumerate(config.sweep.values):
        sub = None if out_dir is None else \
            str(Path(out_dir) / f"{i:03d}_{param}_{_value_label(value)}")
        jobs.append((with_parameter(config, param, value), param, value, sub))
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(threads, len(jobs))) as pool:
            results = list(pool.map(_sweep_entry, jobs))
    else:
        results = [_sweep_entry(job) for job in jobs]
    if out_dir is not None:
        write_summary(Path(out_dir) / "summary.csv", results)
    return results


def summary_row(result: RunResult) -> dict:
    err = result.errors.get("oracle") or result.errors.get("reference") or {}
    return {
        "parameter": result.sweep_parameter,
        "value": result.sweep_value,
        "converged": result.converged,
        "steps": result.steps,
        "newton_iterations": result.newton_iterations,
        "plateau_step": result.plateau_step,
        "post_plateau_oscillation": result.post_plateau_oscillation,
        "tip_x_m": float(result.tip[0]),
        "tip_y_m": float(result.tip[1]),
        "tip_z_m": float(result.tip[2]),
        "tip_deflection_m": result.tip_deflection,
        "tip_error_fraction": err.get("tip_error_fraction", float("nan")),
        "area_error_m": err.get("area_error", float("nan")),
        "max_director_defect": result.constraints.get("max_director_defect", float("nan")),
        "max_abs_lumen_compliance": result.constraints.get("max_abs_lumen_compliance",
                                                           float("nan")),
        "wall_time_s": result.wall_time,
    }


def write_summary(path: Path, results: list[RunResult]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in results:
            w.writerow({k: (repr(float(v)) if isinstance(v, float) else v)
                        for k, v in summary_row(r).items()})
