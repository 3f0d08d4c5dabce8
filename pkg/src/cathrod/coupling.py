"""Tendon threaded through an off-axis lumen of a catheter.

Both rods share one coordinate vector, catheter first. The tendon is held on
the lumen line by per-point penalty springs, its distal end is tied to the
lumen end (endpoint compliance) and to the catheter tip (endpoint coupling),
and an actuation force pulls it toward the catheter base.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import rod
from .frame import DegenerateQuaternionError, directors_batch
from .rod import BoundaryConditions, ConfigurationError, RodParameters, RodState
from .stepper import (DynamicSystem, EquilibriumResult, IntegratorConfig, SparsityPattern,
                      run_system, single_rod_sparsity)

REACTION_MODES = ("average", "sum")
REGISTRATION_UPDATES = ("step", "newton")
ACTUATION_SITES = ("distal", "proximal")
REST_SETS = ("catheter", "all")
MIN_SEPARATION = 1e-12


@dataclass(frozen=True)
class CouplingConfig:
    """Penalty constants and lumen geometry.

    ``direction_weights`` ``(a, b)`` define the lumen direction
    ``d_t = a d1 + b d2``; they are normalized on construction.
    """

    lumen_offset: float = 0.0035
    direction_weights: tuple = (1.0, 0.0)
    lumen_constant: float = 1000.0
    endpoint_compliance_constant: float = 950.0
    endpoint_coupling_constant: float = 2e5
    reaction_mode: str = "average"
    react_endpoint_compliance: bool = False
    # "step": register once per time step; "newton": at every Newton iterate
    registration_update: str = "step"

    def __post_init__(self):
        w = np.asarray(self.direction_weights, dtype=float)
        if w.shape != (2,) or not np.all(np.isfinite(w)) or np.hypot(*w) == 0.0:
            raise ConfigurationError("direction_weights must be two finite numbers, not both 0")
        w = w / np.hypot(*w)
        object.__setattr__(self, "direction_weights", (float(w[0]), float(w[1])))
        for name in ("lumen_offset", "lumen_constant", "endpoint_compliance_constant",
                     "endpoint_coupling_constant"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value >= 0):
                raise ConfigurationError(f"{name} must be non-negative, got {value}")
        if self.registration_update not in REGISTRATION_UPDATES:
            raise ConfigurationError(
                f"registration_update must be one of {REGISTRATION_UPDATES}, "
                f"got {self.registration_update!r}")
        if self.reaction_mode not in REACTION_MODES:
            raise ConfigurationError(
                f"reaction_mode must be one of {REACTION_MODES}, got {self.reaction_mode!r}")


@dataclass
class Registration:
    """Per tendon point: parent catheter element, nearest lumen point, lumen compliance.

    ``constrained`` marks the points that receive lumen forces (all but the
    distal endpoint, which the endpoint constraints hold).
    """

    parent: np.ndarray
    nearest: np.ndarray
    compliance: np.ndarray
    direction: np.ndarray  # (Nt, 3) d_t of the parent element
    constrained: np.ndarray

    def key(self) -> bytes:
        return self.nearest.tobytes()


@dataclass
class CoupledSystem:
    catheter: RodState
    catheter_params: RodParameters
    tendon: RodState
    tendon_params: RodParameters
    coupling: CouplingConfig = field(default_factory=CouplingConfig)
    actuation_force: float = 2.0
    actuation_site: str = "distal"
    clamp: str = "frame"
    # whose point speeds decide that the system is at rest
    rest_on: str = "catheter"

    def __post_init__(self):
        if self.rest_on not in REST_SETS:
            raise ConfigurationError(f"rest_on must be one of {REST_SETS}, got {self.rest_on!r}")
        if self.actuation_site not in ACTUATION_SITES:
            raise ConfigurationError(
                f"actuation_site must be one of {ACTUATION_SITES}, got {self.actuation_site!r}")
        if not np.isfinite(self.actuation_force):
            raise ConfigurationError("actuation_force must be finite")
        if self.catheter.num_points != self.catheter_params.num_points:
            raise ConfigurationError("catheter state and parameters disagree on N")
        if self.tendon.num_points != self.tendon_params.num_points:
            raise ConfigurationError("tendon state and parameters disagree on N")

    @property
    def n_catheter(self) -> int:
        return 7 * self.catheter_params.num_points - 4

    def coordinates(self) -> np.ndarray:
        return np.concatenate([self.catheter.positions_vector(), self.tendon.positions_vector()])

    def velocities(self) -> np.ndarray:
        return np.concatenate([self.catheter.velocity_vector(), self.tendon.velocity_vector()])

    def split(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return x[:self.n_catheter], x[self.n_catheter:]

    def with_coordinates(self, x, v=None) -> "CoupledSystem":
        xc, xt = self.split(x)
        vc, vt = (None, None) if v is None else self.split(v)
        return replace(self, catheter=RodState.from_vectors(xc, vc),
                       tendon=RodState.from_vectors(xt, vt))


def lumen_directions(quats: np.ndarray, coupling: CouplingConfig) -> np.ndarray:
    """``d_t`` per element."""
    a, b = coupling.direction_weights
    D = directors_batch(quats)
    return a * D[:, 0] + b * D[:, 1]


def _adjacent_element(n_points: int) -> np.ndarray:
    # point i uses element i; the last point uses the last element
    return np.minimum(np.arange(n_points), n_points - 2)


def lumen_points(catheter: RodState, coupling: CouplingConfig) -> np.ndarray:
    dt = lumen_directions(catheter.quaternions, coupling)
    return catheter.points + coupling.lumen_offset * dt[_adjacent_element(catheter.num_points)]


def _evaluate_registration(nearest, tendon_points, lumen, dt_elem, n_catheter_points):
    parent = _adjacent_element(n_catheter_points)[nearest]
    direction = dt_elem[parent]
    compliance = np.einsum("ij,ij->i", lumen[nearest] - tendon_points, direction)
    constrained = np.ones(len(tendon_points), dtype=bool)
    constrained[-1] = False
    return Registration(parent, nearest, compliance, direction, constrained)


def register_tendon(tendon: RodState, lumen: np.ndarray, catheter: RodState,
                    coupling: CouplingConfig) -> Registration:
    """Nearest-lumen-point registration; ties go to the lowest index."""
    lumen = np.asarray(lumen, dtype=float)
    if len(lumen) == 0:
        raise ConfigurationError("empty lumen")
    d2 = np.sum((tendon.points[:, None, :] - lumen[None, :, :]) ** 2, axis=2)
    nearest = np.argmin(d2, axis=1)  # first minimum = lowest index
    dt = lumen_directions(catheter.quaternions, coupling)
    return _evaluate_registration(nearest, tendon.points, lumen, dt, catheter.num_points)


def lumen_forces(reg: Registration, coupling: CouplingConfig,
                 n_catheter_points: int) -> tuple[np.ndarray, np.ndarray]:
    """``(tendon_forces (Nt,3), catheter_reactions (Nc,3))``.

    Each catheter point receives the negated average (or sum) of the forces
    on the tendon points registered to it.
    """
    active = reg.constrained
    f_t = np.zeros((len(reg.nearest), 3))
    f_t[active] = (coupling.lumen_constant * reg.compliance[active])[:, None] \
        * reg.direction[active]
    f_c = np.zeros((n_catheter_points, 3))
    np.add.at(f_c, reg.nearest[active], -f_t[active])
    if coupling.reaction_mode == "average":
        count = np.bincount(reg.nearest[active], minlength=n_catheter_points)
        f_c /= np.maximum(count, 1)[:, None]
    return f_t, f_c


@dataclass(frozen=True)
class EndpointForces:
    compliance_force: np.ndarray  # F_E on the tendon tip
    coupling_force: np.ndarray  # F_C on the tendon tip; the catheter tip gets -F_C
    compliance_gap: float  # |C_E|
    coupling_gap: float  # C_C = |t - r| - r_L


def endpoint_forces(system: CoupledSystem, lumen: np.ndarray | None = None) -> EndpointForces:
    """Endpoint compliance and coupling forces at the distal ends.

    The coupling spring has rest length ``r_L`` and pulls the tendon tip back
    toward that distance from the catheter tip.
    """
    c = system.coupling
    if lumen is None:
        lumen = lumen_points(system.catheter, c)
    t = system.tendon.points[-1]
    r = system.catheter.points[-1]
    gap_e = lumen[-1] - t
    f_e = c.endpoint_compliance_constant * gap_e
    sep = t - r
    dist = float(np.linalg.norm(sep))
    gap_c = dist - c.lumen_offset
    if dist < MIN_SEPARATION:
        f_c = np.zeros(3)
    else:
        f_c = -c.endpoint_coupling_constant * gap_c * sep / dist
    return EndpointForces(f_e, f_c, float(np.linalg.norm(gap_e)), gap_c)


def actuation_vector(system: CoupledSystem) -> tuple[int, np.ndarray]:
    """``(tendon point index, force)`` of the actuation load."""
    if system.actuation_site == "proximal":
        e = system.tendon.points[1] - system.tendon.points[0]
        return 0, -system.actuation_force * e / np.linalg.norm(e)
    q1, q2, q3, q4 = (float(v) for v in system.catheter.quaternions[-1])
    n2 = q1 * q1 + q2 * q2 + q3 * q3 + q4 * q4
    if not n2 > 0.0:
        raise DegenerateQuaternionError("zero quaternion on the last catheter element")
    d3 = np.array([2.0 * (q1 * q3 + q2 * q4), 2.0 * (q2 * q3 - q1 * q4),
                   -q1 * q1 - q2 * q2 + q3 * q3 + q4 * q4]) / n2
    return system.tendon.num_points - 1, -system.actuation_force * d3


@dataclass
class CouplingForces:
    catheter: np.ndarray  # (Nc, 3) point forces
    tendon: np.ndarray  # (Nt, 3)
    registration: Registration
    endpoint: EndpointForces
    anchor: np.ndarray = field(default_factory=lambda: np.zeros(3))  # unreacted F_E

    @property
    def net(self) -> np.ndarray:
        """Sum over action-reaction pairs; an unreacted endpoint compliance
        force is an external anchor load and is left out."""
        return self.catheter.sum(axis=0) + (self.tendon.sum(axis=0) - self.anchor)


def coupling_point_forces(system: CoupledSystem, nearest: np.ndarray | None = None
                          ) -> CouplingForces:
    """All penalty forces between the rods (actuation excluded).

    ``nearest`` freezes the registration; ``None`` registers afresh.
    """
    c = system.coupling
    cat, ten = system.catheter, system.tendon
    nc = cat.num_points
    dt = lumen_directions(cat.quaternions, c)
    lumen = cat.points + c.lumen_offset * dt[_adjacent_element(nc)]
    if nearest is None:
        reg = register_tendon(ten, lumen, cat, c)
    else:
        reg = _evaluate_registration(nearest, ten.points, lumen, dt, nc)
    f_t, f_c = lumen_forces(reg, c, nc)
    ep = endpoint_forces(system, lumen)
    f_t[-1] += ep.compliance_force + ep.coupling_force
    f_c[-1] -= ep.coupling_force
    if c.react_endpoint_compliance:
        f_c[-1] -= ep.compliance_force
        return CouplingForces(f_c, f_t, reg, ep)
    return CouplingForces(f_c, f_t, reg, ep, ep.compliance_force)


def coupled_forces(system: CoupledSystem, nearest: np.ndarray | None = None) -> np.ndarray:
    """Generalized force vector over both rods (clamped catheter coordinates zeroed)."""
    cf = coupling_point_forces(system, nearest)
    bc = BoundaryConditions(clamp=system.clamp)
    cp, cq = rod.internal_forces(system.catheter.points, system.catheter.quaternions,
                                 system.catheter_params, bc.base_frame(system.catheter))
    tp, tq = rod.internal_forces(system.tendon.points, system.tendon.quaternions,
                                 system.tendon_params)
    cp = cp + cf.catheter
    tp = tp + cf.tendon
    idx, fa = actuation_vector(system)
    tp[idx] += fa
    out = np.concatenate([rod.pack(cp, cq), rod.pack(tp, tq)])
    out[:system.n_catheter][~bc.free_mask(system.catheter.num_points)] = 0.0
    return out


def coupled_sparsity(system: CoupledSystem, nearest: np.ndarray) -> SparsityPattern:
    """Pattern over the full coupled coordinate vector (clamped coordinates included).

    ``nearest`` is the registered lumen point of every tendon point.
    """
    nc, nt = system.catheter_params.num_points, system.tendon_params.num_points
    off = system.n_catheter
    cband, tband = single_rod_sparsity(nc), single_rod_sparsity(nt)
    rows = [cband.rows, tband.rows + off]
    cols = [cband.cols, tband.cols + off]
    cpidx, cqidx = rod.layout_indices(nc)
    tpidx, _ = rod.layout_indices(nt)

    def block(r, c):
        rr, cc = np.meshgrid(r, c, indexing="ij")
        rows.append(rr.ravel())
        cols.append(cc.ravel())

    c = system.coupling
    parent = _adjacent_element(nc)[nearest]
    if c.lumen_constant > 0:
        for i in range(nt - 1):  # the distal endpoint carries no lumen force
            j, e = int(nearest[i]), int(parent[i])
            block(tpidx[i] + off, np.concatenate([cpidx[j], cqidx[e]]))
            block(cpidx[j], tpidx[i] + off)
    tip_t = tpidx[-1] + off
    if c.endpoint_compliance_constant > 0 or c.endpoint_coupling_constant > 0:
        block(tip_t, np.concatenate([cpidx[-1], cqidx[-1]]))
        block(cpidx[-1], tip_t)
    if system.actuation_site == "distal" and system.actuation_force != 0:
        block(tip_t, cqidx[-1])
    key = np.unique(np.concatenate(rows) * (off + 7 * nt - 4) + np.concatenate(cols))
    n = off + 7 * nt - 4
    return SparsityPattern(n, key // n, key % n)


def make_tendon_on_lumen(catheter: RodState, tendon_params: RodParameters,
                         coupling: CouplingConfig) -> RodState:
    """Tendon laid exactly on the lumen line, equally spaced in arc length."""
    lumen = lumen_points(catheter, coupling)
    seg = np.linalg.norm(np.diff(lumen, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    target = np.linspace(0.0, min(tendon_params.length, s[-1]), tendon_params.num_points)
    pts = np.column_stack([np.interp(target, s, lumen[:, k]) for k in range(3)])
    nt = tendon_params.num_points
    cat_q = catheter.quaternions
    # orient tendon elements like the catheter element they overlap
    mid = 0.5 * (target[:-1] + target[1:])
    owner = np.clip(np.searchsorted(s, mid) - 1, 0, len(cat_q) - 1)
    quats = cat_q[owner].copy()
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    if nt < 2:
        raise ConfigurationError("tendon needs at least 2 points")
    return RodState(pts, quats)


@dataclass
class CoupledResult:
    system: CoupledSystem
    equilibrium: EquilibriumResult
    max_net_coupling_force: float
    registration: Registration
    constraint_residuals: dict


def build_dynamic_system(system: CoupledSystem) -> tuple[DynamicSystem, dict]:
    """Stepper view of a coupled system plus a live diagnostics dict."""
    nc, nt = system.catheter_params.num_points, system.tendon_params.num_points
    off = system.n_catheter
    cpidx, cqidx = rod.layout_indices(nc)
    tpidx, tqidx = rod.layout_indices(nt)
    free = np.ones(off + 7 * nt - 4, dtype=bool)
    free[:off] = BoundaryConditions(clamp=system.clamp).free_mask(nc)
    mass = np.concatenate([rod.mass_matrix(system.catheter_params),
                           rod.mass_matrix(system.tendon_params)])
    typical = np.ones_like(mass)
    typical[cpidx] = system.catheter_params.length
    typical[tpidx + off] = system.tendon_params.length
    bc = BoundaryConditions(clamp=system.clamp)
    base = bc.base_frame(system.catheter)
    cat_free = bc.free_mask(nc)
    diag = {"nearest": None, "pattern": None, "pattern_key": None, "max_net": 0.0,
            "load_scale": 1.0}

    def view(x):
        xc, xt = x[:off], x[off:]
        return xc[cpidx], xc[cqidx], xt[tpidx], xt[tqidx]

    def force_fn(x):
        cp_, cq_, tp_, tq_ = view(x)
        cat = _Light(cp_, cq_)
        ten = _Light(tp_, tq_)
        light = _LightSystem(cat, ten, system)
        cf = coupling_point_forces(light, diag["nearest"])
        diag["max_net"] = max(diag["max_net"], float(np.max(np.abs(cf.net))))
        fcp, fcq = rod.internal_forces(cp_, cq_, system.catheter_params, base)
        ftp, ftq = rod.internal_forces(tp_, tq_, system.tendon_params)
        ftp = ftp + cf.tendon
        idx, fa = actuation_vector(light)
        ftp[idx] += diag["load_scale"] * fa
        out = np.concatenate([rod.pack(fcp + cf.catheter, fcq), rod.pack(ftp, ftq)])
        out[:off][~cat_free] = 0.0
        return out

    def prepare_fn(x, start=True):
        if not start and system.coupling.registration_update == "step":
            return
        cp_, cq_, tp_, _ = view(x)
        c = system.coupling
        dt = lumen_directions(cq_, c)
        lumen = cp_ + c.lumen_offset * dt[_adjacent_element(nc)]
        d2 = np.sum((tp_[:, None, :] - lumen[None, :, :]) ** 2, axis=2)
        diag["nearest"] = np.argmin(d2, axis=1)

    def pattern_fn(x):
        if diag["nearest"] is None:
            prepare_fn(x)
        key = diag["nearest"].tobytes()
        if key != diag["pattern_key"]:
            diag["pattern"] = coupled_sparsity(system, diag["nearest"]).restrict(free)
            diag["pattern_key"] = key
        return diag["pattern"]

    def monitor_fn(x):
        prepare_fn(x)
        cp_, cq_, tp_, tq_ = view(x)
        light = _LightSystem(_Light(cp_, cq_), _Light(tp_, tq_), system)
        return constraint_residuals(light)

    point_index = np.vstack([cpidx, tpidx + off])
    dyn = DynamicSystem(
        x=system.coordinates(), v=system.velocities(), mass=mass, free=free,
        force_fn=force_fn, pattern_fn=pattern_fn, point_index=point_index,
        tip_index=cpidx[-1], quaternion_index=np.vstack([cqidx, tqidx + off]),
        typical=typical, prepare_fn=prepare_fn, monitor_fn=monitor_fn,
        rest_index=cpidx if system.rest_on == "catheter" else None)
    return dyn, diag


class _Light:
    """Minimal read-only stand-in for ``RodState`` inside force loops."""

    __slots__ = ("points", "quaternions")

    def __init__(self, points, quaternions):
        self.points = points
        self.quaternions = quaternions

    @property
    def num_points(self) -> int:
        return len(self.points)


class _LightSystem:
    __slots__ = ("catheter", "tendon", "coupling", "actuation_force", "actuation_site")

    def __init__(self, catheter, tendon, like: CoupledSystem):
        self.catheter = catheter
        self.tendon = tendon
        self.coupling = like.coupling
        self.actuation_force = like.actuation_force
        self.actuation_site = like.actuation_site


def constraint_residuals(system) -> dict:
    """``max |C_L|`` over lumen-constrained points, ``|C_E|``, ``|C_C|`` and net coupling force."""
    cf = coupling_point_forces(system)
    reg = cf.registration
    cl = np.abs(reg.compliance[reg.constrained])
    return {
        "max_abs_lumen_compliance": float(cl.max()) if len(cl) else 0.0,
        "endpoint_compliance": cf.endpoint.compliance_gap,
        "endpoint_coupling": abs(cf.endpoint.coupling_gap),
        "net_coupling_force": float(np.linalg.norm(cf.net)),
    }


def simulate_coupled(system: CoupledSystem, config: IntegratorConfig,
                     patience: int = 3, on_step=None, ramp_time: float = 0.0) -> CoupledResult:
    """Run the coupled system to rest.

    With ``ramp_time > 0`` the actuation force grows linearly over that much
    simulated time. The rest state is unchanged; the ramp only keeps each
    Newton solve close to the previous state, which the stiff ring spring at
    the tip needs once the pull is large.
    """
    if not ramp_time >= 0.0:
        raise ValueError("ramp_time must be non-negative")
    dyn, diag = build_dynamic_system(system)
    clock = {"t": 0.0}

    def ramp(t):
        return min(1.0, t / ramp_time) if ramp_time > 0 else 1.0

    # the load for a step is set from its expected end time
    diag["load_scale"] = ramp(config.timestep)

    def advance(k, sys_, report):
        clock["t"] += report.h_used
        diag["load_scale"] = ramp(clock["t"] + config.timestep)
        if on_step is not None:
            on_step(k, sys_, report)

    eq = run_system(dyn, config, patience=patience, on_step=advance, min_time=ramp_time)
    final = system.with_coordinates(dyn.x, dyn.v)
    residuals = constraint_residuals(final)
    reg = register_tendon(final.tendon, lumen_points(final.catheter, final.coupling),
                          final.catheter, final.coupling)
    return CoupledResult(final, eq, diag["max_net"], reg, residuals)
