"""Discrete single rod: parameters, state, energies, forces and masses.

A rod with ``N`` centerline points carries one quaternion per element. The
generalized coordinate vector interleaves them node by node::

    [r_0, q_0, r_1, q_1, ..., r_{N-2}, q_{N-2}, r_{N-1}]

so that it has ``3N + 4(N-1) = 7N - 4`` entries and the residual Jacobian is
block-tridiagonal over 7-wide node blocks.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from . import kernels
from .frame import directors_batch, quaternion_from_matrix
from .kernels import DegenerateGeometryError

STIFFNESS_VARIANTS = ("corrected", "corde-original")


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class RodParameters:
    youngs_bend: float
    density: float
    radius: float
    length: float
    num_points: int
    youngs_stretch: float | None = None
    shear_modulus: float | None = None
    penalty_constant: float = 1e4
    quaternion_norm_penalty: float = 1e4
    intrinsic_curvature: tuple = (0.0, 0.0, 0.0)
    stiffness_variant: str = "corrected"
    # multiplies the mass matrix (not gravity); changes the path to rest, not the rest state
    inertia_scale: float = 1.0

    def __post_init__(self):
        if self.youngs_stretch is None:
            object.__setattr__(self, "youngs_stretch", self.youngs_bend)
        if self.shear_modulus is None:
            # nu = 0.5
            object.__setattr__(self, "shear_modulus", self.youngs_bend / 3.0)
        object.__setattr__(self, "intrinsic_curvature",
                           tuple(float(v) for v in self.intrinsic_curvature))
        self.validate()

    def validate(self) -> None:
        positive = {
            "youngs_bend": self.youngs_bend,
            "youngs_stretch": self.youngs_stretch,
            "shear_modulus": self.shear_modulus,
            "density": self.density,
            "radius": self.radius,
            "length": self.length,
        }
        for name, value in positive.items():
            if not (np.isfinite(value) and value > 0):
                raise ConfigurationError(f"{name} must be positive, got {value}")
        if int(self.num_points) != self.num_points or self.num_points < 3:
            raise ConfigurationError(
                f"num_points must be an integer >= 3 (minimum N=3), got {self.num_points}")
        for name in ("penalty_constant", "quaternion_norm_penalty"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value >= 0):
                raise ConfigurationError(f"{name} must be non-negative, got {value}")
        if not (np.isfinite(self.inertia_scale) and self.inertia_scale > 0):
            raise ConfigurationError(f"inertia_scale must be positive, got {self.inertia_scale}")
        if len(self.intrinsic_curvature) != 3:
            raise ConfigurationError("intrinsic_curvature must have 3 components")
        if self.stiffness_variant not in STIFFNESS_VARIANTS:
            raise ConfigurationError(
                f"stiffness_variant must be one of {STIFFNESS_VARIANTS}, "
                f"got {self.stiffness_variant!r}")

    @property
    def area(self) -> float:
        return np.pi * self.radius ** 2

    @property
    def area_moment(self) -> float:
        return np.pi * self.radius ** 4 / 4.0

    @property
    def stretch_stiffness(self) -> float:
        return self.youngs_stretch * self.area

    @property
    def stiffness_tensor(self) -> np.ndarray:
        """Diagonal ``(K11, K22, K33)``.

        ``corde-original`` keeps the ``r**2`` cross-section factor of the
        original rod-element formulation, which overstates the stiffness by
        ``1/r**2``.
        """
        power = 4 if self.stiffness_variant == "corrected" else 2
        a = np.pi * self.radius ** power
        return np.array([self.youngs_bend * a / 4.0,
                         self.youngs_bend * a / 4.0,
                         self.shear_modulus * a / 2.0])

    @property
    def rest_lengths(self) -> np.ndarray:
        n = self.num_points - 1
        return np.full(n, self.length / n)

    @property
    def ndof(self) -> int:
        return 7 * self.num_points - 4

    def with_(self, **changes) -> "RodParameters":
        return replace(self, **changes)


def point_slice(i: int) -> slice:
    return slice(7 * i, 7 * i + 3)


def quaternion_slice(j: int) -> slice:
    return slice(7 * j + 3, 7 * j + 7)


@lru_cache(maxsize=64)
def layout_indices(n_points: int) -> tuple[np.ndarray, np.ndarray]:
    """Index arrays ``(point_idx (N,3), quat_idx (N-1,4))`` into the coordinate vector."""
    base = 7 * np.arange(n_points)
    pidx = base[:, None] + np.arange(3)[None, :]
    qidx = base[:-1, None] + 3 + np.arange(4)[None, :]
    pidx.flags.writeable = False
    qidx.flags.writeable = False
    return pidx, qidx


def node_of_coordinate(n_points: int) -> np.ndarray:
    return np.arange(7 * n_points - 4) // 7


def pack(points: np.ndarray, quats: np.ndarray) -> np.ndarray:
    n = len(points)
    x = np.empty(7 * n - 4)
    pidx, qidx = layout_indices(n)
    x[pidx] = points
    x[qidx] = quats
    return x


def unpack(x: np.ndarray, n_points: int) -> tuple[np.ndarray, np.ndarray]:
    pidx, qidx = layout_indices(n_points)
    return x[pidx], x[qidx]


@dataclass
class RodState:
    points: np.ndarray
    quaternions: np.ndarray
    point_velocities: np.ndarray = None
    quaternion_rates: np.ndarray = None

    def __post_init__(self):
        self.points = np.array(self.points, dtype=float)
        self.quaternions = np.array(self.quaternions, dtype=float)
        if self.point_velocities is None:
            self.point_velocities = np.zeros_like(self.points)
        if self.quaternion_rates is None:
            self.quaternion_rates = np.zeros_like(self.quaternions)
        self.point_velocities = np.array(self.point_velocities, dtype=float)
        self.quaternion_rates = np.array(self.quaternion_rates, dtype=float)
        n = len(self.points)
        if self.points.shape != (n, 3) or self.quaternions.shape != (n - 1, 4):
            raise ConfigurationError(
                f"inconsistent state shapes {self.points.shape}, {self.quaternions.shape}")

    @property
    def num_points(self) -> int:
        return len(self.points)

    def positions_vector(self) -> np.ndarray:
        return pack(self.points, self.quaternions)

    def velocity_vector(self) -> np.ndarray:
        return pack(self.point_velocities, self.quaternion_rates)

    @classmethod
    def from_vectors(cls, x: np.ndarray, v: np.ndarray | None = None) -> "RodState":
        n = (len(x) + 4) // 7
        p, q = unpack(x, n)
        if v is None:
            return cls(p.copy(), q.copy())
        pv, qv = unpack(v, n)
        return cls(p.copy(), q.copy(), pv.copy(), qv.copy())

    def copy(self) -> "RodState":
        return RodState(self.points.copy(), self.quaternions.copy(),
                        self.point_velocities.copy(), self.quaternion_rates.copy())

    def directors(self) -> np.ndarray:
        """``(N-1, 3, 3)`` array of element directors (rows d1, d2, d3)."""
        return directors_batch(self.quaternions)


CLAMP_MODES = ("frame", "element")


@dataclass
class BoundaryConditions:
    """Base clamp, endpoint loads and optional gravity.

    ``clamp="frame"`` fixes point 0 and holds the base orientation as a frame
    at ``s = 0``, bent against element 0 over half a rest length; quaternion 0
    stays free. ``clamp="element"`` freezes point 0 and quaternion 0, which
    makes the whole first half-element rigid.
    """

    clamped_base: bool = True
    point_loads: list = field(default_factory=list)  # [(index, (fx, fy, fz)), ...]
    gravity: tuple | None = None
    clamp: str = "frame"

    def validate(self, n_points: int) -> None:
        if self.clamp not in CLAMP_MODES:
            raise ConfigurationError(f"clamp must be one of {CLAMP_MODES}, got {self.clamp!r}")
        for idx, force in self.point_loads:
            if not (-n_points <= int(idx) < n_points):
                raise ConfigurationError(f"load index {idx} out of range for N={n_points}")
            if np.shape(force) != (3,):
                raise ConfigurationError("point load must be a 3-vector")
        if self.gravity is not None and np.shape(self.gravity) != (3,):
            raise ConfigurationError("gravity must be a 3-vector")

    def free_mask(self, n_points: int) -> np.ndarray:
        """Boolean mask of unknown coordinates."""
        mask = np.ones(7 * n_points - 4, dtype=bool)
        if self.clamped_base:
            mask[:7 if self.clamp == "element" else 3] = False
        return mask

    def base_frame(self, state: "RodState") -> np.ndarray | None:
        """Fixed base quaternion entering the bending energy, if any."""
        if not self.clamped_base or self.clamp != "frame":
            return None
        q = state.quaternions[0]
        return q / np.linalg.norm(q)


def orientation_quaternion(direction, normal=None) -> np.ndarray:
    """Quaternion whose ``d3`` is ``direction`` and ``d1`` is as close as possible to ``normal``."""
    d3 = np.asarray(direction, dtype=float)
    d3 = d3 / np.linalg.norm(d3)
    if normal is None:
        normal = np.array([1.0, 0.0, 0.0]) if abs(d3[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    d1 = np.asarray(normal, dtype=float) - d3 * float(np.dot(normal, d3))
    if np.linalg.norm(d1) < 1e-12:
        raise ConfigurationError("normal is parallel to the rod direction")
    d1 = d1 / np.linalg.norm(d1)
    d2 = np.cross(d3, d1)
    return quaternion_from_matrix(np.column_stack([d1, d2, d3]))


def make_rod(params: RodParameters, base_position=(0.0, 0.0, 0.0),
             base_orientation=(0.0, 0.0, 0.0, 1.0)) -> RodState:
    """Straight rod at rest along the base ``d3``."""
    params.validate()
    q0 = np.asarray(base_orientation, dtype=float)
    nq = np.linalg.norm(q0)
    if not np.isfinite(nq) or nq == 0.0:
        raise ConfigurationError("base orientation quaternion must be nonzero")
    q0 = q0 / nq
    d3 = directors_batch(q0[None, :])[0, 2]
    s = np.concatenate([[0.0], np.cumsum(params.rest_lengths)])
    points = np.asarray(base_position, dtype=float)[None, :] + s[:, None] * d3[None, :]
    quats = np.tile(q0, (params.num_points - 1, 1))
    return RodState(points, quats)


def _evaluate(points, quats, params: RodParameters, base_frame=None):
    return kernels.rod_energy_gradient(
        points, quats, params.rest_lengths, params.stretch_stiffness,
        params.stiffness_tensor, params.penalty_constant,
        np.asarray(params.intrinsic_curvature), params.quaternion_norm_penalty, base_frame)


def energy_terms(state: RodState, params: RodParameters, base_frame=None) -> np.ndarray:
    """``(stretch, bend, penalty, quaternion_norm)`` energies in joules.

    ``base_frame`` is the clamped base quaternion (see ``BoundaryConditions``).
    """
    energies, _, _ = _evaluate(state.points, state.quaternions, params, base_frame)
    return energies


def stretch_energy(state: RodState, params: RodParameters) -> float:
    return float(energy_terms(state, params)[0])


def bend_energy(state: RodState, params: RodParameters, base_frame=None) -> float:
    return float(energy_terms(state, params, base_frame)[1])


def penalty_energy(state: RodState, params: RodParameters) -> float:
    return float(energy_terms(state, params)[2])


def total_energy(state: RodState, params: RodParameters, base_frame=None) -> float:
    return float(energy_terms(state, params, base_frame).sum())


def internal_forces(points, quats, params: RodParameters,
                    base_frame=None) -> tuple[np.ndarray, np.ndarray]:
    """Negative energy gradient split into point and quaternion parts."""
    _, gp, gq = _evaluate(points, quats, params, base_frame)
    return -gp, -gq


def point_masses(params: RodParameters) -> np.ndarray:
    rest = params.rest_lengths
    adjacent = np.zeros(params.num_points)
    adjacent[:-1] += rest
    adjacent[1:] += rest
    return params.density * params.area * adjacent / 2.0


def quaternion_masses(params: RodParameters) -> np.ndarray:
    # polar inertia per length times element length
    return params.density * np.pi * params.radius ** 4 / 2.0 * params.rest_lengths


def mass_matrix(params: RodParameters) -> np.ndarray:
    """Diagonal of the generalized mass matrix in coordinate-vector layout."""
    mp = np.repeat(point_masses(params)[:, None], 3, axis=1)
    mq = np.repeat(quaternion_masses(params)[:, None], 4, axis=1)
    return params.inertia_scale * pack(mp, mq)


def external_point_forces(params: RodParameters, bc: BoundaryConditions) -> np.ndarray:
    n = params.num_points
    f = np.zeros((n, 3))
    for idx, force in bc.point_loads:
        f[int(idx)] += np.asarray(force, dtype=float)
    if bc.gravity is not None:
        f += point_masses(params)[:, None] * np.asarray(bc.gravity, dtype=float)[None, :]
    return f


def assemble_forces(state: RodState, params: RodParameters,
                    bc: BoundaryConditions | None = None) -> np.ndarray:
    """Generalized force vector (layout of ``RodState.positions_vector``)."""
    bc = bc or BoundaryConditions(clamped_base=False)
    fp, fq = internal_forces(state.points, state.quaternions, params, bc.base_frame(state))
    fp = fp + external_point_forces(params, bc)
    f = pack(fp, fq)
    f[~bc.free_mask(params.num_points)] = 0.0
    return f


def element_tangents(points: np.ndarray) -> np.ndarray:
    e = np.diff(points, axis=0)
    s = np.linalg.norm(e, axis=1)
    if np.any(s <= kernels._pykernels.MIN_SEGMENT):
        raise DegenerateGeometryError("coincident points")
    return e / s[:, None]


def director_defect(state: RodState) -> np.ndarray:
    """Per-element ``|t - d3|``: violation of the tangent/director constraint."""
    t = element_tangents(state.points)
    d3 = state.directors()[:, 2]
    return np.linalg.norm(t - d3, axis=1)


def centerline_length(points: np.ndarray) -> float:
    return float(np.sum(np.linalg.norm(np.diff(points, axis=0), axis=1)))


__all__ = [
    "CLAMP_MODES", "BoundaryConditions", "ConfigurationError", "DegenerateGeometryError", "RodParameters",
    "RodState", "assemble_forces", "bend_energy", "centerline_length", "director_defect",
    "energy_terms", "make_rod", "mass_matrix", "orientation_quaternion", "pack",
    "penalty_energy", "point_masses", "quaternion_masses", "stretch_energy", "total_energy",
    "unpack",
]
