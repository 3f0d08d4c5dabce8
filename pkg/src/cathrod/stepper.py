"""Damped implicit Euler time stepping with a sparse finite-difference Newton solve.

One step solves for the next coordinates ``x`` in

    f(x) = x_now + xi * h * xdot_now + h**2 * M^-1 F(x) - x = 0

and sets ``xdot = (x - x_now) / h``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

log = logging.getLogger(__name__)

EPS = np.finfo(float).eps


class StepFailure(RuntimeError):
    def __init__(self, message: str, report: "StepReport | None" = None):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class IntegratorConfig:
    timestep: float = 0.3
    damping: float = 0.9
    residual_tol: float = 1e-10
    max_newton_iters: int = 50
    max_steps: int = 2000
    convergence_velocity_tol: float = 1e-6
    max_halvings: int = 4
    line_search: bool = False
    fd_scheme: str = "forward"
    # a solve is abandoned once its residual grows by this factor
    divergence_ratio: float = 1e10
    # after a halved step, the next one starts at twice the accepted h
    adaptive_timestep: bool = False

    def __post_init__(self):
        if not self.timestep > 0:
            raise ValueError("timestep must be positive")
        if not 0.0 <= self.damping <= 1.0:
            raise ValueError("damping must lie in [0, 1]")
        if not (self.residual_tol > 0 and self.convergence_velocity_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.max_newton_iters < 1 or self.max_steps < 1:
            raise ValueError("iteration limits must be positive")
        if not self.divergence_ratio > 1.0:
            raise ValueError("divergence_ratio must exceed 1")
        if self.max_halvings < 0:
            raise ValueError("max_halvings must be non-negative")
        if self.fd_scheme not in FD_SCHEMES:
            raise ValueError(f"fd_scheme must be one of {FD_SCHEMES}")


@dataclass(frozen=True)
class SparsityPattern:
    """Structural nonzeros ``(rows[k], cols[k])`` of an ``n x n`` Jacobian."""

    n: int
    rows: np.ndarray
    cols: np.ndarray

    @classmethod
    def from_mask(cls, mask: np.ndarray) -> "SparsityPattern":
        r, c = np.nonzero(mask)
        return cls(mask.shape[0], r, c)

    def to_mask(self) -> np.ndarray:
        m = np.zeros((self.n, self.n), dtype=bool)
        m[self.rows, self.cols] = True
        return m

    @property
    def nnz(self) -> int:
        return len(self.rows)

    @property
    def density(self) -> float:
        return self.nnz / float(self.n * self.n)

    def restrict(self, keep: np.ndarray) -> "SparsityPattern":
        """Sub-pattern on the coordinates where ``keep`` is true, renumbered."""
        keep = np.asarray(keep, dtype=bool)
        new_index = np.cumsum(keep) - 1
        sel = keep[self.rows] & keep[self.cols]
        return SparsityPattern(int(keep.sum()), new_index[self.rows[sel]],
                               new_index[self.cols[sel]])

    def union(self, other: "SparsityPattern") -> "SparsityPattern":
        if other.n != self.n:
            raise ValueError("pattern sizes differ")
        key = np.unique(np.concatenate([self.rows * self.n + self.cols,
                                        other.rows * other.n + other.cols]))
        return SparsityPattern(self.n, key // self.n, key % self.n)


def block_tridiagonal_mask(n: int, node: np.ndarray) -> np.ndarray:
    """Coordinates interact when their node indices differ by at most one."""
    return np.abs(node[:, None] - node[None, :]) <= 1


def single_rod_sparsity(n_points: int) -> SparsityPattern:
    """Residual pattern of one rod in interleaved ``(r_i, q_i)`` node blocks."""
    if n_points < 3:
        raise ValueError("a rod needs at least 3 points")
    node = np.arange(7 * n_points - 4) // 7
    return SparsityPattern.from_mask(block_tridiagonal_mask(7 * n_points - 4, node))


def color_columns(pattern: SparsityPattern) -> np.ndarray:
    """Greedy grouping of structurally orthogonal columns (no shared row).

    Columns are visited in index order and each takes the smallest group not
    used by a column it shares a row with.
    """
    A = sp.csr_matrix((np.ones(pattern.nnz), (pattern.rows, pattern.cols)),
                      shape=(pattern.n, pattern.n))
    conflict = (A.T @ A).tocsr()
    groups = np.full(pattern.n, -1, dtype=int)
    for j in range(pattern.n):
        neigh = groups[conflict.indices[conflict.indptr[j]:conflict.indptr[j + 1]]]
        taken = np.zeros(len(neigh) + 1, dtype=bool)
        taken[neigh[(neigh >= 0) & (neigh < len(taken))]] = True
        groups[j] = int(np.argmin(taken))
    return groups


FD_SCHEMES = ("forward", "central")
ROUNDOFF_FACTOR = 8.0


def fd_steps(x: np.ndarray, typical: np.ndarray | None = None,
             scheme: str = "forward") -> np.ndarray:
    scale = np.abs(x) if typical is None else np.maximum(np.abs(x), typical)
    scale = np.where(scale > 0.0, scale, 1.0)
    rel = np.sqrt(EPS) if scheme == "forward" else 1e-7
    step = rel * scale
    # exactly representable perturbations
    return (x + step) - x


def compressed_fd_jacobian(func: Callable[[np.ndarray], np.ndarray], x: np.ndarray,
                           pattern: SparsityPattern, f0: np.ndarray | None = None,
                           groups: np.ndarray | None = None,
                           typical: np.ndarray | None = None,
                           diagonal: np.ndarray | None = None,
                           scheme: str = "forward") -> sp.csc_matrix:
    """Finite-difference Jacobian evaluated one column group at a time.

    ``scheme="central"`` costs twice the evaluations and removes the
    first-order truncation error. ``diagonal``, if given, is added to the
    diagonal of the result.
    """
    if scheme not in FD_SCHEMES:
        raise ValueError(f"scheme must be one of {FD_SCHEMES}")
    if groups is None:
        groups = color_columns(pattern)
    if f0 is None and scheme == "forward":
        f0 = func(x)
    step = fd_steps(x, typical, scheme)
    vals = np.empty(pattern.nnz)
    col_group = groups[pattern.cols]
    for g in range(int(groups.max()) + 1 if len(groups) else 0):
        cols = np.nonzero(groups == g)[0]
        xp = x.copy()
        xp[cols] += step[cols]
        if scheme == "forward":
            df, width = func(xp) - f0, step
        else:
            xm = x.copy()
            xm[cols] -= step[cols]
            df, width = func(xp) - func(xm), 2.0 * step
        sel = np.nonzero(col_group == g)[0]
        vals[sel] = df[pattern.rows[sel]] / width[pattern.cols[sel]]
    rows, cols = pattern.rows, pattern.cols
    if diagonal is not None:
        diag = np.arange(pattern.n)
        rows, cols = np.concatenate([rows, diag]), np.concatenate([cols, diag])
        vals = np.concatenate([vals, diagonal])
    return sp.csc_matrix((vals, (rows, cols)), shape=(pattern.n, pattern.n))


def dense_fd_jacobian(func, x, f0=None, typical=None, scheme: str = "forward") -> np.ndarray:
    if f0 is None:
        f0 = func(x)
    step = fd_steps(x, typical, scheme)
    J = np.empty((len(f0), len(x)))
    for j in range(len(x)):
        xp = x.copy()
        xp[j] += step[j]
        if scheme == "forward":
            J[:, j] = (func(xp) - f0) / step[j]
        else:
            xm = x.copy()
            xm[j] -= step[j]
            J[:, j] = (func(xp) - func(xm)) / (2.0 * step[j])
    return J


def residual(x_next, x_now, xdot_now, mass, force_fn, config: IntegratorConfig) -> np.ndarray:
    h = config.timestep
    return x_now + config.damping * h * xdot_now + h * h * force_fn(x_next) / mass - x_next


@dataclass
class StepReport:
    newton_iterations: int
    residual_norm: float
    max_velocity: float
    accepted: bool
    h_used: float
    update_norm: float = float("nan")
    criterion: str = ""


@dataclass
class NewtonResult:
    x: np.ndarray
    iterations: int
    residual_norm: float
    update_norm: float
    converged: bool
    criterion: str = ""


def newton_solve(residual_fn, x_guess, pattern: SparsityPattern, config: IntegratorConfig,
                 jacobian_fn=None, typical=None, groups=None) -> NewtonResult:
    """Newton iteration with a compressed finite-difference Jacobian.

    Converged when ``|f|_inf <= tol (1 + |x|_inf)``. Rows whose residual is
    dominated by rounding (huge ``h^2/m`` on light coordinates) cannot reach
    that bound, so a full Newton update below the same bound also counts as
    converged.
    """
    tol = config.residual_tol
    x = np.array(x_guess, dtype=float)
    if groups is None:
        groups = color_columns(pattern)
    f = residual_fn(x)
    res = float(np.max(np.abs(f))) if len(f) else 0.0
    dx_norm = float("inf")
    for it in range(config.max_newton_iters + 1):
        bound = tol * (1.0 + float(np.max(np.abs(x))) if len(x) else 1.0)
        if not np.all(np.isfinite(f)):
            break
        if res <= bound or (it > 0 and dx_norm <= bound):
            return NewtonResult(x, it, res, dx_norm if it else 0.0, True)
        if it == config.max_newton_iters:
            break
        if jacobian_fn is not None:
            J = jacobian_fn(x, f)
        else:
            J = compressed_fd_jacobian(residual_fn, x, pattern, f0=f, groups=groups,
                                       typical=typical)
        try:
            dx = splu(sp.csc_matrix(J)).solve(-f)
        except RuntimeError:  # singular factor
            break
        if not np.all(np.isfinite(dx)):
            break
        x = x + dx
        dx_norm = float(np.max(np.abs(dx)))
        f = residual_fn(x)
        res = float(np.max(np.abs(f)))
    return NewtonResult(x, config.max_newton_iters, res, dx_norm, False)


@dataclass
class DynamicSystem:
    """Everything the stepper needs about a mechanical system.

    ``force_fn`` maps full coordinates to generalized forces. ``pattern_fn``
    returns the force-Jacobian pattern over the free coordinates at a given
    state (coupled systems change pattern as registration changes).
    ``prepare_fn(x, start)`` is called before forces are evaluated at each
    Newton iterate; ``start`` is true for the first one of a solve. Coupled
    systems use it to refresh tendon registration.
    """

    x: np.ndarray
    v: np.ndarray
    mass: np.ndarray
    free: np.ndarray
    force_fn: Callable[[np.ndarray], np.ndarray]
    pattern_fn: Callable[[np.ndarray], SparsityPattern]
    point_index: np.ndarray  # (P, 3) coordinate indices of all centerline points
    tip_index: np.ndarray  # (3,) coordinate indices of the tracked tip
    quaternion_index: np.ndarray = None  # (Q, 4)
    typical: np.ndarray | None = None
    prepare_fn: Callable[[np.ndarray, bool], None] | None = None
    monitor_fn: Callable[[np.ndarray], dict] | None = None
    # points whose speed decides rest; defaults to all of them
    rest_index: np.ndarray | None = None

    _coloring: tuple = field(default=(None, None), init=False, repr=False)

    def coloring(self, pattern: SparsityPattern) -> np.ndarray:
        """Column groups for ``pattern``, reused while the pattern object is unchanged."""
        cached, groups = self._coloring
        if cached is not pattern:
            groups = color_columns(pattern)
            self._coloring = (pattern, groups)
        return groups

    def renormalize(self, x: np.ndarray) -> np.ndarray:
        if self.quaternion_index is None or len(self.quaternion_index) == 0:
            return x
        x = x.copy()
        q = x[self.quaternion_index]
        x[self.quaternion_index] = q / np.linalg.norm(q, axis=1, keepdims=True)
        return x

    def max_point_velocity(self, v: np.ndarray) -> float:
        idx = self.point_index if self.rest_index is None else self.rest_index
        return float(np.max(np.linalg.norm(v[idx], axis=1)))


def _line_search(at, x, dx, g, inertia, max_cuts: int = 12, require_decrease: bool = True):
    """Backtrack along ``dx`` on the merit ``|M f / h^2|^2 / 2``.

    Returns ``(x, F, f, t)``; ``t = 0`` means no acceptable point was found.
    With ``require_decrease=False`` the full step is taken whenever it is finite.
    """
    merit0 = 0.5 * float(g @ g)
    t = 1.0
    for _ in range(max_cuts + 1):
        y = x + t * dx
        try:
            F, f = at(y)
        except ValueError:  # degenerate trial geometry
            F = f = None
        if f is not None and np.all(np.isfinite(f)):
            gy = inertia * f
            merit = 0.5 * float(gy @ gy)
            if not require_decrease or merit <= (1.0 - 1e-4 * t) * merit0 or merit0 == 0.0:
                return y, F, f, t
        t *= 0.5
    return x, None, None, 0.0


def _scaled_solve(system: DynamicSystem, x_now, v_now, h, config: IntegratorConfig):
    """Newton on the free coordinates; returns ``(x_full, NewtonResult)``.

    The linear systems use the mass-scaled residual ``g = (M/h^2) f``, whose
    Jacobian ``dF/dx - M/h^2`` is far better conditioned than that of ``f``
    when light quaternion coordinates sit next to heavy points. Both give the
    same Newton step.
    """
    free = system.free
    m = system.mass[free]
    x_pred = x_now[free] + config.damping * h * v_now[free]
    full = x_now.copy()
    typical = None if system.typical is None else system.typical[free]
    inertia = m / (h * h)
    tol = config.residual_tol

    def forces(y):
        full[free] = y
        return system.force_fn(full)[free]

    def at(y, start=False):
        if system.prepare_fn is not None:
            full[free] = y
            system.prepare_fn(full, start)
        F = forces(y)
        return F, x_pred + F / inertia - y

    x = x_now[free].copy()
    F, f = at(x, start=True)
    res = float(np.max(np.abs(f)))
    limit = config.divergence_ratio * max(res, tol)
    dx_norm = float("inf")
    floor = None
    for it in range(config.max_newton_iters + 1):
        bound = tol * (1.0 + float(np.max(np.abs(x))))
        if not np.all(np.isfinite(f)) or res > limit:
            break
        criterion = ""
        if res <= bound:
            criterion = "residual"
        elif it > 0 and dx_norm <= bound:
            criterion = "update"
        elif floor is not None and np.all(np.abs(f) <= bound + floor):
            criterion = "roundoff"
        if criterion:
            out = x_now.copy()
            out[free] = x
            return out, NewtonResult(x, it, res, dx_norm if it else 0.0, True, criterion)
        if it == config.max_newton_iters:
            break
        full[free] = x
        pattern = system.pattern_fn(full)  # may change with the registration
        J = compressed_fd_jacobian(forces, x, pattern, f0=F, groups=system.coloring(pattern),
                                   typical=typical, diagonal=-inertia,
                                   scheme=config.fd_scheme)
        # size of f that rounding alone produces when forces are summed from
        # terms of magnitude |dF/dx| |x| and then divided by a tiny inertia
        scale = np.abs(x) if typical is None else np.maximum(np.abs(x), typical)
        floor = ROUNDOFF_FACTOR * EPS * (abs(J) @ scale + np.abs(F)) / inertia
        try:
            dx = splu(J).solve(-(inertia * f))
        except RuntimeError:  # singular factor
            break
        if not np.all(np.isfinite(dx)):
            break
        x, F, f, t = _line_search(at, x, dx, inertia * f, inertia,
                                  max_cuts=12 if config.line_search else 0,
                                  require_decrease=config.line_search)
        if t == 0.0:
            break
        dx_norm = float(np.max(np.abs(dx))) if t == 1.0 else float("inf")
        res = float(np.max(np.abs(f)))
    out = x_now.copy()
    out[free] = x
    return out, NewtonResult(x, config.max_newton_iters, res, dx_norm, False)


def step_system(system: DynamicSystem, config: IntegratorConfig,
                h: float | None = None) -> StepReport:
    """Advance ``system`` in place by one accepted step (halving ``h`` on failure).

    ``h`` defaults to ``config.timestep``. Halving never goes below
    ``config.timestep / 2**max_halvings``, wherever it starts.
    """
    h = config.timestep if h is None else h
    h_min = config.timestep * 0.5 ** config.max_halvings * (1.0 - 1e-12)
    last = None
    attempt = 0
    while h >= h_min:
        attempt += 1
        try:
            x_new, result = _scaled_solve(system, system.x, system.v, h, config)
        except (ValueError, FloatingPointError) as exc:  # degenerate geometry mid-iteration
            log.debug("step attempt %d failed: %s", attempt, exc)
            result = None
        if result is not None and result.converged:
            x_new = system.renormalize(x_new)
            v_new = (x_new - system.x) / h
            system.x, system.v = x_new, v_new
            return StepReport(result.iterations, result.residual_norm,
                              system.max_point_velocity(v_new), True, h, result.update_norm,
                              result.criterion)
        last = result
        h *= 0.5
    report = StepReport(
        last.iterations if last else config.max_newton_iters,
        last.residual_norm if last else float("nan"), float("nan"), False, 2.0 * h,
        last.update_norm if last else float("nan"))
    raise StepFailure(
        f"Newton failed to converge after {config.max_halvings} timestep halvings "
        f"(last h={2.0 * h:.3g}, residual={report.residual_norm:.3g})", report)


@dataclass
class EquilibriumResult:
    converged: bool
    steps: int
    tip_trace: np.ndarray
    reports: list = field(default_factory=list)
    monitors: list = field(default_factory=list)
    failure: str | None = None


def run_system(system: DynamicSystem, config: IntegratorConfig, patience: int = 3,
               on_step: Callable | None = None, min_time: float = 0.0) -> EquilibriumResult:
    """Step until the max point speed stays below the tolerance for ``patience`` steps.

    Rest is not declared before ``min_time`` of simulated time has passed.
    """
    trace = [system.x[system.tip_index].copy()]
    reports: list[StepReport] = []
    monitors: list[dict] = []
    quiet = 0
    h = config.timestep
    t = 0.0
    for k in range(config.max_steps):
        try:
            report = step_system(system, config, h)
        except StepFailure as exc:
            return EquilibriumResult(False, k, np.array(trace), reports, monitors, str(exc))
        t += report.h_used
        if config.adaptive_timestep:
            h = min(config.timestep, 2.0 * report.h_used)
        reports.append(report)
        trace.append(system.x[system.tip_index].copy())
        if system.monitor_fn is not None:
            monitors.append(system.monitor_fn(system.x))
        if on_step is not None:
            on_step(k, system, report)
        quiet = quiet + 1 if report.max_velocity < config.convergence_velocity_tol else 0
        if quiet >= patience and t >= min_time:
            return EquilibriumResult(True, k + 1, np.array(trace), reports, monitors)
    return EquilibriumResult(False, config.max_steps, np.array(trace), reports, monitors,
                             "max_steps reached before the rod came to rest")


# --- single rod -----------------------------------------------------------

def rod_system(state, params, bc=None) -> DynamicSystem:
    from . import rod

    bc = bc or rod.BoundaryConditions()
    bc.validate(params.num_points)
    n = params.num_points
    pidx, qidx = rod.layout_indices(n)
    f_ext = rod.external_point_forces(params, bc)
    base = bc.base_frame(state)
    free = bc.free_mask(n)
    pattern = single_rod_sparsity(n).restrict(free)
    typical = np.ones(params.ndof)
    typical[pidx] = params.length

    def force_fn(x):
        fp, fq = rod.internal_forces(x[pidx], x[qidx], params, base)
        return rod.pack(fp + f_ext, fq)

    return DynamicSystem(
        x=state.positions_vector(), v=state.velocity_vector(), mass=rod.mass_matrix(params),
        free=free, force_fn=force_fn, pattern_fn=lambda x: pattern, point_index=pidx,
        tip_index=pidx[-1], quaternion_index=qidx, typical=typical)


def step(state, params, bc, config: IntegratorConfig):
    """One implicit step of a single rod; returns ``(new_state, StepReport)``."""
    from .rod import RodState

    system = rod_system(state, params, bc)
    report = step_system(system, config)
    return RodState.from_vectors(system.x, system.v), report


def run_to_equilibrium(state, params, bc, config: IntegratorConfig, patience: int = 3):
    """Integrate a single rod until it comes to rest; returns ``(state, EquilibriumResult)``."""
    from .rod import RodState

    system = rod_system(state, params, bc)
    result = run_system(system, config, patience=patience)
    return RodState.from_vectors(system.x, system.v), result
