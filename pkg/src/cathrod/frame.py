"""Quaternion/director kinematics for rod elements.

Quaternions are stored as ``(q1, q2, q3, q4)`` with ``q4`` the real part.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DegenerateQuaternionError(ValueError):
    pass


# material-frame matrices
B1 = np.array([[0, 0, 0, 1], [0, 0, 1, 0], [0, -1, 0, 0], [-1, 0, 0, 0]], dtype=float)
B2 = np.array([[0, 0, -1, 0], [0, 0, 0, 1], [1, 0, 0, 0], [0, -1, 0, 0]], dtype=float)
B3 = np.array([[0, 1, 0, 0], [-1, 0, 0, 0], [0, 0, 0, 1], [0, 0, -1, 0]], dtype=float)
# reference-frame matrices
B1_REF = np.array([[0, 0, 0, 1], [0, 0, -1, 0], [0, 1, 0, 0], [-1, 0, 0, 0]], dtype=float)
B2_REF = np.array([[0, 0, 1, 0], [0, 0, 0, 1], [-1, 0, 0, 0], [0, -1, 0, 0]], dtype=float)
B3_REF = np.array([[0, -1, 0, 0], [1, 0, 0, 0], [0, 0, 0, 1], [0, 0, -1, 0]], dtype=float)

B_MATERIAL = np.stack([B1, B2, B3])
B_REFERENCE = np.stack([B1_REF, B2_REF, B3_REF])
for _b in (B1, B2, B3, B1_REF, B2_REF, B3_REF, B_MATERIAL, B_REFERENCE):
    _b.flags.writeable = False


@dataclass(frozen=True)
class DirectorFrame:
    d1: np.ndarray
    d2: np.ndarray
    d3: np.ndarray

    def as_matrix(self) -> np.ndarray:
        """Directors as matrix columns."""
        return np.column_stack([self.d1, self.d2, self.d3])


@dataclass(frozen=True)
class MaterialRates:
    u: np.ndarray
    omega: np.ndarray
    omega0: np.ndarray


def b_matrices() -> tuple[np.ndarray, ...]:
    """Return ``(B1, B2, B3, B1_ref, B2_ref, B3_ref)`` (read-only arrays)."""
    return (*B_MATERIAL, *B_REFERENCE)


def _norm2(q: np.ndarray) -> float:
    n2 = float(q @ q)
    if not np.isfinite(n2) or n2 <= 0.0:
        raise DegenerateQuaternionError(f"quaternion has zero or non-finite norm: {q!r}")
    return n2


def _director_table() -> np.ndarray:
    # each director entry is a quadratic form in q; row a*4+b holds the q_a q_b coefficients
    t = np.zeros((4, 4, 3, 3))
    sq = {0: (1, -1, -1), 1: (-1, 1, -1), 2: (-1, -1, 1), 3: (1, 1, 1)}  # q_a^2 on diagonals
    for a, signs in sq.items():
        for k in range(3):
            t[a, a, k, k] = signs[k]

    def cross(a, b, k, j, c):
        t[a, b, k, j] += c
        t[b, a, k, j] += c

    cross(0, 1, 0, 1, 1.0); cross(2, 3, 0, 1, 1.0)
    cross(0, 2, 0, 2, 1.0); cross(1, 3, 0, 2, -1.0)
    cross(0, 1, 1, 0, 1.0); cross(2, 3, 1, 0, -1.0)
    cross(1, 2, 1, 2, 1.0); cross(0, 3, 1, 2, 1.0)
    cross(0, 2, 2, 0, 1.0); cross(1, 3, 2, 0, 1.0)
    cross(1, 2, 2, 1, 1.0); cross(0, 3, 2, 1, -1.0)
    table = t.reshape(16, 9)
    table.flags.writeable = False
    return table


_DIRECTOR_TABLE = _director_table()


def director_components(q: np.ndarray) -> np.ndarray:
    """Unnormalized directors as a ``(..., 3, 3)`` array, rows ``d1, d2, d3``.

    Vectorized over leading axes; divide by ``|q|^2`` to get the frame.
    """
    q = np.asarray(q, dtype=float)
    outer = (q[..., :, None] * q[..., None, :]).reshape(q.shape[:-1] + (16,))
    return (outer @ _DIRECTOR_TABLE).reshape(q.shape[:-1] + (3, 3))


def directors_from_quaternion(q) -> DirectorFrame:
    q = np.asarray(q, dtype=float)
    n2 = _norm2(q)
    d = director_components(q) / n2
    return DirectorFrame(d[0], d[1], d[2])


def directors_batch(q: np.ndarray) -> np.ndarray:
    """Normalized directors for an ``(M, 4)`` quaternion array -> ``(M, 3, 3)``."""
    q = np.asarray(q, dtype=float)
    n2 = np.einsum("...i,...i->...", q, q)
    lo = n2.min() if n2.size else 1.0
    if not (lo > 0.0 and np.isfinite(n2.max())):
        raise DegenerateQuaternionError("zero or non-finite quaternion norm in batch")
    return director_components(q) / n2[..., None, None]


def material_rates(q, dq_dsigma, dq_dt) -> MaterialRates:
    """Strain rates and angular velocities from a quaternion and its derivatives."""
    q = np.asarray(q, dtype=float)
    scale = 2.0 / _norm2(q)
    dq_ds = np.asarray(dq_dsigma, dtype=float)
    dq_dt = np.asarray(dq_dt, dtype=float)
    bq = B_MATERIAL @ q
    bq_ref = B_REFERENCE @ q
    return MaterialRates(
        u=scale * (bq @ dq_ds),
        omega=scale * (bq @ dq_dt),
        omega0=scale * (bq_ref @ dq_dt),
    )


def quaternion_from_matrix(R: np.ndarray) -> np.ndarray:
    """Unit quaternion whose director columns reproduce the rotation ``R``."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0.0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = np.array([(R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s,
                      (R[1, 0] - R[0, 1]) / s, 0.25 * s])
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = np.array([0.25 * s, (R[0, 1] + R[1, 0]) / s,
                      (R[0, 2] + R[2, 0]) / s, (R[2, 1] - R[1, 2]) / s])
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = np.array([(R[0, 1] + R[1, 0]) / s, 0.25 * s,
                      (R[1, 2] + R[2, 1]) / s, (R[0, 2] - R[2, 0]) / s])
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = np.array([(R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s,
                      0.25 * s, (R[1, 0] - R[0, 1]) / s])
    if q[3] < 0.0:
        q = -q
    return q / np.linalg.norm(q)


def axis_angle_quaternion(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    return np.append(np.sin(0.5 * angle) * axis, np.cos(0.5 * angle))


def quaternion_rate_from_omega(q, omega) -> np.ndarray:
    """Diagnostic map ``qdot = 1/2 Q(q) [0, omega]`` for a body-frame angular velocity."""
    x, y, z, w = np.asarray(q, dtype=float)
    ox, oy, oz = np.asarray(omega, dtype=float)
    # Hamilton product q * (omega, 0) with the real part stored last
    return 0.5 * np.array([
        w * ox + y * oz - z * oy,
        w * oy + z * ox - x * oz,
        w * oz + x * oy - y * ox,
        -x * ox - y * oy - z * oz,
    ])
