"""NumPy reference implementation of the rod energy/gradient kernel.

Same signature and semantics as the compiled ``_ckernels`` module; used when
the extension is unavailable or ``CATHROD_PURE_PYTHON`` is set.
"""

from __future__ import annotations

import numpy as np

from .frame import B_MATERIAL

MIN_SEGMENT = 1e-12


class DegenerateGeometryError(ValueError):
    pass


def _d3_unnormalized(q: np.ndarray) -> np.ndarray:
    q1, q2, q3, q4 = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    return np.stack([2.0 * (q1 * q3 + q2 * q4),
                     2.0 * (q2 * q3 - q1 * q4),
                     -q1 * q1 - q2 * q2 + q3 * q3 + q4 * q4], axis=1)


def _d3_jacobian_t(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``(dD3/dq)^T v`` row-wise, for unnormalized ``D3``."""
    q1, q2, q3, q4 = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    v0, v1, v2 = v[:, 0], v[:, 1], v[:, 2]
    return 2.0 * np.stack([q3 * v0 - q4 * v1 - q1 * v2,
                           q4 * v0 + q3 * v1 - q2 * v2,
                           q1 * v0 + q2 * v1 + q3 * v2,
                           q2 * v0 - q1 * v1 + q4 * v2], axis=1)


def rod_energy_gradient(points, quats, rest, ks, kdiag, kp, uhat, kq=0.0, qbase=None):
    """Energies ``(stretch, bend, penalty, norm)`` and their total gradient.

    ``norm`` is the unit-quaternion penalty ``kq/2 sum l (|q|^2 - 1)^2``.
    When ``qbase`` is given, a clamped base frame at ``s = 0`` is bent against
    element 0 over half a rest length.

    Returns ``(energies, grad_points, grad_quats)``.
    """
    points = np.asarray(points, dtype=float)
    quats = np.asarray(quats, dtype=float)
    rest = np.asarray(rest, dtype=float)
    kdiag = np.asarray(kdiag, dtype=float)
    uhat = np.asarray(uhat, dtype=float)

    gp = np.zeros_like(points)
    gq = np.zeros_like(quats)

    e = points[1:] - points[:-1]
    s = np.sqrt(np.einsum("ij,ij->i", e, e))
    if np.any(s <= MIN_SEGMENT):
        idx = int(np.argmin(s))
        raise DegenerateGeometryError(f"coincident points at element {idx}")

    # stretch
    strain = s / rest - 1.0
    e_stretch = 0.5 * ks * float(np.sum(rest * strain * strain))
    de = (ks * strain / s)[:, None] * e

    # centerline/director penalty
    t = e / s[:, None]
    n2 = np.einsum("ij,ij->i", quats, quats)
    D = _d3_unnormalized(quats)
    d = D / n2[:, None]
    diff = t - d
    e_pen = 0.5 * kp * float(np.sum(rest * np.einsum("ij,ij->i", diff, diff)))
    g = (kp * rest)[:, None] * diff
    tg = np.einsum("ij,ij->i", t, g)
    de += (g - t * tg[:, None]) / s[:, None]
    gq += -_d3_jacobian_t(quats, g) / n2[:, None] \
        + (2.0 * np.einsum("ij,ij->i", D, g) / (n2 * n2))[:, None] * quats

    gp[1:] += de
    gp[:-1] -= de

    # unit-norm penalty
    dn = n2 - 1.0
    e_norm = 0.5 * kq * float(np.sum(rest * dn * dn))
    gq += (2.0 * kq * rest * dn)[:, None] * quats

    # bending at interior junctions, plus a half-length junction to the base frame
    e_bend = 0.0
    qa, qb, lbar = quats[:-1], quats[1:], 0.5 * (rest[:-1] + rest[1:])
    if qbase is not None:
        qa = np.vstack([np.asarray(qbase, dtype=float)[None, :], qa])
        qb = quats
        lbar = np.concatenate([[0.5 * rest[0]], lbar])
    if len(qa):
        qm = 0.5 * (qa + qb)
        qp = (qb - qa) / lbar[:, None]
        m2 = np.einsum("ij,ij->i", qm, qm)
        bqm = np.einsum("kab,jb->jka", B_MATERIAL, qm)  # (J, 3, 4)
        w = np.einsum("jka,ja->jk", bqm, qp)
        u = 2.0 * w / m2[:, None]
        du = u - uhat[None, :]
        e_bend = 0.5 * float(np.sum(lbar[:, None] * kdiag[None, :] * du * du))
        c = lbar[:, None] * kdiag[None, :] * du  # dE/du
        btqp = -np.einsum("kab,jb->jka", B_MATERIAL, qp)  # B^T qp, B skew
        du_dqm = (2.0 / m2)[:, None, None] * btqp \
            - (4.0 * w / (m2 * m2)[:, None])[:, :, None] * qm[:, None, :]
        du_dqp = (2.0 / m2)[:, None, None] * bqm
        g_qm = np.einsum("jk,jka->ja", c, du_dqm)
        g_qp = np.einsum("jk,jka->ja", c, du_dqp) / lbar[:, None]
        ga, gb = 0.5 * g_qm - g_qp, 0.5 * g_qm + g_qp
        if qbase is None:
            gq[:-1] += ga
            gq[1:] += gb
        else:  # the base frame itself is fixed
            gq[:-1] += ga[1:]
            gq += gb

    return np.array([e_stretch, e_bend, e_pen, e_norm]), gp, gq
