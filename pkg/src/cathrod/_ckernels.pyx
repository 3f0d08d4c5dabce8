# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled rod energy/gradient kernel (mirrors ``_pykernels``)."""

import numpy as np
from libc.math cimport sqrt

from .frame import B_MATERIAL

cdef double MIN_SEGMENT = 1e-12
cdef double _B[3][4][4]

_bm = np.ascontiguousarray(B_MATERIAL, dtype=float)
for _k in range(3):
    for _a in range(4):
        for _b in range(4):
            _B[_k][_a][_b] = _bm[_k, _a, _b]


cdef void _junction(const double* qa, const double* qb, double lbar,
                    const double* kdiag, const double* uhat,
                    double* ga, double* gb, double* energy) noexcept nogil:
    cdef double qm[4]
    cdef double qp[4]
    cdef double bqm[3][4]
    cdef double bqp[3][4]
    cdef double w[3]
    cdef double c[3]
    cdef double g_qm[4]
    cdef double g_qp[4]
    cdef double m2 = 0.0, du
    cdef int k, a, b
    for a in range(4):
        qm[a] = 0.5 * (qa[a] + qb[a])
        qp[a] = (qb[a] - qa[a]) / lbar
        m2 += qm[a] * qm[a]
    for k in range(3):
        w[k] = 0.0
        for a in range(4):
            bqm[k][a] = 0.0
            bqp[k][a] = 0.0
            for b in range(4):
                bqm[k][a] += _B[k][a][b] * qm[b]
                bqp[k][a] += _B[k][a][b] * qp[b]
            w[k] += bqm[k][a] * qp[a]
        du = 2.0 * w[k] / m2 - uhat[k]
        energy[0] += 0.5 * lbar * kdiag[k] * du * du
        c[k] = lbar * kdiag[k] * du
    for a in range(4):
        g_qm[a] = 0.0
        g_qp[a] = 0.0
        for k in range(3):
            # B is skew, so B^T qp = -B qp
            g_qm[a] += c[k] * (-2.0 / m2 * bqp[k][a] - 4.0 * w[k] / (m2 * m2) * qm[a])
            g_qp[a] += c[k] * 2.0 / m2 * bqm[k][a]
        g_qp[a] /= lbar
        ga[a] = 0.5 * g_qm[a] - g_qp[a]
        gb[a] = 0.5 * g_qm[a] + g_qp[a]


def rod_energy_gradient(points, quats, rest, double ks, kdiag, double kp, uhat,
                        double kq=0.0, qbase=None):
    """Returns ``(energies, grad_points, grad_quats, status)``.

    ``status`` is -1 on success, else the index of a degenerate element.
    """
    cdef const double[:, ::1] p = np.ascontiguousarray(points, dtype=float)
    cdef const double[:, ::1] q = np.ascontiguousarray(quats, dtype=float)
    cdef const double[::1] l = np.ascontiguousarray(rest, dtype=float)
    cdef const double[::1] kd = np.ascontiguousarray(kdiag, dtype=float)
    cdef const double[::1] uh = np.ascontiguousarray(uhat, dtype=float)
    cdef Py_ssize_t n = p.shape[0]
    cdef Py_ssize_t m = q.shape[0]
    gp_arr = np.zeros((n, 3))
    gq_arr = np.zeros((m, 4))
    cdef double[:, ::1] gp = gp_arr
    cdef double[:, ::1] gq = gq_arr
    cdef double e_stretch = 0.0, e_bend = 0.0, e_pen = 0.0, e_norm = 0.0
    cdef double e[3]
    cdef double t[3]
    cdef double D[3]
    cdef double g[3]
    cdef double de[3]
    cdef double jtg[4]
    cdef double qb0[4]
    cdef double ga[4]
    cdef double gb[4]
    cdef double s, strain, n2, diff, tg, dg, dn, lj
    cdef double q1, q2, q3, q4
    cdef Py_ssize_t j, i
    cdef int a
    cdef int status = -1
    cdef bint has_base = qbase is not None
    if has_base:
        for a in range(4):
            qb0[a] = float(qbase[a])

    with nogil:
        for j in range(m):
            lj = l[j]
            s = 0.0
            for i in range(3):
                e[i] = p[j + 1, i] - p[j, i]
                s += e[i] * e[i]
            s = sqrt(s)
            if s <= MIN_SEGMENT:
                status = <int>j
                break
            strain = s / lj - 1.0
            e_stretch += 0.5 * ks * lj * strain * strain
            q1 = q[j, 0]
            q2 = q[j, 1]
            q3 = q[j, 2]
            q4 = q[j, 3]
            n2 = q1 * q1 + q2 * q2 + q3 * q3 + q4 * q4
            D[0] = 2.0 * (q1 * q3 + q2 * q4)
            D[1] = 2.0 * (q2 * q3 - q1 * q4)
            D[2] = -q1 * q1 - q2 * q2 + q3 * q3 + q4 * q4
            tg = 0.0
            dg = 0.0
            for i in range(3):
                t[i] = e[i] / s
                diff = t[i] - D[i] / n2
                e_pen += 0.5 * kp * lj * diff * diff
                g[i] = kp * lj * diff
                tg += t[i] * g[i]
                dg += D[i] * g[i]
            for i in range(3):
                de[i] = ks * strain / s * e[i] + (g[i] - t[i] * tg) / s
                gp[j + 1, i] += de[i]
                gp[j, i] -= de[i]
            jtg[0] = 2.0 * (q3 * g[0] - q4 * g[1] - q1 * g[2])
            jtg[1] = 2.0 * (q4 * g[0] + q3 * g[1] - q2 * g[2])
            jtg[2] = 2.0 * (q1 * g[0] + q2 * g[1] + q3 * g[2])
            jtg[3] = 2.0 * (q2 * g[0] - q1 * g[1] + q4 * g[2])
            dn = n2 - 1.0
            e_norm += 0.5 * kq * lj * dn * dn
            for a in range(4):
                gq[j, a] += -jtg[a] / n2 + 2.0 * dg / (n2 * n2) * q[j, a] \
                    + 2.0 * kq * lj * dn * q[j, a]

        if status < 0:
            if has_base and m >= 1:
                _junction(qb0, &q[0, 0], 0.5 * l[0], &kd[0], &uh[0], ga, gb, &e_bend)
                for a in range(4):
                    gq[0, a] += gb[a]
            for j in range(m - 1):
                _junction(&q[j, 0], &q[j + 1, 0], 0.5 * (l[j] + l[j + 1]), &kd[0], &uh[0],
                          ga, gb, &e_bend)
                for a in range(4):
                    gq[j, a] += ga[a]
                    gq[j + 1, a] += gb[a]

    energies = np.array([e_stretch, e_bend, e_pen, e_norm])
    return energies, gp_arr, gq_arr, status
