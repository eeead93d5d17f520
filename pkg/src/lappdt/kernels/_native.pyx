# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled versions of the hot kernels.

lappdt.kernels._numpy is the reference implementation; keep the two in
lockstep (same formulas, same association order) so the backends agree to
floating-point noise. Quaternions are (w, x, y, z), outputs normalized with
w >= 0.
"""

import numpy as np

from libc.math cimport cos, fabs, sin, sqrt


def compose_batch(const double[:, ::1] t1, const double[:, ::1] q1,
                  const double[:, ::1] t2, const double[:, ::1] q2):
    """Batch rigid-transform composition: translation then rotation arrays."""
    cdef Py_ssize_t n = t1.shape[0]
    t_arr = np.empty((n, 3), dtype=np.float64)
    q_arr = np.empty((n, 4), dtype=np.float64)
    cdef double[:, ::1] t = t_arr
    cdef double[:, ::1] q = q_arr
    cdef Py_ssize_t i
    cdef double w1, x1, y1, z1, w2, x2, y2, z2
    cdef double vx, vy, vz, cx, cy, cz, dx, dy, dz
    cdef double qw, qx, qy, qz, norm
    with nogil:
        for i in range(n):
            w1 = q1[i, 0]; x1 = q1[i, 1]; y1 = q1[i, 2]; z1 = q1[i, 3]
            vx = t2[i, 0]; vy = t2[i, 1]; vz = t2[i, 2]
            # u x v, then u x (u x v), for v + 2(w (u x v) + u x (u x v))
            cx = y1 * vz - z1 * vy
            cy = z1 * vx - x1 * vz
            cz = x1 * vy - y1 * vx
            dx = y1 * cz - z1 * cy
            dy = z1 * cx - x1 * cz
            dz = x1 * cy - y1 * cx
            t[i, 0] = t1[i, 0] + (vx + 2.0 * (w1 * cx + dx))
            t[i, 1] = t1[i, 1] + (vy + 2.0 * (w1 * cy + dy))
            t[i, 2] = t1[i, 2] + (vz + 2.0 * (w1 * cz + dz))
            w2 = q2[i, 0]; x2 = q2[i, 1]; y2 = q2[i, 2]; z2 = q2[i, 3]
            qw = w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2
            qx = w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2
            qy = w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2
            qz = w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2
            norm = sqrt(qw * qw + qx * qx + qy * qy + qz * qz)
            qw /= norm; qx /= norm; qy /= norm; qz /= norm
            if qw < 0.0:
                qw = -qw; qx = -qx; qy = -qy; qz = -qz
            q[i, 0] = qw; q[i, 1] = qx; q[i, 2] = qy; q[i, 3] = qz
    return t_arr, q_arr


def rotvec_to_quat(const double[:, ::1] v):
    """Convert (N,3) rotation vectors (radians) to unit quaternions."""
    cdef Py_ssize_t n = v.shape[0]
    q_arr = np.empty((n, 4), dtype=np.float64)
    cdef double[:, ::1] q = q_arr
    cdef Py_ssize_t i
    cdef double vx, vy, vz, theta, scale, qw
    with nogil:
        for i in range(n):
            vx = v[i, 0]; vy = v[i, 1]; vz = v[i, 2]
            theta = sqrt(vx * vx + vy * vy + vz * vz)
            qw = cos(0.5 * theta)
            # sin(t/2)/t -> 1/2 as t -> 0; series keeps the limit smooth
            if theta < 1e-8:
                scale = 0.5 - theta * theta / 48.0
            else:
                scale = sin(0.5 * theta) / theta
            if qw < 0.0:
                q[i, 0] = -qw
                q[i, 1] = -(vx * scale)
                q[i, 2] = -(vy * scale)
                q[i, 3] = -(vz * scale)
            else:
                q[i, 0] = qw
                q[i, 1] = vx * scale
                q[i, 2] = vy * scale
                q[i, 3] = vz * scale
    return q_arr


cdef inline void _quat_to_mat(const double* q, double* m) noexcept nogil:
    cdef double w = q[0], x = q[1], y = q[2], z = q[3]
    m[0] = 1.0 - 2.0 * (y * y + z * z)
    m[1] = 2.0 * (x * y - w * z)
    m[2] = 2.0 * (x * z + w * y)
    m[3] = 2.0 * (x * y + w * z)
    m[4] = 1.0 - 2.0 * (x * x + z * z)
    m[5] = 2.0 * (y * z - w * x)
    m[6] = 2.0 * (x * z - w * y)
    m[7] = 2.0 * (y * z + w * x)
    m[8] = 1.0 - 2.0 * (x * x + y * y)


def obb_hit_mask(const double[:, ::1] ta, const double[:, ::1] qa,
                 const double[::1] half_a,
                 const double[::1] tb, const double[::1] qb,
                 const double[::1] half_b):
    """Separating-axis overlap of N moving boxes against one fixed box.

    Mirrors _numpy.obb_hit_mask: closed sets (touching counts as a hit),
    cross axes padded with 1e-9 against near-parallel degeneracy.
    """
    cdef Py_ssize_t n = ta.shape[0]
    out_arr = np.zeros(n, dtype=np.uint8)
    cdef unsigned char[::1] out = out_arr
    cdef double rb[9]
    cdef double ra[9]
    cdef double r[9]
    cdef double absr[9]
    cdef double t[3]
    cdef double a[3]
    cdef double b[3]
    cdef double dx, dy, dz, lhs, rhs
    cdef Py_ssize_t i, row, col, i1, i2, j1, j2
    cdef bint sep
    _quat_to_mat(&qb[0], rb)
    a[0] = half_b[0]; a[1] = half_b[1]; a[2] = half_b[2]
    b[0] = half_a[0]; b[1] = half_a[1]; b[2] = half_a[2]
    with nogil:
        for i in range(n):
            _quat_to_mat(&qa[i, 0], ra)
            # r = rb^T . ra ; t = rb^T . (ta - tb)
            for row in range(3):
                for col in range(3):
                    r[3 * row + col] = (rb[row] * ra[col]
                                        + rb[3 + row] * ra[3 + col]
                                        + rb[6 + row] * ra[6 + col])
                    absr[3 * row + col] = fabs(r[3 * row + col]) + 1e-9
            dx = ta[i, 0] - tb[0]; dy = ta[i, 1] - tb[1]; dz = ta[i, 2] - tb[2]
            for row in range(3):
                t[row] = dx * rb[row] + dy * rb[3 + row] + dz * rb[6 + row]
            sep = False
            # B's face axes
            for row in range(3):
                lhs = fabs(t[row])
                rhs = a[row] + (absr[3 * row] * b[0]
                                + absr[3 * row + 1] * b[1]
                                + absr[3 * row + 2] * b[2])
                if lhs > rhs:
                    sep = True
                    break
            # A's face axes
            if not sep:
                for col in range(3):
                    lhs = fabs(t[0] * r[col] + t[1] * r[3 + col] + t[2] * r[6 + col])
                    rhs = b[col] + (absr[col] * a[0]
                                    + absr[3 + col] * a[1]
                                    + absr[6 + col] * a[2])
                    if lhs > rhs:
                        sep = True
                        break
            # cross axes in Gottschalk's closed form
            if not sep:
                for row in range(3):
                    i1 = (row + 1) % 3
                    i2 = (row + 2) % 3
                    for col in range(3):
                        j1 = (col + 1) % 3
                        j2 = (col + 2) % 3
                        lhs = fabs(t[i2] * r[3 * i1 + col] - t[i1] * r[3 * i2 + col])
                        rhs = (a[i1] * absr[3 * i2 + col]
                               + a[i2] * absr[3 * i1 + col]
                               + b[j1] * absr[3 * row + j2]
                               + b[j2] * absr[3 * row + j1])
                        if lhs > rhs:
                            sep = True
                            break
                    if sep:
                        break
            if not sep:
                out[i] = 1
    return out_arr.view(np.bool_)
