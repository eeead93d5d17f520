"""Vectorized numpy implementations of the hot kernels.

This is the reference backend; lappdt.kernels._native provides the same
functions compiled with Cython. Both must stay bit-compatible within normal
floating-point reassociation tolerance (see tests/test_kernels.py).

Quaternions are (w, x, y, z), returned normalized with w >= 0.
"""

from __future__ import annotations

import numpy as np


def quat_mul(q1: np.ndarray, q2: np.ndarray) -> np.ndarray:
    """Hamilton product for (N,4) arrays, without normalization."""
    w1, x1, y1, z1 = q1[:, 0], q1[:, 1], q1[:, 2], q1[:, 3]
    w2, x2, y2, z2 = q2[:, 0], q2[:, 1], q2[:, 2], q2[:, 3]
    out = np.empty_like(q1)
    out[:, 0] = w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2
    out[:, 1] = w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2
    out[:, 2] = w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2
    out[:, 3] = w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2
    return out


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate (N,3) vectors by (N,4) unit quaternions: v + 2w(u x v) + 2 u x (u x v)."""
    u = q[:, 1:]
    w = q[:, 0:1]
    uv = np.cross(u, v)
    return v + 2.0 * (w * uv + np.cross(u, uv))


def _canonicalize(q: np.ndarray) -> np.ndarray:
    n = np.sqrt(np.einsum("ij,ij->i", q, q))
    q = q / n[:, None]
    flip = q[:, 0] < 0.0
    q[flip] *= -1.0
    return q


def compose_batch(
    t1: np.ndarray, q1: np.ndarray, t2: np.ndarray, q2: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Batch rigid-transform composition: translation then rotation arrays."""
    t = t1 + quat_rotate(q1, t2)
    q = _canonicalize(quat_mul(q1, q2))
    return t, q


def rotvec_to_quat(v: np.ndarray) -> np.ndarray:
    """Convert (N,3) rotation vectors (radians) to unit quaternions."""
    theta = np.sqrt(np.einsum("ij,ij->i", v, v))
    q = np.empty((v.shape[0], 4), dtype=np.float64)
    half = 0.5 * theta
    q[:, 0] = np.cos(half)
    # sin(t/2)/t -> 1/2 as t -> 0; series keeps the limit smooth
    small = theta < 1e-8
    scale = np.empty_like(theta)
    ts = theta[small]
    scale[small] = 0.5 - ts * ts / 48.0
    tl = theta[~small]
    scale[~small] = np.sin(0.5 * tl) / tl
    q[:, 1:] = v * scale[:, None]
    flip = q[:, 0] < 0.0
    q[flip] *= -1.0
    return q


def _rotmats(q: np.ndarray) -> np.ndarray:
    """(N,4) unit quaternions to (N,3,3) rotation matrices."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    m = np.empty((q.shape[0], 3, 3), dtype=np.float64)
    m[:, 0, 0] = 1 - 2 * (y * y + z * z)
    m[:, 0, 1] = 2 * (x * y - w * z)
    m[:, 0, 2] = 2 * (x * z + w * y)
    m[:, 1, 0] = 2 * (x * y + w * z)
    m[:, 1, 1] = 1 - 2 * (x * x + z * z)
    m[:, 1, 2] = 2 * (y * z - w * x)
    m[:, 2, 0] = 2 * (x * z - w * y)
    m[:, 2, 1] = 2 * (y * z + w * x)
    m[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def obb_hit_mask(
    ta: np.ndarray,
    qa: np.ndarray,
    half_a: np.ndarray,
    tb: np.ndarray,
    qb: np.ndarray,
    half_b: np.ndarray,
) -> np.ndarray:
    """Separating-axis overlap test of N oriented boxes A against one fixed box B.

    ta/qa: (N,3)/(N,4) poses of the moving box (center + orientation),
    half_a: (3,) half extents; tb/qb/half_b: the fixed box. Returns a bool
    (N,) mask, True where the boxes overlap (closed sets: touching counts).

    Everything is expressed in B's local frame. R[i,j] = B_i . A_j maps
    A-local axes into B coordinates; the 15 candidate axes are B's faces,
    A's faces, and the 9 cross products.
    """
    n = ta.shape[0]
    rb = _rotmats(qb[None, :])[0]  # (3,3)
    ra = _rotmats(qa)  # (N,3,3)
    r = np.einsum("ki,nkj->nij", rb, ra)  # R_b^T R_a, (N,3,3)
    t = (ta - tb[None, :]) @ rb  # R_b^T (ta - tb), (N,3)
    absr = np.abs(r) + 1e-9
    a = np.asarray(half_b, dtype=np.float64)  # extents of the frame box (B)
    b = np.asarray(half_a, dtype=np.float64)  # extents of the rotated box (A)

    sep = np.zeros(n, dtype=bool)
    # B's face axes
    for i in range(3):
        lhs = np.abs(t[:, i])
        rhs = a[i] + absr[:, i, :] @ b
        sep |= lhs > rhs
    # A's face axes
    for j in range(3):
        lhs = np.abs(t[:, 0] * r[:, 0, j] + t[:, 1] * r[:, 1, j] + t[:, 2] * r[:, 2, j])
        rhs = b[j] + absr[:, :, j] @ a
        sep |= lhs > rhs
    # cross axes A_j x B_i in Gottschalk's closed form
    for i in range(3):
        i1, i2 = (i + 1) % 3, (i + 2) % 3
        for j in range(3):
            j1, j2 = (j + 1) % 3, (j + 2) % 3
            lhs = np.abs(t[:, i2] * r[:, i1, j] - t[:, i1] * r[:, i2, j])
            rhs = (
                a[i1] * absr[:, i2, j]
                + a[i2] * absr[:, i1, j]
                + b[j1] * absr[:, i, j2]
                + b[j2] * absr[:, i, j1]
            )
            sep |= lhs > rhs
    return ~sep
