"""Rigid-body poses with a scalar uncertainty model.

Units are millimeters and radians everywhere inside the package; degrees
appear only in documents (rpy_deg input) and reports. Quaternions are stored
(w, x, y, z), unit norm, sign-canonicalized so w >= 0.

sigma_t_mm / sigma_r_rad are per-axis standard deviations: sigma_t of the
three translation components, sigma_r of the three rotation-vector
components of the error. Propagation is first-order scalar RSS; the
rotation-to-translation cross term enters through lever arms when chains are
folded in traversal order (see frames.resolve).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import SchemaError, UnitError
from . import kernels

__all__ = [
    "Pose",
    "UncertainTransform",
    "SOURCES",
    "compose",
    "invert",
    "uncertain_compose",
    "uncertain_invert",
    "identity_uncertain",
    "translation_distance",
    "rotation_angle",
    "quat_from_rotvec",
    "compose_batch",
    "pose_to_doc",
    "pose_from_doc",
    "uncertain_to_doc",
    "uncertain_from_doc",
]

SOURCES = ("kinematic", "vision", "dt_stored", "odometry")

# Worst-first ranking used when two edges merge. Only the odometry vs.
# accurate split is semantically load-bearing; the order among the accurate
# classes is fixed here so the combination rule is deterministic.
_SOURCE_RANK = {"kinematic": 0, "vision": 1, "dt_stored": 2, "odometry": 3}

_NORM_TOL = 1e-6  # accepted |q|-1 deviation at construction
_RENORM_SQ = 1e-12  # ||q|^2 - 1| above which operations renormalize


def _qmul(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return (
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    )


def _qrot(q, v):
    # v + 2w(u x v) + 2 u x (u x v), u = vector part
    w, x, y, z = q
    vx, vy, vz = v
    ux = y * vz - z * vy
    uy = z * vx - x * vz
    uz = x * vy - y * vx
    wx = w * ux + (y * uz - z * uy)
    wy = w * uy + (z * ux - x * uz)
    wz = w * uz + (x * uy - y * ux)
    return (vx + 2.0 * wx, vy + 2.0 * wy, vz + 2.0 * wz)


@dataclass(frozen=True, eq=False)
class Pose:
    """A rigid transform: rotation then translation, in millimeters."""

    translation: np.ndarray
    rotation: np.ndarray

    def __post_init__(self):
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        q = np.array(self.rotation, dtype=np.float64).reshape(4)
        nsq = float(q @ q)
        if abs(math.sqrt(nsq) - 1.0) > _NORM_TOL:
            raise ValueError(f"quaternion norm {math.sqrt(nsq):.9f} is not 1")
        if abs(nsq - 1.0) > _RENORM_SQ:
            q = q / math.sqrt(nsq)
        if q[0] < 0.0 or (q[0] == 0.0 and _first_nonzero_negative(q)):
            q = -q
        t.flags.writeable = False
        q.flags.writeable = False
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "rotation", q)

    @staticmethod
    def identity() -> "Pose":
        return Pose((0.0, 0.0, 0.0), (1.0, 0.0, 0.0, 0.0))

    @staticmethod
    def from_axis_angle(
        axis: Sequence[float], angle_rad: float, translation: Sequence[float] = (0.0, 0.0, 0.0)
    ) -> "Pose":
        ax = np.array(axis, dtype=np.float64).reshape(3)
        n = float(np.linalg.norm(ax))
        if n == 0.0:
            raise ValueError("rotation axis must be nonzero")
        return Pose(translation, quat_from_rotvec(ax / n * angle_rad))

    @staticmethod
    def from_rpy_deg(
        translation: Sequence[float], rpy_deg: Sequence[float]
    ) -> "Pose":
        """roll/pitch/yaw in degrees, applied as Rz(yaw) Ry(pitch) Rx(roll)."""
        r, p, y = (math.radians(float(v)) for v in rpy_deg)
        qx = (math.cos(r / 2), math.sin(r / 2), 0.0, 0.0)
        qy = (math.cos(p / 2), 0.0, math.sin(p / 2), 0.0)
        qz = (math.cos(y / 2), 0.0, 0.0, math.sin(y / 2))
        return Pose(translation, _qmul(qz, _qmul(qy, qx)))

    def rotation_matrix(self) -> np.ndarray:
        w, x, y, z = self.rotation
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )

    def transform_point(self, point: Sequence[float]) -> np.ndarray:
        p = _qrot(tuple(self.rotation), (float(point[0]), float(point[1]), float(point[2])))
        return np.array(p) + self.translation

    def __repr__(self):
        t = ", ".join(f"{v:.3f}" for v in self.translation)
        q = ", ".join(f"{v:.6f}" for v in self.rotation)
        return f"Pose(t=[{t}] mm, q=[{q}])"


def _first_nonzero_negative(q: np.ndarray) -> bool:
    for v in q[1:]:
        if v != 0.0:
            return v < 0.0
    return False


def quat_from_rotvec(v: Sequence[float]) -> np.ndarray:
    """Rotation vector (radians) to quaternion (w, x, y, z)."""
    v = np.asarray(v, dtype=np.float64).reshape(3)
    theta = float(np.linalg.norm(v))
    if theta < 1e-12:
        return np.array([1.0, 0.5 * v[0], 0.5 * v[1], 0.5 * v[2]])
    half = 0.5 * theta
    s = math.sin(half) / theta
    return np.array([math.cos(half), v[0] * s, v[1] * s, v[2] * s])


def compose(a: Pose, b: Pose) -> Pose:
    """a then b: the transform mapping b-local coordinates through a."""
    qa = tuple(a.rotation)
    rb = _qrot(qa, tuple(b.translation))
    t = (
        a.translation[0] + rb[0],
        a.translation[1] + rb[1],
        a.translation[2] + rb[2],
    )
    return Pose(t, _qmul(qa, tuple(b.rotation)))


def invert(p: Pose) -> Pose:
    w, x, y, z = p.rotation
    qc = (w, -x, -y, -z)
    ti = _qrot(qc, tuple(p.translation))
    return Pose((-ti[0], -ti[1], -ti[2]), qc)


def translation_distance(a: Pose, b: Pose) -> float:
    """Euclidean distance between the two translations, mm."""
    return float(np.linalg.norm(a.translation - b.translation))


def rotation_angle(a: Pose, b: Pose) -> float:
    """Geodesic angle between the two rotations, radians."""
    dot = abs(float(a.rotation @ b.rotation))
    return 2.0 * math.acos(min(1.0, dot))


@dataclass(frozen=True, eq=False)
class UncertainTransform:
    """A pose with scalar standard uncertainties and a provenance class.

    source is one of kinematic | vision | dt_stored | odometry; odometry is
    the single inaccurate class (docking / coarse map positioning), the other
    three are accurate.
    """

    pose: Pose
    sigma_t_mm: float
    sigma_r_rad: float
    source: str

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValueError(f"unknown source {self.source!r}")
        if self.sigma_t_mm < 0.0 or self.sigma_r_rad < 0.0:
            raise ValueError("sigma values must be >= 0")
        object.__setattr__(self, "sigma_t_mm", float(self.sigma_t_mm))
        object.__setattr__(self, "sigma_r_rad", float(self.sigma_r_rad))

    @property
    def is_accurate(self) -> bool:
        return self.source != "odometry"


def identity_uncertain() -> UncertainTransform:
    return UncertainTransform(Pose.identity(), 0.0, 0.0, "kinematic")


def _worse_source(a: str, b: str) -> str:
    return a if _SOURCE_RANK[a] >= _SOURCE_RANK[b] else b


def uncertain_compose(a: UncertainTransform, b: UncertainTransform) -> UncertainTransform:
    """First-order composition.

    a's rotational uncertainty sweeps b's translation (the lever arm); b's
    rotational noise has no first-order effect on the composed translation.
    Rotational uncertainties add in quadrature. The combined source is the
    less accurate of the two.
    """
    lever = a.sigma_r_rad * float(np.linalg.norm(b.pose.translation))
    sigma_t = math.sqrt(a.sigma_t_mm**2 + b.sigma_t_mm**2 + lever**2)
    sigma_r = math.sqrt(a.sigma_r_rad**2 + b.sigma_r_rad**2)
    return UncertainTransform(
        compose(a.pose, b.pose), sigma_t, sigma_r, _worse_source(a.source, b.source)
    )


def uncertain_invert(a: UncertainTransform) -> UncertainTransform:
    """Invert the pose; rotational noise picks up the inverse's own lever arm."""
    lever = a.sigma_r_rad * float(np.linalg.norm(a.pose.translation))
    sigma_t = math.sqrt(a.sigma_t_mm**2 + lever**2)
    return UncertainTransform(invert(a.pose), sigma_t, a.sigma_r_rad, a.source)


# --- batch helpers (hot paths delegate to the kernels backend) ---


def compose_batch(
    t1: np.ndarray, q1: np.ndarray, t2: np.ndarray, q2: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Compose N poses given as arrays; any operand may be a single pose."""
    t1 = np.ascontiguousarray(np.atleast_2d(np.asarray(t1, dtype=np.float64)))
    q1 = np.ascontiguousarray(np.atleast_2d(np.asarray(q1, dtype=np.float64)))
    t2 = np.ascontiguousarray(np.atleast_2d(np.asarray(t2, dtype=np.float64)))
    q2 = np.ascontiguousarray(np.atleast_2d(np.asarray(q2, dtype=np.float64)))
    n = max(t1.shape[0], t2.shape[0])
    if t1.shape[0] != n:
        t1 = np.ascontiguousarray(np.broadcast_to(t1, (n, 3)))
        q1 = np.ascontiguousarray(np.broadcast_to(q1, (n, 4)))
    if t2.shape[0] != n:
        t2 = np.ascontiguousarray(np.broadcast_to(t2, (n, 3)))
        q2 = np.ascontiguousarray(np.broadcast_to(q2, (n, 4)))
    return kernels.compose_batch(t1, q1, t2, q2)


def sample_pose_noise(
    rng: np.random.Generator, sigma_t_mm: float, sigma_r_rad: float, n: int
) -> tuple[np.ndarray, np.ndarray]:
    """Draw n small perturbations: per-axis Gaussian translations and
    Gaussian rotation vectors (the axis is uniform by isotropy)."""
    dt = rng.normal(0.0, sigma_t_mm, size=(n, 3)) if sigma_t_mm > 0 else np.zeros((n, 3))
    if sigma_r_rad > 0:
        dq = kernels.rotvec_to_quat(
            np.ascontiguousarray(rng.normal(0.0, sigma_r_rad, size=(n, 3)))
        )
    else:
        dq = np.tile(np.array([1.0, 0.0, 0.0, 0.0]), (n, 1))
    return dt, dq


# --- document form ---
# Poses serialize as {"t": [x, y, z], "q": [w, x, y, z]} with t in mm.
# {"t": ..., "rpy_deg": [roll, pitch, yaw]} is accepted on input only.


def pose_to_doc(p: Pose) -> dict:
    return {"t": [float(v) for v in p.translation], "q": [float(v) for v in p.rotation]}


def _num_list(value, length: int, path: str) -> list[float]:
    if not isinstance(value, (list, tuple)) or len(value) != length:
        raise SchemaError(path, f"expected a list of {length} numbers")
    out = []
    for i, v in enumerate(value):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise SchemaError(f"{path}/{i}", "expected a number")
        out.append(float(v))
    return out


def pose_from_doc(doc: object, path: str = "") -> Pose:
    if not isinstance(doc, dict):
        raise SchemaError(path, "expected a pose object")
    known = {"t", "q", "rpy_deg"}
    for key in doc:
        if key not in known:
            if key == "rpy":
                raise UnitError(f"{path}/{key}", "missing unit suffix; expected 'rpy_deg'")
            raise SchemaError(f"{path}/{key}", "unknown field")
    if "t" not in doc:
        raise SchemaError(path, "missing field 't'")
    t = _num_list(doc["t"], 3, f"{path}/t")
    if "q" in doc and "rpy_deg" in doc:
        raise SchemaError(path, "give either 'q' or 'rpy_deg', not both")
    if "q" in doc:
        q = _num_list(doc["q"], 4, f"{path}/q")
        norm = math.sqrt(sum(v * v for v in q))
        if abs(norm - 1.0) > _NORM_TOL:
            raise SchemaError(f"{path}/q", f"quaternion norm {norm:.9f} is not 1")
        return Pose(t, q)
    if "rpy_deg" in doc:
        rpy = _num_list(doc["rpy_deg"], 3, f"{path}/rpy_deg")
        return Pose.from_rpy_deg(t, rpy)
    raise SchemaError(path, "missing rotation: expected 'q' or 'rpy_deg'")


def uncertain_to_doc(u: UncertainTransform) -> dict:
    doc = pose_to_doc(u.pose)
    doc["sigma_t_mm"] = u.sigma_t_mm
    doc["sigma_r_rad"] = u.sigma_r_rad
    doc["source"] = u.source
    return doc


def uncertain_from_doc(doc: object, path: str = "") -> UncertainTransform:
    if not isinstance(doc, dict):
        raise SchemaError(path, "expected an uncertain-transform object")
    pose_keys = {}
    meta = {}
    for key, value in doc.items():
        if key in ("t", "q", "rpy_deg"):
            pose_keys[key] = value
        elif key in ("sigma_t_mm", "sigma_r_rad", "source"):
            meta[key] = value
        elif key in ("sigma_t", "sigma_r"):
            suffix = "sigma_t_mm" if key == "sigma_t" else "sigma_r_rad"
            raise UnitError(f"{path}/{key}", f"missing unit suffix; expected '{suffix}'")
        else:
            raise SchemaError(f"{path}/{key}", "unknown field")
    pose = pose_from_doc(pose_keys, path)
    for name in ("sigma_t_mm", "sigma_r_rad"):
        if name not in meta:
            raise SchemaError(path, f"missing field '{name}'")
        v = meta[name]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise SchemaError(f"{path}/{name}", "expected a number")
        if v < 0:
            raise SchemaError(f"{path}/{name}", "must be >= 0")
    source = meta.get("source")
    if source is None:
        raise SchemaError(path, "missing field 'source'")
    if source not in SOURCES:
        raise SchemaError(f"{path}/source", f"expected one of {', '.join(SOURCES)}")
    return UncertainTransform(
        pose, float(meta["sigma_t_mm"]), float(meta["sigma_r_rad"]), source
    )
