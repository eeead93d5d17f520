"""Pick-and-place plans and collision checking against device geometry.

Plans follow one fixed 15-step template (home, standby, approach/descend/
grip at the source, mirror-image retreat, transfer, approach/descend/release
at the destination, mirror-image retreat, standby):

    MoveJ h, MoveJ u,
    MoveL s1d, MoveL s1s, MoveL s1, Grip,
    MoveL s1s, MoveL s1d, MoveL s2d, MoveL s2s, MoveL s2, Release,
    MoveL s2s, MoveL s2d, MoveJ u

All targets are TCP poses in the robot base frame; nothing in a plan refers
to the world or a docking target, so plan geometry is untouched by odometry.

Collision semantics (normative for this package): a MoveL segment moves the
TCP on a straight line with normalized-lerp orientation blending. While the
plate is held (from Grip to Release) its footprint box rides on the TCP and
is tested, at sample poses at most sample_spacing_mm apart, against every
device collision box. Sample counts are rounded up to a power of two so any
refinement keeps every earlier sample pose: halving the spacing can only add
violations, never lose one. Samples whose TCP sits within clearance_margin_mm
of a site's own nesting corridor (the s <-> ss segment, site pose included)
are exempt from that owning device's boxes, because plates intentionally
nest inside device geometry there.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .errors import DegeneratePlan, PrecisionFail
from .geom import Pose, compose, invert, pose_to_doc
from .pnp import PrecisionVerdict, SiteChain, check_precision, verdict_to_doc
from .twin import (
    DeviceInstance,
    DevicePrototype,
    RobotTwin,
    WorkpieceSpec,
    effective_site,
)

MOVEJ = "MoveJ"
MOVEL = "MoveL"
GRIP = "Grip"
RELEASE = "Release"

TEMPLATE = (
    (MOVEJ, "h"),
    (MOVEJ, "u"),
    (MOVEL, "s1d"),
    (MOVEL, "s1s"),
    (MOVEL, "s1"),
    (GRIP, "s1"),
    (MOVEL, "s1s"),
    (MOVEL, "s1d"),
    (MOVEL, "s2d"),
    (MOVEL, "s2s"),
    (MOVEL, "s2"),
    (RELEASE, "s2"),
    (MOVEL, "s2s"),
    (MOVEL, "s2d"),
    (MOVEJ, "u"),
)


@dataclass(frozen=True, eq=False)
class MotionStep:
    kind: str
    label: str
    target: Pose | None  # TCP pose in the robot base frame; None for grip/release


@dataclass(frozen=True, eq=False)
class PlannedSite:
    """Everything the planner needs about one end of the transfer."""

    proto: DevicePrototype
    inst: DeviceInstance
    site: str
    chain: SiteChain  # derived base->site with uncertainty


@dataclass(frozen=True, eq=False)
class MotionPlan:
    steps: tuple[MotionStep, ...]
    source: tuple[str, str]  # (serial, site)
    dest: tuple[str, str]
    src_grip_mode: str
    dst_grip_mode: str
    verdicts: dict[str, PrecisionVerdict]

    def target_of(self, label: str) -> Pose:
        for step in self.steps:
            if step.label == label and step.target is not None:
                return step.target
        raise KeyError(label)


def _site_targets(planned: PlannedSite) -> dict[str, Pose]:
    """TCP poses for s/ss/sd of one site, all hung off the derived chain."""
    spec = effective_site(planned.inst, planned.proto, planned.site)
    base_to_site = planned.chain.transform.pose
    site_to_marker = invert(spec.to_site)
    return {
        "s": base_to_site,
        "ss": compose(base_to_site, compose(site_to_marker, spec.to_site_approach)),
        "sd": compose(base_to_site, compose(site_to_marker, spec.to_device_approach)),
    }


def generate_pick_place(
    robot: RobotTwin, src: PlannedSite, dst: PlannedSite
) -> MotionPlan:
    """Instantiate the template for one source site and one destination site.

    Both precision verdicts must pass; a portrait site's 90-degree twist is
    already part of its stored site frame, so the TCP target always coincides
    with the (effective) site frame itself.
    """
    if (src.inst.serial, src.site) == (dst.inst.serial, dst.site):
        raise DegeneratePlan(
            f"source and destination are the same site: {src.inst.serial}/{src.site}"
        )
    verdicts = {
        "src": check_precision(src.chain, src.proto),
        "dst": check_precision(dst.chain, dst.proto),
    }
    for v in verdicts.values():
        if not v.passed:
            raise PrecisionFail(v)
    a = _site_targets(src)
    b = _site_targets(dst)
    targets = {
        "h": robot.home,
        "u": robot.standby,
        "s1": a["s"],
        "s1s": a["ss"],
        "s1d": a["sd"],
        "s2": b["s"],
        "s2s": b["ss"],
        "s2d": b["sd"],
    }
    steps = tuple(
        MotionStep(kind, label, None if kind in (GRIP, RELEASE) else targets[label])
        for kind, label in TEMPLATE
    )
    return MotionPlan(
        steps=steps,
        source=(src.inst.serial, src.site),
        dest=(dst.inst.serial, dst.site),
        src_grip_mode=effective_site(src.inst, src.proto, src.site).grip_mode,
        dst_grip_mode=effective_site(dst.inst, dst.proto, dst.site).grip_mode,
        verdicts=verdicts,
    )


def conforms_to_template(plan: MotionPlan) -> bool:
    """Template check: kinds, labels, grip placement, mirrored retreats."""
    shape = tuple((s.kind, s.label) for s in plan.steps)
    if shape != TEMPLATE:
        return False
    approach_1 = [s.label for s in plan.steps[2:5]]
    retreat_1 = [s.label for s in plan.steps[6:8]]
    approach_2 = [s.label for s in plan.steps[8:11]]
    retreat_2 = [s.label for s in plan.steps[12:14]]
    return (
        retreat_1 == approach_1[-2::-1]
        and retreat_2 == approach_2[-2::-1]
        and plan.steps[5].target is None
        and plan.steps[11].target is None
    )


# ---------------------------------------------------------------------------
# collision checking


@dataclass(frozen=True)
class CollisionConfig:
    sample_spacing_mm: float = 1.0
    clearance_margin_mm: float = 2.0


@dataclass(frozen=True, eq=False)
class DevicePlacement:
    """A device's collision geometry positioned in the robot base frame."""

    serial: str
    proto: DevicePrototype
    base_pose: Pose  # device base frame in r


@dataclass(frozen=True)
class Violation:
    step_index: int
    segment: str  # "s1d->s2d"
    serial: str
    box: str
    first_hit_fraction: float
    samples_hit: int

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.segment, self.serial, self.box)


@dataclass(frozen=True, eq=False)
class CollisionReport:
    violations: tuple[Violation, ...]
    segments_checked: int
    samples_checked: int

    @property
    def ok(self) -> bool:
        return not self.violations


def _pow2_intervals(n: int) -> int:
    return 1 if n <= 1 else 1 << (n - 1).bit_length()


def _nlerp(q0: np.ndarray, q1: np.ndarray, ts: np.ndarray) -> np.ndarray:
    if float(q0 @ q1) < 0.0:
        q1 = -q1
    q = (1.0 - ts)[:, None] * q0[None, :] + ts[:, None] * q1[None, :]
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    flip = q[:, 0] < 0.0
    q[flip] *= -1.0
    return q


def _segment_distances(points: np.ndarray, p0: np.ndarray, p1: np.ndarray) -> np.ndarray:
    d = p1 - p0
    denom = float(d @ d)
    if denom == 0.0:
        return np.linalg.norm(points - p0[None, :], axis=1)
    t = np.clip((points - p0[None, :]) @ d / denom, 0.0, 1.0)
    closest = p0[None, :] + t[:, None] * d[None, :]
    return np.linalg.norm(points - closest, axis=1)


def plate_box_offset(plate: WorkpieceSpec, grip_mode: str) -> tuple[Pose, np.ndarray]:
    """Pose of the plate's footprint-box center in the TCP frame, and the
    box half extents. A portrait grip means the TCP (== site frame) is the
    plate frame rotated +90 deg about z, so the plate rides rotated -90."""
    length, width, height = plate.footprint_mm
    half = np.array([length / 2.0, width / 2.0, height / 2.0])
    center = Pose((0.0, 0.0, height / 2.0), (1.0, 0.0, 0.0, 0.0))
    if grip_mode == "portrait":
        quarter_turn = Pose.from_axis_angle((0, 0, 1), -math.pi / 2.0)
        return compose(quarter_turn, center), half
    return center, half


def check_collisions(
    plan: MotionPlan,
    placements: Sequence[DevicePlacement],
    plate: WorkpieceSpec,
    config: CollisionConfig = CollisionConfig(),
) -> CollisionReport:
    """Test the carried plate against every placed device box.

    Only MoveL segments between Grip and Release are checked (the plate is
    the collision body; an empty gripper is not modeled). See the module
    docstring for the sampling and exemption rules.
    """
    kinds = [s.kind for s in plan.steps]
    grip_idx = kinds.index(GRIP)
    release_idx = kinds.index(RELEASE)
    offset, plate_half = plate_box_offset(plate, plan.src_grip_mode)
    offset_t = offset.translation
    offset_q = offset.rotation

    # nesting corridors: serial -> list of (site TCP position, ss TCP position)
    corridors: dict[str, list[tuple[np.ndarray, np.ndarray]]] = {}
    for (serial, _site), s_label, ss_label in (
        (plan.source, "s1", "s1s"),
        (plan.dest, "s2", "s2s"),
    ):
        corridors.setdefault(serial, []).append(
            (plan.target_of(s_label).translation, plan.target_of(ss_label).translation)
        )

    violations: list[Violation] = []
    segments = 0
    samples_total = 0
    prev_target = plan.steps[grip_idx - 1].target
    prev_label = plan.steps[grip_idx - 1].label
    for index in range(grip_idx + 1, release_idx):
        step = plan.steps[index]
        if step.kind != MOVEL:
            continue
        segments += 1
        t0, q0 = prev_target.translation, prev_target.rotation
        t1, q1 = step.target.translation, step.target.rotation
        length = float(np.linalg.norm(t1 - t0))
        n_int = _pow2_intervals(math.ceil(length / config.sample_spacing_mm))
        ts = np.linspace(0.0, 1.0, n_int + 1)
        tcp_t = t0[None, :] + ts[:, None] * (t1 - t0)[None, :]
        tcp_q = _nlerp(q0, q1, ts)
        plate_t, plate_q = kernels.compose_batch(
            np.ascontiguousarray(tcp_t),
            np.ascontiguousarray(tcp_q),
            np.ascontiguousarray(np.broadcast_to(offset_t, tcp_t.shape)),
            np.ascontiguousarray(np.broadcast_to(offset_q, tcp_q.shape)),
        )
        samples_total += len(ts)
        for placement in placements:
            exempt_mask = None
            if placement.serial in corridors:
                dist = None
                for p_site, p_ss in corridors[placement.serial]:
                    d = _segment_distances(tcp_t, p_site, p_ss)
                    dist = d if dist is None else np.minimum(dist, d)
                exempt_mask = dist <= config.clearance_margin_mm
            for box in placement.proto.collision_geometry:
                box_pose = compose(placement.base_pose, box.center)
                hits = kernels.obb_hit_mask(
                    plate_t,
                    plate_q,
                    np.asarray(plate_half),
                    np.ascontiguousarray(box_pose.translation),
                    np.ascontiguousarray(box_pose.rotation),
                    np.asarray(box.half_extents_mm, dtype=np.float64),
                )
                if exempt_mask is not None:
                    hits = hits & ~exempt_mask
                if hits.any():
                    first = int(np.argmax(hits))
                    violations.append(
                        Violation(
                            step_index=index,
                            segment=f"{prev_label}->{step.label}",
                            serial=placement.serial,
                            box=box.name,
                            first_hit_fraction=float(ts[first]),
                            samples_hit=int(hits.sum()),
                        )
                    )
        prev_target = step.target
        prev_label = step.label
    violations.sort(key=lambda v: (v.step_index, v.serial, v.box))
    return CollisionReport(
        violations=tuple(violations),
        segments_checked=segments,
        samples_checked=samples_total,
    )


def plan_to_doc(plan: MotionPlan) -> dict:
    return {
        "template": "pick-and-place-15",
        "source": {"serial": plan.source[0], "site": plan.source[1], "grip_mode": plan.src_grip_mode},
        "dest": {"serial": plan.dest[0], "site": plan.dest[1], "grip_mode": plan.dst_grip_mode},
        "steps": [
            {
                "kind": s.kind,
                "label": s.label,
                "target": pose_to_doc(s.target) if s.target is not None else None,
            }
            for s in plan.steps
        ],
        "verdicts": {key: verdict_to_doc(v) for key, v in sorted(plan.verdicts.items())},
    }


def collision_report_to_doc(report: CollisionReport) -> dict:
    return {
        "ok": report.ok,
        "segments_checked": report.segments_checked,
        "samples_checked": report.samples_checked,
        "violations": [
            {
                "step_index": v.step_index,
                "segment": v.segment,
                "serial": v.serial,
                "box": v.box,
                "first_hit_fraction": v.first_hit_fraction,
                "samples_hit": v.samples_hit,
            }
            for v in report.violations
        ],
    }
