from __future__ import annotations

import dataclasses
import math

import numpy as np
import pytest

from conftest import make_exact_observation
from _helpers import quat_angle, translation_err
from lappdt.errors import DegeneratePlan, PrecisionFail
from lappdt.fixtures import CENTRIFUGE_SERIAL, HOTEL_SERIAL
from lappdt.geom import Pose, compose, invert
from lappdt.plan import (
    TEMPLATE,
    CollisionConfig,
    DevicePlacement,
    MotionPlan,
    PlannedSite,
    check_collisions,
    collision_report_to_doc,
    conforms_to_template,
    generate_pick_place,
    plan_to_doc,
    plate_box_offset,
)
from lappdt.pnp import derive_site_chain
from lappdt.twin import CollisionBox, WorkpieceSpec, instantiate


# the normative 15-step shape, spelled out independently of the module constant
EXPECTED_SEQUENCE = [
    ("MoveJ", "h"),
    ("MoveJ", "u"),
    ("MoveL", "s1d"),
    ("MoveL", "s1s"),
    ("MoveL", "s1"),
    ("Grip", "s1"),
    ("MoveL", "s1s"),
    ("MoveL", "s1d"),
    ("MoveL", "s2d"),
    ("MoveL", "s2s"),
    ("MoveL", "s2"),
    ("Release", "s2"),
    ("MoveL", "s2s"),
    ("MoveL", "s2d"),
    ("MoveJ", "u"),
]


def planned_site(robot, proto, obs, serial, site):
    inst = instantiate(proto, serial)
    return PlannedSite(proto, inst, site, derive_site_chain(robot, obs, proto, inst, site))


def device_base_in_r(robot, proto, obs):
    return compose(
        compose(robot.camera_edge.pose, obs.transform.pose),
        invert(proto.marker.device_to_marker),
    )


@pytest.fixture(scope="module")
def cf_site(robot, cf_proto, cf_obs):
    return planned_site(robot, cf_proto, cf_obs, CENTRIFUGE_SERIAL, "tray")


@pytest.fixture(scope="module")
def ph_site(robot, ph_proto, ph_obs):
    return planned_site(robot, ph_proto, ph_obs, HOTEL_SERIAL, "slot-1")


@pytest.fixture(scope="module")
def std_plan(robot, cf_site, ph_site):
    return generate_pick_place(robot, cf_site, ph_site)


@pytest.fixture(scope="module")
def placements(robot, cf_proto, ph_proto, cf_obs, ph_obs):
    return [
        DevicePlacement(CENTRIFUGE_SERIAL, cf_proto, device_base_in_r(robot, cf_proto, cf_obs)),
        DevicePlacement(HOTEL_SERIAL, ph_proto, device_base_in_r(robot, ph_proto, ph_obs)),
    ]


# ---------------------------------------------------------------------------
# template conformance


def test_plan_matches_fifteen_step_sequence(std_plan):
    assert [(s.kind, s.label) for s in std_plan.steps] == EXPECTED_SEQUENCE
    assert conforms_to_template(std_plan)
    assert len(TEMPLATE) == 15


def test_grip_release_have_no_motion_target(std_plan):
    for step in std_plan.steps:
        if step.kind in ("Grip", "Release"):
            assert step.target is None
        else:
            assert step.target is not None


def test_approach_and_retreat_mirror(std_plan):
    labels = [s.label for s in std_plan.steps]
    # in: s1d, s1s, s1 -- out: s1s, s1d (and the same shape on the place side)
    assert labels[2:5] == ["s1d", "s1s", "s1"]
    assert labels[6:8] == ["s1s", "s1d"]
    assert labels[8:11] == ["s2d", "s2s", "s2"]
    assert labels[12:14] == ["s2s", "s2d"]
    assert set(labels) == {"h", "u", "s1", "s1s", "s1d", "s2", "s2s", "s2d"}


def test_tampered_plans_fail_conformance(std_plan):
    steps = list(std_plan.steps)
    swapped = dataclasses.replace(std_plan, steps=tuple([steps[0]] + [steps[2], steps[1]] + steps[3:]))
    assert not conforms_to_template(swapped)
    truncated = dataclasses.replace(std_plan, steps=tuple(steps[:-1]))
    assert not conforms_to_template(truncated)
    relabeled = dataclasses.replace(
        std_plan,
        steps=tuple(steps[:6] + [dataclasses.replace(steps[6], label="s1d")] + steps[7:]),
    )
    assert not conforms_to_template(relabeled)
    regripped = dataclasses.replace(
        std_plan,
        steps=tuple(steps[:5] + [dataclasses.replace(steps[5], kind="Release")] + steps[6:]),
    )
    assert not conforms_to_template(regripped)


def test_targets_hang_off_derived_chain(robot, std_plan, cf_site):
    spec = cf_site.proto.sites["tray"]
    base_to_site = cf_site.chain.transform.pose
    assert translation_err(std_plan.target_of("s1"), base_to_site) == 0.0
    want_ss = compose(base_to_site, compose(invert(spec.to_site), spec.to_site_approach))
    assert translation_err(std_plan.target_of("s1s"), want_ss) < 1e-12
    assert quat_angle(std_plan.target_of("s1s"), want_ss) < 1e-12
    want_sd = compose(base_to_site, compose(invert(spec.to_site), spec.to_device_approach))
    assert translation_err(std_plan.target_of("s1d"), want_sd) < 1e-12
    assert translation_err(std_plan.target_of("h"), robot.home) == 0.0
    assert translation_err(std_plan.target_of("u"), robot.standby) == 0.0


def test_plan_records_endpoints_and_grips(std_plan):
    assert std_plan.source == (CENTRIFUGE_SERIAL, "tray")
    assert std_plan.dest == (HOTEL_SERIAL, "slot-1")
    assert std_plan.src_grip_mode == "landscape"
    assert std_plan.verdicts["src"].passed and std_plan.verdicts["dst"].passed


def test_same_site_rejected(robot, cf_site):
    with pytest.raises(DegeneratePlan):
        generate_pick_place(robot, cf_site, cf_site)


def test_same_device_different_site_allowed(robot, ph_proto, ph_obs):
    a = planned_site(robot, ph_proto, ph_obs, HOTEL_SERIAL, "slot-1")
    b = planned_site(robot, ph_proto, ph_obs, HOTEL_SERIAL, "slot-2")
    plan = generate_pick_place(robot, a, b)
    assert conforms_to_template(plan)
    assert plan.dst_grip_mode == "portrait"


def test_precision_gate_blocks_planning(robot, cf_proto, ph_site):
    coarse = make_exact_observation(robot, CENTRIFUGE_SERIAL, cf_proto, 2.0, 0.002)
    bad_src = planned_site(robot, cf_proto, coarse, CENTRIFUGE_SERIAL, "tray")
    with pytest.raises(PrecisionFail) as ei:
        generate_pick_place(robot, bad_src, ph_site)
    assert ei.value.verdict.budget_mm > ei.value.verdict.requirement_mm
    assert "precision gate failed" in str(ei.value)


# ---------------------------------------------------------------------------
# the carried plate


def test_plate_box_landscape_offset():
    plate = WorkpieceSpec()
    pose, half = plate_box_offset(plate, "landscape")
    assert np.allclose(pose.translation, [0, 0, plate.footprint_mm[2] / 2])
    assert np.allclose(pose.rotation, [1, 0, 0, 0])
    assert np.allclose(half * 2, plate.footprint_mm)


def test_plate_box_portrait_offset():
    plate = WorkpieceSpec()
    pose, half = plate_box_offset(plate, "portrait")
    # TCP frame is the plate frame turned +90 about z, so the plate rides at -90
    want_rot = Pose.from_axis_angle((0, 0, 1), -math.pi / 2)
    assert quat_angle(pose, Pose(pose.translation, want_rot.rotation)) < 1e-12
    assert np.allclose(pose.translation, [0, 0, plate.footprint_mm[2] / 2])
    # half extents stay in plate body axes; the rotation handles the swap
    assert np.allclose(half * 2, plate.footprint_mm)


# ---------------------------------------------------------------------------
# collision checking


def test_standard_transfer_is_clean(std_plan, placements, cf_proto):
    report = check_collisions(std_plan, placements, cf_proto.workpiece)
    assert report.ok
    # five carried MoveL segments: s1->s1s->s1d->s2d->s2s->s2
    assert report.segments_checked == 5
    assert report.samples_checked == 901
    doc = collision_report_to_doc(report)
    assert doc["ok"] is True and doc["violations"] == []


def wall_box_placement(robot, cf_proto):
    """A 20x160x400 mm slab parked across the s1d->s2d transfer corridor."""
    wall_pose = Pose((590.0, 60.0, 1120.0), Pose.from_axis_angle((0, 0, 1), -math.pi / 2).rotation)
    proto = dataclasses.replace(
        cf_proto,
        model="wall-w1",
        collision_geometry=(CollisionBox("slab", Pose.identity(), (10.0, 80.0, 200.0)),),
    )
    return DevicePlacement("WALL-1", proto, wall_pose), wall_pose


def test_blocking_wall_is_reported(robot, std_plan, placements, cf_proto):
    wall, _ = wall_box_placement(robot, cf_proto)
    report = check_collisions(std_plan, placements + [wall], cf_proto.workpiece)
    assert not report.ok
    assert [(v.segment, v.serial, v.box) for v in report.violations] == [
        ("s1d->s2d", "WALL-1", "slab")
    ]
    v = report.violations[0]
    assert 0.0 < v.first_hit_fraction < 1.0
    assert v.samples_hit > 0
    doc = collision_report_to_doc(report)
    assert doc["violations"][0]["segment"] == "s1d->s2d"


def test_exemption_is_corridor_local(robot, std_plan, placements, cf_proto, cf_obs):
    """Welding the wall onto the device that OWNS the pick corridor must not
    hide it: the nesting exemption covers only the seat<->hover needle."""
    _, wall_pose = wall_box_placement(robot, cf_proto)
    base = device_base_in_r(robot, cf_proto, cf_obs)
    welded = dataclasses.replace(
        cf_proto,
        collision_geometry=cf_proto.collision_geometry
        + (CollisionBox("weld-slab", compose(invert(base), wall_pose), (10.0, 80.0, 200.0)),),
    )
    swapped = [DevicePlacement(CENTRIFUGE_SERIAL, welded, base)] + list(placements[1:])
    report = check_collisions(std_plan, swapped, cf_proto.workpiece)
    assert [(v.segment, v.serial, v.box) for v in report.violations] == [
        ("s1d->s2d", CENTRIFUGE_SERIAL, "weld-slab")
    ]


def test_foreign_box_inside_corridor_not_exempt(std_plan, placements, cf_proto):
    """Only the corridor's owner earns the exemption; an unrelated device
    parked inside the pick needle is still a violation."""
    intruder = dataclasses.replace(
        cf_proto,
        model="intruder",
        collision_geometry=(CollisionBox("blocker", Pose.identity(), (30.0, 30.0, 30.0)),),
    )
    placement = DevicePlacement("INTRUDER-1", intruder, Pose((590.0, 200.0, 990.0), (1, 0, 0, 0)))
    report = check_collisions(std_plan, placements + [placement], cf_proto.workpiece)
    assert ("s1->s1s", "INTRUDER-1", "blocker") in {
        (v.segment, v.serial, v.box) for v in report.violations
    }


def test_halving_spacing_never_loses_violations(robot, std_plan, placements, cf_proto):
    wall, _ = wall_box_placement(robot, cf_proto)
    world = placements + [wall]
    coarse = check_collisions(std_plan, world, cf_proto.workpiece, CollisionConfig(1.0, 2.0))
    fine = check_collisions(std_plan, world, cf_proto.workpiece, CollisionConfig(0.5, 2.0))
    assert {v.key for v in coarse.violations} <= {v.key for v in fine.violations}
    assert fine.samples_checked > coarse.samples_checked


def test_violations_sorted_deterministically(robot, std_plan, placements, cf_proto):
    wall, _ = wall_box_placement(robot, cf_proto)
    intruder = dataclasses.replace(
        cf_proto, model="intruder",
        collision_geometry=(CollisionBox("blocker", Pose.identity(), (30.0, 30.0, 30.0)),),
    )
    world = placements + [
        wall,
        DevicePlacement("INTRUDER-1", intruder, Pose((590.0, 200.0, 990.0), (1, 0, 0, 0))),
    ]
    report = check_collisions(std_plan, world, cf_proto.workpiece)
    order = [(v.step_index, v.serial, v.box) for v in report.violations]
    assert order == sorted(order)


def test_movej_legs_not_collision_checked(robot, std_plan, cf_proto):
    """A box swallowing the home pose is ignored: home is reached by MoveJ,
    and only the carried straight-line segments are the planner's business."""
    home_blocker = dataclasses.replace(
        cf_proto, model="blocker",
        collision_geometry=(CollisionBox("lump", Pose.identity(), (50.0, 50.0, 50.0)),),
    )
    placement = DevicePlacement(
        "LUMP-1", home_blocker, Pose(robot.home.translation, (1, 0, 0, 0))
    )
    report = check_collisions(std_plan, [placement], cf_proto.workpiece)
    assert report.ok


# ---------------------------------------------------------------------------
# documents


def test_plan_to_doc_shape(std_plan):
    doc = plan_to_doc(std_plan)
    assert doc["template"] == "pick-and-place-15"
    assert len(doc["steps"]) == 15
    assert doc["source"] == {
        "serial": CENTRIFUGE_SERIAL, "site": "tray", "grip_mode": "landscape",
    }
    assert doc["dest"] == {
        "serial": HOTEL_SERIAL, "site": "slot-1", "grip_mode": "landscape",
    }
    kinds = [s["kind"] for s in doc["steps"]]
    assert kinds.count("Grip") == 1 and kinds.count("Release") == 1
    for s in doc["steps"]:
        if s["kind"] in ("Grip", "Release"):
            assert "target" not in s or s["target"] is None
    assert set(doc["verdicts"]) == {"src", "dst"}
    assert doc["verdicts"]["src"]["pass"] is True
