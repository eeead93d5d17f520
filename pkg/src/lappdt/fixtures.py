"""A small worked-example lab: two devices, one mobile robot, one station.

Everything here is built programmatically so the numbers stay consistent:
site geometry is authored in each device's base frame the way a datasheet
would give it, then converted to the marker-relative form the prototype
documents actually store. `write_example_tree` materializes the whole thing
(registry, facility, robot, ground-truth world, three scenario files) into a
directory, which is also what the CLI's init-example subcommand ships.

The layout is deliberately tight: the plate seated in the centrifuge tray
overlaps the tray's guide rails (that's the point of the nesting-corridor
exemption), while the descent path and the transfer between the two devices
stay clear of everything.
"""

from __future__ import annotations

from pathlib import Path
from types import MappingProxyType

from .geom import Pose, UncertainTransform, compose, invert
from .twin import (
    CollisionBox,
    DevicePrototype,
    FacilityTwin,
    GripperSpec,
    MarkerSpec,
    PositionSigma,
    Registry,
    RobotTwin,
    SiteSpec,
    WorkpieceSpec,
    canonical_json_bytes,
    instantiate,
    save_facility,
    save_robot,
)

VENDOR = "acme-lab"
CENTRIFUGE_MODEL = "centrifuge-x1"
HOTEL_MODEL = "plate-hotel-h2"
CENTRIFUGE_SERIAL = "CF-001"
HOTEL_SERIAL = "PH-001"
STATION = "bench-A"


def _site(
    marker: Pose, seat: Pose, hover_dz_mm: float, outer_dz_mm: float, grip_mode: str
) -> SiteSpec:
    """Author a site in the device frame; store it marker-relative.

    The hover point and the outer approach point sit straight above the seat
    along the device's +z, sharing the seat's orientation.
    """
    to_marker_inv = invert(marker)

    def lifted(dz: float) -> Pose:
        raised = Pose(
            (seat.translation[0], seat.translation[1], seat.translation[2] + dz),
            tuple(seat.rotation),
        )
        return compose(to_marker_inv, raised)

    return SiteSpec(
        to_site=compose(to_marker_inv, seat),
        to_site_approach=lifted(hover_dz_mm),
        to_device_approach=lifted(outer_dz_mm),
        grip_mode=grip_mode,
    )


def centrifuge_prototype() -> DevicePrototype:
    marker = Pose((0.0, -180.0, 150.0), Pose.from_rpy_deg((0, 0, 0), (90, 0, 0)).rotation)
    tray = Pose((0.0, -60.0, 80.0), (1.0, 0.0, 0.0, 0.0))
    return DevicePrototype(
        vendor=VENDOR,
        model=CENTRIFUGE_MODEL,
        tasks=("centrifugation",),
        workpiece=WorkpieceSpec(),
        marker=MarkerSpec(
            family="apriltag-36h11",
            size_mm=60.0,
            device_to_marker=marker,
            sigma=PositionSigma(0.0, 0.0),
        ),
        collision_geometry=(
            CollisionBox(
                name="body-back",
                center=Pose((0.0, 120.0, 25.0), (1.0, 0.0, 0.0, 0.0)),
                half_extents_mm=(220.0, 100.0, 160.0),
            ),
            CollisionBox(
                name="rail-left",
                center=Pose((-66.0, -60.0, 85.0), (1.0, 0.0, 0.0, 0.0)),
                half_extents_mm=(5.0, 50.0, 15.0),
            ),
            CollisionBox(
                name="rail-right",
                center=Pose((66.0, -60.0, 85.0), (1.0, 0.0, 0.0, 0.0)),
                half_extents_mm=(5.0, 50.0, 15.0),
            ),
        ),
        sites=MappingProxyType(
            {"tray": _site(marker, tray, 60.0, 150.0, "landscape")}
        ),
        precision_requirement_mm=1.0,
        stored_position_sigma=PositionSigma(0.5, 0.005),
    )


def hotel_prototype() -> DevicePrototype:
    marker = Pose((0.0, -150.0, 120.0), Pose.from_rpy_deg((0, 0, 0), (90, 0, 0)).rotation)
    slot_1 = Pose((-120.0, -60.0, 40.0), (1.0, 0.0, 0.0, 0.0))
    slot_2 = Pose(
        (120.0, -60.0, 40.0), Pose.from_rpy_deg((0, 0, 0), (0, 0, 90)).rotation
    )
    return DevicePrototype(
        vendor=VENDOR,
        model=HOTEL_MODEL,
        tasks=("storage",),
        workpiece=WorkpieceSpec(),
        marker=MarkerSpec(
            family="apriltag-36h11",
            size_mm=60.0,
            device_to_marker=marker,
            sigma=PositionSigma(0.0, 0.0),
        ),
        collision_geometry=(
            CollisionBox(
                name="body-back",
                center=Pose((0.0, 110.0, 40.0), (1.0, 0.0, 0.0, 0.0)),
                half_extents_mm=(240.0, 90.0, 140.0),
            ),
            CollisionBox(
                name="pillar",
                center=Pose((0.0, -60.0, 60.0), (1.0, 0.0, 0.0, 0.0)),
                half_extents_mm=(8.0, 70.0, 80.0),
            ),
        ),
        sites=MappingProxyType(
            {
                "slot-1": _site(marker, slot_1, 60.0, 170.0, "landscape"),
                "slot-2": _site(marker, slot_2, 60.0, 170.0, "portrait"),
            }
        ),
        precision_requirement_mm=1.0,
        stored_position_sigma=PositionSigma(0.5, 0.005),
    )


def example_robot() -> RobotTwin:
    return RobotTwin(
        model="moma-7",
        base_to_camera=UncertainTransform(
            Pose((80.0, 0.0, 1250.0), Pose.from_rpy_deg((0, 0, 0), (0, 15, 0)).rotation),
            0.2,
            0.0,
            "kinematic",
        ),
        base_to_tcp=UncertainTransform(
            Pose((350.0, 0.0, 900.0), (1.0, 0.0, 0.0, 0.0)), 0.2, 0.0, "kinematic"
        ),
        home=Pose((350.0, 0.0, 900.0), (1.0, 0.0, 0.0, 0.0)),
        standby=Pose((500.0, 0.0, 1150.0), (1.0, 0.0, 0.0, 0.0)),
        gripper=GripperSpec(stroke_mm=150.0, finger_clearance_mm=12.0),
    )


def example_facility() -> FacilityTwin:
    dock = UncertainTransform(
        Pose((2500.0, 1400.0, 0.0), Pose.from_rpy_deg((0, 0, 0), (0, 0, 90)).rotation),
        20.0,
        0.01,
        "odometry",
    )
    return FacilityTwin(
        map_id="lab-west-2f",
        pois=MappingProxyType({STATION: dock}),
        devices=(
            instantiate(centrifuge_prototype(), CENTRIFUGE_SERIAL),
            instantiate(hotel_prototype(), HOTEL_SERIAL),
        ),
    )


# True device-base poses in the world frame; identity orientation means the
# device frames are axis-aligned with the facility map.
TRUE_DEVICE_POSES = {
    CENTRIFUGE_SERIAL: Pose((2300.0, 2050.0, 900.0), (1.0, 0.0, 0.0, 0.0)),
    HOTEL_SERIAL: Pose((2700.0, 2050.0, 900.0), (1.0, 0.0, 0.0, 0.0)),
}


def world_doc() -> dict:
    from .geom import pose_to_doc

    return {
        "devices": {
            serial: {"world_pose": pose_to_doc(pose)}
            for serial, pose in sorted(TRUE_DEVICE_POSES.items())
        }
    }


def observations_doc() -> dict:
    """Noise-free marker sightings from the docked pose, for CLI walkthroughs.

    The carried uncertainty is a typical calibrated-stack figure, not zero:
    downstream budget math should behave exactly as it would live.
    """
    from .geom import uncertain_to_doc
    from .sim import true_marker_in_camera

    robot = example_robot()
    dock = example_facility().pois[STATION].pose
    out = {}
    for serial, proto in (
        (CENTRIFUGE_SERIAL, centrifuge_prototype()),
        (HOTEL_SERIAL, hotel_prototype()),
    ):
        exact = true_marker_in_camera(
            dock,
            robot.camera_edge.pose,
            TRUE_DEVICE_POSES[serial],
            proto.marker.device_to_marker,
        )
        out[serial] = uncertain_to_doc(UncertainTransform(exact, 0.5, 0.002, "vision"))
    return {"observations": out}


def _scenario_common() -> dict:
    return {
        "registry_dir": "../registry",
        "facility": "../facility.json",
        "robot": "../robot.json",
        "world": "../world.json",
        "stations": {STATION: [CENTRIFUGE_SERIAL, HOTEL_SERIAL]},
        "plans": [
            {"src": f"{CENTRIFUGE_SERIAL}:tray", "dst": f"{HOTEL_SERIAL}:slot-1"},
            {"src": f"{HOTEL_SERIAL}:slot-1", "dst": f"{HOTEL_SERIAL}:slot-2"},
        ],
    }


def scenario_docs() -> dict[str, dict]:
    zero = {
        **_scenario_common(),
        "name": "two-device-zero-noise",
        "seed": 20260815,
        "trials": 10,
        "noise": {
            "odometry": {"sigma_t_mm": 0.0, "sigma_r_rad": 0.0},
            "vision": {"sigma_t_mm": 0.0, "sigma_r_rad": 0.0},
        },
        "tolerances": {
            "max_pose_error_mm": 1e-06,
            "max_rot_error_deg": 1e-05,
            "max_world_error_mm": 1e-06,
            "world_local_budget_ratio_min": 20.0,
            "require_verdicts_pass": True,
            "require_no_collisions": True,
        },
    }
    noisy = {
        **_scenario_common(),
        "name": "two-device-noisy",
        "seed": 20260816,
        "trials": 1000,
        "noise": {
            "odometry": {"sigma_t_mm": 20.0, "sigma_r_rad": 0.01},
            "vision": {"sigma_t_mm": 0.5, "sigma_r_rad": 0.002},
        },
        "tolerances": {
            "max_pose_error_mm": 5.0,
            "max_rot_error_deg": 1.0,
            "max_world_error_mm": 250.0,
            "max_mean_error_mm": 0.2,
            "std_ratio_band": [0.8, 1.2],
            "world_local_budget_ratio_min": 20.0,
            "require_verdicts_pass": True,
            "require_no_collisions": True,
        },
    }
    # Deliberately broken optics: the 2 mm vision figure blows the 1 mm site
    # requirement, so the precision gates veto both plans and the report
    # fails. Kept failing on purpose as the CLI's exit-1 demonstration.
    out_of_spec = {
        **_scenario_common(),
        "name": "out-of-spec",
        "seed": 20260817,
        "trials": 20,
        "noise": {
            "odometry": {"sigma_t_mm": 20.0, "sigma_r_rad": 0.01},
            "vision": {"sigma_t_mm": 2.0, "sigma_r_rad": 0.002},
        },
        "tolerances": {
            "require_verdicts_pass": True,
        },
    }
    return {doc["name"]: doc for doc in (zero, noisy, out_of_spec)}


def write_example_tree(root: str | Path, force: bool = False) -> list[Path]:
    """Materialize the example lab under root; returns the files written."""
    root = Path(root)
    if root.exists() and any(root.iterdir()) and not force:
        raise FileExistsError(f"{root} is not empty (use force to overwrite)")
    root.mkdir(parents=True, exist_ok=True)

    written: list[Path] = []
    registry = Registry(root / "registry")
    for proto in (centrifuge_prototype(), hotel_prototype()):
        path = registry._proto_path(proto.vendor, proto.model)
        if force and path.exists():
            path.unlink()
        registry.put_prototype(proto)
        written.append(path)
    facility = example_facility()
    for inst in facility.devices:
        path = registry._inst_path(inst.serial)
        if force and path.exists():
            path.unlink()
        registry.put_instance(inst)
        written.append(path)

    files = {
        root / "facility.json": save_facility(facility),
        root / "robot.json": save_robot(example_robot()),
        root / "world.json": canonical_json_bytes(world_doc()),
        root / "observations.json": canonical_json_bytes(observations_doc()),
    }
    for name, doc in scenario_docs().items():
        files[root / "scenarios" / f"{name}.json"] = canonical_json_bytes(doc)
    for path, payload in files.items():
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(payload)
        written.append(path)
    return written
