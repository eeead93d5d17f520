"""Digital-twin documents: device prototypes, instances, robots, facilities.

Documents are JSON. Quantity fields carry their unit in the field name
(size_mm, sigma_r_rad); poses serialize as {"t": [x,y,z], "q": [w,x,y,z]}
with rpy_deg accepted on input only. Validation errors point at the
offending field with a JSON-pointer-style path.

The registry is a plain directory:
    prototypes/<vendor>__<model>.json   (immutable once written)
    instances/<serial>.json             (compare-and-swap on revision)
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from types import MappingProxyType
from typing import Mapping

from .errors import (
    EmptySerial,
    NotFound,
    ParseError,
    SchemaError,
    UnitError,
    UnknownSite,
    VersionConflict,
)
from .geom import (
    Pose,
    UncertainTransform,
    pose_from_doc,
    pose_to_doc,
    uncertain_from_doc,
    uncertain_to_doc,
)

_SLUG = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._-]*$")
_UNIT_SUFFIXES = ("_mm", "_rad", "_deg")

GRIP_MODES = ("landscape", "portrait")

# Normative microplate coordinate system, shared by plate, gripper TCP and
# site frames: origin at the plate's center in x/y, z zero at the middle of
# the bottom rim. Viewed from above with well A1 in the far-left corner of
# the long top edge, x runs right along the long edge, y up along the short
# edge, z points out of the plate. A portrait site frame is this frame
# rotated 90 degrees about z.
PLATE_CS_CONVENTION = (
    "origin at plate center, z at middle of bottom rim; viewed from above "
    "with A1 top-left: x right along long edge, y up along short edge, z out "
    "of plate; portrait = rotated 90 deg about z"
)

ANSI_SLAS_FOOTPRINT_MM = (127.76, 85.48, 14.35)


# ---------------------------------------------------------------------------
# types


@dataclass(frozen=True, eq=False)
class WorkpieceSpec:
    kind: str = "ansi_slas_microplate"
    footprint_mm: tuple[float, float, float] = ANSI_SLAS_FOOTPRINT_MM
    cs_convention: str = PLATE_CS_CONVENTION


@dataclass(frozen=True, eq=False)
class PositionSigma:
    """Uncertainty attached to positions stored in twin documents."""

    sigma_t_mm: float = 0.5
    sigma_r_rad: float = 0.005


@dataclass(frozen=True, eq=False)
class MarkerSpec:
    family: str
    size_mm: float
    device_to_marker: Pose  # mounted marker in the device base frame
    sigma: PositionSigma = field(default_factory=lambda: PositionSigma(0.0, 0.0))


@dataclass(frozen=True, eq=False)
class CollisionBox:
    name: str
    center: Pose  # box frame in the device base frame
    half_extents_mm: tuple[float, float, float]


@dataclass(frozen=True, eq=False)
class SiteSpec:
    """Marker-relative geometry of one handover site."""

    to_site: Pose  # marker -> site
    to_site_approach: Pose  # marker -> hover point straight above the site
    to_device_approach: Pose  # marker -> outer approach point of the device
    grip_mode: str = "landscape"


@dataclass(frozen=True, eq=False)
class DevicePrototype:
    vendor: str
    model: str
    tasks: tuple[str, ...]
    workpiece: WorkpieceSpec
    marker: MarkerSpec
    collision_geometry: tuple[CollisionBox, ...]
    sites: Mapping[str, SiteSpec]
    precision_requirement_mm: float
    stored_position_sigma: PositionSigma = field(default_factory=PositionSigma)


@dataclass(frozen=True, eq=False)
class DeviceInstance:
    vendor: str
    model: str
    serial: str
    revision: int = 1
    location: UncertainTransform | None = None  # world -> device, volatile
    calibrated_sites: Mapping[str, Pose] = field(
        default_factory=lambda: MappingProxyType({})
    )
    state: Mapping[str, object] = field(default_factory=lambda: MappingProxyType({}))


@dataclass(frozen=True, eq=False)
class GripperSpec:
    stroke_mm: float
    finger_clearance_mm: float


@dataclass(frozen=True, eq=False)
class RobotTwin:
    model: str
    base_to_camera: UncertainTransform
    base_to_tcp: UncertainTransform
    home: Pose  # named TCP pose "h" in the base frame
    standby: Pose  # named TCP pose "u" in the base frame
    gripper: GripperSpec
    calibrated_base_to_camera: UncertainTransform | None = None
    calibrated_base_to_tcp: UncertainTransform | None = None

    @property
    def camera_edge(self) -> UncertainTransform:
        return self.calibrated_base_to_camera or self.base_to_camera

    @property
    def tcp_edge(self) -> UncertainTransform:
        return self.calibrated_base_to_tcp or self.base_to_tcp


@dataclass(frozen=True, eq=False)
class FacilityTwin:
    map_id: str
    pois: Mapping[str, UncertainTransform]  # station -> world -> poi, odometry-class
    devices: tuple[DeviceInstance, ...]

    def instance(self, serial: str) -> DeviceInstance:
        for inst in self.devices:
            if inst.serial == serial:
                return inst
        raise NotFound(f"no device instance {serial!r} in facility {self.map_id!r}")

    def with_instance(self, updated: DeviceInstance) -> "FacilityTwin":
        devices = tuple(
            updated if inst.serial == updated.serial else inst for inst in self.devices
        )
        return replace(self, devices=devices)


# Every twin field is classified in the parameter hierarchy; the test suite
# asserts this table is total over the dataclasses above.
PARAMETER_KINDS: dict[str, str] = {
    "WorkpieceSpec.kind": "prototype",
    "WorkpieceSpec.footprint_mm": "prototype",
    "WorkpieceSpec.cs_convention": "prototype",
    "PositionSigma.sigma_t_mm": "prototype",
    "PositionSigma.sigma_r_rad": "prototype",
    "MarkerSpec.family": "prototype",
    "MarkerSpec.size_mm": "prototype",
    "MarkerSpec.device_to_marker": "prototype",
    "MarkerSpec.sigma": "prototype",
    "CollisionBox.name": "prototype",
    "CollisionBox.center": "prototype",
    "CollisionBox.half_extents_mm": "prototype",
    "SiteSpec.to_site": "prototype",
    "SiteSpec.to_site_approach": "prototype",
    "SiteSpec.to_device_approach": "prototype",
    "SiteSpec.grip_mode": "prototype",
    "DevicePrototype.vendor": "prototype",
    "DevicePrototype.model": "prototype",
    "DevicePrototype.tasks": "prototype",
    "DevicePrototype.workpiece": "prototype",
    "DevicePrototype.marker": "prototype",
    "DevicePrototype.collision_geometry": "prototype",
    "DevicePrototype.sites": "prototype",
    "DevicePrototype.precision_requirement_mm": "prototype",
    "DevicePrototype.stored_position_sigma": "prototype",
    "DeviceInstance.vendor": "instance-static",
    "DeviceInstance.model": "instance-static",
    "DeviceInstance.serial": "instance-static",
    "DeviceInstance.revision": "instance-volatile-observable",  # readable bookkeeping
    "DeviceInstance.location": "instance-volatile-unobservable",  # w->d, cannot be queried
    "DeviceInstance.calibrated_sites": "instance-volatile-unobservable",
    "DeviceInstance.state": "instance-volatile-observable",
    "GripperSpec.stroke_mm": "prototype",
    "GripperSpec.finger_clearance_mm": "prototype",
    "RobotTwin.model": "prototype",
    "RobotTwin.base_to_camera": "prototype",
    "RobotTwin.base_to_tcp": "prototype",
    "RobotTwin.home": "prototype",
    "RobotTwin.standby": "prototype",
    "RobotTwin.gripper": "prototype",
    "RobotTwin.calibrated_base_to_camera": "instance-volatile-unobservable",
    "RobotTwin.calibrated_base_to_tcp": "instance-volatile-unobservable",
    "FacilityTwin.map_id": "instance-static",
    "FacilityTwin.pois": "instance-volatile-unobservable",  # odometry-class map data
    "FacilityTwin.devices": "instance-static",
}


# ---------------------------------------------------------------------------
# validation plumbing


class _Obj:
    """Path-tracking reader over one JSON object; rejects unknown fields."""

    def __init__(self, data: object, path: str):
        if not isinstance(data, dict):
            raise SchemaError(path, "expected an object")
        self.data = data
        self.path = path
        self.seen: set[str] = set()

    def sub(self, key: str) -> str:
        return f"{self.path}/{key}"

    def has(self, key: str) -> bool:
        return key in self.data

    def raw(self, key: str, required: bool = True, default=None):
        if key not in self.data:
            if required:
                raise SchemaError(self.path, f"missing field '{key}'")
            return default
        self.seen.add(key)
        return self.data[key]

    def str_(self, key: str, required: bool = True, default=None, slug: bool = False):
        v = self.raw(key, required, default)
        if v is default and not required and key not in self.data:
            return default
        if not isinstance(v, str):
            raise SchemaError(self.sub(key), "expected a string")
        if slug and not _SLUG.match(v):
            raise SchemaError(
                self.sub(key), "expected letters/digits/._- and no leading punctuation"
            )
        return v

    def num(self, key: str, required: bool = True, default=None, minimum=None, positive=False):
        v = self.raw(key, required, default)
        if v is default and not required and key not in self.data:
            return default
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise SchemaError(self.sub(key), "expected a number")
        v = float(v)
        if positive and v <= 0:
            raise SchemaError(self.sub(key), "must be > 0")
        if minimum is not None and v < minimum:
            raise SchemaError(self.sub(key), f"must be >= {minimum}")
        return v

    def int_(self, key: str, required: bool = True, default=None, minimum=None):
        v = self.raw(key, required, default)
        if v is default and not required and key not in self.data:
            return default
        if isinstance(v, bool) or not isinstance(v, int):
            raise SchemaError(self.sub(key), "expected an integer")
        if minimum is not None and v < minimum:
            raise SchemaError(self.sub(key), f"must be >= {minimum}")
        return v

    def vec3(self, key: str, positive: bool = False) -> tuple[float, float, float]:
        v = self.raw(key)
        if not isinstance(v, (list, tuple)) or len(v) != 3:
            raise SchemaError(self.sub(key), "expected a list of 3 numbers")
        out = []
        for i, x in enumerate(v):
            if isinstance(x, bool) or not isinstance(x, (int, float)):
                raise SchemaError(f"{self.sub(key)}/{i}", "expected a number")
            if positive and x <= 0:
                raise SchemaError(f"{self.sub(key)}/{i}", "must be > 0")
            out.append(float(x))
        return tuple(out)

    def obj(self, key: str, required: bool = True) -> "_Obj | None":
        v = self.raw(key, required)
        if v is None and not required:
            return None
        return _Obj(v, self.sub(key))

    def pose(self, key: str) -> Pose:
        self.seen.add(key)
        if key not in self.data:
            raise SchemaError(self.path, f"missing field '{key}'")
        return pose_from_doc(self.data[key], self.sub(key))

    def uncertain(self, key: str) -> UncertainTransform:
        self.seen.add(key)
        if key not in self.data:
            raise SchemaError(self.path, f"missing field '{key}'")
        return uncertain_from_doc(self.data[key], self.sub(key))

    def finish(self):
        """Reject unknown fields; suggest the suffixed form when it exists."""
        for key in self.data:
            if key in self.seen or key in self._expected:
                continue
            for suffix in _UNIT_SUFFIXES:
                if any(k == key + suffix for k in self.seen) or any(
                    k == key + suffix for k in self._expected
                ):
                    raise UnitError(
                        self.sub(key), f"missing unit suffix; expected '{key + suffix}'"
                    )
            raise SchemaError(self.sub(key), "unknown field")

    _expected: set[str] = frozenset()

    def expect(self, *keys: str) -> "_Obj":
        self._expected = set(keys)
        return self


def _parse_json(data: bytes | str) -> object:
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        return json.loads(data)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}") from None


def canonical_json_bytes(doc: object) -> bytes:
    return (json.dumps(doc, sort_keys=True, indent=2, ensure_ascii=False) + "\n").encode()


def _f(v: float) -> float:
    return float(v)


# ---------------------------------------------------------------------------
# prototype documents


def _sigma_from(o: _Obj, key: str, default: PositionSigma) -> PositionSigma:
    if not o.has(key):
        return default
    s = o.obj(key)
    # scan for bare/unknown keys first so `sigma_t` is diagnosed as a missing
    # unit suffix, not as an absent `sigma_t_mm`
    s.expect("sigma_t_mm", "sigma_r_rad").finish()
    return PositionSigma(
        s.num("sigma_t_mm", minimum=0.0), s.num("sigma_r_rad", minimum=0.0)
    )


def prototype_from_doc(doc: object, path: str = "") -> DevicePrototype:
    o = _Obj(doc, path)
    vendor = o.str_("vendor", slug=True)
    model = o.str_("model", slug=True)
    tasks_raw = o.raw("tasks")
    if not isinstance(tasks_raw, list) or not tasks_raw:
        raise SchemaError(o.sub("tasks"), "expected a non-empty list of strings")
    tasks = []
    for i, t in enumerate(tasks_raw):
        if not isinstance(t, str):
            raise SchemaError(f"{o.sub('tasks')}/{i}", "expected a string")
        tasks.append(t)

    w = o.obj("workpiece")
    workpiece = WorkpieceSpec(
        kind=w.str_("kind"),
        footprint_mm=w.vec3("footprint_mm", positive=True),
        cs_convention=w.str_("cs_convention", required=False, default=PLATE_CS_CONVENTION),
    )
    w.expect("kind", "footprint_mm", "cs_convention").finish()

    m = o.obj("marker")
    marker = MarkerSpec(
        family=m.str_("family"),
        size_mm=m.num("size_mm", positive=True),
        device_to_marker=m.pose("device_to_marker"),
        sigma=_sigma_from(m, "sigma", PositionSigma(0.0, 0.0)),
    )
    m.expect("family", "size_mm", "device_to_marker", "sigma").finish()

    boxes_raw = o.raw("collision_geometry", required=False, default=[])
    if not isinstance(boxes_raw, list):
        raise SchemaError(o.sub("collision_geometry"), "expected a list")
    boxes = []
    for i, entry in enumerate(boxes_raw):
        b = _Obj(entry, f"{o.sub('collision_geometry')}/{i}")
        boxes.append(
            CollisionBox(
                name=b.str_("name", required=False, default=f"box-{i}"),
                center=b.pose("center"),
                half_extents_mm=b.vec3("half_extents_mm", positive=True),
            )
        )
        b.expect("name", "center", "half_extents_mm").finish()

    sites_raw = o.raw("sites")
    if not isinstance(sites_raw, dict):
        raise SchemaError(o.sub("sites"), "expected an object of site specs")
    sites = {}
    for site_id in sites_raw:
        if not _SLUG.match(site_id):
            raise SchemaError(f"{o.sub('sites')}/{site_id}", "invalid site id")
        s = _Obj(sites_raw[site_id], f"{o.sub('sites')}/{site_id}")
        grip = s.str_("grip_mode", required=False, default="landscape")
        if grip not in GRIP_MODES:
            raise SchemaError(s.sub("grip_mode"), f"expected one of {', '.join(GRIP_MODES)}")
        sites[site_id] = SiteSpec(
            to_site=s.pose("to_site"),
            to_site_approach=s.pose("to_site_approach"),
            to_device_approach=s.pose("to_device_approach"),
            grip_mode=grip,
        )
        s.expect("to_site", "to_site_approach", "to_device_approach", "grip_mode").finish()

    proto = DevicePrototype(
        vendor=vendor,
        model=model,
        tasks=tuple(tasks),
        workpiece=workpiece,
        marker=marker,
        collision_geometry=tuple(boxes),
        sites=MappingProxyType(sites),
        precision_requirement_mm=o.num("precision_requirement_mm", positive=True),
        stored_position_sigma=_sigma_from(o, "stored_position_sigma", PositionSigma()),
    )
    o.expect(
        "vendor",
        "model",
        "tasks",
        "workpiece",
        "marker",
        "collision_geometry",
        "sites",
        "precision_requirement_mm",
        "stored_position_sigma",
    ).finish()
    return proto


def prototype_to_doc(p: DevicePrototype) -> dict:
    return {
        "vendor": p.vendor,
        "model": p.model,
        "tasks": list(p.tasks),
        "workpiece": {
            "kind": p.workpiece.kind,
            "footprint_mm": [_f(v) for v in p.workpiece.footprint_mm],
            "cs_convention": p.workpiece.cs_convention,
        },
        "marker": {
            "family": p.marker.family,
            "size_mm": _f(p.marker.size_mm),
            "device_to_marker": pose_to_doc(p.marker.device_to_marker),
            "sigma": {
                "sigma_t_mm": _f(p.marker.sigma.sigma_t_mm),
                "sigma_r_rad": _f(p.marker.sigma.sigma_r_rad),
            },
        },
        "collision_geometry": [
            {
                "name": b.name,
                "center": pose_to_doc(b.center),
                "half_extents_mm": [_f(v) for v in b.half_extents_mm],
            }
            for b in p.collision_geometry
        ],
        "sites": {
            site_id: {
                "to_site": pose_to_doc(s.to_site),
                "to_site_approach": pose_to_doc(s.to_site_approach),
                "to_device_approach": pose_to_doc(s.to_device_approach),
                "grip_mode": s.grip_mode,
            }
            for site_id, s in sorted(p.sites.items())
        },
        "precision_requirement_mm": _f(p.precision_requirement_mm),
        "stored_position_sigma": {
            "sigma_t_mm": _f(p.stored_position_sigma.sigma_t_mm),
            "sigma_r_rad": _f(p.stored_position_sigma.sigma_r_rad),
        },
    }


def load_prototype(data: bytes | str) -> DevicePrototype:
    return prototype_from_doc(_parse_json(data))


def save_prototype(p: DevicePrototype) -> bytes:
    return canonical_json_bytes(prototype_to_doc(p))


# ---------------------------------------------------------------------------
# instance documents


def instance_from_doc(doc: object, path: str = "") -> DeviceInstance:
    o = _Obj(doc, path)
    serial = o.str_("serial")
    if not serial:
        raise EmptySerial(f"{path or '/'}: serial must be non-empty")
    if not _SLUG.match(serial):
        raise SchemaError(o.sub("serial"), "invalid serial")
    location = None
    if o.has("location") and o.raw("location", required=False) is not None:
        location = o.uncertain("location")
    else:
        o.seen.add("location")
    calibrated: dict[str, Pose] = {}
    cal_raw = o.raw("calibrated_sites", required=False, default={})
    if not isinstance(cal_raw, dict):
        raise SchemaError(o.sub("calibrated_sites"), "expected an object")
    for site_id, pose_doc in cal_raw.items():
        calibrated[site_id] = pose_from_doc(pose_doc, f"{o.sub('calibrated_sites')}/{site_id}")
    state_raw = o.raw("state", required=False, default={})
    if not isinstance(state_raw, dict):
        raise SchemaError(o.sub("state"), "expected an object")
    inst = DeviceInstance(
        vendor=o.str_("vendor", slug=True),
        model=o.str_("model", slug=True),
        serial=serial,
        revision=o.int_("revision", required=False, default=1, minimum=1),
        location=location,
        calibrated_sites=MappingProxyType(calibrated),
        state=MappingProxyType(dict(state_raw)),
    )
    o.expect("vendor", "model", "serial", "revision", "location", "calibrated_sites", "state").finish()
    return inst


def instance_to_doc(i: DeviceInstance) -> dict:
    return {
        "vendor": i.vendor,
        "model": i.model,
        "serial": i.serial,
        "revision": int(i.revision),
        "location": uncertain_to_doc(i.location) if i.location is not None else None,
        "calibrated_sites": {
            site_id: pose_to_doc(p) for site_id, p in sorted(i.calibrated_sites.items())
        },
        "state": dict(i.state),
    }


def load_instance(data: bytes | str) -> DeviceInstance:
    return instance_from_doc(_parse_json(data))


def save_instance(i: DeviceInstance) -> bytes:
    return canonical_json_bytes(instance_to_doc(i))


# ---------------------------------------------------------------------------
# robot documents


def robot_from_doc(doc: object, path: str = "") -> RobotTwin:
    o = _Obj(doc, path)

    def kinematic(key: str, required: bool = True) -> UncertainTransform | None:
        if not required and (not o.has(key) or o.raw(key, required=False) is None):
            o.seen.add(key)
            return None
        edge = o.uncertain(key)
        if edge.source != "kinematic":
            raise SchemaError(f"{o.sub(key)}/source", "robot edges must be 'kinematic'")
        return edge

    g = o.obj("gripper")
    gripper = GripperSpec(
        stroke_mm=g.num("stroke_mm", positive=True),
        finger_clearance_mm=g.num("finger_clearance_mm", minimum=0.0),
    )
    g.expect("stroke_mm", "finger_clearance_mm").finish()
    twin = RobotTwin(
        model=o.str_("model", slug=True),
        base_to_camera=kinematic("base_to_camera"),
        base_to_tcp=kinematic("base_to_tcp"),
        home=o.pose("home"),
        standby=o.pose("standby"),
        gripper=gripper,
        calibrated_base_to_camera=kinematic("calibrated_base_to_camera", required=False),
        calibrated_base_to_tcp=kinematic("calibrated_base_to_tcp", required=False),
    )
    o.expect(
        "model",
        "base_to_camera",
        "base_to_tcp",
        "home",
        "standby",
        "gripper",
        "calibrated_base_to_camera",
        "calibrated_base_to_tcp",
    ).finish()
    return twin


def robot_to_doc(r: RobotTwin) -> dict:
    doc = {
        "model": r.model,
        "base_to_camera": uncertain_to_doc(r.base_to_camera),
        "base_to_tcp": uncertain_to_doc(r.base_to_tcp),
        "home": pose_to_doc(r.home),
        "standby": pose_to_doc(r.standby),
        "gripper": {
            "stroke_mm": _f(r.gripper.stroke_mm),
            "finger_clearance_mm": _f(r.gripper.finger_clearance_mm),
        },
        "calibrated_base_to_camera": (
            uncertain_to_doc(r.calibrated_base_to_camera)
            if r.calibrated_base_to_camera
            else None
        ),
        "calibrated_base_to_tcp": (
            uncertain_to_doc(r.calibrated_base_to_tcp) if r.calibrated_base_to_tcp else None
        ),
    }
    return doc


def load_robot(data: bytes | str) -> RobotTwin:
    return robot_from_doc(_parse_json(data))


def save_robot(r: RobotTwin) -> bytes:
    return canonical_json_bytes(robot_to_doc(r))


# ---------------------------------------------------------------------------
# facility documents


def facility_from_doc(doc: object, path: str = "") -> FacilityTwin:
    o = _Obj(doc, path)
    pois_raw = o.raw("pois")
    if not isinstance(pois_raw, dict):
        raise SchemaError(o.sub("pois"), "expected an object of uncertain transforms")
    pois = {}
    for station, entry in pois_raw.items():
        if not _SLUG.match(station):
            raise SchemaError(f"{o.sub('pois')}/{station}", "invalid station name")
        edge = uncertain_from_doc(entry, f"{o.sub('pois')}/{station}")
        if edge.source != "odometry":
            raise SchemaError(
                f"{o.sub('pois')}/{station}/source",
                "docking targets carry odometry-class uncertainty",
            )
        pois[station] = edge
    devices_raw = o.raw("devices", required=False, default=[])
    if not isinstance(devices_raw, list):
        raise SchemaError(o.sub("devices"), "expected a list of device instances")
    devices = tuple(
        instance_from_doc(entry, f"{o.sub('devices')}/{i}")
        for i, entry in enumerate(devices_raw)
    )
    seen_serials = set()
    for i, d in enumerate(devices):
        if d.serial in seen_serials:
            raise SchemaError(f"{o.sub('devices')}/{i}/serial", "duplicate serial")
        seen_serials.add(d.serial)
    facility = FacilityTwin(
        map_id=o.str_("map_id", slug=True),
        pois=MappingProxyType(pois),
        devices=devices,
    )
    o.expect("map_id", "pois", "devices").finish()
    return facility


def facility_to_doc(f: FacilityTwin) -> dict:
    return {
        "map_id": f.map_id,
        "pois": {station: uncertain_to_doc(e) for station, e in sorted(f.pois.items())},
        "devices": [instance_to_doc(d) for d in f.devices],
    }


def load_facility(data: bytes | str) -> FacilityTwin:
    return facility_from_doc(_parse_json(data))


def save_facility(f: FacilityTwin) -> bytes:
    return canonical_json_bytes(facility_to_doc(f))


# ---------------------------------------------------------------------------
# operations


def instantiate(p: DevicePrototype, serial: str) -> DeviceInstance:
    """A fresh instance of a prototype; location unknown until discovery."""
    if not serial:
        raise EmptySerial("serial must be non-empty")
    if not _SLUG.match(serial):
        raise EmptySerial(f"invalid serial {serial!r}")
    return DeviceInstance(vendor=p.vendor, model=p.model, serial=serial)


def effective_site(i: DeviceInstance, p: DevicePrototype, site: str) -> SiteSpec:
    """The prototype site with the calibrated to_site override applied.

    Calibration replaces only the site position itself; approach geometry
    stays prototype-relative.
    """
    if site not in p.sites:
        raise UnknownSite(f"prototype {p.vendor}/{p.model} has no site {site!r}")
    spec = p.sites[site]
    override = i.calibrated_sites.get(site)
    if override is not None:
        spec = replace(spec, to_site=override)
    return spec


def site_edges(
    i: DeviceInstance, p: DevicePrototype, site: str
) -> dict[str, UncertainTransform]:
    """Marker->site edges with the stored-position uncertainty attached."""
    spec = effective_site(i, p, site)
    sig = p.stored_position_sigma
    return {
        key: UncertainTransform(pose, sig.sigma_t_mm, sig.sigma_r_rad, "dt_stored")
        for key, pose in (
            ("to_site", spec.to_site),
            ("to_site_approach", spec.to_site_approach),
            ("to_device_approach", spec.to_device_approach),
        )
    }


def set_calibration(
    i: DeviceInstance, p: DevicePrototype, site: str, measured: Pose
) -> DeviceInstance:
    """Record a robot-measured marker->site pose; bumps the revision."""
    if site not in p.sites:
        raise UnknownSite(f"prototype {p.vendor}/{p.model} has no site {site!r}")
    calibrated = dict(i.calibrated_sites)
    calibrated[site] = measured
    return replace(
        i,
        calibrated_sites=MappingProxyType(calibrated),
        revision=i.revision + 1,
    )


# ---------------------------------------------------------------------------
# registry


class Registry:
    """Directory-backed twin store.

    Prototypes are immutable: a second put for the same vendor/model raises
    VersionConflict. Instances use compare-and-swap: a put must carry exactly
    stored_revision + 1 (or 1 for a new serial), so a writer holding a stale
    revision fails instead of silently clobbering a newer write. Writes are
    atomic via os.replace; between racing processes the CAS read-check-write
    is advisory, which is adequate for the single-operator CLI usage here.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def _proto_path(self, vendor: str, model: str) -> Path:
        if not _SLUG.match(vendor) or not _SLUG.match(model):
            raise SchemaError("/vendor", "invalid vendor/model for registry path")
        return self.root / "prototypes" / f"{vendor}__{model}.json"

    def _inst_path(self, serial: str) -> Path:
        if not serial:
            raise EmptySerial("serial must be non-empty")
        if not _SLUG.match(serial):
            raise EmptySerial(f"invalid serial {serial!r}")
        return self.root / "instances" / f"{serial}.json"

    @staticmethod
    def _write_atomic(path: Path, payload: bytes):
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        tmp.write_bytes(payload)
        os.replace(tmp, path)

    def put_prototype(self, p: DevicePrototype) -> None:
        path = self._proto_path(p.vendor, p.model)
        if path.exists():
            raise VersionConflict(
                f"prototype {p.vendor}/{p.model} is already registered (immutable)"
            )
        self._write_atomic(path, save_prototype(p))

    def get_prototype(self, vendor: str, model: str) -> DevicePrototype:
        path = self._proto_path(vendor, model)
        if not path.exists():
            raise NotFound(f"prototype {vendor}/{model} not in registry")
        return load_prototype(path.read_bytes())

    def put_instance(self, i: DeviceInstance) -> None:
        path = self._inst_path(i.serial)
        if path.exists():
            stored = load_instance(path.read_bytes())
            expected = stored.revision + 1
        else:
            expected = 1
        if i.revision != expected:
            raise VersionConflict(
                f"instance {i.serial}: revision {i.revision} does not follow "
                f"stored state (expected {expected})"
            )
        self._write_atomic(path, save_instance(i))

    def get_instance(self, serial: str) -> DeviceInstance:
        path = self._inst_path(serial)
        if not path.exists():
            raise NotFound(f"instance {serial!r} not in registry")
        return load_instance(path.read_bytes())

    def prototype_for(self, i: DeviceInstance) -> DevicePrototype:
        return self.get_prototype(i.vendor, i.model)

    def list_prototypes(self) -> list[tuple[str, str]]:
        d = self.root / "prototypes"
        out = []
        if d.is_dir():
            for f in sorted(d.glob("*.json")):
                vendor, _, model = f.stem.partition("__")
                out.append((vendor, model))
        return out

    def list_instances(self) -> list[str]:
        d = self.root / "instances"
        return sorted(f.stem for f in d.glob("*.json")) if d.is_dir() else []


def detect_kind(doc: object) -> str:
    """Best-effort classification of a twin document for the CLI."""
    if not isinstance(doc, dict):
        raise SchemaError("", "expected a JSON object")
    if "precision_requirement_mm" in doc or ("marker" in doc and "sites" in doc):
        return "prototype"
    if "serial" in doc:
        return "instance"
    if "pois" in doc:
        return "facility"
    if "gripper" in doc:
        return "robot"
    if "trials" in doc or "noise" in doc:
        return "scenario"
    if "observations" in doc:
        return "observations"
    if "devices" in doc:
        return "world"
    raise SchemaError("", "cannot determine document kind")
