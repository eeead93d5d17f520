from __future__ import annotations

import copy
import dataclasses
import json

import numpy as np
import pytest

from lappdt import twin
from lappdt.errors import (
    EmptySerial,
    NotFound,
    ParseError,
    PathError,
    SchemaError,
    UnitError,
    UnknownSite,
    VersionConflict,
)
from lappdt.fixtures import (
    CENTRIFUGE_MODEL,
    CENTRIFUGE_SERIAL,
    VENDOR,
    centrifuge_prototype,
    example_facility,
    example_robot,
    hotel_prototype,
)
from lappdt.geom import Pose
from lappdt.twin import (
    PARAMETER_KINDS,
    Registry,
    detect_kind,
    effective_site,
    instantiate,
    set_calibration,
    site_edges,
)


# ---------------------------------------------------------------------------
# canonical serialization


def test_prototype_canonical_roundtrip():
    blob = twin.save_prototype(centrifuge_prototype())
    again = twin.save_prototype(twin.load_prototype(blob))
    assert blob == again
    assert blob.endswith(b"\n")


def test_registry_tree_roundtrips_byte_identical(example_root):
    """Every bundled document survives save(load(save(...))) bitwise."""
    loaders = {
        "prototypes": (twin.load_prototype, twin.save_prototype),
        "instances": (twin.load_instance, twin.save_instance),
    }
    checked = 0
    for sub, (load, save) in loaders.items():
        for f in sorted((example_root / "registry" / sub).glob("*.json")):
            blob = f.read_bytes()
            assert save(load(blob)) == blob, f.name
            checked += 1
    assert checked == 4
    fac = (example_root / "facility.json").read_bytes()
    assert twin.save_facility(twin.load_facility(fac)) == fac
    rob = (example_root / "robot.json").read_bytes()
    assert twin.save_robot(twin.load_robot(rob)) == rob


def test_canonical_bytes_ignore_key_order():
    doc = twin.prototype_to_doc(hotel_prototype())
    scrambled = json.loads(json.dumps(doc)[::-1][::-1])  # fresh copy
    # reordering keys in the input must not leak into canonical output
    reordered = {k: scrambled[k] for k in reversed(list(scrambled))}
    assert twin.canonical_json_bytes(doc) == twin.canonical_json_bytes(reordered)


# ---------------------------------------------------------------------------
# malformed documents: every rejection carries a JSON-pointer-ish path


def _proto_doc():
    return twin.prototype_to_doc(centrifuge_prototype())


def _inst_doc():
    return twin.instance_to_doc(instantiate(centrifuge_prototype(), CENTRIFUGE_SERIAL))


def _robot_doc():
    return twin.robot_to_doc(example_robot())


def _fac_doc():
    return twin.facility_to_doc(example_facility())


def _drop(key):
    def m(d):
        del d[key]
    return m


PROTO_BAD = [
    ("missing_requirement", _drop("precision_requirement_mm"), SchemaError, "precision_requirement_mm"),
    ("negative_requirement", lambda d: d.update(precision_requirement_mm=-1.0), SchemaError, "precision_requirement_mm"),
    ("negative_box_extent",
     lambda d: d["collision_geometry"][1].update(half_extents_mm=[5.0, -50.0, 15.0]),
     SchemaError, "/collision_geometry/1/half_extents_mm"),
    ("bare_sigma_key",
     lambda d: d["marker"]["sigma"].update({"sigma_t": d["marker"]["sigma"].pop("sigma_t_mm")}),
     UnitError, "sigma"),
    ("rpy_without_units",
     lambda d: d["marker"]["device_to_marker"].update(
         {"rpy": [90, 0, 0]}) or d["marker"]["device_to_marker"].pop("q"),
     UnitError, "device_to_marker"),
    ("unknown_top_field", lambda d: d.update(colour="red"), SchemaError, "colour"),
    ("denormalized_quat",
     lambda d: d["sites"]["tray"]["to_site"].update(q=[0.9, 0.0, 0.0, 0.0]),
     SchemaError, "/sites/tray/to_site/q"),
    ("bad_grip_mode", lambda d: d["sites"]["tray"].update(grip_mode="diagonal"),
     SchemaError, "/sites/tray/grip_mode"),
    ("empty_tasks", lambda d: d.update(tasks=[]), SchemaError, "tasks"),
    ("non_string_task", lambda d: d.update(tasks=["centrifugation", 7]), SchemaError, "/tasks/1"),
    ("footprint_negative",
     lambda d: d["workpiece"].update(footprint_mm=[127.76, -85.48, 14.35]),
     SchemaError, "footprint_mm"),
    ("marker_size_zero", lambda d: d["marker"].update(size_mm=0.0), SchemaError, "size_mm"),
    ("site_id_not_slug",
     lambda d: d["sites"].update({"Bad Site!": d["sites"].pop("tray")}),
     SchemaError, "sites"),
]


@pytest.mark.parametrize("name,mutate,exc,frag", PROTO_BAD, ids=[c[0] for c in PROTO_BAD])
def test_prototype_rejections(name, mutate, exc, frag):
    doc = _proto_doc()
    mutate(doc)
    with pytest.raises(exc) as ei:
        twin.prototype_from_doc(doc)
    assert frag in str(ei.value)
    assert ei.value.path.startswith("/")


INSTANCE_BAD = [
    ("revision_zero", lambda d: d.update(revision=0), SchemaError, "revision"),
    ("serial_not_slug", lambda d: d.update(serial="no spaces"), SchemaError, "serial"),
    ("state_not_object", lambda d: d.update(state=[1, 2]), SchemaError, "state"),
    ("calibrated_bad_pose",
     lambda d: d.update(calibrated_sites={"tray": {"t": [0, 0]}}),
     SchemaError, "/calibrated_sites/tray"),
]


@pytest.mark.parametrize("name,mutate,exc,frag", INSTANCE_BAD, ids=[c[0] for c in INSTANCE_BAD])
def test_instance_rejections(name, mutate, exc, frag):
    doc = _inst_doc()
    mutate(doc)
    with pytest.raises(exc) as ei:
        twin.instance_from_doc(doc)
    assert frag in str(ei.value)


def test_instance_empty_serial():
    doc = _inst_doc()
    doc["serial"] = ""
    with pytest.raises(EmptySerial):
        twin.instance_from_doc(doc)


ROBOT_BAD = [
    ("camera_edge_wrong_source",
     lambda d: d["base_to_camera"].update(source="odometry"),
     SchemaError, "/base_to_camera/source"),
    ("missing_gripper", _drop("gripper"), SchemaError, "gripper"),
    ("negative_stroke", lambda d: d["gripper"].update(stroke_mm=-1), SchemaError, "stroke_mm"),
]


@pytest.mark.parametrize("name,mutate,exc,frag", ROBOT_BAD, ids=[c[0] for c in ROBOT_BAD])
def test_robot_rejections(name, mutate, exc, frag):
    doc = _robot_doc()
    mutate(doc)
    with pytest.raises(exc) as ei:
        twin.robot_from_doc(doc)
    assert frag in str(ei.value)


FACILITY_BAD = [
    ("poi_wrong_source",
     lambda d: d["pois"]["bench-A"].update(source="vision"),
     SchemaError, "/pois/bench-A/source"),
    ("duplicate_serial",
     lambda d: d["devices"].append(copy.deepcopy(d["devices"][0])),
     SchemaError, "/devices/2/serial"),
    ("poi_bare_sigma",
     lambda d: d["pois"]["bench-A"].update(
         {"sigma_t": d["pois"]["bench-A"].pop("sigma_t_mm")}),
     UnitError, "sigma_t_mm"),
]


@pytest.mark.parametrize("name,mutate,exc,frag", FACILITY_BAD, ids=[c[0] for c in FACILITY_BAD])
def test_facility_rejections(name, mutate, exc, frag):
    doc = _fac_doc()
    mutate(doc)
    with pytest.raises(exc) as ei:
        twin.facility_from_doc(doc)
    assert frag in str(ei.value)


def test_parse_error_on_garbage():
    with pytest.raises(ParseError):
        twin.load_prototype(b"{not json")
    with pytest.raises(SchemaError):
        twin.prototype_from_doc([1, 2, 3])


def test_path_error_accessors():
    with pytest.raises(PathError) as ei:
        twin.prototype_from_doc({"vendor": 5})
    assert ei.value.path
    assert str(ei.value).startswith(ei.value.path + ":")


# ---------------------------------------------------------------------------
# parameter classification


def test_every_field_is_classified():
    classes = [
        twin.WorkpieceSpec, twin.PositionSigma, twin.MarkerSpec, twin.CollisionBox,
        twin.SiteSpec, twin.DevicePrototype, twin.DeviceInstance, twin.GripperSpec,
        twin.RobotTwin, twin.FacilityTwin,
    ]
    expected = {
        f"{cls.__name__}.{field.name}" for cls in classes for field in dataclasses.fields(cls)
    }
    assert set(PARAMETER_KINDS) == expected
    allowed = {
        "prototype",
        "instance-static",
        "instance-volatile-observable",
        "instance-volatile-unobservable",
    }
    assert set(PARAMETER_KINDS.values()) <= allowed
    # the mutable per-unit knowledge must not be classified as shared prototype data
    assert PARAMETER_KINDS["DeviceInstance.calibrated_sites"].startswith("instance-volatile")
    assert PARAMETER_KINDS["DeviceInstance.location"].endswith("unobservable")


# ---------------------------------------------------------------------------
# instances, calibration overrides


def test_instantiate_validates_serial():
    p = centrifuge_prototype()
    inst = instantiate(p, "CF-009")
    assert inst.revision == 1 and inst.location is None
    with pytest.raises(EmptySerial):
        instantiate(p, "")
    with pytest.raises(EmptySerial):
        instantiate(p, "has space")


def test_instances_do_not_share_calibration():
    p = centrifuge_prototype()
    a = instantiate(p, "CF-00A")
    b = instantiate(p, "CF-00B")
    a2 = set_calibration(a, p, "tray", Pose((1, 2, 3), (1, 0, 0, 0)))
    assert "tray" in a2.calibrated_sites
    assert not b.calibrated_sites
    assert not a.calibrated_sites  # original untouched
    assert a2.revision == a.revision + 1


def test_effective_site_override_only_moves_to_site():
    p = centrifuge_prototype()
    inst = instantiate(p, "CF-00C")
    base = effective_site(inst, p, "tray")
    assert base == p.sites["tray"]

    shifted = Pose(
        base.to_site.translation + np.array([0.8, 0.0, 0.0]), base.to_site.rotation
    )
    inst2 = set_calibration(inst, p, "tray", shifted)
    eff = effective_site(inst2, p, "tray")
    assert np.allclose(eff.to_site.translation - base.to_site.translation, [0.8, 0, 0])
    # approach poses stay verbatim prototype data
    assert eff.to_site_approach == base.to_site_approach
    assert eff.to_device_approach == base.to_device_approach
    assert eff.grip_mode == base.grip_mode

    with pytest.raises(UnknownSite):
        effective_site(inst, p, "hopper")
    with pytest.raises(UnknownSite):
        set_calibration(inst, p, "hopper", shifted)


def test_set_calibration_last_write_wins():
    p = centrifuge_prototype()
    inst = instantiate(p, "CF-00D")
    first = Pose((0, -70, -119.5), p.sites["tray"].to_site.rotation)
    second = Pose((0.3, -70, -119.5), p.sites["tray"].to_site.rotation)
    inst = set_calibration(inst, p, "tray", first)
    inst = set_calibration(inst, p, "tray", second)
    assert inst.revision == 3
    eff = effective_site(inst, p, "tray")
    assert np.array_equal(eff.to_site.translation, second.translation)


def test_site_edges_carry_stored_sigma():
    p = centrifuge_prototype()
    edges = site_edges(instantiate(p, "CF-00E"), p, "tray")
    assert set(edges) == {"to_site", "to_site_approach", "to_device_approach"}
    for e in edges.values():
        assert e.source == "dt_stored"
        assert e.sigma_t_mm == p.stored_position_sigma.sigma_t_mm
        assert e.sigma_r_rad == p.stored_position_sigma.sigma_r_rad


# ---------------------------------------------------------------------------
# registry: immutability, compare-and-swap revisions


def test_registry_prototype_immutable(tmp_path):
    reg = Registry(tmp_path)
    reg.put_prototype(centrifuge_prototype())
    with pytest.raises(VersionConflict):
        reg.put_prototype(centrifuge_prototype())
    got = reg.get_prototype(VENDOR, CENTRIFUGE_MODEL)
    # twin dataclasses use identity equality (ndarray fields); canonical
    # bytes are the equality that matters for stored documents
    assert twin.save_prototype(got) == twin.save_prototype(centrifuge_prototype())
    with pytest.raises(NotFound):
        reg.get_prototype(VENDOR, "toaster-t1")


def test_registry_instance_cas(tmp_path):
    reg = Registry(tmp_path)
    p = centrifuge_prototype()
    inst = instantiate(p, "CF-777")

    reg.put_instance(inst)  # revision 1 creates
    with pytest.raises(VersionConflict):
        reg.put_instance(inst)  # same revision again: stale write
    inst2 = set_calibration(inst, p, "tray", p.sites["tray"].to_site)  # -> rev 2
    reg.put_instance(inst2)
    with pytest.raises(VersionConflict):
        # skipping a revision is as stale as repeating one
        reg.put_instance(dataclasses.replace(inst2, revision=5))
    assert reg.get_instance("CF-777").revision == 2
    with pytest.raises(VersionConflict):
        # a fresh file must start at revision 1
        reg.put_instance(dataclasses.replace(inst, serial="CF-778", revision=3))
    with pytest.raises(NotFound):
        reg.get_instance("CF-999")


def test_registry_listings(tmp_path):
    reg = Registry(tmp_path)
    assert reg.list_prototypes() == []
    assert reg.list_instances() == []
    reg.put_prototype(hotel_prototype())
    reg.put_prototype(centrifuge_prototype())
    assert reg.list_prototypes() == [
        (VENDOR, CENTRIFUGE_MODEL),
        (VENDOR, "plate-hotel-h2"),
    ]
    inst = instantiate(centrifuge_prototype(), "CF-010")
    reg.put_instance(inst)
    assert reg.list_instances() == ["CF-010"]
    assert twin.save_prototype(reg.prototype_for(inst)) == twin.save_prototype(
        centrifuge_prototype()
    )


# ---------------------------------------------------------------------------
# document kind sniffing (drives `lappdt validate`)


@pytest.mark.parametrize(
    "doc,kind",
    [
        (lambda: _proto_doc(), "prototype"),
        (lambda: _inst_doc(), "instance"),
        (lambda: _fac_doc(), "facility"),
        (lambda: _robot_doc(), "robot"),
        (lambda: {"name": "x", "trials": 3}, "scenario"),
        (lambda: {"observations": []}, "observations"),
        (lambda: {"devices": [], "frame": "w"}, "world"),
    ],
    ids=["prototype", "instance", "facility", "robot", "scenario", "observations", "world"],
)
def test_detect_kind(doc, kind):
    assert detect_kind(doc()) == kind


def test_detect_kind_rejects():
    with pytest.raises(SchemaError):
        detect_kind({"mystery": 1})
    with pytest.raises(SchemaError):
        detect_kind([])
