"""Plug & play setup chains: discovery, site derivation, precision gating.

Two chains matter operationally:

* discovery (world-frame): docking target -> docked base -> camera ->
  observed marker -> device base. Its translation budget is dominated by the
  odometry-class docking repeatability, so it locates devices coarsely.
* site derivation (robot-local): base -> camera -> observed marker -> stored
  site. No odometry edge appears, which is exactly why a freshly docked
  robot can reach sub-millimeter sites without manual teaching.

emulate_manual_teaching reproduces what a human jogging the TCP into the
site would have recorded, from ground truth; it is the oracle the
teaching-free route is validated against.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Mapping

import numpy as np

from .errors import NotFound, PrecisionFail, UnknownDevice, UnknownStation
from .frames import (
    CAMERA,
    ROBOT_BASE,
    TCP,
    FrameGraph,
    device_approach_frame,
    device_frame,
    marker_frame,
    poi_frame,
    site_approach_frame,
    site_frame,
)
from .geom import (
    Pose,
    UncertainTransform,
    compose,
    identity_uncertain,
    invert,
    uncertain_compose,
    uncertain_invert,
)
from .twin import DeviceInstance, DevicePrototype, FacilityTwin, RobotTwin, site_edges

SITE_TARGETS = ("to_site", "to_site_approach", "to_device_approach")


@dataclass(frozen=True, eq=False)
class MarkerObservation:
    """One camera detection of a device marker: camera -> marker."""

    device_serial: str
    transform: UncertainTransform
    timestamp: int = 0

    def __post_init__(self):
        if self.transform.source != "vision":
            raise ValueError("marker observations must carry source 'vision'")


@dataclass(frozen=True)
class ChainLink:
    """One folded edge with the lever arm it contributed."""

    name: str
    source: str
    sigma_t_mm: float
    sigma_r_rad: float
    lever_arm_mm: float
    cumulative_sigma_t_mm: float


@dataclass(frozen=True, eq=False)
class SiteChain:
    """A folded uncertain transform plus its per-edge breakdown."""

    transform: UncertainTransform
    links: tuple[ChainLink, ...]


@dataclass(frozen=True)
class PrecisionVerdict:
    budget_mm: float
    requirement_mm: float
    passed: bool
    chain: tuple[ChainLink, ...]


def fold_chain(edges: Iterable[tuple[str, UncertainTransform]]) -> SiteChain:
    """Left-fold a named edge sequence, recording per-edge contributions."""
    acc = identity_uncertain()
    links = []
    for name, edge in edges:
        lever = acc.sigma_r_rad * float(np.linalg.norm(edge.pose.translation))
        acc = uncertain_compose(acc, edge)
        links.append(
            ChainLink(
                name=name,
                source=edge.source,
                sigma_t_mm=edge.sigma_t_mm,
                sigma_r_rad=edge.sigma_r_rad,
                lever_arm_mm=lever,
                cumulative_sigma_t_mm=acc.sigma_t_mm,
            )
        )
    return SiteChain(acc, tuple(links))


def _marker_edge(proto: DevicePrototype) -> UncertainTransform:
    return UncertainTransform(
        proto.marker.device_to_marker,
        proto.marker.sigma.sigma_t_mm,
        proto.marker.sigma.sigma_r_rad,
        "dt_stored",
    )


def _require_observation(obs: MarkerObservation, serial: str):
    if obs.device_serial != serial:
        raise UnknownDevice(
            f"observation is for {obs.device_serial!r}, expected {serial!r}"
        )


def discover_device(
    facility: FacilityTwin,
    robot: RobotTwin,
    station: str,
    obs: MarkerObservation,
    proto: DevicePrototype,
) -> FacilityTwin:
    """Set the observed device's world location from one marker sighting.

    The docked base is taken to coincide with the station's docking target,
    with that target's odometry-class repeatability charged once for the
    stored map pose and once for the docking event itself. Re-discovery
    overwrites the previous location (latest sighting wins) and bumps the
    instance revision.
    """
    if station not in facility.pois:
        raise UnknownStation(f"facility has no station {station!r}")
    try:
        inst = facility.instance(obs.device_serial)
    except NotFound as exc:
        raise UnknownDevice(str(exc)) from None
    if (inst.vendor, inst.model) != (proto.vendor, proto.model):
        raise UnknownDevice(
            f"instance {inst.serial} is a {inst.vendor}/{inst.model}, "
            f"not {proto.vendor}/{proto.model}"
        )
    poi = facility.pois[station]
    docking = UncertainTransform(
        Pose.identity(), poi.sigma_t_mm, poi.sigma_r_rad, "odometry"
    )
    chain = fold_chain(
        [
            (f"w->poi.{station}", poi),
            ("poi->r docking", docking),
            ("r->c", robot.camera_edge),
            (f"c->m.{inst.serial}", obs.transform),
            (f"m->d.{inst.serial}", uncertain_invert(_marker_edge(proto))),
        ]
    )
    updated = replace(inst, location=chain.transform, revision=inst.revision + 1)
    return facility.with_instance(updated)


def derive_site_chain(
    robot: RobotTwin,
    obs: MarkerObservation,
    proto: DevicePrototype,
    inst: DeviceInstance,
    site: str,
    target: str = "to_site",
) -> SiteChain:
    """base -> site through camera and marker; odometry never enters."""
    _require_observation(obs, inst.serial)
    if target not in SITE_TARGETS:
        raise ValueError(f"target must be one of {SITE_TARGETS}")
    edge = site_edges(inst, proto, site)[target]
    return fold_chain(
        [
            ("r->c", robot.camera_edge),
            (f"c->m.{inst.serial}", obs.transform),
            (f"m->{target}/{site}", edge),
        ]
    )


def derive_site_in_robot_frame(
    robot: RobotTwin,
    obs: MarkerObservation,
    proto: DevicePrototype,
    inst: DeviceInstance,
    site: str,
) -> UncertainTransform:
    return derive_site_chain(robot, obs, proto, inst, site).transform


def emulate_manual_teaching(
    world_to_base: Pose,
    base_to_camera: Pose,
    world_to_device: Pose,
    device_to_marker: Pose,
    device_to_site: Pose,
) -> Pose:
    """What a jog-the-TCP-into-the-site teaching session would store: the
    marker -> site transform, computed from exact ground truth.

    The camera sees the marker from the docked base; the TCP is placed so it
    coincides with the site. Combining both camera-frame poses eliminates
    every world-frame quantity, which is why the result must match the
    prototype's stored geometry exactly.
    """
    world_to_camera = compose(world_to_base, base_to_camera)
    marker_in_camera = compose(invert(world_to_camera), compose(world_to_device, device_to_marker))
    tcp_at_site_in_camera = compose(
        invert(base_to_camera),
        compose(invert(world_to_base), compose(world_to_device, device_to_site)),
    )
    return compose(invert(marker_in_camera), tcp_at_site_in_camera)


def check_precision(
    chain: SiteChain | UncertainTransform, proto: DevicePrototype
) -> PrecisionVerdict:
    """Gate a derived site chain against the prototype's requirement.

    The budget is the chain's translation sigma; a budget exactly equal to
    the requirement passes.
    """
    if isinstance(chain, SiteChain):
        budget = chain.transform.sigma_t_mm
        links = chain.links
    else:
        budget = chain.sigma_t_mm
        links = (
            ChainLink(
                name="chain",
                source=chain.source,
                sigma_t_mm=chain.sigma_t_mm,
                sigma_r_rad=chain.sigma_r_rad,
                lever_arm_mm=0.0,
                cumulative_sigma_t_mm=chain.sigma_t_mm,
            ),
        )
    requirement = proto.precision_requirement_mm
    return PrecisionVerdict(
        budget_mm=budget,
        requirement_mm=requirement,
        passed=budget <= requirement,
        chain=links,
    )


def verdict_to_doc(v: PrecisionVerdict) -> dict:
    return {
        "budget_mm": float(v.budget_mm),
        "requirement_mm": float(v.requirement_mm),
        "pass": bool(v.passed),
        "chain": [
            {
                "edge": l.name,
                "source": l.source,
                "sigma_t_mm": float(l.sigma_t_mm),
                "sigma_r_rad": float(l.sigma_r_rad),
                "lever_arm_mm": float(l.lever_arm_mm),
                "cumulative_sigma_t_mm": float(l.cumulative_sigma_t_mm),
            }
            for l in v.chain
        ],
    }


def build_global_graph(
    facility: FacilityTwin,
    prototypes: Mapping[str, DevicePrototype],
    robot: RobotTwin | None = None,
    station: str | None = None,
) -> FrameGraph:
    """The facility-wide frame tree rooted at the world frame.

    prototypes maps serial -> DevicePrototype. Devices without a stored
    location are left out (nothing anchors them to the world yet). When
    robot and station are given, the robot subtree is docked under that
    station's poi with an identity edge carrying the docking repeatability.
    """
    g = FrameGraph.rooted()
    for name in sorted(facility.pois):
        g = g.add_edge("w", poi_frame(name), facility.pois[name])
    for inst in sorted(facility.devices, key=lambda d: d.serial):
        if inst.location is None:
            continue
        proto = prototypes.get(inst.serial)
        if proto is None:
            raise UnknownDevice(f"no prototype supplied for instance {inst.serial!r}")
        d = device_frame(inst.serial)
        m = marker_frame(inst.serial)
        g = g.add_edge("w", d, inst.location)
        g = g.add_edge(d, m, _marker_edge(proto))
        for site_id in sorted(proto.sites):
            edges = site_edges(inst, proto, site_id)
            g = g.add_edge(m, site_frame(inst.serial, site_id), edges["to_site"])
            g = g.add_edge(
                m, site_approach_frame(inst.serial, site_id), edges["to_site_approach"]
            )
            g = g.add_edge(
                m, device_approach_frame(inst.serial, site_id), edges["to_device_approach"]
            )
    if robot is not None and station is not None:
        if station not in facility.pois:
            raise UnknownStation(f"facility has no station {station!r}")
        poi = facility.pois[station]
        docking = UncertainTransform(
            Pose.identity(), poi.sigma_t_mm, poi.sigma_r_rad, "odometry"
        )
        g = g.add_edge(poi_frame(station), ROBOT_BASE, docking)
        g = g.add_edge(ROBOT_BASE, CAMERA, robot.camera_edge)
        g = g.add_edge(ROBOT_BASE, TCP, robot.tcp_edge)
    return g
