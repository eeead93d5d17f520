from __future__ import annotations

import pytest

from lappdt.fixtures import (
    CENTRIFUGE_SERIAL,
    HOTEL_SERIAL,
    STATION,
    TRUE_DEVICE_POSES,
    centrifuge_prototype,
    example_facility,
    example_robot,
    hotel_prototype,
    write_example_tree,
)
from lappdt.geom import UncertainTransform
from lappdt.pnp import MarkerObservation
from lappdt.sim import true_marker_in_camera


@pytest.fixture(scope="session")
def example_root(tmp_path_factory):
    """The bundled example lab, written once per session."""
    root = tmp_path_factory.mktemp("lab")
    write_example_tree(root)
    return root


@pytest.fixture(scope="session")
def robot():
    return example_robot()


@pytest.fixture(scope="session")
def facility():
    return example_facility()


@pytest.fixture(scope="session")
def cf_proto():
    return centrifuge_prototype()


@pytest.fixture(scope="session")
def ph_proto():
    return hotel_prototype()


def make_exact_observation(
    robot, serial, proto, sigma_t_mm=0.5, sigma_r_rad=0.002
) -> MarkerObservation:
    """Noise-free marker sighting from the nominal docked pose.

    The pose is exact (robot parked exactly on the docking target); the
    carried sigmas are whatever the perception stack would claim.
    """
    dock = example_facility().pois[STATION].pose
    exact = true_marker_in_camera(
        dock, robot.camera_edge.pose, TRUE_DEVICE_POSES[serial], proto.marker.device_to_marker
    )
    return MarkerObservation(
        device_serial=serial,
        transform=UncertainTransform(exact, sigma_t_mm, sigma_r_rad, "vision"),
    )


@pytest.fixture(scope="session")
def cf_obs(robot, cf_proto):
    return make_exact_observation(robot, CENTRIFUGE_SERIAL, cf_proto)


@pytest.fixture(scope="session")
def ph_obs(robot, ph_proto):
    return make_exact_observation(robot, HOTEL_SERIAL, ph_proto)


@pytest.fixture(scope="session")
def noisy_report(example_root):
    """The 1000-trial noisy scenario, run once and shared (about a second)."""
    from lappdt.sim import run_scenario

    return run_scenario(example_root / "scenarios" / "two-device-noisy.json", canonical=True)
