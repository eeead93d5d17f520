"""Closed-loop simulation: ground-truth world, noisy sensing, scenario runs.

The simulator owns the ground truth (device bases in the world, the robot's
true pose after each docking) and produces what the pipeline would really
get: marker observations corrupted by vision noise and docking corrupted by
odometry noise. Running a scenario replays discovery and site derivation
over many trials and compares the empirical error statistics against the
analytic uncertainty budgets carried by the same chains.

Noise is applied by post-composition in the local frame of the true
transform, i.e. a noisy edge is truth composed with a small perturbation
whose translation components and rotation-vector components are drawn
per-axis from N(0, sigma^2). That convention matches how the budget
arithmetic charges rotational uncertainty against downstream translations.

Randomness is counter-based: every (trial, consumer, purpose) triple gets
its own generator derived from the scenario seed, so adding devices or
reordering the loop never shifts anybody else's draws.

Two translation sigmas appear in reports. sigma_budget_mm is the full belief
chain (kinematic + vision + stored-position classes). sigma_sampled_mm is
the same chain with every class the simulator does not perturb zeroed out —
only this subchain predicts the scatter of the sampled estimates, and the
ratio check compares empirical scatter against it. Empirical scatter is the
pooled per-axis standard deviation sqrt(mean(|e|^2) / 3).
"""

from __future__ import annotations

import datetime as _dt
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from types import MappingProxyType
from typing import Mapping

import numpy as np

from .errors import ScenarioError, SchemaError
from .geom import (
    Pose,
    UncertainTransform,
    compose,
    invert,
    rotation_angle,
    sample_pose_noise,
)
from .pnp import (
    MarkerObservation,
    check_precision,
    derive_site_chain,
    discover_device,
    fold_chain,
    verdict_to_doc,
)
from .plan import (
    CollisionConfig,
    DevicePlacement,
    PlannedSite,
    check_collisions,
    collision_report_to_doc,
    generate_pick_place,
    plan_to_doc,
)
from .twin import (
    Registry,
    RobotTwin,
    _Obj,
    _parse_json,
    canonical_json_bytes,
    load_facility,
    load_robot,
)

PURPOSE_DOCKING = 0
PURPOSE_VISION = 1


@dataclass(frozen=True)
class AxisSigma:
    """Per-axis noise magnitudes for one error class."""

    sigma_t_mm: float = 0.0
    sigma_r_rad: float = 0.0

    @property
    def silent(self) -> bool:
        return self.sigma_t_mm == 0.0 and self.sigma_r_rad == 0.0


@dataclass(frozen=True)
class NoiseModel:
    odometry: AxisSigma = field(default_factory=AxisSigma)
    vision: AxisSigma = field(default_factory=AxisSigma)


@dataclass(frozen=True, eq=False)
class DeviceTruth:
    serial: str
    world_pose: Pose  # true device base in the world frame


@dataclass(frozen=True, eq=False)
class World:
    """Ground truth the simulator keeps hidden from the pipeline."""

    devices: Mapping[str, DeviceTruth]
    base_to_camera: Pose | None = None  # override; default = robot twin's value

    def device(self, serial: str) -> DeviceTruth:
        if serial not in self.devices:
            raise SchemaError(f"world/devices/{serial}", "not in ground truth")
        return self.devices[serial]


def world_from_doc(doc: object, path: str = "") -> World:
    o = _Obj(doc, path)
    devices = {}
    d = o.obj("devices")
    for serial in sorted(d.data):
        e = _Obj(d.raw(serial), d.sub(serial))
        devices[serial] = DeviceTruth(serial=serial, world_pose=e.pose("world_pose"))
        e.finish()
    cam = o.pose("base_to_camera") if o.has("base_to_camera") else None
    o.expect("devices", "base_to_camera").finish()
    return World(devices=MappingProxyType(devices), base_to_camera=cam)


def load_world(data: bytes | str) -> World:
    return world_from_doc(_parse_json(data))


def observations_from_doc(doc: object, path: str = "") -> dict[str, UncertainTransform]:
    """{"observations": {serial: camera->marker uncertain transform}}"""
    o = _Obj(doc, path)
    entries = o.obj("observations")
    out = {}
    for serial in sorted(entries.data):
        edge = entries.uncertain(serial)
        if edge.source != "vision":
            raise SchemaError(
                f"{entries.sub(serial)}/source", "marker observations carry source 'vision'"
            )
        out[serial] = edge
    o.expect("observations").finish()
    return out


def load_observations(data: bytes | str) -> dict[str, UncertainTransform]:
    return observations_from_doc(_parse_json(data))


def stream(seed: int, trial: int, consumer: int, purpose: int) -> np.random.Generator:
    """Independent generator for one (trial, consumer, purpose) triple."""
    return np.random.default_rng(
        np.random.SeedSequence(seed, spawn_key=(trial, consumer, purpose))
    )


def perturb(pose: Pose, sigma: AxisSigma, rng: np.random.Generator) -> Pose:
    if sigma.silent:
        return pose
    dt, dq = sample_pose_noise(rng, sigma.sigma_t_mm, sigma.sigma_r_rad, 1)
    return compose(pose, Pose(tuple(dt[0]), tuple(dq[0])))


def true_marker_in_camera(
    world_to_base: Pose, base_to_camera: Pose, world_to_device: Pose, device_to_marker: Pose
) -> Pose:
    world_to_camera = compose(world_to_base, base_to_camera)
    return compose(invert(world_to_camera), compose(world_to_device, device_to_marker))


def simulate_observation(
    world_to_base: Pose,
    base_to_camera: Pose,
    truth: DeviceTruth,
    device_to_marker: Pose,
    noise: AxisSigma,
    rng: np.random.Generator,
    believed_sigma: AxisSigma | None = None,
) -> MarkerObservation:
    """Render the marker from the true camera pose, then corrupt it.

    The observation's carried uncertainty is what the perception stack
    believes about itself; by default that equals the sampling noise, which
    is the calibrated-sensor case the ratio checks rely on.
    """
    exact = true_marker_in_camera(
        world_to_base, base_to_camera, truth.world_pose, device_to_marker
    )
    noisy = perturb(exact, noise, rng)
    believed = believed_sigma if believed_sigma is not None else noise
    return MarkerObservation(
        device_serial=truth.serial,
        transform=UncertainTransform(
            noisy, believed.sigma_t_mm, believed.sigma_r_rad, "vision"
        ),
    )


def vision_only_sigma(
    robot: RobotTwin, obs: MarkerObservation, marker_to_target: Pose
) -> float:
    """Translation sigma of the derived site chain with every non-sampled
    class (kinematic mount, stored positions) zeroed: the scatter the
    simulator's vision noise alone should produce."""
    zeroed_cam = UncertainTransform(robot.camera_edge.pose, 0.0, 0.0, "kinematic")
    zeroed_site = UncertainTransform(marker_to_target, 0.0, 0.0, "dt_stored")
    chain = fold_chain(
        [("r->c", zeroed_cam), ("c->m", obs.transform), ("m->s", zeroed_site)]
    )
    return chain.transform.sigma_t_mm


# ---------------------------------------------------------------------------
# scenario documents


@dataclass(frozen=True, eq=False)
class Scenario:
    name: str
    registry_dir: str
    facility_file: str
    robot_file: str
    world_file: str
    seed: int
    trials: int
    noise: NoiseModel
    stations: Mapping[str, tuple[str, ...]]  # station -> serials observed there
    plans: tuple[tuple[str, str], ...]  # ("serial:site", "serial:site")
    tolerances: Mapping[str, object]


_TOLERANCE_KEYS = (
    "max_pose_error_mm",
    "max_rot_error_deg",
    "max_world_error_mm",
    "max_mean_error_mm",
    "std_ratio_band",
    "world_local_budget_ratio_min",
    "require_verdicts_pass",
    "require_no_collisions",
)


def _axis_sigma_from(o: _Obj, key: str) -> AxisSigma:
    s = o.obj(key)
    out = AxisSigma(s.num("sigma_t_mm", minimum=0.0), s.num("sigma_r_rad", minimum=0.0))
    s.expect("sigma_t_mm", "sigma_r_rad").finish()
    return out


def scenario_from_doc(doc: object, path: str = "") -> Scenario:
    o = _Obj(doc, path)
    noise_obj = o.obj("noise")
    noise = NoiseModel(
        odometry=_axis_sigma_from(noise_obj, "odometry"),
        vision=_axis_sigma_from(noise_obj, "vision"),
    )
    noise_obj.finish()

    stations_obj = o.obj("stations")
    stations = {}
    for station in sorted(stations_obj.data):
        serials = stations_obj.raw(station)
        if not isinstance(serials, list) or not all(isinstance(s, str) for s in serials):
            raise SchemaError(stations_obj.sub(station), "expected a list of serials")
        stations[station] = tuple(serials)
    if not stations:
        raise SchemaError(o.sub("stations"), "at least one station required")

    plans = []
    raw_plans = o.raw("plans", required=False, default=[])
    if not isinstance(raw_plans, list):
        raise SchemaError(o.sub("plans"), "expected a list")
    for i, entry in enumerate(raw_plans):
        p = _Obj(entry, f"{o.sub('plans')}/{i}")
        src = p.str_("src")
        dst = p.str_("dst")
        for label, value in (("src", src), ("dst", dst)):
            if value.count(":") != 1:
                raise SchemaError(f"{p.path}/{label}", "expected 'serial:site'")
        p.expect("src", "dst").finish()
        plans.append((src, dst))

    tol_obj = o.obj("tolerances", required=False)
    tolerances: dict[str, object] = {}
    if tol_obj is not None:
        for key in _TOLERANCE_KEYS:
            if tol_obj.has(key):
                tolerances[key] = tol_obj.raw(key)
        tol_obj.expect(*_TOLERANCE_KEYS).finish()
        band = tolerances.get("std_ratio_band")
        if band is not None and (
            not isinstance(band, list)
            or len(band) != 2
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in band)
        ):
            raise SchemaError(tol_obj.sub("std_ratio_band"), "expected [low, high]")

    out = Scenario(
        name=o.str_("name", slug=True),
        registry_dir=o.str_("registry_dir"),
        facility_file=o.str_("facility"),
        robot_file=o.str_("robot"),
        world_file=o.str_("world"),
        seed=o.int_("seed", minimum=0),
        trials=o.int_("trials", minimum=1),
        noise=noise,
        stations=MappingProxyType(stations),
        plans=tuple(plans),
        tolerances=MappingProxyType(tolerances),
    )
    o.expect(
        "name", "registry_dir", "facility", "robot", "world", "seed", "trials",
        "noise", "stations", "plans", "tolerances",
    ).finish()
    return out


def load_scenario(data: bytes | str) -> Scenario:
    return scenario_from_doc(_parse_json(data))


# ---------------------------------------------------------------------------
# running


@dataclass
class _SiteStats:
    serial: str
    site: str
    sigma_budget_mm: float = 0.0
    sigma_sampled_mm: float = 0.0
    sq_err_sum: float = 0.0
    err_vec_sum: np.ndarray = field(default_factory=lambda: np.zeros(3))
    max_err_mm: float = 0.0
    rot_err_sum: float = 0.0
    max_rot_err_rad: float = 0.0
    trials: int = 0

    def record(self, err_vec: np.ndarray, rot_err: float):
        self.trials += 1
        self.sq_err_sum += float(err_vec @ err_vec)
        self.err_vec_sum += err_vec
        self.max_err_mm = max(self.max_err_mm, float(np.linalg.norm(err_vec)))
        self.rot_err_sum += rot_err
        self.max_rot_err_rad = max(self.max_rot_err_rad, rot_err)

    @property
    def empirical_std_mm(self) -> float:
        return math.sqrt(self.sq_err_sum / (3.0 * self.trials)) if self.trials else 0.0

    @property
    def mean_err_mm(self) -> float:
        if not self.trials:
            return 0.0
        return float(np.linalg.norm(self.err_vec_sum / self.trials))

    def doc(self) -> dict:
        ratio = (
            self.empirical_std_mm / self.sigma_sampled_mm
            if self.sigma_sampled_mm > 0
            else None
        )
        return {
            "sigma_budget_mm": float(self.sigma_budget_mm),
            "sigma_sampled_mm": float(self.sigma_sampled_mm),
            "empirical_std_mm": float(self.empirical_std_mm),
            "std_ratio": None if ratio is None else float(ratio),
            "mean_error_mm": float(self.mean_err_mm),
            "max_error_mm": float(self.max_err_mm),
            "mean_rot_error_deg": float(
                math.degrees(self.rot_err_sum / self.trials) if self.trials else 0.0
            ),
            "max_rot_error_deg": float(math.degrees(self.max_rot_err_rad)),
            "trials": self.trials,
        }


def _resolve(base: Path, rel: str) -> Path:
    p = Path(rel)
    return p if p.is_absolute() else base / p


def run_scenario(
    scenario_path: str | Path,
    *,
    canonical: bool = False,
    seed: int | None = None,
    trials: int | None = None,
) -> dict:
    """Execute a scenario file and return its report document.

    The report's "passed" field is the conjunction of every tolerance check
    the scenario declares. With canonical=True the volatile generated_at
    stamp is omitted so two runs of the same scenario are byte-identical.
    """
    scenario_path = Path(scenario_path)
    scn = load_scenario(scenario_path.read_bytes())
    base = scenario_path.parent
    if seed is not None:
        scn = replace(scn, seed=seed)
    if trials is not None:
        scn = replace(scn, trials=trials)

    registry = Registry(_resolve(base, scn.registry_dir))
    facility0 = load_facility(_resolve(base, scn.facility_file).read_bytes())
    robot = load_robot(_resolve(base, scn.robot_file).read_bytes())
    world = load_world(_resolve(base, scn.world_file).read_bytes())
    cam_truth = world.base_to_camera or robot.camera_edge.pose

    # stable consumer indices: stations and serials in document order
    station_list = list(scn.stations)
    serial_list = [s for station in station_list for s in scn.stations[station]]
    serial_index = {serial: i for i, serial in enumerate(serial_list)}
    station_of = {
        serial: station
        for station in station_list
        for serial in scn.stations[station]
    }
    protos = {}
    for serial in serial_list:
        inst = facility0.instance(serial)
        protos[serial] = registry.prototype_for(inst)

    site_stats: dict[str, _SiteStats] = {}
    world_stats: dict[str, _SiteStats] = {}
    world_budget: dict[str, float] = {}
    trial0_layout: dict[str, dict] = {}

    for trial in range(scn.trials):
        # one true docking per station per trial
        true_base: dict[str, Pose] = {}
        for s_idx, station in enumerate(station_list):
            rng = stream(scn.seed, trial, s_idx, PURPOSE_DOCKING)
            true_base[station] = perturb(
                facility0.pois[station].pose, scn.noise.odometry, rng
            )

        facility = facility0
        for serial in serial_list:
            station = station_of[serial]
            proto = protos[serial]
            truth = world.device(serial)
            rng = stream(scn.seed, trial, serial_index[serial], PURPOSE_VISION)
            obs = simulate_observation(
                true_base[station],
                cam_truth,
                truth,
                proto.marker.device_to_marker,
                scn.noise.vision,
                rng,
            )

            # world-frame discovery
            facility = discover_device(facility, robot, station, obs, proto)
            location = facility.instance(serial).location
            key = serial
            wstat = world_stats.setdefault(key, _SiteStats(serial, "-"))
            wstat.record(
                np.asarray(location.pose.translation)
                - np.asarray(truth.world_pose.translation),
                rotation_angle(location.pose, truth.world_pose),
            )
            world_budget[serial] = location.sigma_t_mm

            # robot-local site derivation for every site of the prototype
            inst = facility.instance(serial)
            for site in sorted(proto.sites):
                chain = derive_site_chain(robot, obs, proto, inst, site)
                true_site = compose(
                    invert(true_base[station]),
                    compose(
                        truth.world_pose,
                        compose(
                            proto.marker.device_to_marker, proto.sites[site].to_site
                        ),
                    ),
                )
                stat = site_stats.setdefault(
                    f"{serial}:{site}", _SiteStats(serial, site)
                )
                stat.record(
                    np.asarray(chain.transform.pose.translation)
                    - np.asarray(true_site.translation),
                    rotation_angle(chain.transform.pose, true_site),
                )
                if trial == 0:
                    stat.sigma_budget_mm = chain.transform.sigma_t_mm
                    stat.sigma_sampled_mm = vision_only_sigma(
                        robot, obs, proto.sites[site].to_site
                    )
                    trial0_layout[f"{serial}:{site}"] = {
                        "chain": chain,
                        "inst": inst,
                        "proto": proto,
                        "obs": obs,
                    }
            if trial == 0:
                # device base in the robot frame, for collision placements
                base_in_r = compose(
                    compose(robot.camera_edge.pose, obs.transform.pose),
                    invert(proto.marker.device_to_marker),
                )
                trial0_layout[serial] = {"base_in_r": base_in_r, "proto": proto}

    # ---- plans on the trial-0 layout ----
    plan_reports = []
    all_verdicts_pass = True
    all_collisions_ok = True
    for src_key, dst_key in scn.plans:
        entry: dict = {"src": src_key, "dst": dst_key}
        try:
            ends = []
            for key in (src_key, dst_key):
                if key not in trial0_layout:
                    raise ScenarioError(key, "plan endpoint was never observed")
                lay = trial0_layout[key]
                ends.append(
                    PlannedSite(
                        proto=lay["proto"],
                        inst=lay["inst"],
                        site=key.split(":", 1)[1],
                        chain=lay["chain"],
                    )
                )
            verdicts = {
                "src": check_precision(ends[0].chain, ends[0].proto),
                "dst": check_precision(ends[1].chain, ends[1].proto),
            }
            entry["verdicts"] = {k: verdict_to_doc(v) for k, v in sorted(verdicts.items())}
            if not all(v.passed for v in verdicts.values()):
                all_verdicts_pass = False
                entry["plan"] = None
                entry["collisions"] = None
                plan_reports.append(entry)
                continue
            plan = generate_pick_place(robot, ends[0], ends[1])
            placements = [
                DevicePlacement(
                    serial=serial,
                    proto=trial0_layout[serial]["proto"],
                    base_pose=trial0_layout[serial]["base_in_r"],
                )
                for serial in serial_list
            ]
            report = check_collisions(
                plan, placements, ends[0].proto.workpiece, CollisionConfig()
            )
            if not report.ok:
                all_collisions_ok = False
            entry["plan"] = plan_to_doc(plan)
            entry["collisions"] = collision_report_to_doc(report)
        except ScenarioError:
            raise
        except Exception as exc:  # domain failures become scenario errors
            raise ScenarioError(f"{src_key}->{dst_key}", str(exc)) from exc
        plan_reports.append(entry)

    # ---- tolerance checks ----
    checks = []

    def check(name: str, passed: bool, detail: str):
        checks.append({"name": name, "passed": bool(passed), "detail": detail})

    tol = scn.tolerances
    if "max_pose_error_mm" in tol:
        worst = max(s.max_err_mm for s in site_stats.values())
        check(
            "max_pose_error",
            worst <= float(tol["max_pose_error_mm"]),
            f"worst site error {worst:.6g} mm vs {tol['max_pose_error_mm']} mm",
        )
    if "max_rot_error_deg" in tol:
        worst = math.degrees(max(s.max_rot_err_rad for s in site_stats.values()))
        check(
            "max_rot_error",
            worst <= float(tol["max_rot_error_deg"]),
            f"worst site rotation error {worst:.6g} deg vs {tol['max_rot_error_deg']} deg",
        )
    if "max_world_error_mm" in tol:
        worst = max(s.max_err_mm for s in world_stats.values())
        check(
            "max_world_error",
            worst <= float(tol["max_world_error_mm"]),
            f"worst world-frame error {worst:.6g} mm vs {tol['max_world_error_mm']} mm",
        )
    if "max_mean_error_mm" in tol:
        worst = max(s.mean_err_mm for s in site_stats.values())
        check(
            "mean_error",
            worst <= float(tol["max_mean_error_mm"]),
            f"worst site bias {worst:.6g} mm vs {tol['max_mean_error_mm']} mm",
        )
    if "std_ratio_band" in tol:
        lo, hi = (float(v) for v in tol["std_ratio_band"])
        ratios = {
            key: s.empirical_std_mm / s.sigma_sampled_mm
            for key, s in site_stats.items()
            if s.sigma_sampled_mm > 0
        }
        ok = bool(ratios) and all(lo <= r <= hi for r in ratios.values())
        detail = ", ".join(f"{k}={r:.3f}" for k, r in sorted(ratios.items()))
        check("std_ratio", ok, f"empirical/sampled in [{lo}, {hi}]: {detail or 'n/a'}")
    if "world_local_budget_ratio_min" in tol:
        ratios = []
        for key, s in site_stats.items():
            budget = world_budget.get(s.serial)
            if budget and s.sigma_budget_mm > 0:
                ratios.append(budget / s.sigma_budget_mm)
        smallest = min(ratios) if ratios else 0.0
        check(
            "world_local_budget_ratio",
            smallest >= float(tol["world_local_budget_ratio_min"]),
            f"world budget is {smallest:.1f}x the local budget "
            f"(needs >= {tol['world_local_budget_ratio_min']}x)",
        )
    if "require_verdicts_pass" in tol:
        want = bool(tol["require_verdicts_pass"])
        check(
            "verdicts",
            all_verdicts_pass == want,
            f"precision gates {'passed' if all_verdicts_pass else 'failed'}; "
            f"scenario expects {'pass' if want else 'fail'}",
        )
    if "require_no_collisions" in tol:
        want = bool(tol["require_no_collisions"])
        check(
            "collisions",
            all_collisions_ok == want,
            f"carried-plate sweep {'clean' if all_collisions_ok else 'hit geometry'}; "
            f"scenario expects {'clean' if want else 'hits'}",
        )

    report = {
        "scenario": scn.name,
        "seed": scn.seed,
        "trials": scn.trials,
        "noise": {
            "odometry": {
                "sigma_t_mm": float(scn.noise.odometry.sigma_t_mm),
                "sigma_r_rad": float(scn.noise.odometry.sigma_r_rad),
            },
            "vision": {
                "sigma_t_mm": float(scn.noise.vision.sigma_t_mm),
                "sigma_r_rad": float(scn.noise.vision.sigma_r_rad),
            },
        },
        "stations": {k: list(v) for k, v in scn.stations.items()},
        "sites": {key: s.doc() for key, s in sorted(site_stats.items())},
        "world_frame": {
            serial: {
                "sigma_budget_mm": float(world_budget[serial]),
                "empirical_std_mm": float(world_stats[serial].empirical_std_mm),
                "max_error_mm": float(world_stats[serial].max_err_mm),
            }
            for serial in sorted(world_stats)
        },
        "plans": plan_reports,
        "checks": checks,
        "passed": all(c["passed"] for c in checks),
    }
    if not canonical:
        report["generated_at"] = (
            _dt.datetime.now(_dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
        )
    return report


def report_bytes(report: dict) -> bytes:
    return canonical_json_bytes(report)
