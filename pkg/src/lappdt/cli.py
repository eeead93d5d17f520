"""Command-line entry point.

Subcommands:

    validate      check twin documents (kind auto-detected or forced)
    twin put/get  store and fetch prototypes/instances in the registry
    plan          derive sites from observations and emit a pick-and-place plan
    run           execute a scenario file and emit its report
    dump-tree     print the facility frame tree
    init-example  write the bundled example lab to a directory

The registry directory comes from --registry or the LAPP_REGISTRY
environment variable. Exit codes: 0 success, 1 domain failure (invalid
document, version conflict, precision gate, collision, failed scenario),
2 usage / I-O / environment trouble.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import __version__, fixtures
from .errors import LappError, UnknownDevice
from .geom import compose, invert
from .plan import (
    CollisionConfig,
    DevicePlacement,
    PlannedSite,
    check_collisions,
    collision_report_to_doc,
    generate_pick_place,
    plan_to_doc,
)
from .pnp import MarkerObservation, build_global_graph, derive_site_chain, discover_device
from .sim import (
    load_observations,
    load_scenario,
    load_world,
    run_scenario,
)
from .twin import (
    Registry,
    canonical_json_bytes,
    detect_kind,
    load_facility,
    load_instance,
    load_prototype,
    load_robot,
    _parse_json,
    save_instance,
    save_prototype,
)

_VALIDATORS = {
    "prototype": load_prototype,
    "instance": load_instance,
    "robot": load_robot,
    "facility": load_facility,
    "world": load_world,
    "scenario": load_scenario,
    "observations": load_observations,
}


def _registry(args) -> Registry:
    root = args.registry or os.environ.get("LAPP_REGISTRY")
    if not root:
        print(
            "error: no registry configured (pass --registry or set LAPP_REGISTRY)",
            file=sys.stderr,
        )
        raise SystemExit(2)
    return Registry(root)


def _emit(payload: bytes, out: str | None):
    if out:
        Path(out).write_bytes(payload)
    else:
        sys.stdout.write(payload.decode("utf-8"))


def cmd_validate(args) -> int:
    worst = 0
    for name in args.files:
        try:
            raw = Path(name).read_bytes()
        except OSError as exc:
            print(f"FAIL {name}: {exc}", file=sys.stderr)
            worst = 2
            continue
        try:
            doc = _parse_json(raw)
            kind = args.kind or detect_kind(doc)
            if kind not in _VALIDATORS:
                raise LappError(f"unknown document kind {kind!r}")
            _VALIDATORS[kind](raw)
        except LappError as exc:
            print(f"FAIL {name}: {exc}", file=sys.stderr)
            worst = max(worst, 1)
            continue
        print(f"OK   {name} ({kind})")
    return worst


def cmd_twin(args) -> int:
    registry = _registry(args)
    if args.twin_cmd == "put":
        raw = Path(args.file).read_bytes()
        kind = detect_kind(_parse_json(raw))
        if kind == "prototype":
            proto = load_prototype(raw)
            registry.put_prototype(proto)
            print(f"stored prototype {proto.vendor}/{proto.model}")
        elif kind == "instance":
            inst = load_instance(raw)
            registry.put_instance(inst)
            print(f"stored instance {inst.serial} at revision {inst.revision}")
        else:
            raise LappError(
                f"the registry stores prototypes and instances, not {kind} documents"
            )
        return 0
    if args.twin_cmd == "get":
        if args.prototype:
            vendor, sep, model = args.prototype.partition("/")
            if not sep or not vendor or not model:
                print("error: --prototype takes VENDOR/MODEL", file=sys.stderr)
                return 2
            payload = save_prototype(registry.get_prototype(vendor, model))
        else:
            payload = save_instance(registry.get_instance(args.instance))
        _emit(payload, args.out)
        return 0
    # list
    for vendor, model in registry.list_prototypes():
        print(f"prototype {vendor}/{model}")
    for serial in registry.list_instances():
        print(f"instance  {serial} (revision {registry.get_instance(serial).revision})")
    return 0


def _endpoint(value: str) -> tuple[str, str]:
    serial, sep, site = value.partition(":")
    if not sep or not serial or not site:
        raise argparse.ArgumentTypeError("expected SERIAL:SITE")
    return serial, site


def cmd_plan(args) -> int:
    registry = _registry(args)
    robot = load_robot(Path(args.robot).read_bytes())
    facility = load_facility(Path(args.facility).read_bytes())
    observations = load_observations(Path(args.observations).read_bytes())

    def planned(serial: str, site: str) -> PlannedSite:
        inst = facility.instance(serial)
        proto = registry.prototype_for(inst)
        if serial not in observations:
            raise UnknownDevice(
                f"device not localized: {serial} (no marker observation)"
            )
        obs = MarkerObservation(serial, observations[serial])
        chain = derive_site_chain(robot, obs, proto, inst, site)
        return PlannedSite(proto=proto, inst=inst, site=site, chain=chain)

    src = planned(*args.src)
    dst = planned(*args.dst)
    plan = generate_pick_place(robot, src, dst)

    placements = []
    for inst in facility.devices:
        if inst.serial not in observations:
            continue
        proto = registry.prototype_for(inst)
        base_in_r = compose(
            compose(robot.camera_edge.pose, observations[inst.serial].pose),
            invert(proto.marker.device_to_marker),
        )
        placements.append(
            DevicePlacement(serial=inst.serial, proto=proto, base_pose=base_in_r)
        )
    report = check_collisions(plan, placements, src.proto.workpiece, CollisionConfig())

    doc = {"plan": plan_to_doc(plan), "collisions": collision_report_to_doc(report)}
    _emit(canonical_json_bytes(doc), args.out)
    if not report.ok:
        for v in report.violations:
            print(
                f"collision: {v.segment} hits {v.serial}/{v.box} "
                f"(first at {v.first_hit_fraction:.3f})",
                file=sys.stderr,
            )
        return 1
    return 0


def cmd_run(args) -> int:
    report = run_scenario(
        args.scenario, canonical=args.canonical, seed=args.seed, trials=args.trials
    )
    _emit(canonical_json_bytes(report), args.out)
    for check in report["checks"]:
        status = "PASS" if check["passed"] else "FAIL"
        print(f"[{status}] {check['name']}: {check['detail']}", file=sys.stderr)
    return 0 if report["passed"] else 1


def cmd_dump_tree(args) -> int:
    registry = _registry(args)
    facility = load_facility(Path(args.facility).read_bytes())
    protos = {
        inst.serial: registry.prototype_for(inst) for inst in facility.devices
    }
    robot = None
    if args.robot:
        robot = load_robot(Path(args.robot).read_bytes())
    if args.observations:
        if not (robot and args.station):
            print(
                "error: --observations needs --robot and --station", file=sys.stderr
            )
            return 2
        for serial, edge in load_observations(
            Path(args.observations).read_bytes()
        ).items():
            facility = discover_device(
                facility,
                robot,
                args.station,
                MarkerObservation(serial, edge),
                protos[serial],
            )
    g = build_global_graph(
        facility, protos, robot, args.station if robot else None
    )
    children: dict[str, list] = {}
    for parent, child, edge in g.walk():
        children.setdefault(parent, []).append((child, edge))

    def rec(name: str, depth: int):
        for child, edge in children.get(name, []):
            print(
                f"{'  ' * depth}{child}  [{edge.source}] "
                f"st={edge.sigma_t_mm:.3f}mm sr={edge.sigma_r_rad:.4f}rad"
            )
            rec(child, depth + 1)

    print(g.root)
    rec(g.root, 1)
    unplaced = [d.serial for d in facility.devices if d.location is None]
    if unplaced:
        print(f"# not yet located: {', '.join(unplaced)}", file=sys.stderr)
    return 0


def cmd_init_example(args) -> int:
    root = Path(args.dir)
    written = fixtures.write_example_tree(root, force=args.force)
    for path in written:
        print(path.relative_to(root) if path.is_relative_to(root) else path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lappdt", description="digital-twin toolkit for mobile lab robots"
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="validate twin documents")
    p.add_argument("files", nargs="+", metavar="FILE")
    p.add_argument("--kind", choices=sorted(_VALIDATORS), help="skip auto-detection")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("twin", help="registry operations")
    twin_sub = p.add_subparsers(dest="twin_cmd", required=True)
    t = twin_sub.add_parser("put", help="store a prototype or instance")
    t.add_argument("file", metavar="FILE")
    t.add_argument("--registry")
    t.set_defaults(func=cmd_twin)
    t = twin_sub.add_parser("get", help="fetch a document in canonical form")
    group = t.add_mutually_exclusive_group(required=True)
    group.add_argument("--prototype", metavar="VENDOR/MODEL")
    group.add_argument("--instance", metavar="SERIAL")
    t.add_argument("--registry")
    t.add_argument("--out", metavar="FILE")
    t.set_defaults(func=cmd_twin)
    t = twin_sub.add_parser("list", help="list registry contents")
    t.add_argument("--registry")
    t.set_defaults(func=cmd_twin)

    p = sub.add_parser("plan", help="derive sites and plan a plate transfer")
    p.add_argument("--robot", required=True, metavar="FILE")
    p.add_argument("--facility", required=True, metavar="FILE")
    p.add_argument("--observations", required=True, metavar="FILE")
    p.add_argument("--src", required=True, type=_endpoint, metavar="SERIAL:SITE")
    p.add_argument("--dst", required=True, type=_endpoint, metavar="SERIAL:SITE")
    p.add_argument("--registry")
    p.add_argument("--out", metavar="FILE")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("run", help="run a scenario and emit its report")
    p.add_argument("scenario", metavar="SCENARIO")
    p.add_argument("--seed", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--canonical", action="store_true",
                   help="omit the generated_at stamp for reproducible bytes")
    p.add_argument("--out", metavar="FILE")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("dump-tree", help="print the facility frame tree")
    p.add_argument("--facility", required=True, metavar="FILE")
    p.add_argument("--robot", metavar="FILE")
    p.add_argument("--station", metavar="NAME")
    p.add_argument("--observations", metavar="FILE",
                   help="locate devices from these sightings before printing")
    p.add_argument("--registry")
    p.set_defaults(func=cmd_dump_tree)

    p = sub.add_parser("init-example", help="write the bundled example lab")
    p.add_argument("dir", metavar="DIR")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_init_example)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args) or 0
    except LappError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileExistsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
