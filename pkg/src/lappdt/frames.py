"""A tree of named coordinate frames connected by uncertain transforms.

The graph is strictly a tree rooted at one frame (normally the world frame
"w"): every frame except the root has exactly one parent, so any two frames
are connected by a unique path. Graphs are immutable values; mutations return
updated copies.

resolve folds uncertainty in traversal order, edge by edge, so accumulated
rotational uncertainty applies its lever arm to every later translation in
the walk. Edges walked child-to-parent enter the fold through
uncertain_invert.

Well-known frame names:
  w                world
  poi.<station>    docking target of a station
  r, c, g          robot base, camera, TCP
  h, u             robot home / standby poses (named targets, not tree nodes)
  m.<serial>       marker of a device
  d.<serial>       device base
  s.<serial>.<site>, ss.<serial>.<site>, sd.<serial>.<site>
                   site, site approach, device approach
"""

from __future__ import annotations

from dataclasses import dataclass
from types import MappingProxyType
from typing import Iterator, Mapping

from .errors import DuplicateChild, UnknownFrame, UnknownParent, WouldCreateCycle
from .geom import (
    UncertainTransform,
    identity_uncertain,
    pose_to_doc,
    uncertain_compose,
    uncertain_from_doc,
    uncertain_invert,
)

WORLD = "w"
ROBOT_BASE = "r"
CAMERA = "c"
TCP = "g"
HOME = "h"
STANDBY = "u"


def poi_frame(station: str) -> str:
    return f"poi.{station}"


def device_frame(serial: str) -> str:
    return f"d.{serial}"


def marker_frame(serial: str) -> str:
    return f"m.{serial}"


def site_frame(serial: str, site: str) -> str:
    return f"s.{serial}.{site}"


def site_approach_frame(serial: str, site: str) -> str:
    return f"ss.{serial}.{site}"


def device_approach_frame(serial: str, site: str) -> str:
    return f"sd.{serial}.{site}"


@dataclass(frozen=True, eq=False)
class FrameGraph:
    """child -> (parent, edge) over a fixed root. Edges point parent->child."""

    root: str
    edges: Mapping[str, tuple[str, UncertainTransform]]

    @staticmethod
    def rooted(root: str = WORLD) -> "FrameGraph":
        return FrameGraph(root, MappingProxyType({}))

    @property
    def frames(self) -> set[str]:
        names = {self.root}
        for child, (parent, _) in self.edges.items():
            names.add(child)
            names.add(parent)
        return names

    def parent_of(self, frame: str) -> str | None:
        entry = self.edges.get(frame)
        return entry[0] if entry else None

    def _ancestry(self, frame: str) -> list[str]:
        """frame, parent, grandparent, ... up to (and including) the root."""
        chain = [frame]
        seen = {frame}
        while chain[-1] != self.root:
            entry = self.edges.get(chain[-1])
            if entry is None:
                break
            parent = entry[0]
            if parent in seen:  # defensive; construction forbids cycles
                raise WouldCreateCycle(f"cycle at frame {parent!r}")
            chain.append(parent)
            seen.add(parent)
        return chain

    def add_edge(self, parent: str, child: str, edge: UncertainTransform) -> "FrameGraph":
        """Attach child under parent. child must be new to the tree (or a
        detached name); attaching an ancestor of parent is rejected."""
        if parent not in self.frames:
            raise UnknownParent(f"parent frame {parent!r} is not in the graph")
        if child in self.edges or child == self.root:
            raise DuplicateChild(f"frame {child!r} already has a position in the tree")
        if child in self._ancestry(parent):
            raise DuplicateChild(f"frame {child!r} is an ancestor of {parent!r}")
        edges = dict(self.edges)
        edges[child] = (parent, edge)
        return FrameGraph(self.root, MappingProxyType(edges))

    def reparent(self, child: str, new_parent: str, edge: UncertainTransform) -> "FrameGraph":
        """Move an existing frame (with its subtree) under a new parent."""
        if child not in self.frames:
            raise UnknownFrame(f"frame {child!r} is not in the graph")
        if new_parent not in self.frames:
            raise UnknownFrame(f"frame {new_parent!r} is not in the graph")
        if child in self._ancestry(new_parent):
            raise WouldCreateCycle(f"{new_parent!r} is a descendant of {child!r}")
        edges = dict(self.edges)
        edges[child] = (new_parent, edge)
        return FrameGraph(self.root, MappingProxyType(edges))

    def resolve(self, src: str, dst: str) -> UncertainTransform:
        """The uncertain transform mapping dst-local coordinates into src.

        Walks the unique tree path src -> common ancestor -> dst, composing
        inverted edges on the way up and plain edges on the way down.
        """
        if src not in self.frames:
            raise UnknownFrame(f"frame {src!r} is not in the graph")
        if dst not in self.frames:
            raise UnknownFrame(f"frame {dst!r} is not in the graph")
        if src == dst:
            return identity_uncertain()
        up = self._ancestry(src)
        down = self._ancestry(dst)
        up_set = {f: i for i, f in enumerate(up)}
        pivot = next(f for f in down if f in up_set)
        acc = identity_uncertain()
        for frame in up[: up_set[pivot]]:
            _, edge = self.edges[frame]
            acc = uncertain_compose(acc, uncertain_invert(edge))
        descend = down[: down.index(pivot)]
        for frame in reversed(descend):
            _, edge = self.edges[frame]
            acc = uncertain_compose(acc, edge)
        return acc

    def walk(self) -> Iterator[tuple[str, str, UncertainTransform]]:
        """Yield (parent, child, edge), children sorted for determinism."""
        for child in sorted(self.edges):
            parent, edge = self.edges[child]
            yield parent, child, edge


def graph_to_doc(g: FrameGraph) -> dict:
    edges = []
    for parent, child, e in g.walk():
        entry = {"child": child, "parent": parent}
        entry.update(pose_to_doc(e.pose))
        entry["sigma_t_mm"] = e.sigma_t_mm
        entry["sigma_r_rad"] = e.sigma_r_rad
        entry["source"] = e.source
        edges.append(entry)
    return {"root": g.root, "edges": edges}


def graph_from_doc(doc: dict) -> FrameGraph:
    from .errors import SchemaError

    if not isinstance(doc, dict) or "root" not in doc or "edges" not in doc:
        raise SchemaError("", "expected an object with 'root' and 'edges'")
    g = FrameGraph.rooted(str(doc["root"]))
    pending = list(doc["edges"])
    # insert in dependency order; parents may appear after children in the doc
    progress = True
    while pending and progress:
        progress = False
        rest = []
        for i, entry in enumerate(pending):
            parent = entry.get("parent")
            if parent in g.frames:
                payload = {k: v for k, v in entry.items() if k not in ("child", "parent")}
                g = g.add_edge(parent, entry["child"], uncertain_from_doc(payload, f"/edges/{i}"))
                progress = True
            else:
                rest.append(entry)
        pending = rest
    if pending:
        raise UnknownParent(f"unresolvable parents in edge list: {[e.get('parent') for e in pending]}")
    return g


def robot_local_subtree(
    g: FrameGraph,
    observation: UncertainTransform,
    proto,
    serial: str,
) -> FrameGraph:
    """Build the temporary robot-rooted graph used while parked at a station.

    Copies the robot's kinematic edges (r->c and, when present, r->g) out of
    the global graph, hangs the observed marker under the camera, and the
    device's sites under the marker with their stored uncertainties. The
    world and poi frames are deliberately absent: everything downstream of
    this graph is independent of coarse navigation.
    """
    if CAMERA not in g.frames or g.parent_of(CAMERA) != ROBOT_BASE:
        raise UnknownFrame("global graph has no r->c edge to copy")
    local = FrameGraph.rooted(ROBOT_BASE)
    _, cam_edge = g.edges[CAMERA]
    local = local.add_edge(ROBOT_BASE, CAMERA, cam_edge)
    if g.parent_of(TCP) == ROBOT_BASE:
        local = local.add_edge(ROBOT_BASE, TCP, g.edges[TCP][1])
    marker = marker_frame(serial)
    local = local.add_edge(CAMERA, marker, observation)
    sigma = proto.stored_position_sigma
    for site_id in sorted(proto.sites):
        spec = proto.sites[site_id]
        for name, pose in (
            (site_frame(serial, site_id), spec.to_site),
            (site_approach_frame(serial, site_id), spec.to_site_approach),
            (device_approach_frame(serial, site_id), spec.to_device_approach),
        ):
            local = local.add_edge(
                marker,
                name,
                UncertainTransform(pose, sigma.sigma_t_mm, sigma.sigma_r_rad, "dt_stored"),
            )
    return local
