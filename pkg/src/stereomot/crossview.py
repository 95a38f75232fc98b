"""Cross-view association of 2D tracklets into 3D tracklets.

Every (top, front) tracklet pair with enough support becomes a node whose
weight measures stereo consistency over the frames both cover. Nodes that
share exactly one view's tracklet are linked by directed edges scored on
temporal proximity and implied swim speed; maximal-score paths through the
resulting DAG are extracted greedily and merged into 3D tracklets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import StereoRig, TankBounds, in_tank, triangulate_batch
from .track2d import Tracklet2D


@dataclass(frozen=True)
class AssocParams:
    alpha: int = 10                  # min detections per 2D tracklet
    tau_p: float = 25.0              # frames; temporal edge decay
    lambda_err: float = 1.0 / 8.03   # 1/px; reprojection-error decay
    lambda_s: float = 1.0 / 4.45     # s/cm; speed decay

    def __post_init__(self):
        if min(self.alpha, self.tau_p, self.lambda_err, self.lambda_s) <= 0:
            raise ValueError("AssocParams values must be positive")


def frame_intersection(top: Tracklet2D, front: Tracklet2D) -> list[int]:
    return sorted(set(top.frames) & set(front.frames))


@dataclass
class NodeCandidate:
    """Stereo evidence for one (top, front) tracklet pairing."""

    top: Tracklet2D
    front: Tracklet2D
    points: dict[int, np.ndarray]        # frame -> midpoint 3D estimate
    errors: dict[int, float]             # frame -> mean reprojection error, px
    chosen_front: dict[int, tuple[float, float]]  # frame -> picked candidate
    valid: dict[int, bool]               # frame -> estimate inside the tank
    weight: float                        # W

    @property
    def node_id(self) -> tuple[int, int]:
        return (self.top.id, self.front.id)

    @property
    def valid_frames(self) -> list[int]:
        return sorted(f for f, ok in self.valid.items() if ok)

    @property
    def first_valid(self) -> int:
        return self.valid_frames[0]

    @property
    def last_valid(self) -> int:
        return self.valid_frames[-1]


def node_weight(top: Tracklet2D, front: Tracklet2D, rig: StereoRig,
                tank: TankBounds,
                params: AssocParams = AssocParams()) -> NodeCandidate | None:
    """Score a pairing, or None when no overlap frame triangulates in-tank.

    Per overlap frame the top head is triangulated against every front head
    candidate and the lowest-reprojection-error candidate wins (first wins
    ties). W = median(V) * |V| / |F_top U F_front| over in-tank frames.
    """
    common = frame_intersection(top, front)
    if not common:
        return None
    tops, fronts, idx = [], [], []
    for f in common:
        head = top.detections[f].head
        for cand in front.detections[f].candidates:
            tops.append(head)
            fronts.append(cand)
            idx.append(f)
    pts, errs = triangulate_batch(np.asarray(tops, dtype=float),
                                  np.asarray(fronts, dtype=float),
                                  rig.top, rig.front)
    idx = np.asarray(idx)

    points: dict[int, np.ndarray] = {}
    errors: dict[int, float] = {}
    chosen: dict[int, tuple[float, float]] = {}
    valid: dict[int, bool] = {}
    for f in common:
        rows = np.flatnonzero(idx == f)
        best = rows[int(np.argmin(errs[rows]))]
        if not np.isfinite(errs[best]):
            continue
        points[f] = pts[best]
        errors[f] = float(errs[best])
        chosen[f] = tuple(fronts[best])
        valid[f] = in_tank(pts[best], tank)

    weights = [math.exp(-params.lambda_err * errors[f])
               for f, ok in sorted(valid.items()) if ok]
    if not weights:
        return None
    union = len(set(top.frames) | set(front.frames))
    w = float(np.median(weights)) * len(weights) / union
    return NodeCandidate(top=top, front=front, points=points, errors=errors,
                         chosen_front=chosen, valid=valid, weight=w)


def _extent_overlap(a: Tracklet2D, b: Tracklet2D) -> bool:
    # Sharing even a single frame counts as overlap.
    return a.first_frame <= b.last_frame and b.first_frame <= a.last_frame


def edge_weight(src: NodeCandidate, dst: NodeCandidate,
                params: AssocParams = AssocParams(),
                fps: float = 60.0) -> float:
    """exp(-lambda_s * speed) * exp(-gap / tau_p) * (W_src + W_dst)."""
    t_d = max(1, dst.first_valid - src.last_valid)
    dist = float(np.linalg.norm(dst.points[dst.first_valid]
                                - src.points[src.last_valid]))
    speed = dist / (t_d / fps)
    return (math.exp(-params.lambda_s * speed)
            * math.exp(-t_d / params.tau_p)
            * (src.weight + dst.weight))


@dataclass
class GraphNode:
    node_id: object
    weight: float
    top_id: object = None
    front_id: object = None
    payload: NodeCandidate | None = None


@dataclass
class AssociationGraph:
    """Weighted DAG over pairing candidates; also buildable synthetically."""

    nodes: dict = field(default_factory=dict)     # node_id -> GraphNode
    edges: dict = field(default_factory=dict)     # (src_id, dst_id) -> weight
    _succ: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._succ = {nid: [] for nid in self.nodes}
        for (a, b), w in self.edges.items():
            if a not in self.nodes or b not in self.nodes:
                raise ValueError(f"edge ({a}, {b}) references unknown node")
            if w <= 0:
                raise ValueError("edge weights must be positive")
            self._succ[a].append(b)
        for nid in self._succ:
            self._succ[nid].sort()
        self._check_acyclic()

    @classmethod
    def from_weights(cls, node_weights: dict, edge_weights: dict) -> "AssociationGraph":
        nodes = {}
        for nid, w in node_weights.items():
            if w <= 0:
                raise ValueError("node weights must be positive")
            nodes[nid] = GraphNode(node_id=nid, weight=float(w))
        return cls(nodes=nodes, edges=dict(edge_weights))

    def successors(self, node_id) -> list:
        return self._succ[node_id]

    def _check_acyclic(self) -> None:
        indeg = {nid: 0 for nid in self.nodes}
        for _, b in self.edges:
            indeg[b] += 1
        queue = sorted(nid for nid, d in indeg.items() if d == 0)
        seen = 0
        while queue:
            nid = queue.pop()
            seen += 1
            for b in self._succ[nid]:
                indeg[b] -= 1
                if indeg[b] == 0:
                    queue.append(b)
        if seen != len(self.nodes):
            raise ValueError("association graph contains a cycle")

    def _topo_order(self, alive: set) -> list:
        indeg = {nid: 0 for nid in alive}
        for (a, b) in self.edges:
            if a in alive and b in alive:
                indeg[b] += 1
        queue = sorted((nid for nid, d in indeg.items() if d == 0), reverse=True)
        order = []
        while queue:
            nid = queue.pop()
            order.append(nid)
            fresh = []
            for b in self._succ[nid]:
                if b in alive:
                    indeg[b] -= 1
                    if indeg[b] == 0:
                        fresh.append(b)
            if fresh:
                queue = sorted(set(queue) | set(fresh), reverse=True)
        return order

    def path_score(self, path: list) -> float:
        total = sum(self.nodes[nid].weight for nid in path)
        total += sum(self.edges[(a, b)] for a, b in zip(path, path[1:]))
        return total


def build_graph(top_tracklets: list[Tracklet2D],
                front_tracklets: list[Tracklet2D],
                rig: StereoRig, tank: TankBounds,
                params: AssocParams = AssocParams(),
                fps: float = 60.0) -> AssociationGraph:
    tops = [t for t in top_tracklets if len(t.frames) >= params.alpha]
    fronts = [t for t in front_tracklets if len(t.frames) >= params.alpha]

    cands: list[NodeCandidate] = []
    for top in tops:
        for front in fronts:
            cand = node_weight(top, front, rig, tank, params)
            if cand is not None:
                cands.append(cand)
    cands.sort(key=lambda c: c.node_id)

    nodes = {c.node_id: GraphNode(node_id=c.node_id, weight=c.weight,
                                  top_id=c.top.id, front_id=c.front.id,
                                  payload=c)
             for c in cands}
    edges = {}
    for src in cands:
        for dst in cands:
            if src is dst:
                continue
            share_top = src.top.id == dst.top.id
            share_front = src.front.id == dst.front.id
            if share_top == share_front:  # need exactly one shared view
                continue
            if share_top and _extent_overlap(src.front, dst.front):
                continue
            if share_front and _extent_overlap(src.top, dst.top):
                continue
            if src.last_valid < dst.first_valid:
                edges[(src.node_id, dst.node_id)] = edge_weight(
                    src, dst, params, fps)
    return AssociationGraph(nodes=nodes, edges=edges)


def extract_paths(graph: AssociationGraph) -> list[list]:
    """Repeatedly peel off the maximal-score path (lexicographically
    smallest node-id sequence on ties), removing its nodes and every node
    that shares a 2D tracklet with it."""
    alive = set(graph.nodes)
    paths = []
    while alive:
        order = graph._topo_order(alive)
        g: dict = {}
        choice: dict = {}
        for nid in reversed(order):
            best, best_succ = 0.0, None
            for b in graph.successors(nid):
                if b not in alive:
                    continue
                cand = graph.edges[(nid, b)] + g[b]
                if cand > best or (cand == best and best_succ is not None
                                   and b < best_succ):
                    best, best_succ = cand, b
            g[nid] = graph.nodes[nid].weight + best
            choice[nid] = best_succ

        start = min((nid for nid in alive), key=lambda n: (-g[n], n))
        path = [start]
        while choice[path[-1]] is not None:
            path.append(choice[path[-1]])
        paths.append(path)

        used_tops = {graph.nodes[nid].top_id for nid in path} - {None}
        used_fronts = {graph.nodes[nid].front_id for nid in path} - {None}
        alive -= set(path)
        alive -= {nid for nid in alive
                  if graph.nodes[nid].top_id in used_tops
                  or graph.nodes[nid].front_id in used_fronts}
    return paths


@dataclass
class Tracklet3D:
    """3D tracklet: per-frame in-tank points plus 2D payload for gap frames."""

    id: int
    points: dict[int, np.ndarray] = field(default_factory=dict)
    sources: dict[int, tuple] = field(default_factory=dict)  # frame -> (top, front) ids
    points2d: dict[int, dict[str, tuple[float, float]]] = field(default_factory=dict)

    @property
    def frames(self) -> list[int]:
        return sorted(set(self.sources) | set(self.points))

    @property
    def first_frame(self) -> int:  # 3D extent start
        return min(self.points)

    @property
    def last_frame(self) -> int:   # 3D extent end
        return max(self.points)

    @property
    def duration(self) -> int:
        return self.last_frame - self.first_frame + 1


def _resolve_front(node: NodeCandidate) -> dict[int, tuple[float, float]]:
    """Pick a front head candidate for every front frame.

    Frames triangulated during scoring keep their choice; the rest take the
    candidate closest to the nearest already-resolved frame (previous
    preferred, next otherwise), so choices propagate outward.
    """
    resolved = dict(node.chosen_front)
    pending = [f for f in node.front.frames if f not in resolved]
    if not resolved:
        return {f: node.front.detections[f].candidates[0] for f in node.front.frames}

    def pick(frame: int, ref: tuple[float, float]) -> tuple[float, float]:
        cands = node.front.detections[frame].candidates
        dists = [math.hypot(c[0] - ref[0], c[1] - ref[1]) for c in cands]
        return cands[dists.index(min(dists))]

    later = []
    for f in sorted(pending):
        prev = max((r for r in resolved if r < f), default=None)
        if prev is None:
            later.append(f)
            continue
        resolved[f] = pick(f, resolved[prev])
    for f in sorted(later, reverse=True):
        nxt = min(r for r in resolved if r > f)
        resolved[f] = pick(f, resolved[nxt])
    return resolved


def extract_3d_tracklets(graph: AssociationGraph) -> list[Tracklet3D]:
    out = []
    for tid, path in enumerate(extract_paths(graph)):
        tracklet = Tracklet3D(id=tid)
        for nid in path:
            node = graph.nodes[nid].payload
            if node is None:
                raise ValueError("graph node lacks tracklet payload")
            front2d = _resolve_front(node)
            for f in sorted(set(node.top.frames) | set(node.front.frames)):
                if f in node.points and node.valid[f] and f not in tracklet.points:
                    tracklet.points[f] = node.points[f]
                in_top = f in node.top.detections
                in_front = f in front2d
                if f not in tracklet.sources:
                    tracklet.sources[f] = (node.top.id if in_top else None,
                                           node.front.id if in_front else None)
                    payload = {}
                    if in_top:
                        payload["top"] = node.top.detections[f].head
                    if in_front:
                        payload["front"] = front2d[f]
                    tracklet.points2d[f] = payload
        out.append(tracklet)
    return out
