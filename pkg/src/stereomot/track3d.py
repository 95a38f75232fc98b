"""Greedy stitching of 3D tracklets into per-fish tracks.

A concurrent set of long tracklets seeds one main track per fish; remaining
tracklets form a gallery that is drained greedily, nearest-in-time first.
Galleries overlapping no main are scored on endpoint distance and temporal
gap; galleries overlapping every main are scored on the cost of switching
between tracklets mid-track. Ambiguous assignments are discarded rather
than guessed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .crossview import Tracklet3D


@dataclass(frozen=True)
class StitchParams:
    beta: float = 0.02          # min cost margin between best two mains
    top_fraction: float = 0.2   # fraction of longest tracklets used as seeds
    overlap_scale: float = 0.2  # required pairwise overlap vs shorter extent

    def __post_init__(self):
        if not 0 < self.beta < 1:
            raise ValueError("beta must lie in (0, 1)")
        if not 0 < self.top_fraction <= 1:
            raise ValueError("top_fraction must lie in (0, 1]")
        if not 0 < self.overlap_scale <= 1:
            raise ValueError("overlap_scale must lie in (0, 1]")


@dataclass
class Track3D:
    fish_id: int
    points: dict[int, np.ndarray] = field(default_factory=dict)
    sources: list[int] = field(default_factory=list)

    @property
    def first_frame(self) -> int:
        return min(self.points)

    @property
    def last_frame(self) -> int:
        return max(self.points)

    @property
    def duration(self) -> int:
        return self.last_frame - self.first_frame + 1


def _extent(t) -> tuple[int, int]:
    return (t.first_frame, t.last_frame)


def _overlap_frames(a, b) -> int:
    (fa, la), (fb, lb) = _extent(a), _extent(b)
    return min(la, lb) - max(fa, fb) + 1


def _overlaps(a, b) -> bool:
    return _overlap_frames(a, b) >= 1


def temporal_gap(a, b) -> int:
    """Frames separating two extents; 0 when they intersect."""
    if _overlaps(a, b):
        return 0
    (fa, la), (fb, lb) = _extent(a), _extent(b)
    return fb - la if fb > la else fa - lb


def select_initial(tracklets: list[Tracklet3D], n_fish: int,
                   params: StitchParams = StitchParams()
                   ) -> tuple[list[Track3D], set[int]] | None:
    """Pick n_fish concurrent tracklets to seed the main tracks.

    Seeds are the longest ~top_fraction tracklets; every combination that
    contains a seed and is pairwise-concurrent (overlap of at least
    max(1, overlap_scale * shorter extent) frames) is scored by its median
    pairwise overlap. Returns None if no valid combination exists.
    """
    if n_fish < 1:
        raise ValueError("n_fish must be >= 1")
    if len(tracklets) < n_fish:
        return None
    by_len = sorted(tracklets, key=lambda t: (-t.duration, t.id))
    seeds = by_len[:max(1, math.ceil(params.top_fraction * len(tracklets)))]

    def pair_ok(a, b) -> bool:
        need = max(1.0, params.overlap_scale * min(a.duration, b.duration))
        return _overlap_frames(a, b) >= need

    combos: dict[frozenset, tuple] = {}
    for seed in seeds:
        pool = sorted((t for t in tracklets
                       if t is seed or pair_ok(seed, t)), key=lambda t: t.id)
        for combo in combinations(pool, n_fish):
            if seed not in combo:
                continue
            key = frozenset(t.id for t in combo)
            if key in combos:
                continue
            if all(pair_ok(a, b) for a, b in combinations(combo, 2)):
                combos[key] = combo

    best, best_key = None, None
    for combo in combos.values():
        if n_fish == 1:
            score = float(combo[0].duration)
        else:
            score = float(np.median([_overlap_frames(a, b)
                                     for a, b in combinations(combo, 2)]))
        total = sum(t.duration for t in combo)
        ids = tuple(sorted(t.id for t in combo))
        key = (-score, -total, ids)
        if best_key is None or key < best_key:
            best, best_key = combo, key
    if best is None:
        return None
    ordered = sorted(best, key=lambda t: t.id)
    mains = [Track3D(fish_id=i + 1, points=dict(t.points), sources=[t.id])
             for i, t in enumerate(ordered)]
    return mains, {t.id for t in ordered}


def gallery_rank(galleries: list[Tracklet3D],
                 mains: list[Track3D]) -> list[Tracklet3D]:
    """Galleries ordered by smallest temporal gap to any main; galleries
    overlapping every main go last (input order preserved within ties)."""
    head, tail = [], []
    for g in galleries:
        gaps = [temporal_gap(g, m) for m in mains]
        (tail if all(_overlaps(g, m) for m in mains) else head).append(
            (min(gaps), g))
    head.sort(key=lambda item: item[0])
    return [g for _, g in head] + [g for _, g in tail]


def _switch_path(gallery, main) -> list[tuple[str, float]] | None:
    """Cheapest frame-by-frame walk over both tracklets' 3D points that
    visits at least one node of each; returns its view-switch edges.

    Nodes live at every frame either tracklet has a point; consecutive
    occupied frames are fully connected with L2 edge weights. None when no
    walk can touch both tracklets (single occupied frame, one node)."""
    if not _overlaps(gallery, main):
        return None
    layers = []
    for f in sorted(set(gallery.points) | set(main.points)):
        layer = []
        if f in main.points:
            layer.append(("m", main.points[f]))
        if f in gallery.points:
            layer.append(("g", gallery.points[f]))
        layers.append(layer)

    # state: (node index, saw gallery, saw main) -> (cost, parent state)
    states = {}
    for i, (src, _) in enumerate(layers[0]):
        states[(i, src == "g", src == "m")] = (0.0, None)
    trail = [states]
    for layer_prev, layer in zip(layers, layers[1:]):
        nxt = {}
        for (i, sg, sm), (cost, _) in states.items():
            for j, (src, p) in enumerate(layer):
                c = cost + float(np.linalg.norm(p - layer_prev[i][1]))
                key = (j, sg or src == "g", sm or src == "m")
                if key not in nxt or c < nxt[key][0]:
                    nxt[key] = (c, (i, sg, sm))
        states = nxt
        trail.append(states)

    finals = [(cost, key) for key, (cost, _) in states.items()
              if key[1] and key[2]]
    if not finals:
        return None
    _, key = min(finals, key=lambda item: item[0])
    indices = []
    for states in reversed(trail):
        indices.append(key[0])
        key = states[key][1]
        if key is None:
            break
    indices.reverse()

    edges = []
    for k in range(1, len(indices)):
        (src_a, pa) = layers[k - 1][indices[k - 1]]
        (src_b, pb) = layers[k][indices[k]]
        if src_a != src_b:
            kind = "in" if src_b == "g" else "out"
            edges.append((kind, float(np.linalg.norm(pb - pa))))
    return edges


def internal_switch_cost(gallery, main) -> tuple[float, float]:
    """(mean cost of switching into the gallery, mean cost of switching
    back to the main); inf when their extents never overlap."""
    edges = _switch_path(gallery, main)
    if edges is None:
        return (math.inf, math.inf)
    ins = [w for kind, w in edges if kind == "in"]
    outs = [w for kind, w in edges if kind == "out"]
    return (sum(ins) / len(ins) if ins else 0.0,
            sum(outs) / len(outs) if outs else 0.0)


def _endpoint_distance(gallery, main) -> float:
    if gallery.first_frame > main.last_frame:
        a, b = main.points[main.last_frame], gallery.points[gallery.first_frame]
    else:
        a, b = gallery.points[gallery.last_frame], main.points[main.first_frame]
    return float(np.linalg.norm(b - a))


def _normalize(values: list[float]) -> list[float]:
    s = sum(values)
    if s == 0:
        return [1.0 / len(values)] * len(values)
    return [v / s for v in values]


def assignment_cost(gallery: Tracklet3D, mains: list[Track3D],
                    params: StitchParams = StitchParams()
                    ) -> list[float | None]:
    """Per-main assignment cost; None marks mains the gallery cannot join.

    With at least one temporally disjoint main, those mains compete on
    normalized endpoint distance and temporal gap. When the gallery
    overlaps every main, they compete on mean switch-edge cost, overlapped
    frame count, and overlap fraction of the gallery."""
    overlapping = [_overlaps(gallery, m) for m in mains]
    costs: list[float | None] = [None] * len(mains)
    if not all(overlapping):
        idx = [i for i, ov in enumerate(overlapping) if not ov]
        dists = [_endpoint_distance(gallery, mains[i]) for i in idx]
        gaps = [float(temporal_gap(gallery, mains[i])) for i in idx]
        measures = [_normalize(dists), _normalize(gaps)]
    else:
        idx, switch, inter, ratio = [], [], [], []
        for i, m in enumerate(mains):
            edges = _switch_path(gallery, m)
            if edges is None:
                continue
            idx.append(i)
            switch.append(sum(w for _, w in edges) / len(edges) if edges else 0.0)
            ov = float(_overlap_frames(gallery, m))
            inter.append(ov)
            ratio.append(ov / gallery.duration)
        if not idx:
            return costs
        measures = [_normalize(switch), _normalize(inter), _normalize(ratio)]
    for k, i in enumerate(idx):
        costs[i] = float(np.mean([m[k] for m in measures]))
    return costs


def associate(tracklets: list[Tracklet3D], n_fish: int,
              params: StitchParams = StitchParams()) -> list[Track3D]:
    """Stitch tracklets into n_fish tracks (or pass them through unstitched
    when no concurrent seed set exists)."""
    usable = sorted((t for t in tracklets if t.points), key=lambda t: t.id)
    selected = select_initial(usable, n_fish, params)
    if selected is None:
        # No concurrent seed set: emit the raw tracklets so nothing is lost.
        return [Track3D(fish_id=i + 1, points=dict(t.points), sources=[t.id])
                for i, t in enumerate(usable)]
    mains, used = selected
    galleries = [t for t in usable if t.id not in used]
    while galleries:
        gallery = gallery_rank(galleries, mains)[0]
        galleries.remove(gallery)
        costs = assignment_cost(gallery, mains, params)
        valid = [i for i, c in enumerate(costs) if c is not None]
        if not valid:
            continue
        if len(valid) == 1:
            target = valid[0]
        else:
            ranked = sorted((costs[i], i) for i in valid)
            if ranked[1][0] - ranked[0][0] < params.beta:
                continue  # ambiguous: drop rather than risk an ID switch
            target = ranked[0][1]
        main = mains[target]
        for f, p in gallery.points.items():
            if f not in main.points:
                main.points[f] = p
        main.sources.append(gallery.id)
    return mains
