"""Background-subtraction detectors and external-detection ingestion.

Top view: median background, intermodes threshold, hole filling,
Zhang-Suen thinning, and a 5x5 keypoint kernel whose responses classify
skeleton endpoints and junctions; keypoints are weighted by local blob
shape and the head is taken at the wide end of the body. Front view:
entropy threshold and connected-component blobs with a centroid plus two
edge proxy points per blob. External (box-style) detections are ingested
by confidence and reduced to box centers.

All detector outputs are in full-resolution pixel coordinates; the
internal 2x decimation never leaks downstream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

ENDPOINT_VALUES = frozenset({116, 117, 118, 131})
JUNCTION_VALUES = frozenset({148, 149, 150, 151})

# Center weight dominates, 8-neighbours mid-weight, outer ring low weight:
# the response value encodes the local skeleton topology uniquely enough
# to separate line ends from junctions.
KEYPOINT_KERNEL = np.array([
    [1, 1, 1, 1, 1],
    [1, 15, 15, 15, 1],
    [1, 15, 100, 15, 1],
    [1, 15, 15, 15, 1],
    [1, 1, 1, 1, 1],
], dtype=np.int64)

_CROSS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=int)
_BOX8 = np.ones((3, 3), dtype=int)


class DetectError(ValueError):
    """Raised for invalid detector inputs or an unreachable threshold."""


@dataclass
class Detection:
    """One 2D observation: a head point plus optional blob statistics."""

    frame: int
    view: str
    head: tuple[float, float]
    candidates: tuple[tuple[float, float], ...]
    centroid: tuple[float, float] | None = None
    cov: np.ndarray | None = None
    bbox: tuple[float, float, float, float] | None = None
    confidence: float | None = None


@dataclass(frozen=True)
class DetectParams:
    n_bg: int = 80
    downsample: int = 2
    nms_thresh: float = 50.0  # percent box overlap
    junction_divisor: float = 2.5
    min_keypoint_weight: float = 1.0
    min_blob_area: int = 20
    n_fish: int = 1

    def __post_init__(self):
        for name in ("n_bg", "downsample", "nms_thresh", "junction_divisor",
                     "min_keypoint_weight", "min_blob_area", "n_fish"):
            if getattr(self, name) <= 0:
                raise ValueError(f"DetectParams.{name} must be positive")


def estimate_background(frames) -> np.ndarray:
    """Per-pixel median of uniformly sampled frames (lower median when even)."""
    frames = [np.asarray(f) for f in frames]
    if not frames:
        raise DetectError("estimate_background needs at least one frame")
    shape = frames[0].shape
    if any(f.shape != shape for f in frames):
        raise DetectError("background frames must share dimensions")
    stack = np.sort(np.stack(frames), axis=0)
    return stack[(len(frames) - 1) // 2].astype(np.uint8)


def preprocess(frame: np.ndarray, bg: np.ndarray) -> np.ndarray:
    """|frame - bg|, min-max normalized to [0,255], 5x5 median filtered.

    A zero-range difference image normalizes to all zeros; the median
    filter clamps at the border.
    """
    frame = np.asarray(frame)
    bg = np.asarray(bg)
    if frame.shape != bg.shape:
        raise DetectError("frame and background dimensions differ")
    diff = np.abs(frame.astype(np.int16) - bg.astype(np.int16)).astype(np.float64)
    lo = diff.min()
    hi = diff.max()
    if hi == lo:
        norm = np.zeros_like(diff)
    else:
        norm = (diff - lo) * (255.0 / (hi - lo))
    img = np.rint(norm).astype(np.uint8)
    return ndimage.median_filter(img, size=5, mode="nearest")


def _modes(hist: np.ndarray) -> list[float]:
    """Local maxima positions; a plateau of equal bins is one mode at its
    midpoint, and the array is treated as -inf padded at both ends."""
    modes = []
    n = len(hist)
    i = 0
    while i < n:
        j = i
        while j + 1 < n and hist[j + 1] == hist[i]:
            j += 1
        left_ok = i == 0 or hist[i - 1] < hist[i]
        right_ok = j == n - 1 or hist[j + 1] < hist[j]
        if left_ok and right_ok and hist[i] > 0:
            modes.append((i + j) / 2.0)
        i = j + 1
    return modes


def intermodes_threshold(hist, max_iter: int = 10000) -> int:
    """Iteratively mean-smooth the histogram until exactly two modes remain;
    the threshold is the floor of the mode midpoint."""
    hist = np.asarray(hist, dtype=np.float64)
    if hist.size == 0 or hist.sum() <= 0:
        raise DetectError("intermodes_threshold needs a non-empty histogram")
    nz = np.nonzero(hist)[0]
    minbin, maxbin = int(nz[0]), int(nz[-1])
    if minbin == maxbin:
        raise DetectError("single-bin histogram can never become bimodal")
    work = hist[minbin:maxbin + 1].copy()
    iters = 0
    while len(_modes(work)) != 2:
        work = np.convolve(work, np.array([1.0, 1.0, 1.0]), mode="same") / 3.0
        iters += 1
        if iters > max_iter:
            raise DetectError(
                f"histogram did not become bimodal within {max_iter} iterations")
    m1, m2 = _modes(work)
    return int(np.floor((m1 + m2) / 2.0)) + minbin


def entropy_threshold(hist) -> int:
    """Split maximizing the summed background and foreground entropies.

    Bins where the cumulative mass is 0 or 1 are excluded; ties resolve
    to the smallest bin index.
    """
    counts = np.asarray(hist, dtype=np.int64)
    if np.count_nonzero(counts) < 2:
        raise DetectError("entropy_threshold needs at least two non-zero bins")
    total = counts.sum()
    h = counts / total
    ccum = np.cumsum(counts)
    hc = ccum / total
    with np.errstate(divide="ignore", invalid="ignore"):
        hlogh = np.where(h > 0, h * np.log(h), 0.0)
    s1 = np.cumsum(hlogh)
    s_total = s1[-1]
    valid = (ccum > 0) & (ccum < total)
    k = np.nonzero(valid)[0]
    b = np.log(hc[k]) - s1[k] / hc[k]
    w = np.log(1.0 - hc[k]) - (s_total - s1[k]) / (1.0 - hc[k])
    e = b + w
    return int(k[np.argmax(e)])


def skeletonize(binary: np.ndarray) -> np.ndarray:
    """Zhang-Suen two-subiteration thinning to convergence (0/255 output)."""
    img = np.asarray(binary) > 0
    img = np.pad(img, 1, constant_values=False)
    # Removal masks for the two subiterations; see Zhang & Suen (1984).
    while True:
        changed = False
        for step in (0, 1):
            c = img[1:-1, 1:-1]
            p2 = img[:-2, 1:-1]
            p3 = img[:-2, 2:]
            p4 = img[1:-1, 2:]
            p5 = img[2:, 2:]
            p6 = img[2:, 1:-1]
            p7 = img[2:, :-2]
            p8 = img[1:-1, :-2]
            p9 = img[:-2, :-2]
            ring = [p2, p3, p4, p5, p6, p7, p8, p9]
            bsum = sum(p.astype(np.int8) for p in ring)
            a = sum((~ring[i] & ring[(i + 1) % 8]).astype(np.int8)
                    for i in range(8))
            if step == 0:
                extra = ~(p2 & p4 & p6) & ~(p4 & p6 & p8)
            else:
                extra = ~(p2 & p4 & p8) & ~(p2 & p6 & p8)
            remove = c & (a == 1) & (bsum >= 2) & (bsum <= 6) & extra
            if remove.any():
                img[1:-1, 1:-1] &= ~remove
                changed = True
        if not changed:
            break
    return img[1:-1, 1:-1].astype(np.uint8) * 255


@dataclass(frozen=True)
class Keypoint:
    point: tuple[int, int]  # (x, y) px
    weight: float
    kind: str  # "endpoint" | "junction"


def kernel_response(skel: np.ndarray) -> np.ndarray:
    """5x5 kernel response of the 0/1 skeleton at every pixel."""
    skel01 = (np.asarray(skel) > 0).astype(np.int64)
    return ndimage.convolve(skel01, KEYPOINT_KERNEL, mode="constant", cval=0)


def _window_weight(blob: np.ndarray, x: int, y: int) -> float:
    """Smallest eigenvalue of the blob-pixel coordinate covariance in the
    20x20 window centered on (x, y)."""
    h, w = blob.shape
    r0, r1 = max(0, y - 10), min(h, y + 10)
    c0, c1 = max(0, x - 10), min(w, x + 10)
    ys, xs = np.nonzero(blob[r0:r1, c0:c1])
    if len(xs) < 2:
        return 0.0
    cov = np.cov(np.stack([xs.astype(float), ys.astype(float)]), bias=True)
    return float(np.linalg.eigvalsh(cov)[0])


def _box_overlap_pct(a: Keypoint, b: Keypoint) -> float:
    """Overlap of the two w-by-w boxes as a fraction of the smaller box."""
    if a.weight <= 0 or b.weight <= 0:
        return 0.0
    ah, bh = a.weight / 2.0, b.weight / 2.0
    iw = min(a.point[0] + ah, b.point[0] + bh) - max(a.point[0] - ah, b.point[0] - bh)
    ih = min(a.point[1] + ah, b.point[1] + bh) - max(a.point[1] - ah, b.point[1] - bh)
    if iw <= 0 or ih <= 0:
        return 0.0
    return (iw * ih) / min(a.weight ** 2, b.weight ** 2)


def skeleton_keypoints(skel: np.ndarray, blob: np.ndarray,
                       params: DetectParams = DetectParams()) -> list[Keypoint]:
    """Classify skeleton endpoints/junctions and weight them by blob shape.

    Junction weights are divided by params.junction_divisor; keypoints are
    non-max suppressed over their w-by-w boxes and those below the minimum
    weight are discarded.
    """
    blob = np.asarray(blob) > 0
    resp = kernel_response(skel)
    on = np.asarray(skel) > 0
    found = []
    ys, xs = np.nonzero(on)
    for y, x in zip(ys.tolist(), xs.tolist()):
        value = int(resp[y, x])
        if value in ENDPOINT_VALUES:
            kind = "endpoint"
        elif value in JUNCTION_VALUES:
            kind = "junction"
        else:
            continue
        w = _window_weight(blob, x, y)
        if kind == "junction":
            w /= params.junction_divisor
        found.append(Keypoint(point=(x, y), weight=w, kind=kind))

    found.sort(key=lambda k: (-k.weight, k.point[1], k.point[0]))
    kept: list[Keypoint] = []
    thresh = params.nms_thresh / 100.0
    for cand in found:
        if all(_box_overlap_pct(cand, k) < thresh for k in kept):
            kept.append(cand)
    return [k for k in kept if k.weight >= params.min_keypoint_weight]


def fill_holes(mask: np.ndarray) -> np.ndarray:
    """Fill interior holes of 8-connected foreground components."""
    mask = np.asarray(mask) > 0
    inv = ~mask
    labels, n = ndimage.label(inv, structure=_CROSS)
    if n == 0:
        return mask
    border = np.zeros(n + 1, dtype=bool)
    for edge in (labels[0, :], labels[-1, :], labels[:, 0], labels[:, -1]):
        border[np.unique(edge)] = True
    border[0] = True
    return mask | ~border[labels]


def _select_head_keypoints(kps: list[Keypoint]) -> list[Keypoint]:
    """Per-skeleton selection: of the two keypoints farthest apart keep the
    heavier one, then keep the heavier half of the remainder."""
    if len(kps) <= 1:
        return list(kps)
    best_pair = (0, 1)
    best_d = -1.0
    for i in range(len(kps)):
        for j in range(i + 1, len(kps)):
            dx = kps[i].point[0] - kps[j].point[0]
            dy = kps[i].point[1] - kps[j].point[1]
            d = dx * dx + dy * dy
            if d > best_d:
                best_d = d
                best_pair = (i, j)
    a, b = best_pair
    winner = kps[a] if kps[a].weight >= kps[b].weight else kps[b]
    rest = [k for idx, k in enumerate(kps) if idx not in (a, b)]
    rest.sort(key=lambda k: (-k.weight, k.point[1], k.point[0]))
    return [winner] + rest[:len(rest) // 2]


def detect_top(frame: np.ndarray, bg: np.ndarray,
               params: DetectParams = DetectParams(),
               frame_index: int = 0) -> list[Detection]:
    """Skeleton-keypoint head detector for the top view."""
    f = params.downsample
    pre = preprocess(np.asarray(frame)[::f, ::f], np.asarray(bg)[::f, ::f])
    hist = np.bincount(pre.ravel(), minlength=256)
    try:
        t = intermodes_threshold(hist)
    except DetectError:
        return []
    mask = fill_holes(pre > t)
    skel = skeletonize(mask)
    keypoints = skeleton_keypoints(skel, mask, params)
    if not keypoints:
        return []
    labels, _ = ndimage.label(skel > 0, structure=_BOX8)
    by_comp: dict[int, list[Keypoint]] = {}
    for kp in keypoints:
        comp = int(labels[kp.point[1], kp.point[0]])
        by_comp.setdefault(comp, []).append(kp)
    out = []
    for comp in sorted(by_comp):
        for kp in _select_head_keypoints(by_comp[comp]):
            head = (float(kp.point[0] * f), float(kp.point[1] * f))
            out.append(Detection(frame=frame_index, view="top", head=head,
                                 candidates=(head,)))
    return out


def detect_front(frame: np.ndarray, bg: np.ndarray,
                 params: DetectParams = DetectParams(),
                 frame_index: int = 0) -> list[Detection]:
    """Entropy-threshold blob detector for the front view.

    Emits up to 2*n_fish blobs (largest first, minimum area applied), each
    with centroid, pixel covariance, and two edge proxy points.
    """
    f = params.downsample
    pre = preprocess(np.asarray(frame)[::f, ::f], np.asarray(bg)[::f, ::f])
    hist = np.bincount(pre.ravel(), minlength=256)
    try:
        t = entropy_threshold(hist)
    except DetectError:
        return []
    mask = pre > t
    labels, n = ndimage.label(mask, structure=_BOX8)
    if n == 0:
        return []
    counts = np.bincount(labels.ravel())
    order = sorted(range(1, n + 1), key=lambda lbl: (-counts[lbl], lbl))
    slices = ndimage.find_objects(labels)
    out = []
    for lbl in order:
        area = int(counts[lbl])
        if area < params.min_blob_area:
            continue
        if len(out) >= 2 * params.n_fish:
            break
        sl = slices[lbl - 1]
        ys, xs = np.nonzero(labels[sl] == lbl)
        ys = ys + sl[0].start
        xs = xs + sl[1].start
        mean_x = float(xs.mean())
        mean_y = float(ys.mean())
        min_x, max_x = float(xs.min()), float(xs.max())
        min_y, max_y = float(ys.min()), float(ys.max())
        w_px = max_x - min_x + 1.0
        h_px = max_y - min_y + 1.0
        if w_px > h_px:
            proxies = ((min_x, mean_y), (max_x, mean_y))
        else:
            proxies = ((mean_x, min_y), (mean_x, max_y))
        cov = np.cov(np.stack([xs.astype(float), ys.astype(float)]), bias=True)
        if cov.ndim == 0:  # single-pixel blob
            cov = np.zeros((2, 2))
        centroid = (mean_x * f, mean_y * f)
        out.append(Detection(
            frame=frame_index, view="front", head=centroid,
            candidates=(centroid,
                        (proxies[0][0] * f, proxies[0][1] * f),
                        (proxies[1][0] * f, proxies[1][1] * f)),
            centroid=centroid,
            cov=np.asarray(cov, dtype=float) * (f * f),
            bbox=(min_x * f, min_y * f, w_px * f, h_px * f),
        ))
    return out


def ingest_external_detections(path, min_confidence: float = 95.0,
                               ) -> dict[int, list[Detection]]:
    """Read a detection CSV, keep rows with confidence >= min_confidence,
    and reduce each box to its center point."""
    from .formats import read_detections_csv

    rows = read_detections_csv(path)
    per_frame: dict[int, list[Detection]] = {}
    for line_no, det in rows:
        if det.confidence is None or det.bbox is None:
            raise DetectError(
                f"{path}:{line_no}: external detection rows need bbox and "
                f"confidence fields")
        if det.confidence < min_confidence:
            continue
        bx, by, bw, bh = det.bbox
        head = (bx + bw / 2.0, by + bh / 2.0)
        kept = Detection(frame=det.frame, view=det.view, head=head,
                         candidates=(head,), bbox=det.bbox,
                         confidence=det.confidence)
        per_frame.setdefault(det.frame, []).append(kept)
    return per_frame
