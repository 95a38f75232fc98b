"""CSV / JSON / PGM serialization for every pipeline stage.

All CSV files start with '# key: value' comment lines (tool version, seed,
fps, ...) followed by an exact header row. Floats are written with repr()
so values round-trip bit-for-bit; empty fields mean "absent". Malformed
input is reported as path:line: message.
"""

from __future__ import annotations

import csv
import json
import re

import numpy as np

from . import __version__
from .crossview import Tracklet3D
from .detect import Detection
from .metrics import EvalReport, GroundTruth, GTEntry
from .track2d import Tracklet2D
from .track3d import Track3D

REPORT_SCHEMA_VERSION = 1

DETECTIONS_HEADER = ("frame", "view", "x", "y", "bbox_x", "bbox_y", "bbox_w",
                     "bbox_h", "confidence", "c1x", "c1y", "c2x", "c2y",
                     "c3x", "c3y")
TRACKLETS_HEADER = ("tracklet_id", "view", "frame", "x", "y", "c1x", "c1y",
                    "c2x", "c2y", "c3x", "c3y", "covxx", "covxy", "covyy")
TRACKLETS3D_HEADER = ("tracklet_id", "frame", "x", "y", "z",
                      "top_tracklet_id", "front_tracklet_id")
TRACKS_HEADER = ("frame", "fish_id", "x", "y", "z")
ANNOTATIONS_HEADER = ("frame", "fish_id", "view", "bbox_x", "bbox_y",
                      "bbox_w", "bbox_h", "head_x", "head_y", "occluded",
                      "x3d", "y3d", "z3d")


class FormatError(ValueError):
    pass


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_rows(path, header, rows, meta: dict | None = None) -> None:
    meta = dict(meta or {})
    meta.setdefault("generator", f"stereomot {__version__}")
    with open(path, "w", newline="") as fh:
        for k, v in meta.items():
            fh.write(f"# {k}: {v}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def read_meta(path) -> dict[str, str]:
    """The '# key: value' comment lines at the top of a CSV file."""
    meta = {}
    with open(path, newline="") as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            m = re.match(r"#\s*([^:]+):\s*(.*)", line.strip())
            if m:
                meta[m.group(1).strip()] = m.group(2).strip()
    return meta


def _read_rows(path, header) -> list[tuple[int, dict[str, str]]]:
    """Data rows as (line_no, column dict); validates the header exactly."""
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        expected = None
        for line_no, row in enumerate(reader, start=1):
            if not row or (row[0].startswith("#") and expected is None):
                continue
            if expected is None:
                if tuple(c.strip() for c in row) != tuple(header):
                    raise FormatError(
                        f"{path}:{line_no}: expected header "
                        f"{','.join(header)}, got {','.join(row)}")
                expected = len(header)
                continue
            if len(row) != expected:
                raise FormatError(
                    f"{path}:{line_no}: expected {expected} fields, "
                    f"got {len(row)}")
            out.append((line_no, dict(zip(header, row))))
    if expected is None:
        raise FormatError(f"{path}:1: missing header row")
    return out


def _req_int(path, line_no, row, key) -> int:
    try:
        return int(row[key])
    except ValueError:
        raise FormatError(
            f"{path}:{line_no}: field {key!r} must be an integer, "
            f"got {row[key]!r}") from None


def _req_float(path, line_no, row, key) -> float:
    try:
        return float(row[key])
    except ValueError:
        raise FormatError(
            f"{path}:{line_no}: field {key!r} must be a number, "
            f"got {row[key]!r}") from None


def _opt_float(path, line_no, row, key) -> float | None:
    if row[key] == "":
        return None
    return _req_float(path, line_no, row, key)


def _req_view(path, line_no, row) -> str:
    view = row["view"]
    if view not in ("top", "front"):
        raise FormatError(
            f"{path}:{line_no}: view must be 'top' or 'front', got {view!r}")
    return view


# ---------------------------------------------------------------------------
# detections


def write_detections_csv(path, detections: dict[str, dict[int, list[Detection]]],
                         meta: dict | None = None) -> None:
    rows = []
    for view in ("top", "front"):
        for f in sorted(detections.get(view, {})):
            for det in detections[view][f]:
                cands = list(det.candidates[:3])
                cands += [None] * (3 - len(cands))
                row = [det.frame, det.view, det.head[0], det.head[1]]
                row += list(det.bbox) if det.bbox is not None else [None] * 4
                row.append(det.confidence)
                for c in cands:
                    row += [c[0], c[1]] if c is not None else [None, None]
                rows.append(row)
    _write_rows(path, DETECTIONS_HEADER, rows, meta)


def read_detections_csv(path) -> list[tuple[int, Detection]]:
    out = []
    for line_no, row in _read_rows(path, DETECTIONS_HEADER):
        frame = _req_int(path, line_no, row, "frame")
        view = _req_view(path, line_no, row)
        head = (_req_float(path, line_no, row, "x"),
                _req_float(path, line_no, row, "y"))
        box = [_opt_float(path, line_no, row, k)
               for k in ("bbox_x", "bbox_y", "bbox_w", "bbox_h")]
        bbox = tuple(box) if all(v is not None for v in box) else None
        cands = []
        for i in (1, 2, 3):
            cx = _opt_float(path, line_no, row, f"c{i}x")
            cy = _opt_float(path, line_no, row, f"c{i}y")
            if cx is not None and cy is not None:
                cands.append((cx, cy))
        out.append((line_no, Detection(
            frame=frame, view=view, head=head,
            candidates=tuple(cands) if cands else (head,), bbox=bbox,
            confidence=_opt_float(path, line_no, row, "confidence"))))
    return out


def group_detections(rows: list[tuple[int, Detection]]
                     ) -> dict[str, dict[int, list[Detection]]]:
    out: dict[str, dict[int, list[Detection]]] = {"top": {}, "front": {}}
    for _, det in rows:
        out[det.view].setdefault(det.frame, []).append(det)
    return out


# ---------------------------------------------------------------------------
# 2D tracklets


def write_tracklets_csv(path, tracklets: list[Tracklet2D],
                        meta: dict | None = None) -> None:
    rows = []
    for t in sorted(tracklets, key=lambda t: (t.view, t.id)):
        for f in t.frames:
            det = t.detections[f]
            cands = list(det.candidates[:3])
            cands += [None] * (3 - len(cands))
            row = [t.id, t.view, f, det.head[0], det.head[1]]
            for c in cands:
                row += [c[0], c[1]] if c is not None else [None, None]
            if det.cov is not None:
                cov = np.asarray(det.cov)
                row += [cov[0, 0], cov[0, 1], cov[1, 1]]
            else:
                row += [None, None, None]
            rows.append(row)
    _write_rows(path, TRACKLETS_HEADER, rows, meta)


def read_tracklets_csv(path) -> list[Tracklet2D]:
    tracklets: dict[tuple[str, int], Tracklet2D] = {}
    staged: dict[tuple[str, int], list[tuple[int, Detection]]] = {}
    for line_no, row in _read_rows(path, TRACKLETS_HEADER):
        tid = _req_int(path, line_no, row, "tracklet_id")
        view = _req_view(path, line_no, row)
        frame = _req_int(path, line_no, row, "frame")
        head = (_req_float(path, line_no, row, "x"),
                _req_float(path, line_no, row, "y"))
        cands = []
        for i in (1, 2, 3):
            cx = _opt_float(path, line_no, row, f"c{i}x")
            cy = _opt_float(path, line_no, row, f"c{i}y")
            if cx is not None and cy is not None:
                cands.append((cx, cy))
        cov_vals = [_opt_float(path, line_no, row, k)
                    for k in ("covxx", "covxy", "covyy")]
        cov = None
        if all(v is not None for v in cov_vals):
            cov = np.array([[cov_vals[0], cov_vals[1]],
                            [cov_vals[1], cov_vals[2]]])
        det = Detection(frame=frame, view=view, head=head,
                        candidates=tuple(cands) if cands else (head,),
                        centroid=head if cov is not None else None, cov=cov)
        staged.setdefault((view, tid), []).append((frame, det))
    out = []
    for (view, tid), items in sorted(staged.items()):
        t = Tracklet2D(id=tid, view=view)
        for frame, det in sorted(items, key=lambda x: x[0]):
            t.append(frame, det)
        out.append(t)
    return out


# ---------------------------------------------------------------------------
# 3D tracklets


def write_tracklets3d_csv(path, tracklets: list[Tracklet3D],
                          meta: dict | None = None) -> None:
    rows = []
    for t in sorted(tracklets, key=lambda t: t.id):
        for f in t.frames:
            p = t.points.get(f)
            top_id, front_id = t.sources.get(f, (None, None))
            rows.append([t.id, f,
                         p[0] if p is not None else None,
                         p[1] if p is not None else None,
                         p[2] if p is not None else None,
                         top_id, front_id])
    _write_rows(path, TRACKLETS3D_HEADER, rows, meta)


def read_tracklets3d_csv(path) -> list[Tracklet3D]:
    staged: dict[int, Tracklet3D] = {}
    for line_no, row in _read_rows(path, TRACKLETS3D_HEADER):
        tid = _req_int(path, line_no, row, "tracklet_id")
        frame = _req_int(path, line_no, row, "frame")
        coords = [_opt_float(path, line_no, row, k) for k in ("x", "y", "z")]
        t = staged.setdefault(tid, Tracklet3D(id=tid))
        if all(c is not None for c in coords):
            t.points[frame] = np.array(coords)
        top_id = row["top_tracklet_id"]
        front_id = row["front_tracklet_id"]
        t.sources[frame] = (int(top_id) if top_id != "" else None,
                            int(front_id) if front_id != "" else None)
    return [staged[tid] for tid in sorted(staged)]


# ---------------------------------------------------------------------------
# final tracks


def write_tracks_csv(path, tracks: list[Track3D],
                     meta: dict | None = None) -> None:
    rows = []
    for f in sorted({f for t in tracks for f in t.points}):
        for t in sorted(tracks, key=lambda t: t.fish_id):
            if f in t.points:
                p = t.points[f]
                rows.append([f, t.fish_id, p[0], p[1], p[2]])
    _write_rows(path, TRACKS_HEADER, rows, meta)


def read_tracks_csv(path) -> list[Track3D]:
    staged: dict[int, Track3D] = {}
    for line_no, row in _read_rows(path, TRACKS_HEADER):
        frame = _req_int(path, line_no, row, "frame")
        fish = _req_int(path, line_no, row, "fish_id")
        p = np.array([_req_float(path, line_no, row, k) for k in "xyz"])
        staged.setdefault(fish, Track3D(fish_id=fish)).points[frame] = p
    return [staged[fid] for fid in sorted(staged)]


# ---------------------------------------------------------------------------
# ground-truth annotations


def write_annotations_csv(path, gt: GroundTruth,
                          meta: dict | None = None) -> None:
    meta = dict(meta or {})
    meta.setdefault("fps", _fmt(gt.fps))
    meta.setdefault("n_frames", gt.n_frames)
    meta.setdefault("n_fish", gt.n_fish)
    rows = []
    for f in range(gt.n_frames):
        for i in gt.fish_ids:
            p = gt.points3d.get((f, i))
            for view in ("top", "front"):
                entry = gt.views.get((f, i, view))
                if entry is None:
                    continue
                rows.append([f, i, view, *entry.bbox, *entry.head,
                             entry.occluded,
                             p[0] if p is not None else None,
                             p[1] if p is not None else None,
                             p[2] if p is not None else None])
    _write_rows(path, ANNOTATIONS_HEADER, rows, meta)


def read_annotations_csv(path) -> GroundTruth:
    meta = read_meta(path)
    if "fps" not in meta:
        raise FormatError(f"{path}:1: missing '# fps:' header line")
    fps = float(meta["fps"])
    gt = GroundTruth(fps=fps, n_frames=0, n_fish=0)
    max_frame = -1
    for line_no, row in _read_rows(path, ANNOTATIONS_HEADER):
        frame = _req_int(path, line_no, row, "frame")
        fish = _req_int(path, line_no, row, "fish_id")
        view = _req_view(path, line_no, row)
        bbox = tuple(_req_float(path, line_no, row, k)
                     for k in ("bbox_x", "bbox_y", "bbox_w", "bbox_h"))
        head = (_req_float(path, line_no, row, "head_x"),
                _req_float(path, line_no, row, "head_y"))
        occluded = _req_int(path, line_no, row, "occluded")
        if occluded not in (0, 1):
            raise FormatError(
                f"{path}:{line_no}: occluded must be 0 or 1, got {occluded}")
        gt.views[(frame, fish, view)] = GTEntry(bbox=bbox, head=head,
                                                occluded=bool(occluded))
        coords = [_opt_float(path, line_no, row, k)
                  for k in ("x3d", "y3d", "z3d")]
        if all(c is not None for c in coords):
            gt.points3d[(frame, fish)] = np.array(coords)
        max_frame = max(max_frame, frame)
    gt.n_frames = int(meta.get("n_frames", max_frame + 1))
    gt.n_fish = int(meta.get("n_fish", len(gt.fish_ids)))
    return gt


# ---------------------------------------------------------------------------
# evaluation / complexity reports


def write_report_json(path, payload: dict, meta: dict | None = None) -> None:
    doc = {"schema_version": REPORT_SCHEMA_VERSION,
           "generator": f"stereomot {__version__}"}
    doc.update(meta or {})
    doc.update(payload)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def format_report_table(report: EvalReport) -> str:
    rows = [
        ("MOTA", f"{report.mota:.3f}"),
        ("MOTP", f"{report.motp:.6f}"),
        ("Precision", f"{report.precision:.3f}"),
        ("Recall", f"{report.recall:.3f}"),
        ("ID-Precision", f"{report.id_precision:.3f}"),
        ("ID-Recall", f"{report.id_recall:.3f}"),
        ("ID-F1", f"{report.id_f1:.3f}"),
        ("FP", str(report.fp)),
        ("FN", str(report.fn)),
        ("IDSW", str(report.idsw)),
        ("Frag", str(report.frag)),
        ("MT", str(report.mt)),
        ("ML", str(report.ml)),
        ("MTBF_s", f"{report.mtbf_strict:.3f}"),
        ("MTBF_m", f"{report.mtbf_monotone:.3f}"),
        ("GT total", str(report.gt_total)),
        ("Matches", str(report.n_matches)),
        ("GT tracks", str(report.n_gt_tracks)),
        ("Pred tracks", str(report.n_pred_tracks)),
    ]
    width = max(len(k) for k, _ in rows)
    return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def format_complexity_table(report) -> str:
    rows = [("", "OC", "OL", "TBO", "IBO")]
    for view in ("top", "front"):
        s = getattr(report, view)
        rows.append((view, f"{s.oc:.4f}", f"{s.ol:.4f}",
                     f"{s.tbo:.4f}", f"{s.ibo:.4f}"))
    lines = ["  ".join(f"{c:>8}" for c in row) for row in rows]
    lines.append(f"psi = {report.psi:.4f}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# PGM images (binary, P5)


def write_pgm(path, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.dtype != np.uint8 or img.ndim != 2:
        raise FormatError("write_pgm needs a 2D uint8 array")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        fh.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    m = re.match(rb"P5\s+(?:#.*\s+)?(\d+)\s+(\d+)\s+(\d+)\s", data)
    if not m:
        raise FormatError(f"{path}: not a binary PGM (P5) file")
    w, h, maxval = (int(m.group(i)) for i in (1, 2, 3))
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 supported, got {maxval}")
    pixels = np.frombuffer(data[m.end():], dtype=np.uint8)
    if pixels.size != w * h:
        raise FormatError(f"{path}: pixel payload is {pixels.size} bytes, "
                          f"expected {w * h}")
    return pixels.reshape(h, w).copy()
