#!/usr/bin/env python3
"""Occlusion-free smoke run: simulate, track, stitch, and score one scene.

Fish are confined to disjoint x slabs so the views never overlap, which
makes the expected outcome exact: MOTA 100, zero identity switches, zero
fragmentations. Useful as a first check after touching any stage.
"""

import argparse
import sys
import time

from stereomot import (
    AssocParams,
    StitchParams,
    Track2DParams,
    annotate,
    associate,
    build_graph,
    build_tracklets,
    complexity_report,
    evaluate_tracks,
    extract_3d_tracklets,
    perfect_detections,
    simulate,
    tracks_to_pred,
)
from stereomot.cli import _bbox_cov
from stereomot.config import PipelineConfig
from stereomot.formats import format_complexity_table, format_report_table
from stereomot.track2d import MAHALANOBIS_CENTROID


def parse_args():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n-fish", type=int, default=2)
    ap.add_argument("--duration", type=float, default=15.0, help="seconds")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--gate", type=float, default=0.5, help="3D match gate, cm")
    return ap.parse_args()


def main():
    args = parse_args()
    cfg = PipelineConfig.defaults().with_overrides(**{
        "n_fish": args.n_fish,
        "duration_s": args.duration,
        "seed": args.seed,
        "sim.confine_axis_slabs": True,
    })

    stages = []

    def timed(label, fn):
        t0 = time.perf_counter()
        out = fn()
        stages.append((label, time.perf_counter() - t0))
        return out

    seq = timed("simulate", lambda: simulate(cfg.sim_config(), cfg.rig()))
    gt = timed("annotate", lambda: annotate(seq))
    flagged = sum(e.occluded for e in gt.views.values())
    if flagged:
        print(f"warning: {flagged} occluded annotations; slabs too narrow "
              f"for this many fish?", file=sys.stderr)

    dets = timed("detections", lambda: perfect_detections(gt))
    params2d = Track2DParams()

    def run_track2d():
        out = []
        for view in ("top", "front"):
            frames = dets[view]
            if params2d.mode(view) == MAHALANOBIS_CENTROID:
                frames = {f: [_bbox_cov(d) for d in items]
                          for f, items in frames.items()}
            out.append(build_tracklets(frames, params2d, view=view))
        return out

    top, front = timed("track2d", run_track2d)
    graph = timed("associate", lambda: build_graph(
        top, front, seq.rig, cfg.tank(), AssocParams(), fps=cfg.get("fps")))
    tracks = timed("stitch", lambda: associate(
        extract_3d_tracklets(graph), args.n_fish, StitchParams()))
    report = timed("evaluate", lambda: evaluate_tracks(
        tracks_to_pred(tracks), gt, args.gate))

    print(format_report_table(report))
    print()
    print(format_complexity_table(complexity_report(gt)))
    print()
    for label, dt in stages:
        print(f"{label:<10} {dt:7.3f} s")

    ok = report.mota == 100.0 and report.idsw == 0 and report.frag == 0
    if not ok:
        print("clean run did not track perfectly", file=sys.stderr)
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
