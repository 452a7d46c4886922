"""Command-line harness: `run` executes the tracking pipeline on a dataset
and writes trajectory/timing reports; `evaluate` computes ATE/RPE between
trajectory files.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import AppConfig, load_config
from .engine import ExecutionEngine
from .evaluation import (Trajectory, compute_ate, compute_rpe,
                         load_trajectory, save_trajectory)
from .realtime import MODE_FAST, MODE_REALTIME, run_realtime
from .reports import write_summary, write_timings_csv
from .stereo import matches_to_csv_rows
from .synthetic import generate_synthetic
from .tracker import FrameInput, StereoTracker, STATUS_LOST


def _build_tracker(cfg: AppConfig, args) -> StereoTracker:
    backend = args.backend or cfg.backend
    workers = args.workers or cfg.workers
    residency = cfg.residency if args.residency is None else (args.residency == "on")
    pose_opt = cfg.pose_opt
    if args.pose_opt is not None:
        import dataclasses
        pose_opt = dataclasses.replace(pose_opt, enabled=(args.pose_opt == "on"))
    engine = ExecutionEngine(backend=backend, workers=workers)
    return StereoTracker(
        cam=cfg.camera,
        extraction=cfg.extraction,
        stereo=cfg.stereo,
        projection=cfg.projection,
        pose_opt=pose_opt,
        tracker=cfg.tracker,
        engine=engine,
        residency=residency,
    )


def _frame_inputs(args, cfg: AppConfig):
    """Returns (timestamps, make_input(i), ground_truth or None)."""
    if args.format == "synthetic":
        scene = cfg.scene
        if args.dataset:
            scene_file = Path(args.dataset) / "scene.cfg"
            if scene_file.exists():
                import configparser

                from .config import _parse_dataclass
                from .synthetic import SyntheticSceneConfig
                parser = configparser.ConfigParser()
                parser.read(scene_file)
                if parser.has_section("scene"):
                    scene = _parse_dataclass(SyntheticSceneConfig,
                                             parser["scene"], "scene")
        seq = generate_synthetic(scene, seed=args.seed, cam=cfg.camera)
        gt = Trajectory.from_poses(seq.timestamps, seq.gt_poses)

        if args.render:
            def make_input(i: int) -> FrameInput:
                left, right = seq.render_pair(i)
                return FrameInput(float(seq.timestamps[i]), left_image=left,
                                  right_image=right, imu=seq.imu_slice(i))
        else:
            def make_input(i: int) -> FrameInput:
                return FrameInput(float(seq.timestamps[i]),
                                  features=seq.frames[i], imu=seq.imu_slice(i))
        return seq.timestamps, make_input, gt

    from .datasets import load_euroc, load_tumvi
    if not args.dataset:
        raise SystemExit("--dataset is required for euroc/tumvi formats")
    seq = load_euroc(args.dataset) if args.format == "euroc" else load_tumvi(args.dataset)

    def make_input(i: int) -> FrameInput:
        left, right = seq.load_pair(i)
        return FrameInput(float(seq.timestamps[i]), left_image=left,
                          right_image=right, imu=seq.imu_slice(i))

    return seq.timestamps, make_input, seq.ground_truth


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.camera and args.format == "synthetic" and args.camera == "fisheye" \
            and not hasattr(cfg.camera, "k1"):
        raise SystemExit("--camera fisheye needs a fisheye [camera] config section")
    tracker = _build_tracker(cfg, args)
    timestamps, make_input, gt = _frame_inputs(args, cfg)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    dump_dir = out_dir / "matches" if args.dump_matches else None
    if dump_dir:
        dump_dir.mkdir(exist_ok=True)

    lost = False

    def process(i: int):
        nonlocal lost
        if lost:
            return None
        result = tracker.track_frame(make_input(i))
        if dump_dir is not None:
            rows = ["left_idx,right_idx,disparity,depth,distance"]
            idx = result.stereo_right_idx
            disp = result.stereo_disparity
            for k in np.nonzero(idx >= 0)[0]:
                rows.append(f"{k},{idx[k]},{disp[k]:.6f},"
                            f"{0.0 if disp[k] == 0 else tracker.cam.baseline_times_fx / disp[k]:.6f},0")
            (dump_dir / f"matches_{i:06d}.csv").write_text("\n".join(rows) + "\n")
        if result.status == STATUS_LOST:
            lost = True
        return result.report

    mode = MODE_REALTIME if args.mode == "realtime" else MODE_FAST
    summary = run_realtime(timestamps, process, mode=mode,
                           injected_delay=args.injected_delay)

    save_trajectory(out_dir / "trajectory.txt", tracker.trajectory())
    write_timings_csv(summary.reports, out_dir / "timings.csv")
    stats = write_summary(summary.reports, out_dir / "summary.txt")
    if gt is not None:
        save_trajectory(out_dir / "groundtruth.txt", gt)
    print(f"frames {stats['n_frames']} dropped {stats['n_dropped']} "
          f"fps {stats.get('fps', 0.0):.2f}")
    if lost:
        print("tracking lost before the end of the sequence", file=sys.stderr)
    tracker.engine.close()
    return 0


def cmd_evaluate(args) -> int:
    est = load_trajectory(args.est)
    if args.rpe_against:
        ref = load_trajectory(args.rpe_against)
        delta = args.rpe or 1
        print(f"rpe {compute_rpe(est, ref, delta=delta):.9g}")
        return 0
    if not args.ref:
        raise SystemExit("evaluate needs --ref (or --rpe-against)")
    ref = load_trajectory(args.ref)
    ate = compute_ate(est, ref, with_scale=args.ate_scale)
    print(f"ate {ate:.9g}")
    if args.rpe:
        print(f"rpe {compute_rpe(est, ref, delta=args.rpe):.9g}")
    return 0


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="trackfront",
                                description="stereo visual-inertial tracking frontend")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="track a dataset and write reports")
    r.add_argument("--dataset", default=None, help="dataset directory")
    r.add_argument("--format", choices=("euroc", "tumvi", "synthetic"),
                   default="synthetic")
    r.add_argument("--camera", choices=("pinhole", "fisheye"), default=None)
    r.add_argument("--backend", choices=("seq", "par"), default=None)
    r.add_argument("--workers", type=int, default=None)
    r.add_argument("--pose-opt", choices=("on", "off"), default=None)
    r.add_argument("--residency", choices=("on", "off"), default=None)
    r.add_argument("--mode", choices=("realtime", "fast"), default="fast")
    r.add_argument("--config", default=None)
    r.add_argument("--out", required=True)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--render", action="store_true",
                   help="render synthetic images instead of feature bundles")
    r.add_argument("--dump-matches", action="store_true")
    r.add_argument("--injected-delay", type=float, default=0.0,
                   help="extra busy time per frame (s), for drop experiments")
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("evaluate", help="trajectory error metrics")
    e.add_argument("--est", required=True)
    e.add_argument("--ref", default=None)
    e.add_argument("--rpe", type=int, default=None, metavar="N")
    e.add_argument("--ate-scale", action="store_true")
    e.add_argument("--rpe-against", default=None)
    e.set_defaults(func=cmd_evaluate)
    return p


def main(argv: list[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
