"""ASL-layout dataset loaders (EuRoC / TUM-VI style directories).

Expected layout under the sequence root (or its mav0/ subdirectory):
cam0/data.csv + cam0/data/, cam1/..., imu0/data.csv, and optionally a
ground-truth csv. Camera rows are "timestamp_ns,filename"; IMU rows are
"timestamp_ns,wx,wy,wz,ax,ay,az". Nanosecond timestamps are converted to
seconds exactly (integer division plus fractional remainder).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .evaluation import Trajectory
from .imu import ImuSample

STEREO_PAIR_TOLERANCE_S = 0.005

_GT_CANDIDATES = (
    "state_groundtruth_estimate0/data.csv",
    "mocap0/data.csv",
    "gt/data.csv",
)


class DatasetError(RuntimeError):
    pass


class ParseError(DatasetError):
    def __init__(self, path: Path, lineno: int, message: str):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = path
        self.lineno = lineno


def ns_to_seconds(t_ns: int) -> float:
    """Exact nanosecond-to-second conversion (whole part + remainder)."""
    return float(t_ns // 1_000_000_000) + (t_ns % 1_000_000_000) * 1e-9


@dataclass
class StereoSequence:
    root: Path
    timestamps: np.ndarray            # (n,) seconds, left-camera times
    left_paths: list[Path]
    right_paths: list[Path]
    imu: list[ImuSample]
    ground_truth: Trajectory | None = None
    unmatched_pairs: int = 0
    camera_model: str = "pinhole"

    def __len__(self) -> int:
        return len(self.timestamps)

    def load_pair(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        return read_grayscale(self.left_paths[i]), read_grayscale(self.right_paths[i])

    def imu_slice(self, i: int) -> list[ImuSample]:
        if i == 0:
            return []
        t0, t1 = self.timestamps[i - 1], self.timestamps[i]
        return [s for s in self.imu if t0 - 1e-9 <= s.timestamp <= t1 + 1e-9]


def read_grayscale(path: str | Path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("L"), dtype=np.uint8)


def _resolve_root(root: str | Path) -> Path:
    root = Path(root)
    if (root / "cam0").exists():
        return root
    if (root / "mav0" / "cam0").exists():
        return root / "mav0"
    raise DatasetError(f"no cam0/ under {root} (or {root}/mav0)")


def _read_cam_csv(path: Path) -> tuple[np.ndarray, list[str]]:
    if not path.exists():
        raise DatasetError(f"missing dataset file: {path}")
    ts, names = [], []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",") if p.strip() != ""]
            if len(parts) != 2:
                raise ParseError(path, lineno, f"expected 2 fields, got {len(parts)}")
            try:
                ts.append(ns_to_seconds(int(parts[0])))
            except ValueError as exc:
                raise ParseError(path, lineno, f"bad timestamp {parts[0]!r}") from exc
            names.append(parts[1])
    return np.array(ts), names


def _read_imu_csv(path: Path) -> list[ImuSample]:
    if not path.exists():
        raise DatasetError(f"missing dataset file: {path}")
    samples = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",") if p.strip() != ""]
            if len(parts) != 7:
                raise ParseError(path, lineno, f"expected 7 fields, got {len(parts)}")
            try:
                t = ns_to_seconds(int(parts[0]))
                vals = [float(x) for x in parts[1:]]
            except ValueError as exc:
                raise ParseError(path, lineno, "bad numeric field") from exc
            samples.append(ImuSample(t, np.array(vals[:3]), np.array(vals[3:])))
    return samples


def _read_gt_csv(path: Path) -> Trajectory | None:
    if not path.exists():
        return None
    ts, pos, quat = [], [], []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",") if p.strip() != ""]
            if len(parts) < 8:
                raise ParseError(path, lineno, f"expected >= 8 fields, got {len(parts)}")
            try:
                ts.append(ns_to_seconds(int(parts[0])))
                pos.append([float(x) for x in parts[1:4]])
                qw, qx, qy, qz = (float(x) for x in parts[4:8])
            except ValueError as exc:
                raise ParseError(path, lineno, "bad numeric field") from exc
            quat.append([qx, qy, qz, qw])
    if not ts:
        return None
    return Trajectory(np.array(ts), np.array(pos), np.array(quat))


def _associate_pairs(t0: np.ndarray, t1: np.ndarray,
                     tolerance: float) -> tuple[list[int], list[int], int]:
    """Nearest-timestamp stereo pairing; returns index lists and the number
    of rows left unmatched on either side."""
    i0, i1 = [], []
    used = set()
    for i, t in enumerate(t0):
        if len(t1) == 0:
            break
        j = int(np.argmin(np.abs(t1 - t)))
        if abs(t1[j] - t) <= tolerance and j not in used:
            i0.append(i)
            i1.append(j)
            used.add(j)
    unmatched = (len(t0) - len(i0)) + (len(t1) - len(i0))
    return i0, i1, unmatched


def load_asl(root: str | Path, camera_model: str = "pinhole") -> StereoSequence:
    base = _resolve_root(root)
    t0, names0 = _read_cam_csv(base / "cam0" / "data.csv")
    t1, names1 = _read_cam_csv(base / "cam1" / "data.csv")
    imu_path = base / "imu0" / "data.csv"
    imu = _read_imu_csv(imu_path) if imu_path.exists() else []
    i0, i1, unmatched = _associate_pairs(t0, t1, STEREO_PAIR_TOLERANCE_S)
    gt = None
    for rel in _GT_CANDIDATES:
        gt = _read_gt_csv(base / rel)
        if gt is not None:
            break
    return StereoSequence(
        root=base,
        timestamps=t0[i0] if len(i0) else np.empty(0),
        left_paths=[base / "cam0" / "data" / names0[i] for i in i0],
        right_paths=[base / "cam1" / "data" / names1[j] for j in i1],
        imu=imu,
        ground_truth=gt,
        unmatched_pairs=unmatched,
        camera_model=camera_model,
    )


def load_euroc(root: str | Path) -> StereoSequence:
    """EuRoC-layout stereo-inertial sequence (pinhole cameras)."""
    return load_asl(root, camera_model="pinhole")


def load_tumvi(root: str | Path) -> StereoSequence:
    """TUM-VI-layout sequence; requires fisheye calibration in the config."""
    return load_asl(root, camera_model="fisheye")
