"""Aggregation and emission of per-frame stage reports."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .tracker import STAGES, StageReport

ALL_STAGES = (*STAGES, "total")


def summarize(reports: list[StageReport]) -> dict:
    """Per-stage mean/stddev (us), FPS from mean total, drop count, and the
    share of each stage in the mean total."""
    processed = [r for r in reports if not r.dropped]
    out: dict = {
        "n_frames": len(reports),
        "n_dropped": sum(1 for r in reports if r.dropped),
        "stages": {},
    }
    if not processed:
        out["fps"] = 0.0
        return out
    for stage in ALL_STAGES:
        vals = np.array([r.micros[stage] for r in processed], dtype=np.float64)
        h2b = np.array([r.bytes_h2b[stage] for r in processed], dtype=np.float64)
        b2h = np.array([r.bytes_b2h[stage] for r in processed], dtype=np.float64)
        out["stages"][stage] = {
            "mean_us": float(vals.mean()),
            "std_us": float(vals.std()),
            "bytes_h2b": float(h2b.mean()),
            "bytes_b2h": float(b2h.mean()),
        }
    mean_total = out["stages"]["total"]["mean_us"]
    out["fps"] = 1e6 / mean_total if mean_total > 0 else math.inf
    for stage in STAGES:
        share = (out["stages"][stage]["mean_us"] / mean_total
                 if mean_total > 0 else 0.0)
        out["stages"][stage]["share"] = share
    return out


def write_timings_csv(reports: list[StageReport], path: str | Path) -> None:
    """Long-format rows: frame_id,stage,micros,bytes_h2b,bytes_b2h,dropped."""
    with open(path, "w") as f:
        f.write("frame_id,stage,micros,bytes_h2b,bytes_b2h,dropped\n")
        for r in reports:
            for stage in ALL_STAGES:
                f.write(f"{r.frame_id},{stage},{r.micros[stage]},"
                        f"{r.bytes_h2b[stage]},{r.bytes_b2h[stage]},"
                        f"{int(r.dropped)}\n")


def write_summary(reports: list[StageReport], path: str | Path) -> dict:
    s = summarize(reports)
    lines = [
        f"frames {s['n_frames']}",
        f"dropped {s['n_dropped']}",
        f"fps {s.get('fps', 0.0):.3f}",
        "",
        f"{'stage':<22}{'mean_us':>12}{'std_us':>12}{'share':>9}"
        f"{'h2b_bytes':>14}{'b2h_bytes':>14}",
    ]
    for stage in ALL_STAGES:
        st = s.get("stages", {}).get(stage)
        if st is None:
            continue
        share = st.get("share")
        share_s = f"{share:.3f}" if share is not None else "-"
        lines.append(
            f"{stage:<22}{st['mean_us']:>12.1f}{st['std_us']:>12.1f}{share_s:>9}"
            f"{st['bytes_h2b']:>14.0f}{st['bytes_b2h']:>14.0f}")
    Path(path).write_text("\n".join(lines) + "\n")
    return s
