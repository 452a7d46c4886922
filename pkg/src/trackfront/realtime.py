"""Real-time frame presentation with drop accounting.

Frames are presented at their dataset timestamps on a virtual frame clock; a
frame arriving while the tracker is still busy is dropped and counted. The
busy horizon is either the measured wall time of processing ("wall"), an
injected delay only ("injected"), or their sum — the injected-only model is
fully deterministic and is what the drop-rule tests simulate against.
As-fast-as-possible mode processes every frame.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .tracker import StageReport

MODE_REALTIME = "realtime"
MODE_FAST = "fast"

BUSY_WALL = "wall"
BUSY_INJECTED = "injected"


@dataclass
class RunSummary:
    n_frames: int
    n_dropped: int
    processed: list[int]
    dropped: list[int]
    reports: list[StageReport] = field(default_factory=list)


def run_realtime(timestamps: Sequence[float],
                 process: Callable[[int], StageReport | None],
                 mode: str = MODE_REALTIME,
                 injected_delay: float = 0.0,
                 busy_model: str = BUSY_WALL) -> RunSummary:
    """Drive ``process(i)`` over frames presented at ``timestamps``.

    Every frame, dropped or processed, contributes exactly one report.
    """
    if mode not in (MODE_REALTIME, MODE_FAST):
        raise ValueError(f"unknown mode {mode!r}")
    if busy_model not in (BUSY_WALL, BUSY_INJECTED):
        raise ValueError(f"unknown busy model {busy_model!r}")
    busy_until = -float("inf")
    summary = RunSummary(len(timestamps), 0, [], [])
    for i, t in enumerate(timestamps):
        if mode == MODE_REALTIME and t < busy_until:
            summary.n_dropped += 1
            summary.dropped.append(i)
            summary.reports.append(StageReport.for_dropped(i))
            continue
        start = time.perf_counter()
        report = process(i)
        elapsed = time.perf_counter() - start
        busy = injected_delay + (elapsed if busy_model == BUSY_WALL else 0.0)
        busy_until = t + busy
        summary.processed.append(i)
        if report is not None:
            summary.reports.append(report)
    return summary


def simulate_drops(timestamps: Sequence[float],
                   busy_durations: Sequence[float]) -> list[bool]:
    """Event simulation of the arrival/busy rule: frame i is dropped when it
    arrives before the previous accepted frame's busy horizon."""
    busy_until = -float("inf")
    flags = []
    for t, dur in zip(timestamps, busy_durations):
        if t < busy_until:
            flags.append(True)
        else:
            flags.append(False)
            busy_until = t + dur
    return flags
