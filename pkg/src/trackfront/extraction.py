"""Image pyramid, oriented corner detection, binary descriptors, and the
spatial-uniformity keypoint filter.

Detection is data-parallel over pyramid levels and description over
keypoints; the quadtree filter stays sequential by design. Identical input
and config produce byte-identical output on either backend.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .buffers import BufferPool
from .engine import ExecutionEngine, ParallelMapSpec
from .mapping import FeatureSet

# margin (px) a keypoint keeps from its level border; covers the detection
# ring (3), the orientation disk (15), and rotated descriptor offsets (14)
BORDER_PX = 19

PATTERN_RADIUS = 13
N_ANGLE_BINS = 30


class ConfigError(ValueError):
    pass


class BorderError(ValueError):
    pass


@dataclass(frozen=True)
class ExtractionConfig:
    n_features: int = 1200
    levels: int = 8
    scale: float = 1.2
    t_fast: int = 20
    t_min: int = 7
    patch_size: int = 31
    orientation_radius: int = 15
    cell_px: int = 32

    def __post_init__(self) -> None:
        if self.n_features <= 0 or self.levels < 1 or self.scale <= 1.0:
            raise ConfigError("need n_features > 0, levels >= 1, scale > 1")
        if self.t_min > self.t_fast:
            raise ConfigError("t_min must not exceed t_fast")

    def scale_powers(self) -> np.ndarray:
        return self.scale ** np.arange(self.levels, dtype=np.float64)


def pyramid_level_dims(width: int, height: int, scale: float, levels: int
                       ) -> tuple[np.ndarray, np.ndarray]:
    """Per-level dimensions: floor(level-0 dims / scale^level)."""
    powers = scale ** np.arange(levels, dtype=np.float64)
    ws = np.floor(width / powers).astype(np.int64)
    hs = np.floor(height / powers).astype(np.int64)
    return ws, hs


class ImagePyramid:
    """Multi-scale 8-bit images stored in one flat buffer.

    Level 0 is the input byte-for-byte; level l is the level l-1 image
    smoothed (5x5 binomial) and bilinearly resampled to the floor-scaled
    dimensions. The flat layout lets kernels index any level by offset and
    makes the buffer a single residency unit for the staging ledger.
    """

    def __init__(self, data: np.ndarray, offsets: np.ndarray,
                 widths: np.ndarray, heights: np.ndarray, scale: float):
        self.data = data          # (total,) uint8
        self.offsets = offsets    # (L+1,) int64
        self.widths = widths      # (L,) int64
        self.heights = heights    # (L,) int64
        self.scale = scale

    @property
    def n_levels(self) -> int:
        return len(self.widths)

    @property
    def nbytes(self) -> int:
        return int(self.offsets[-1])

    def level(self, i: int) -> np.ndarray:
        flat = self.data[self.offsets[i]:self.offsets[i + 1]]
        return flat.reshape(self.heights[i], self.widths[i])


def build_pyramid(image: np.ndarray, cfg: ExtractionConfig,
                  pool: BufferPool | None = None, name: str = "pyr") -> ImagePyramid:
    image = np.asarray(image)
    if image.ndim != 2 or image.dtype != np.uint8 or image.size == 0:
        raise ConfigError("expected a non-empty 2-d uint8 image")
    h, w = image.shape
    ws, hs = pyramid_level_dims(w, h, cfg.scale, cfg.levels)
    if ws[-1] < cfg.patch_size or hs[-1] < cfg.patch_size:
        raise ConfigError(
            f"image {w}x{h} too small for {cfg.levels} levels at scale {cfg.scale}")
    offsets = np.zeros(cfg.levels + 1, dtype=np.int64)
    np.cumsum(ws * hs, out=offsets[1:])
    total = int(offsets[-1])
    if pool is not None:
        data = pool.acquire(name, (total,), np.uint8)
        smooth = pool.acquire(name + "_smooth", (h, w), np.uint8)
        tmp = pool.acquire(name + "_tmp", (h, w), np.int64)
    else:
        data = np.empty(total, dtype=np.uint8)
        smooth = np.empty((h, w), dtype=np.uint8)
        tmp = np.empty((h, w), dtype=np.int64)
    pyr = ImagePyramid(data, offsets, ws, hs, cfg.scale)
    np.copyto(pyr.level(0), image)
    for lvl in range(1, cfg.levels):
        prev = pyr.level(lvl - 1)
        ph, pw = prev.shape
        kernels.binomial5_u8(prev, tmp[:ph, :pw], smooth[:ph, :pw])
        kernels.resample_bilinear_u8(smooth[:ph, :pw], pyr.level(lvl))
    return pyr


def blur_pyramid(pyr: ImagePyramid, pool: BufferPool | None = None,
                 name: str = "blur") -> np.ndarray:
    """Unnormalized 7x7 binomial blur of every level, flat int32 buffer.

    Descriptors sample this buffer; the integer scale keeps comparisons
    exact.
    """
    total = pyr.nbytes
    h0, w0 = int(pyr.heights[0]), int(pyr.widths[0])
    if pool is not None:
        out = pool.acquire(name, (total,), np.int32)
        tmp = pool.acquire(name + "_tmp", (h0, w0), np.int64)
    else:
        out = np.empty(total, dtype=np.int32)
        tmp = np.empty((h0, w0), dtype=np.int64)
    for lvl in range(pyr.n_levels):
        img = pyr.level(lvl)
        h, w = img.shape
        dst = out[pyr.offsets[lvl]:pyr.offsets[lvl + 1]].reshape(h, w)
        kernels.binomial7_i32(img, tmp[:h, :w], dst)
    return out


def detect_keypoints(pyr: ImagePyramid, cfg: ExtractionConfig,
                     engine: ExecutionEngine | None = None
                     ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Segment-test corners on every level, in level order.

    Returns level coordinates (x, y int64), octaves (int32), and responses
    (int64). Coordinates are on each keypoint's own level; scale by
    scale^octave for the level-0 frame.
    """
    engine = engine or ExecutionEngine()
    caps = [max(1024, (int(pyr.widths[l]) * int(pyr.heights[l])) // 8)
            for l in range(pyr.n_levels)]
    bufs = [
        (np.empty(c, dtype=np.int64), np.empty(c, dtype=np.int64), np.empty(c, dtype=np.int64))
        for c in caps
    ]
    counts = np.zeros(pyr.n_levels, dtype=np.int64)

    def detect_one(level: int) -> None:
        bx, by, bs = bufs[level]
        n = kernels.detect_level_kernel(
            pyr.level(level), cfg.t_fast, cfg.t_min, cfg.cell_px, BORDER_PX, bx, by, bs)
        if n > len(bx):  # capacity miss: retry with an exact-size buffer
            bx = np.empty(n, dtype=np.int64)
            by = np.empty(n, dtype=np.int64)
            bs = np.empty(n, dtype=np.int64)
            bufs[level] = (bx, by, bs)
            n = kernels.detect_level_kernel(
                pyr.level(level), cfg.t_fast, cfg.t_min, cfg.cell_px, BORDER_PX, bx, by, bs)
        counts[level] = n

    engine.parallel_map(ParallelMapSpec(item_count=pyr.n_levels, fn=detect_one))
    total = int(counts.sum())
    xs = np.empty(total, dtype=np.int64)
    ys = np.empty(total, dtype=np.int64)
    octs = np.empty(total, dtype=np.int32)
    resp = np.empty(total, dtype=np.int64)
    pos = 0
    for lvl in range(pyr.n_levels):
        n = int(counts[lvl])
        bx, by, bs = bufs[lvl]
        xs[pos:pos + n] = bx[:n]
        ys[pos:pos + n] = by[:n]
        octs[pos:pos + n] = lvl
        resp[pos:pos + n] = bs[:n]
        pos += n
    return xs, ys, octs, resp


def compute_orientation(pyr: ImagePyramid, x: int, y: int, octave: int,
                        cfg: ExtractionConfig) -> float:
    """Intensity-centroid angle in [0, 2pi) for one keypoint (level coords)."""
    img = pyr.level(octave)
    r = cfg.orientation_radius
    h, w = img.shape
    if x - r < 0 or x + r >= w or y - r < 0 or y + r >= h:
        raise BorderError(f"orientation patch at ({x}, {y}) clipped by level border")
    out = np.empty(1)
    kernels.orientation_kernel(img, np.array([x], dtype=np.int64),
                               np.array([y], dtype=np.int64), r, 0, 1, out)
    return float(out[0])


def compute_orientations(pyr: ImagePyramid, xs: np.ndarray, ys: np.ndarray,
                         octaves: np.ndarray, cfg: ExtractionConfig,
                         engine: ExecutionEngine | None = None) -> np.ndarray:
    """Batch orientation, data-parallel over keypoints grouped by level."""
    engine = engine or ExecutionEngine()
    out = np.empty(len(xs))
    r = cfg.orientation_radius
    for lvl in range(pyr.n_levels):
        sel = np.nonzero(octaves == lvl)[0]
        if len(sel) == 0:
            continue
        img = pyr.level(lvl)
        lx = np.ascontiguousarray(xs[sel])
        ly = np.ascontiguousarray(ys[sel])
        sub = np.empty(len(sel))
        engine.run_chunks(
            len(sel),
            lambda a, b, img=img, lx=lx, ly=ly, sub=sub:
                kernels.orientation_kernel(img, lx, ly, r, a, b, sub))
        out[sel] = sub
    return out


_PATTERN: np.ndarray | None = None


def descriptor_pattern() -> np.ndarray:
    """(N_ANGLE_BINS, 256, 4) integer sample offsets, one rotated copy per bin.

    The base pattern is 256 Gaussian point pairs inside a radius-13 disk,
    fixed by seed; rotated copies are precomputed so descriptor steering is a
    table lookup.
    """
    global _PATTERN
    if _PATTERN is not None:
        return _PATTERN
    rng = np.random.default_rng(724501)
    pts = np.empty((512, 2))
    n = 0
    while n < 512:
        cand = rng.normal(0.0, PATTERN_RADIUS / 2.0, size=(512, 2))
        good = cand[np.hypot(cand[:, 0], cand[:, 1]) <= PATTERN_RADIUS - 0.5]
        take = min(len(good), 512 - n)
        pts[n:n + take] = good[:take]
        n += take
    base = pts.reshape(256, 4)
    out = np.empty((N_ANGLE_BINS, 256, 4), dtype=np.int16)
    for b in range(N_ANGLE_BINS):
        ang = 2.0 * math.pi * b / N_ANGLE_BINS
        c, s = math.cos(ang), math.sin(ang)
        for pair in range(2):
            x = base[:, 2 * pair]
            y = base[:, 2 * pair + 1]
            out[b, :, 2 * pair] = np.round(c * x - s * y).astype(np.int16)
            out[b, :, 2 * pair + 1] = np.round(s * x + c * y).astype(np.int16)
    _PATTERN = out
    return out


def angle_to_bin(angle: np.ndarray) -> np.ndarray:
    step = 2.0 * math.pi / N_ANGLE_BINS
    return (np.round(np.asarray(angle) / step).astype(np.int64)) % N_ANGLE_BINS


def compute_descriptors(blur_flat: np.ndarray, pyr: ImagePyramid,
                        xs: np.ndarray, ys: np.ndarray, octaves: np.ndarray,
                        angles: np.ndarray, engine: ExecutionEngine | None = None,
                        out: np.ndarray | None = None) -> np.ndarray:
    """Steered 256-bit descriptors; data-parallel over keypoints per level."""
    engine = engine or ExecutionEngine()
    pattern = descriptor_pattern()
    n = len(xs)
    desc = out if out is not None else np.empty((n, 4), dtype=np.uint64)
    bins = angle_to_bin(angles)
    for lvl in range(pyr.n_levels):
        sel = np.nonzero(octaves == lvl)[0]
        if len(sel) == 0:
            continue
        h, w = int(pyr.heights[lvl]), int(pyr.widths[lvl])
        blur = blur_flat[pyr.offsets[lvl]:pyr.offsets[lvl + 1]].reshape(h, w)
        lx = np.ascontiguousarray(xs[sel])
        ly = np.ascontiguousarray(ys[sel])
        lb = np.ascontiguousarray(bins[sel])
        sub = np.empty((len(sel), 4), dtype=np.uint64)
        engine.run_chunks(
            len(sel),
            lambda a, b, blur=blur, lx=lx, ly=ly, lb=lb, sub=sub:
                kernels.brief_kernel(blur, lx, ly, lb, pattern, a, b, sub))
        desc[sel] = sub
    return desc


def filter_keypoints(u: np.ndarray, v: np.ndarray, response: np.ndarray,
                     n_target: int, width: float, height: float) -> np.ndarray:
    """Quadtree thinning: split cells until about n_target leaves exist, then
    keep the strongest keypoint per leaf (ties: lower original index).

    Returns kept original indices in ascending order; when the input is
    already within budget it is returned untouched. Sequential by design.
    """
    n = len(u)
    if n <= n_target:
        return np.arange(n, dtype=np.int64)

    # leaves are (x0, x1, y0, y1, member-index-array)
    leaves: list[tuple[float, float, float, float, np.ndarray]] = [
        (0.0, float(width), 0.0, float(height), np.arange(n, dtype=np.int64))
    ]

    def split(leaf):
        x0, x1, y0, y1, idx = leaf
        xm, ym = (x0 + x1) / 2.0, (y0 + y1) / 2.0
        lx = u[idx] < xm
        ty = v[idx] < ym
        out = []
        for mx, my, bx0, bx1, by0, by1 in (
            (lx, ty, x0, xm, y0, ym),
            (~lx, ty, xm, x1, y0, ym),
            (lx, ~ty, x0, xm, ym, y1),
            (~lx, ~ty, xm, x1, ym, y1),
        ):
            sub = idx[mx & my]
            if len(sub):
                out.append((bx0, bx1, by0, by1, sub))
        return out

    def divisible(leaf):
        x0, x1, y0, y1, idx = leaf
        if len(idx) < 2 or (x1 - x0) < 1e-3:
            return False
        # coincident points cannot be separated
        return not (np.all(u[idx] == u[idx[0]]) and np.all(v[idx] == v[idx[0]]))

    while len(leaves) < n_target:
        div = [i for i, leaf in enumerate(leaves) if divisible(leaf)]
        if not div:
            break
        if len(leaves) + 3 * len(div) <= n_target:
            nxt = []
            for leaf in leaves:
                nxt.extend(split(leaf) if divisible(leaf) else [leaf])
            leaves = nxt
            continue
        # final round: split densest leaves first (ties: earlier leaf) until
        # the leaf count reaches the budget
        order = sorted(div, key=lambda i: (-len(leaves[i][4]), i))
        replacement: dict[int, list] = {}
        count = len(leaves)
        for i in order:
            if count >= n_target:
                break
            parts = split(leaves[i])
            replacement[i] = parts
            count += len(parts) - 1
        leaves = [piece
                  for i, leaf in enumerate(leaves)
                  for piece in replacement.get(i, [leaf])]
        break

    keep = []
    for _, _, _, _, idx in leaves:
        r = response[idx]
        keep.append(idx[np.argmax(r)])  # argmax takes the first (lowest) index on ties
    return np.sort(np.asarray(keep, dtype=np.int64))


def extract_features(image: np.ndarray, cfg: ExtractionConfig,
                     engine: ExecutionEngine | None = None,
                     pool: BufferPool | None = None,
                     name: str = "left") -> tuple[FeatureSet, ImagePyramid]:
    """Full extraction for one image: pyramid, detection, orientation,
    description, then the uniformity filter."""
    engine = engine or ExecutionEngine()
    pyr = build_pyramid(image, cfg, pool, name=f"pyr_{name}")
    xs, ys, octs, resp = detect_keypoints(pyr, cfg, engine)
    angles = compute_orientations(pyr, xs, ys, octs, cfg, engine)
    blur = blur_pyramid(pyr, pool, name=f"blur_{name}")
    powers = cfg.scale_powers()
    u0 = xs * powers[octs]
    v0 = ys * powers[octs]
    keep = filter_keypoints(u0, v0, resp, cfg.n_features,
                            float(pyr.widths[0]), float(pyr.heights[0]))
    desc = compute_descriptors(blur, pyr, xs[keep], ys[keep], octs[keep],
                               angles[keep], engine)
    feats = FeatureSet(
        u=u0[keep],
        v=v0[keep],
        octave=octs[keep].astype(np.int32),
        angle=angles[keep],
        response=resp[keep].astype(np.float32),
        descriptors=desc,
    )
    return feats, pyr
