"""Polygons, rectangles, IoU and greedy one-to-one detection matching."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .kernels import raster_polygon

Point = tuple[float, float]

#: Cells along the longer side of the union box when rasterising.
RASTER_CELLS = 1024


@dataclass(frozen=True)
class Rect:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x1, self.y1, self.x2, self.y2)):
            raise ValueError(f"non-finite rectangle {self}")
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise ValueError(f"inverted rectangle {self}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> Point:
        return ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.height)

    def to_polygon(self) -> "Polygon":
        return Polygon(((self.x1, self.y1), (self.x2, self.y1), (self.x2, self.y2), (self.x1, self.y2)))


@dataclass(frozen=True)
class Polygon:
    """Closed ring of ``k >= 3`` vertices.

    Construction only enforces the vertex count and finiteness. Zero-area or
    self-intersecting rings are representable so that evaluation can flag
    them instead of crashing; see :meth:`is_simple` and :attr:`area`.
    """

    vertices: tuple[Point, ...]

    def __init__(self, vertices: Iterable[Sequence[float]]):
        verts = tuple((float(p[0]), float(p[1])) for p in vertices)
        if len(verts) < 3:
            raise ValueError(f"polygon needs at least 3 vertices, got {len(verts)}")
        if not all(math.isfinite(c) for p in verts for c in p):
            raise ValueError("polygon has non-finite coordinates")
        object.__setattr__(self, "vertices", verts)

    def __len__(self):
        return len(self.vertices)

    @cached_property
    def array(self) -> np.ndarray:
        arr = np.array(self.vertices, dtype=np.float64)
        arr.setflags(write=False)
        return arr

    @cached_property
    def area(self) -> float:
        """Absolute shoelace area."""
        # plain floats: rings are short and numpy call overhead dominates
        v = self.vertices
        s = math.fsum(x0 * y1 - x1 * y0 for (x0, y0), (x1, y1) in zip(v, v[1:] + v[:1]))
        return abs(s) / 2.0

    @cached_property
    def is_axis_rect(self) -> bool:
        if len(self.vertices) != 4:
            return False
        v = self.vertices
        for i in range(4):
            (ax, ay), (bx, by) = v[i], v[(i + 1) % 4]
            if ax != bx and ay != by:
                return False
        xs = {p[0] for p in v}
        ys = {p[1] for p in v}
        return len(xs) <= 2 and len(ys) <= 2

    def is_simple(self) -> bool:
        """True when no two non-adjacent edges touch and the area is positive."""
        if self.area <= 0.0:
            return False
        v = self.vertices
        k = len(v)
        for i in range(k):
            a, b = v[i], v[(i + 1) % k]
            for j in range(i + 1, k):
                if j == i or (j + 1) % k == i or j == (i + 1) % k:
                    continue
                if _segments_touch(a, b, v[j], v[(j + 1) % k]):
                    return False
        return True

    def translate(self, dx: float, dy: float) -> "Polygon":
        return Polygon((x + dx, y + dy) for x, y in self.vertices)


def _orient(a, b, c):
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _on_segment(a, b, p):
    return min(a[0], b[0]) <= p[0] <= max(a[0], b[0]) and min(a[1], b[1]) <= p[1] <= max(a[1], b[1])


def _segments_touch(p1, p2, q1, q2):
    d1 = _orient(q1, q2, p1)
    d2 = _orient(q1, q2, p2)
    d3 = _orient(p1, p2, q1)
    d4 = _orient(p1, p2, q2)
    if ((d1 > 0 and d2 < 0) or (d1 < 0 and d2 > 0)) and ((d3 > 0 and d4 < 0) or (d3 < 0 and d4 > 0)):
        return True
    return (
        (d1 == 0 and _on_segment(q1, q2, p1))
        or (d2 == 0 and _on_segment(q1, q2, p2))
        or (d3 == 0 and _on_segment(p1, p2, q1))
        or (d4 == 0 and _on_segment(p1, p2, q2))
    )


def polygon_bounds(poly: Polygon) -> Rect:
    xs = [p[0] for p in poly.vertices]
    ys = [p[1] for p in poly.vertices]
    return Rect(min(xs), min(ys), max(xs), max(ys))


def rect_iou(a: Rect, b: Rect) -> float:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def polygon_iou(a: Polygon, b: Polygon, cells: int = RASTER_CELLS) -> tuple[float, bool]:
    """IoU of two polygons plus a degeneracy flag.

    Axis-aligned rectangles are handled analytically. Everything else is
    rasterised with the even-odd rule on a grid laid over the union bounding
    box, ``cells`` cells along its longer side. Returns ``(0.0, True)`` if
    either polygon has zero area.
    """
    if a.area <= 0.0 or b.area <= 0.0:
        return 0.0, True
    ra, rb = polygon_bounds(a), polygon_bounds(b)
    if a.is_axis_rect and b.is_axis_rect:
        return rect_iou(ra, rb), False
    if rect_iou(ra, rb) == 0.0:
        return 0.0, False

    ux1 = min(ra.x1, rb.x1)
    uy1 = min(ra.y1, rb.y1)
    uw = max(ra.x2, rb.x2) - ux1
    uh = max(ra.y2, rb.y2) - uy1
    scale = cells / max(uw, uh)
    nx = max(1, math.ceil(uw * scale))
    ny = max(1, math.ceil(uh * scale))
    origin = np.array([ux1, uy1])
    ma = raster_polygon((a.array - origin) * scale, nx, ny)
    mb = raster_polygon((b.array - origin) * scale, nx, ny)
    union = np.count_nonzero(ma | mb)
    if union == 0:
        return 0.0, False
    return np.count_nonzero(ma & mb) / union, False


def iou(a: Polygon, b: Polygon) -> float:
    return polygon_iou(a, b)[0]


def iou_matrix(dets: Sequence[Polygon], gts: Sequence[Polygon], mode: str = "polygon") -> np.ndarray:
    """Pairwise IoU, shape ``(len(dets), len(gts))``.

    ``mode="bounds"`` compares the axis-aligned bounding rectangles instead of
    the polygons themselves.
    """
    if mode not in ("polygon", "bounds"):
        raise ValueError(f"unknown iou mode {mode!r}")
    out = np.zeros((len(dets), len(gts)), dtype=np.float64)
    if mode == "bounds":
        dets = [polygon_bounds(p).to_polygon() for p in dets]
        gts = [polygon_bounds(p).to_polygon() for p in gts]
    for i, d in enumerate(dets):
        for j, g in enumerate(gts):
            out[i, j] = polygon_iou(d, g)[0]
    return out


@dataclass(frozen=True)
class Matching:
    pairs: tuple[tuple[int, int, float], ...] = ()
    unmatched_detections: frozenset[int] = frozenset()
    unmatched_gt: frozenset[int] = frozenset()
    det_to_gt: dict[int, int] = field(default_factory=dict, compare=False, repr=False)
    gt_to_det: dict[int, int] = field(default_factory=dict, compare=False, repr=False)


def match_iou_matrix(ious: np.ndarray, threshold: float) -> Matching:
    """Greedy one-to-one matching on a precomputed IoU matrix.

    Candidates with ``iou >= threshold`` are taken in order of descending IoU,
    ties broken by lower gt index and then lower detection index.
    """
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"threshold must lie in (0, 1], got {threshold}")
    n_det, n_gt = ious.shape
    di, gi = np.nonzero(ious >= threshold)
    vals = ious[di, gi]
    order = np.lexsort((di, gi, -vals))
    det_to_gt: dict[int, int] = {}
    gt_to_det: dict[int, int] = {}
    pairs = []
    for k in order:
        d, g = int(di[k]), int(gi[k])
        if d in det_to_gt or g in gt_to_det:
            continue
        det_to_gt[d] = g
        gt_to_det[g] = d
        pairs.append((d, g, float(vals[k])))
    return Matching(
        pairs=tuple(pairs),
        unmatched_detections=frozenset(range(n_det)) - det_to_gt.keys(),
        unmatched_gt=frozenset(range(n_gt)) - gt_to_det.keys(),
        det_to_gt=det_to_gt,
        gt_to_det=gt_to_det,
    )


def match_detections(
    dets: Sequence[Polygon], gts: Sequence[Polygon], threshold: float, mode: str = "polygon"
) -> Matching:
    """Match detections to ground truth; ids are positions in the input lists."""
    if not dets or not gts:
        if not 0.0 < threshold <= 1.0:
            raise ValueError(f"threshold must lie in (0, 1], got {threshold}")
        return Matching(
            unmatched_detections=frozenset(range(len(dets))), unmatched_gt=frozenset(range(len(gts)))
        )
    return match_iou_matrix(iou_matrix(dets, gts, mode), threshold)
