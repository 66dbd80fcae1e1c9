"""Comparison systems: mean-shift grouping plus a line-based reading order."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from statistics import median
from typing import Optional, Sequence

import numpy as np

from .dataset import ContextualBlock, ImageAnnotation, IntegralUnit, PredictionSet
from .generator import BlockPrediction
from .geometry import Rect, polygon_bounds
from .kernels import connected_components, mean_shift_kernel

log = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class BaselineConfig:
    bandwidth_factor: float = 1.5
    convergence_eps: float = 1e-4
    max_iterations: int = 100
    line_overlap: float = 0.5

    def __post_init__(self):
        if self.bandwidth_factor <= 0 or self.convergence_eps <= 0 or self.max_iterations <= 0:
            raise ValueError("bandwidth_factor, convergence_eps and max_iterations must be positive")
        if not 0.0 < self.line_overlap <= 1.0:
            raise ValueError(f"line_overlap must lie in (0, 1], got {self.line_overlap}")


def _id_key(uid):
    return (isinstance(uid, str), uid)


def bandwidth_for(rects: Sequence[Rect], cfg: BaselineConfig) -> float:
    diag = median(r.diagonal for r in rects)
    # all-degenerate boxes: fall back to one pixel so the kernel is not empty
    return cfg.bandwidth_factor * (diag if diag > 0 else 1.0)


def mean_shift_group(
    rects: Sequence[Rect],
    cfg: BaselineConfig = BaselineConfig(),
    image_diagonal: Optional[float] = None,
    strict: bool = False,
) -> list[list[int]]:
    """Group boxes by flat-kernel mean shift over their centres.

    Modes are merged by single linkage at half a bandwidth. Returns index
    groups in order of their lowest member. Without
    convergence the last iterate is used, or :class:`ConvergenceError` is
    raised when ``strict``.
    """
    if not rects:
        return []
    pts = np.array([r.center for r in rects], dtype=np.float64)
    bw = bandwidth_for(rects, cfg)
    if image_diagonal is None:
        span = pts.max(axis=0) - pts.min(axis=0)
        image_diagonal = max(math.hypot(*span), max(r.diagonal for r in rects))
    eps = cfg.convergence_eps * (image_diagonal if image_diagonal > 0 else 1.0)
    modes, iters, converged = mean_shift_kernel(pts, bw, eps, cfg.max_iterations)
    if not converged:
        if strict:
            raise ConvergenceError(f"mean shift did not converge in {iters} iterations")
        log.warning("mean shift stopped after %d iterations without converging", iters)

    # single linkage: modes chained by gaps <= bw/2 form one group
    gap = np.hypot(*(modes[:, None, :] - modes[None, :, :]).transpose(2, 0, 1))
    src, dst = np.nonzero(np.triu(gap <= bw / 2.0, k=1))
    labels = connected_components(len(modes), src.astype(np.int64), dst.astype(np.int64))
    groups: dict[int, list[int]] = {}
    for i, lab in enumerate(labels):
        groups.setdefault(int(lab), []).append(i)
    return list(groups.values())


def reading_order_sort(
    rects: Sequence[Rect], line_overlap: float = 0.5, ids: Optional[Sequence] = None
) -> list[int]:
    """Left-to-right, top-to-bottom order of ``rects`` as a list of positions.

    Two boxes share a line when their vertical extents overlap by at least
    ``line_overlap`` times the smaller height; lines are the transitive
    closure of that relation. Lines go by mean centre y, boxes within a line
    by x1, and remaining ties by id (position when ``ids`` is omitted).
    """
    n = len(rects)
    if ids is None:
        ids = list(range(n))
    src, dst = [], []
    for i in range(n):
        a = rects[i]
        for j in range(i + 1, n):
            b = rects[j]
            ov = min(a.y2, b.y2) - max(a.y1, b.y1)
            if ov >= 0 and ov >= line_overlap * min(a.height, b.height):
                src.append(i)
                dst.append(j)
    labels = connected_components(n, np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64))
    lines: dict[int, list[int]] = {}
    for i, lab in enumerate(labels):
        lines.setdefault(int(lab), []).append(i)

    def line_key(members):
        y = sum(rects[i].center[1] for i in members) / len(members)
        return (y, min(_id_key(ids[i]) for i in members))

    order = []
    for members in sorted(lines.values(), key=line_key):
        order.extend(sorted(members, key=lambda i: (rects[i].x1, _id_key(ids[i]))))
    return order


def baseline_predict(
    units: Sequence[IntegralUnit],
    cfg: BaselineConfig = BaselineConfig(),
    image_diagonal: Optional[float] = None,
    strict: bool = False,
) -> BlockPrediction:
    """Mean-shift groups, each sorted into reading order; blocks hold unit ids."""
    if not units:
        return BlockPrediction(())
    units = sorted(units, key=lambda u: _id_key(u.unit_id))
    rects = [polygon_bounds(u.polygon) for u in units]
    ids = [u.unit_id for u in units]
    rank = {p: k for k, p in enumerate(reading_order_sort(rects, cfg.line_overlap, ids))}
    blocks = []
    for group in mean_shift_group(rects, cfg, image_diagonal, strict):
        local = reading_order_sort([rects[i] for i in group], cfg.line_overlap, [ids[i] for i in group])
        blocks.append([group[k] for k in local])
    blocks.sort(key=lambda b: rank[b[0]])
    return BlockPrediction(tuple(tuple(ids[i] for i in b) for b in blocks))


def baseline_image(im: ImageAnnotation, cfg: BaselineConfig = BaselineConfig()) -> ImageAnnotation:
    diag = math.hypot(im.width, im.height) if im.width and im.height else None
    pred = baseline_predict(im.units, cfg, diag)
    blocks = tuple(ContextualBlock(f"b{k}", tuple(b)) for k, b in enumerate(pred.blocks))
    return ImageAnnotation(im.image_id, im.width, im.height, im.units, blocks)


def baseline_predictions(images: Sequence[ImageAnnotation], cfg: BaselineConfig = BaselineConfig()) -> PredictionSet:
    return PredictionSet(tuple(baseline_image(im, cfg) for im in images))
