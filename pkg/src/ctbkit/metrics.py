"""Local accuracy, local continuity and global accuracy over IoU schedules.

All three metrics are micro-averaged: raw counts are summed over images and
divided once. Detections are tied to ground truth by the greedy one-to-one
matching in :mod:`ctbkit.geometry`, recomputed for every threshold.

Local continuity is a clipped n-gram precision for n = 1..5. Predicted blocks
are rewritten as sequences of matched ground-truth positions; an unmatched
detection becomes a sentinel that matches nothing. Unigrams only count
single-unit blocks. The per-n precisions are combined by an arithmetic mean
over the n that produced at least one candidate (no brevity penalty).
"""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .dataset import Dataset, ImageAnnotation, PredictionSet
from .geometry import iou_matrix, match_iou_matrix

MAX_N = 5

LC_AGGREGATION = "arithmetic mean of clipped n-gram precision over n in 1..5 with candidates; no brevity penalty"


@dataclass(frozen=True)
class IouSchedule:
    thresholds: tuple[float, ...]

    def __post_init__(self):
        th = tuple(float(t) for t in self.thresholds)
        if not th:
            raise ValueError("empty IoU schedule")
        if any(not 0.0 < t <= 1.0 for t in th):
            raise ValueError(f"thresholds must lie in (0, 1]: {th}")
        if any(b <= a for a, b in zip(th, th[1:])):
            raise ValueError(f"thresholds must be strictly increasing: {th}")
        object.__setattr__(self, "thresholds", th)


PRESETS: dict[str, IouSchedule] = {
    "0.5": IouSchedule((0.5,)),
    "0.75": IouSchedule((0.75,)),
    "0.5:0.05:0.95": IouSchedule(tuple(round(0.5 + 0.05 * k, 2) for k in range(10))),
}

PRESET_ALIASES = {
    "0.5": ("0.5",),
    "0.75": ("0.75",),
    "coco": ("0.5:0.05:0.95",),
    "all": ("0.5", "0.75", "0.5:0.05:0.95"),
}


# ---------------------------------------------------------------------------
# per-image counting


def _successors(blocks):
    nxt = {}
    for b in blocks:
        for a, c in zip(b, b[1:]):
            nxt[a] = c
    return nxt


def la_counts(pred_blocks, gt_blocks, det_to_gt: Mapping[int, int]) -> tuple[int, int]:
    """``(TP, N)`` for one image; blocks hold detection / gt positions."""
    gt_to_det = {g: d for d, g in det_to_gt.items()}
    pred_next = _successors(pred_blocks)
    n = tp = 0
    for b in gt_blocks:
        for a, c in zip(b, b[1:]):
            n += 1
            da = gt_to_det.get(a)
            dc = gt_to_det.get(c)
            if da is not None and dc is not None and pred_next.get(da) == dc:
                tp += 1
    return tp, n


def _rewrite(pred_blocks, det_to_gt):
    return [tuple(det_to_gt.get(d, ("unmatched", d)) for d in b) for b in pred_blocks]


def _ngrams(seqs, n):
    if n == 1:
        return Counter(s[0] for s in seqs if len(s) == 1)
    return Counter(tuple(s[i : i + n]) for s in seqs for i in range(len(s) - n + 1))


def lc_counts(pred_blocks, gt_blocks, det_to_gt: Mapping[int, int]) -> tuple[list[int], list[int]]:
    """Clipped matches and candidate counts for n = 1..5 on one image."""
    seqs = _rewrite(pred_blocks, det_to_gt)
    refs = [tuple(b) for b in gt_blocks]
    clipped, cands = [], []
    for n in range(1, MAX_N + 1):
        cand = _ngrams(seqs, n)
        ref = _ngrams(refs, n)
        clipped.append(sum(min(c, ref[g]) for g, c in cand.items()))
        cands.append(sum(cand.values()))
    return clipped, cands


def ga_counts(pred_blocks, gt_blocks, det_to_gt: Mapping[int, int]) -> tuple[int, int]:
    predicted = set(_rewrite(pred_blocks, det_to_gt))
    tp = sum(1 for b in gt_blocks if tuple(b) in predicted)
    return tp, len(gt_blocks)


def _ratio(tp, n):
    return tp / n if n > 0 else 0.0


def lc_value(clipped: Sequence[int], cands: Sequence[int]) -> float:
    ps = [c / k for c, k in zip(clipped, cands) if k > 0]
    return float(np.mean(ps)) if ps else 0.0


# dataset-level wrappers over per-image lists


def local_accuracy(pred_blocks_per_image, gt_blocks_per_image, matchings) -> tuple[int, int]:
    tp = n = 0
    for p, g, m in zip(pred_blocks_per_image, gt_blocks_per_image, matchings):
        a, b = la_counts(p, g, m.det_to_gt)
        tp += a
        n += b
    return tp, n


def local_continuity(pred_blocks_per_image, gt_blocks_per_image, matchings) -> tuple[list[int], list[int], float]:
    clipped = [0] * MAX_N
    cands = [0] * MAX_N
    for p, g, m in zip(pred_blocks_per_image, gt_blocks_per_image, matchings):
        c, k = lc_counts(p, g, m.det_to_gt)
        clipped = [x + y for x, y in zip(clipped, c)]
        cands = [x + y for x, y in zip(cands, k)]
    return clipped, cands, lc_value(clipped, cands)


def global_accuracy(pred_blocks_per_image, gt_blocks_per_image, matchings) -> tuple[int, int]:
    tp = n = 0
    for p, g, m in zip(pred_blocks_per_image, gt_blocks_per_image, matchings):
        a, b = ga_counts(p, g, m.det_to_gt)
        tp += a
        n += b
    return tp, n


# ---------------------------------------------------------------------------
# report


@dataclass
class ThresholdResult:
    threshold: float
    la_tp: int = 0
    la_n: int = 0
    ga_tp: int = 0
    ga_n: int = 0
    lc_clipped: list[int] = field(default_factory=lambda: [0] * MAX_N)
    lc_candidates: list[int] = field(default_factory=lambda: [0] * MAX_N)

    @property
    def la(self) -> float:
        return _ratio(self.la_tp, self.la_n)

    @property
    def ga(self) -> float:
        return _ratio(self.ga_tp, self.ga_n)

    @property
    def lc(self) -> float:
        return lc_value(self.lc_clipped, self.lc_candidates)

    @property
    def flags(self) -> list[str]:
        out = []
        if self.la_n == 0:
            out.append("LA undefined: no adjacent ground-truth pairs")
        if self.ga_n == 0:
            out.append("GA undefined: no ground-truth blocks")
        if not any(self.lc_candidates):
            out.append("LC undefined: no candidate n-grams")
        return out

    def add(self, pred_blocks, gt_blocks, det_to_gt):
        a, b = la_counts(pred_blocks, gt_blocks, det_to_gt)
        self.la_tp += a
        self.la_n += b
        a, b = ga_counts(pred_blocks, gt_blocks, det_to_gt)
        self.ga_tp += a
        self.ga_n += b
        c, k = lc_counts(pred_blocks, gt_blocks, det_to_gt)
        self.lc_clipped = [x + y for x, y in zip(self.lc_clipped, c)]
        self.lc_candidates = [x + y for x, y in zip(self.lc_candidates, k)]


@dataclass
class MetricReport:
    results: dict[float, ThresholdResult]
    presets: dict[str, IouSchedule]

    def preset_values(self, name: str) -> dict[str, float]:
        rs = [self.results[t] for t in self.presets[name].thresholds]
        return {
            "LA": float(np.mean([r.la for r in rs])),
            "LC": float(np.mean([r.lc for r in rs])),
            "GA": float(np.mean([r.ga for r in rs])),
        }

    def to_dict(self) -> dict:
        presets = {}
        for name, sched in self.presets.items():
            presets[name] = {**self.preset_values(name), "thresholds": list(sched.thresholds)}
        per_threshold = {}
        for t in sorted(self.results):
            r = self.results[t]
            per_threshold[f"{t:.2f}"] = {
                "LA": r.la,
                "LC": r.lc,
                "GA": r.ga,
                "la_tp": r.la_tp,
                "la_n": r.la_n,
                "ga_tp": r.ga_tp,
                "ga_n": r.ga_n,
                "lc_clipped": list(r.lc_clipped),
                "lc_candidates": list(r.lc_candidates),
                "flags": r.flags,
            }
        return {
            "averaging": "micro",
            "lc_aggregation": LC_AGGREGATION,
            "presets": presets,
            "per_threshold": per_threshold,
        }

    def to_text(self) -> str:
        return format_report(self.to_dict())


def format_report(obj, indent: int = 0) -> str:
    """JSON with every float printed to 4 decimals; key order is preserved."""
    pad = "  " * (indent + 1)
    end = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        inner = ",\n".join(f"{pad}{_scalar(str(k))}: {format_report(v, indent + 1)}" for k, v in obj.items())
        return "{\n" + inner + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if all(not isinstance(v, (dict, list, tuple)) for v in obj):
            return "[" + ", ".join(_scalar(v) for v in obj) + "]"
        inner = ",\n".join(pad + format_report(v, indent + 1) for v in obj)
        return "[\n" + inner + "\n" + end + "]"
    return _scalar(obj)


def _scalar(v):
    if isinstance(v, float):
        return f"{v:.4f}"
    return json.dumps(v, ensure_ascii=False)


def _positions(im: Optional[ImageAnnotation]):
    if im is None:
        return [], []
    pos = im.unit_index()
    return [u.polygon for u in im.units], [[pos[u] for u in b.units] for b in im.blocks]


def evaluate(
    gt: Dataset,
    pred: PredictionSet,
    schedule: Optional[Mapping[str, IouSchedule]] = None,
    mode: str = "polygon",
) -> MetricReport:
    """Score ``pred`` against ``gt`` for every preset in ``schedule``.

    ``schedule`` maps preset names to :class:`IouSchedule`; it defaults to the
    three standard presets. Ground-truth images missing from ``pred`` count
    as empty predictions.
    """
    if schedule is None:
        schedule = PRESETS
    elif isinstance(schedule, IouSchedule):
        schedule = {"custom": schedule}
    gt_images = gt.by_id()
    pred_images = pred.by_id()
    extra = [i for i in pred_images if i not in gt_images]
    if extra:
        raise ValueError(f"prediction images absent from ground truth: {extra[:5]}")

    thresholds = sorted({t for s in schedule.values() for t in s.thresholds})
    results = {t: ThresholdResult(t) for t in thresholds}
    for iid, gim in gt_images.items():
        gt_polys, gt_blocks = _positions(gim)
        det_polys, det_blocks = _positions(pred_images.get(iid))
        ious = iou_matrix(det_polys, gt_polys, mode)
        for t in thresholds:
            m = match_iou_matrix(ious, t)
            results[t].add(det_blocks, gt_blocks, m.det_to_gt)
    return MetricReport(results, dict(schedule))
