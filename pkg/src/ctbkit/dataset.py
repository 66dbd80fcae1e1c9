"""Annotation and prediction files: types, parsing, validation and statistics.

Both file kinds are UTF-8 JSON documents::

    {"granularity": "word",
     "images": [{"image_id": "img_0", "width": 640, "height": 480,
                 "units": [{"unit_id": "u0", "polygon": [[x, y], ...], "text": "..."}],
                 "blocks": [{"block_id": "b0", "units": ["u0", ...]}]}]}

The order of ``blocks[*].units`` is the reading order. Prediction files use
the same layout; units may carry a ``score`` and ``width``/``height`` are
optional.
"""
from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from typing import Any, Iterable, Optional, Union

from .geometry import Polygon

UnitId = Union[str, int]
GRANULARITIES = ("character", "word")


class ParseError(ValueError):
    """Malformed document; carries the 1-based line and column when known."""

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{message}{where}")


class ValidationError(ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        first = self.violations[0]
        more = f" (+{len(self.violations) - 1} more)" if len(self.violations) > 1 else ""
        super().__init__(f"{first}{more}")


@dataclass(frozen=True)
class Violation:
    image_id: Any
    field: str
    message: str

    def __str__(self):
        return f"image {self.image_id!r}: {self.field}: {self.message}"


@dataclass(frozen=True)
class IntegralUnit:
    unit_id: UnitId
    polygon: Polygon
    text: Optional[str] = None
    score: Optional[float] = None


@dataclass(frozen=True)
class ContextualBlock:
    block_id: UnitId
    units: tuple[UnitId, ...]


@dataclass(frozen=True)
class ImageAnnotation:
    image_id: UnitId
    width: Optional[int]
    height: Optional[int]
    units: tuple[IntegralUnit, ...] = ()
    blocks: tuple[ContextualBlock, ...] = ()

    def unit_index(self) -> dict[UnitId, int]:
        return {u.unit_id: i for i, u in enumerate(self.units)}


@dataclass(frozen=True)
class Dataset:
    images: tuple[ImageAnnotation, ...]
    granularity: str = "word"

    def by_id(self) -> dict[UnitId, ImageAnnotation]:
        return {im.image_id: im for im in self.images}


@dataclass(frozen=True)
class PredictionSet:
    images: tuple[ImageAnnotation, ...]

    def by_id(self) -> dict[UnitId, ImageAnnotation]:
        return {im.image_id: im for im in self.images}


@dataclass(frozen=True)
class DatasetStats:
    n_integral: int
    n_block: int
    n_image: int

    @property
    def integral_per_block(self) -> float:
        return self.n_integral / self.n_block

    @property
    def integral_per_image(self) -> float:
        return self.n_integral / self.n_image

    @property
    def block_per_image(self) -> float:
        return self.n_block / self.n_image

    def format(self) -> str:
        return (
            f"# integral: {self.n_integral}\n"
            f"# block: {self.n_block}\n"
            f"# image: {self.n_image}\n"
            f"# integral per block: {self.integral_per_block:.2f}\n"
            f"# integral per image: {self.integral_per_image:.2f}\n"
            f"# block per image: {self.block_per_image:.2f}\n"
        )


# ---------------------------------------------------------------------------
# parsing


def _is_id(v):
    return isinstance(v, (str, int)) and not isinstance(v, bool)


def _load_json(data):
    if isinstance(data, (bytes, bytearray)):
        try:
            text = bytes(data).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"invalid UTF-8 at byte {exc.start}") from None
    else:
        text = data
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno, exc.colno) from None


def _expect(cond, where, msg):
    if not cond:
        raise ParseError(f"{where}: {msg}")


def _number(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _parse_image(obj, where, prediction):
    _expect(isinstance(obj, dict), where, "image must be an object")
    _expect("image_id" in obj and _is_id(obj["image_id"]), where, "missing or invalid image_id")
    where = f"image {obj['image_id']!r}"
    dims = []
    for key in ("width", "height"):
        v = obj.get(key)
        if v is None:
            _expect(prediction, where, f"missing {key}")
        else:
            _expect(isinstance(v, int) and not isinstance(v, bool), where, f"{key} must be an integer")
        dims.append(v)

    units = []
    raw_units = obj.get("units", [])
    _expect(isinstance(raw_units, list), where, "units must be an array")
    for k, u in enumerate(raw_units):
        uw = f"{where} units[{k}]"
        _expect(isinstance(u, dict), uw, "unit must be an object")
        _expect("unit_id" in u and _is_id(u["unit_id"]), uw, "missing or invalid unit_id")
        poly = u.get("polygon")
        _expect(isinstance(poly, list) and len(poly) >= 3, uw, "polygon must be an array of >= 3 points")
        for p in poly:
            _expect(
                isinstance(p, list) and len(p) == 2 and all(_number(c) for c in p), uw, "point must be [x, y]"
            )
        try:
            polygon = Polygon(poly)
        except ValueError as exc:
            raise ParseError(f"{uw}: {exc}") from None
        text = u.get("text")
        _expect(text is None or isinstance(text, str), uw, "text must be a string")
        score = u.get("score")
        _expect(score is None or _number(score), uw, "score must be a number")
        units.append(IntegralUnit(u["unit_id"], polygon, text, None if score is None else float(score)))

    blocks = []
    raw_blocks = obj.get("blocks", [])
    _expect(isinstance(raw_blocks, list), where, "blocks must be an array")
    for k, b in enumerate(raw_blocks):
        bw = f"{where} blocks[{k}]"
        _expect(isinstance(b, dict), bw, "block must be an object")
        _expect("block_id" in b and _is_id(b["block_id"]), bw, "missing or invalid block_id")
        refs = b.get("units")
        _expect(isinstance(refs, list) and all(_is_id(r) for r in refs), bw, "units must be an array of ids")
        blocks.append(ContextualBlock(b["block_id"], tuple(refs)))

    return ImageAnnotation(obj["image_id"], dims[0], dims[1], tuple(units), tuple(blocks))


def _parse_images(doc, prediction):
    _expect(isinstance(doc, dict), "document", "top level must be an object")
    images = doc.get("images")
    _expect(isinstance(images, list), "document", "missing images array")
    return tuple(_parse_image(im, f"images[{i}]", prediction) for i, im in enumerate(images))


def parse_ground_truth(data: Union[bytes, str]) -> Dataset:
    """Parse and validate a ground-truth annotation document.

    Raises :class:`ParseError` for malformed input and :class:`ValidationError`
    when the structure violates the dataset invariants.
    """
    doc = _load_json(data)
    images = _parse_images(doc, prediction=False)
    granularity = doc.get("granularity", "word")
    _expect(granularity in GRANULARITIES, "document", f"granularity must be one of {GRANULARITIES}")
    ds = Dataset(images, granularity)
    violations = validate_dataset(ds)
    if violations:
        raise ValidationError(violations)
    return ds


def parse_predictions(data: Union[bytes, str], allow_unassigned: bool = False) -> PredictionSet:
    """Parse a prediction document.

    With ``allow_unassigned`` the file may list units outside any block, which
    is how raw detections (before grouping) are passed in.
    """
    doc = _load_json(data)
    preds = PredictionSet(_parse_images(doc, prediction=True))
    violations = validate_predictions(preds, allow_unassigned=allow_unassigned)
    if violations:
        raise ValidationError(violations)
    return preds


# ---------------------------------------------------------------------------
# validation


def _check_image(im: ImageAnnotation, require_blocks: bool, require_dims: bool) -> list[Violation]:
    out = []
    iid = im.image_id
    if require_dims or im.width is not None or im.height is not None:
        for name, v in (("width", im.width), ("height", im.height)):
            if not isinstance(v, int) or v <= 0:
                out.append(Violation(iid, name, f"must be a positive integer, got {v!r}"))

    seen = Counter(u.unit_id for u in im.units)
    for uid, n in seen.items():
        if n > 1:
            out.append(Violation(iid, "units", f"duplicate unit_id {uid!r}"))

    w_ok = isinstance(im.width, int) and im.width > 0
    h_ok = isinstance(im.height, int) and im.height > 0
    for u in im.units:
        xs = [p[0] for p in u.polygon.vertices]
        ys = [p[1] for p in u.polygon.vertices]
        if w_ok and (min(xs) < 0 or max(xs) > im.width):
            out.append(Violation(iid, f"units[{u.unit_id!r}].polygon", f"x outside [0, {im.width}]"))
        if h_ok and (min(ys) < 0 or max(ys) > im.height):
            out.append(Violation(iid, f"units[{u.unit_id!r}].polygon", f"y outside [0, {im.height}]"))
        if u.polygon.area <= 0.0:
            out.append(Violation(iid, f"units[{u.unit_id!r}].polygon", "zero-area polygon"))
        elif not u.polygon.is_axis_rect and not u.polygon.is_simple():
            out.append(Violation(iid, f"units[{u.unit_id!r}].polygon", "self-intersecting polygon"))
        if u.score is not None and not math.isfinite(u.score):
            out.append(Violation(iid, f"units[{u.unit_id!r}].score", "non-finite score"))

    bseen = Counter(b.block_id for b in im.blocks)
    for bid, n in bseen.items():
        if n > 1:
            out.append(Violation(iid, "blocks", f"duplicate block_id {bid!r}"))

    owner: dict[UnitId, UnitId] = {}
    for b in im.blocks:
        where = f"blocks[{b.block_id!r}]"
        if not b.units:
            out.append(Violation(iid, where, "empty block"))
        for uid, n in Counter(b.units).items():
            if n > 1:
                out.append(Violation(iid, where, f"duplicate unit {uid!r} within block"))
        for uid in dict.fromkeys(b.units):
            if uid not in seen:
                out.append(Violation(iid, where, f"references missing unit {uid!r}"))
            elif uid in owner:
                out.append(Violation(iid, where, f"unit in multiple blocks: {uid!r}"))
            else:
                owner[uid] = b.block_id

    if require_blocks:
        for u in im.units:
            if u.unit_id not in owner:
                out.append(Violation(iid, f"units[{u.unit_id!r}]", "unit not in any block"))
    return out


def validate_dataset(d: Dataset) -> list[Violation]:
    """Return every invariant violation in ``d``; an empty list means valid."""
    out = []
    for iid, n in Counter(im.image_id for im in d.images).items():
        if n > 1:
            out.append(Violation(iid, "image_id", "duplicate image_id"))
    if d.granularity not in GRANULARITIES:
        out.append(Violation(None, "granularity", f"must be one of {GRANULARITIES}"))
    for im in d.images:
        out.extend(_check_image(im, require_blocks=True, require_dims=True))
    return out


def validate_predictions(p: PredictionSet, allow_unassigned: bool = False) -> list[Violation]:
    out = []
    for iid, n in Counter(im.image_id for im in p.images).items():
        if n > 1:
            out.append(Violation(iid, "image_id", "duplicate image_id"))
    for im in p.images:
        out.extend(_check_image(im, require_blocks=not allow_unassigned, require_dims=False))
    return out


# ---------------------------------------------------------------------------
# serialisation


def _image_to_obj(im: ImageAnnotation, prediction: bool) -> dict:
    obj: dict[str, Any] = {"image_id": im.image_id}
    if not prediction or im.width is not None:
        obj["width"] = im.width
    if not prediction or im.height is not None:
        obj["height"] = im.height
    units = []
    for u in im.units:
        uo: dict[str, Any] = {"unit_id": u.unit_id, "polygon": [list(p) for p in u.polygon.vertices]}
        if u.text is not None:
            uo["text"] = u.text
        if u.score is not None:
            uo["score"] = u.score
        units.append(uo)
    obj["units"] = units
    obj["blocks"] = [{"block_id": b.block_id, "units": list(b.units)} for b in im.blocks]
    return obj


def _dump(doc) -> bytes:
    return (json.dumps(doc, ensure_ascii=False, indent=1) + "\n").encode("utf-8")


def serialize_dataset(d: Dataset) -> bytes:
    return _dump({"granularity": d.granularity, "images": [_image_to_obj(im, False) for im in d.images]})


def serialize_predictions(p: PredictionSet) -> bytes:
    return _dump({"images": [_image_to_obj(im, True) for im in p.images]})


def ground_truth_as_predictions(d: Dataset) -> PredictionSet:
    """The trivially perfect prediction: every ground-truth unit and block."""
    return PredictionSet(d.images)


# ---------------------------------------------------------------------------
# statistics


def compute_stats(d: Union[Dataset, Iterable[ImageAnnotation]]) -> DatasetStats:
    images = d.images if isinstance(d, Dataset) else tuple(d)
    if not images:
        raise ValueError("empty dataset")
    n_block = sum(len(im.blocks) for im in images)
    if n_block == 0:
        raise ValueError("empty dataset: no contextual blocks")
    return DatasetStats(sum(len(im.units) for im in images), n_block, len(images))
