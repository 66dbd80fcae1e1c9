"""Per-unit token construction: feature, indexing and spatial embeddings.

Weights live in CTBW archives::

    b"CTBW0001" | uint32 LE manifest length | UTF-8 JSON manifest | payloads

The manifest is ``{"tensors": [{"name": str, "dtype": "f32", "shape": [...]}, ...]}``
and payloads are row-major little-endian float32 in manifest order. Tensors
are widened to float64 on load; all arithmetic is double precision.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping, Optional, Sequence

import numpy as np

from .geometry import Polygon, Rect, polygon_bounds
from .kernels import roi_align_kernel

MAGIC = b"CTBW0001"
SAMPLES_PER_BIN = 2


class ArchiveError(ValueError):
    pass


class ShapeError(ArchiveError):
    """A tensor is missing or has the wrong shape."""


class MissingTensorError(ShapeError, KeyError):
    """Also a KeyError so the Mapping protocol (``get``, ``in``) behaves."""

    def __str__(self):
        return str(self.args[0])


class CapacityError(ValueError):
    pass


@dataclass(frozen=True)
class EmbeddingConfig:
    d: int = 64
    roi: int = 7
    n_index: int = 1000

    def __post_init__(self):
        if self.d < 4 or self.d % 2:
            raise ValueError(f"d must be even and >= 4, got {self.d}")
        if self.roi < 1:
            raise ValueError(f"roi must be >= 1, got {self.roi}")
        if self.n_index < 1:
            raise ValueError(f"n_index must be >= 1, got {self.n_index}")

    @property
    def token_dim(self) -> int:
        return 3 * self.d


@dataclass(frozen=True)
class FeatureMap:
    data: np.ndarray
    stride: float = 1.0

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ValueError(f"feature map must be C x H0 x W0, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("feature map has non-finite values")
        if not self.stride > 0:
            raise ValueError(f"stride must be positive, got {self.stride}")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def channels(self) -> int:
        return self.data.shape[0]


class TensorArchive(Mapping[str, np.ndarray]):
    """Immutable name -> float64 array mapping."""

    def __init__(self, tensors: Mapping[str, np.ndarray]):
        items = {}
        for name, value in tensors.items():
            arr = np.array(value, dtype=np.float64)
            arr.setflags(write=False)
            items[name] = arr
        self._tensors = MappingProxyType(items)

    def __getitem__(self, name):
        try:
            return self._tensors[name]
        except KeyError:
            raise MissingTensorError(f"missing tensor {name}") from None

    def __iter__(self):
        return iter(self._tensors)

    def __len__(self):
        return len(self._tensors)

    def require(self, name: str, shape: Sequence[int]) -> np.ndarray:
        arr = self[name]
        if arr.shape != tuple(shape):
            raise ShapeError(f"tensor {name} has shape {arr.shape}, expected {tuple(shape)}")
        return arr

    def check(self, expected: Mapping[str, Sequence[int]]) -> None:
        for name, shape in expected.items():
            self.require(name, shape)


def save_archive(tensors: Mapping[str, np.ndarray]) -> bytes:
    entries = []
    payload = []
    for name, value in tensors.items():
        arr = np.asarray(value, dtype="<f4")
        entries.append({"name": name, "dtype": "f32", "shape": list(arr.shape)})
        payload.append(np.ascontiguousarray(arr).tobytes())
    manifest = json.dumps({"tensors": entries}, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<I", len(manifest)) + manifest + b"".join(payload)


def load_archive(data: bytes, expected: Optional[Mapping[str, Sequence[int]]] = None) -> TensorArchive:
    """Decode a CTBW archive, optionally checking names and shapes."""
    data = bytes(data)
    if data[: len(MAGIC)] != MAGIC:
        raise ArchiveError("bad magic: not a CTBW0001 archive")
    off = len(MAGIC)
    if len(data) < off + 4:
        raise ArchiveError("truncated header")
    (mlen,) = struct.unpack_from("<I", data, off)
    off += 4
    if len(data) < off + mlen:
        raise ArchiveError("truncated manifest")
    try:
        manifest = json.loads(data[off : off + mlen].decode("utf-8"))
        entries = manifest["tensors"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ArchiveError(f"unreadable manifest: {exc}") from None
    off += mlen

    tensors = {}
    for e in entries:
        name = e.get("name")
        if e.get("dtype") != "f32":
            raise ArchiveError(f"tensor {name}: unsupported dtype {e.get('dtype')!r}")
        shape = tuple(int(s) for s in e.get("shape", ()))
        if any(s < 0 for s in shape):
            raise ArchiveError(f"tensor {name}: negative dimension in {shape}")
        if name in tensors:
            raise ArchiveError(f"tensor {name}: duplicate name")
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        if len(data) < off + nbytes:
            raise ArchiveError(f"tensor {name}: truncated payload")
        tensors[name] = np.frombuffer(data, dtype="<f4", count=nbytes // 4, offset=off).reshape(shape)
        off += nbytes
    if off != len(data):
        raise ArchiveError(f"{len(data) - off} trailing bytes after last tensor")

    archive = TensorArchive(tensors)
    if expected:
        archive.check(expected)
    return archive


def extractor_shapes(cfg: EmbeddingConfig, channels: int) -> dict[str, tuple[int, ...]]:
    d = cfg.d
    return {
        "fe.W": (channels * cfg.roi * cfg.roi, d),
        "fe.b": (d,),
        "se.W1": (7, d),
        "se.b1": (d,),
        "se.W2": (d, d),
        "se.b2": (d,),
    }


# ---------------------------------------------------------------------------
# embeddings


def indexing_embedding(i, d: int) -> np.ndarray:
    """Sinusoidal code of index ``i``; ``i`` may be a scalar or a 1-D array.

    Components ``2k`` and ``2k + 1`` share the frequency ``10000 ** (-2k / d)``,
    sine on the even slot and cosine on the odd one.
    """
    if d % 2:
        raise ValueError(f"d must be even, got {d}")
    idx = np.asarray(i, dtype=np.float64)
    k = np.arange(d)
    inv_freq = 1.0 / np.power(10000.0, 2.0 * (k // 2) / d)
    arg = idx[..., None] * inv_freq
    return np.where(k % 2 == 0, np.sin(arg), np.cos(arg))


def spatial_vector(box: Rect) -> np.ndarray:
    w = box.x2 - box.x1
    h = box.y2 - box.y1
    return np.array([w, h, box.x1, box.y1, box.x2, box.y2, w * h], dtype=np.float64)


def spatial_embedding(v: np.ndarray, w: TensorArchive) -> np.ndarray:
    """Two rectified affine maps; ``v`` is one 7-vector or an ``r x 7`` stack."""
    W1 = w["se.W1"]
    W2 = w["se.W2"]
    b1 = w["se.b1"]
    b2 = w["se.b2"]
    if W1.ndim != 2 or W1.shape[0] != 7 or W2.ndim != 2 or W2.shape[0] != W1.shape[1]:
        raise ShapeError(f"spatial MLP shape mismatch: se.W1 {W1.shape}, se.W2 {W2.shape}")
    if b1.shape != (W1.shape[1],) or b2.shape != (W2.shape[1],):
        raise ShapeError(f"spatial MLP bias mismatch: se.b1 {b1.shape}, se.b2 {b2.shape}")
    hidden = np.maximum(0.0, np.asarray(v, dtype=np.float64) @ W1 + b1)
    return np.maximum(0.0, hidden @ W2 + b2)


def roi_align(fm: FeatureMap, box: Rect, R: int) -> np.ndarray:
    """Pool ``box`` (image pixels) from ``fm`` into a ``C x R x R`` grid.

    The box is divided by the map stride without rounding. Each bin averages
    a 2 x 2 lattice of bilinear samples; samples past the border clamp to it.
    """
    s = fm.stride
    return roi_align_kernel(fm.data, (box.x1 / s, box.y1 / s, box.x2 / s, box.y2 / s), R, SAMPLES_PER_BIN)


def feature_embedding(grid: np.ndarray, w: TensorArchive) -> np.ndarray:
    W = w["fe.W"]
    b = w["fe.b"]
    flat = np.asarray(grid, dtype=np.float64).reshape(-1)
    if W.ndim != 2 or W.shape[0] != flat.size or b.shape != (W.shape[1],):
        raise ShapeError(f"fe.W has shape {W.shape}, expected ({flat.size}, d) with matching fe.b")
    return flat @ W + b


@dataclass(frozen=True)
class TokenMatrix:
    data: np.ndarray
    assigned_indices: tuple[int, ...] = field(default=())

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1] // 3


def assign_indices(r: int, n_index: int, seed: int = 0) -> tuple[int, ...]:
    """Draw ``r`` distinct indices uniformly from ``[0, n_index)``."""
    if r > n_index:
        raise CapacityError(f"{r} units exceed index capacity N={n_index}")
    rng = np.random.default_rng(seed)
    return tuple(int(i) for i in rng.choice(n_index, size=r, replace=False))


def build_tokens(
    units: Sequence[Polygon], fm: FeatureMap, w: TensorArchive, cfg: EmbeddingConfig, seed: int = 0
) -> TokenMatrix:
    """Concatenate ``[feature | indexing | spatial]`` embeddings per unit."""
    r = len(units)
    indices = assign_indices(r, cfg.n_index, seed)
    if r == 0:
        return TokenMatrix(np.zeros((0, cfg.token_dim)), ())
    w.check(extractor_shapes(cfg, fm.channels))
    boxes = [polygon_bounds(p) for p in units]
    fe = np.stack([feature_embedding(roi_align(fm, b, cfg.roi), w) for b in boxes])
    ie = indexing_embedding(np.array(indices), cfg.d)
    se = spatial_embedding(np.stack([spatial_vector(b) for b in boxes]), w)
    data = np.concatenate([fe, ie, se], axis=1)
    data.setflags(write=False)
    return TokenMatrix(data, indices)


def init_extractor_weights(cfg: EmbeddingConfig, channels: int, seed: Optional[int] = None, scale: float = 0.05):
    """Zero (``seed is None``) or Gaussian-initialised extractor tensors."""
    rng = None if seed is None else np.random.default_rng(seed)
    out = {}
    for name, shape in extractor_shapes(cfg, channels).items():
        out[name] = np.zeros(shape) if rng is None else rng.normal(0.0, scale, size=shape)
    return out
