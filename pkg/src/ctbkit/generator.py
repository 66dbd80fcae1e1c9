"""Contextual block generation from integral tokens.

A stack of pre-norm self-attention blocks refines the tokens, a linear head
classifies each token into ``N + 1`` classes (the assigned index of its
successor, its own index when it ends a block, or ``N`` for "not a text"),
and the resulting successor links are grouped into weakly connected
components, each read off as one ordered block.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Hashable, Mapping, Optional, Sequence, Union

import numpy as np

from .embeddings import EmbeddingConfig, ShapeError, TensorArchive, TokenMatrix
from .geometry import Matching
from .kernels import connected_components

N_LAYERS = 6
N_HEADS = 8
LN_EPS = 1e-5

_LINEAR = ("q", "k", "v", "o", "f")


def generator_shapes(cfg: EmbeddingConfig, layers: int = N_LAYERS) -> dict[str, tuple[int, ...]]:
    t = cfg.token_dim
    shapes: dict[str, tuple[int, ...]] = {}
    for l in range(layers):
        for p in _LINEAR:
            shapes[f"att.{l}.W{p}"] = (t, t)
            shapes[f"att.{l}.b{p}"] = (t,)
        for ln in ("ln1", "ln2"):
            shapes[f"att.{l}.{ln}.g"] = (t,)
            shapes[f"att.{l}.{ln}.b"] = (t,)
    shapes["iph.W"] = (t, cfg.n_index + 1)
    shapes["iph.b"] = (cfg.n_index + 1,)
    return shapes


@dataclass(frozen=True)
class GeneratorWeights:
    layers: tuple[Mapping[str, np.ndarray], ...]
    head_W: np.ndarray
    head_b: np.ndarray
    heads: int = N_HEADS

    def __post_init__(self):
        t = self.head_W.shape[0]
        if t % self.heads:
            raise ShapeError(f"token width {t} not divisible by {self.heads} heads")

    @property
    def n_index(self) -> int:
        return self.head_W.shape[1] - 1

    @classmethod
    def from_archive(
        cls, w: TensorArchive, cfg: EmbeddingConfig, layers: int = N_LAYERS, heads: int = N_HEADS
    ) -> "GeneratorWeights":
        w.check(generator_shapes(cfg, layers))
        stack = []
        for l in range(layers):
            p = f"att.{l}."
            stack.append(
                {
                    **{f"W{n}": w[p + f"W{n}"] for n in _LINEAR},
                    **{f"b{n}": w[p + f"b{n}"] for n in _LINEAR},
                    "ln1_g": w[p + "ln1.g"],
                    "ln1_b": w[p + "ln1.b"],
                    "ln2_g": w[p + "ln2.g"],
                    "ln2_b": w[p + "ln2.b"],
                }
            )
        return cls(tuple(stack), w["iph.W"], w["iph.b"], heads)


def init_generator_weights(
    cfg: EmbeddingConfig, layers: int = N_LAYERS, seed: Optional[int] = None, scale: float = 0.05
) -> dict[str, np.ndarray]:
    """Tensor dict for the generator: zeros (unit LN gains) or Gaussian noise."""
    rng = None if seed is None else np.random.default_rng(seed)
    out = {}
    for name, shape in generator_shapes(cfg, layers).items():
        if name.endswith(".g"):
            out[name] = np.ones(shape) if rng is None else 1.0 + rng.normal(0.0, scale, size=shape)
        elif rng is None:
            out[name] = np.zeros(shape)
        else:
            out[name] = rng.normal(0.0, scale, size=shape)
    return out


def layer_norm(x: np.ndarray, gain: np.ndarray, shift: np.ndarray, eps: float = LN_EPS) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gain + shift


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def _self_attention(h, layer, heads):
    r, t = h.shape
    dh = t // heads
    q = (h @ layer["Wq"] + layer["bq"]).reshape(r, heads, dh).transpose(1, 0, 2)
    k = (h @ layer["Wk"] + layer["bk"]).reshape(r, heads, dh).transpose(1, 0, 2)
    v = (h @ layer["Wv"] + layer["bv"]).reshape(r, heads, dh).transpose(1, 0, 2)
    attn = softmax(q @ k.transpose(0, 2, 1) / np.sqrt(dh))
    ctx = (attn @ v).transpose(1, 0, 2).reshape(r, t)
    return ctx @ layer["Wo"] + layer["bo"], attn


def attention_forward(
    tokens: Union[TokenMatrix, np.ndarray], w: GeneratorWeights, return_attention: bool = False
):
    """Run the attention stack over one image's tokens.

    Each block computes ``u = x + MHSA(LN1(x))`` then ``y = u + Linear(LN2(u))``.
    With ``return_attention`` the per-layer ``heads x r x r`` weights are
    returned alongside the hidden states.
    """
    x = np.asarray(tokens.data if isinstance(tokens, TokenMatrix) else tokens, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError(f"expected a non-empty r x 3d token matrix, got shape {x.shape}")
    if x.shape[1] != w.head_W.shape[0]:
        raise ShapeError(f"token width {x.shape[1]} does not match weights width {w.head_W.shape[0]}")
    maps = []
    for layer in w.layers:
        sub, attn = _self_attention(layer_norm(x, layer["ln1_g"], layer["ln1_b"]), layer, w.heads)
        u = x + sub
        x = u + (layer_norm(u, layer["ln2_g"], layer["ln2_b"]) @ layer["Wf"] + layer["bf"])
        maps.append(attn)
    return (x, maps) if return_attention else x


@dataclass(frozen=True)
class IndexAssignment:
    classes: tuple[int, ...]
    n_index: int

    def is_text(self, i: int) -> bool:
        return self.classes[i] != self.n_index


def predict_indices(hidden: np.ndarray, w: GeneratorWeights) -> tuple[np.ndarray, IndexAssignment]:
    logits = np.asarray(hidden, dtype=np.float64) @ w.head_W + w.head_b
    # np.argmax returns the first maximum, i.e. the lowest class id on ties
    classes = tuple(int(c) for c in np.argmax(logits, axis=1)) if logits.size else ()
    return logits, IndexAssignment(classes, w.n_index)


def build_targets(matching: Matching, gt, tokens: TokenMatrix, n_index: int) -> tuple[int, ...]:
    """Training targets for every token.

    ``matching`` pairs token rows with positions in ``gt.units``. A matched
    token points at the token matched to its ground-truth successor, at
    itself when its unit ends a block or the successor went undetected, and
    unmatched tokens get the "not a text" class ``n_index``.
    """
    r = tokens.rows
    n_gt = len(gt.units)
    for d, g, _ in matching.pairs:
        if not (0 <= d < r and 0 <= g < n_gt):
            raise ValueError(f"matching pair ({d}, {g}) outside {r} tokens / {n_gt} gt units")
    pos = gt.unit_index()
    successor: dict[int, Optional[int]] = {}
    for b in gt.blocks:
        ids = [pos[u] for u in b.units]
        for a, nxt in zip(ids, ids[1:] + [None]):
            successor[a] = nxt
    det_to_gt = {d: g for d, g, _ in matching.pairs}
    gt_to_det = {g: d for d, g, _ in matching.pairs}

    targets = []
    for i in range(r):
        if i not in det_to_gt:
            targets.append(n_index)
            continue
        nxt = successor.get(det_to_gt[i])
        j = gt_to_det.get(nxt) if nxt is not None else None
        targets.append(tokens.assigned_indices[j if j is not None else i])
    return tuple(targets)


def cross_entropy(logits: np.ndarray, targets: Sequence[int]) -> float:
    logits = np.asarray(logits, dtype=np.float64)
    t = np.asarray(targets, dtype=np.int64)
    if logits.shape[0] != t.shape[0]:
        raise ValueError(f"{logits.shape[0]} logit rows vs {t.shape[0]} targets")
    if t.size == 0:
        return 0.0
    m = logits.max(axis=1)
    lse = m + np.log(np.exp(logits - m[:, None]).sum(axis=1))
    return float(np.mean(lse - logits[np.arange(t.size), t]))


@dataclass(frozen=True)
class IndexGraph:
    """Directed successor graph; vertices are token rows, out-degree <= 1."""

    vertices: tuple[int, ...]
    successor: Mapping[int, int] = field(default_factory=dict)

    @property
    def edges(self) -> list[tuple[int, int]]:
        return sorted(self.successor.items())


def build_graph(assignment: IndexAssignment, tokens: TokenMatrix) -> IndexGraph:
    """Turn predicted classes into successor edges.

    Tokens predicted "not a text" are dropped. A class equal to another kept
    token's assigned index gives an edge to it, a token's own index gives a
    self-edge, and anything else leaves the vertex without an out-edge.
    """
    if len(assignment.classes) != tokens.rows:
        raise ValueError(f"{len(assignment.classes)} predictions for {tokens.rows} tokens")
    kept = [i for i in range(tokens.rows) if assignment.is_text(i)]
    row_of = {tokens.assigned_indices[i]: i for i in kept}
    succ = {}
    for i in kept:
        j = row_of.get(assignment.classes[i])
        if j is not None:
            succ[i] = j
    return IndexGraph(tuple(kept), succ)


@dataclass(frozen=True)
class BlockPrediction:
    blocks: tuple[tuple[Hashable, ...], ...]


def component_labels(g: IndexGraph) -> dict[int, int]:
    """Weak-component label (smallest member vertex) for every vertex."""
    order = sorted(g.vertices)
    pos = {v: k for k, v in enumerate(order)}
    edges = [(pos[a], pos[b]) for a, b in g.successor.items() if a != b]
    src = np.array([e[0] for e in edges], dtype=np.int64)
    dst = np.array([e[1] for e in edges], dtype=np.int64)
    labels = connected_components(len(order), src, dst)
    return {v: order[int(labels[k])] for k, v in enumerate(order)}


def extract_blocks(g: IndexGraph) -> BlockPrediction:
    """Linearise each weakly connected component into one ordered block.

    A component is walked from its lowest-id vertex without incoming
    (non-self) edges, or from its lowest id if it is a pure cycle. A walk
    stops at a self-edge, a vertex with no successor, or a visited vertex.
    Vertices left over (several heads feeding one chain) are appended by
    further walks, each started at the lowest unvisited id.
    """
    labels = component_labels(g)
    members = defaultdict(list)
    for v in sorted(g.vertices):
        members[labels[v]].append(v)
    indeg = defaultdict(int)
    for a, b in g.successor.items():
        if a != b:
            indeg[b] += 1

    blocks = []
    for root in sorted(members):
        comp = members[root]
        starts = [v for v in comp if indeg[v] == 0]
        seen = set()
        seq = []
        for start in starts[:1] + comp:
            cur = start
            while cur is not None and cur not in seen:
                seen.add(cur)
                seq.append(cur)
                nxt = g.successor.get(cur)
                cur = None if nxt == cur else nxt
        blocks.append(tuple(seq))
    return BlockPrediction(tuple(blocks))


def infer_blocks(tokens: TokenMatrix, w: GeneratorWeights) -> BlockPrediction:
    """Tokens to ordered blocks of token rows; empty input gives no blocks."""
    if tokens.rows == 0:
        return BlockPrediction(())
    hidden = attention_forward(tokens, w)
    _, assignment = predict_indices(hidden, w)
    return extract_blocks(build_graph(assignment, tokens))
