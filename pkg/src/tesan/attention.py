"""Temporal self-attention kernels (forward passes only).

Layout: a context is an ``(n, d)`` array whose rows are concept embeddings,
so a weight matrix ``W`` acting on a column vector ``x`` is applied as
``x @ W.T``. Every kernel accepts extra leading batch axes and an optional
boolean ``mask`` over the context positions; masked positions receive zero
attention probability.

Pair scores are indexed ``[..., j, i, k]``: query position ``j``, key
position ``i``, feature ``k``. The softmax runs over ``i``.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from enum import Enum
from typing import Iterator

import numpy as np


class Mode(str, Enum):
    TESA = "tesa"
    MULTI_SA = "multi-sa"
    INTERVAL = "interval"
    NORMAL_SA = "normal-sa"

    @property
    def uses_content(self) -> bool:
        return self is not Mode.INTERVAL

    @property
    def uses_interval(self) -> bool:
        return self in (Mode.TESA, Mode.INTERVAL)


@dataclass
class ModelParams:
    """Every learnable tensor of the network.

    ``concept_table`` is (|C|, d), one row per concept. ``interval_table`` is
    (max_interval + 1, d); longer intervals are clamped to the last row.
    ``attn_v``/``attn_c`` are the vector/scalar output projection used only
    by ``normal-sa``; ``attn_w``/``attn_b`` are used by the other modes.
    ``output_table`` is None unless separate output embeddings are enabled.
    """

    concept_table: np.ndarray
    interval_table: np.ndarray
    attn_w1: np.ndarray
    attn_w2: np.ndarray
    attn_w3: np.ndarray
    attn_b1: np.ndarray
    attn_w: np.ndarray
    attn_b: np.ndarray
    attn_v: np.ndarray
    attn_c: np.ndarray
    pool_w1: np.ndarray
    pool_b1: np.ndarray
    pool_w: np.ndarray
    pool_b: np.ndarray
    gate_w1: np.ndarray
    gate_w2: np.ndarray
    gate_b: np.ndarray
    output_table: np.ndarray | None = None
    mode: Mode = Mode.TESA

    def __post_init__(self) -> None:
        self.mode = Mode(self.mode)

    @property
    def dim(self) -> int:
        return self.concept_table.shape[1]

    @property
    def max_interval(self) -> int:
        return self.interval_table.shape[0] - 1

    @property
    def dtype(self) -> np.dtype:
        return self.concept_table.dtype

    @property
    def target_table(self) -> np.ndarray:
        return self.concept_table if self.output_table is None else self.output_table

    def tensors(self) -> Iterator[tuple[str, np.ndarray]]:
        """(name, array) pairs in declaration order; absent tensors skipped."""
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, np.ndarray):
                yield f.name, value

    def copy(self) -> "ModelParams":
        kwargs = {name: arr.copy() for name, arr in self.tensors()}
        return ModelParams(**kwargs, mode=self.mode)

    def astype(self, dtype) -> "ModelParams":
        kwargs = {name: arr.astype(dtype) for name, arr in self.tensors()}
        return ModelParams(**kwargs, mode=self.mode)

    def validate(self) -> None:
        d = self.dim
        if d < 1:
            raise ValueError("dimension must be >= 1")
        for name, arr in self.tensors():
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
        expect = dict(
            attn_w1=(d, d), attn_w2=(d, d), attn_w3=(d, d), attn_b1=(d,), attn_w=(d, d),
            attn_b=(d,), attn_v=(d,), attn_c=(1,), pool_w1=(d, d), pool_b1=(d,), pool_w=(d, d),
            pool_b=(d,), gate_w1=(d, d), gate_w2=(d, d), gate_b=(d,),
        )
        for name, shape in expect.items():
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if self.interval_table.ndim != 2 or self.interval_table.shape[1] != d:
            raise ValueError("interval_table must be (max_interval + 1, d)")
        if self.output_table is not None and self.output_table.shape != self.concept_table.shape:
            raise ValueError("output_table must match concept_table")


def init_params(
    n_concepts: int,
    dim: int,
    max_interval: int,
    rng: np.random.Generator,
    mode: Mode | str = Mode.TESA,
    *,
    dual_tables: bool = False,
    dtype=np.float64,
) -> ModelParams:
    """Tables ~ U(-0.5/d, 0.5/d), square weights Xavier-uniform, biases zero."""
    if dim < 1 or n_concepts < 1 or max_interval < 0:
        raise ValueError("need dim >= 1, n_concepts >= 1, max_interval >= 0")
    half = 0.5 / dim
    xavier = np.sqrt(6.0 / (dim + dim))

    def table(rows):
        return rng.uniform(-half, half, size=(rows, dim))

    def square():
        return rng.uniform(-xavier, xavier, size=(dim, dim))

    def vec(n=dim):
        return np.zeros(n)

    params = ModelParams(
        concept_table=table(n_concepts),
        interval_table=table(max_interval + 1),
        attn_w1=square(), attn_w2=square(), attn_w3=square(), attn_b1=vec(),
        attn_w=square(), attn_b=vec(),
        attn_v=rng.uniform(-np.sqrt(6.0 / (dim + 1)), np.sqrt(6.0 / (dim + 1)), size=dim),
        attn_c=vec(1),
        pool_w1=square(), pool_b1=vec(), pool_w=square(), pool_b=vec(),
        gate_w1=square(), gate_w2=square(), gate_b=vec(),
        output_table=table(n_concepts) if dual_tables else None,
        mode=mode,
    )
    return params.astype(dtype)


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def embed_lookup(ids, params: ModelParams) -> np.ndarray:
    ids = np.asarray(ids)
    if ids.size == 0:
        raise ValueError("empty context")
    if ids.min() < 0 or ids.max() >= params.concept_table.shape[0]:
        raise IndexError(f"concept id out of range [0, {params.concept_table.shape[0]})")
    return params.concept_table[ids]


def interval_lookup(delta, params: ModelParams) -> np.ndarray:
    """Interval embedding rows; deltas past the table end use its last row."""
    delta = np.asarray(delta)
    if np.any(delta < 0):
        raise ValueError("negative interval")
    return params.interval_table[np.minimum(delta, params.max_interval)]


def interval_matrix(days) -> np.ndarray:
    days = np.asarray(days, dtype=np.int64)
    return np.abs(days[..., :, None] - days[..., None, :])


def _check_vec(*vs: np.ndarray) -> None:
    d = vs[0].shape[-1]
    for v in vs:
        if v.shape[-1] != d:
            raise ValueError(f"shape mismatch: {vs[0].shape} vs {v.shape}")


def additive_compat(c_i, q, w1, w2, b1, w, b) -> float:
    """Scalar additive score ``w . tanh(W1 c_i + W2 q + b1) + b``."""
    c_i, q = np.asarray(c_i), np.asarray(q)
    _check_vec(c_i, q, np.asarray(b1), np.asarray(w))
    if np.shape(w1) != (c_i.size, c_i.size) or np.shape(w2) != (q.size, q.size):
        raise ValueError("weight matrices must be d x d")
    return float(np.dot(w, np.tanh(w1 @ c_i + w2 @ q + b1)) + b)


def multiplicative_compat(c_i, q, w1, w2) -> float:
    c_i, q = np.asarray(c_i), np.asarray(q)
    _check_vec(c_i, q)
    if np.shape(w1) != (c_i.size, c_i.size) or np.shape(w2) != (q.size, q.size):
        raise ValueError("weight matrices must be d x d")
    return float(np.dot(w1 @ c_i, w2 @ q))


def pair_scores(c: np.ndarray, delta: np.ndarray, params: ModelParams) -> np.ndarray:
    """Vector compatibility for every (query j, key i) pair, shape (..., n, n, d)."""
    mode = params.mode
    if c.shape[-1] != params.dim:
        raise ValueError(f"context dim {c.shape[-1]} != model dim {params.dim}")
    pre = params.attn_b1
    if mode.uses_content:
        keys = c @ params.attn_w1.T
        queries = c @ params.attn_w2.T
        pre = pre + keys[..., None, :, :] + queries[..., :, None, :]
    if mode.uses_interval:
        pre = pre + interval_lookup(delta, params) @ params.attn_w3.T
    hidden = np.tanh(pre)
    if mode is Mode.NORMAL_SA:
        score = hidden @ params.attn_v + params.attn_c[0]
        return np.repeat(score[..., None], params.dim, axis=-1)
    return hidden @ params.attn_w.T + params.attn_b


def temporal_compat(c_i, c_j, delta: int, params: ModelParams) -> np.ndarray:
    """Compatibility vector of key ``c_i`` for query ``c_j`` at interval ``delta``."""
    c_i, c_j = np.asarray(c_i), np.asarray(c_j)
    _check_vec(c_i, c_j, params.attn_b1)
    c = np.stack([c_j, c_i])
    delta = np.array([[0, delta], [delta, 0]])
    return pair_scores(c, delta, params)[0, 1]


def multidim_softmax(scores: np.ndarray, mask: np.ndarray | None = None, axis: int = -2) -> np.ndarray:
    """Softmax over context positions, separately for every feature.

    ``scores`` is (..., n, d) with positions on ``axis``; ``mask`` (if given)
    broadcasts against ``scores`` and marks admissible positions.
    """
    scores = np.asarray(scores)
    if not np.all(np.isfinite(scores)):
        raise ValueError("non-finite attention scores")
    if mask is not None:
        scores = np.where(mask, scores, -np.inf)
    shifted = scores - scores.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def _key_mask(mask):
    return None if mask is None else mask[..., None, :, None]


def self_attend(c: np.ndarray, days, params: ModelParams, mask: np.ndarray | None = None) -> np.ndarray:
    """Context-aware outputs ``s_j = sum_i P^j_i * c_i`` for every position j."""
    c = np.asarray(c)
    days = np.asarray(days)
    if c.shape[:-1] != days.shape:
        raise ValueError(f"context {c.shape} and days {days.shape} disagree")
    probs = multidim_softmax(pair_scores(c, interval_matrix(days), params), _key_mask(mask), axis=-2)
    return np.einsum("...jik,...ik->...jk", probs, c)


def fusion_gate(s: np.ndarray, c: np.ndarray, params: ModelParams) -> np.ndarray:
    if s.shape != c.shape:
        raise ValueError(f"shape mismatch: {s.shape} vs {c.shape}")
    gate = sigmoid(s @ params.gate_w1.T + c @ params.gate_w2.T + params.gate_b)
    return gate * s + (1.0 - gate) * c


def tesa_forward(c: np.ndarray, days, params: ModelParams, mask: np.ndarray | None = None) -> np.ndarray:
    return fusion_gate(self_attend(c, days, params, mask), np.asarray(c), params)


def attention_pool(u: np.ndarray, params: ModelParams, mask: np.ndarray | None = None) -> np.ndarray:
    """Query-free multi-dimensional pooling of (..., n, d) down to (..., d)."""
    u = np.asarray(u)
    if u.shape[-2] < 1:
        raise ValueError("empty context")
    scores = np.tanh(u @ params.pool_w1.T + params.pool_b1) @ params.pool_w.T + params.pool_b
    probs = multidim_softmax(scores, None if mask is None else mask[..., None], axis=-2)
    return (probs * u).sum(axis=-2)


def tesan_forward(sample, params: ModelParams) -> np.ndarray:
    """Context vector ``h`` for one :class:`~tesan.journeys.ContextSample`."""
    c = embed_lookup(sample.ctx_ids, params)
    return attention_pool(tesa_forward(c, sample.ctx_days, params), params)
