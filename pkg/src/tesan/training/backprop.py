"""Negative-sampling objective and its exact reverse-mode gradient.

Works on padded batches: ``ids``/``days``/``mask`` of shape (B, n). The
loss is the sum over the batch of ``-J`` where::

    J = log sigmoid(t . h) + sum_k log sigmoid(-n_k . h)

with ``h`` the pooled context vector, ``t`` the target row and ``n_k`` the
negative rows of the output table (the concept table unless separate
output embeddings are enabled).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..attention import Mode, ModelParams, interval_matrix, sigmoid


def _softplus(x):
    return np.logaddexp(0.0, x)


def nsg_objective(h, target_id: int, negative_ids, params: ModelParams) -> float:
    """``J`` for one context vector (to be maximised; always <= 0)."""
    table = params.target_table
    negative_ids = np.asarray(negative_ids, dtype=np.int64).reshape(-1)
    n_rows = table.shape[0]
    if not 0 <= target_id < n_rows or np.any((negative_ids < 0) | (negative_ids >= n_rows)):
        raise IndexError(f"concept id out of range [0, {n_rows})")
    h = np.asarray(h)
    pos = float(table[target_id] @ h)
    neg = table[negative_ids] @ h
    return float(-_softplus(-pos) - _softplus(neg).sum())


def _finite(name: str, x: np.ndarray) -> None:
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"non-finite values in {name}")


@dataclass
class _Cache:
    c: np.ndarray
    delta: np.ndarray
    e: np.ndarray | None
    hidden: np.ndarray
    probs: np.ndarray
    s: np.ndarray
    gate: np.ndarray
    u: np.ndarray
    pool_hidden: np.ndarray
    pool_probs: np.ndarray
    h: np.ndarray


def _forward(params: ModelParams, ids, days, mask) -> _Cache:
    mode = params.mode
    c = params.concept_table[ids]
    delta = np.minimum(interval_matrix(days), params.max_interval)

    pre = params.attn_b1
    if mode.uses_content:
        pre = pre + (c @ params.attn_w1.T)[:, None, :, :] + (c @ params.attn_w2.T)[:, :, None, :]
    e = None
    if mode.uses_interval:
        e = params.interval_table[delta]
        pre = pre + e @ params.attn_w3.T
    hidden = np.tanh(pre)
    if mode is Mode.NORMAL_SA:
        scores = (hidden @ params.attn_v + params.attn_c[0])[..., None]
    else:
        scores = hidden @ params.attn_w.T + params.attn_b
    key_mask = mask[:, None, :, None]
    scores = np.where(key_mask, scores, -np.inf)
    probs = np.exp(scores - scores.max(axis=2, keepdims=True))
    probs /= probs.sum(axis=2, keepdims=True)
    if mode is Mode.NORMAL_SA:
        probs = np.broadcast_to(probs, probs.shape[:-1] + (params.dim,))
    s = np.einsum("bjik,bik->bjk", probs, c)
    _finite("self-attention", s)

    gate = sigmoid(s @ params.gate_w1.T + c @ params.gate_w2.T + params.gate_b)
    u = gate * s + (1.0 - gate) * c
    _finite("fusion gate", u)

    pool_hidden = np.tanh(u @ params.pool_w1.T + params.pool_b1)
    pscores = np.where(mask[:, :, None], pool_hidden @ params.pool_w.T + params.pool_b, -np.inf)
    pool_probs = np.exp(pscores - pscores.max(axis=1, keepdims=True))
    pool_probs /= pool_probs.sum(axis=1, keepdims=True)
    h = (pool_probs * u).sum(axis=1)
    _finite("attention pooling", h)
    return _Cache(c, delta, e, hidden, probs, s, gate, u, pool_hidden, pool_probs, h)


def batch_context_vectors(params: ModelParams, ids, days, mask) -> np.ndarray:
    """Pooled context vectors for a padded batch, shape (B, d)."""
    return _forward(params, np.asarray(ids), np.asarray(days), np.asarray(mask, dtype=bool)).h


def batch_loss(params: ModelParams, ids, days, mask, targets, negatives) -> float:
    """Summed ``-J`` over a padded batch."""
    h = batch_context_vectors(params, ids, days, mask)
    table = params.target_table
    pos = np.einsum("bd,bd->b", table[targets], h)
    neg = np.einsum("brd,bd->br", table[negatives], h)
    return float(_softplus(-pos).sum() + _softplus(neg).sum())


def _flat(x: np.ndarray) -> np.ndarray:
    return x.reshape(-1, x.shape[-1])


def forward_backward(
    params: ModelParams, ids, days, mask, targets, negatives
) -> tuple[float, dict[str, np.ndarray]]:
    """Summed loss and gradients of every parameter tensor over a padded batch.

    Gradients come back as a dict keyed like :meth:`ModelParams.tensors`;
    tensors a mode never reads get exact zeros.
    """
    ids = np.asarray(ids)
    days = np.asarray(days)
    mask = np.asarray(mask, dtype=bool)
    targets = np.asarray(targets)
    negatives = np.asarray(negatives).reshape(len(targets), -1)
    mode = params.mode
    p = params
    cache = _forward(p, ids, days, mask)
    c, h, u, s, gate = cache.c, cache.h, cache.u, cache.s, cache.gate

    grads = {name: np.zeros_like(arr) for name, arr in p.tensors()}
    table = p.target_table
    out_name = "concept_table" if p.output_table is None else "output_table"

    tv = table[targets]
    nv = table[negatives]
    pos = np.einsum("bd,bd->b", tv, h)
    neg = np.einsum("brd,bd->br", nv, h)
    loss = float(_softplus(-pos).sum() + _softplus(neg).sum())
    _finite("objective", np.asarray(loss))

    g_pos = -sigmoid(-pos)
    g_neg = sigmoid(neg)
    dh = g_pos[:, None] * tv + np.einsum("br,brd->bd", g_neg, nv)
    np.add.at(grads[out_name], targets, g_pos[:, None] * h)
    np.add.at(grads[out_name], negatives, g_neg[:, :, None] * h[:, None, :])

    # attention pooling
    pp, ph = cache.pool_probs, cache.pool_hidden
    dpp = dh[:, None, :] * u
    du = dh[:, None, :] * pp
    dz = pp * (dpp - (pp * dpp).sum(axis=1, keepdims=True))
    grads["pool_w"] += _flat(dz).T @ _flat(ph)
    grads["pool_b"] += dz.sum(axis=(0, 1))
    da = (dz @ p.pool_w) * (1.0 - ph * ph)
    grads["pool_w1"] += _flat(da).T @ _flat(u)
    grads["pool_b1"] += da.sum(axis=(0, 1))
    du += da @ p.pool_w1

    # fusion gate
    ds = du * gate
    dc = du * (1.0 - gate)
    dg = du * (s - c) * gate * (1.0 - gate)
    grads["gate_w1"] += _flat(dg).T @ _flat(s)
    grads["gate_w2"] += _flat(dg).T @ _flat(c)
    grads["gate_b"] += dg.sum(axis=(0, 1))
    ds += dg @ p.gate_w1
    dc += dg @ p.gate_w2

    # self-attention: s_j = sum_i P[j, i] * c_i
    probs, hidden = cache.probs, cache.hidden
    dc += np.einsum("bjk,bjik->bik", ds, probs)
    dprobs = ds[:, :, None, :] * c[:, None, :, :]
    dscores = probs * (dprobs - (probs * dprobs).sum(axis=2, keepdims=True))
    if mode is Mode.NORMAL_SA:
        dscalar = dscores.sum(axis=-1)
        grads["attn_v"] += np.einsum("bji,bjik->k", dscalar, hidden)
        grads["attn_c"] += dscalar.sum()
        dhidden = dscalar[..., None] * p.attn_v
    else:
        grads["attn_w"] += _flat(dscores).T @ _flat(hidden)
        grads["attn_b"] += dscores.sum(axis=(0, 1, 2))
        dhidden = dscores @ p.attn_w
    dpre = dhidden * (1.0 - hidden * hidden)
    grads["attn_b1"] += dpre.sum(axis=(0, 1, 2))
    if mode.uses_content:
        dkeys = dpre.sum(axis=1)
        dqueries = dpre.sum(axis=2)
        grads["attn_w1"] += _flat(dkeys).T @ _flat(c)
        grads["attn_w2"] += _flat(dqueries).T @ _flat(c)
        dc += dkeys @ p.attn_w1 + dqueries @ p.attn_w2
    if mode.uses_interval:
        grads["attn_w3"] += _flat(dpre).T @ _flat(cache.e)
        pair_mask = mask[:, :, None] & mask[:, None, :]
        np.add.at(grads["interval_table"], cache.delta[pair_mask], (dpre @ p.attn_w3)[pair_mask])

    np.add.at(grads["concept_table"], ids[mask], dc[mask])
    for name, g in grads.items():
        _finite(f"gradient of {name}", g)
    return loss, grads


def backward(sample, negative_ids, params: ModelParams) -> tuple[float, dict[str, np.ndarray]]:
    """Loss ``-J`` and gradients for a single context sample."""
    ids = np.asarray(sample.ctx_ids)[None, :]
    days = np.asarray(sample.ctx_days)[None, :]
    mask = np.ones_like(ids, dtype=bool)
    neg = np.asarray(negative_ids, dtype=np.int64).reshape(1, -1)
    return forward_backward(params, ids, days, mask, np.array([sample.target]), neg)
