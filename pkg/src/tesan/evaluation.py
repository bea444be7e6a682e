"""Clustering (k-means, NMI) and nearest-neighbour (P@1) evaluation."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Hashable, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

MAX_ITER = 300
TOL = 1e-6


class GroundTruthError(ValueError):
    pass


def load_ground_truth(path: str | Path) -> dict[str, str]:
    """Read ``code<TAB>group`` lines; a code listed with two groups is an error."""
    truth: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise GroundTruthError(f"{path}:{lineno}: expected code<TAB>group")
            code, group = parts
            if truth.get(code, group) != group:
                raise GroundTruthError(
                    f"{path}:{lineno}: code {code!r} labelled both {truth[code]!r} and {group!r}")
            truth[code] = group
    if not truth:
        raise GroundTruthError(f"{path}: no labels")
    return truth


@dataclass
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float
    n_iter: int


def _sq_dists(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d = (x * x).sum(1)[:, None] - 2.0 * x @ centroids.T + (centroids * centroids).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _plusplus(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    centroids = np.empty((k, x.shape[1]))
    centroids[0] = x[rng.integers(n)]
    closest = _sq_dists(x, centroids[:1])[:, 0]
    for i in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        else:
            idx = int(rng.integers(n))
        centroids[i] = x[idx]
        closest = np.minimum(closest, _sq_dists(x, centroids[i : i + 1])[:, 0])
    return centroids


def _lloyd(x: np.ndarray, centroids: np.ndarray) -> KMeansResult:
    k = len(centroids)
    prev = np.inf
    for it in range(1, MAX_ITER + 1):
        dist = _sq_dists(x, centroids)
        labels = dist.argmin(1)
        inertia = float(dist[np.arange(len(x)), labels].sum())
        assert inertia <= prev * (1 + 1e-9) + 1e-12, "k-means inertia increased"
        prev = inertia
        new = centroids.copy()
        for j in range(k):
            members = labels == j
            if members.any():
                new[j] = x[members].mean(0)
            else:
                # reseed an empty cluster at the worst-served point
                far = int(dist[np.arange(len(x)), labels].argmax())
                new[j] = x[far]
                labels[far] = j
        shift = float(np.sqrt(((new - centroids) ** 2).sum(1)).max())
        centroids = new
        if shift < TOL:
            break
    dist = _sq_dists(x, centroids)
    labels = dist.argmin(1)
    inertia = float(dist[np.arange(len(x)), labels].sum())
    return KMeansResult(labels, centroids, inertia, it)


def kmeans(x: np.ndarray, k: int, seed: int = 0, restarts: int = 10) -> KMeansResult:
    """Best-inertia k-means over ``restarts`` k-means++ starts (ties: earliest restart)."""
    x = np.asarray(x, dtype=np.float64)
    if k < 2:
        raise ValueError("k must be >= 2")
    if len(x) < k:
        raise ValueError(f"need at least k={k} points, got {len(x)}")
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    best = None
    for stream in np.random.SeedSequence(seed).spawn(restarts):
        rng = np.random.default_rng(stream)
        result = _lloyd(x, _plusplus(x, k, rng))
        if best is None or result.inertia < best.inertia:
            best = result
    return best


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def contingency(a: Sequence[Hashable], b: Sequence[Hashable]) -> np.ndarray:
    _, ai = np.unique(np.asarray(a, dtype=object).astype(str), return_inverse=True)
    _, bi = np.unique(np.asarray(b, dtype=object).astype(str), return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(table, (ai, bi), 1)
    return table


def nmi_from_table(table: np.ndarray, norm: str = "geometric") -> float:
    table = np.asarray(table, dtype=np.float64)
    table = table[table.sum(1) > 0][:, table.sum(0) > 0]
    n = table.sum()
    if n <= 0:
        raise ValueError("empty contingency table")
    ha, hb = _entropy(table.sum(1)), _entropy(table.sum(0))
    single_a, single_b = table.shape[0] == 1, table.shape[1] == 1
    if single_a and single_b:
        return 1.0
    if single_a or single_b:
        return 0.0
    pij = table / n
    outer = np.outer(table.sum(1), table.sum(0)) / (n * n)
    nz = pij > 0
    mi = float((pij[nz] * np.log(pij[nz] / outer[nz])).sum())
    if norm == "geometric":
        denom = np.sqrt(ha * hb)
    elif norm == "arithmetic":
        denom = 0.5 * (ha + hb)
    elif norm == "max":
        denom = max(ha, hb)
    else:
        raise ValueError(f"unknown normalisation {norm!r}")
    return float(min(max(mi / denom, 0.0), 1.0))


def nmi(assignment: Mapping[str, Hashable], truth: Mapping[str, Hashable], norm: str = "geometric") -> float:
    """NMI over the codes present in both maps."""
    common = [c for c in assignment if c in truth]
    if not common:
        raise ValueError("assignment and ground truth share no codes")
    return nmi_from_table(contingency([assignment[c] for c in common], [truth[c] for c in common]), norm)


@dataclass
class NNSResult:
    p_at_1: float
    n_codes: int
    n_excluded: int


def nns_p_at_1(embeddings: Mapping[str, np.ndarray], truth: Mapping[str, Hashable],
               metric: str = "cosine") -> NNSResult:
    """Share of labelled codes whose nearest other labelled code has the same group.

    Candidates are scanned in embedding order, so ties go to the earlier code.
    Zero vectors have no cosine neighbour and are excluded.
    """
    codes = [c for c in embeddings if c in truth]
    x = np.stack([np.asarray(embeddings[c], dtype=np.float64) for c in codes]) if codes else np.zeros((0, 1))
    excluded = 0
    if metric == "cosine":
        norms = np.linalg.norm(x, axis=1)
        keep = norms > 0
        excluded = int((~keep).sum())
        if excluded:
            logger.warning("excluded %d zero-norm embeddings from nearest-neighbour search", excluded)
        codes = [c for c, k in zip(codes, keep) if k]
        x = x[keep] / norms[keep, None]
    elif metric != "euclidean":
        raise ValueError(f"unknown metric {metric!r}")
    if len(codes) < 2:
        raise ValueError("need at least two labelled codes")
    if metric == "cosine":
        score = x @ x.T
    else:
        score = -_sq_dists(x, x)
    np.fill_diagonal(score, -np.inf)
    nearest = score.argmax(1)
    labels = [truth[c] for c in codes]
    hits = sum(labels[i] == labels[j] for i, j in enumerate(nearest))
    return NNSResult(hits / len(codes), len(codes), excluded)


def evaluate(embeddings: Mapping[str, np.ndarray], truth: Mapping[str, Hashable], *,
             seed: int = 0, restarts: int = 10, norm: str = "geometric",
             metric: str = "cosine", cluster: bool = True) -> dict:
    """The metrics record: ``{"nmi", "p_at_1", "n_codes", "k"}``.

    ``k`` is the number of distinct groups among the embedded labelled codes.
    """
    codes = [c for c in embeddings if c in truth]
    if len(codes) < 2:
        raise ValueError("fewer than two embedded codes carry a label")
    k = len({truth[c] for c in codes})
    out = {"nmi": None, "p_at_1": nns_p_at_1(embeddings, truth, metric).p_at_1,
           "n_codes": len(codes), "k": k}
    if cluster:
        if k < 2:
            raise ValueError("clustering needs at least two ground-truth groups")
        x = np.stack([np.asarray(embeddings[c], dtype=np.float64) for c in codes])
        labels = kmeans(x, k, seed=seed, restarts=restarts).labels
        out["nmi"] = nmi(dict(zip(codes, labels.tolist())), truth, norm)
    return out
