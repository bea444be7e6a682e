"""word2vec-style text embedding files.

The first line is ``<count> <dim>``; each following line is a code and its
``dim`` space-separated values, written as shortest round-trip decimals.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import numpy as np


class EmbeddingFormatError(ValueError):
    pass


def save_embeddings(codes: Sequence[str], vectors: np.ndarray, path: str | Path) -> None:
    vectors = np.asarray(vectors)
    if len(codes) == 0:
        raise EmbeddingFormatError("no embeddings to write")
    if vectors.ndim != 2 or vectors.shape[0] != len(codes):
        raise EmbeddingFormatError("vectors must be (len(codes), dim)")
    for code in codes:
        if not code or any(ch.isspace() for ch in code):
            raise EmbeddingFormatError(f"code {code!r} is empty or contains whitespace")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(codes)} {vectors.shape[1]}\n")
        for code, row in zip(codes, vectors.astype(np.float64)):
            fh.write(code + " " + " ".join(repr(float(x)) for x in row) + "\n")


def load_embeddings(path: str | Path) -> dict[str, np.ndarray]:
    """Read an embedding file into an insertion-ordered ``code -> vector`` map."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise EmbeddingFormatError(f"{path}: bad header")
        try:
            count, dim = int(header[0]), int(header[1])
        except ValueError:
            raise EmbeddingFormatError(f"{path}: bad header") from None
        if count < 1 or dim < 1:
            raise EmbeddingFormatError(f"{path}: header declares an empty file")
        out: dict[str, np.ndarray] = {}
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != dim + 1:
                raise EmbeddingFormatError(f"{path}:{lineno}: expected {dim} values")
            if parts[0] in out:
                raise EmbeddingFormatError(f"{path}:{lineno}: duplicate code {parts[0]!r}")
            try:
                out[parts[0]] = np.array([float(x) for x in parts[1:]])
            except ValueError:
                raise EmbeddingFormatError(f"{path}:{lineno}: non-numeric value") from None
    if len(out) != count:
        raise EmbeddingFormatError(f"{path}: header says {count} rows, found {len(out)}")
    return out


def embedding_matrix(emb: Mapping[str, np.ndarray]) -> tuple[list[str], np.ndarray]:
    codes = list(emb)
    return codes, np.stack([emb[c] for c in codes])
