"""Sentence-embedding evaluation: retrieval, cluster geometry, 2D projection,
and TSV export.

Sentence embeddings are the [CLS] last-hidden-state rows of an encoder in
eval mode. Retrieval is cosine nearest neighbour with ties broken toward the
lower index. The 2D projection is PCA via SVD of the mean-centered matrix
with a deterministic sign convention.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .model import Encoder
from .tokenization import Vocabulary, encode_single, tokenize
from .trainer import pad_batch


class EvaluationError(ValueError):
    """Inputs unusable for the requested statistic."""


@dataclass(frozen=True)
class EmbeddingSet:
    """Row-aligned embedding matrix and (group, lang) labels.

    group ties translations of the same sentence together; lang identifies
    the language (or side) each row came from.
    """

    matrix: np.ndarray
    labels: tuple[tuple[str, str], ...]

    def __post_init__(self) -> None:
        if self.matrix.ndim != 2:
            raise EvaluationError("matrix must be [rows, dim]")
        if len(self.labels) != self.matrix.shape[0]:
            raise EvaluationError("one (group, lang) label per row required")


def embed_sentences(
    encoder: Encoder,
    sentences: Sequence[str],
    vocab: Vocabulary,
    labels: Sequence[tuple[str, str]] | None = None,
    batch_size: int = 32,
) -> EmbeddingSet:
    """[CLS] embeddings for each sentence, deterministically (eval mode)."""
    if len(sentences) == 0:
        raise EvaluationError("no sentences")
    if labels is None:
        labels = [(str(i), "") for i in range(len(sentences))]
    if len(labels) != len(sentences):
        raise EvaluationError("one label per sentence required")
    encoded = [
        encode_single(vocab, tokenize(vocab, s), max_len=encoder.config.max_len)
        for s in sentences
    ]
    was_training = encoder.training
    encoder.eval()
    chunks = []
    try:
        with torch.no_grad():
            for start in range(0, len(encoded), batch_size):
                chunk = encoded[start : start + batch_size]
                ids, mask = pad_batch([e.ids for e in chunk])
                chunks.append(encoder(ids, mask)[:, 0].numpy())
    finally:
        encoder.train(was_training)
    return EmbeddingSet(matrix=np.concatenate(chunks, axis=0), labels=tuple(labels))


def _unit_rows(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    if np.any(norms <= 1e-12):
        raise EvaluationError("zero-norm embedding row")
    return matrix / norms


def retrieval_accuracy(source: EmbeddingSet, target: EmbeddingSet) -> tuple[float, float]:
    """Cosine nearest-neighbour precision at 1, both directions.

    Row i of source corresponds to row i of target. Ties resolve to the
    lower candidate index, so P@1 counts a hit only when the first argmax is
    the true mate.
    """
    if source.matrix.shape != target.matrix.shape:
        raise EvaluationError("source and target must be row-aligned")
    n = source.matrix.shape[0]
    if n == 0:
        raise EvaluationError("empty embedding sets")
    sims = _unit_rows(source.matrix.astype(np.float64)) @ _unit_rows(target.matrix.astype(np.float64)).T
    fwd = float(np.mean(np.argmax(sims, axis=1) == np.arange(n)))
    bwd = float(np.mean(np.argmax(sims, axis=0) == np.arange(n)))
    return fwd, bwd


def cluster_stats(embeddings: EmbeddingSet) -> tuple[float, float, float]:
    """Mean cosine distance within groups, across groups, and their ratio.

    Needs at least two groups and at least two members per group. With zero
    spread everywhere the ratio degenerates: 0 when both means are 0, inf
    when only the across-group mean is 0.
    """
    groups = [g for g, _ in embeddings.labels]
    unique = sorted(set(groups))
    if len(unique) < 2:
        raise EvaluationError("need at least two groups")
    for g in unique:
        if groups.count(g) < 2:
            raise EvaluationError(f"group {g!r} has fewer than two members")
    unit = _unit_rows(embeddings.matrix.astype(np.float64))
    dist = 1.0 - unit @ unit.T
    n = len(groups)
    intra, inter = [], []
    for i in range(n):
        for j in range(i + 1, n):
            (intra if groups[i] == groups[j] else inter).append(dist[i, j])
    intra_mean = float(np.mean(intra))
    inter_mean = float(np.mean(inter))
    if inter_mean == 0.0:
        ratio = 0.0 if intra_mean == 0.0 else float("inf")
    else:
        ratio = intra_mean / inter_mean
    return intra_mean, inter_mean, ratio


def project_2d(embeddings: EmbeddingSet) -> np.ndarray:
    """PCA coordinates along the top two principal components.

    SVD of the mean-centered matrix; each component's sign makes its
    largest-magnitude loading positive, so the projection is deterministic.
    A matrix with no variance at all (rank 0) is rejected.
    """
    x = embeddings.matrix.astype(np.float64)
    if x.shape[0] < 2:
        raise EvaluationError("need at least two rows")
    centered = x - x.mean(axis=0, keepdims=True)
    u, s, vt = np.linalg.svd(centered, full_matrices=False)
    if not np.any(s > 1e-12):
        raise EvaluationError("rank-0 matrix; nothing to project")
    # components past the numerical rank are noise with unstable signs
    rank = int(np.sum(s > s[0] * 1e-12))
    k = min(2, rank)
    comps = vt[:k]
    signs = np.sign(comps[np.arange(k), np.argmax(np.abs(comps), axis=1)])
    signs[signs == 0] = 1.0
    comps = comps * signs[:, None]
    coords = centered @ comps.T
    if k < 2:
        coords = np.pad(coords, ((0, 0), (0, 2 - k)))
    return coords


def export_embeddings(
    embeddings: EmbeddingSet,
    path: str | Path,
    coordinates: np.ndarray | None = None,
) -> None:
    """TSV with group, lang, then the vector values at 9 significant digits.

    coordinates, when given, replaces the full matrix (same row order).
    """
    matrix = embeddings.matrix if coordinates is None else coordinates
    if matrix.shape[0] != len(embeddings.labels):
        raise EvaluationError("row count does not match labels")
    width = matrix.shape[1]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("group\tlang\t" + "\t".join(f"v{i + 1}" for i in range(width)) + "\n")
        for (group, lang), row in zip(embeddings.labels, matrix):
            fh.write(group + "\t" + lang + "\t" + "\t".join(f"{v:.9g}" for v in row) + "\n")
