"""Structure metrics: block statistics, attention-class averages, and
the rotation distance used in training traces.

Block statistics summarize a square matrix over the word block (mask
row and column excluded): mean and standard deviation of diagonal
entries, same-topic off-diagonal entries, and different-topic entries.

Attention-class statistics summarize attention weights by the relation
between the source and query tokens: same word, same topic but
different word, or different topic.  Pairs touching a mask token are
excluded.  Weights can be debiased by the document length so that
exactly uniform attention scores 1 regardless of length.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .corpus import topic_of

DEBIAS_REFERENCE_LENGTH = 100


def rotation_metric(current: np.ndarray, past: np.ndarray) -> float:
    """(1 - cosine similarity) / 2 over flattened matrices, in [0, 1].

    Raises when both inputs are zero; a single zero input is treated as
    orthogonal (cosine 0, rotation 1/2).
    """
    a = np.asarray(current, dtype=float).ravel()
    b = np.asarray(past, dtype=float).ravel()
    if a.shape != b.shape:
        raise ValueError("shape mismatch")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 and nb == 0.0:
        raise ValueError("rotation metric undefined for two zero matrices")
    cos = 0.0 if na == 0.0 or nb == 0.0 else float(a @ b) / (na * nb)
    cos = min(1.0, max(-1.0, cos))
    return (1.0 - cos) / 2.0


@dataclass(frozen=True)
class BlockReport:
    """Class statistics of a (Tv+1)-square matrix over its word block."""

    diag_mean: float
    diag_std: float
    same_topic_mean: float  # off-diagonal, same topic
    same_topic_std: float
    diff_topic_mean: float
    diff_topic_std: float
    separation: float  # (same_topic_mean - diff_topic_mean) / diff_topic_std
    zero_variance: bool

    def to_json(self) -> dict:
        out = dict(self.__dict__)
        if not np.isfinite(self.separation):
            out["separation"] = "inf" if self.separation > 0 else "-inf"
        return out


def block_report(W: np.ndarray, T: int, v: int) -> BlockReport:
    """Summarize the word block of ``W`` by topic structure."""
    n = T * v
    if W.shape != (n + 1, n + 1):
        raise ValueError("matrix shape does not match T*v+1")
    block = W[1:, 1:]
    topics = topic_of(np.arange(1, n + 1), v)
    same = topics[:, None] == topics[None, :]
    eye = np.eye(n, dtype=bool)
    diag = np.diagonal(block)
    same_off = block[same & ~eye]
    diff = block[~same]
    diff_std = float(diff.std())
    zero_var = diff_std == 0.0
    if zero_var:
        gap = float(same_off.mean() - diff.mean())
        sep = float("inf") if gap > 0 else (float("-inf") if gap < 0 else 0.0)
    else:
        sep = float((same_off.mean() - diff.mean()) / diff_std)
    return BlockReport(
        diag_mean=float(diag.mean()),
        diag_std=float(diag.std()),
        same_topic_mean=float(same_off.mean()),
        same_topic_std=float(same_off.std()),
        diff_topic_mean=float(diff.mean()),
        diff_topic_std=float(diff.std()),
        separation=sep,
        zero_variance=zero_var,
    )


@dataclass(frozen=True)
class AttentionClassReport:
    """Average attention weight per source/query token relation.

    Means are None when a class never occurs.  With ``debiased`` the
    weights were scaled by n/100, which maps exactly uniform attention
    to 1/100 for every document length n.
    """

    same_word_mean: float | None
    same_topic_diff_word_mean: float | None
    diff_topic_mean: float | None
    same_word_count: int
    same_topic_diff_word_count: int
    diff_topic_count: int
    debiased: bool

    def to_json(self) -> dict:
        return dict(self.__dict__)


def attention_class_report(
    attentions: list[np.ndarray],
    masked_docs: list[np.ndarray],
    v: int,
    debias: bool = True,
) -> AttentionClassReport:
    """Aggregate attention weights over documents by token relation.

    ``attentions[k]`` is the column-stochastic matrix for document k
    (entry (i, j): weight of source position i for query position j);
    ``masked_docs[k]`` its masked tokens.  All ordered pairs with two
    word tokens count, including the diagonal (which is a same-word
    pair).  Mask-token pairs are skipped.
    """
    if len(attentions) != len(masked_docs):
        raise ValueError("need one attention matrix per document")
    sums = np.zeros(3)
    counts = np.zeros(3, dtype=np.int64)
    for A, tokens in zip(attentions, masked_docs):
        tokens = np.asarray(tokens)
        n = tokens.shape[0]
        if A.shape != (n, n):
            raise ValueError("attention matrix does not match document length")
        word = tokens > 0
        pair_ok = word[:, None] & word[None, :]
        tt = np.where(word, -(-tokens // v), -1)
        same_word = (tokens[:, None] == tokens[None, :]) & pair_ok
        same_topic = (tt[:, None] == tt[None, :]) & pair_ok & ~same_word
        diff_topic = pair_ok & ~same_word & ~same_topic
        weights = A * (n / DEBIAS_REFERENCE_LENGTH) if debias else A
        for idx, mask in enumerate((same_word, same_topic, diff_topic)):
            sums[idx] += float(weights[mask].sum())
            counts[idx] += int(mask.sum())
    means = [s / c if c else None for s, c in zip(sums, counts)]
    return AttentionClassReport(
        same_word_mean=means[0],
        same_topic_diff_word_mean=means[1],
        diff_topic_mean=means[2],
        same_word_count=int(counts[0]),
        same_topic_diff_word_count=int(counts[1]),
        diff_topic_count=int(counts[2]),
        debiased=debias,
    )


def save_report(path, report) -> None:
    with open(path, "w") as fh:
        json.dump(report.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def save_matrix_csv(path, W: np.ndarray) -> None:
    """Plain numeric CSV dump (no header), one matrix row per line."""
    with open(path, "w") as fh:
        for row in np.atleast_2d(W):
            fh.write(",".join(repr(float(x)) for x in row))
            fh.write("\n")


def load_matrix_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=2)
