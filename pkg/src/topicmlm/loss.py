"""Masked-prediction losses, regularization, and population oracles.

Per document, only columns at masked-selected positions contribute; the
per-document loss is the mean over those columns.  Squared loss compares
logits against the one-hot label directly; cross-entropy applies a
column softmax first.  The L2 penalty is lambda times the squared
Frobenius norm summed over a configurable tensor set.

The population oracles evaluate the infinite-data objective under
exactly uniform attention, where the attention aggregate equals the
masked token distribution, so predictions reduce to a single matrix
vector product per topic subset.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .corpus import in_document_words
from .masking import MaskedStats, MaskingConfig, masked_distribution
from .model import ModelParams, softmax_columns


@dataclass(frozen=True)
class LossConfig:
    kind: str = "squared"  # or "ce"
    l2: float = 0.0
    l2_tensors: tuple[str, ...] = ("W_V",)

    def __post_init__(self):
        if self.kind not in ("squared", "ce"):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.l2 < 0:
            raise ValueError("l2 must be nonnegative")


def masked_loss_and_grad(
    logits: np.ndarray,
    labels: np.ndarray,
    positions: np.ndarray,
    kind: str = "squared",
) -> tuple[float, np.ndarray]:
    """Loss value and d(loss)/d(logits) for one document.

    ``labels`` are the original tokens at ``positions``.  Columns outside
    ``positions`` get zero gradient.  Raises on an empty position set.
    """
    if positions.shape[0] == 0:
        raise ValueError("no masked positions to score")
    m = positions.shape[0]
    cols = logits[:, positions]
    dlogits = np.zeros_like(logits)
    if kind == "squared":
        target = np.zeros_like(cols)
        target[labels, np.arange(m)] = 1.0
        resid = cols - target
        with np.errstate(over="ignore"):  # inf loss is the divergence signal
            value = float((resid * resid).sum() / m)
        dlogits[:, positions] = 2.0 * resid / m
    elif kind == "ce":
        probs = softmax_columns(cols)
        picked = probs[labels, np.arange(m)]
        value = float(-np.log(picked).sum() / m)
        probs[labels, np.arange(m)] -= 1.0
        dlogits[:, positions] = probs / m
    else:
        raise ValueError(f"unknown loss kind {kind!r}")
    return value, dlogits


def masked_loss_and_grad_shared(
    logit_col: np.ndarray,
    labels: np.ndarray,
    kind: str = "squared",
) -> tuple[float, np.ndarray]:
    """masked_loss_and_grad when every logits column is the same vector.

    Under uniform attention all scored positions see one shared column,
    so the loss needs only the label histogram and the gradient can be
    returned already summed over columns (the form the uniform backward
    consumes).  Exact up to float association with the generic path.
    """
    if labels.shape[0] == 0:
        raise ValueError("no masked positions to score")
    m = labels.shape[0]
    hist = np.bincount(labels, minlength=logit_col.shape[0]) / m
    if kind == "squared":
        with np.errstate(over="ignore"):  # inf loss is the divergence signal
            value = float(logit_col @ logit_col - 2.0 * (logit_col @ hist) + 1.0)
        gsum = 2.0 * (logit_col - hist)
    elif kind == "ce":
        shifted = logit_col - logit_col.max()
        expo = np.exp(shifted)
        total = expo.sum()
        value = float(np.log(total) - shifted @ hist)
        gsum = expo / total - hist
    else:
        raise ValueError(f"unknown loss kind {kind!r}")
    return value, gsum


def l2_penalty(params: ModelParams, l2: float,
               tensors: Sequence[str] = ("W_V",)) -> float:
    """lambda * sum of squared Frobenius norms over ``tensors``."""
    if l2 == 0.0:
        return 0.0
    total = 0.0
    for name in tensors:
        arr = getattr(params, name)
        if arr is not None:
            total += float((arr * arr).sum())
    return l2 * total


def l2_grad(params: ModelParams, l2: float,
            tensors: Sequence[str]) -> dict[str, np.ndarray]:
    out = {}
    if l2 == 0.0:
        return out
    for name in tensors:
        arr = getattr(params, name)
        if arr is not None and name not in params.frozen:
            out[name] = 2.0 * l2 * arr
    return out


# ---------------------------------------------------------------------------
# Population objective under exactly uniform attention.

def masked_stats_vector(stats: MaskedStats, topic_set: Sequence[int],
                        T: int, v: int, renormalize: bool = False) -> np.ndarray:
    """Expected masked-token histogram as a (T*v+1)-vector.

    Entry 0 is the mask-token mass; word entries follow the in/out of
    document pattern.  With ``renormalize`` the mask mass is dropped and
    word masses rescaled to sum to one (attention that ignores mask
    positions)."""
    y = np.full(T * v + 1, stats.p_out)
    y[0] = stats.p_mask
    y[in_document_words(topic_set, v)] = stats.p_in
    if renormalize:
        y[0] = 0.0
        y[1:] /= 1.0 - stats.p_mask
    return y


def label_distribution(topic_set: Sequence[int], T: int, v: int) -> np.ndarray:
    """Clean-token distribution for a document on ``topic_set``: uniform
    over in-document words, zero elsewhere (mask row included, zero)."""
    p = np.zeros(T * v + 1)
    words = in_document_words(topic_set, v)
    p[words] = 1.0 / words.shape[0]
    return p


def population_loss_uniform_attention(
    W: np.ndarray,
    b_pred: np.ndarray | float,
    topic_set: Sequence[int],
    mask_cfg: MaskingConfig,
    T: int,
    v: int,
    renormalize: bool = False,
) -> float:
    """Expected squared loss at a masked position, one topic subset.

    ``W`` plays the combined role of output-projection times value map
    (for one-hot embeddings this is W_V itself; for the embedding
    theorems it is the Gram matrix W_E^T W_E).  The prediction column is
    W y + b_pred with y the masked stats vector, identical for every
    query position under uniform attention; the expectation runs over
    the label position's clean token.
    """
    tau = len(topic_set)
    stats = masked_distribution(mask_cfg, T, v, tau)
    y = masked_stats_vector(stats, topic_set, T, v, renormalize=renormalize)
    pred = W @ y + (b_pred if np.ndim(b_pred) else float(b_pred))
    p_lab = label_distribution(topic_set, T, v)
    # E_label ||pred - e_label||^2 = ||pred||^2 - 2 <p_lab, pred> + 1
    return float(pred @ pred - 2.0 * (p_lab @ pred) + 1.0)


def population_loss_gradient(
    W: np.ndarray,
    b_pred: np.ndarray | float,
    subsets: Sequence[Sequence[int]],
    mask_cfg: MaskingConfig,
    T: int,
    v: int,
    l2: float = 0.0,
) -> np.ndarray:
    """Gradient in W of the subset-averaged population loss (+ L2)."""
    V = T * v + 1
    grad = np.zeros((V, V))
    for S in subsets:
        stats = masked_distribution(mask_cfg, T, v, len(S))
        y = masked_stats_vector(stats, S, T, v)
        resid = W @ y + (b_pred if np.ndim(b_pred) else float(b_pred)) \
            - label_distribution(S, T, v)
        grad += 2.0 * np.outer(resid, y)
    grad /= len(subsets)
    if l2:
        grad += 2.0 * l2 * W
    return grad


def ridge_population_optimum(
    subsets: Sequence[Sequence[int]],
    mask_cfg: MaskingConfig,
    T: int,
    v: int,
    l2: float = 0.0,
    b_pred: np.ndarray | float = 0.0,
) -> np.ndarray:
    """Normal-equations solution of the subset-averaged population
    objective: W (M + l2 I) = B, with M the second moment of the stats
    vectors and B the label-stats cross moment.

    With ``l2`` zero, returns the minimum-Frobenius-norm minimizer via
    the pseudoinverse (the ridge limit as l2 -> 0+).
    """
    V = T * v + 1
    M = np.zeros((V, V))
    B = np.zeros((V, V))
    for S in subsets:
        stats = masked_distribution(mask_cfg, T, v, len(S))
        y = masked_stats_vector(stats, S, T, v)
        M += np.outer(y, y)
        target = label_distribution(S, T, v)
        if np.ndim(b_pred) or b_pred:
            target = target - b_pred
        B += np.outer(target, y)
    M /= len(subsets)
    B /= len(subsets)
    if l2 > 0.0:
        return B @ np.linalg.inv(M + l2 * np.eye(V))
    return B @ np.linalg.pinv(M, rcond=1e-12)


def save_loss_curve(path, rows: Sequence[tuple[int, float, float]]) -> None:
    """CSV of (step, data loss, l2 penalty); total column is their sum."""
    with open(path, "w") as fh:
        fh.write("step,loss,l2_penalty,total\n")
        for step, lv, pen in rows:
            fh.write(f"{step},{lv!r},{pen!r},{(lv + pen)!r}\n")
