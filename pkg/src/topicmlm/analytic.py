"""Closed-form optima and bound constants for the uniform-attention and
structured-attention regimes.

All formulas are functions of the masking probabilities and the
vocabulary geometry (T topics, v words per topic).  Three base
constants recur:

    kWv1 = p_r / ((1-p_c-p_r) (1-(1-p_c) p_m) T v)
    kWv2 = 1 / ((1-p_c-p_r) p_m) - 1
    kWv3 = 1 / (1-(1-p_c) p_m)

The L2-limit optimum of the value matrix (one-hot embeddings, uniform
attention, squared loss) is block-constant: a zero mask row, a constant
column against the mask token, and two levels on the word block decided
by topic co-membership, with the same-topic level exceeding the
different-topic level by exactly kWv3 / v.

The unregularized minimizers form a family with one free scalar per
row: fixing row i's different-topic block sum to u_i * v forces the
own-topic block sum to u_i * v + kWv3 and the mask-column entry to
-kWv1 - kWv2 * u_i (for the Gram-matrix family the mask column is
-kWv2 * u_i because a bias absorbs the kWv1 part).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .corpus import topic_of
from .masking import MaskingConfig, masked_distribution


@dataclass(frozen=True)
class WvConstants:
    """The three recurring value-matrix constants."""

    k1: float
    k2: float
    k3: float


def wv_constants(cfg: MaskingConfig, T: int, v: int) -> WvConstants:
    pm, pc, pr = cfg.p_mask_select, cfg.p_keep, cfg.p_random
    if pm * (1.0 - pc - pr) == 0.0:
        raise ValueError("constants need p_mask_select > 0 and p_keep + p_random < 1")
    k1 = pr / ((1.0 - pc - pr) * (1.0 - (1.0 - pc) * pm) * T * v)
    k2 = 1.0 / ((1.0 - pc - pr) * pm) - 1.0
    k3 = 1.0 / (1.0 - (1.0 - pc) * pm)
    return WvConstants(k1=k1, k2=k2, k3=k3)


def optimal_wv_l2(cfg: MaskingConfig, T: int, v: int) -> np.ndarray:
    """The vanishing-L2 limit of the optimal value matrix, (Tv+1)^2."""
    k = wv_constants(cfg, T, v)
    n = T * v
    denom = k.k2 * k.k2 + n
    col0 = (k.k2 * k.k3 - k.k1 * n) / denom
    diff = -(k.k1 * k.k2 + k.k3) / denom
    same = diff + k.k3 / v
    W = np.full((n + 1, n + 1), diff)
    W[0, :] = 0.0
    W[1:, 0] = col0
    topics = topic_of(np.arange(1, n + 1), v)
    same_block = topics[:, None] == topics[None, :]
    W[1:, 1:][same_block] = same
    return W


def diagonal_wv(cfg: MaskingConfig, T: int, v: int) -> np.ndarray:
    """The diagonal value matrix used in the word-level attention regime:
    zero mask row, -kWv1 against the mask column, kWv3 on the word
    diagonal, zero elsewhere."""
    k = wv_constants(cfg, T, v)
    n = T * v
    W = np.zeros((n + 1, n + 1))
    W[1:, 0] = -k.k1
    W[np.arange(1, n + 1), np.arange(1, n + 1)] = k.k3
    return W


@dataclass(frozen=True)
class FamilyCheck:
    """Result of projecting a matrix onto the per-row optimum family."""

    max_residual: float
    u: np.ndarray  # best-fit free scalar per row
    is_member: bool


def check_family_membership(
    W: np.ndarray,
    cfg: MaskingConfig,
    T: int,
    v: int,
    tol: float = 1e-8,
    family: str = "value",
) -> FamilyCheck:
    """Least-squares fit of the per-row family constraints.

    For every word row i the constraints are linear in the free scalar
    u_i: each different-topic block sum equals u_i*v, the own-topic
    block sum equals u_i*v + kWv3, and the mask-column entry equals
    -kWv1 - kWv2*u_i ("value" family) or -kWv2*u_i ("gram" family,
    where a prediction bias absorbs the constant).  The mask row uses
    block sums u_0*v and mask entry -kWv2*u_0.  Reported is the largest
    constraint residual at the per-row least-squares u.
    """
    if family not in ("value", "gram"):
        raise ValueError(f"unknown family {family!r}")
    k = wv_constants(cfg, T, v)
    n = T * v
    if W.shape != (n + 1, n + 1):
        raise ValueError("matrix shape does not match T*v+1")
    block_sums = W[:, 1:].reshape(n + 1, T, v).sum(axis=2)  # row block sums
    topics = topic_of(np.arange(1, n + 1), v)
    u = np.zeros(n + 1)
    max_resid = 0.0
    offset = 0.0 if family == "gram" else k.k1
    for i in range(n + 1):
        # Constraint list: a_j * u_i = d_j
        a = []
        d = []
        for t in range(T):
            own = i >= 1 and topics[i - 1] == t + 1
            a.append(v)
            d.append(block_sums[i, t] - (k.k3 if own else 0.0))
        a.append(-k.k2)
        d.append(W[i, 0] + (offset if i >= 1 else 0.0))
        a = np.asarray(a)
        d = np.asarray(d)
        ui = float(a @ d / (a @ a))
        u[i] = ui
        max_resid = max(max_resid, float(np.abs(a * ui - d).max()))
    return FamilyCheck(max_residual=max_resid, u=u, is_member=max_resid <= tol)


# ---------------------------------------------------------------------------
# Gram-matrix optimum (trained embeddings, uniform attention).

def optimal_embedding_gram(cfg: MaskingConfig, T: int, v: int) -> tuple[np.ndarray, np.ndarray]:
    """The simplest Gram-matrix optimum and its prediction bias.

    Returns (E, b_pred) with E = kWv3 * I on word rows (the mask-row
    diagonal entry is zero: the family forces an all-zero mask row and a
    -kWv2*u_i mask column, and u_i = 0 here) and b_pred the constant
    word-row bias -p_m p_r kWv3 / (T v) with zero mask entry.
    """
    k = wv_constants(cfg, T, v)
    n = T * v
    E = k.k3 * np.eye(n + 1)
    E[0, 0] = 0.0
    b = np.full(n + 1, -cfg.p_mask_select * cfg.p_random * k.k3 / (T * v))
    b[0] = 0.0
    return E, b


def embedding_gram_realization(cfg: MaskingConfig, T: int, v: int) -> np.ndarray:
    """A concrete W_E with W_E^T W_E equal to the Gram optimum: scaled
    identity with a zeroed mask column."""
    k = wv_constants(cfg, T, v)
    n = T * v
    W_E = np.sqrt(k.k3) * np.eye(n + 1)
    W_E[0, 0] = 0.0
    return W_E


# ---------------------------------------------------------------------------
# Attention-level bounds for the structured-attention regimes.

@dataclass(frozen=True)
class AttentionBounds:
    """Containment bounds for optimal attention levels.

    Block case: the blended level gamma = ((v-1) alpha + beta) / v of
    the optimal pattern lies in (lambda1 * (tau-1), lambda2 * T).
    Diagonal case: the same-word level beta lies in
    (lambda3 * tau, lambda4 * T) and the same-topic level alpha stays
    below lambda5 * beta.
    """

    case: str
    lambda1: float | None = None
    lambda2: float | None = None
    lambda3: float | None = None
    lambda4: float | None = None
    lambda5: float | None = None
    interval: tuple[float, float] | None = None

    def to_json(self) -> dict:
        out = {"case": self.case}
        for name in ("lambda1", "lambda2", "lambda3", "lambda4", "lambda5"):
            val = getattr(self, name)
            if val is not None:
                out[name] = val
        if self.interval is not None:
            out["interval"] = [self.interval[0], self.interval[1]]
        return out


def _check_masking_regime(cfg: MaskingConfig) -> None:
    if not (cfg.p_mask_select < 0.5 and cfg.p_keep == cfg.p_random):
        warnings.warn(
            "attention bounds are derived for p_mask_select < 1/2 with "
            "p_keep == p_random; values outside that regime are extrapolation",
            stacklevel=3,
        )


def attention_bounds(cfg: MaskingConfig, T: int, v: int, tau: int,
                     case: str = "block") -> AttentionBounds:
    """Bound constants for the optimal attention levels."""
    pm, pc, pr = cfg.p_mask_select, cfg.p_keep, cfg.p_random
    _check_masking_regime(cfg)
    c4 = 1.0 - (1.0 - pc) * pm
    if case == "block":
        lam1 = (c4 + pm * pr) * (1.0 + (1.0 - pc) * pm) / (2.0 * c4)
        lam2 = 100.0 * (c4 / (pm * pr) + 1.0)
        return AttentionBounds(
            case="block", lambda1=lam1, lambda2=lam2,
            interval=(lam1 * (tau - 1), lam2 * T),
        )
    if case == "diagonal":
        if np.sqrt(v - 1.0) - 2.0 + (1.0 - pc) * pm <= 0:
            raise ValueError("diagonal bounds need sqrt(v-1) > 2 - (1-p_keep)p_mask_select")
        lam3 = (c4 + pm * pr) / 100.0 * v
        lam4 = float(c4 / (np.sqrt(v - 1.0) - 2.0 + (1.0 - pc) * pm)
                     * (1.0 - (1.0 - pc - pr) * pm) / (pm * pr) * v)
        lam5 = 1.0 / ((v - 1.0) * c4)
        return AttentionBounds(
            case="diagonal", lambda3=lam3, lambda4=lam4, lambda5=lam5,
            interval=(lam3 * tau, lam4 * T),
        )
    raise ValueError(f"unknown case {case!r}")


def save_bounds(path, bounds: AttentionBounds) -> None:
    with open(path, "w") as fh:
        json.dump(bounds.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")
