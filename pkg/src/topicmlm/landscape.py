"""Loss landscape over attention levels for a frozen value matrix.

The attention pattern has three levels decided by the source and query
tokens: ``beta`` for the same word, ``alpha`` for a different word of
the same topic, and a base level 1 for different topics.  Mask-token
sources receive no attention, and each query column is normalized, so
the base level is fixed by normalization and only (alpha, beta) vary.

Two frozen value matrices are studied.  The "block" case uses the
block-constant optimum of the uniform-attention regime, whose
predictions depend on attention only through per-topic mass, so the
loss depends on (alpha, beta) only through the blend
gamma = ((v-1) alpha + beta) / v.  The "diagonal" case uses the
diagonal matrix, whose predictions resolve individual words.

``exact_loss_block`` and ``exact_loss_diagonal`` evaluate the exact
population case sums in the long-document limit: the query position
cases are split by what the masked query token is (kept / same-topic
replacement / other replacement, and for the diagonal case whether a
replacement hits the original word), each case weighted by its
probability conditional on the position being selected, with the loss
counted only when the query token is not the mask token.

The Monte Carlo oracle draws finite documents, masks them, injects the
three-level attention pattern directly, applies the literal value
matrix, and averages the squared error over masked positions.  Samples
are drawn once and shared across grid cells.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .analytic import attention_bounds, diagonal_wv, optimal_wv_l2, wv_constants
from .corpus import TopicModelConfig, sample_document
from .masking import MaskingConfig, mask_document, masked_distribution
from .rng import STREAM_LANDSCAPE, stream_rng


@dataclass(frozen=True)
class AttentionLevels:
    """Unnormalized attention levels; the different-topic base level is
    1 and per-column normalization fixes the shared scale, so only the
    ratios matter."""

    alpha: float
    beta: float

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("attention levels must be positive")

    def blended(self, v: int) -> float:
        return blend_gamma(self.alpha, self.beta, v)


def blend_gamma(alpha: float, beta: float, v: int) -> float:
    """Per-topic blended level ((v-1) alpha + beta) / v."""
    return ((v - 1) * alpha + beta) / v


@dataclass(frozen=True)
class LandscapePoint:
    alpha: float
    beta: float
    gamma: float
    z1: float
    z2: float
    p_in: float
    p_out: float
    exact_loss: float
    mc_loss: float | None = None
    mc_se: float | None = None


def _q(x, k3: float, pm: float, pr: float, T: int, v: int):
    return k3 * x - pm * pr * k3 / (T * v)


def _z_values(alpha: float, beta: float, p1: float, p2: float,
              T: int, v: int, tau: int) -> tuple[float, float]:
    z1 = beta * p1 + alpha * p1 * (v - 1) + p1 * v * (tau - 1) + p2 * v * (T - tau)
    z2 = beta * p2 + alpha * p2 * (v - 1) + p1 * v * tau + p2 * v * (T - tau - 1)
    return z1, z2


def exact_loss_block(alpha: float, beta: float, mask_cfg: MaskingConfig,
                     T: int, v: int, tau: int) -> float:
    """Exact population loss for the block value matrix."""
    pm, pc, pr = mask_cfg.p_mask_select, mask_cfg.p_keep, mask_cfg.p_random
    stats = masked_distribution(mask_cfg, T, v, tau)
    p1, p2 = stats.p_in, stats.p_out
    k3 = wv_constants(mask_cfg, T, v).k3
    z1, z2 = _z_values(alpha, beta, p1, p2, T, v, tau)
    gamma = blend_gamma(alpha, beta, v)

    def q(x):
        return _q(x, k3, pm, pr, T, v)

    total = 0.0
    # query token keeps (or is replaced within) the label's topic
    w1 = pc + pr / T
    t1 = (1.0 - q(p1 * gamma / z1)) ** 2 \
        + (v - 1) * q(p1 * gamma / z1) ** 2 \
        + v * (tau - 1) * q(p1 / z1) ** 2 \
        + v * (T - tau) * q(p2 / z1) ** 2
    total += w1 * t1
    # replacement into a different in-document topic
    if tau > 1:
        w2 = pr * (tau - 1) / T
        t2 = (1.0 - q(p1 / z1)) ** 2 \
            + v * q(p1 * gamma / z1) ** 2 \
            + (v * (tau - 1) - 1) * q(p1 / z1) ** 2 \
            + v * (T - tau) * q(p2 / z1) ** 2
        total += w2 * t2
    # replacement into an out-of-document topic
    if T > tau:
        w3 = pr * (1.0 - tau / T)
        t3 = (1.0 - q(p1 / z2)) ** 2 \
            + (v * tau - 1) * q(p1 / z2) ** 2 \
            + v * q(p2 * gamma / z2) ** 2 \
            + v * (T - tau - 1) * q(p2 / z2) ** 2
        total += w3 * t3
    return total


def exact_loss_diagonal(alpha: float, beta: float, mask_cfg: MaskingConfig,
                        T: int, v: int, tau: int) -> float:
    """Exact population loss for the diagonal value matrix."""
    pm, pc, pr = mask_cfg.p_mask_select, mask_cfg.p_keep, mask_cfg.p_random
    stats = masked_distribution(mask_cfg, T, v, tau)
    p1, p2 = stats.p_in, stats.p_out
    k3 = wv_constants(mask_cfg, T, v).k3
    z1, z2 = _z_values(alpha, beta, p1, p2, T, v, tau)

    def q(x):
        return _q(x, k3, pm, pr, T, v)

    total = 0.0
    # query token is the label word itself (kept, or random hit)
    w1 = pc + pr / (v * T)
    t1 = (1.0 - q(p1 * beta / z1)) ** 2 \
        + (v - 1) * q(p1 * alpha / z1) ** 2 \
        + v * (tau - 1) * q(p1 / z1) ** 2 \
        + v * (T - tau) * q(p2 / z1) ** 2
    total += w1 * t1
    # replacement: another word of the label's topic
    if v > 1:
        w2 = (pr / T) * (1.0 - 1.0 / v)
        t2 = (1.0 - q(p1 * alpha / z1)) ** 2 \
            + q(p1 * beta / z1) ** 2 \
            + (v - 2) * q(p1 * alpha / z1) ** 2 \
            + v * (tau - 1) * q(p1 / z1) ** 2 \
            + v * (T - tau) * q(p2 / z1) ** 2
        total += w2 * t2
    # replacement into a different in-document topic
    if tau > 1:
        w3 = pr * (tau - 1) / T
        t3 = (1.0 - q(p1 / z1)) ** 2 \
            + q(p1 * beta / z1) ** 2 \
            + (v - 1) * q(p1 * alpha / z1) ** 2 \
            + (v * (tau - 1) - 1) * q(p1 / z1) ** 2 \
            + v * (T - tau) * q(p2 / z1) ** 2
        total += w3 * t3
    # replacement into an out-of-document topic
    if T > tau:
        w4 = pr * (1.0 - tau / T)
        t4 = (1.0 - q(p1 / z2)) ** 2 \
            + (v * tau - 1) * q(p1 / z2) ** 2 \
            + q(p2 * beta / z2) ** 2 \
            + (v - 1) * q(p2 * alpha / z2) ** 2 \
            + v * (T - tau - 1) * q(p2 / z2) ** 2
        total += w4 * t4
    return total


def landscape_point(case: str, alpha: float, beta: float,
                    mask_cfg: MaskingConfig, T: int, v: int, tau: int,
                    mc_loss: float | None = None,
                    mc_se: float | None = None) -> LandscapePoint:
    stats = masked_distribution(mask_cfg, T, v, tau)
    z1, z2 = _z_values(alpha, beta, stats.p_in, stats.p_out, T, v, tau)
    fn = exact_loss_block if case == "block" else exact_loss_diagonal
    return LandscapePoint(
        alpha=alpha, beta=beta, gamma=blend_gamma(alpha, beta, v),
        z1=z1, z2=z2, p_in=stats.p_in, p_out=stats.p_out,
        exact_loss=fn(alpha, beta, mask_cfg, T, v, tau),
        mc_loss=mc_loss, mc_se=mc_se,
    )


# ---------------------------------------------------------------------------
# Monte Carlo oracle on finite masked documents, shared across cells.

@dataclass
class McSample:
    """Per-masked-position features extracted once from sampled docs.

    A position with a mask-token query contributes zero loss but stays
    in the denominator (the exact loss is conditional on selection, not
    on the replacement kind).
    """

    T: int
    v: int
    n_positions: int
    is_word_query: np.ndarray  # bool per position
    n_sw: np.ndarray           # same-word source count (incl. self)
    cnt_qtopic: np.ndarray     # word-source count of the query topic
    sum_cnt: np.ndarray        # total word-source count of the doc
    sumsq_topic: np.ndarray    # sum over topics of squared counts
    sumsq_word: np.ndarray     # sum over words of squared counts
    sumsq_word_qtopic: np.ndarray  # same, restricted to the query topic
    label_count: np.ndarray    # sources carrying the label token
    cnt_ltopic: np.ndarray     # word-source count of the label topic
    label_same_word: np.ndarray    # label token == query token
    label_same_topic: np.ndarray   # same topic, different word


def sample_mc(mask_cfg: MaskingConfig, T: int, v: int, tau: int,
              n_positions: int = 10_000, doc_len: int = 2000,
              seed: int = 0) -> McSample:
    """Draw fixed-tau documents and masks until ``n_positions`` masked
    positions are collected; extract the count features every cell needs."""
    tm = TopicModelConfig(T=T, v=v, policy="fixed-tau", tau=tau,
                          n_min=doc_len, n_max=doc_len)
    rng = stream_rng(seed, STREAM_LANDSCAPE)
    cols: dict[str, list] = {k: [] for k in (
        "is_word_query", "n_sw", "cnt_qtopic", "sum_cnt", "sumsq_topic",
        "sumsq_word", "sumsq_word_qtopic", "label_count", "cnt_ltopic",
        "label_same_word", "label_same_topic")}
    got = 0
    while got < n_positions:
        doc = sample_document(tm, rng)
        md = mask_document(doc, mask_cfg, rng, T * v)
        toks = md.masked_tokens
        word_counts = np.bincount(toks, minlength=T * v + 1).astype(np.int64)
        word_counts[0] = 0
        topic_counts = word_counts[1:].reshape(T, v).sum(axis=1)
        sumsq_topic = float((topic_counts.astype(float) ** 2).sum())
        sumsq_word = float((word_counts[1:].astype(float) ** 2).sum())
        sumsq_word_by_topic = (word_counts[1:].reshape(T, v).astype(float) ** 2).sum(axis=1)
        sum_cnt = float(topic_counts.sum())
        take = md.positions[: n_positions - got] if got + len(md.positions) > n_positions \
            else md.positions
        for j in take:
            qtok = int(toks[j])
            lab = int(doc.tokens[j])
            ltop = (lab - 1) // v
            if qtok == 0:
                cols["is_word_query"].append(False)
                cols["n_sw"].append(0.0)
                cols["cnt_qtopic"].append(0.0)
                cols["sumsq_word_qtopic"].append(0.0)
                cols["label_same_word"].append(False)
                cols["label_same_topic"].append(False)
            else:
                qtop = (qtok - 1) // v
                cols["is_word_query"].append(True)
                cols["n_sw"].append(float(word_counts[qtok]))
                cols["cnt_qtopic"].append(float(topic_counts[qtop]))
                cols["sumsq_word_qtopic"].append(float(sumsq_word_by_topic[qtop]))
                cols["label_same_word"].append(lab == qtok)
                cols["label_same_topic"].append(ltop == qtop and lab != qtok)
            cols["sum_cnt"].append(sum_cnt)
            cols["sumsq_topic"].append(sumsq_topic)
            cols["sumsq_word"].append(sumsq_word)
            cols["label_count"].append(float(word_counts[lab]))
            cols["cnt_ltopic"].append(float(topic_counts[ltop]))
        got += len(take)
    return McSample(
        T=T, v=v, n_positions=n_positions,
        is_word_query=np.array(cols["is_word_query"]),
        n_sw=np.array(cols["n_sw"]),
        cnt_qtopic=np.array(cols["cnt_qtopic"]),
        sum_cnt=np.array(cols["sum_cnt"]),
        sumsq_topic=np.array(cols["sumsq_topic"]),
        sumsq_word=np.array(cols["sumsq_word"]),
        sumsq_word_qtopic=np.array(cols["sumsq_word_qtopic"]),
        label_count=np.array(cols["label_count"]),
        cnt_ltopic=np.array(cols["cnt_ltopic"]),
        label_same_word=np.array(cols["label_same_word"]),
        label_same_topic=np.array(cols["label_same_topic"]),
    )


def mc_loss(sample: McSample, case: str, alpha: float, beta: float,
            mask_cfg: MaskingConfig) -> tuple[float, float]:
    """Monte Carlo (mean, standard error) of the landscape loss at one
    cell, applying the literal frozen value matrix to the injected
    attention pattern.

    Mask-token queries contribute exactly zero, and the chance that a
    selected position is not replaced by the mask token is known in
    closed form (p_keep + p_random), so that factor is applied
    analytically and the sampling error comes only from the loss
    conditional on a word query.  The estimator stays unbiased for the
    unconditional per-selected-position loss; the reported standard
    error is the conditional one scaled by the same factor."""
    T, v = sample.T, sample.v
    k = wv_constants(mask_cfg, T, v)
    w = sample.is_word_query
    n_sw = sample.n_sw[w]
    cnt_q = sample.cnt_qtopic[w]
    m_q = beta * n_sw + alpha * (cnt_q - n_sw)
    z = sample.sum_cnt[w] - cnt_q + m_q
    lab_cnt = sample.label_count[w]
    lab_sw = sample.label_same_word[w]
    lab_st = sample.label_same_topic[w]

    if case == "block":
        n = T * v
        denom = k.k2 * k.k2 + n
        diff = -(k.k1 * k.k2 + k.k3) / denom
        s_sumsq = (sample.sumsq_topic[w] - cnt_q ** 2 + m_q ** 2) / z ** 2
        pred_sumsq = v * (T * diff * diff + 2.0 * diff * (k.k3 / v)
                          + (k.k3 / v) ** 2 * s_sumsq)
        cnt_l = sample.cnt_ltopic[w]
        m_l = np.where(lab_sw | lab_st, m_q, cnt_l)
        pred_label = diff + (k.k3 / v) * m_l / z
        losses = pred_sumsq - 2.0 * pred_label + 1.0
    elif case == "diagonal":
        sq_q = sample.sumsq_word_qtopic[w]
        mass_sumsq = sample.sumsq_word[w] - sq_q \
            + alpha * alpha * (sq_q - n_sw ** 2) + beta * beta * n_sw ** 2
        pred_sumsq = k.k3 ** 2 * mass_sumsq / z ** 2
        level = np.where(lab_sw, beta, np.where(lab_st, alpha, 1.0))
        pred_label = k.k3 * level * lab_cnt / z
        losses = pred_sumsq - 2.0 * pred_label + 1.0
    else:
        raise ValueError(f"unknown case {case!r}")
    word_prob = mask_cfg.p_keep + mask_cfg.p_random
    mean = word_prob * float(losses.mean())
    se = word_prob * float(losses.std(ddof=1) / np.sqrt(losses.shape[0]))
    return mean, se


# ---------------------------------------------------------------------------
# Grid sweep, exports, and the containment summary.

@dataclass
class LandscapeGrid:
    case: str
    T: int
    v: int
    tau: int
    alphas: np.ndarray
    betas: np.ndarray
    points: list[LandscapePoint]

    def argmin(self) -> LandscapePoint:
        return min(self.points, key=lambda p: p.exact_loss)


def default_grid(lo: float = 1e-4, hi: float = 1e7, n: int = 50) -> np.ndarray:
    """Logarithmically spaced levels covering [lo, hi]."""
    return np.logspace(np.log10(lo), np.log10(hi), n)


def sweep(case: str, mask_cfg: MaskingConfig, T: int, v: int, tau: int,
          alphas: np.ndarray | None = None, betas: np.ndarray | None = None,
          mc_cells: list[tuple[int, int]] | None = None,
          mc_sample: McSample | None = None) -> LandscapeGrid:
    """Evaluate the exact loss on the (alpha, beta) grid, row-major with
    alpha as the outer axis.  ``mc_cells`` lists (alpha_idx, beta_idx)
    cells to also estimate with the Monte Carlo oracle."""
    if case not in ("block", "diagonal"):
        raise ValueError(f"unknown case {case!r}")
    alphas = default_grid() if alphas is None else np.asarray(alphas, dtype=float)
    betas = default_grid() if betas is None else np.asarray(betas, dtype=float)
    wanted = set(mc_cells or [])
    if wanted and mc_sample is None:
        raise ValueError("mc_cells given without an mc_sample")
    points: list[LandscapePoint] = []
    for i, a in enumerate(alphas):
        for j, b in enumerate(betas):
            ml = mse = None
            if (i, j) in wanted:
                ml, mse = mc_loss(mc_sample, case, a, b, mask_cfg)
            points.append(landscape_point(case, float(a), float(b),
                                          mask_cfg, T, v, tau, ml, mse))
    return LandscapeGrid(case=case, T=T, v=v, tau=tau,
                         alphas=alphas, betas=betas, points=points)


def containment_check(grid: LandscapeGrid, mask_cfg: MaskingConfig) -> dict:
    """Argmin of the sweep and whether it falls in the proved bounds."""
    best = grid.argmin()
    if grid.case == "block":
        bounds = attention_bounds(mask_cfg, grid.T, grid.v, grid.tau, "block")
        lo, hi = bounds.interval
        ok = lo < best.gamma < hi
    else:
        bounds = attention_bounds(mask_cfg, grid.T, grid.v, grid.tau, "diagonal")
        lo, hi = bounds.interval
        ok = (lo < best.beta < hi) and (best.alpha < bounds.lambda5 * best.beta)
    return {
        "argmin": {"alpha": best.alpha, "beta": best.beta,
                   "gamma": best.gamma, "loss": best.exact_loss},
        "bounds_check": "pass" if ok else "fail",
    }


def save_grid_csv(path, grid: LandscapeGrid) -> None:
    has_mc = any(p.mc_loss is not None for p in grid.points)
    with open(path, "w") as fh:
        fh.write("alpha,beta,gamma,exact_loss")
        if has_mc:
            fh.write(",mc_loss,mc_se")
        fh.write("\n")
        for p in grid.points:
            fh.write(f"{p.alpha!r},{p.beta!r},{p.gamma!r},{p.exact_loss!r}")
            if has_mc:
                if p.mc_loss is None:
                    fh.write(",,")
                else:
                    fh.write(f",{p.mc_loss!r},{p.mc_se!r}")
            fh.write("\n")


def save_summary_json(path, grid: LandscapeGrid, mask_cfg: MaskingConfig) -> None:
    with open(path, "w") as fh:
        json.dump(containment_check(grid, mask_cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")
