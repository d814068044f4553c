"""BERT-style random masking and its closed-form token distribution.

Each position is selected for prediction independently with probability
``p_mask_select``.  A selected position keeps its token with probability
``p_keep``, is replaced by a uniform random word with probability
``p_random``, and is replaced by the mask token 0 otherwise.  Positions
not selected are left untouched and never predicted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import MASK_TOKEN, Document


@dataclass(frozen=True)
class MaskingConfig:
    """Masking probabilities.

    ``strict=True`` (the default) enforces the training-time ranges
    p_mask_select in (0,1), p_keep and p_random in [0,1) with
    p_keep + p_random < 1.  Pass ``strict=False`` for degenerate
    settings used in tests (for example p_mask_select = 0).
    """

    p_mask_select: float = 0.15
    p_keep: float = 0.1
    p_random: float = 0.1
    strict: bool = True

    def __post_init__(self):
        ok = (
            0.0 <= self.p_mask_select <= 1.0
            and 0.0 <= self.p_keep <= 1.0
            and 0.0 <= self.p_random <= 1.0
            and self.p_keep + self.p_random <= 1.0
        )
        if not ok:
            raise ValueError("masking probabilities out of range")
        if self.strict:
            if not (0.0 < self.p_mask_select < 1.0):
                raise ValueError("p_mask_select must lie in (0,1); "
                                 "pass strict=False to bypass")
            if self.p_keep + self.p_random >= 1.0:
                raise ValueError("need p_keep + p_random < 1 in strict mode")


@dataclass(frozen=True)
class MaskedDocument:
    """A document after masking.

    ``masked_tokens`` agrees with ``document.tokens`` outside
    ``positions``; inside it holds the kept / random / mask replacement.
    Token 0 can only ever appear at positions in ``positions``.
    """

    document: Document
    masked_tokens: np.ndarray
    positions: np.ndarray  # sorted indices selected for prediction
    resample_count: int = 0

    def __len__(self) -> int:
        return int(self.masked_tokens.shape[0])


@dataclass(frozen=True)
class MaskedStats:
    """Per-position distribution of the masked token, given the document
    covers topic set S with tau topics of v words each and in-document
    words are equally likely (the long-document limit).

    ``p_in`` is the probability of seeing a specific in-document word,
    ``p_out`` a specific out-of-document word, ``p_mask`` the mask token.
    """

    p_in: float
    p_out: float
    p_mask: float

    def check_normalized(self, T: int, v: int, tau: int, tol: float = 1e-12) -> bool:
        total = tau * v * self.p_in + (T - tau) * v * self.p_out + self.p_mask
        return abs(total - 1.0) <= tol


def masked_distribution(cfg: MaskingConfig, T: int, v: int, tau: int) -> MaskedStats:
    """Closed-form masked-token distribution in the long-document limit.

    A specific in-document word survives at a position if the position is
    unselected, or selected-and-kept, or selected-and-randomized onto it;
    out-of-document words can only arrive through randomization.
    """
    pm, pc, pr = cfg.p_mask_select, cfg.p_keep, cfg.p_random
    p_in = (1.0 - (1.0 - pc) * pm) / (tau * v) + pm * pr / (T * v)
    p_out = pm * pr / (T * v)
    p_mask = pm * (1.0 - pc - pr)
    return MaskedStats(p_in=p_in, p_out=p_out, p_mask=p_mask)


def mask_document(
    doc: Document,
    cfg: MaskingConfig,
    rng: np.random.Generator,
    n_words: int,
    max_resamples: int = 1000,
) -> MaskedDocument:
    """Mask one document.  ``n_words`` is the word vocabulary size T*v.

    If no position is selected the whole draw is retried with fresh
    randomness (the prediction loss needs a nonempty position set);
    ``resample_count`` records how many retries happened.  When
    ``p_mask_select`` is zero the empty selection is returned as-is.
    """
    n = len(doc)
    if cfg.p_mask_select == 0.0:
        return MaskedDocument(
            document=doc,
            masked_tokens=doc.tokens.copy(),
            positions=np.empty(0, dtype=np.int64),
            resample_count=0,
        )
    resamples = 0
    while True:
        selected = rng.random(n) < cfg.p_mask_select
        if selected.any():
            break
        resamples += 1
        if resamples > max_resamples:
            raise RuntimeError("mask selection kept coming up empty")
    positions = np.flatnonzero(selected)
    masked = doc.tokens.copy()
    u = rng.random(positions.shape[0])
    keep = u < cfg.p_keep
    randomize = (~keep) & (u < cfg.p_keep + cfg.p_random)
    to_mask = ~(keep | randomize)
    if randomize.any():
        masked[positions[randomize]] = rng.integers(1, n_words + 1, size=int(randomize.sum()))
    masked[positions[to_mask]] = MASK_TOKEN
    return MaskedDocument(
        document=doc,
        masked_tokens=masked,
        positions=positions.astype(np.int64),
        resample_count=resamples,
    )


# ---------------------------------------------------------------------------
# Masked-corpus files: pairs of lines (original, masked), blank-line separated.

def save_masked_corpus(path, mdocs, header: str | None = None) -> None:
    with open(path, "w") as fh:
        if header:
            fh.write(header.rstrip("\n") + "\n")
        for k, md in enumerate(mdocs):
            if k or header:
                fh.write("\n")
            fh.write(" ".join(str(int(t)) for t in md.document.tokens) + "\n")
            fh.write(" ".join(str(int(t)) for t in md.masked_tokens) + "\n")


def load_masked_corpus(path) -> list[tuple[np.ndarray, np.ndarray]]:
    """Return (original, masked) token-array pairs."""
    pairs: list[tuple[np.ndarray, np.ndarray]] = []
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if not ln.startswith("#")]
    block: list[str] = []
    for ln in lines + [""]:
        if ln:
            block.append(ln)
            continue
        if block:
            if len(block) != 2:
                raise ValueError("masked corpus blocks must hold exactly two lines")
            orig = np.array([int(x) for x in block[0].split()], dtype=np.int64)
            msk = np.array([int(x) for x in block[1].split()], dtype=np.int64)
            if orig.shape != msk.shape:
                raise ValueError("original and masked line lengths differ")
            pairs.append((orig, msk))
            block = []
    return pairs
