"""Synthetic topic-model corpora over a disjoint-topic vocabulary.

The vocabulary has T topics of v words each.  Word indices run from 1 to
T*v; index 0 is reserved for the mask token and never appears in a clean
document.  Word i belongs to topic ceil(i / v), so topics partition the
vocabulary into contiguous blocks.

Two document policies are supported:

* ``FixedTau``: each document draws ``tau`` distinct topics uniformly at
  random, then fills every position by picking one of those topics
  uniformly and a word inside it uniformly.
* ``Dirichlet``: each document draws a topic distribution from a
  symmetric Dirichlet over all T topics, then samples every position's
  topic from it (words uniform inside the topic).

Document length is either fixed or uniform over an integer range.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .rng import STREAM_CORPUS, stream_rng

MASK_TOKEN = 0


def topic_of(token: int | np.ndarray, v: int):
    """Topic index of a word token (1-based).  Token 0 has no topic."""
    arr = np.asarray(token)
    if np.any(arr < 1):
        raise ValueError("topic_of is defined for word tokens >= 1")
    out = -(-arr // v)
    return int(out) if arr.ndim == 0 else out


def topic_words(t: int, v: int) -> np.ndarray:
    """All word tokens of topic t (1-based), a contiguous block."""
    if t < 1:
        raise ValueError("topics are 1-based")
    return np.arange((t - 1) * v + 1, t * v + 1)


@dataclass(frozen=True)
class TopicModelConfig:
    """Generative settings for a corpus.

    ``policy`` is "fixed-tau" or "dirichlet".  For "fixed-tau", ``tau``
    in [1, T] topics per document; for "dirichlet", ``concentration`` is
    the symmetric Dirichlet parameter.  ``n_min``/``n_max`` bound the
    document length (set them equal for fixed length).
    """

    T: int
    v: int
    policy: str = "fixed-tau"
    tau: int = 2
    concentration: float = 0.1
    n_min: int = 100
    n_max: int = 150

    def __post_init__(self):
        if self.T < 1 or self.v < 1:
            raise ValueError("T and v must be positive")
        if self.policy not in ("fixed-tau", "dirichlet"):
            raise ValueError(f"unknown policy {self.policy!r}")
        if self.policy == "fixed-tau" and not (1 <= self.tau <= self.T):
            raise ValueError("tau must be in [1, T]")
        if self.policy == "dirichlet" and self.concentration <= 0:
            raise ValueError("concentration must be positive")
        if not (1 <= self.n_min <= self.n_max):
            raise ValueError("need 1 <= n_min <= n_max")

    @property
    def vocab_size(self) -> int:
        """Number of one-hot rows: T*v words plus the mask token row."""
        return self.T * self.v + 1


@dataclass(frozen=True)
class Document:
    """A clean (unmasked) document: word tokens plus its topic set."""

    tokens: np.ndarray
    topic_set: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "tokens", np.asarray(self.tokens, dtype=np.int64))

    def __len__(self) -> int:
        return int(self.tokens.shape[0])


def sample_document(cfg: TopicModelConfig, rng: np.random.Generator) -> Document:
    """Draw one document under ``cfg`` using ``rng``."""
    n = int(rng.integers(cfg.n_min, cfg.n_max + 1)) if cfg.n_min < cfg.n_max else cfg.n_min
    if cfg.policy == "fixed-tau":
        chosen = np.sort(rng.choice(cfg.T, size=cfg.tau, replace=False)) + 1
        pos_topics = chosen[rng.integers(0, cfg.tau, size=n)]
        topic_set = tuple(int(t) for t in chosen)
    else:
        theta = rng.dirichlet(np.full(cfg.T, cfg.concentration))
        pos_topics = rng.choice(cfg.T, size=n, p=theta) + 1
        topic_set = tuple(sorted(int(t) for t in np.unique(pos_topics)))
    words = rng.integers(1, cfg.v + 1, size=n)
    tokens = (pos_topics - 1) * cfg.v + words
    return Document(tokens=tokens, topic_set=topic_set)


def document_stream(cfg: TopicModelConfig, seed: int) -> Iterator[Document]:
    """Endless stream of fresh documents, deterministic in ``seed``."""
    rng = stream_rng(seed, STREAM_CORPUS)
    while True:
        yield sample_document(cfg, rng)


def one_hot_encode(tokens: Sequence[int] | np.ndarray, vocab_size: int) -> np.ndarray:
    """Column-per-position one-hot matrix, shape (vocab_size, n).

    Row 0 is the mask row; it is all zero for clean documents.
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.size and (tokens.min() < 0 or tokens.max() >= vocab_size):
        raise ValueError("token out of range for vocab_size")
    X = np.zeros((vocab_size, tokens.shape[0]))
    X[tokens, np.arange(tokens.shape[0])] = 1.0
    return X


def enumerate_topic_subsets(T: int, tau: int, cap: int = 10**6) -> list[tuple[int, ...]]:
    """All size-``tau`` topic subsets, in lexicographic order.

    Raises if the count C(T, tau) exceeds ``cap``; population oracles
    that need every subset should sample instead at that scale.
    """
    count = math.comb(T, tau)
    if count > cap:
        raise ValueError(
            f"C({T},{tau}) = {count} subsets exceeds cap {cap}; sample instead"
        )
    return [tuple(s) for s in itertools.combinations(range(1, T + 1), tau)]


def in_document_words(topic_set: Sequence[int], v: int) -> np.ndarray:
    """Word tokens covered by a topic set, ascending."""
    return np.concatenate([topic_words(t, v) for t in sorted(topic_set)])


# ---------------------------------------------------------------------------
# Plain-text corpus files: a comment header, then one document per line as
# space-separated token indices.

def save_corpus(path, docs: Sequence[Document], cfg: TopicModelConfig, seed: int) -> None:
    policy = cfg.policy
    with open(path, "w") as fh:
        fh.write(f"#T={cfg.T},v={cfg.v},policy={policy},seed={seed}\n")
        for doc in docs:
            fh.write(" ".join(str(int(t)) for t in doc.tokens))
            fh.write("\n")


def load_corpus(path) -> tuple[list[Document], dict]:
    """Read a corpus file; topic sets are reconstructed from the tokens."""
    meta: dict = {}
    docs: list[Document] = []
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.startswith("#"):
            raise ValueError("corpus file missing #-header line")
        for part in header[1:].split(","):
            k, _, val = part.partition("=")
            meta[k] = val
        v = int(meta["v"])
        for line in fh:
            line = line.strip()
            if not line:
                continue
            tokens = np.array([int(x) for x in line.split()], dtype=np.int64)
            tset = tuple(sorted(int(t) for t in np.unique(-(-tokens // v))))
            docs.append(Document(tokens=tokens, topic_set=tset))
    meta["T"] = int(meta["T"])
    meta["v"] = v
    if "seed" in meta:
        meta["seed"] = int(meta["seed"])
    return docs, meta
