"""Single-layer attention model for masked token prediction.

The model scores every position of a masked document against the full
vocabulary:

    logits = W_E^T (W_V Z + b_V 1^T) A + b_pred 1^T,   Z = W_E X

where X is the one-hot encoding of the masked tokens, A is column-wise
softmax attention built from W_K, W_Q (with optional biases), and W_E is
either a trainable d x vocab matrix or the frozen identity ("one-hot"
mode).  There is no residual path, layer norm, positional encoding, or
second head; the embedding matrix is shared between input and output
(weight tying), and gradients account for both roles.

``forward`` consumes raw token arrays; one-hot algebra is done with
column gathers and scatter-adds instead of dense multiplications where
that is exact.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Iterable

import numpy as np

TENSOR_ORDER = ("W_E", "W_K", "W_Q", "W_V", "b_K", "b_Q", "b_V", "b_pred")


class NonFiniteError(RuntimeError):
    """Raised when attention scores or logits stop being finite."""

    def __init__(self, message: str, column: int | None = None):
        super().__init__(message)
        self.column = column


@dataclass
class ModelParams:
    """Parameter set plus structural flags.

    ``embedding_mode`` is "one-hot" (W_E frozen identity, d = vocab) or
    "trained".  ``frozen`` names tensors excluded from updates; absent
    biases are stored as None.
    """

    W_E: np.ndarray
    W_K: np.ndarray
    W_Q: np.ndarray
    W_V: np.ndarray
    b_K: np.ndarray | None
    b_Q: np.ndarray | None
    b_V: np.ndarray | None
    b_pred: np.ndarray
    embedding_mode: str = "trained"
    frozen: frozenset[str] = frozenset()

    def __post_init__(self):
        if self.embedding_mode not in ("one-hot", "trained"):
            raise ValueError(f"unknown embedding mode {self.embedding_mode!r}")
        if self.embedding_mode == "one-hot":
            self.frozen = frozenset(self.frozen) | {"W_E"}
        d, V = self.W_E.shape
        if self.W_V.shape != (d, d):
            raise ValueError("W_V must be d x d")
        if self.W_K.shape[1] != d or self.W_Q.shape != self.W_K.shape:
            raise ValueError("W_K and W_Q must be d_attn x d with equal shapes")
        if self.b_pred.shape != (V,):
            raise ValueError("b_pred must have one entry per vocab row")

    @property
    def d(self) -> int:
        return self.W_E.shape[0]

    @property
    def d_attn(self) -> int:
        return self.W_K.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.W_E.shape[1]

    def tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for name in TENSOR_ORDER:
            arr = getattr(self, name)
            if arr is not None:
                out[name] = arr
        return out

    def trainable(self) -> list[str]:
        return [n for n in self.tensors() if n not in self.frozen]

    def copy(self) -> "ModelParams":
        kw = {n: (None if t is None else t.copy()) for n, t in
              ((name, getattr(self, name)) for name in TENSOR_ORDER)}
        return ModelParams(embedding_mode=self.embedding_mode,
                           frozen=frozenset(self.frozen), **kw)

    def uniform_attention(self) -> bool:
        """True when attention is structurally uniform: W_K and W_Q are
        frozen at zero and the attention biases are absent or zero."""
        if not ({"W_K", "W_Q"} <= self.frozen):
            return False
        if np.any(self.W_K) or np.any(self.W_Q):
            return False
        for b in (self.b_K, self.b_Q):
            if b is not None and np.any(b):
                return False
        return True


def init_params(
    vocab_size: int,
    d: int | None = None,
    d_attn: int | None = None,
    embedding_mode: str = "trained",
    biases: bool = True,
    sigma0: float = 0.1,
    rng: np.random.Generator | None = None,
    frozen: Iterable[str] = (),
) -> ModelParams:
    """Draw initial parameters with entries uniform in [-sigma0, sigma0].

    Biases and b_pred start at zero.  In one-hot mode d is forced to the
    vocab size and W_E is the identity.
    """
    if embedding_mode == "one-hot":
        d = vocab_size
    elif d is None:
        d = vocab_size
    if d_attn is None:
        d_attn = d
    if rng is None:
        rng = np.random.default_rng(0)

    def draw(shape):
        return rng.uniform(-sigma0, sigma0, size=shape)

    W_E = np.eye(vocab_size) if embedding_mode == "one-hot" else draw((d, vocab_size))
    params = ModelParams(
        W_E=W_E,
        W_K=draw((d_attn, d)),
        W_Q=draw((d_attn, d)),
        W_V=draw((d, d)),
        b_K=np.zeros(d_attn) if biases else None,
        b_Q=np.zeros(d_attn) if biases else None,
        b_V=np.zeros(d) if biases else None,
        b_pred=np.zeros(vocab_size),
        embedding_mode=embedding_mode,
        frozen=frozenset(frozen),
    )
    return params


def softmax_columns(S: np.ndarray) -> np.ndarray:
    """Column-wise softmax with per-column max subtraction."""
    shifted = S - S.max(axis=0, keepdims=True)
    E = np.exp(shifted)
    return E / E.sum(axis=0, keepdims=True)


@dataclass
class ForwardTrace:
    """Intermediates cached by ``forward`` for the matching ``backward``.

    When ``uniform`` is set the attention block was skipped because the
    parameters force exactly uniform attention; K/Q/S/A stay None and
    ``c_bar`` holds the shared value-aggregate column.
    """

    tokens: np.ndarray
    Z: np.ndarray | None
    K: np.ndarray | None
    Q: np.ndarray | None
    S: np.ndarray | None
    A: np.ndarray | None
    Vv: np.ndarray | None
    C: np.ndarray
    logits: np.ndarray
    uniform: bool
    c_bar: np.ndarray | None = None

    @property
    def n(self) -> int:
        return int(self.tokens.shape[0])


def _gather(W: np.ndarray, tokens: np.ndarray) -> np.ndarray:
    """W @ X for one-hot X given by tokens: a column gather."""
    return W[:, tokens]


def _scatter_cols(M: np.ndarray, tokens: np.ndarray, width: int) -> np.ndarray:
    """M @ X^T for one-hot X given by tokens: scatter-add of columns."""
    outT = np.zeros((width, M.shape[0]))
    np.add.at(outT, tokens, M.T)
    return outT.T


def attention_weights(params: ModelParams, tokens: np.ndarray) -> np.ndarray:
    """Column-stochastic attention matrix A for a masked document."""
    tokens = np.asarray(tokens, dtype=np.int64)
    n = tokens.shape[0]
    if params.uniform_attention():
        return np.full((n, n), 1.0 / n)
    Z = _gather(params.W_E, tokens)
    K = params.W_K @ Z
    Q = params.W_Q @ Z
    if params.b_K is not None:
        K = K + params.b_K[:, None]
    if params.b_Q is not None:
        Q = Q + params.b_Q[:, None]
    S = (K.T @ Q) / np.sqrt(params.d_attn)
    if not np.all(np.isfinite(S)):
        bad = int(np.argwhere(~np.isfinite(S))[0][1])
        raise NonFiniteError(f"non-finite attention score in column {bad}", column=bad)
    A = softmax_columns(S)
    colsum_err = np.abs(A.sum(axis=0) - 1.0).max()
    if colsum_err > 1e-12:
        raise NonFiniteError(f"attention columns do not normalize (err {colsum_err:g})")
    return A


def forward(params: ModelParams, tokens: np.ndarray) -> ForwardTrace:
    """Run the model on a masked token sequence; returns all intermediates.

    Raises NonFiniteError when scores or logits leave the finite range.
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    n = tokens.shape[0]
    if n == 0:
        raise ValueError("empty document")
    one_hot = params.embedding_mode == "one-hot"
    Z = None if one_hot else _gather(params.W_E, tokens)

    if params.uniform_attention():
        # A is exactly the constant 1/n matrix; aggregate once.
        if one_hot:
            v_bar = np.bincount(tokens, minlength=params.vocab_size) / n
            c_bar = params.W_V @ v_bar
        else:
            z_bar = Z.mean(axis=1)
            c_bar = params.W_V @ z_bar
        if params.b_V is not None:
            c_bar = c_bar + params.b_V
        # every column is identical: expose read-only broadcast views
        C = np.broadcast_to(c_bar[:, None], (c_bar.shape[0], n))
        pred_col = c_bar if one_hot else params.W_E.T @ c_bar
        logit_col = pred_col + params.b_pred
        if not np.all(np.isfinite(logit_col)):
            raise NonFiniteError("non-finite logits in column 0", column=0)
        logits = np.broadcast_to(logit_col[:, None], (params.vocab_size, n))
        return ForwardTrace(tokens=tokens, Z=Z, K=None, Q=None, S=None, A=None,
                            Vv=None, C=C, logits=logits, uniform=True, c_bar=c_bar)

    if one_hot:
        K = _gather(params.W_K, tokens)
        Q = _gather(params.W_Q, tokens)
        Vv = _gather(params.W_V, tokens)
    else:
        K = params.W_K @ Z
        Q = params.W_Q @ Z
        Vv = params.W_V @ Z
    if params.b_K is not None:
        K = K + params.b_K[:, None]
    if params.b_Q is not None:
        Q = Q + params.b_Q[:, None]
    if params.b_V is not None:
        Vv = Vv + params.b_V[:, None]
    S = (K.T @ Q) / np.sqrt(params.d_attn)
    if not np.all(np.isfinite(S)):
        bad = int(np.argwhere(~np.isfinite(S))[0][1])
        raise NonFiniteError(f"non-finite attention score in column {bad}", column=bad)
    A = softmax_columns(S)
    C = Vv @ A
    logits = C + params.b_pred[:, None] if one_hot else params.W_E.T @ C + params.b_pred[:, None]
    if not np.all(np.isfinite(logits)):
        bad = int(np.argwhere(~np.isfinite(logits))[0][1])
        raise NonFiniteError(f"non-finite logits in column {bad}", column=bad)
    return ForwardTrace(tokens=tokens, Z=Z, K=K, Q=Q, S=S, A=A, Vv=Vv, C=C,
                        logits=logits, uniform=False)


def backward(params: ModelParams, trace: ForwardTrace,
             dlogits: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss with given dlogits, for trainable tensors.

    Handles the softmax Jacobian and the two roles of W_E (input
    embedding and tied output projection).  Frozen tensors are omitted
    from the result.
    """
    one_hot = params.embedding_mode == "one-hot"
    tokens = trace.tokens
    n = trace.n
    V = params.vocab_size
    G = dlogits
    grads: dict[str, np.ndarray] = {}
    want = set(params.trainable())

    if trace.uniform:
        # A = 1/n everywhere and every C column equals c_bar, so only
        # the column sum of G survives in each gradient.  A 1-D dlogits
        # is accepted as that sum (masked_loss_and_grad_shared).
        gsum = G if G.ndim == 1 else G.sum(axis=1)
        if "b_pred" in want:
            grads["b_pred"] = gsum
        w = gsum if one_hot else params.W_E @ gsum
        if one_hot:
            v_bar = np.bincount(tokens, minlength=V) / n
            if "W_V" in want:
                grads["W_V"] = np.outer(w, v_bar)
        else:
            z_bar = trace.Z.mean(axis=1)
            if "W_V" in want:
                grads["W_V"] = np.outer(w, z_bar)
        if params.b_V is not None and "b_V" in want:
            grads["b_V"] = w
        if not one_hot and "W_E" in want:
            dZ_col = (params.W_V.T @ w) / n  # same for every position
            counts = np.bincount(tokens, minlength=V).astype(float)
            demb = np.outer(dZ_col, counts)
            dpred = np.outer(np.asarray(trace.c_bar), gsum)  # C @ G.T role
            grads["W_E"] = dpred + demb
        return grads

    if "b_pred" in want:
        grads["b_pred"] = G.sum(axis=1)

    dC = G if one_hot else params.W_E @ G

    A, S, K, Q, Vv = trace.A, trace.S, trace.K, trace.Q, trace.Vv
    dVv = dC @ A.T
    dA = Vv.T @ dC
    # softmax Jacobian, column-wise
    AdA = A * dA
    dS = AdA - A * AdA.sum(axis=0, keepdims=True)
    scale = 1.0 / np.sqrt(params.d_attn)
    dK = (Q @ dS.T) * scale
    dQ = (K @ dS) * scale

    if "W_V" in want:
        grads["W_V"] = _scatter_cols(dVv, tokens, V) if one_hot else dVv @ trace.Z.T
    if params.b_V is not None and "b_V" in want:
        grads["b_V"] = dVv.sum(axis=1)
    if "W_K" in want:
        grads["W_K"] = _scatter_cols(dK, tokens, V) if one_hot else dK @ trace.Z.T
    if params.b_K is not None and "b_K" in want:
        grads["b_K"] = dK.sum(axis=1)
    if "W_Q" in want:
        grads["W_Q"] = _scatter_cols(dQ, tokens, V) if one_hot else dQ @ trace.Z.T
    if params.b_Q is not None and "b_Q" in want:
        grads["b_Q"] = dQ.sum(axis=1)
    if not one_hot and "W_E" in want:
        dZ = params.W_V.T @ dVv + params.W_K.T @ dK + params.W_Q.T @ dQ
        demb = _scatter_cols(dZ, tokens, V)
        dpred = trace.C @ G.T
        grads["W_E"] = dpred + demb
    return grads


# ---------------------------------------------------------------------------
# Checkpoints: one plain-text file per tensor plus a JSON manifest.

def save_checkpoint(directory, params: ModelParams, seed: int | None = None,
                    extra: dict | None = None) -> None:
    os.makedirs(directory, exist_ok=True)
    names = []
    for name, arr in params.tensors().items():
        names.append(name)
        mat = np.atleast_2d(arr if arr.ndim == 2 else arr[:, None])
        path = os.path.join(directory, f"{name}.txt")
        with open(path, "w") as fh:
            fh.write(f"#{mat.shape[0]},{mat.shape[1]},{name}\n")
            for row in mat:
                fh.write(" ".join(repr(float(x)) for x in row))
                fh.write("\n")
    manifest = {
        "tensors": names,
        "frozen": sorted(params.frozen),
        "embedding_mode": params.embedding_mode,
        "d": params.d,
        "d_attn": params.d_attn,
        "vocab_size": params.vocab_size,
        "seed": seed,
    }
    if extra:
        manifest.update(extra)
    with open(os.path.join(directory, "checkpoint.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_tensor(path):
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.startswith("#"):
            raise ValueError(f"{path}: missing #rows,cols,name header")
        rows, cols, name = header[1:].split(",", 2)
        mat = np.loadtxt(fh, ndmin=2)
    if mat.shape != (int(rows), int(cols)):
        raise ValueError(f"{path}: shape {mat.shape} does not match header")
    return name, mat


def load_checkpoint(directory) -> tuple[ModelParams, dict]:
    with open(os.path.join(directory, "checkpoint.json")) as fh:
        manifest = json.load(fh)
    loaded: dict[str, np.ndarray] = {}
    for name in manifest["tensors"]:
        fname, mat = _load_tensor(os.path.join(directory, f"{name}.txt"))
        if fname != name:
            raise ValueError(f"tensor file {name}.txt holds {fname!r}")
        loaded[name] = mat
    kw = {}
    for name in TENSOR_ORDER:
        arr = loaded.get(name)
        if arr is not None and name.startswith("b"):
            arr = arr[:, 0]
        kw[name] = arr
    params = ModelParams(embedding_mode=manifest["embedding_mode"],
                         frozen=frozenset(manifest["frozen"]), **kw)
    return params, manifest
