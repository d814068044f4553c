"""Optimizers and the training loop.

Updates are plain SGD or Adam with bias correction, applied to every
trainable tensor.  Gradients are batch means accumulated in a fixed
tensor order, so runs with identical seeds and configs are bit
identical.

Two schedules exist.  "joint" trains all trainable tensors throughout.
"two-stage" zeroes and freezes W_K and W_Q for the first
``stage1_steps`` updates (attention exactly uniform), then restores
their initial draws and trains them while W_V stays frozen at its
stage-1 endpoint (or at a supplied closed-form matrix when
``stage2_wv`` is "analytic").
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np

from .corpus import Document
from .loss import (LossConfig, l2_grad, masked_loss_and_grad,
                   masked_loss_and_grad_shared)
from .masking import MaskedDocument, MaskingConfig, mask_document
from .metrics import rotation_metric
from .model import ModelParams, NonFiniteError, backward, forward
from .rng import STREAM_MASKING, stream_rng


class TrainDivergedError(RuntimeError):
    """Raised when the loss stops being finite during training."""

    def __init__(self, step: int, last_log: "StepLog | None"):
        msg = f"non-finite loss at step {step}"
        if last_log is not None:
            msg += f" (last finite log: step {last_log.step}, loss {last_log.loss:g})"
        super().__init__(msg)
        self.step = step
        self.last_log = last_log


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"  # or "sgd"
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    steps: int = 1000
    batch_size: int = 16
    schedule: str = "joint"  # or "two-stage"
    stage1_steps: int = 400
    stage2_wv: str = "stage1"  # or "analytic"
    lr_decay: str = "none"  # or "linear" (to zero over the run)
    log_every: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.schedule not in ("joint", "two-stage"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.lr_decay not in ("none", "linear"):
            raise ValueError(f"unknown lr_decay {self.lr_decay!r}")
        if self.stage2_wv not in ("stage1", "analytic"):
            raise ValueError(f"unknown stage2_wv {self.stage2_wv!r}")
        if self.steps < 0 or self.batch_size < 1 or self.log_every < 1:
            raise ValueError("bad steps / batch_size / log_every")
        if self.lr <= 0:
            raise ValueError("lr must be positive")


@dataclass
class StepLog:
    """One row of the training trace.

    ``wv_rotation`` is the rotation of W_V against its value ten steps
    earlier ((1 - cosine similarity)/2; zero before step 10).  The
    step-0 row records the initial norms with a NaN loss placeholder.
    """

    step: int
    loss: float
    wk_norm: float
    wq_norm: float
    wv_norm: float
    wv_rotation: float


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState, t: int,
              lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """In-place Adam update with bias correction; ``t`` is 1-based."""
    state.m *= beta1
    state.m += (1.0 - beta1) * grad
    state.v *= beta2
    state.v += (1.0 - beta2) * grad * grad
    m_hat = state.m / (1.0 - beta1 ** t)
    v_hat = state.v / (1.0 - beta2 ** t)
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)


def sgd_step(param: np.ndarray, grad: np.ndarray, lr: float) -> None:
    param -= lr * grad


def _tensor_norm(arr: np.ndarray | None) -> float:
    return 0.0 if arr is None else float(np.linalg.norm(arr))


def train(
    params: ModelParams,
    docs: Iterator[Document | MaskedDocument],
    mask_cfg: MaskingConfig,
    loss_cfg: LossConfig,
    cfg: TrainConfig,
    analytic_wv: np.ndarray | None = None,
    on_log: Callable[[StepLog, ModelParams], None] | None = None,
) -> tuple[ModelParams, list[StepLog]]:
    """Train ``params`` in place on documents pulled from ``docs``.

    Each step pulls ``batch_size`` documents, masks them with the run's
    masking stream (fresh masks every step; items that arrive already
    masked are used as is), and applies one update with the batch-mean
    gradient.  ``on_log`` fires at every logged step with
    the fresh row and current params (checkpointing, loss-curve capture).
    Returns the params and the trace; step 0 is the initial state.
    Raises TrainDivergedError if the loss leaves the finite range.
    """
    if cfg.schedule == "two-stage" and cfg.stage2_wv == "analytic" \
            and analytic_wv is None:
        raise ValueError("stage2_wv='analytic' needs the analytic_wv matrix")
    mask_rng = stream_rng(cfg.seed, STREAM_MASKING)
    n_words = params.vocab_size - 1
    logs: list[StepLog] = []
    two_stage = cfg.schedule == "two-stage"
    saved_kq: dict[str, np.ndarray] = {}
    base_frozen = params.frozen
    if two_stage and cfg.stage1_steps > 0:
        saved_kq = {"W_K": params.W_K.copy(), "W_Q": params.W_Q.copy()}
        params.W_K[:] = 0.0
        params.W_Q[:] = 0.0
        params.frozen = base_frozen | {"W_K", "W_Q"}

    adam: dict[str, AdamState] = {}

    def make_states():
        adam.clear()
        for name in params.trainable():
            arr = getattr(params, name)
            adam[name] = AdamState(m=np.zeros_like(arr), v=np.zeros_like(arr))

    if cfg.optimizer == "adam":
        make_states()
    steps_in_phase = 0

    # rolling window: W_V copies for the current step and the 10 before it
    wv_history: list[np.ndarray] = [params.W_V.copy()]

    def log_row(step: int, loss_value: float) -> StepLog:
        rot = 0.0
        if step >= 10:
            past = wv_history[0]
            if np.any(past) or np.any(params.W_V):
                rot = rotation_metric(params.W_V, past)
        return StepLog(
            step=step,
            loss=loss_value,
            wk_norm=_tensor_norm(params.W_K),
            wq_norm=_tensor_norm(params.W_Q),
            wv_norm=_tensor_norm(params.W_V),
            wv_rotation=rot,
        )

    def emit(step: int, loss_value: float) -> StepLog:
        row = log_row(step, loss_value)
        logs.append(row)
        if on_log is not None:
            on_log(row, params)
        return row

    emit(0, float("nan"))
    last_finite: StepLog | None = None

    for step in range(1, cfg.steps + 1):
        if two_stage and cfg.stage1_steps > 0 and step == cfg.stage1_steps + 1:
            # stage 2: thaw attention from its initial draw, pin the value map
            params.W_K[:] = saved_kq["W_K"]
            params.W_Q[:] = saved_kq["W_Q"]
            if cfg.stage2_wv == "analytic":
                params.W_V[:] = analytic_wv
            params.frozen = base_frozen | {"W_V"}
            if cfg.optimizer == "adam":
                make_states()
            steps_in_phase = 0

        grads: dict[str, np.ndarray] = {}
        batch_loss = 0.0
        try:
            for _ in range(cfg.batch_size):
                item = next(docs)
                if isinstance(item, MaskedDocument):
                    md = item
                else:
                    md = mask_document(item, mask_cfg, mask_rng, n_words)
                trace = forward(params, md.masked_tokens)
                labels = md.document.tokens[md.positions]
                if trace.uniform:
                    value, dlogits = masked_loss_and_grad_shared(
                        trace.logits[:, 0], labels, loss_cfg.kind)
                else:
                    value, dlogits = masked_loss_and_grad(
                        trace.logits, labels, md.positions, loss_cfg.kind)
                if not np.isfinite(value):
                    raise TrainDivergedError(step, last_finite)
                batch_loss += value
                for name, g in backward(params, trace, dlogits).items():
                    if name in grads:
                        grads[name] += g
                    else:
                        grads[name] = g
        except NonFiniteError as exc:
            raise TrainDivergedError(step, last_finite) from exc
        batch_loss /= cfg.batch_size
        if not np.isfinite(batch_loss):
            raise TrainDivergedError(step, last_finite)
        for name in grads:
            grads[name] /= cfg.batch_size
        for name, g in l2_grad(params, loss_cfg.l2, loss_cfg.l2_tensors).items():
            if name in grads:
                grads[name] += g
            else:
                grads[name] = g

        steps_in_phase += 1
        lr = cfg.lr
        if cfg.lr_decay == "linear":
            lr *= 1.0 - (step - 1) / cfg.steps
        for name in params.trainable():
            g = grads.get(name)
            if g is None:
                continue
            arr = getattr(params, name)
            if cfg.optimizer == "adam":
                adam_step(arr, g, adam[name], steps_in_phase,
                          lr, cfg.beta1, cfg.beta2, cfg.eps)
            else:
                sgd_step(arr, g, lr)

        wv_history.append(params.W_V.copy())
        if len(wv_history) > 11:
            wv_history.pop(0)

        if step % cfg.log_every == 0 or step == cfg.steps:
            last_finite = emit(step, batch_loss)
    return params, logs


def save_steplog(path, logs: Sequence[StepLog]) -> None:
    with open(path, "w") as fh:
        fh.write("step,loss,wk_norm,wq_norm,wv_norm,wv_rotation\n")
        for row in logs:
            fh.write(f"{row.step},{row.loss!r},{row.wk_norm!r},"
                     f"{row.wq_norm!r},{row.wv_norm!r},{row.wv_rotation!r}\n")


def load_steplog(path) -> list[StepLog]:
    rows: list[StepLog] = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "step,loss,wk_norm,wq_norm,wv_norm,wv_rotation":
            raise ValueError("unexpected steplog header")
        for line in fh:
            parts = line.strip().split(",")
            rows.append(StepLog(int(parts[0]), *(float(x) for x in parts[1:])))
    return rows
