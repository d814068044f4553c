import itertools
import math

import numpy as np
import pytest

from topicmlm import (
    LossConfig,
    MaskingConfig,
    StepLog,
    TopicModelConfig,
    TrainConfig,
    TrainDivergedError,
    document_stream,
    init_params,
    load_steplog,
    mask_document,
    optimal_wv_l2,
    save_steplog,
    stream_rng,
    train,
)
from topicmlm.loss import masked_loss_and_grad
from topicmlm.model import backward, forward
from topicmlm.optim import AdamState, adam_step, sgd_step
from topicmlm.rng import STREAM_INIT, STREAM_MASKING


def reference_adam(params, grads, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Textbook Adam, scalar loops, written independently of the library."""
    x = [float(p) for p in params]
    m = [0.0] * len(x)
    v = [0.0] * len(x)
    history = []
    for t, g in enumerate(grads, start=1):
        for i in range(len(x)):
            m[i] = beta1 * m[i] + (1 - beta1) * g[i]
            v[i] = beta2 * v[i] + (1 - beta2) * g[i] ** 2
            mh = m[i] / (1 - beta1 ** t)
            vh = v[i] / (1 - beta2 ** t)
            x[i] = x[i] - lr * mh / (math.sqrt(vh) + eps)
        history.append(list(x))
    return history


def test_adam_matches_reference(rng):
    x = rng.standard_normal(4)
    grads = [rng.standard_normal(4) for _ in range(7)]
    expected = reference_adam(x, grads, lr=0.05)
    arr = x.copy()
    state = AdamState(m=np.zeros(4), v=np.zeros(4))
    for t, g in enumerate(grads, start=1):
        adam_step(arr, g, state, t, lr=0.05)
        np.testing.assert_allclose(arr, expected[t - 1], rtol=1e-12)


def test_sgd_step():
    x = np.array([1.0, 2.0])
    sgd_step(x, np.array([0.5, -1.0]), lr=0.1)
    np.testing.assert_allclose(x, [0.95, 2.1])


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(optimizer="rmsprop")
    with pytest.raises(ValueError):
        TrainConfig(schedule="cosine")
    with pytest.raises(ValueError):
        TrainConfig(steps=-1)
    with pytest.raises(ValueError):
        TrainConfig(lr_decay="cosine")
    with pytest.raises(ValueError):
        TrainConfig(lr=0.0)
    with pytest.raises(ValueError):
        TrainConfig(stage2_wv="fresh")


def small_setup(seed=5, **overrides):
    topic = TopicModelConfig(T=3, v=3, policy="fixed-tau", tau=2,
                             n_min=20, n_max=30)
    mask = MaskingConfig()
    params = init_params(topic.vocab_size, embedding_mode="one-hot",
                         sigma0=0.1, rng=stream_rng(seed, STREAM_INIT))
    cfg = TrainConfig(steps=overrides.pop("steps", 30), batch_size=4,
                      log_every=overrides.pop("log_every", 10),
                      seed=seed, **overrides)
    return params, document_stream(topic, seed), mask, LossConfig(), cfg


def test_training_is_deterministic():
    out = []
    for _ in range(2):
        params, docs, mask, loss_cfg, cfg = small_setup()
        final, logs = train(params, docs, mask, loss_cfg, cfg)
        out.append((final, logs))
    a, b = out
    np.testing.assert_array_equal(a[0].W_V, b[0].W_V)
    np.testing.assert_array_equal(a[0].W_K, b[0].W_K)
    assert [r.loss for r in a[1][1:]] == [r.loss for r in b[1][1:]]


def test_training_depends_on_seed():
    params1, docs1, mask, loss_cfg, cfg1 = small_setup(seed=5)
    params2, docs2, _, _, cfg2 = small_setup(seed=6)
    f1, _ = train(params1, docs1, mask, loss_cfg, cfg1)
    f2, _ = train(params2, docs2, mask, loss_cfg, cfg2)
    assert not np.array_equal(f1.W_V, f2.W_V)


def test_log_rows_and_initial_placeholder():
    params, docs, mask, loss_cfg, cfg = small_setup(steps=25, log_every=10)
    _, logs = train(params, docs, mask, loss_cfg, cfg)
    assert [r.step for r in logs] == [0, 10, 20, 25]
    assert math.isnan(logs[0].loss)
    assert all(math.isfinite(r.loss) for r in logs[1:])
    assert logs[0].wv_norm > 0


def test_loss_decreases_on_average():
    params, docs, mask, loss_cfg, cfg = small_setup(steps=200, log_every=10)
    _, logs = train(params, docs, mask, loss_cfg, cfg)
    early = np.mean([r.loss for r in logs[1:4]])
    late = np.mean([r.loss for r in logs[-3:]])
    assert late < early


def test_rotation_metric_moves_during_training():
    params, docs, mask, loss_cfg, cfg = small_setup(steps=40, log_every=10)
    _, logs = train(params, docs, mask, loss_cfg, cfg)
    assert logs[0].wv_rotation == 0.0
    assert any(r.wv_rotation > 0 for r in logs[1:])


def test_on_log_callback_sees_every_row():
    params, docs, mask, loss_cfg, cfg = small_setup(steps=20, log_every=10)
    seen = []
    train(params, docs, mask, loss_cfg, cfg,
          on_log=lambda row, p: seen.append((row.step, float(p.W_V[1, 1]))))
    assert [s for s, _ in seen] == [0, 10, 20]


def test_frozen_tensors_do_not_move():
    params, docs, mask, loss_cfg, cfg = small_setup()
    params.frozen = params.frozen | {"W_K"}
    before = params.W_K.copy()
    final, _ = train(params, docs, mask, loss_cfg, cfg)
    np.testing.assert_array_equal(final.W_K, before)


def test_two_stage_schedule_semantics():
    params, docs, mask, loss_cfg, _ = small_setup()
    init_wk = params.W_K.copy()
    cfg = TrainConfig(steps=14, batch_size=4, log_every=1, seed=5,
                      schedule="two-stage", stage1_steps=7)
    rows = []
    train(params, docs, mask, loss_cfg, cfg,
          on_log=lambda row, p: rows.append(
              (row.step, row.wk_norm, float(np.linalg.norm(p.W_V)),
               p.W_K.copy())))
    by_step = {r[0]: r for r in rows}
    # stage 1: attention zeroed and pinned
    for s in range(0, 8):
        assert by_step[s][1] == 0.0
    # stage 2 begins from the recorded initial draw, then trains
    assert by_step[8][1] > 0.0
    drift8 = np.abs(by_step[8][3] - init_wk).max()
    assert drift8 < 0.05  # one update away from the restored draw
    # W_V pinned through stage 2
    wv_norms = [by_step[s][2] for s in range(8, 15)]
    assert max(wv_norms) - min(wv_norms) == 0.0


def test_two_stage_analytic_wv(mask_cfg):
    params, docs, mask, loss_cfg, _ = small_setup()
    cfg = TrainConfig(steps=10, batch_size=4, log_every=5, seed=5,
                      schedule="two-stage", stage1_steps=5,
                      stage2_wv="analytic")
    target = optimal_wv_l2(mask, 3, 3)
    final, _ = train(params, docs, mask, loss_cfg, cfg, analytic_wv=target)
    np.testing.assert_array_equal(final.W_V, target)


def test_two_stage_analytic_requires_matrix():
    params, docs, mask, loss_cfg, _ = small_setup()
    cfg = TrainConfig(steps=10, schedule="two-stage", stage1_steps=5,
                      stage2_wv="analytic", seed=5)
    with pytest.raises(ValueError):
        train(params, docs, mask, loss_cfg, cfg)


def test_divergence_raises_with_context():
    params, docs, mask, loss_cfg, _ = small_setup()
    cfg = TrainConfig(optimizer="sgd", lr=1e12, steps=50, batch_size=2,
                      log_every=1, seed=5)
    with pytest.raises(TrainDivergedError) as einfo:
        train(params, docs, mask, loss_cfg, cfg)
    assert einfo.value.step >= 1
    assert "non-finite" in str(einfo.value)


def test_premasked_documents_are_used_verbatim():
    topic = TopicModelConfig(T=3, v=3, policy="fixed-tau", tau=2,
                             n_min=20, n_max=30)
    mask = MaskingConfig()
    rng = stream_rng(1, STREAM_MASKING)
    docs = [next(document_stream(topic, 2)) for _ in range(6)]
    premasked = [mask_document(d, mask, rng, 9) for d in docs]

    def run():
        params = init_params(topic.vocab_size, embedding_mode="one-hot",
                             sigma0=0.1, rng=stream_rng(3, STREAM_INIT))
        cfg = TrainConfig(steps=12, batch_size=3, log_every=4, seed=3)
        return train(params, itertools.cycle(premasked), mask, LossConfig(), cfg)

    f1, logs1 = run()
    f2, logs2 = run()
    np.testing.assert_array_equal(f1.W_V, f2.W_V)
    assert [r.loss for r in logs1[1:]] == [r.loss for r in logs2[1:]]


def test_linear_lr_decay_scales_sgd_updates():
    # two steps, batch of one fixed doc: step 2 must use lr * (1 - 1/2)
    topic = TopicModelConfig(T=3, v=3, policy="fixed-tau", tau=2,
                             n_min=20, n_max=30)
    mask = MaskingConfig()
    doc = next(document_stream(topic, 11))
    md = mask_document(doc, mask, stream_rng(11, STREAM_MASKING), 9)

    def fresh():
        return init_params(topic.vocab_size, embedding_mode="one-hot",
                           sigma0=0.1, rng=stream_rng(7, STREAM_INIT))

    cfg = TrainConfig(optimizer="sgd", lr=0.05, steps=2, batch_size=1,
                      log_every=1, seed=7, lr_decay="linear")
    final, _ = train(fresh(), itertools.cycle([md]), mask, LossConfig(), cfg)

    ref = fresh()
    labels = md.document.tokens[md.positions]
    for lr in (0.05, 0.025):
        trace = forward(ref, md.masked_tokens)
        _, dlogits = masked_loss_and_grad(trace.logits, labels,
                                          md.positions, "squared")
        grads = backward(ref, trace, dlogits)
        for name in ref.trainable():
            if name in grads:
                getattr(ref, name)[...] -= lr * grads[name]
    np.testing.assert_array_equal(final.W_V, ref.W_V)
    np.testing.assert_array_equal(final.W_K, ref.W_K)
    np.testing.assert_array_equal(final.b_pred, ref.b_pred)


def test_linear_lr_decay_changes_adam_path():
    params1, docs1, mask, loss_cfg, _ = small_setup()
    params2, docs2, _, _, _ = small_setup()
    base = dict(steps=20, batch_size=4, log_every=10, seed=5)
    f1, _ = train(params1, docs1, mask, loss_cfg, TrainConfig(**base))
    f2, _ = train(params2, docs2, mask, loss_cfg,
                  TrainConfig(lr_decay="linear", **base))
    assert not np.array_equal(f1.W_V, f2.W_V)


def test_sgd_and_adam_produce_different_paths():
    params1, docs1, mask, loss_cfg, _ = small_setup()
    params2, docs2, _, _, _ = small_setup()
    cfg_a = TrainConfig(optimizer="adam", steps=20, batch_size=4, seed=5)
    cfg_s = TrainConfig(optimizer="sgd", steps=20, batch_size=4, seed=5)
    fa, _ = train(params1, docs1, mask, loss_cfg, cfg_a)
    fs, _ = train(params2, docs2, mask, loss_cfg, cfg_s)
    assert not np.allclose(fa.W_V, fs.W_V)


def test_steplog_round_trip(tmp_path):
    rows = [
        StepLog(0, float("nan"), 0.1, 0.2, 0.3, 0.0),
        StepLog(10, 0.5, 0.11, 0.21, 0.31, 0.05),
    ]
    path = tmp_path / "log.csv"
    save_steplog(path, rows)
    loaded = load_steplog(path)
    assert loaded[0].step == 0 and math.isnan(loaded[0].loss)
    assert loaded[1] == rows[1]


def test_steplog_rejects_foreign_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("step,loss\n1,2\n")
    with pytest.raises(ValueError):
        load_steplog(path)
