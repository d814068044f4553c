import numpy as np
import pytest

from topicmlm import (
    ModelParams,
    NonFiniteError,
    attention_weights,
    backward,
    forward,
    init_params,
    load_checkpoint,
    save_checkpoint,
    softmax_columns,
)
from topicmlm.model import TENSOR_ORDER


def scalar_loss(params, tokens, R):
    """sum(logits * R) -- a generic differentiable readout for checks."""
    return float((forward(params, tokens).logits * R).sum())


def numeric_grad(params, tokens, R, name, h=1e-6):
    arr = getattr(params, name)
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = arr[idx]
        arr[idx] = orig + h
        up = scalar_loss(params, tokens, R)
        arr[idx] = orig - h
        down = scalar_loss(params, tokens, R)
        arr[idx] = orig
        g[idx] = (up - down) / (2 * h)
    return g


def relative_error(a, b):
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom < 1e-10:  # both zero (e.g. the key bias, which cancels in softmax)
        return 0.0
    return np.linalg.norm(a - b) / denom


def make_tokens(rng, vocab_size, n):
    toks = rng.integers(0, vocab_size, size=n)
    toks[0] = 0  # keep a mask token in play
    return toks


@pytest.mark.parametrize("mode,biases", [("one-hot", True), ("one-hot", False),
                                         ("trained", True), ("trained", False)])
def test_backward_matches_finite_differences(mode, biases, rng):
    vocab = 10
    params = init_params(vocab, d=5, d_attn=4, embedding_mode=mode,
                         biases=biases, sigma0=0.4, rng=rng)
    tokens = make_tokens(rng, vocab, 8)
    R = rng.standard_normal((vocab, 8))
    grads = backward(params, forward(params, tokens), R)
    assert set(grads) == set(params.trainable())
    for name in params.trainable():
        err = relative_error(grads[name], numeric_grad(params, tokens, R, name, h=1e-5))
        assert err < 1e-5, f"{name}: {err:g}"


def test_backward_skips_frozen_tensors(rng):
    params = init_params(9, embedding_mode="one-hot", rng=rng,
                         frozen=("W_K", "b_Q"))
    tokens = make_tokens(rng, 9, 6)
    grads = backward(params, forward(params, tokens), np.ones((9, 6)))
    assert "W_K" not in grads and "b_Q" not in grads and "W_E" not in grads
    assert "W_Q" in grads and "W_V" in grads


def test_uniform_path_matches_zeroed_attention(rng):
    vocab = 13
    base = init_params(vocab, embedding_mode="one-hot", rng=rng, sigma0=0.3)
    base.W_K[:] = 0.0
    base.W_Q[:] = 0.0
    fast = base.copy()
    fast.frozen = fast.frozen | {"W_K", "W_Q"}
    assert fast.uniform_attention() and not base.uniform_attention()
    tokens = make_tokens(rng, vocab, 11)
    t_slow = forward(base, tokens)
    t_fast = forward(fast, tokens)
    assert not t_slow.uniform and t_fast.uniform
    np.testing.assert_allclose(t_fast.logits, t_slow.logits, atol=1e-12)
    R = rng.standard_normal(t_slow.logits.shape)
    g_slow = backward(base, t_slow, R)
    g_fast = backward(fast, t_fast, R)
    for name in g_fast:
        np.testing.assert_allclose(g_fast[name], g_slow[name], atol=1e-10,
                                   err_msg=name)


def test_uniform_fast_path_trained_embeddings(rng):
    vocab = 8
    base = init_params(vocab, d=5, embedding_mode="trained", rng=rng, sigma0=0.3)
    base.W_K[:] = 0.0
    base.W_Q[:] = 0.0
    fast = base.copy()
    fast.frozen = fast.frozen | {"W_K", "W_Q"}
    tokens = make_tokens(rng, vocab, 7)
    t_slow, t_fast = forward(base, tokens), forward(fast, tokens)
    np.testing.assert_allclose(t_fast.logits, t_slow.logits, atol=1e-12)
    R = rng.standard_normal((vocab, 7))
    g_slow, g_fast = backward(base, t_slow, R), backward(fast, t_fast, R)
    for name in ("W_E", "W_V", "b_V", "b_pred"):
        np.testing.assert_allclose(g_fast[name], g_slow[name], atol=1e-10,
                                   err_msg=name)


def test_key_bias_cannot_move_the_output(rng):
    # shifting every key adds a per-column constant to the scores, which
    # the column softmax removes; the key bias is inert by construction
    params = init_params(9, embedding_mode="one-hot", rng=rng, sigma0=0.5)
    tokens = make_tokens(rng, 9, 6)
    before = forward(params, tokens).logits
    params.b_K[:] = rng.standard_normal(params.b_K.shape) * 3.0
    after = forward(params, tokens).logits
    np.testing.assert_allclose(before, after, atol=1e-10)
    g = backward(params, forward(params, tokens), np.ones_like(after))
    assert np.abs(g["b_K"]).max() < 1e-12


def test_one_hot_mode_freezes_identity_embedding(rng):
    params = init_params(7, embedding_mode="one-hot", rng=rng)
    assert "W_E" in params.frozen
    assert np.array_equal(params.W_E, np.eye(7))
    assert params.d == 7


def test_softmax_columns_properties(rng):
    S = rng.standard_normal((6, 4)) * 30
    A = softmax_columns(S)
    np.testing.assert_allclose(A.sum(axis=0), 1.0, atol=1e-12)
    # translation invariance per column
    A2 = softmax_columns(S + rng.standard_normal(4)[None, :] * 100)
    np.testing.assert_allclose(A, A2, atol=1e-12)
    # no overflow at large scores
    big = softmax_columns(np.array([[1e4], [0.0]]))
    assert np.isfinite(big).all() and big[0, 0] == pytest.approx(1.0)


def test_attention_weights_column_stochastic(rng):
    params = init_params(9, embedding_mode="one-hot", rng=rng, sigma0=1.0)
    tokens = make_tokens(rng, 9, 10)
    A = attention_weights(params, tokens)
    assert A.shape == (10, 10)
    np.testing.assert_allclose(A.sum(axis=0), 1.0, atol=1e-12)
    assert (A > 0).all()


def test_attention_weights_uniform_shortcut(rng):
    params = init_params(9, embedding_mode="one-hot", rng=rng,
                         frozen=("W_K", "W_Q"))
    params.W_K[:] = 0.0
    params.W_Q[:] = 0.0
    A = attention_weights(params, make_tokens(rng, 9, 5))
    np.testing.assert_allclose(A, 0.2, atol=0)


def test_forward_rejects_empty_and_nonfinite(rng):
    params = init_params(5, embedding_mode="one-hot", rng=rng)
    with pytest.raises(ValueError):
        forward(params, np.empty(0, dtype=np.int64))
    params.W_K[0, 0] = np.inf
    with pytest.raises(NonFiniteError):
        forward(params, make_tokens(rng, 5, 4))
    params.W_K[0, 0] = 0.0
    params.W_V[0, 0] = np.nan
    with pytest.raises(NonFiniteError):
        forward(params, make_tokens(rng, 5, 4))


def test_nonfinite_error_reports_column(rng):
    params = init_params(5, embedding_mode="one-hot", rng=rng)
    params.b_pred[:] = np.inf
    with pytest.raises(NonFiniteError) as einfo:
        forward(params, make_tokens(rng, 5, 4))
    assert einfo.value.column is not None


def test_params_copy_is_deep(rng):
    params = init_params(6, embedding_mode="trained", d=4, rng=rng)
    clone = params.copy()
    clone.W_V[0, 0] += 1.0
    assert params.W_V[0, 0] != clone.W_V[0, 0]
    assert clone.frozen == params.frozen


def test_shape_validation():
    with pytest.raises(ValueError):
        ModelParams(
            W_E=np.eye(5), W_K=np.zeros((3, 4)), W_Q=np.zeros((3, 5)),
            W_V=np.zeros((5, 5)), b_K=None, b_Q=None, b_V=None,
            b_pred=np.zeros(5), embedding_mode="one-hot", frozen=frozenset(),
        )


def test_checkpoint_round_trip(tmp_path, rng):
    params = init_params(8, d=5, d_attn=3, embedding_mode="trained",
                         rng=rng, frozen=("b_V",))
    save_checkpoint(tmp_path / "ck", params, seed=77, extra={"note": "unit"})
    loaded, meta = load_checkpoint(tmp_path / "ck")
    assert meta["seed"] == 77 and meta["note"] == "unit"
    assert loaded.embedding_mode == "trained"
    assert loaded.frozen == params.frozen
    for name in TENSOR_ORDER:
        a, b = getattr(params, name), getattr(loaded, name)
        if a is None:
            assert b is None
        else:
            assert np.array_equal(a, b), name  # text round trip is exact


def test_checkpoint_no_bias_round_trip(tmp_path, rng):
    params = init_params(6, embedding_mode="one-hot", biases=False, rng=rng)
    save_checkpoint(tmp_path / "ck", params)
    loaded, _ = load_checkpoint(tmp_path / "ck")
    assert loaded.b_K is None and loaded.b_V is None
    assert np.array_equal(loaded.W_V, params.W_V)
