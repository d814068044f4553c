import json
import math

import numpy as np
import pytest

from topicmlm import (
    attention_class_report,
    block_report,
    load_matrix_csv,
    rotation_metric,
    save_matrix_csv,
)
from topicmlm.metrics import save_report


def test_rotation_metric_endpoints(rng):
    W = rng.standard_normal((4, 4))
    assert rotation_metric(W, W) == pytest.approx(0.0)
    assert rotation_metric(W, -W) == pytest.approx(1.0)
    assert rotation_metric(W, 3.0 * W) == pytest.approx(0.0)  # scale-blind


def test_rotation_metric_orthogonal():
    a = np.array([[1.0, 0.0]])
    b = np.array([[0.0, 1.0]])
    assert rotation_metric(a, b) == pytest.approx(0.5)


def test_rotation_metric_zero_handling():
    z = np.zeros((2, 2))
    w = np.ones((2, 2))
    assert rotation_metric(z, w) == pytest.approx(0.5)
    assert rotation_metric(w, z) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        rotation_metric(z, z)
    with pytest.raises(ValueError):
        rotation_metric(np.zeros((2, 2)), np.zeros(4).reshape(1, 4))


def test_rotation_metric_clips_roundoff():
    a = np.array([1.0, 1e-200])
    assert 0.0 <= rotation_metric(a, a) <= 1.0


def make_structured(T, v, diag, same, diff):
    n = T * v
    W = np.full((n + 1, n + 1), 99.0)  # mask row/col must be ignored
    topics = (np.arange(n) // v)
    same_mask = topics[:, None] == topics[None, :]
    block = np.where(same_mask, same, diff)
    np.fill_diagonal(block, diag)
    W[1:, 1:] = block
    return W


def test_block_report_exact_means():
    W = make_structured(3, 2, diag=5.0, same=2.0, diff=1.0)
    rep = block_report(W, 3, 2)
    assert rep.diag_mean == 5.0 and rep.diag_std == 0.0
    assert rep.same_topic_mean == 2.0
    assert rep.diff_topic_mean == 1.0
    assert rep.zero_variance
    assert math.isinf(rep.separation) and rep.separation > 0
    assert rep.to_json()["separation"] == "inf"


def test_block_report_negative_gap_sign():
    W = make_structured(3, 2, diag=0.0, same=-1.0, diff=4.0)
    rep = block_report(W, 3, 2)
    assert rep.separation == float("-inf")
    assert rep.to_json()["separation"] == "-inf"


def test_block_report_finite_separation(rng):
    W = make_structured(4, 3, diag=1.0, same=0.5, diff=0.0)
    W[1:, 1:] += rng.standard_normal((12, 12)) * 0.01
    rep = block_report(W, 4, 3)
    assert not rep.zero_variance
    assert rep.separation == pytest.approx(
        (rep.same_topic_mean - rep.diff_topic_mean) / rep.diff_topic_std)
    assert rep.separation > 5


def test_block_report_shape_guard():
    with pytest.raises(ValueError):
        block_report(np.zeros((8, 8)), 3, 2)


def test_attention_class_report_hand_case():
    # tokens: words 1 and 2 share topic 1, word 3 opens topic 2 (v=2),
    # token 0 is masked
    tokens = np.array([1, 2, 1, 0, 3])
    n = 5
    A = np.full((n, n), 1.0 / n)
    rep = attention_class_report([A], [tokens], v=2, debias=False)
    # word pairs = 4x4 ordered incl. diagonal; same-word: (0,0),(2,2),(1,1),
    # (4,4) plus (0,2),(2,0) -> 6; diff-topic pairs touch token 3 -> 6
    assert rep.same_word_count == 6
    assert rep.same_topic_diff_word_count == 4
    assert rep.diff_topic_count == 6
    for mean in (rep.same_word_mean, rep.same_topic_diff_word_mean,
                 rep.diff_topic_mean):
        assert mean == pytest.approx(1.0 / n)


def test_attention_class_report_debias_normalizes_uniform():
    # debiasing maps uniform attention to 1/100 regardless of length
    for n in (20, 50, 200):
        tokens = np.arange(1, n + 1) % 4 + 1  # all words, v=2 -> two topics
        A = np.full((n, n), 1.0 / n)
        rep = attention_class_report([A], [tokens], v=2, debias=True)
        assert rep.debiased
        assert rep.same_word_mean == pytest.approx(0.01)
        assert rep.diff_topic_mean == pytest.approx(0.01)


def test_attention_class_report_missing_class_is_none():
    tokens = np.array([1, 1, 1])  # one word only: no diff-topic pairs
    A = np.full((3, 3), 1.0 / 3)
    rep = attention_class_report([A], [tokens], v=2, debias=False)
    assert rep.diff_topic_count == 0
    assert rep.diff_topic_mean is None
    assert rep.same_word_mean == pytest.approx(1.0 / 3)


def test_attention_class_report_orders_sources_first():
    # column j is the query; weight of source i sits at (i, j)
    tokens = np.array([1, 3])  # topics 1 and 2 at v=2
    A = np.array([[0.9, 0.2],
                  [0.1, 0.8]])
    rep = attention_class_report([A], [tokens], v=2, debias=False)
    # diff-topic pairs: (source 1, query 0) weight 0.1, (source 0, query 1) 0.2
    assert rep.diff_topic_mean == pytest.approx(0.15)
    assert rep.same_word_mean == pytest.approx((0.9 + 0.8) / 2)


def test_attention_class_report_validates_lengths():
    with pytest.raises(ValueError):
        attention_class_report([np.eye(3)], [np.array([1, 2])], v=2)
    with pytest.raises(ValueError):
        attention_class_report([np.eye(3)], [], v=2)


def test_save_report_writes_json(tmp_path):
    tokens = np.array([1, 2])
    rep = attention_class_report([np.full((2, 2), 0.5)], [tokens], v=2,
                                 debias=False)
    path = tmp_path / "r.json"
    save_report(path, rep)
    data = json.loads(path.read_text())
    assert data["same_topic_diff_word_mean"] == pytest.approx(0.5)
    assert data["debiased"] is False


def test_matrix_csv_round_trip(tmp_path, rng):
    W = rng.standard_normal((5, 7))
    path = tmp_path / "m.csv"
    save_matrix_csv(path, W)
    back = load_matrix_csv(path)
    np.testing.assert_array_equal(back, W)  # repr floats survive exactly
