import numpy as np
import pytest

from topicmlm import MaskingConfig, TopicModelConfig


@pytest.fixture
def mask_cfg():
    return MaskingConfig()


@pytest.fixture
def tiny_topic_cfg():
    return TopicModelConfig(T=3, v=3, policy="fixed-tau", tau=2, n_min=8, n_max=8)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
