import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("repo", deadline=None, derandomize=True)
settings.load_profile("repo")

from gumbel_rerank.datagen import Vocabulary, gen_single_hop
from gumbel_rerank.reader import ReaderConfig
from gumbel_rerank.training import pretrain_reader


@pytest.fixture(scope="session")
def vocab():
    return Vocabulary(64)


@pytest.fixture(scope="session")
def mini_task(vocab):
    """Small single-hop task: 8 candidates, enough to exercise every setting."""
    train = [gen_single_hop(5_000 + i, 8, vocab) for i in range(600)]
    held_out = [gen_single_hop(800_000 + i, 8, vocab) for i in range(60)]
    return train, held_out


@pytest.fixture(scope="session")
def mini_reader(mini_task):
    """A competent frozen reader for the mini task (pretrained once per session)."""
    train, _ = mini_task
    config = ReaderConfig(vocab_size=64, embed_dim=16, max_doc_len=8, max_answer_len=2,
                          seed=3, n_hops=2)
    return pretrain_reader(train, config, steps=6000, lr=2e-3, batch_size=4, seed=3)
