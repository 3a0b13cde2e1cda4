import numpy as np
import pytest

from xdistil.synthetic import generate_examples, vocab_tokens
from xdistil.transformer import ModelConfig, TransformerModel, Vocab


@pytest.fixture(scope="session")
def toy_vocab() -> Vocab:
    return Vocab(vocab_tokens(24))


@pytest.fixture(scope="session")
def toy_config(toy_vocab) -> ModelConfig:
    return ModelConfig(num_layers=2, hidden_dim=8, num_heads=2, ff_dim=16,
                       max_seq_len=12, vocab_size=len(toy_vocab), num_classes=3)


@pytest.fixture()
def toy_model(toy_config) -> TransformerModel:
    return TransformerModel.init_random(toy_config, seed=0)


@pytest.fixture(scope="session")
def toy_examples():
    return generate_examples(seed=123, n=60, n_tokens=24)
