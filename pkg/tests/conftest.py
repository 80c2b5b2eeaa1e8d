import os

import pytest

from frametrack.corpus import load_corpus
from frametrack.encoding import build_dictionaries
from frametrack.model import ModelConfig

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")


def fixture_path(name):
    return os.path.join(FIXTURES, name)


@pytest.fixture(scope="session")
def two_turn():
    return load_corpus(fixture_path("two_turn.json"))


@pytest.fixture(scope="session")
def offers():
    return load_corpus(fixture_path("offers.json"))


@pytest.fixture(scope="session")
def tiny_cfg():
    """Desk-scale config: every dim small enough for finite differences."""
    return ModelConfig(trigram_embed_dim=5, slot_embed_dim=4, act_embed_dim=4,
                       token_gru_hidden=3, triple_gru_hidden=3, frame_gru_hidden=3,
                       summary_dim=6, gate_hidden=4, act_head_hidden=4, trigram_cap=512)


@pytest.fixture(scope="session")
def small_cfg():
    """Trainable-but-fast config used by the synthetic training tests."""
    return ModelConfig(trigram_embed_dim=16, slot_embed_dim=16, act_embed_dim=16,
                       token_gru_hidden=16, triple_gru_hidden=16, frame_gru_hidden=16,
                       summary_dim=32, gate_hidden=16, act_head_hidden=16, trigram_cap=2048)


@pytest.fixture(scope="session")
def offers_dicts(offers):
    return build_dictionaries(offers)
