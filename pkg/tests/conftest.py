"""Shared fixtures: small inventories, random grids, a tiny synthetic corpus."""

import numpy as np
import pytest

from src.data_loader import dataset_from_arrays
from src.inventory import build_inventory, encode
from src.lattice import PosteriorGrid
from src.net import NetConfig, init_params
from src.synth import SynthConfig, generate


def random_grid(rng: np.random.Generator, T: int, Q: int) -> PosteriorGrid:
    return PosteriorGrid.from_logits(rng.normal(0.0, 1.5, size=(T, Q)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_inv():
    return build_inventory(['yes he has one', 'hello', "we'd see the tree"])


@pytest.fixture
def tiny_dataset(small_inv):
    """Four random-feature utterances, 6-dim input, long enough for their targets."""
    rng = np.random.default_rng(7)
    texts = ['yes', 'he has', 'one', 'hello']
    targets = [encode(t, small_inv) for t in texts]
    feats = [rng.normal(size=(2 * len(tgt) + 3, 6)) for tgt in targets]
    return dataset_from_arrays([f"utt{i}" for i in range(len(texts))], feats, targets, 'tiny')


@pytest.fixture
def tiny_params(small_inv):
    cfg = NetConfig(input_dim=6, hidden_dim=small_inv.size, num_layers=2, output_dim=small_inv.size)
    return init_params(cfg, seed=3)


@pytest.fixture
def synth_corpus(tmp_path):
    """A very small synthetic corpus on disk; returns (out_dir, manifests)."""
    cfg = SynthConfig(vocab_size=6, train_utterances=12, dev_utterances=4, test_utterances=4,
                      noise=0.05, seed=5, dim=8, max_words=3)
    out = tmp_path / 'corpus'
    return out, generate(cfg, out)
