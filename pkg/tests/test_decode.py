import itertools
import math
from collections import defaultdict

import numpy as np
import pytest

from src.charlm import train_ngram
from src.config import Ctc2Config, DecodeConfig, TrainConfig
from src.decode import (DecodeResult, beam_decode, collapse_ids, corrupt_ids, ctc2_apply, ctc2_dataset,
                        ctc2_net_config, decode_dataset, greedy_decode)
from src.errors import ConfigError
from src.inventory import BLANK_ID, Inventory, build_inventory, encode
from src.lattice import PosteriorGrid
from src.net import init_params
from tests.conftest import random_grid


def exhaustive_best(grid):
    """Most probable collapsed sequence by summing over every frame labelling."""
    mass = defaultdict(float)
    for labels in itertools.product(range(grid.Q), repeat=grid.T):
        p = np.prod([grid.probs[t, q] for t, q in enumerate(labels)])
        mass[collapse_ids(labels)] += p
    best = max(mass, key=mass.get)
    return best, mass[best]


def one_hot_grid(frame_ids, Q, peak=0.9):
    probs = np.full((len(frame_ids), Q), (1.0 - peak) / (Q - 1))
    probs[np.arange(len(frame_ids)), frame_ids] = peak
    return PosteriorGrid(probs)


class TestCollapse:
    def test_hello(self):
        inv = build_inventory(['hello'])
        H, e, ll, o = (inv.id_of(s) for s in ('H', 'e', 'll', 'o'))
        frames = [BLANK_ID, H, H, BLANK_ID, e, ll, o, BLANK_ID]
        result = greedy_decode(one_hot_grid(frames, inv.size), inv)
        assert result.text == 'hello'
        assert result.ids == (H, e, ll, o)

    def test_all_blank(self, small_inv):
        result = greedy_decode(one_hot_grid([BLANK_ID] * 5, small_inv.size), small_inv)
        assert result.text == '' and result.ids == ()

    def test_blank_separates_repeat(self):
        assert collapse_ids([3, 3, BLANK_ID, 3]) == (3, 3)

    def test_literal_mode(self):
        assert collapse_ids([3, 3, BLANK_ID, 3], mode='literal') == (3,)
        assert collapse_ids([BLANK_ID, 2, 2, 4], mode='literal') == (2, 4)

    def test_unknown_mode(self):
        with pytest.raises(ConfigError):
            collapse_ids([1], mode='fancy')

    def test_greedy_matches_argmax_oracle(self):
        rng = np.random.default_rng(0)
        inv = Inventory(['A', 'B', 'a', 'b'])
        for _ in range(10_000):
            T = int(rng.integers(1, 9))
            grid = random_grid(rng, T, inv.size)
            best = grid.probs.argmax(axis=1)
            expected = tuple(k for k, _ in itertools.groupby(best) if k != BLANK_ID)
            assert greedy_decode(grid, inv).ids == expected


class TestBeam:
    def test_exact_with_wide_beam(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            Q = int(rng.integers(2, 4))
            T = int(rng.integers(1, 5))
            inv = Inventory(['A', 'b'][:Q - 1])
            grid = random_grid(rng, T, Q)
            best, mass = exhaustive_best(grid)
            result = beam_decode(grid, inv, None, beam_width=200, lm_weight=0.0, insertion_bonus=0.0)
            assert result.ids == best
            assert math.isclose(result.score, math.log(mass), rel_tol=1e-9, abs_tol=1e-12)

    def test_narrow_beam_never_beats_exhaustive(self):
        rng = np.random.default_rng(2)
        inv = Inventory(['A', 'b'])
        for _ in range(200):
            grid = random_grid(rng, int(rng.integers(1, 7)), inv.size)
            wide = beam_decode(grid, inv, None, beam_width=1000, lm_weight=0.0, insertion_bonus=0.0)
            for width in (1, 2, 4):
                narrow = beam_decode(grid, inv, None, beam_width=width, lm_weight=0.0, insertion_bonus=0.0)
                assert narrow.score <= wide.score + 1e-12

    def test_lm_overrides_unlikely_greedy_output(self):
        inv = build_inventory(['ca', 'co'])
        C, a, o = inv.id_of('C'), inv.id_of('a'), inv.id_of('o')
        probs = np.full((2, inv.size), 1e-3)
        probs[0, C] = 0.9
        probs[1, o], probs[1, a], probs[1, BLANK_ID] = 0.5, 0.45, 0.05
        probs /= probs.sum(axis=1, keepdims=True)
        grid = PosteriorGrid(probs)

        lm = train_ngram([encode('ca', inv)] * 20, order=3, vocab=range(1, inv.size))
        greedy = greedy_decode(grid, inv)
        beam = beam_decode(grid, inv, lm, beam_width=10, lm_weight=1.0, insertion_bonus=0.0)
        assert greedy.text == 'co'
        assert beam.text == 'ca'

        plain = beam_decode(grid, inv, None, beam_width=10, lm_weight=0.0, insertion_bonus=0.0)
        assert plain.text == 'co'

    def test_nbest_sorted(self, small_inv):
        grid = random_grid(np.random.default_rng(3), 6, small_inv.size)
        result = beam_decode(grid, small_inv, None, beam_width=8, nbest=3)
        scores = [s for _, _, s in result.nbest]
        assert len(result.nbest) == 3
        assert scores == sorted(scores, reverse=True)
        assert result.nbest[0][1] == result.ids

    def test_unit_cutoff_prunes(self, small_inv):
        grid = random_grid(np.random.default_rng(4), 5, small_inv.size)
        result = beam_decode(grid, small_inv, None, beam_width=5, unit_cutoff=0.999)
        assert result.ids == ()

    def test_bad_width(self, small_inv):
        with pytest.raises(ConfigError):
            beam_decode(random_grid(np.random.default_rng(0), 2, small_inv.size), small_inv, beam_width=0)


class TestDataset:
    def test_workers_preserve_order(self, tiny_params, tiny_dataset, small_inv):
        serial = decode_dataset(tiny_params, tiny_dataset, small_inv, DecodeConfig())
        threaded = decode_dataset(tiny_params, tiny_dataset, small_inv, DecodeConfig(workers=3))
        assert [r.utt_id for r in threaded] == [u.utt_id for u in tiny_dataset]
        assert [r.ids for r in serial] == [r.ids for r in threaded]


class TestIteratedCtc:
    def test_corrupt_rates(self, small_inv):
        rng = np.random.default_rng(0)
        ids = encode('yes he has one', small_inv).ids
        assert corrupt_ids(ids, small_inv, 0.0, rng) == ids
        noisy = corrupt_ids(ids, small_inv, 1.0, rng)
        assert all(a != b for a, b in zip(ids, noisy))
        assert BLANK_ID not in noisy

    def test_dataset_skips_empty_first_pass(self, small_inv):
        refs = {'u1': encode('yes', small_inv), 'u2': encode('he', small_inv)}
        first = [('u1', refs['u1'].ids), ('u2', ())]
        data = ctc2_dataset(first, refs, small_inv.size, upsample=3)
        assert [u.utt_id for u in data] == ['u1']
        assert data.skipped == ['u2']
        assert data[0].features.shape == (9, small_inv.size)

    def test_apply_on_empty_input(self, small_inv):
        params = init_params(ctc2_net_config(Ctc2Config(hidden_dim=8, num_layers=1), small_inv.size), 0)
        result = ctc2_apply(params, DecodeResult('', (), 0.0, utt_id='x'), small_inv)
        assert result.ids == () and result.text == '' and result.utt_id == 'x'

    def test_apply_returns_rendered_units(self, small_inv):
        params = init_params(ctc2_net_config(Ctc2Config(hidden_dim=64, num_layers=1), small_inv.size), 0)
        first = encode('yes he', small_inv).ids
        result = ctc2_apply(params, first, small_inv)
        assert BLANK_ID not in result.ids
        assert isinstance(result.text, str)


@pytest.mark.slow
def test_second_pass_learns_to_undo_substitutions():
    """Controlled corruption task: corrected CER below input CER on held-out data."""
    from src.decode import ctc2_train
    from src.inventory import decode_ids
    from src.scoring import score_corpus
    from src.synth import LEXICON

    rng = np.random.default_rng(0)
    words = LEXICON[:10]
    texts = [' '.join(rng.choice(words, size=int(rng.integers(1, 3)))) for _ in range(240)]
    inv = build_inventory(texts)
    refs = {f"u{i}": encode(t, inv) for i, t in enumerate(texts)}
    noisy = [(k, corrupt_ids(v.ids, inv, 0.2, rng)) for k, v in refs.items()]
    train_pass, held_out = noisy[:200], noisy[200:]

    params = ctc2_train(train_pass, refs, inv, Ctc2Config(hidden_dim=64, num_layers=2, max_epochs=15,
                                                          learning_rate=0.05),
                        TrainConfig(batch_size=8, momentum=0.9), seed=0, dev_pass=held_out)
    before = score_corpus([(k, refs[k].text, decode_ids(ids, inv)) for k, ids in held_out], 'char')
    after = score_corpus([(k, refs[k].text, ctc2_apply(params, ids, inv).text) for k, ids in held_out], 'char')
    assert before.error_rate > 0
    assert (before.error_rate - after.error_rate) / before.error_rate >= 0.25
