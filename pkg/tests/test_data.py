import json

import numpy as np
import pytest

from src.data_loader import dataset_from_arrays, load_dataset, read_manifest, read_transcripts
from src.errors import ConfigError, DataError
from src.file_validator import ManifestValidator, validate_all_files
from src.inventory import EncodedSequence, build_inventory, encode
from src.synth import LEXICON, SynthConfig, SynthDefaults, SyntheticCorpus, generate, load_lexicon


def write_tsv(path, rows):
    path.write_text('\n'.join('\t'.join(r) for r in rows) + '\n', encoding='utf-8')
    return path


class TestValidator:
    def test_valid_manifest(self, tmp_path):
        np.save(tmp_path / 'a.npy', np.zeros((4, 2)))
        path = write_tsv(tmp_path / 'm.tsv', [('a', 'a.npy', 'hello there')])
        ok, errors, info = ManifestValidator.validate_file(path, 'manifest')
        assert ok and errors == []
        assert info['rows'] == 1

    def test_missing_file(self, tmp_path):
        ok, errors, _ = ManifestValidator.validate_file(tmp_path / 'none.tsv')
        assert not ok
        assert 'Fichier introuvable' in errors[0]

    def test_wrong_column_count(self, tmp_path):
        path = write_tsv(tmp_path / 'm.tsv', [('a', 'a.npy', 'hi'), ('b', 'b.npy')])
        ok, errors, _ = ManifestValidator.validate_file(path, check_paths=False)
        assert not ok
        assert errors == ['Ligne 2: 2 colonne(s), 3 attendue(s)']

    def test_duplicate_ids_and_bad_rows(self, tmp_path):
        path = write_tsv(tmp_path / 'm.tsv', [('a', 'a.npy', 'hi'), ('a', 'b.mp3', 'ok'), ('c', 'c.npy', '!!')])
        ok, errors, _ = ManifestValidator.validate_file(path, check_paths=False)
        assert not ok
        joined = '\n'.join(errors)
        assert 'Identifiants dupliqués: a' in joined
        assert 'extension non supportée' in joined
        assert 'transcription vide' in joined

    def test_unsupported_character(self, tmp_path):
        path = write_tsv(tmp_path / 'm.tsv', [('a', 'a.npy', 'café')])
        ok, errors, _ = ManifestValidator.validate_file(path, check_paths=False)
        assert not ok
        assert 'non supporté' in errors[0]

    def test_normalization_is_a_warning(self, tmp_path):
        path = write_tsv(tmp_path / 'm.tsv', [('a', 'a.npy', 'Hello There')])
        ok, _, info = ManifestValidator.validate_file(path, check_paths=False)
        assert ok
        assert info['warnings']

    def test_hypotheses_need_numeric_score(self, tmp_path):
        path = write_tsv(tmp_path / 'h.tsv', [('a', 'hi', '-1.5'), ('b', 'yo', 'n/a')])
        ok, errors, _ = ManifestValidator.validate_file(path, 'hypotheses')
        assert not ok
        assert 'Score non numérique' in errors[0]

    def test_sniff_type(self, tmp_path):
        assert ManifestValidator.sniff_type(write_tsv(tmp_path / 't.tsv', [('a', 'hi')])) == 'transcripts'
        assert ManifestValidator.sniff_type(write_tsv(tmp_path / 'h.tsv', [('a', 'hi', '-2.0')])) == 'hypotheses'
        assert ManifestValidator.sniff_type(write_tsv(tmp_path / 'm.tsv', [('a', 'a.npy', 'hi')])) == 'manifest'

    def test_batch_detects_types(self, tmp_path):
        np.save(tmp_path / 'a.npy', np.zeros((4, 2)))
        transcripts = write_tsv(tmp_path / 't.tsv', [('a', 'hi'), ('b', 'yo')])
        manifest = write_tsv(tmp_path / 'm.tsv', [('a', 'a.npy', 'hi')])
        all_valid, results = validate_all_files(transcripts, manifest, None)
        assert all_valid
        assert results[str(transcripts)]['info']['type'] == 'transcripts'
        assert results[str(transcripts)]['info']['rows'] == 2
        assert results[str(manifest)]['info']['type'] == 'manifest'

    def test_batch_reports_missing_file(self, tmp_path):
        all_valid, results = validate_all_files(tmp_path / 'missing.tsv')
        assert not all_valid and len(results) == 1


class TestLoader:
    def test_load_synthetic_split(self, synth_corpus):
        out, manifests = synth_corpus
        df = read_manifest(manifests['train'])
        inv = build_inventory(df['transcript'].tolist())
        data = load_dataset(manifests['train'], inv, name='train')
        assert len(data) + len(data.skipped) == 12
        assert data.input_dim == 3 * 8
        assert all(u.path.exists() for u in data)
        assert data.by_id()[data[0].utt_id] is data[0]

    def test_threaded_load_matches(self, synth_corpus):
        _, manifests = synth_corpus
        inv = build_inventory(read_manifest(manifests['dev'])['transcript'].tolist())
        serial = load_dataset(manifests['dev'], inv)
        threaded = load_dataset(manifests['dev'], inv, workers=2)
        assert [u.utt_id for u in serial] == [u.utt_id for u in threaded]
        assert all(np.array_equal(a.features, b.features) for a, b in zip(serial, threaded))

    def test_malformed_manifest(self, tmp_path, small_inv):
        path = write_tsv(tmp_path / 'm.tsv', [('a', 'missing.npy', 'yes')])
        with pytest.raises(DataError, match='introuvable'):
            load_dataset(path, small_inv)

    def test_read_transcripts_from_any_table(self, tmp_path, synth_corpus):
        _, manifests = synth_corpus
        refs = read_transcripts(manifests['test'])
        assert list(refs.columns) == ['utt_id', 'transcript'] and len(refs) == 4
        hyp = read_transcripts(write_tsv(tmp_path / 'h.tsv', [('a', 'hi', '-1.0')]))
        assert hyp.iloc[0]['transcript'] == 'hi'
        with pytest.raises(DataError):
            read_transcripts(tmp_path / 'none.tsv')

    def test_arrays_skip_unalignable(self, small_inv):
        targets = [encode('yes', small_inv), encode('hello', small_inv), EncodedSequence((), '')]
        feats = [np.zeros((3, 2)), np.zeros((2, 2)), np.zeros((5, 2))]
        data = dataset_from_arrays(['ok', 'short', 'empty'], feats, targets, 'mixed')
        assert [u.utt_id for u in data] == ['ok']
        assert data.skipped == ['short', 'empty']

    def test_empty_dataset_has_no_input_dim(self):
        with pytest.raises(DataError):
            dataset_from_arrays([], [], [], 'none').input_dim


class TestSynth:
    def test_generate_layout(self, synth_corpus):
        out, manifests = synth_corpus
        assert set(manifests) == {'train', 'dev', 'test'}
        assert len(list((out / 'feats').glob('*.npy'))) == 20
        assert load_lexicon(out) == list(LEXICON[:6])
        assert json.loads((out / 'synth_config.json').read_text())['seed'] == 5

    def test_deterministic_bytes(self, tmp_path):
        cfg = SynthConfig(vocab_size=4, train_utterances=3, dev_utterances=1, test_utterances=1, dim=4, seed=9)
        generate(cfg, tmp_path / 'a')
        generate(cfg, tmp_path / 'b')
        for name in ('train.tsv', 'feats/train-00002.npy', 'feats/test-00000.npy'):
            assert (tmp_path / 'a' / name).read_bytes() == (tmp_path / 'b' / name).read_bytes()

    def test_noise_free_sample_is_templates(self):
        corpus = SyntheticCorpus(SynthConfig(vocab_size=3, noise=0.0, dim=5, min_words=1, max_words=1))
        text, feats = corpus.sample(np.random.default_rng(0))
        gap = SynthDefaults.GAP_FRAMES
        assert np.array_equal(feats[gap:-gap], corpus.templates[text])
        assert np.all(feats[:gap] == -1.0)

    def test_every_word_is_alignable_after_stacking(self):
        corpus = SyntheticCorpus(SynthConfig(dim=2))
        inv = build_inventory(list(corpus.words))
        for word, template in corpus.templates.items():
            assert len(template) // 3 >= len(encode(word, inv))

    def test_domain_shift_writes_indomain_splits(self, tmp_path):
        cfg = SynthConfig(vocab_size=3, train_utterances=2, dev_utterances=1, test_utterances=1, dim=3,
                          domain_shift=0.5, indomain_utterances=4)
        manifests = generate(cfg, tmp_path)
        assert {'indomain', 'indomain_dev'} <= set(manifests)

    def test_bad_vocab_size(self):
        with pytest.raises(ConfigError):
            SynthConfig(vocab_size=len(LEXICON) + 1).validate()
