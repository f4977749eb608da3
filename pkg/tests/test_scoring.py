import pytest
from hypothesis import given, strategies as st

from src.errors import DataError
from src.scoring import align, cer, edit_distance, match_references, score_corpus, tokenize, wer


class TestWer:
    def test_exact_match(self):
        report = wer('a b c', 'a b c')
        assert report.errors == 0
        assert report.error_rate == 0.0

    def test_one_substitution(self):
        report = wer('a b c', 'a x c')
        assert report.substitutions == 1
        assert report.error_rate == pytest.approx(100 / 3)

    def test_deletion_and_insertion(self):
        assert wer('a b c', 'a c').deletions == 1
        report = wer('a b c d', 'a b c d e f')
        assert report.insertions == 2
        assert report.error_rate == pytest.approx(50.0)

    def test_rate_can_exceed_100(self):
        assert wer('a', 'x y z').error_rate == pytest.approx(300.0)

    def test_case_and_spacing_ignored(self):
        assert wer('Hello  World', 'hello world').errors == 0

    def test_empty_hypothesis_is_all_deletions(self):
        report = wer('a b c', '')
        assert report.deletions == 3
        assert report.error_rate == 100.0

    def test_empty_reference(self):
        with pytest.raises(DataError):
            wer('', 'a')

    def test_cer_ignores_spaces(self):
        report = cer('ab cd', 'abcd')
        assert report.ref_tokens == 4
        assert report.errors == 0

    def test_cer_counts_characters(self):
        assert cer('abcd', 'abed').error_rate == pytest.approx(25.0)


class TestAlign:
    def test_substitution_preferred_on_tie(self):
        _, ops = align(['a'], ['b'])
        assert ops == [('sub', 'a', 'b')]

    def test_operations_cover_both_sides(self):
        distance, ops = align(list('kitten'), list('sitting'))
        assert distance == 3
        assert [r for _, r, _ in ops if r is not None] == list('kitten')
        assert [h for _, _, h in ops if h is not None] == list('sitting')

    def test_unknown_token_mode(self):
        with pytest.raises(ValueError):
            tokenize('a b', 'phone')

    @given(st.text('abc', max_size=6), st.text('abc', max_size=6), st.text('abc', max_size=6))
    def test_triangle_inequality(self, a, b, c):
        assert edit_distance(a, c) <= edit_distance(a, b) + edit_distance(b, c)

    @given(st.text('abc', max_size=8), st.text('abc', max_size=8))
    def test_symmetric_and_bounded(self, a, b):
        d = edit_distance(a, b)
        assert d == edit_distance(b, a)
        assert abs(len(a) - len(b)) <= d <= max(len(a), len(b))


class TestCorpus:
    def test_rate_from_summed_counts(self):
        report = score_corpus([('u1', 'a b c d', 'a b c d'), ('u2', 'a', 'b')])
        # 1 error over 5 tokens, not the mean of 0 % and 100 %
        assert report.error_rate == pytest.approx(20.0)
        assert [u['utt_id'] for u in report.utterances] == ['u1', 'u2']

    def test_empty_reference_names_utterance(self):
        with pytest.raises(DataError, match='u2'):
            score_corpus([('u1', 'a', 'a'), ('u2', '', 'b')])

    def test_nothing_to_score(self):
        with pytest.raises(DataError):
            score_corpus([])

    def test_summary(self):
        summary = score_corpus([('u1', 'a b', 'a')], 'char').summary()
        assert summary['mode'] == 'char'
        assert summary['error_rate'] == 50.0
        assert summary['num_utterances'] == 1


class TestMatchReferences:
    def test_missing_hypothesis_is_empty(self):
        pairs = match_references({'b': 'x', 'a': 'y'}, {'a': 'y'})
        assert pairs == [('a', 'y', 'y'), ('b', 'x', '')]

    def test_extra_hypothesis(self):
        with pytest.raises(DataError, match='zz'):
            match_references({'a': 'y'}, {'a': 'y', 'zz': 'q'})
