"""
Error-rate scoring
==================

Word and character error rates from a minimum edit-distance alignment
with unit costs. On equal cost the backtrace prefers a substitution
(or match), then a deletion, then an insertion.

Corpus rates are computed from summed counts, never as the mean of
per-utterance rates.
"""

from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from src.errors import DataError
from src.inventory import normalize_text

TOKEN_MODES = ('word', 'char')


@dataclass
class ScoreReport:
    """Error counts over one utterance or a corpus."""
    substitutions: int = 0
    insertions: int = 0
    deletions: int = 0
    ref_tokens: int = 0
    mode: str = 'word'
    utterances: List[Dict] = field(default_factory=list)

    @property
    def errors(self) -> int:
        return self.substitutions + self.insertions + self.deletions

    @property
    def error_rate(self) -> float:
        """Percentage (S + I + D) / N * 100."""
        if self.ref_tokens == 0:
            raise DataError('Error rate undefined for an empty reference')
        return 100.0 * self.errors / self.ref_tokens

    def add(self, other: 'ScoreReport'):
        self.substitutions += other.substitutions
        self.insertions += other.insertions
        self.deletions += other.deletions
        self.ref_tokens += other.ref_tokens

    def summary(self) -> Dict:
        data = asdict(self)
        data.pop('utterances')
        data['errors'] = self.errors
        data['error_rate'] = round(self.error_rate, 4) if self.ref_tokens else None
        data['num_utterances'] = len(self.utterances)
        return data


def tokenize(text: str, mode: str = 'word') -> List[str]:
    """Normalized word tokens, or characters with spaces removed."""
    if mode not in TOKEN_MODES:
        raise ValueError(f"Token mode must be one of {TOKEN_MODES}, got '{mode}'")
    text = normalize_text(text)
    if mode == 'word':
        return text.split()
    return [ch for ch in text if ch != ' ']


def align(ref: Sequence, hyp: Sequence) -> Tuple[int, List[Tuple[str, object, object]]]:
    """
    Edit distance and alignment operations.

    Returns:
        (distance, ops) where ops are ('ok' | 'sub' | 'del' | 'ins', ref_token, hyp_token)
    """
    n, m = len(ref), len(hyp)
    cost = np.zeros((n + 1, m + 1), dtype=np.int64)
    cost[:, 0] = np.arange(n + 1)
    cost[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            diag = cost[i - 1, j - 1] + (0 if ref[i - 1] == hyp[j - 1] else 1)
            cost[i, j] = min(diag, cost[i - 1, j] + 1, cost[i, j - 1] + 1)

    ops = []
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0:
            same = ref[i - 1] == hyp[j - 1]
            if cost[i, j] == cost[i - 1, j - 1] + (0 if same else 1):
                ops.append(('ok' if same else 'sub', ref[i - 1], hyp[j - 1]))
                i, j = i - 1, j - 1
                continue
        if i > 0 and cost[i, j] == cost[i - 1, j] + 1:
            ops.append(('del', ref[i - 1], None))
            i -= 1
        else:
            ops.append(('ins', None, hyp[j - 1]))
            j -= 1
    ops.reverse()
    return int(cost[n, m]), ops


def edit_distance(a: Sequence, b: Sequence) -> int:
    return align(a, b)[0]


def wer(ref: str, hyp: str, mode: str = 'word') -> ScoreReport:
    """
    Score one hypothesis against its reference.

    Raises:
        DataError: empty reference
    """
    ref_tokens = tokenize(ref, mode)
    if not ref_tokens:
        raise DataError('Cannot score against an empty reference')
    _, ops = align(ref_tokens, tokenize(hyp, mode))
    kinds = [op[0] for op in ops]
    return ScoreReport(kinds.count('sub'), kinds.count('ins'), kinds.count('del'), len(ref_tokens), mode)


def cer(ref: str, hyp: str) -> ScoreReport:
    return wer(ref, hyp, 'char')


def score_corpus(pairs: Iterable[Tuple[str, str, str]], mode: str = 'word') -> ScoreReport:
    """
    Corpus report from (utt_id, reference, hypothesis) triples.

    Raises:
        DataError: no pairs, or an empty reference (names the utterance)
    """
    total = ScoreReport(mode=mode)
    for utt_id, ref, hyp in pairs:
        try:
            report = wer(ref, hyp, mode)
        except DataError:
            raise DataError(f"Empty reference for utterance '{utt_id}'")
        total.add(report)
        total.utterances.append({
            'utt_id': utt_id,
            'ref': normalize_text(ref),
            'hyp': normalize_text(hyp),
            'sub': report.substitutions,
            'ins': report.insertions,
            'del': report.deletions,
            'ref_tokens': report.ref_tokens,
            'error_rate': round(report.error_rate, 4),
        })
    if not total.utterances:
        raise DataError('Nothing to score')
    return total


def match_references(refs: Dict[str, str], hyps: Dict[str, str]) -> List[Tuple[str, str, str]]:
    """Pair hypotheses with references by utterance id; a missing hypothesis counts as empty."""
    extra = sorted(set(hyps) - set(refs))
    if extra:
        raise DataError(f"Hypotheses without reference: {', '.join(extra[:5])}")
    return [(utt_id, refs[utt_id], hyps.get(utt_id, '')) for utt_id in sorted(refs)]
