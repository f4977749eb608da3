"""
Unit-level n-gram language model
================================

Interpolated Witten-Bell estimates over inventory units:

    P(w | h) = (c(h, w) + N1+(h .) * P(w | h')) / (c(h) + N1+(h .))

with h' the history minus its oldest unit and a uniform distribution
below the unigram level. Estimates are stored in backoff form (the
interpolated probability of every seen (h, w) plus the weight
N1+(h .) / (c(h) + N1+(h .)) of every seen h), in log10, which makes the
text file reload bit-exact.

Sentence boundaries are the integer sentinels BOS (-1) and EOS (-2),
written ``<s>`` and ``</s>`` in files.
"""

import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

from src.app_logging import get_logger
from src.errors import ConfigError, DataError
from src.inventory import EncodedSequence

logger = get_logger(__name__)

BOS = -1
EOS = -2
LN10 = math.log(10.0)

_TOKEN_NAMES = {BOS: '<s>', EOS: '</s>'}
_TOKEN_IDS = {v: k for k, v in _TOKEN_NAMES.items()}

Context = Tuple[int, ...]


@dataclass
class CharNGram:
    """Trained n-gram tables (immutable after training)."""
    order: int
    vocab: Tuple[int, ...]                       # predictable tokens, EOS included when modeled
    sentence_end: bool
    probs: Dict[Context, Dict[int, float]] = field(default_factory=dict)    # log10 P(w | h)
    backoffs: Dict[Context, float] = field(default_factory=dict)            # log10 weight of h

    def __post_init__(self):
        self._vocab_set = frozenset(self.vocab)
        self._base = -math.log10(len(self.vocab))

    @property
    def models_eos(self) -> bool:
        return self.sentence_end

    def log10_prob(self, context: Sequence[int], unit: int) -> float:
        """log10 P(unit | last order-1 units of context)."""
        if unit not in self._vocab_set:
            raise DataError(f"Unit {_token_str(unit)} is not in the language model vocabulary")
        h = tuple(context)[-(self.order - 1):] if self.order > 1 else ()
        return self._log10(h, unit)

    def _log10(self, h: Context, unit: int) -> float:
        total = 0.0
        while True:
            table = self.probs.get(h)
            if table is not None:
                if unit in table:
                    return total + table[unit]
                total += self.backoffs[h]
            if not h:
                return total + self._base
            h = h[1:]

    def __eq__(self, other) -> bool:
        if not isinstance(other, CharNGram):
            return NotImplemented
        return (self.order == other.order and self.vocab == other.vocab
                and self.sentence_end == other.sentence_end
                and self.probs == other.probs and self.backoffs == other.backoffs)


def _as_ids(sentence: Union[EncodedSequence, Sequence[int]]) -> List[int]:
    if isinstance(sentence, EncodedSequence):
        return list(sentence.ids)
    return [int(i) for i in sentence]


def _token_str(token: int) -> str:
    return _TOKEN_NAMES.get(token, str(token))


def _token_parse(text: str) -> int:
    return _TOKEN_IDS[text] if text in _TOKEN_IDS else int(text)


# ============================================================================
# TRAINING
# ============================================================================

def train_ngram(corpus: Iterable[Union[EncodedSequence, Sequence[int]]], order: int,
                sentence_end: bool = True, vocab: Optional[Iterable[int]] = None) -> CharNGram:
    """
    Estimate an interpolated Witten-Bell n-gram.

    Args:
        corpus: unit-id sequences (no blanks)
        order: n >= 1
        sentence_end: predict ``</s>`` after every sentence
        vocab: extra unit ids to include even if unseen

    Raises:
        ConfigError: order < 1
        DataError: empty corpus or a negative unit id
    """
    if order < 1:
        raise ConfigError(f"n-gram order must be >= 1, got {order}")

    counts: Dict[Context, Dict[int, int]] = defaultdict(lambda: defaultdict(int))
    seen = set()
    sentences = 0
    for sentence in corpus:
        ids = _as_ids(sentence)
        if any(i < 0 for i in ids):
            raise DataError('Corpus sentences must not contain sentinel or negative ids')
        sentences += 1
        tokens = [BOS] + ids + ([EOS] if sentence_end else [])
        for pos in range(1, len(tokens)):
            unit = tokens[pos]
            seen.add(unit)
            for k in range(0, min(order - 1, pos) + 1):
                counts[tuple(tokens[pos - k:pos])][unit] += 1
    if sentences == 0 or not seen:
        raise DataError('Cannot train a language model on an empty corpus')

    full_vocab = set(seen) | set(int(v) for v in (vocab or []))
    if sentence_end:
        full_vocab.add(EOS)
    vocab_sorted = tuple(sorted(full_vocab))
    base = 1.0 / len(vocab_sorted)

    # shorter contexts first so lower-order estimates are ready
    linear: Dict[Context, Dict[int, float]] = {}
    weights: Dict[Context, float] = {}

    def lower(h: Context, unit: int) -> float:
        while True:
            table = linear.get(h)
            if table is not None:
                if unit in table:
                    return table[unit]
                scale = weights[h]
                return scale * lower(h[1:], unit) if h else scale * base
            if not h:
                return base
            h = h[1:]

    for h in sorted(counts, key=lambda c: (len(c), c)):
        table = counts[h]
        c_h = sum(table.values())
        types = len(table)
        denom = c_h + types
        linear[h] = {w: (c + types * (lower(h[1:], w) if h else base)) / denom
                     for w, c in sorted(table.items())}
        weights[h] = types / denom

    lm = CharNGram(order, vocab_sorted, sentence_end,
                   {h: {w: math.log10(p) for w, p in t.items()} for h, t in linear.items()},
                   {h: math.log10(b) for h, b in weights.items()})
    logger.debug(f"Trained {order}-gram over {sentences} sentences, {len(vocab_sorted)} tokens")
    return lm


def score(lm: CharNGram, context: Sequence[int], next_unit: int) -> float:
    """
    Natural-log probability of ``next_unit`` after ``context``.

    Only the last order-1 context units matter. No sentence-begin marker
    is added: pass ``[BOS] + prefix`` to score from the sentence start.

    Raises:
        DataError: ``next_unit`` not in the vocabulary
    """
    return lm.log10_prob(context, next_unit) * LN10


def sentence_logprob(lm: CharNGram, ids: Sequence[int]) -> float:
    """Natural-log probability of a full sentence, ``</s>`` included when modeled."""
    context = [BOS]
    total = 0.0
    events = list(ids) + ([EOS] if lm.models_eos else [])
    for unit in events:
        total += score(lm, context, unit)
        context.append(unit)
    return total


def perplexity(lm: CharNGram, corpus: Iterable[Union[EncodedSequence, Sequence[int]]]) -> float:
    """Per-event perplexity over a corpus."""
    total, events = 0.0, 0
    for sentence in corpus:
        ids = _as_ids(sentence)
        total += sentence_logprob(lm, ids)
        events += len(ids) + (1 if lm.models_eos else 0)
    if events == 0:
        raise DataError('Cannot compute perplexity of an empty corpus')
    return math.exp(-total / events)


# ============================================================================
# FILE FORMAT
# ============================================================================

def _ctx_str(h: Context) -> str:
    return ' '.join(_token_str(t) for t in h) if h else '-'


def _ctx_parse(text: str) -> Context:
    return () if text == '-' else tuple(_token_parse(t) for t in text.split(' '))


def save_ngram(lm: CharNGram, path) -> Path:
    """
    Write the sorted text format:

        \\data\\
        order=<n>
        sentence_end=<0|1>
        vocab=<tokens>
        \\k-grams:           one section per order, lines context<TAB>unit<TAB>log10prob
        \\backoff:           lines context<TAB>log10weight
        \\end\\
    """
    lines = ['\\data\\', f"order={lm.order}", f"sentence_end={int(lm.sentence_end)}",
             'vocab=' + ' '.join(_token_str(t) for t in lm.vocab)]
    for k in range(1, lm.order + 1):
        lines.append(f"\\{k}-grams:")
        for h in sorted(c for c in lm.probs if len(c) == k - 1):
            for w, lp in sorted(lm.probs[h].items()):
                lines.append(f"{_ctx_str(h)}\t{_token_str(w)}\t{lp!r}")
    lines.append('\\backoff:')
    for h in sorted(lm.backoffs, key=lambda c: (len(c), c)):
        lines.append(f"{_ctx_str(h)}\t{lm.backoffs[h]!r}")
    lines.append('\\end\\')

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text('\n'.join(lines) + '\n', encoding='utf-8')
    return path


def load_ngram(path) -> CharNGram:
    """Read a model written by ``save_ngram``."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"Language model not found: {path}")
    lines = path.read_text(encoding='utf-8').splitlines()
    if not lines or lines[0] != '\\data\\':
        raise DataError(f"{path} is not a language model file")

    header = {}
    idx = 1
    while idx < len(lines) and '=' in lines[idx] and not lines[idx].startswith('\\'):
        key, value = lines[idx].split('=', 1)
        header[key] = value
        idx += 1
    try:
        order = int(header['order'])
        sentence_end = header['sentence_end'] == '1'
        vocab = tuple(_token_parse(t) for t in header['vocab'].split(' '))
    except (KeyError, ValueError) as e:
        raise DataError(f"{path}: malformed header ({e})")

    probs: Dict[Context, Dict[int, float]] = {}
    backoffs: Dict[Context, float] = {}
    section = None
    for line_no, line in enumerate(lines[idx:], start=idx + 1):
        if not line:
            continue
        if line.startswith('\\'):
            section = line
            continue
        fields = line.split('\t')
        try:
            if section == '\\backoff:':
                backoffs[_ctx_parse(fields[0])] = float(fields[1])
            else:
                probs.setdefault(_ctx_parse(fields[0]), {})[_token_parse(fields[1])] = float(fields[2])
        except (IndexError, ValueError, KeyError):
            raise DataError(f"{path}:{line_no}: malformed line")
    if section != '\\end\\':
        raise DataError(f"{path} is truncated")
    return CharNGram(order, vocab, sentence_end, probs, backoffs)
