"""
Synthetic corpus generator
==========================

Builds a small, learnable recognition task without any audio:

- every lexicon word has a smooth D-dimensional trajectory (cubic spline
  through random control points) of 8-20 frames;
- an utterance is a random word sequence, words separated by short
  low-energy gaps, plus Gaussian noise;
- an optional per-dimension gain warp produces a shifted "in-domain"
  subset for polishing experiments.

Output: ``feats/<utt-id>.npy`` matrices and ``train.tsv`` / ``dev.tsv`` /
``test.tsv`` manifests (``indomain.tsv`` / ``indomain_dev.tsv`` when a
domain shift is requested), with paths relative to the manifest.
"""

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.interpolate import CubicSpline

from src.app_logging import get_logger
from src.errors import ConfigError
from src.inventory import Scheme, normalize_text, segment

logger = get_logger(__name__)

# doubles and apostrophes on purpose
LEXICON = (
    'hello', 'yes', 'he', 'has', 'one', 'all', 'see', 'look', 'good', 'need',
    'off', 'will', 'call', 'bell', 'too', 'feel', 'book', 'keep', 'little', 'apple',
    'coffee', 'butter', 'summer', 'letter', 'door', 'moon', 'green', 'tree', 'food', 'cool',
    "don't", "it's", "i'm", "we'll", "can't", "you're", "that's", "i'd", "she'll", "'cause",
    'cat', 'dog', 'run', 'sun', 'map', 'red', 'blue', 'stop', 'fish', 'bird',
)


class SynthDefaults:
    """Default synthetic task"""
    VOCAB_SIZE = 50
    TRAIN_UTTERANCES = 2000
    DEV_UTTERANCES = 200
    TEST_UTTERANCES = 200
    NOISE = 0.1
    DIM = 40
    MIN_WORDS = 2
    MAX_WORDS = 5
    MIN_WORD_FRAMES = 8
    MAX_WORD_FRAMES = 20
    GAP_FRAMES = 3
    CONTROL_POINTS = 5
    FRAMES_PER_UNIT = 3      # frames are stacked by 3 before the network


@dataclass
class SynthConfig:
    vocab_size: int = SynthDefaults.VOCAB_SIZE
    train_utterances: int = SynthDefaults.TRAIN_UTTERANCES
    dev_utterances: int = SynthDefaults.DEV_UTTERANCES
    test_utterances: int = SynthDefaults.TEST_UTTERANCES
    noise: float = SynthDefaults.NOISE
    seed: int = 0
    dim: int = SynthDefaults.DIM
    min_words: int = SynthDefaults.MIN_WORDS
    max_words: int = SynthDefaults.MAX_WORDS
    domain_shift: float = 0.0
    indomain_utterances: int = 0

    def validate(self):
        if not 1 <= self.vocab_size <= len(LEXICON):
            raise ConfigError(f"vocab_size must lie in 1..{len(LEXICON)}, got {self.vocab_size}")
        if self.noise < 0 or self.domain_shift < 0:
            raise ConfigError('noise and domain_shift must be >= 0')
        if not 1 <= self.min_words <= self.max_words:
            raise ConfigError('need 1 <= min_words <= max_words')
        if min(self.train_utterances, self.dev_utterances, self.test_utterances,
               self.indomain_utterances) < 0:
            raise ConfigError('utterance counts must be >= 0')
        return self


def word_frames(word: str, rng: np.random.Generator) -> int:
    """Template length: 8-20 frames, at least 3 per unit so stacking keeps it alignable."""
    units = len(segment(normalize_text(word), Scheme.CAPITAL_INITIAL))
    low = max(SynthDefaults.MIN_WORD_FRAMES, SynthDefaults.FRAMES_PER_UNIT * units)
    high = max(low, SynthDefaults.MAX_WORD_FRAMES)
    return int(rng.integers(low, high + 1))


def word_templates(words: Tuple[str, ...], dim: int, seed: int) -> Dict[str, np.ndarray]:
    """One smooth L x dim trajectory per word, deterministic by seed."""
    templates = {}
    for idx, word in enumerate(words):
        rng = np.random.default_rng([seed, idx])
        length = word_frames(word, rng)
        knots = np.linspace(0.0, 1.0, SynthDefaults.CONTROL_POINTS)
        points = rng.normal(0.0, 1.0, size=(SynthDefaults.CONTROL_POINTS, dim))
        spline = CubicSpline(knots, points, axis=0)
        templates[word] = spline(np.linspace(0.0, 1.0, length))
    return templates


class SyntheticCorpus:
    """Samples utterances from the word templates."""

    def __init__(self, cfg: SynthConfig):
        self.cfg = cfg.validate()
        self.words = LEXICON[:cfg.vocab_size]
        self.templates = word_templates(self.words, cfg.dim, cfg.seed)
        gain_rng = np.random.default_rng([cfg.seed, 7919])
        self.gain = 1.0 + cfg.domain_shift * gain_rng.normal(0.0, 1.0, size=cfg.dim)
        self._gap = np.full((SynthDefaults.GAP_FRAMES, cfg.dim), -1.0)

    def sample(self, rng: np.random.Generator, shifted: bool = False) -> Tuple[str, np.ndarray]:
        """One (transcript, T x dim features) pair."""
        n_words = int(rng.integers(self.cfg.min_words, self.cfg.max_words + 1))
        chosen = [self.words[int(i)] for i in rng.integers(0, len(self.words), size=n_words)]
        parts: List[np.ndarray] = [self._gap]
        for word in chosen:
            parts.append(self.templates[word])
            parts.append(self._gap)
        feats = np.vstack(parts)
        if self.cfg.noise > 0:
            feats = feats + self.cfg.noise * rng.normal(0.0, 1.0, size=feats.shape)
        if shifted:
            feats = feats * self.gain
        return ' '.join(chosen), feats


def _write_split(corpus: SyntheticCorpus, out_dir: Path, split: str, count: int,
                 rng: np.random.Generator, shifted: bool = False) -> Path:
    feat_dir = out_dir / 'feats'
    feat_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for i in range(count):
        utt_id = f"{split}-{i:05d}"
        text, feats = corpus.sample(rng, shifted)
        np.save(feat_dir / f"{utt_id}.npy", feats)
        rows.append((utt_id, f"feats/{utt_id}.npy", text))
    manifest = out_dir / f"{split}.tsv"
    pd.DataFrame(rows).to_csv(manifest, sep='\t', header=False, index=False)
    return manifest


def generate(cfg: SynthConfig, out_dir) -> Dict[str, Path]:
    """
    Write the synthetic corpus under ``out_dir``.

    Returns:
        split name -> manifest path
    """
    corpus = SyntheticCorpus(cfg)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    splits = [('train', cfg.train_utterances, False),
              ('dev', cfg.dev_utterances, False),
              ('test', cfg.test_utterances, False)]
    if cfg.domain_shift > 0 and cfg.indomain_utterances > 0:
        splits += [('indomain', cfg.indomain_utterances, True),
                   ('indomain_dev', max(1, cfg.indomain_utterances // 4), True)]

    manifests = {}
    for offset, (split, count, shifted) in enumerate(splits):
        if count == 0:
            continue
        rng = np.random.default_rng([cfg.seed, 100 + offset])
        manifests[split] = _write_split(corpus, out_dir, split, count, rng, shifted)
        print(f"✓ {split}: {count} utterances -> {manifests[split]}")

    (out_dir / 'lexicon.txt').write_text('\n'.join(corpus.words) + '\n', encoding='utf-8')
    (out_dir / 'synth_config.json').write_text(json.dumps(asdict(cfg), indent=2, sort_keys=True) + '\n', encoding='utf-8')
    logger.info(f"Synthetic corpus written to {out_dir} ({len(corpus.words)} words)")
    return manifests


def load_lexicon(corpus_dir) -> Optional[List[str]]:
    path = Path(corpus_dir) / 'lexicon.txt'
    if not path.exists():
        return None
    return [w for w in path.read_text(encoding='utf-8').splitlines() if w]
