"""
Decoding
========

Turns posterior grids into readable text:

- ``greedy_decode``: per-frame argmax, collapse, render.
- ``beam_decode``: prefix beam search over unit sequences, fused with a
  unit n-gram (alpha * log P_lm + beta per emitted unit).
- ``ctc2_train`` / ``ctc2_apply``: a second CTC network that reads the
  one-hot first-pass output and emits a corrected unit sequence.
"""

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.app_logging import get_logger
from src.charlm import BOS, EOS, CharNGram
from src.config import Ctc2Config, DecodeConfig, TrainConfig
from src.data_loader import Dataset, dataset_from_arrays
from src.errors import ConfigError, DataError
from src.frontend import one_hot_stream
from src.inventory import BLANK_ID, EncodedSequence, Inventory, decode_ids
from src.lattice import PosteriorGrid
from src.net import NetConfig, NetParams, forward, init_params
from src.trainer import train

logger = get_logger(__name__)

NEG_INF = -math.inf


@dataclass
class Hypothesis:
    """One prefix in the beam."""
    prefix: Tuple[int, ...]
    p_blank: float = NEG_INF        # log mass of alignments ending in blank
    p_nonblank: float = NEG_INF     # log mass of alignments ending in the last unit
    lm_score: float = 0.0           # alpha * log P_lm + beta * |prefix|

    @property
    def total(self) -> float:
        return float(np.logaddexp(self.p_blank, self.p_nonblank))

    @property
    def score(self) -> float:
        return self.total + self.lm_score


@dataclass
class DecodeResult:
    """Best hypothesis of one utterance."""
    text: str
    ids: Tuple[int, ...]
    score: float
    nbest: Optional[List[Tuple[str, Tuple[int, ...], float]]] = None
    utt_id: Optional[str] = None


# ============================================================================
# GREEDY
# ============================================================================

def collapse_ids(frame_ids: Sequence[int], mode: str = 'ctc') -> Tuple[int, ...]:
    """
    Collapse a frame-level label sequence.

    ``ctc``: merge consecutive repeats, then drop blanks, so a blank
    between two identical units keeps both. ``literal``: drop blanks first,
    then merge repeats.
    """
    frame_ids = [int(i) for i in frame_ids]
    if mode == 'ctc':
        merged = [k for k, _ in itertools.groupby(frame_ids)]
        return tuple(i for i in merged if i != BLANK_ID)
    if mode == 'literal':
        kept = [i for i in frame_ids if i != BLANK_ID]
        return tuple(k for k, _ in itertools.groupby(kept))
    raise ConfigError(f"Unknown collapse mode '{mode}'")


def greedy_decode(grid: PosteriorGrid, inv: Inventory, mode: str = 'ctc') -> DecodeResult:
    """Best unit per frame (lowest id on ties), collapsed and rendered."""
    probs = grid.probs
    best = np.argmax(probs, axis=1)
    with np.errstate(divide='ignore'):
        path_score = float(np.sum(np.log(probs[np.arange(grid.T), best])))
    ids = collapse_ids(best, mode)
    return DecodeResult(decode_ids(ids, inv), ids, path_score)


# ============================================================================
# PREFIX BEAM SEARCH
# ============================================================================

class _LmScorer:
    """Memoized alpha * log P(u | prefix) + beta."""

    def __init__(self, lm: Optional[CharNGram], alpha: float, beta: float):
        self.lm = lm
        self.alpha = alpha
        self.beta = beta
        self._cache: Dict[Tuple[Tuple[int, ...], int], float] = {}

    def extend(self, prefix: Tuple[int, ...], unit: int) -> float:
        if self.lm is None or self.alpha == 0.0:
            return self.beta
        ctx = ((BOS,) + prefix)[-(self.lm.order - 1):] if self.lm.order > 1 else ()
        key = (ctx, unit)
        if key not in self._cache:
            self._cache[key] = self.alpha * self.lm.log10_prob(ctx, unit) * math.log(10.0)
        return self._cache[key] + self.beta

    def finish(self, prefix: Tuple[int, ...]) -> float:
        if self.lm is None or self.alpha == 0.0 or not self.lm.models_eos:
            return 0.0
        return self.alpha * self.lm.log10_prob((BOS,) + prefix, EOS) * math.log(10.0)


def _rank_key(hyp: Hypothesis, score: float):
    return (-score, hyp.prefix)


def beam_decode(grid: PosteriorGrid, inv: Inventory, lm: Optional[CharNGram] = None,
                beam_width: int = 100, lm_weight: float = 1.0, insertion_bonus: float = 1.5,
                unit_cutoff: float = 0.0, nbest: int = 0) -> DecodeResult:
    """
    Prefix beam search with n-gram fusion.

    Every prefix keeps the log mass of alignments ending in blank and in
    its last unit; extending by the unit it already ends with only draws
    on the blank-ending mass. Hypotheses are ranked by acoustic mass plus
    the accumulated LM term, ties broken by the prefix itself.

    Args:
        unit_cutoff: skip units whose frame probability is below this (0 keeps all)
        nbest: also return the top ``nbest`` final hypotheses

    Raises:
        ConfigError: beam_width < 1 or negative weights
    """
    if beam_width < 1:
        raise ConfigError(f"Beam width must be >= 1, got {beam_width}")
    if lm_weight < 0 or insertion_bonus < 0:
        raise ConfigError('LM weight and insertion bonus must be >= 0')

    with np.errstate(divide='ignore'):
        logp = np.log(grid.probs)
    scorer = _LmScorer(lm, lm_weight, insertion_bonus)
    units = np.arange(grid.Q)
    units = units[units != BLANK_ID]

    beam: List[Hypothesis] = [Hypothesis((), p_blank=0.0)]
    for t in range(grid.T):
        frame = logp[t]
        candidates = units if unit_cutoff <= 0 else units[grid.probs[t, units] >= unit_cutoff]
        nxt: Dict[Tuple[int, ...], Hypothesis] = {}

        def slot(prefix, lm_score):
            hyp = nxt.get(prefix)
            if hyp is None:
                hyp = Hypothesis(prefix, lm_score=lm_score)
                nxt[prefix] = hyp
            return hyp

        for hyp in beam:
            total = hyp.total
            stay = slot(hyp.prefix, hyp.lm_score)
            stay.p_blank = np.logaddexp(stay.p_blank, total + frame[BLANK_ID])
            last = hyp.prefix[-1] if hyp.prefix else None
            if last is not None:
                stay.p_nonblank = np.logaddexp(stay.p_nonblank, hyp.p_nonblank + frame[last])
            for u in candidates:
                u = int(u)
                new_prefix = hyp.prefix + (u,)
                ext = slot(new_prefix, hyp.lm_score + scorer.extend(hyp.prefix, u))
                source = hyp.p_blank if u == last else total
                ext.p_nonblank = np.logaddexp(ext.p_nonblank, source + frame[u])

        ranked = sorted(nxt.values(), key=lambda h: _rank_key(h, h.score))
        beam = [h for h in ranked if h.total > NEG_INF][:beam_width] or ranked[:1]

    finals = sorted(((h, h.score + scorer.finish(h.prefix)) for h in beam),
                    key=lambda pair: _rank_key(*pair))
    best, best_score = finals[0]
    result = DecodeResult(decode_ids(best.prefix, inv), best.prefix, float(best_score))
    if nbest:
        result.nbest = [(decode_ids(h.prefix, inv), h.prefix, float(s)) for h, s in finals[:nbest]]
    return result


def decode_grid(grid: PosteriorGrid, inv: Inventory, cfg: DecodeConfig,
                lm: Optional[CharNGram] = None) -> DecodeResult:
    """Greedy or beam decoding as configured."""
    if cfg.beam:
        return beam_decode(grid, inv, lm, cfg.beam_width, cfg.lm_weight, cfg.insertion_bonus,
                           cfg.unit_cutoff, cfg.nbest)
    return greedy_decode(grid, inv, cfg.collapse)


def decode_dataset(params: NetParams, dataset: Dataset, inv: Inventory, cfg: DecodeConfig,
                   lm: Optional[CharNGram] = None) -> List[DecodeResult]:
    """Decode every utterance; results come back in dataset order."""
    def _one(utt):
        grid, _ = forward(params, utt.features)
        result = decode_grid(grid, inv, cfg, lm)
        result.utt_id = utt.utt_id
        return result

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            return list(pool.map(_one, dataset))
    return [_one(utt) for utt in dataset]


# ============================================================================
# ITERATED CTC
# ============================================================================

def corrupt_ids(ids: Sequence[int], inv: Inventory, rate: float,
                rng: np.random.Generator) -> Tuple[int, ...]:
    """Replace each unit, with probability ``rate``, by a different random non-blank unit."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"Corruption rate must lie in [0, 1], got {rate}")
    q = inv.size
    if q < 3:
        return tuple(ids)
    out = []
    for unit in ids:
        if rng.random() < rate:
            other = int(rng.integers(1, q - 1))
            out.append(other if other < unit else other + 1)
        else:
            out.append(int(unit))
    return tuple(out)


def ctc2_dataset(first_pass: Sequence[Tuple[str, Sequence[int]]],
                 references: Dict[str, EncodedSequence], num_units: int,
                 upsample: int, name: str = 'ctc2') -> Dataset:
    """
    One-hot input streams of first-pass outputs paired with reference targets.

    Empty first-pass outputs and inputs still shorter than their target
    after upsampling are skipped and counted.
    """
    utt_ids, feats, targets = [], [], []
    for utt_id, ids in first_pass:
        if utt_id not in references:
            raise DataError(f"No reference for first-pass output '{utt_id}'")
        utt_ids.append(utt_id)
        feats.append(one_hot_stream(ids, num_units, upsample).frames)
        targets.append(references[utt_id])
    return dataset_from_arrays(utt_ids, feats, targets, name)


def ctc2_train(first_pass: Sequence[Tuple[str, Sequence[int]]], references: Dict[str, EncodedSequence],
               inv: Inventory, ctc2: Ctc2Config, train_cfg: TrainConfig, seed: int = 0,
               dev_pass: Optional[Sequence[Tuple[str, Sequence[int]]]] = None,
               run_dir=None) -> NetParams:
    """
    Train the second-pass network: input = one-hot first-pass units,
    target = reference encoding. The trainer is reused unchanged.
    """
    train_set = ctc2_dataset(first_pass, references, inv.size, ctc2.upsample, 'ctc2-train')
    if len(train_set) == 0:
        raise DataError('No usable first-pass outputs to train the second-pass network on')
    dev_set = ctc2_dataset(dev_pass, references, inv.size, ctc2.upsample, 'ctc2-dev') if dev_pass else None
    logger.info(f"Second pass: {len(train_set)} training pairs, {len(train_set.skipped)} skipped")

    net_cfg = ctc2_net_config(ctc2, inv.size)
    params = init_params(net_cfg, seed)
    cfg = replace(train_cfg, learning_rate=ctc2.learning_rate, max_epochs=ctc2.max_epochs)
    state = train(train_set, dev_set, params, cfg, run_dir=run_dir, seed=seed)
    return state.params


def ctc2_net_config(ctc2: Ctc2Config, num_units: int) -> NetConfig:
    """Second-pass network shape: Q-wide one-hot input, Q outputs."""
    return NetConfig(num_units, ctc2.hidden_dim, ctc2.num_layers, num_units,
                     identity_init=ctc2.hidden_dim >= num_units).validate()


def ctc2_apply(params: NetParams, first: Union[DecodeResult, Sequence[int]], inv: Inventory,
               upsample: int = 3, mode: str = 'ctc') -> DecodeResult:
    """Second-pass correction of one first-pass result; empty input stays empty."""
    ids = first.ids if isinstance(first, DecodeResult) else tuple(first)
    utt_id = first.utt_id if isinstance(first, DecodeResult) else None
    if not ids:
        return DecodeResult('', (), 0.0, utt_id=utt_id)
    stream = one_hot_stream(ids, inv.size, upsample)
    grid, _ = forward(params, stream.frames)
    result = greedy_decode(grid, inv, mode)
    result.utt_id = utt_id
    return result
