"""
CTC alignment lattice and alpha-beta computations
=================================================

The target (s1, ..., sS) is expanded to 2S+1 states
(blank, s1, blank, s2, ..., blank). Every alignment of the T frames to
these states carries a transition weight P(pi):

- unit self-loop 0.5, unit -> blank 0.25, unit -> next unit 0.25
- blank self-loop 0.5, blank -> next unit 0.25
- no direct unit -> unit move between identical units
- start in the first blank or the first unit (0.5 each)
- end in the last unit or the last blank (weight 1 each)

The blank row sums to 0.75; ``normalize=True`` rescales every state's
outgoing weights to 1. All recursions run in the log domain.
"""

from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.special import logsumexp, softmax

from src.app_logging import get_logger
from src.errors import DataError, NumericalError, UnalignableError
from src.inventory import BLANK_ID, EncodedSequence, Inventory

logger = get_logger(__name__)

ROW_TOLERANCE = 1e-6


@dataclass(frozen=True)
class TransitionConfig:
    """Transition weights of the alignment model."""
    self_loop: float = 0.5
    to_blank: float = 0.25
    to_next: float = 0.25
    blank_self_loop: float = 0.5
    blank_to_next: float = 0.25
    initial_blank: float = 0.5
    initial_unit: float = 0.5
    normalize: bool = False


@dataclass
class PosteriorGrid:
    """T x Q matrix of per-frame softmax outputs."""
    probs: np.ndarray

    @property
    def T(self) -> int:
        return self.probs.shape[0]

    @property
    def Q(self) -> int:
        return self.probs.shape[1]

    @classmethod
    def from_logits(cls, logits: np.ndarray) -> 'PosteriorGrid':
        return cls(softmax(np.asarray(logits, dtype=np.float64), axis=1))

    def validate(self):
        """Raise DataError if rows are not probability distributions."""
        probs = self.probs
        if probs.ndim != 2 or probs.shape[0] < 1:
            raise DataError(f"Posterior grid must be a non-empty T x Q matrix, got shape {probs.shape}")
        if np.any(probs < 0) or np.any(probs > 1):
            raise DataError('Posterior grid entries must lie in [0, 1]')
        worst = np.max(np.abs(probs.sum(axis=1) - 1.0))
        if worst > ROW_TOLERANCE:
            raise DataError(f"Posterior grid rows must sum to 1 (worst deviation {worst:.2e})")


@dataclass
class Lattice:
    """Alignment graph for one (target, T) pair."""
    target: Tuple[int, ...]
    T: int
    labels: np.ndarray          # unit id of every state
    self_weights: np.ndarray    # i -> i
    next_weights: np.ndarray    # i -> i + 1
    skip_weights: np.ndarray    # i -> i + 2 (unit -> next unit)
    initial_weights: np.ndarray
    final_weights: np.ndarray
    utt_id: Optional[str] = None

    @property
    def num_states(self) -> int:
        return len(self.labels)

    def transitions(self) -> Dict[Tuple[int, int], float]:
        """All nonzero transitions as {(from, to): weight}."""
        edges = {}
        n = self.num_states
        for i in range(n):
            for j, weights in ((i, self.self_weights), (i + 1, self.next_weights),
                               (i + 2, self.skip_weights)):
                if j < n and weights[i] > 0:
                    edges[(i, j)] = float(weights[i])
        return edges


@dataclass
class CtcResult:
    """Objective, state posteriors and error signal of one utterance."""
    log_loss: float
    gamma: np.ndarray          # T x (2S+1)
    unit_gamma: np.ndarray     # T x Q
    error_signal: np.ndarray   # T x Q, p - gamma


def min_frames(target: Sequence[int]) -> int:
    """Fewest frames that can carry ``target``: identical neighbours need a blank in between."""
    ids = list(target)
    return len(ids) + sum(1 for a, b in zip(ids, ids[1:]) if a == b)


def _as_ids(target: Union[EncodedSequence, Sequence[int]]) -> Tuple[int, ...]:
    if isinstance(target, EncodedSequence):
        return target.ids
    return tuple(int(i) for i in target)


def build_lattice(target: Union[EncodedSequence, Sequence[int]], T: int,
                  transitions: Optional[TransitionConfig] = None,
                  utt_id: Optional[str] = None) -> Lattice:
    """
    Build the alignment lattice for ``target`` over ``T`` frames.

    Raises:
        UnalignableError: empty target or fewer frames than ``min_frames``
        DataError: the target contains the blank
    """
    cfg = transitions or TransitionConfig()
    ids = _as_ids(target)
    where = f"Utterance '{utt_id}'" if utt_id is not None else 'Utterance'
    if not ids:
        raise UnalignableError(f"{where} is unalignable: empty target", utt_id)
    if BLANK_ID in ids:
        raise DataError(f"{where}: target sequence contains the blank unit")
    needed = min_frames(ids)
    if T < needed:
        raise UnalignableError(
            f"{where} is unalignable: {len(ids)} units need at least {needed} frames, got {T}",
            utt_id)

    n = 2 * len(ids) + 1
    labels = np.zeros(n, dtype=np.int64)
    labels[1::2] = ids

    self_w = np.zeros(n)
    next_w = np.zeros(n)
    skip_w = np.zeros(n)
    for j in range(n):
        if j % 2 == 1:
            self_w[j] = cfg.self_loop
            next_w[j] = cfg.to_blank
            if j + 2 < n and labels[j + 2] != labels[j]:
                skip_w[j] = cfg.to_next
        else:
            self_w[j] = cfg.blank_self_loop
            if j + 1 < n:
                next_w[j] = cfg.blank_to_next

    if cfg.normalize:
        total = self_w + next_w + skip_w
        self_w, next_w, skip_w = self_w / total, next_w / total, skip_w / total

    init_w = np.zeros(n)
    init_w[0] = cfg.initial_blank
    init_w[1] = cfg.initial_unit
    final_w = np.zeros(n)
    final_w[n - 1] = 1.0
    final_w[n - 2] = 1.0

    return Lattice(ids, int(T), labels, self_w, next_w, skip_w, init_w, final_w, utt_id)


def project_gamma(gamma: np.ndarray, lat: Lattice, num_units: int) -> np.ndarray:
    """Sum state posteriors of states sharing a unit: T x Q."""
    onehot = np.zeros((lat.num_states, num_units))
    onehot[np.arange(lat.num_states), lat.labels] = 1.0
    return gamma @ onehot


def forward_backward(lat: Lattice, grid: PosteriorGrid) -> CtcResult:
    """
    Alpha-beta recursions over ``lat`` with frame probabilities ``grid``.

    log_loss = -log sum_pi P(pi) prod_t p^t, gamma from alphas and betas,
    error_signal = p - gamma (gradient of log_loss w.r.t. the pre-softmax
    activations).

    Raises:
        DataError: grid does not match the lattice
        NumericalError: the total path probability is zero
    """
    probs = grid.probs
    T, n = lat.T, lat.num_states
    if grid.T != T:
        raise DataError(f"Grid has {grid.T} frames but lattice expects {T}")
    if int(lat.labels.max()) >= grid.Q:
        raise DataError(f"Grid has {grid.Q} units but target uses id {int(lat.labels.max())}")

    with np.errstate(divide='ignore', invalid='ignore'):
        logp = np.log(probs[:, lat.labels])
        log_self = np.log(lat.self_weights)
        log_next = np.log(lat.next_weights)
        log_skip = np.log(lat.skip_weights)
        log_init = np.log(lat.initial_weights)
        log_final = np.log(lat.final_weights)

        alpha = np.full((T, n), -np.inf)
        alpha[0] = log_init + logp[0]
        for t in range(1, T):
            prev = alpha[t - 1]
            moved = np.full(n, -np.inf)
            moved[1:] = prev[:-1] + log_next[:-1]
            skipped = np.full(n, -np.inf)
            skipped[2:] = prev[:-2] + log_skip[:-2]
            alpha[t] = np.logaddexp(np.logaddexp(prev + log_self, moved), skipped) + logp[t]

        beta = np.full((T, n), -np.inf)
        beta[T - 1] = log_final
        for t in range(T - 2, -1, -1):
            ahead = beta[t + 1] + logp[t + 1]
            moved = np.full(n, -np.inf)
            moved[:-1] = ahead[1:] + log_next[:-1]
            skipped = np.full(n, -np.inf)
            skipped[:-2] = ahead[2:] + log_skip[:-2]
            beta[t] = np.logaddexp(np.logaddexp(ahead + log_self, moved), skipped)

        log_total = logsumexp(alpha[T - 1] + log_final)

    if not np.isfinite(log_total):
        where = f" for utterance '{lat.utt_id}'" if lat.utt_id is not None else ''
        raise NumericalError(f"Total path probability is zero{where} (infeasible alignment)")

    gamma = np.exp(alpha + beta - log_total)
    unit_gamma = project_gamma(gamma, lat, grid.Q)
    return CtcResult(float(-log_total), gamma, unit_gamma, probs - unit_gamma)


def smooth_gamma(gamma: np.ndarray, mass: float = 0.01, lat: Optional[Lattice] = None,
                 num_units: Optional[int] = None) -> np.ndarray:
    """
    Interpolate posteriors with the uniform distribution over units.

    ``gamma`` is either already per unit (T x Q) or per lattice state, in
    which case ``lat`` and ``num_units`` are needed to project it first.
    """
    if not 0.0 <= mass < 1.0:
        raise ValueError(f"Smoothing mass must lie in [0, 1), got {mass}")
    if lat is not None:
        if num_units is None:
            raise ValueError('num_units is required to project lattice-state posteriors')
        gamma = project_gamma(gamma, lat, num_units)
    q = gamma.shape[1]
    return (1.0 - mass) * gamma + mass / q


def dump_gamma(result: CtcResult, lat: Lattice, path, inv: Optional[Inventory] = None):
    """Write the frame x state posterior grid as TSV."""
    if inv is not None:
        columns = [f"{j}:{inv.unit(label).surface}" for j, label in enumerate(lat.labels)]
    else:
        columns = [f"{j}:{label}" for j, label in enumerate(lat.labels)]
    df = pd.DataFrame(result.gamma, columns=columns)
    df.index.name = 'frame'
    df.to_csv(path, sep='\t', float_format='%.6g')
