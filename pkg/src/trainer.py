"""
CTC training loop
=================

Stochastic gradient descent with momentum and L2 regularization:

    g = clip(sum of minibatch gradients / frames in the minibatch)
    v = momentum * v - lr * g
    p = p + v - lr * l2 * p

The learning rate is per frame. It is divided by 4 when ``patience``
epochs pass without a dev improvement. ``polish`` continues training on
in-domain data at a tenth of the rate and keeps the dev-best parameters.
"""

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from src.app_logging import get_logger
from src.checkpoint import save_checkpoint
from src.config import TrainConfig
from src.data_loader import Dataset, Utterance
from src.errors import ConfigError, DataError, NumericalError
from src.lattice import TransitionConfig, build_lattice, forward_backward, smooth_gamma
from src.net import NetParams, ParamGrad, backward, forward

logger = get_logger(__name__)

EPOCH_LOG = 'train_log.jsonl'
BEST_CHECKPOINT = 'best.ckpt'
IMPROVEMENT_EPS = 1e-9


@dataclass
class TrainState:
    """Parameters, optimizer memory and schedule bookkeeping."""
    params: NetParams
    velocity: ParamGrad
    lr: float
    initial_lr: float
    epoch: int = 0
    best_score: float = float('inf')
    best_params: Optional[NetParams] = None
    epochs_since_improvement: int = 0
    num_decays: int = 0
    seed: int = 0
    history: List[Dict] = field(default_factory=list)

    @classmethod
    def create(cls, params: NetParams, cfg: TrainConfig, seed: int = 0) -> 'TrainState':
        return cls(params, params.zeros_like(), cfg.learning_rate, cfg.learning_rate, seed=seed)


@dataclass
class BatchResult:
    grad: ParamGrad
    loss: float
    frames: int
    posterior_sum: np.ndarray


# ============================================================================
# GRADIENTS
# ============================================================================

def utterance_gradient(params: NetParams, utt: Utterance, smoothing: float = 0.0,
                       transitions: Optional[TransitionConfig] = None) -> BatchResult:
    """
    Loss and gradient of one utterance.

    The error signal at the softmax input is p - gamma; with ``smoothing``
    > 0 gamma is first interpolated with the uniform distribution.

    Raises:
        NumericalError: non-finite activation, loss or gradient (logged
            at ERROR with the utterance id)
    """
    try:
        grid, cache = forward(params, utt.features)
        lat = build_lattice(utt.target, grid.T, transitions, utt_id=utt.utt_id)
        result = forward_backward(lat, grid)
        if smoothing > 0:
            error = grid.probs - smooth_gamma(result.unit_gamma, smoothing)
        else:
            error = result.error_signal
        grad = backward(params, cache, error)
        if not np.isfinite(result.log_loss) or not grad.is_finite():
            raise NumericalError('Non-finite loss or gradient')
    except NumericalError as e:
        logger.error(f"Numerical failure on utterance '{utt.utt_id}': {e}")
        raise
    return BatchResult(grad, result.log_loss, grid.T, grid.probs.sum(axis=0))


def batch_gradient(params: NetParams, batch: List[Utterance], smoothing: float = 0.0,
                   transitions: Optional[TransitionConfig] = None,
                   pool: Optional[ThreadPoolExecutor] = None) -> BatchResult:
    """
    Summed gradient over a minibatch.

    Per-utterance results are added in batch order whether or not a
    thread pool evaluates them.

    Raises:
        NumericalError: non-finite loss or gradient (names the utterance)
    """
    def _one(utt):
        try:
            return utterance_gradient(params, utt, smoothing, transitions)
        except NumericalError as e:
            raise NumericalError(f"Utterance '{utt.utt_id}': {e}") from e

    results = list(pool.map(_one, batch)) if pool is not None else [_one(u) for u in batch]

    total = params.zeros_like()
    loss, frames = 0.0, 0
    posterior_sum = np.zeros(params.config.output_dim)
    for res in results:
        for name, g in res.grad.items():
            total[name] += g
        loss += res.loss
        frames += res.frames
        posterior_sum += res.posterior_sum
    return BatchResult(total, loss, frames, posterior_sum)


def clip(grad: ParamGrad, threshold: float, mode: str = 'norm') -> ParamGrad:
    """
    Bound the gradient before the momentum update.

    ``norm``: scale the whole gradient so its global L2 norm is at most
    ``threshold``. ``element``: clamp every entry to [-threshold, threshold].
    """
    if threshold <= 0:
        raise ValueError(f"Clip threshold must be > 0, got {threshold}")
    out = grad.copy()
    if mode == 'element':
        for name, g in out.items():
            out[name] = np.clip(g, -threshold, threshold)
        return out
    norm = grad.norm()
    if norm > threshold:
        scale = threshold / norm
        for name, g in out.items():
            out[name] = g * scale
    return out


def apply_update(state: TrainState, grad_sum: ParamGrad, frames: int, cfg: TrainConfig):
    """One SGD step with momentum and L2 on ``state`` (in place)."""
    if frames < 1:
        raise DataError('Cannot update on a minibatch without frames')
    lr = state.lr
    g = grad_sum.copy()
    for name, arr in g.items():
        g[name] = arr / frames
    g = clip(g, cfg.clip, cfg.clip_mode)
    for name in state.params:
        v = cfg.momentum * state.velocity[name] - lr * g[name]
        state.velocity[name] = v
        p = state.params[name]
        state.params[name] = p + v - lr * cfg.l2 * p


# ============================================================================
# EPOCHS
# ============================================================================

def _batches(dataset: Dataset, cfg: TrainConfig, rng: np.random.Generator) -> List[List[Utterance]]:
    order = np.arange(len(dataset))
    if cfg.shuffle:
        order = rng.permutation(len(dataset))
    utts = [dataset[int(i)] for i in order]
    return [utts[i:i + cfg.batch_size] for i in range(0, len(utts), cfg.batch_size)]


def train_epoch(state: TrainState, dataset: Dataset, cfg: TrainConfig,
                transitions: Optional[TransitionConfig] = None) -> TrainState:
    """
    One pass over ``dataset`` in shuffled minibatches.

    The epoch summary (training loss per frame, frames, skipped count and
    unit posterior floor) is appended to ``state.history``.

    Raises:
        DataError: empty dataset
        NumericalError: non-finite loss, with the utterance id
    """
    if len(dataset) == 0:
        raise DataError(f"Cannot train on empty dataset '{dataset.name}'")
    transitions = transitions or TransitionConfig(normalize=cfg.normalize_transitions)
    rng = np.random.default_rng([state.seed, state.epoch])
    started = time.perf_counter()

    loss, frames, updates = 0.0, 0, 0
    posterior_sum = np.zeros(state.params.config.output_dim)
    pool = ThreadPoolExecutor(max_workers=cfg.workers) if cfg.workers > 1 else None
    try:
        for batch in _batches(dataset, cfg, rng):
            res = batch_gradient(state.params, batch, cfg.smoothing, transitions, pool)
            apply_update(state, res.grad, res.frames, cfg)
            loss += res.loss
            frames += res.frames
            posterior_sum += res.posterior_sum
            updates += 1
    finally:
        if pool is not None:
            pool.shutdown()

    state.epoch += 1
    floor = float((posterior_sum / frames).min())
    state.history.append({
        'epoch': state.epoch,
        'loss': loss / frames,
        'frames': frames,
        'updates': updates,
        'skipped': len(dataset.skipped),
        'lr': state.lr,
        'posterior_floor': floor,
        'seconds': round(time.perf_counter() - started, 3),
    })
    if not state.params.is_finite():
        raise NumericalError(f"Parameters became non-finite in epoch {state.epoch}")
    return state


def evaluate(params: NetParams, dataset: Dataset,
             transitions: Optional[TransitionConfig] = None) -> float:
    """Mean per-frame log-loss over ``dataset``."""
    if len(dataset) == 0:
        raise DataError(f"Cannot evaluate on empty dataset '{dataset.name}'")
    loss, frames = 0.0, 0
    for utt in dataset:
        grid, _ = forward(params, utt.features)
        lat = build_lattice(utt.target, grid.T, transitions, utt_id=utt.utt_id)
        loss += forward_backward(lat, grid).log_loss
        frames += grid.T
    return loss / frames


def schedule(state: TrainState, dev_score: float, cfg: TrainConfig) -> bool:
    """
    Track the dev score; divide the rate by 1/lr_decay after ``patience``
    epochs without improvement. Returns True when the score improved.
    """
    improved = dev_score < state.best_score - IMPROVEMENT_EPS
    if improved:
        state.best_score = dev_score
        state.best_params = state.params.copy()
        state.epochs_since_improvement = 0
    else:
        state.epochs_since_improvement += 1
        if state.epochs_since_improvement >= cfg.patience:
            state.lr *= cfg.lr_decay
            state.num_decays += 1
            state.epochs_since_improvement = 0
            logger.info(f"  Learning rate decayed to {state.lr:.6g}")
    return improved


def _log_epoch(record: Dict, run_dir: Optional[Path]):
    logger.info(
        f"Epoch {record['epoch']:3d}: loss {record['loss']:.4f}/frame, "
        f"dev {record.get('dev_metric', 'loss')} {record.get('dev_score', float('nan')):.4f}, "
        f"lr {record['lr']:.4g}, floor {record['posterior_floor']:.2e}, {record['seconds']:.1f}s")
    if run_dir is not None:
        with open(run_dir / EPOCH_LOG, 'a', encoding='utf-8') as f:
            f.write(json.dumps(record, sort_keys=True) + '\n')


def _dev_score(params: NetParams, dev_set: Dataset, cfg: TrainConfig,
               transitions: TransitionConfig, dev_scorer: Optional[Callable[[NetParams], float]]) -> float:
    if cfg.dev_metric == 'cer':
        if dev_scorer is None:
            raise ConfigError("train.dev_metric 'cer' needs a dev scorer")
        return dev_scorer(params)
    return evaluate(params, dev_set, transitions)


def train(train_set: Dataset, dev_set: Optional[Dataset], params: NetParams, cfg: TrainConfig,
          run_dir=None, seed: int = 0, dev_scorer: Optional[Callable[[NetParams], float]] = None,
          state: Optional[TrainState] = None) -> TrainState:
    """
    Epoch loop: train_epoch -> dev score -> schedule, until ``max_epochs``
    or more than ``max_decays`` rate decays. The dev-best parameters are
    kept on disk (``best.ckpt``) and returned in ``state.params``.
    """
    cfg.validate()
    transitions = TransitionConfig(normalize=cfg.normalize_transitions)
    dev_set = dev_set if dev_set is not None and len(dev_set) else train_set
    run_dir = Path(run_dir) if run_dir is not None else None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)

    state = state or TrainState.create(params, cfg, seed)
    if state.best_params is None:
        state.best_score = _dev_score(state.params, dev_set, cfg, transitions, dev_scorer)
        state.best_params = state.params.copy()
        logger.info(f"Initial dev {cfg.dev_metric}: {state.best_score:.4f}")
        if run_dir is not None:
            save_checkpoint(state.best_params, run_dir / BEST_CHECKPOINT)

    while state.epoch < cfg.max_epochs and state.num_decays <= cfg.max_decays:
        train_epoch(state, train_set, cfg, transitions)
        record = state.history[-1]
        record['dev_score'] = _dev_score(state.params, dev_set, cfg, transitions, dev_scorer)
        record['dev_metric'] = cfg.dev_metric
        if record['posterior_floor'] < 1e-6:
            logger.warning(f"  Unit posterior floor {record['posterior_floor']:.2e} (rare unit collapsing)")
        improved = schedule(state, record['dev_score'], cfg)
        if improved and run_dir is not None:
            save_checkpoint(state.best_params, run_dir / BEST_CHECKPOINT)
        record['improved'] = improved
        _log_epoch(record, run_dir)

    state.params = state.best_params.copy()
    print(f"✓ Training finished after {state.epoch} epoch(s), best dev {cfg.dev_metric} {state.best_score:.4f}")
    return state


def polish(state: TrainState, indomain_set: Dataset, dev_set: Optional[Dataset], cfg: TrainConfig,
           run_dir=None, dev_scorer: Optional[Callable[[NetParams], float]] = None) -> TrainState:
    """
    Low-rate passes over in-domain data, starting from ``state.params``.

    Runs ``polish_epochs`` epochs at ``polish_lr_scale`` times the current
    rate with a fresh momentum buffer, and keeps the dev-best parameters
    (the starting point included).
    """
    transitions = TransitionConfig(normalize=cfg.normalize_transitions)
    dev_set = dev_set if dev_set is not None and len(dev_set) else indomain_set
    run_dir = Path(run_dir) if run_dir is not None else None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)

    state.lr = state.lr * cfg.polish_lr_scale
    state.velocity = state.params.zeros_like()
    state.best_score = _dev_score(state.params, dev_set, cfg, transitions, dev_scorer)
    state.best_params = state.params.copy()
    logger.info(f"Polishing at lr {state.lr:.4g}, starting dev {cfg.dev_metric} {state.best_score:.4f}")

    for _ in range(cfg.polish_epochs):
        train_epoch(state, indomain_set, cfg, transitions)
        record = state.history[-1]
        record['dev_score'] = _dev_score(state.params, dev_set, cfg, transitions, dev_scorer)
        record['dev_metric'] = cfg.dev_metric
        record['polish'] = True
        if record['dev_score'] < state.best_score - IMPROVEMENT_EPS:
            state.best_score = record['dev_score']
            state.best_params = state.params.copy()
            record['improved'] = True
        else:
            record['improved'] = False
        _log_epoch(record, run_dir)

    state.params = state.best_params.copy()
    if run_dir is not None:
        save_checkpoint(state.params, run_dir / 'polished.ckpt')
    print(f"✓ Polishing finished, dev {cfg.dev_metric} {state.best_score:.4f}")
    return state


def posterior_floor(params: NetParams, dataset: Dataset) -> Tuple[float, np.ndarray]:
    """Minimum over units of the average posterior, and the per-unit averages."""
    total = np.zeros(params.config.output_dim)
    frames = 0
    for utt in dataset:
        grid, _ = forward(params, utt.features)
        total += grid.probs.sum(axis=0)
        frames += grid.T
    mean = total / max(frames, 1)
    return float(mean.min()), mean
