"""
Bidirectional ReLU-RNN acoustic model
=====================================

Each layer runs h_t = relu(x_t W_x + h_{t-1} W_h + b) left-to-right and,
for bidirectional nets, right-to-left with its own weights. Between
layers the two directions are summed (``merge='sum'``) or concatenated
(``merge='concat'``). The top layer always hands both directions side
by side to the output projection, followed by a softmax.

Parameters are kept in a named, ordered table (see ``param_shapes``);
that order is also the checkpoint block order.
"""

from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np
from scipy.special import softmax

from src.app_logging import get_logger
from src.errors import ConfigError, DataError, NumericalError
from src.lattice import PosteriorGrid

logger = get_logger(__name__)

MERGE_MODES = ('sum', 'concat')
DTYPES = ('float64', 'float32')


@dataclass
class NetConfig:
    """Network shape."""
    input_dim: int
    hidden_dim: int
    num_layers: int
    output_dim: int
    bidirectional: bool = True
    merge: str = 'sum'
    identity_init: bool = True
    dtype: str = 'float64'

    def validate(self):
        for name in ('input_dim', 'hidden_dim', 'num_layers', 'output_dim'):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"net.{name} must be >= 1, got {getattr(self, name)}")
        if self.merge not in MERGE_MODES:
            raise ConfigError(f"net.merge must be one of {MERGE_MODES}, got '{self.merge}'")
        if self.dtype not in DTYPES:
            raise ConfigError(f"net.dtype must be one of {DTYPES}, got '{self.dtype}'")
        return self

    @property
    def directions(self) -> Tuple[str, ...]:
        return ('fwd', 'bwd') if self.bidirectional else ('fwd',)

    def layer_input_dim(self, layer: int) -> int:
        if layer == 0:
            return self.input_dim
        if self.bidirectional and self.merge == 'concat':
            return 2 * self.hidden_dim
        return self.hidden_dim

    @property
    def top_dim(self) -> int:
        return self.hidden_dim * len(self.directions)

    def parameter_count(self) -> int:
        return int(sum(np.prod(shape) for shape in param_shapes(self).values()))

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict) -> 'NetConfig':
        return cls(**data).validate()


def param_shapes(cfg: NetConfig) -> 'OrderedDict[str, Tuple[int, ...]]':
    """Parameter names and shapes in declaration order."""
    shapes = OrderedDict()
    h = cfg.hidden_dim
    for layer in range(cfg.num_layers):
        fan_in = cfg.layer_input_dim(layer)
        for direction in cfg.directions:
            prefix = f"layer{layer}.{direction}"
            shapes[f"{prefix}.W_x"] = (fan_in, h)
            shapes[f"{prefix}.W_h"] = (h, h)
            shapes[f"{prefix}.b"] = (h,)
    shapes['output.W'] = (cfg.top_dim, cfg.output_dim)
    shapes['output.b'] = (cfg.output_dim,)
    return shapes


@dataclass
class NetParams:
    """Named parameter arrays of one network."""
    config: NetConfig
    arrays: 'OrderedDict[str, np.ndarray]' = field(default_factory=OrderedDict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def __setitem__(self, name: str, value: np.ndarray):
        self.arrays[name] = value

    def __iter__(self) -> Iterator[str]:
        return iter(self.arrays)

    def items(self):
        return self.arrays.items()

    def zeros_like(self) -> 'ParamGrad':
        return ParamGrad(self.config, OrderedDict((k, np.zeros_like(v)) for k, v in self.arrays.items()))

    def copy(self) -> 'NetParams':
        return type(self)(self.config, OrderedDict((k, v.copy()) for k, v in self.arrays.items()))

    def vector(self) -> np.ndarray:
        """All values concatenated in declaration order."""
        return np.concatenate([v.ravel() for v in self.arrays.values()])

    def norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(v * v)) for v in self.arrays.values())))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.arrays.values())

    def check_shapes(self):
        expected = param_shapes(self.config)
        if list(expected) != list(self.arrays):
            raise DataError('Parameter names do not match the network configuration')
        for name, shape in expected.items():
            if self.arrays[name].shape != shape:
                raise DataError(f"Parameter {name} has shape {self.arrays[name].shape}, expected {shape}")


class ParamGrad(NetParams):
    """Gradient with the same layout as the NetParams it differentiates."""


@dataclass
class LayerCache:
    inputs: np.ndarray
    pre: Dict[str, np.ndarray]
    hidden: Dict[str, np.ndarray]


@dataclass
class ForwardCache:
    """Activations kept by ``forward`` for ``backward``."""
    layers: List[LayerCache]
    top: np.ndarray
    logits: np.ndarray


# ============================================================================
# INITIALIZATION
# ============================================================================

def init_params(cfg: NetConfig, seed: Optional[int] = 0) -> NetParams:
    """
    Fan-in uniform initialization with an identity output block.

    Weight matrices are uniform in [-c, c], c = 1/sqrt(fan-in); hidden
    biases are zero. With ``identity_init`` the output projection is zero
    except hidden unit q of every direction feeding output q.

    Raises:
        ConfigError: identity init requested with hidden_dim < output_dim
    """
    cfg.validate()
    rng = np.random.default_rng(seed)
    dtype = np.dtype(cfg.dtype)
    arrays = OrderedDict()
    for name, shape in param_shapes(cfg).items():
        if name.endswith('.b'):
            arrays[name] = np.zeros(shape, dtype=dtype)
        elif name == 'output.W' and cfg.identity_init:
            arrays[name] = np.zeros(shape, dtype=dtype)
        else:
            c = 1.0 / np.sqrt(shape[0])
            arrays[name] = rng.uniform(-c, c, size=shape).astype(dtype)

    if cfg.identity_init:
        q, h = cfg.output_dim, cfg.hidden_dim
        if h < q:
            raise ConfigError(
                f"Identity output init needs hidden_dim >= output_dim ({h} < {q}); "
                f"widen the network or set net.identity_init=false")
        w_out = arrays['output.W']
        for k in range(len(cfg.directions)):
            w_out[k * h + np.arange(q), np.arange(q)] = 1.0

    return NetParams(cfg, arrays)


# ============================================================================
# FORWARD / BACKWARD
# ============================================================================

def _run_direction(inputs, w_x, w_h, b, reverse):
    drive = inputs @ w_x + b
    pre = np.empty_like(drive)
    hidden = np.empty_like(drive)
    prev = np.zeros(drive.shape[1], dtype=drive.dtype)
    frames = range(drive.shape[0] - 1, -1, -1) if reverse else range(drive.shape[0])
    for t in frames:
        pre[t] = drive[t] + prev @ w_h
        hidden[t] = np.maximum(pre[t], 0.0)
        prev = hidden[t]
    return pre, hidden


def _merge(hidden: Dict[str, np.ndarray], cfg: NetConfig) -> np.ndarray:
    if len(hidden) == 1:
        return hidden['fwd']
    if cfg.merge == 'concat':
        return np.hstack([hidden[d] for d in cfg.directions])
    return hidden['fwd'] + hidden['bwd']


def forward(params: NetParams, features: np.ndarray) -> Tuple[PosteriorGrid, ForwardCache]:
    """
    Run the network over one utterance.

    Raises:
        DataError: features do not match the input dimension
        NumericalError: a non-finite activation appears (names layer and frame)
    """
    cfg = params.config
    x = np.asarray(features, dtype=np.dtype(cfg.dtype))
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] != cfg.input_dim:
        raise DataError(f"Expected a T x {cfg.input_dim} feature matrix with T >= 1, got shape {x.shape}")

    layers = []
    layer_in = x
    hidden = {}
    for layer in range(cfg.num_layers):
        pre, hidden = {}, {}
        for direction in cfg.directions:
            prefix = f"layer{layer}.{direction}"
            a, h = _run_direction(layer_in, params[f"{prefix}.W_x"], params[f"{prefix}.W_h"],
                                  params[f"{prefix}.b"], reverse=(direction == 'bwd'))
            bad = ~np.isfinite(h)
            if bad.any():
                frame = int(np.argwhere(bad)[0][0])
                raise NumericalError(f"Non-finite activation in layer {layer} ({direction}) at frame {frame}")
            pre[direction], hidden[direction] = a, h
        layers.append(LayerCache(layer_in, pre, hidden))
        layer_in = _merge(hidden, cfg)

    top = np.hstack([hidden[d] for d in cfg.directions])
    logits = top @ params['output.W'] + params['output.b']
    if not np.all(np.isfinite(logits)):
        frame = int(np.argwhere(~np.isfinite(logits))[0][0])
        raise NumericalError(f"Non-finite output activation at frame {frame}")
    probs = softmax(logits.astype(np.float64), axis=1)
    return PosteriorGrid(probs), ForwardCache(layers, top, logits)


def _bptt(d_hidden, pre, w_h, reverse):
    """Error at the pre-activations of one direction, through time."""
    d_pre = np.empty_like(pre)
    carry = np.zeros(pre.shape[1], dtype=pre.dtype)
    # undo the processing order of the forward pass
    frames = range(pre.shape[0]) if reverse else range(pre.shape[0] - 1, -1, -1)
    for t in frames:
        d_pre[t] = (d_hidden[t] + carry) * (pre[t] > 0)
        carry = d_pre[t] @ w_h.T
    return d_pre


def _previous_hidden(hidden, reverse):
    zeros = np.zeros((1, hidden.shape[1]), dtype=hidden.dtype)
    if reverse:
        return np.vstack([hidden[1:], zeros])
    return np.vstack([zeros, hidden[:-1]])


def backward(params: NetParams, cache: ForwardCache, error_signal: np.ndarray) -> ParamGrad:
    """
    Backpropagation through time of ``error_signal`` (d loss / d logits).

    Raises:
        DataError: error signal shape does not match the cached forward pass
    """
    cfg = params.config
    dz = np.asarray(error_signal, dtype=cache.logits.dtype)
    if dz.shape != cache.logits.shape:
        raise DataError(f"Error signal has shape {dz.shape}, expected {cache.logits.shape}")

    grad = params.zeros_like()
    h = cfg.hidden_dim
    grad['output.W'] = cache.top.T @ dz
    grad['output.b'] = dz.sum(axis=0)
    d_top = dz @ params['output.W'].T
    d_hidden = {d: d_top[:, k * h:(k + 1) * h] for k, d in enumerate(cfg.directions)}

    for layer in range(cfg.num_layers - 1, -1, -1):
        lc = cache.layers[layer]
        d_inputs = np.zeros_like(lc.inputs)
        for direction in cfg.directions:
            prefix = f"layer{layer}.{direction}"
            reverse = direction == 'bwd'
            d_pre = _bptt(d_hidden[direction], lc.pre[direction], params[f"{prefix}.W_h"], reverse)
            grad[f"{prefix}.W_x"] = lc.inputs.T @ d_pre
            grad[f"{prefix}.W_h"] = _previous_hidden(lc.hidden[direction], reverse).T @ d_pre
            grad[f"{prefix}.b"] = d_pre.sum(axis=0)
            d_inputs += d_pre @ params[f"{prefix}.W_x"].T

        if layer > 0:
            if len(cfg.directions) == 2 and cfg.merge == 'concat':
                d_hidden = {'fwd': d_inputs[:, :h], 'bwd': d_inputs[:, h:]}
            else:
                d_hidden = {d: d_inputs for d in cfg.directions}

    return grad


def describe(cfg: NetConfig) -> List[str]:
    """Human-readable parameter table (name, shape, count) plus total."""
    lines = []
    for name, shape in param_shapes(cfg).items():
        lines.append(f"  {name:24s} {str(shape):16s} {int(np.prod(shape)):>12,d}")
    lines.append(f"  {'TOTAL':24s} {'':16s} {cfg.parameter_count():>12,d}")
    return lines
