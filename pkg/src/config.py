"""
Experiment configuration
========================

One Defaults class per concern holds the constants; the matching
dataclass is what the code passes around. An experiment is a JSON tree:

    {
      "seed": 0,
      "inventory": {"scheme": "capital-initial"},
      "frontend": {...}, "net": {...}, "train": {...},
      "decode": {...}, "lm": {...}, "ctc2": {...}, "paths": {...}
    }

Unknown keys at any level are rejected.
"""

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from src.app_logging import get_logger
from src.errors import ConfigError
from src.inventory import Scheme
from src.net import DTYPES, MERGE_MODES, NetConfig

logger = get_logger(__name__)


# ============================================================================
# DEFAULTS
# ============================================================================

class FrontendDefaults:
    """Default frontend parameters"""
    N_MELS = 40
    FRAME_PERIOD = 0.01
    WINDOW = 0.025
    LOG_FLOOR = 1e-10
    MIN_SAMPLE_RATE = 8000
    STACK = True
    UPSAMPLE = 3


class NetDefaults:
    """Default network shape"""
    HIDDEN_DIM = 128
    NUM_LAYERS = 3
    MERGE = 'sum'


class TrainDefaults:
    """Default training recipe"""
    BATCH_SIZE = 32
    LEARNING_RATE = 0.5          # per frame
    MOMENTUM = 0.9
    L2 = 1e-6
    CLIP = 1.0
    CLIP_MODE = 'norm'
    SMOOTHING = 0.01
    LR_DECAY = 0.25
    PATIENCE = 3
    MAX_EPOCHS = 30
    MAX_DECAYS = 4
    POLISH_LR_SCALE = 0.1
    POLISH_EPOCHS = 2
    DEV_METRIC = 'loss'
    WORKERS = 1


class DecodeDefaults:
    """Default decoding parameters"""
    BEAM_WIDTH = 100
    LM_WEIGHT = 1.0
    INSERTION_BONUS = 1.5
    UNIT_CUTOFF = 1e-4
    COLLAPSE = 'ctc'
    SWEEP_LM_WEIGHTS = [0.0, 0.5, 1.0, 1.5, 2.0]
    SWEEP_BONUSES = [0.0, 0.5, 1.0, 1.5, 2.5]
    SWEEP_WIDTHS = [16, 64]
    SWEEP_ARCHITECTURES = [[1, 64], [3, 64], [3, 128], [5, 128]]   # (layers, hidden)


class LmDefaults:
    """Default character n-gram settings"""
    ORDER = 7
    SENTENCE_END = True


class Ctc2Defaults:
    """Default second-pass network"""
    HIDDEN_DIM = 256
    NUM_LAYERS = 4
    UPSAMPLE = 3
    CORRUPTION_RATE = 0.2
    MAX_EPOCHS = 20


CLIP_MODES = ('norm', 'element')
DEV_METRICS = ('loss', 'cer')
COLLAPSE_MODES = ('ctc', 'literal')


# ============================================================================
# SECTIONS
# ============================================================================

@dataclass
class InventoryConfig:
    scheme: str = Scheme.CAPITAL_INITIAL.value

    def validate(self):
        Scheme.parse(self.scheme)


@dataclass
class FrontendConfig:
    """Configuration of the feature frontend"""
    n_mels: int = FrontendDefaults.N_MELS
    frame_period: float = FrontendDefaults.FRAME_PERIOD
    window: float = FrontendDefaults.WINDOW
    log_floor: float = FrontendDefaults.LOG_FLOOR
    stack: bool = FrontendDefaults.STACK
    sample_rate: Optional[int] = None   # None: taken from each WAV file

    def validate(self):
        if self.n_mels < 1:
            raise ConfigError(f"frontend.n_mels must be >= 1, got {self.n_mels}")
        if not 0 < self.frame_period <= self.window:
            raise ConfigError('frontend.frame_period must be > 0 and <= frontend.window')
        if self.log_floor <= 0:
            raise ConfigError(f"frontend.log_floor must be > 0, got {self.log_floor}")
        if self.sample_rate is not None and self.sample_rate < FrontendDefaults.MIN_SAMPLE_RATE:
            raise ConfigError(f"frontend.sample_rate must be >= {FrontendDefaults.MIN_SAMPLE_RATE}")


@dataclass
class NetSection:
    """Network shape; input and output sizes default to what the data implies."""
    hidden_dim: int = NetDefaults.HIDDEN_DIM
    num_layers: int = NetDefaults.NUM_LAYERS
    merge: str = NetDefaults.MERGE
    bidirectional: bool = True
    identity_init: bool = True
    dtype: str = 'float64'
    input_dim: Optional[int] = None
    output_dim: Optional[int] = None

    def validate(self):
        if self.hidden_dim < 1 or self.num_layers < 1:
            raise ConfigError('net.hidden_dim and net.num_layers must be >= 1')
        if self.merge not in MERGE_MODES:
            raise ConfigError(f"net.merge must be one of {MERGE_MODES}, got '{self.merge}'")
        if self.dtype not in DTYPES:
            raise ConfigError(f"net.dtype must be one of {DTYPES}, got '{self.dtype}'")

    def net_config(self, input_dim: Optional[int] = None, output_dim: Optional[int] = None) -> NetConfig:
        """Concrete NetConfig; explicit sizes in the section win over the data's."""
        in_dim = self.input_dim or input_dim
        out_dim = self.output_dim or output_dim
        if in_dim is None or out_dim is None:
            raise ConfigError('net.input_dim and net.output_dim cannot be inferred without data')
        return NetConfig(int(in_dim), self.hidden_dim, self.num_layers, int(out_dim),
                         self.bidirectional, self.merge, self.identity_init, self.dtype).validate()


@dataclass
class TrainConfig:
    """Stochastic gradient recipe"""
    batch_size: int = TrainDefaults.BATCH_SIZE
    learning_rate: float = TrainDefaults.LEARNING_RATE
    momentum: float = TrainDefaults.MOMENTUM
    l2: float = TrainDefaults.L2
    clip: float = TrainDefaults.CLIP
    clip_mode: str = TrainDefaults.CLIP_MODE
    smoothing: float = TrainDefaults.SMOOTHING
    lr_decay: float = TrainDefaults.LR_DECAY
    patience: int = TrainDefaults.PATIENCE
    max_epochs: int = TrainDefaults.MAX_EPOCHS
    max_decays: int = TrainDefaults.MAX_DECAYS
    polish_lr_scale: float = TrainDefaults.POLISH_LR_SCALE
    polish_epochs: int = TrainDefaults.POLISH_EPOCHS
    dev_metric: str = TrainDefaults.DEV_METRIC
    shuffle: bool = True
    workers: int = TrainDefaults.WORKERS
    normalize_transitions: bool = False

    def validate(self):
        if not 1 <= self.batch_size <= 1024:
            raise ConfigError(f"train.batch_size must lie in 1..1024, got {self.batch_size}")
        if self.learning_rate < 0:
            raise ConfigError(f"train.learning_rate must be >= 0, got {self.learning_rate}")
        if self.clip <= 0:
            raise ConfigError(f"train.clip must be > 0, got {self.clip}")
        if self.clip_mode not in CLIP_MODES:
            raise ConfigError(f"train.clip_mode must be one of {CLIP_MODES}, got '{self.clip_mode}'")
        if not 0.0 <= self.smoothing < 1.0:
            raise ConfigError(f"train.smoothing must lie in [0, 1), got {self.smoothing}")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ConfigError(f"train.lr_decay must lie in (0, 1], got {self.lr_decay}")
        if self.patience < 1 or self.max_epochs < 0 or self.polish_epochs < 0:
            raise ConfigError('train.patience must be >= 1 and epoch counts >= 0')
        if self.polish_lr_scale < 0:
            raise ConfigError(f"train.polish_lr_scale must be >= 0, got {self.polish_lr_scale}")
        if self.dev_metric not in DEV_METRICS:
            raise ConfigError(f"train.dev_metric must be one of {DEV_METRICS}, got '{self.dev_metric}'")
        if self.workers < 1:
            raise ConfigError(f"train.workers must be >= 1, got {self.workers}")


@dataclass
class DecodeConfig:
    beam: bool = False
    beam_width: int = DecodeDefaults.BEAM_WIDTH
    lm_weight: float = DecodeDefaults.LM_WEIGHT
    insertion_bonus: float = DecodeDefaults.INSERTION_BONUS
    unit_cutoff: float = DecodeDefaults.UNIT_CUTOFF
    collapse: str = DecodeDefaults.COLLAPSE
    nbest: int = 0
    workers: int = 1
    sweep_lm_weights: List[float] = field(default_factory=lambda: list(DecodeDefaults.SWEEP_LM_WEIGHTS))
    sweep_bonuses: List[float] = field(default_factory=lambda: list(DecodeDefaults.SWEEP_BONUSES))
    sweep_widths: List[int] = field(default_factory=lambda: list(DecodeDefaults.SWEEP_WIDTHS))
    sweep_architectures: List[List[int]] = field(
        default_factory=lambda: [list(a) for a in DecodeDefaults.SWEEP_ARCHITECTURES])

    def validate(self):
        if self.beam_width < 1:
            raise ConfigError(f"decode.beam_width must be >= 1, got {self.beam_width}")
        if self.lm_weight < 0 or self.insertion_bonus < 0:
            raise ConfigError('decode.lm_weight and decode.insertion_bonus must be >= 0')
        if not 0.0 <= self.unit_cutoff < 1.0:
            raise ConfigError(f"decode.unit_cutoff must lie in [0, 1), got {self.unit_cutoff}")
        if self.collapse not in COLLAPSE_MODES:
            raise ConfigError(f"decode.collapse must be one of {COLLAPSE_MODES}, got '{self.collapse}'")
        if self.workers < 1:
            raise ConfigError(f"decode.workers must be >= 1, got {self.workers}")
        for arch in self.sweep_architectures:
            if (not isinstance(arch, (list, tuple)) or len(arch) != 2
                    or any(isinstance(v, bool) or not isinstance(v, int) or v < 1 for v in arch)):
                raise ConfigError(f"decode.sweep_architectures entries must be [layers, hidden] >= 1, got {arch!r}")


@dataclass
class LmConfig:
    order: int = LmDefaults.ORDER
    sentence_end: bool = LmDefaults.SENTENCE_END

    def validate(self):
        if self.order < 1:
            raise ConfigError(f"lm.order must be >= 1, got {self.order}")


@dataclass
class Ctc2Config:
    hidden_dim: int = Ctc2Defaults.HIDDEN_DIM
    num_layers: int = Ctc2Defaults.NUM_LAYERS
    upsample: int = Ctc2Defaults.UPSAMPLE
    corruption_rate: float = Ctc2Defaults.CORRUPTION_RATE
    max_epochs: int = Ctc2Defaults.MAX_EPOCHS
    learning_rate: float = TrainDefaults.LEARNING_RATE

    def validate(self):
        if self.hidden_dim < 1 or self.num_layers < 1:
            raise ConfigError('ctc2.hidden_dim and ctc2.num_layers must be >= 1')
        if self.upsample < 1:
            raise ConfigError(f"ctc2.upsample must be >= 1, got {self.upsample}")
        if not 0.0 <= self.corruption_rate <= 1.0:
            raise ConfigError(f"ctc2.corruption_rate must lie in [0, 1], got {self.corruption_rate}")


@dataclass
class PathsConfig:
    run_dir: str = 'runs/default'
    train_manifest: Optional[str] = None
    dev_manifest: Optional[str] = None
    test_manifest: Optional[str] = None
    indomain_manifest: Optional[str] = None
    checkpoint: Optional[str] = None
    ctc2_checkpoint: Optional[str] = None
    inventory: Optional[str] = None
    lm: Optional[str] = None

    def validate(self):
        pass


SECTIONS = {
    'inventory': InventoryConfig,
    'frontend': FrontendConfig,
    'net': NetSection,
    'train': TrainConfig,
    'decode': DecodeConfig,
    'lm': LmConfig,
    'ctc2': Ctc2Config,
    'paths': PathsConfig,
}


@dataclass
class ExperimentConfig:
    """Everything a run needs; every field has a default."""
    seed: int = 0
    inventory: InventoryConfig = field(default_factory=InventoryConfig)
    frontend: FrontendConfig = field(default_factory=FrontendConfig)
    net: NetSection = field(default_factory=NetSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    lm: LmConfig = field(default_factory=LmConfig)
    ctc2: Ctc2Config = field(default_factory=Ctc2Config)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def validate(self) -> 'ExperimentConfig':
        for name in SECTIONS:
            getattr(self, name).validate()
        return self

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ExperimentConfig':
        """
        Build a config from a (partial) JSON tree.

        Raises:
            ConfigError: unknown key, wrong section type or invalid value
        """
        if not isinstance(data, dict):
            raise ConfigError('Configuration root must be an object')
        kwargs = {}
        for key, value in data.items():
            if key == 'seed':
                kwargs['seed'] = _as_int(value, 'seed')
            elif key in SECTIONS:
                kwargs[key] = _build_section(SECTIONS[key], value, key)
            else:
                raise ConfigError(f"Unknown configuration key '{key}'")
        return cls(**kwargs).validate()


def _as_int(value, key: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"'{key}' must be an integer, got {value!r}")
    return value


def _build_section(section_cls, values, name: str):
    if not isinstance(values, dict):
        raise ConfigError(f"Section '{name}' must be an object")
    known = {f.name for f in fields(section_cls)}
    for key in values:
        if key not in known:
            raise ConfigError(f"Unknown configuration key '{name}.{key}'")
    try:
        return section_cls(**values)
    except TypeError as e:
        raise ConfigError(f"Invalid section '{name}': {e}")


# ============================================================================
# PRESETS
# ============================================================================

PRESETS: Dict[str, Dict[str, Any]] = {
    'swb-300h': {
        'train': {'batch_size': 32, 'learning_rate': 0.5, 'patience': 3, 'clip': 1.0,
                  'smoothing': 0.01},
        'net': {'hidden_dim': 1024, 'num_layers': 5},
    },
    'fisher-2000h': {
        'train': {'batch_size': 32, 'learning_rate': 0.5, 'patience': 1, 'clip': 1.0,
                  'smoothing': 0.01},
        'net': {'hidden_dim': 1024, 'num_layers': 9, 'merge': 'concat'},
    },
    'full-9x1024': {
        'net': {'hidden_dim': 1024, 'num_layers': 9, 'merge': 'concat',
                'input_dim': 120, 'output_dim': 79},
    },
    'desk': {
        'net': {'hidden_dim': 128, 'num_layers': 3},
        'train': {'max_epochs': 30},
    },
}


def merge_trees(base: Dict[str, Any], update: Dict[str, Any]) -> Dict[str, Any]:
    """Recursive dict merge; ``update`` wins."""
    merged = dict(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = merge_trees(merged[key], value)
        else:
            merged[key] = value
    return merged


def preset(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"Unknown preset '{name}' (available: {', '.join(sorted(PRESETS))})")
    return ExperimentConfig.from_dict(PRESETS[name])


# ============================================================================
# FILES AND OVERRIDES
# ============================================================================

def parse_override(item: str):
    """'section.key=value' -> (['section', 'key'], value); JSON value, else string."""
    if '=' not in item:
        raise ConfigError(f"Override '{item}' must look like section.key=value")
    dotted, raw = item.split('=', 1)
    keys = [k for k in dotted.strip().split('.') if k]
    if not keys:
        raise ConfigError(f"Override '{item}' has an empty key")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return keys, value


def apply_overrides(tree: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    tree = json.loads(json.dumps(tree))
    for item in overrides or []:
        keys, value = parse_override(item)
        node = tree
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ConfigError(f"Override '{item}' descends into a non-section value")
        node[keys[-1]] = value
    return tree


def load_config(path=None, overrides: Sequence[str] = (), preset_name: Optional[str] = None) -> ExperimentConfig:
    """
    Read a JSON experiment file (optional), starting from a preset (optional),
    then apply ``--set`` overrides.

    Raises:
        ConfigError: unreadable file, unknown key or invalid value
    """
    tree: Dict[str, Any] = {}
    if preset_name:
        if preset_name not in PRESETS:
            raise ConfigError(f"Unknown preset '{preset_name}' (available: {', '.join(sorted(PRESETS))})")
        tree = merge_trees(tree, PRESETS[preset_name])
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"Configuration file not found: {path}")
        try:
            tree = merge_trees(tree, json.loads(path.read_text(encoding='utf-8')))
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON: {e}")
    tree = apply_overrides(tree, overrides)
    cfg = ExperimentConfig.from_dict(tree)
    logger.debug(f"Configuration loaded (preset={preset_name}, file={path})")
    return cfg


def echo_config(cfg: ExperimentConfig, run_dir) -> Path:
    """Write the full configuration to ``run_dir/config.json``."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    out = run_dir / 'config.json'
    out.write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + '\n', encoding='utf-8')
    return out
