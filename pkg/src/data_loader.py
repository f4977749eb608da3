"""
Dataset loader: manifests -> feature matrices + encoded targets
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, List, Optional, Sequence

import numpy as np
import pandas as pd

from src.app_logging import get_logger
from src.config import FrontendConfig
from src.errors import DataError
from src.file_validator import ManifestValidator
from src.frontend import extract
from src.inventory import EncodedSequence, Inventory, encode, normalize_text
from src.lattice import min_frames

logger = get_logger(__name__)


@dataclass
class Utterance:
    """One training / evaluation example."""
    utt_id: str
    features: np.ndarray           # T' x D, stacked when the frontend stacks
    target: Optional[EncodedSequence]   # None when the inventory cannot encode the reference
    path: Optional[Path] = None
    reference: Optional[str] = None     # normalized text, kept for scoring

    @property
    def num_frames(self) -> int:
        return self.features.shape[0]

    @property
    def transcript(self) -> str:
        if self.reference is not None:
            return self.reference
        return self.target.text if self.target is not None else ''

    @property
    def feasible(self) -> bool:
        return self.target is not None and self.num_frames >= min_frames(self.target.ids)


@dataclass
class Dataset:
    """Feasible utterances of a manifest plus the ids that were skipped."""
    utterances: List[Utterance]
    skipped: List[str] = field(default_factory=list)
    name: str = ''

    def __len__(self) -> int:
        return len(self.utterances)

    def __iter__(self) -> Iterator[Utterance]:
        return iter(self.utterances)

    def __getitem__(self, idx: int) -> Utterance:
        return self.utterances[idx]

    @property
    def input_dim(self) -> int:
        if not self.utterances:
            raise DataError(f"Dataset '{self.name}' is empty")
        return self.utterances[0].features.shape[1]

    @property
    def total_frames(self) -> int:
        return sum(u.num_frames for u in self.utterances)

    def transcripts(self) -> List[str]:
        return [u.transcript for u in self.utterances]

    def by_id(self):
        return {u.utt_id: u for u in self.utterances}


def read_manifest(manifest, check_paths: bool = True) -> pd.DataFrame:
    """
    Read a ``utt-id<TAB>path<TAB>transcript`` manifest.

    Paths are resolved relative to the manifest's directory.

    Raises:
        DataError: missing file or malformed rows (all problems listed)
    """
    manifest = Path(manifest)
    is_valid, errors, info = ManifestValidator.validate_file(manifest, 'manifest', check_paths)
    if not is_valid:
        detail = '\n  '.join(errors[:10])
        raise DataError(f"Malformed manifest {manifest}:\n  {detail}")
    for warning in info.get('warnings', [])[:5]:
        logger.debug(f"{manifest}: {warning}")

    df = ManifestValidator.read_table(manifest, 'manifest')
    df['path'] = df['path'].apply(lambda p: manifest.parent / p)
    return df


def read_transcripts(path) -> pd.DataFrame:
    """Reference text as (utt_id, transcript) from a manifest or a 2-column file."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"File not found: {path}")
    file_type = ManifestValidator.sniff_type(path)
    is_valid, errors, _ = ManifestValidator.validate_file(path, file_type, check_paths=False)
    if not is_valid:
        raise DataError(f"Malformed file {path}: {'; '.join(errors[:5])}")
    df = ManifestValidator.read_table(path, file_type)
    if file_type == 'hypotheses':
        df = df.rename(columns={'text': 'transcript'})
    return df[['utt_id', 'transcript']]


def _eval_target(text: str, inv: Inventory, utt_id: str) -> Optional[EncodedSequence]:
    try:
        return encode(text, inv, utt_id=utt_id)
    except DataError as e:
        logger.warning(f"{e}; utterance kept for scoring only")
        return None


def load_dataset(manifest, inv: Inventory, frontend: Optional[FrontendConfig] = None,
                 workers: int = 1, name: Optional[str] = None, training: bool = True) -> Dataset:
    """
    Load every utterance of ``manifest``: features through the frontend,
    transcripts through the inventory codec.

    Args:
        training: strict loading for training and polishing. Utterances
            with fewer frames than their target needs are skipped and
            counted, and a transcript the inventory cannot encode is an
            error. With ``False`` (decoding, scoring) every row is kept:
            the normalized transcript is stored as the reference and the
            target is None when it cannot be encoded.

    Raises:
        DataError: malformed manifest, missing feature file, unsupported
            character (training only)
    """
    frontend = frontend or FrontendConfig()
    df = read_manifest(manifest)
    name = name or Path(manifest).stem

    def _load(row) -> Utterance:
        if training:
            target, reference = encode(row.transcript, inv, utt_id=row.utt_id), None
        else:
            target, reference = _eval_target(row.transcript, inv, row.utt_id), normalize_text(row.transcript)
        fm = extract(row.path, frontend)
        return Utterance(row.utt_id, fm.frames, target, row.path, reference)

    rows = list(df.itertuples(index=False))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            loaded = list(pool.map(_load, rows))
    else:
        loaded = [_load(row) for row in rows]

    dims = {u.features.shape[1] for u in loaded}
    if len(dims) > 1:
        raise DataError(f"Manifest {manifest} mixes feature dimensions {sorted(dims)}")

    if not training:
        logger.info(f"{name}: {len(loaded)} utterances, {sum(u.num_frames for u in loaded)} frames")
        return Dataset(loaded, [], name)

    kept = [u for u in loaded if u.feasible]
    skipped = [u.utt_id for u in loaded if not u.feasible]
    if skipped:
        logger.warning(f"{name}: skipped {len(skipped)} unalignable utterance(s) (too few frames)")
    logger.info(f"{name}: {len(kept)} utterances, {sum(u.num_frames for u in kept)} frames")
    return Dataset(kept, skipped, name)


def dataset_from_arrays(utt_ids: Sequence[str], features: Sequence[np.ndarray],
                        targets: Sequence[EncodedSequence], name: str = '') -> Dataset:
    """Build a dataset from in-memory matrices, skipping unalignable pairs."""
    kept, skipped = [], []
    for utt_id, feats, target in zip(utt_ids, features, targets):
        utt = Utterance(utt_id, np.asarray(feats, dtype=np.float64), target)
        if len(target) == 0 or utt.num_frames == 0 or not utt.feasible:
            skipped.append(utt_id)
        else:
            kept.append(utt)
    if skipped:
        logger.warning(f"{name or 'dataset'}: skipped {len(skipped)} unalignable utterance(s)")
    return Dataset(kept, skipped, name)
