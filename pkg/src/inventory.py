"""
Graphemic Unit Inventory
========================

Maps readable text to sequences of output units and back.

Three schemes are supported:
- capital-initial (default): word-initial letters are distinct units
  ("yes he has one" -> Y e s H e H a s O n e), no space unit.
- explicit-space: lowercase letters plus a "_" unit between words.
- initial-and-final: capital-initial plus word-final variants ("s>").

In every scheme a repeated letter is one double-letter unit ("ll") and
an apostrophe is glued to the following letter ("'d").
"""

import re
import string
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from src.app_logging import get_logger
from src.errors import ConfigError, DataError

logger = get_logger(__name__)

BLANK_ID = 0
BLANK_SURFACE = '<blank>'
SPACE_SURFACE = '_'
FINAL_MARK = '>'
LETTERS = frozenset(string.ascii_lowercase)
SUPPORTED_CHARS = LETTERS | {"'", ' '}

_PUNCT_TABLE = str.maketrans('', '', ''.join(c for c in string.punctuation if c != "'"))


class UnitKind(str, Enum):
    BLANK = 'blank'
    INITIAL = 'initial-letter'
    INTERIOR = 'interior-letter'
    DOUBLE = 'double-letter'
    APOSTROPHE = 'apostrophe-unit'
    FINAL = 'final-letter'
    OTHER = 'other-symbol'


class Scheme(str, Enum):
    EXPLICIT_SPACE = 'explicit-space'
    CAPITAL_INITIAL = 'capital-initial'
    INITIAL_AND_FINAL = 'initial-and-final'

    @classmethod
    def parse(cls, value) -> 'Scheme':
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value))
        except ValueError:
            valid = ', '.join(s.value for s in cls)
            raise ConfigError(f"Unknown inventory scheme '{value}' (expected one of: {valid})")

    @property
    def marks_initials(self) -> bool:
        return self is not Scheme.EXPLICIT_SPACE


def unit_kind(surface: str) -> UnitKind:
    """Classify a unit surface string."""
    if surface == BLANK_SURFACE:
        return UnitKind.BLANK
    if surface == SPACE_SURFACE:
        return UnitKind.OTHER
    if len(surface) == 1 and surface.lower() in LETTERS:
        return UnitKind.INITIAL if surface.isupper() else UnitKind.INTERIOR
    if len(surface) == 2:
        first, second = surface
        if first == "'" and second.lower() in LETTERS:
            return UnitKind.APOSTROPHE
        if first == second and first in LETTERS:
            return UnitKind.DOUBLE
        if first in LETTERS and second == FINAL_MARK:
            return UnitKind.FINAL
    raise DataError(f"Invalid unit surface '{surface}'")


@dataclass(frozen=True)
class Unit:
    """One output unit."""
    id: int
    surface: str
    kind: UnitKind

    @property
    def is_word_initial(self) -> bool:
        """Initial letters and apostrophe units carrying a capital ('C)."""
        if self.kind is UnitKind.INITIAL:
            return True
        return self.kind is UnitKind.APOSTROPHE and self.surface[1].isupper()

    @property
    def text(self) -> str:
        """Characters this unit contributes to the readable output."""
        if self.kind is UnitKind.BLANK:
            return ''
        if self.surface == SPACE_SURFACE:
            return ' '
        if self.kind is UnitKind.FINAL:
            return self.surface[0]
        return self.surface.lower()


@dataclass(frozen=True)
class EncodedSequence:
    """Unit ids for one utterance (never contains the blank)."""
    ids: Tuple[int, ...]
    text: str

    def __len__(self) -> int:
        return len(self.ids)


# ============================================================================
# TEXT NORMALIZATION
# ============================================================================

def normalize_text(text: str) -> str:
    """
    Lowercase, strip punctuation except apostrophes, collapse spaces.

    Apostrophe runs become one apostrophe and an apostrophe that is not
    followed by a letter is dropped, so every remaining apostrophe can be
    glued to a letter. The function is idempotent.
    """
    text = str(text).lower().translate(_PUNCT_TABLE)
    text = re.sub(r"'+", "'", text)
    text = re.sub(r"'(?![a-z])", '', text)
    return ' '.join(text.split())


def check_supported(text: str, utt_id: Optional[str] = None):
    """Raise DataError naming the first unsupported character."""
    for ch in text:
        if ch not in SUPPORTED_CHARS:
            where = f" in utterance '{utt_id}'" if utt_id is not None else ''
            raise DataError(f"Unsupported character {ch!r}{where}: {text!r}")


def _segment_word(word: str, scheme: Scheme) -> List[str]:
    units = []
    i, n = 0, len(word)

    if scheme.marks_initials:
        # a doubled first letter is not paired: "eel" -> E e l
        if word[0] == "'":
            units.append("'" + word[1].upper())
            i = 2
        else:
            units.append(word[0].upper())
            i = 1

    while i < n:
        ch = word[i]
        if ch == "'":
            units.append("'" + word[i + 1])
            i += 2
        elif i + 1 < n and word[i + 1] == ch:
            units.append(ch * 2)
            i += 2
        else:
            units.append(ch)
            i += 1

    if scheme is Scheme.INITIAL_AND_FINAL and len(units) >= 2 and len(units[-1]) == 1:
        units[-1] = units[-1] + FINAL_MARK
    return units


def segment(text: str, scheme: Scheme) -> List[str]:
    """Split normalized text into unit surfaces under ``scheme``."""
    surfaces = []
    for w_idx, word in enumerate(text.split(' ')):
        if not word:
            continue
        if w_idx > 0 and scheme is Scheme.EXPLICIT_SPACE:
            surfaces.append(SPACE_SURFACE)
        surfaces.extend(_segment_word(word, scheme))
    return surfaces


# ============================================================================
# INVENTORY
# ============================================================================

class Inventory:
    """Ordered, immutable set of units; id 0 is the blank."""

    def __init__(self, surfaces: Sequence[str], scheme=Scheme.CAPITAL_INITIAL):
        self.scheme = Scheme.parse(scheme)
        units = [Unit(BLANK_ID, BLANK_SURFACE, UnitKind.BLANK)]
        for surface in surfaces:
            if surface == BLANK_SURFACE:
                continue
            units.append(Unit(len(units), surface, unit_kind(surface)))
        self._units = tuple(units)
        self.lookup: Dict[str, int] = {u.surface: u.id for u in self._units}
        if len(self.lookup) != len(self._units):
            raise DataError('Unit surfaces must be unique')

    @property
    def units(self) -> Tuple[Unit, ...]:
        return self._units

    @property
    def size(self) -> int:
        return len(self._units)

    def __len__(self) -> int:
        return len(self._units)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Inventory):
            return NotImplemented
        return self.scheme is other.scheme and self._units == other._units

    def __repr__(self) -> str:
        return f"Inventory(scheme={self.scheme.value}, size={self.size})"

    def unit(self, unit_id: int) -> Unit:
        """Unit for ``unit_id``; DataError if unknown."""
        if not 0 <= int(unit_id) < len(self._units):
            raise DataError(f"Unknown unit id {unit_id} (inventory size {self.size})")
        return self._units[int(unit_id)]

    def id_of(self, surface: str) -> int:
        try:
            return self.lookup[surface]
        except KeyError:
            raise DataError(f"No unit '{surface}' in inventory")

    def save(self, path):
        """Write the line-oriented inventory file."""
        lines = [f"#scheme\t{self.scheme.value}"]
        lines += [f"{u.id}\t{u.surface}\t{u.kind.value}" for u in self._units]
        Path(path).write_text('\n'.join(lines) + '\n', encoding='utf-8')


def load_inventory(path) -> Inventory:
    """Read an inventory written by ``Inventory.save``."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"Inventory file not found: {path}")

    scheme = Scheme.CAPITAL_INITIAL
    surfaces = []
    for line_no, line in enumerate(path.read_text(encoding='utf-8').splitlines(), start=1):
        if not line:
            continue
        fields = line.split('\t')
        if fields[0] == '#scheme':
            scheme = Scheme.parse(fields[1])
            continue
        if len(fields) != 3:
            raise DataError(f"{path}:{line_no}: expected 'id<TAB>surface<TAB>kind'")
        unit_id, surface, kind = fields
        if int(unit_id) != len(surfaces):
            raise DataError(f"{path}:{line_no}: unit ids must be contiguous from 0")
        if unit_kind(surface).value != kind:
            raise DataError(f"{path}:{line_no}: kind '{kind}' does not match surface '{surface}'")
        surfaces.append(surface)

    if not surfaces or surfaces[0] != BLANK_SURFACE:
        raise DataError(f"{path}: id 0 must be {BLANK_SURFACE}")
    return Inventory(surfaces[1:], scheme)


def build_inventory(transcripts: Iterable[str], scheme=Scheme.CAPITAL_INITIAL,
                    utt_ids: Optional[Sequence[str]] = None) -> Inventory:
    """
    Build the inventory from corpus transcripts.

    Contains the blank, every unit produced by ``segment`` over the corpus
    and, for schemes with word-initial units, both the initial and interior
    variant of every observed letter. Units are sorted by surface.

    Raises:
        DataError: a transcript holds an unsupported character
    """
    scheme = Scheme.parse(scheme)
    surfaces = set()
    for idx, raw in enumerate(transcripts):
        utt_id = utt_ids[idx] if utt_ids is not None else idx
        text = normalize_text(raw)
        check_supported(text, utt_id)
        if not text:
            continue
        for surface in segment(text, scheme):
            surfaces.add(surface)
            letter = surface[0]
            if scheme.marks_initials and letter.lower() in LETTERS:
                surfaces.add(letter.lower())
                surfaces.add(letter.upper())

    inv = Inventory(sorted(surfaces), scheme)
    logger.debug(f"Built {inv!r}")
    return inv


# ============================================================================
# CODECS
# ============================================================================

def encode(text: str, inv: Inventory, utt_id: Optional[str] = None) -> EncodedSequence:
    """
    Encode text into unit ids.

    Raises:
        DataError: empty text, unsupported character, or a unit missing from ``inv``
    """
    normalized = normalize_text(text)
    if not normalized:
        where = f" (utterance '{utt_id}')" if utt_id is not None else ''
        raise DataError(f"Cannot encode empty text{where}")
    check_supported(normalized, utt_id)

    ids = []
    for surface in segment(normalized, inv.scheme):
        unit_id = inv.lookup.get(surface)
        if unit_id is None:
            where = f" in utterance '{utt_id}'" if utt_id is not None else ''
            raise DataError(f"No unit for '{surface}'{where}")
        ids.append(unit_id)
    return EncodedSequence(tuple(ids), normalized)


def decode_ids(ids: Iterable[int], inv: Inventory) -> str:
    """Render unit ids as text; a space goes before every word-initial unit."""
    pieces = []
    for unit_id in ids:
        unit = inv.unit(unit_id)
        if unit.kind is UnitKind.BLANK:
            raise DataError('Blank id in a collapsed unit sequence')
        if unit.is_word_initial and pieces:
            pieces.append(' ')
        pieces.append(unit.text)
    return ''.join(pieces)
