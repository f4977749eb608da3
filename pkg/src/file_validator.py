"""
Manifest and decode-output validator
Checks that manifest and hypothesis files match the expected structure
before anything is loaded
"""

import csv
from pathlib import Path
from typing import Dict, List, Tuple

import pandas as pd

from src.inventory import SUPPORTED_CHARS, normalize_text


class ManifestValidator:
    """Validates TSV manifest structure before loading"""

    # Expected columns for each file type
    EXPECTED_STRUCTURES = {
        'manifest': {
            'columns': ['utt_id', 'path', 'transcript'],
            'min_rows': 1,
            'description': 'Manifeste (utt-id, chemin, transcription)',
        },
        'transcripts': {
            'columns': ['utt_id', 'transcript'],
            'min_rows': 1,
            'description': 'Transcriptions de référence (utt-id, texte)',
        },
        'hypotheses': {
            'columns': ['utt_id', 'text', 'score'],
            'min_rows': 0,
            'description': 'Sortie de décodage (utt-id, texte, score)',
        },
    }

    FEATURE_SUFFIXES = ('.npy', '.tsv', '.txt', '.wav')

    @staticmethod
    def read_table(file_path, file_type: str) -> pd.DataFrame:
        """Headerless TSV read as strings, one column per expected field."""
        columns = ManifestValidator.EXPECTED_STRUCTURES[file_type]['columns']
        df = pd.read_csv(file_path, sep='\t', header=None, dtype=str, keep_default_na=False,
                         quoting=csv.QUOTE_NONE, names=columns)
        return df

    @staticmethod
    def validate_file(file_path, file_type: str = 'manifest',
                      check_paths: bool = True) -> Tuple[bool, List[str], Dict]:
        """
        Validate a TSV file structure

        Args:
            file_path: Path to the TSV file
            file_type: Type of file ('manifest', 'transcripts', 'hypotheses')
            check_paths: also check that manifest feature paths exist

        Returns:
            Tuple of (is_valid, error_messages, file_info)
        """
        errors = []
        warnings = []
        file_info = {}
        file_path = Path(file_path)

        if file_type not in ManifestValidator.EXPECTED_STRUCTURES:
            errors.append(f"Type de fichier inconnu: {file_type}")
            return False, errors, file_info
        expected = ManifestValidator.EXPECTED_STRUCTURES[file_type]

        if not file_path.exists():
            errors.append(f"Fichier introuvable: {file_path}")
            return False, errors, file_info

        try:
            raw_lines = [line for line in file_path.read_text(encoding='utf-8').splitlines() if line.strip()]
        except UnicodeDecodeError as e:
            errors.append(f"Encodage invalide (UTF-8 attendu): {e}")
            return False, errors, file_info

        file_info['rows'] = len(raw_lines)
        if len(raw_lines) < expected['min_rows']:
            errors.append(
                f"Fichier vide ou insuffisant. "
                f"Minimum {expected['min_rows']} ligne(s) requise(s), "
                f"trouvé {len(raw_lines)}"
            )
            return False, errors, file_info

        n_cols = len(expected['columns'])
        for line_no, line in enumerate(raw_lines, start=1):
            found = len(line.split('\t'))
            if found != n_cols:
                errors.append(f"Ligne {line_no}: {found} colonne(s), {n_cols} attendue(s)")
        if errors:
            return False, errors, file_info
        if not raw_lines:
            return True, errors, file_info

        df = ManifestValidator.read_table(file_path, file_type)
        if file_type == 'manifest':
            errors.extend(ManifestValidator._validate_manifest(df, file_path.parent, check_paths, warnings))
        elif file_type == 'transcripts':
            errors.extend(ManifestValidator._validate_ids(df))
        else:
            errors.extend(ManifestValidator._validate_hypotheses(df))

        if warnings:
            file_info['warnings'] = warnings
        return len(errors) == 0, errors, file_info

    @staticmethod
    def _validate_ids(df: pd.DataFrame) -> List[str]:
        errors = []
        empty = df.index[df['utt_id'].str.strip() == ''].tolist()
        if empty:
            errors.append(f"Identifiant vide aux lignes: {', '.join(str(i + 1) for i in empty[:5])}")
        duplicates = df['utt_id'][df['utt_id'].duplicated()].unique().tolist()
        if duplicates:
            errors.append(f"Identifiants dupliqués: {', '.join(duplicates[:5])}")
        return errors

    @staticmethod
    def _validate_manifest(df: pd.DataFrame, base_dir: Path, check_paths: bool,
                           warnings: List[str]) -> List[str]:
        errors = ManifestValidator._validate_ids(df)

        for idx, row in df.iterrows():
            suffix = Path(row['path']).suffix
            if suffix not in ManifestValidator.FEATURE_SUFFIXES:
                errors.append(f"Ligne {idx + 1} ({row['utt_id']}): extension non supportée '{suffix}'")
            elif check_paths and not (base_dir / row['path']).exists():
                errors.append(f"Ligne {idx + 1} ({row['utt_id']}): fichier introuvable {row['path']}")

            text = normalize_text(row['transcript'])
            if not text:
                errors.append(f"Ligne {idx + 1} ({row['utt_id']}): transcription vide")
                continue
            bad = sorted(set(text) - SUPPORTED_CHARS)
            if bad:
                errors.append(f"Ligne {idx + 1} ({row['utt_id']}): caractère(s) non supporté(s) {bad}")
            elif text != row['transcript']:
                warnings.append(f"Ligne {idx + 1} ({row['utt_id']}): transcription normalisée")
        return errors

    @staticmethod
    def _validate_hypotheses(df: pd.DataFrame) -> List[str]:
        errors = ManifestValidator._validate_ids(df)
        scores = pd.to_numeric(df['score'], errors='coerce')
        bad = df.index[scores.isna()].tolist()
        if bad:
            errors.append(f"Score non numérique aux lignes: {', '.join(str(i + 1) for i in bad[:5])}")
        return errors

    @staticmethod
    def sniff_type(file_path) -> str:
        """
        'hypotheses' when a three-column file has a numeric third column,
        'manifest' for other three-column files, 'transcripts' for two columns.
        """
        first = ''
        for line in Path(file_path).read_text(encoding='utf-8').splitlines():
            if line.strip():
                first = line
                break
        fields = first.split('\t')
        if len(fields) == 2:
            return 'transcripts'
        if len(fields) == 3:
            try:
                float(fields[2])
                return 'hypotheses'
            except ValueError:
                return 'manifest'
        return 'manifest'


def validate_all_files(*files, check_paths: bool = True) -> Tuple[bool, Dict[str, Dict]]:
    """
    Validate several files at once, each against its detected type

    Returns:
        Tuple of (all_valid, results_dict)
    """
    results = {}
    all_valid = True
    for file_path in files:
        if file_path is None:
            continue
        file_type = ManifestValidator.sniff_type(file_path) if Path(file_path).is_file() else 'manifest'
        is_valid, errors, info = ManifestValidator.validate_file(file_path, file_type, check_paths)
        info['type'] = file_type
        results[str(file_path)] = {'valid': is_valid, 'errors': errors, 'info': info}
        if not is_valid:
            all_valid = False
    return all_valid, results


def print_validation_results(results: Dict[str, Dict]):
    """Console report in the ✓ / ⚠️ / ❌ style"""
    for name, result in results.items():
        marker = '✓' if result['valid'] else '❌'
        file_type = result['info'].get('type', 'manifest')
        print(f"{marker} {name} ({file_type}): {result['info'].get('rows', 0)} ligne(s)")
        for error in result['errors']:
            print(f"   ❌ {error}")
        for warning in result['info'].get('warnings', []):
            print(f"   ⚠️  {warning}")
