"""
Export decode output and scoring reports
Decode hypotheses as TSV / JSON n-best, score reports as JSON, console
table and structured Excel file
"""

import json
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import pandas as pd

from src.decode import DecodeResult
from src.scoring import ScoreReport


def write_decode_output(results: Sequence[DecodeResult], output_file) -> Path:
    """One line per utterance: utt-id<TAB>text<TAB>score"""
    rows = [(r.utt_id, r.text, f"{r.score:.6f}") for r in results]
    output_file = Path(output_file)
    output_file.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(rows).to_csv(output_file, sep='\t', header=False, index=False)
    return output_file


def write_nbest_json(results: Sequence[DecodeResult], output_file) -> Path:
    """N-best lists as {utt-id: [{text, units, score}, ...]}"""
    data = {}
    for r in results:
        entries = r.nbest if r.nbest is not None else [(r.text, r.ids, r.score)]
        data[r.utt_id] = [{'text': text, 'units': list(ids), 'score': score} for text, ids, score in entries]
    output_file = Path(output_file)
    output_file.write_text(json.dumps(data, indent=2, sort_keys=True) + '\n', encoding='utf-8')
    return output_file


def report_to_dict(report: ScoreReport, extra: Optional[Dict] = None) -> Dict:
    data = {'summary': report.summary(), 'utterances': report.utterances}
    if extra:
        data.update(extra)
    return data


def write_report_json(report: ScoreReport, output_file, extra: Optional[Dict] = None) -> Path:
    output_file = Path(output_file)
    output_file.parent.mkdir(parents=True, exist_ok=True)
    output_file.write_text(json.dumps(report_to_dict(report, extra), indent=2) + '\n', encoding='utf-8')
    return output_file


def format_report_table(report: ScoreReport, title: str = '') -> str:
    """Human-readable summary table."""
    label = 'WER' if report.mode == 'word' else 'CER'
    lines = [f"{'=' * 60}"]
    if title:
        lines.append(title)
        lines.append(f"{'-' * 60}")
    lines.append(f"  {'Utterances':<20s}{len(report.utterances):>10d}")
    lines.append(f"  {'Reference tokens':<20s}{report.ref_tokens:>10d}")
    lines.append(f"  {'Substitutions':<20s}{report.substitutions:>10d}")
    lines.append(f"  {'Deletions':<20s}{report.deletions:>10d}")
    lines.append(f"  {'Insertions':<20s}{report.insertions:>10d}")
    lines.append(f"  {label + ' (%)':<20s}{report.error_rate:>10.2f}")
    lines.append(f"{'=' * 60}")
    return '\n'.join(lines)


def format_ablation_table(rows: List[Dict], title: str = 'Error rate (%) by post-processing') -> str:
    """Rows of {'system': ..., 'wer': ..., 'cer': ...} as a fixed-width table."""
    df = pd.DataFrame(rows)
    return f"{title}\n{df.to_string(index=False, float_format=lambda v: f'{v:.2f}')}"


def _autofit(writer):
    for sheet_name in writer.sheets:
        worksheet = writer.sheets[sheet_name]
        for column in worksheet.columns:
            max_length = max((len(str(cell.value)) for cell in column if cell.value is not None), default=0)
            worksheet.column_dimensions[column[0].column_letter].width = min(max_length + 2, 60)


def export_report_xlsx(reports: Dict[str, ScoreReport], output_file,
                       ablation: Optional[List[Dict]] = None,
                       tables: Optional[Dict[str, List[Dict]]] = None) -> Path:
    """
    Export score reports to Excel

    Sheets:
    1. Résumé - one row per report (mode, counts, rate)
    2. <name> - per-utterance breakdown of every report
    3. Ablation - post-processing comparison, when given
    4. one sheet per extra comparison table (architecture, inventory)
    """
    output_file = Path(output_file)
    output_file.parent.mkdir(parents=True, exist_ok=True)
    summary = pd.DataFrame([{'Rapport': name, **report.summary()} for name, report in reports.items()])

    with pd.ExcelWriter(output_file, engine='openpyxl') as writer:
        summary.to_excel(writer, sheet_name='Résumé', index=False)
        for name, report in reports.items():
            pd.DataFrame(report.utterances).to_excel(writer, sheet_name=name[:31], index=False)
        if ablation:
            pd.DataFrame(ablation).to_excel(writer, sheet_name='Ablation', index=False)
        for name, rows in (tables or {}).items():
            pd.DataFrame(rows).to_excel(writer, sheet_name=name[:31], index=False)
        _autofit(writer)

    print(f"✓ Rapport exporté vers: {output_file}")
    return output_file
