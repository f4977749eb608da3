import json

import pandas as pd
from openpyxl import load_workbook

from src.decode import DecodeResult
from src.export import (export_report_xlsx, format_ablation_table, format_report_table, write_decode_output,
                        write_nbest_json, write_report_json)
from src.scoring import score_corpus

RESULTS = [
    DecodeResult('yes he', (1, 2), -1.25, utt_id='u1'),
    DecodeResult('', (), -3.5, utt_id='u2', nbest=[('', (), -3.5), ('a', (4,), -4.0)]),
]


def test_decode_output_tsv(tmp_path):
    path = write_decode_output(RESULTS, tmp_path / 'out' / 'hyp.tsv')
    lines = path.read_text(encoding='utf-8').splitlines()
    assert lines[0] == 'u1\tyes he\t-1.250000'
    assert lines[1].split('\t')[0] == 'u2'


def test_nbest_json(tmp_path):
    data = json.loads(write_nbest_json(RESULTS, tmp_path / 'nbest.json').read_text(encoding='utf-8'))
    assert data['u1'] == [{'text': 'yes he', 'units': [1, 2], 'score': -1.25}]
    assert [e['text'] for e in data['u2']] == ['', 'a']


def test_report_json_and_table(tmp_path):
    report = score_corpus([('u1', 'a b c', 'a x c'), ('u2', 'd', 'd')])
    data = json.loads(write_report_json(report, tmp_path / 'r.json', {'system': 'greedy'}).read_text())
    assert data['summary']['error_rate'] == 25.0
    assert data['system'] == 'greedy'
    assert len(data['utterances']) == 2
    table = format_report_table(report, 'dev')
    assert 'WER (%)' in table and '25.00' in table


def test_ablation_table():
    table = format_ablation_table([{'system': 'greedy', 'wer': 40.0, 'cer': 20.0},
                                   {'system': 'beam+lm', 'wer': 30.5, 'cer': 15.25}])
    assert 'beam+lm' in table and '30.50' in table


def test_xlsx_sheets(tmp_path):
    reports = {'wer': score_corpus([('u1', 'a b', 'a')]), 'cer': score_corpus([('u1', 'ab', 'a')], 'char')}
    ablation = [{'system': 'greedy', 'wer': 50.0, 'cer': 50.0}]
    path = export_report_xlsx(reports, tmp_path / 'report.xlsx', ablation)
    assert load_workbook(path).sheetnames == ['Résumé', 'wer', 'cer', 'Ablation']
    summary = pd.read_excel(path, sheet_name='Résumé', engine='openpyxl')
    assert list(summary['Rapport']) == ['wer', 'cer']
    assert list(summary['error_rate']) == [50.0, 50.0]
