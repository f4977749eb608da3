"""Desk-scale learning runs on the synthetic corpus (slow)."""

import json

import pytest
from openpyxl import load_workbook

from src.cli import EXIT_OK, main

pytestmark = pytest.mark.slow


def corpus_args(corpus, run_dir, *extra):
    return ['--preset', 'desk', '--run-dir', str(run_dir), '--seed', '0',
            '--set', f"paths.train_manifest={corpus / 'train.tsv'}",
            '--set', f"paths.dev_manifest={corpus / 'dev.tsv'}",
            '--set', f"paths.test_manifest={corpus / 'test.tsv'}",
            '--set', 'lm.order=5',
            '--set', 'decode.sweep_widths=[16]', '--set', 'decode.sweep_lm_weights=[0.0,0.5,1.0]',
            '--set', 'decode.sweep_bonuses=[0.0,1.0]',
            '--set', 'ctc2.hidden_dim=128', '--set', 'ctc2.num_layers=2', '--set', 'ctc2.max_epochs=10',
            '--log-level', 'WARNING', *extra]


@pytest.fixture(scope='module')
def trained_run(tmp_path_factory):
    """50-word corpus (2000 / 200 / 200) and a 3 x 128 model trained for up to 30 epochs."""
    root = tmp_path_factory.mktemp('desk')
    corpus, run_dir = root / 'corpus', root / 'run'
    assert main(['synth', '--out', str(corpus), '--vocab-size', '50', '--utterances', '2000',
                 '--dev-utterances', '200', '--test-utterances', '200', '--seed', '0']) == EXIT_OK
    args = corpus_args(corpus, run_dir)
    assert main(['train', *args]) == EXIT_OK
    return corpus, run_dir, args


def test_greedy_test_cer_below_five_percent(trained_run):
    corpus, run_dir, args = trained_run
    assert main(['decode', *args]) == EXIT_OK
    assert main(['score', '--ref', str(corpus / 'test.tsv'), '--hyp', str(run_dir / 'decode.tsv'),
                 '--json', str(run_dir / 'greedy.json')]) == EXIT_OK
    report = json.loads((run_dir / 'greedy.json').read_text(encoding='utf-8'))
    assert report['summary']['ref_tokens'] > 0
    assert report['cer']['error_rate'] < 5.0


def test_post_processing_never_hurts(trained_run):
    _, run_dir, args = trained_run
    assert main(['sweep', *args]) == EXIT_OK
    rows = json.loads((run_dir / 'sweep.json').read_text(encoding='utf-8'))['ablation']['post_processing']
    wer = {row['system']: row['wer'] for row in rows}
    assert wer['none'] >= wer['iterated-ctc'] >= wer['char-beam']


def test_inventory_and_architecture_ablations(tmp_path):
    corpus, run_dir = tmp_path / 'corpus', tmp_path / 'run'
    assert main(['synth', '--out', str(corpus), '--vocab-size', '8', '--utterances', '40',
                 '--dev-utterances', '8', '--test-utterances', '8', '--dim', '8', '--seed', '3']) == EXIT_OK
    args = corpus_args(corpus, run_dir,
                       '--set', 'net.hidden_dim=64', '--set', 'net.num_layers=1', '--set', 'train.max_epochs=2',
                       '--set', 'ctc2.hidden_dim=32', '--set', 'ctc2.num_layers=1', '--set', 'ctc2.max_epochs=1',
                       '--set', 'decode.sweep_architectures=[[1,64],[2,64]]')
    assert main(['train', *args]) == EXIT_OK
    assert main(['sweep', *args, '--inventory-ablation', '--arch-ablation']) == EXIT_OK

    tables = json.loads((run_dir / 'sweep.json').read_text(encoding='utf-8'))['ablation']
    assert [row['system'] for row in tables['inventory']] == ['explicit-space', 'capital-initial',
                                                              'initial-and-final']
    assert all(0.0 <= row['wer'] for row in tables['inventory'])
    assert [(row['layers'], row['hidden']) for row in tables['architecture']] == [(1, 64), (2, 64)]
    assert tables['architecture'][0]['parameters'] < tables['architecture'][1]['parameters']
    for name in ('scheme-explicit-space', 'scheme-initial-and-final', 'arch-2x64'):
        assert (run_dir / name / 'best.ckpt').exists(), name
    sheets = load_workbook(run_dir / 'sweep.xlsx').sheetnames
    assert 'Inventaire' in sheets and 'Architecture' in sheets
