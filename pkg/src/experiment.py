"""
Experiment pipelines
====================

The functions behind every command-line subcommand. Each one takes an
``ExperimentConfig`` and a run directory, writes its artifacts there
and returns what it produced so tests can call it directly.

Run directory layout:

    config.json        echoed configuration
    app.log            full log
    inventory.tsv      unit inventory
    train_log.jsonl    one record per epoch
    best.ckpt          dev-best acoustic model
    lm.txt             unit n-gram
    ctc2.ckpt          second-pass model
    decode.tsv         utt-id, text, score
    report.json        scoring report
"""

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from src.app_logging import get_logger, setup_logging
from src.charlm import CharNGram, load_ngram, save_ngram, train_ngram
from src.checkpoint import load_checkpoint, save_checkpoint
from src.config import ExperimentConfig, echo_config
from src.data_loader import Dataset, load_dataset, read_transcripts
from src.decode import DecodeResult, corrupt_ids, ctc2_apply, ctc2_train, decode_dataset
from src.errors import ConfigError, DataError
from src.export import (export_report_xlsx, format_ablation_table, format_report_table,
                        write_decode_output, write_nbest_json, write_report_json)
from src.inventory import Inventory, Scheme, build_inventory, decode_ids, load_inventory
from src.lattice import TransitionConfig, build_lattice, dump_gamma, forward_backward
from src.net import NetParams, forward, init_params
from src.scoring import ScoreReport, match_references, score_corpus
from src.trainer import TrainState, polish, train

logger = get_logger(__name__)

INVENTORY_FILE = 'inventory.tsv'
LM_FILE = 'lm.txt'
CTC2_CHECKPOINT = 'ctc2.ckpt'
FINAL_CHECKPOINT = 'final.ckpt'


@dataclass
class Run:
    """Resolved run directory plus its configuration."""
    cfg: ExperimentConfig
    run_dir: Path

    def path(self, name: str) -> Path:
        return self.run_dir / name


def start_run(cfg: ExperimentConfig, run_dir=None, log_level: str = 'INFO') -> Run:
    """Create the run directory, install logging and echo the configuration."""
    run_dir = Path(run_dir or cfg.paths.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    setup_logging(run_dir, log_level)
    echo_config(cfg, run_dir)
    return Run(cfg, run_dir)


def _require(value: Optional[str], key: str) -> Path:
    if not value:
        raise ConfigError(f"Missing required setting '{key}'")
    return Path(value)


# ============================================================================
# SHARED RESOURCES
# ============================================================================

def resolve_inventory(run: Run, rebuild: bool = False) -> Inventory:
    """Configured inventory file, the run's own, or one built from the training transcripts."""
    cfg = run.cfg
    if cfg.paths.inventory and not rebuild:
        return load_inventory(cfg.paths.inventory)
    own = run.path(INVENTORY_FILE)
    if own.exists() and not rebuild:
        inv = load_inventory(own)
        if inv.scheme is Scheme.parse(cfg.inventory.scheme):
            return inv
    manifest = _require(cfg.paths.train_manifest, 'paths.train_manifest')
    refs = read_transcripts(manifest)
    inv = build_inventory(refs['transcript'].tolist(), cfg.inventory.scheme, refs['utt_id'].tolist())
    inv.save(own)
    logger.info(f"Inventory: {inv.size} units ({inv.scheme.value}) -> {own}")
    return inv


def resolve_checkpoint(run: Run) -> NetParams:
    path = Path(run.cfg.paths.checkpoint) if run.cfg.paths.checkpoint else run.path('best.ckpt')
    if not path.exists():
        raise DataError(f"Checkpoint not found: {path} (train first or set paths.checkpoint)")
    return load_checkpoint(path)


def resolve_lm(run: Run, inv: Inventory, train_set: Optional[Dataset] = None) -> CharNGram:
    """Configured LM file, the run's own, or one trained on the training transcripts."""
    if run.cfg.paths.lm:
        return load_ngram(run.cfg.paths.lm)
    own = run.path(LM_FILE)
    if own.exists():
        return load_ngram(own)
    if train_set is None:
        train_set = load_split(run, inv, 'train')
    lm = train_ngram((u.target for u in train_set), run.cfg.lm.order, run.cfg.lm.sentence_end,
                     vocab=range(1, inv.size))
    save_ngram(lm, own)
    logger.info(f"Trained {lm.order}-gram unit LM -> {own}")
    return lm


def load_split(run: Run, inv: Inventory, split: str, training: bool = True) -> Dataset:
    """Configured manifest of ``split``; ``training=False`` keeps every utterance for scoring."""
    key = f"{split}_manifest"
    manifest = _require(getattr(run.cfg.paths, key), f"paths.{key}")
    workers = run.cfg.train.workers if training else run.cfg.decode.workers
    return load_dataset(manifest, inv, run.cfg.frontend, workers=workers, name=split, training=training)


def score_results(results: List[DecodeResult], dataset: Dataset, mode: str = 'word') -> ScoreReport:
    refs = {u.utt_id: u.transcript for u in dataset}
    hyps = {r.utt_id: r.text for r in results}
    return score_corpus(match_references(refs, hyps), mode)


def _greedy_cer_scorer(dev_set: Dataset, inv: Inventory, run: Run):
    decode_cfg = replace(run.cfg.decode, beam=False)

    def scorer(params: NetParams) -> float:
        return score_results(decode_dataset(params, dev_set, inv, decode_cfg), dev_set, 'char').error_rate
    return scorer


# ============================================================================
# TRAIN / POLISH
# ============================================================================

def run_train(run: Run) -> Tuple[TrainState, Inventory]:
    """Inventory, datasets, network init (or continuation), training loop, LM."""
    cfg = run.cfg
    inv = resolve_inventory(run)
    train_set = load_split(run, inv, 'train')
    dev_set = load_split(run, inv, 'dev') if cfg.paths.dev_manifest else None

    if cfg.paths.checkpoint:
        params = load_checkpoint(cfg.paths.checkpoint)
        logger.info(f"Continuing from {cfg.paths.checkpoint}")
    else:
        net_cfg = cfg.net.net_config(train_set.input_dim, inv.size)
        params = init_params(net_cfg, cfg.seed)
    save_checkpoint(params, run.path('init.ckpt'))
    logger.info(f"Network: {params.config.num_layers} x {params.config.hidden_dim}, "
                f"{params.config.parameter_count():,d} parameters")

    scorer = _greedy_cer_scorer(dev_set or train_set, inv, run) if cfg.train.dev_metric == 'cer' else None
    state = train(train_set, dev_set, params, cfg.train, run.run_dir, cfg.seed, scorer)
    save_checkpoint(state.params, run.path(FINAL_CHECKPOINT))
    resolve_lm(run, inv, train_set)
    return state, inv


def run_polish(run: Run) -> TrainState:
    cfg = run.cfg
    inv = resolve_inventory(run)
    params = resolve_checkpoint(run)
    indomain = load_split(run, inv, 'indomain')
    dev_set = load_split(run, inv, 'dev') if cfg.paths.dev_manifest else None
    state = TrainState.create(params, cfg.train, cfg.seed)
    scorer = _greedy_cer_scorer(dev_set or indomain, inv, run) if cfg.train.dev_metric == 'cer' else None
    return polish(state, indomain, dev_set, cfg.train, run.run_dir, scorer)


# ============================================================================
# DECODE / SCORE
# ============================================================================

def run_decode(run: Run, manifest=None, output=None, nbest_file=None,
               gamma_dir=None) -> Tuple[List[DecodeResult], Optional[ScoreReport]]:
    """Decode a manifest (default: test split) and score it against its transcripts."""
    cfg = run.cfg
    inv = resolve_inventory(run)
    params = resolve_checkpoint(run)
    manifest = Path(manifest) if manifest else _require(cfg.paths.test_manifest, 'paths.test_manifest')
    dataset = load_dataset(manifest, inv, cfg.frontend, workers=cfg.decode.workers, name=manifest.stem,
                           training=False)

    lm = resolve_lm(run, inv) if cfg.decode.beam else None
    results = decode_dataset(params, dataset, inv, cfg.decode, lm)
    out = write_decode_output(results, output or run.path('decode.tsv'))
    print(f"✓ Decoded {len(results)} utterances -> {out}")
    if nbest_file:
        write_nbest_json(results, nbest_file)
    if gamma_dir:
        dump_gammas(params, dataset, inv, gamma_dir, cfg.train.normalize_transitions)

    if not len(dataset):
        return results, None
    report = score_results(results, dataset, 'word')
    print(format_report_table(report, f"{manifest.name} ({'beam' if cfg.decode.beam else 'greedy'})"))
    return results, report


def dump_gammas(params: NetParams, dataset: Dataset, inv: Inventory, out_dir, normalize: bool = False):
    """Frame x state posteriors of every utterance against its reference."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    transitions = TransitionConfig(normalize=normalize)
    for utt in dataset:
        if not utt.feasible:
            logger.warning(f"No posterior grid for '{utt.utt_id}': reference cannot be aligned")
            continue
        grid, _ = forward(params, utt.features)
        lat = build_lattice(utt.target, grid.T, transitions, utt.utt_id)
        dump_gamma(forward_backward(lat, grid), lat, out_dir / f"{utt.utt_id}.tsv", inv)
    logger.info(f"Posterior grids written to {out_dir}")


def run_score(ref_path, hyp_path, out_json=None, xlsx=None) -> Dict[str, ScoreReport]:
    """WER and CER of a decode output (or transcript file) against references."""
    refs = read_transcripts(ref_path)
    hyps = read_transcripts(hyp_path)
    pairs = match_references(dict(zip(refs['utt_id'], refs['transcript'])),
                             dict(zip(hyps['utt_id'], hyps['transcript'])))
    reports = {'WER': score_corpus(pairs, 'word'), 'CER': score_corpus(pairs, 'char')}
    for name, report in reports.items():
        print(format_report_table(report, f"{name}: {Path(hyp_path).name} vs {Path(ref_path).name}"))
    if out_json:
        write_report_json(reports['WER'], out_json, {'cer': reports['CER'].summary()})
    if xlsx:
        export_report_xlsx(reports, xlsx)
    return reports


# ============================================================================
# ITERATED CTC
# ============================================================================

def first_pass(params: NetParams, dataset: Dataset, inv: Inventory, run: Run) -> List[DecodeResult]:
    return decode_dataset(params, dataset, inv, replace(run.cfg.decode, beam=False))


def corrupted_pass(dataset: Dataset, inv: Inventory, rate: float, seed: int) -> List[Tuple[str, Tuple[int, ...]]]:
    """Reference encodings with substitution noise, for the controlled correction task."""
    rng = np.random.default_rng([seed, 31])
    return [(u.utt_id, corrupt_ids(u.target.ids, inv, rate, rng) if u.target is not None else ())
            for u in dataset]


def run_ctc2_train(run: Run, source: str = 'first-pass') -> NetParams:
    """
    Train the second-pass network.

    ``source='first-pass'`` feeds it greedy outputs of the trained model;
    ``source='corrupt'`` feeds it references with ``ctc2.corruption_rate``
    substitution noise.
    """
    cfg = run.cfg
    inv = resolve_inventory(run)
    train_set = load_split(run, inv, 'train')
    dev_set = load_split(run, inv, 'dev') if cfg.paths.dev_manifest else None

    if source == 'corrupt':
        train_pass = corrupted_pass(train_set, inv, cfg.ctc2.corruption_rate, cfg.seed)
        dev_pass = corrupted_pass(dev_set, inv, cfg.ctc2.corruption_rate, cfg.seed + 1) if dev_set else None
    elif source == 'first-pass':
        params = resolve_checkpoint(run)
        train_pass = [(r.utt_id, r.ids) for r in first_pass(params, train_set, inv, run)]
        dev_pass = [(r.utt_id, r.ids) for r in first_pass(params, dev_set, inv, run)] if dev_set else None
    else:
        raise ConfigError(f"Unknown second-pass source '{source}'")

    refs = {u.utt_id: u.target for u in train_set}
    if dev_set:
        refs.update({u.utt_id: u.target for u in dev_set})
    ctc2_params = ctc2_train(train_pass, refs, inv, cfg.ctc2, cfg.train, cfg.seed, dev_pass,
                             run.path('ctc2'))
    save_checkpoint(ctc2_params, run.path(CTC2_CHECKPOINT))
    print(f"✓ Second-pass model -> {run.path(CTC2_CHECKPOINT)}")
    return ctc2_params


def _resolve_ctc2(run: Run) -> NetParams:
    path = Path(run.cfg.paths.ctc2_checkpoint) if run.cfg.paths.ctc2_checkpoint else run.path(CTC2_CHECKPOINT)
    if not path.exists():
        raise DataError(f"Second-pass checkpoint not found: {path} (run ctc2-train first)")
    return load_checkpoint(path)


def run_ctc2_apply(run: Run, manifest=None, output=None, source: str = 'first-pass') -> Tuple[List[DecodeResult], ScoreReport, ScoreReport]:
    """
    Second-pass correction over a manifest (default: test split).

    Returns:
        (corrected results, report before, report after), scored in CER
    """
    cfg = run.cfg
    inv = resolve_inventory(run)
    manifest = Path(manifest) if manifest else _require(cfg.paths.test_manifest, 'paths.test_manifest')
    dataset = load_dataset(manifest, inv, cfg.frontend, workers=cfg.decode.workers, name=manifest.stem,
                           training=False)
    ctc2_params = _resolve_ctc2(run)

    if source == 'corrupt':
        firsts = [DecodeResult('', ids, 0.0, utt_id=utt_id)
                  for utt_id, ids in corrupted_pass(dataset, inv, cfg.ctc2.corruption_rate, cfg.seed + 2)]
        for r in firsts:
            r.text = decode_ids(r.ids, inv)
    else:
        firsts = first_pass(resolve_checkpoint(run), dataset, inv, run)

    corrected = [ctc2_apply(ctc2_params, r, inv, cfg.ctc2.upsample, cfg.decode.collapse) for r in firsts]
    before = score_results(firsts, dataset, 'char')
    after = score_results(corrected, dataset, 'char')
    write_decode_output(corrected, output or run.path('ctc2_decode.tsv'))
    print(f"✓ Second pass: CER {before.error_rate:.2f}% -> {after.error_rate:.2f}%")
    return corrected, before, after


# ============================================================================
# SWEEP
# ============================================================================

def sweep_beam(params: NetParams, dev_set: Dataset, inv: Inventory, lm: CharNGram, run: Run) -> Dict:
    """Grid search of (lm_weight, insertion_bonus, beam_width) on dev by WER."""
    best = None
    for width in run.cfg.decode.sweep_widths:
        for alpha in run.cfg.decode.sweep_lm_weights:
            for beta in run.cfg.decode.sweep_bonuses:
                dcfg = replace(run.cfg.decode, beam=True, beam_width=width, lm_weight=alpha,
                               insertion_bonus=beta, nbest=0)
                rate = score_results(decode_dataset(params, dev_set, inv, dcfg, lm), dev_set).error_rate
                logger.debug(f"  sweep width={width} alpha={alpha} beta={beta}: WER {rate:.2f}")
                if best is None or rate < best['wer']:
                    best = {'beam_width': width, 'lm_weight': alpha, 'insertion_bonus': beta, 'wer': rate}
    logger.info(f"Best beam settings on dev: {best}")
    return best


def run_sweep(run: Run, inventory_ablation: bool = False, arch_ablation: bool = False) -> Dict[str, List[Dict]]:
    """
    Post-processing ablation on the test split: raw greedy output,
    second-pass correction, and LM beam search with dev-tuned settings.

    With ``inventory_ablation`` one model per inventory scheme is trained
    and compared on greedy output; with ``arch_ablation`` one model per
    ``decode.sweep_architectures`` entry (layers, hidden).
    """
    cfg = run.cfg
    inv = resolve_inventory(run)
    params = resolve_checkpoint(run)
    dev_set = load_split(run, inv, 'dev', training=False)
    test_set = load_split(run, inv, 'test', training=False)
    lm = resolve_lm(run, inv)

    raw = first_pass(params, test_set, inv, run)
    if not run.path(CTC2_CHECKPOINT).exists() and not cfg.paths.ctc2_checkpoint:
        run_ctc2_train(run, 'first-pass')
    ctc2_params = _resolve_ctc2(run)
    corrected = [ctc2_apply(ctc2_params, r, inv, cfg.ctc2.upsample, cfg.decode.collapse) for r in raw]

    best = sweep_beam(params, dev_set, inv, lm, run)
    beam_cfg = replace(cfg.decode, beam=True, beam_width=best['beam_width'],
                       lm_weight=best['lm_weight'], insertion_bonus=best['insertion_bonus'])
    beamed = decode_dataset(params, test_set, inv, beam_cfg, lm)

    systems = (('none', raw), ('iterated-ctc', corrected), ('char-beam', beamed))
    rows = [_ablation_row(system, results, test_set) for system, results in systems]
    print(format_ablation_table(rows))
    tables = {'post_processing': rows, 'beam_settings': [best]}

    extra_sheets = {}
    if inventory_ablation:
        tables['inventory'] = run_inventory_ablation(run)
        extra_sheets['Inventaire'] = tables['inventory']
        print(format_ablation_table(tables['inventory'], 'Error rate (%) by unit inventory'))
    if arch_ablation:
        tables['architecture'] = run_arch_ablation(run)
        extra_sheets['Architecture'] = tables['architecture']
        print(format_ablation_table(tables['architecture'], 'Error rate (%) by network size'))

    reports = {system: score_results(res, test_set) for system, res in systems}
    export_report_xlsx(reports, run.path('sweep.xlsx'), rows, extra_sheets)
    write_report_json(reports['char-beam'], run.path('sweep.json'), {'ablation': tables})
    return tables


def _ablation_row(system: str, results: List[DecodeResult], test_set: Dataset, **extra) -> Dict:
    return {'system': system, **extra,
            'wer': score_results(results, test_set, 'word').error_rate,
            'cer': score_results(results, test_set, 'char').error_rate}


def _train_variant(run: Run, name: str, **sections) -> Tuple[TrainState, Inventory, Run]:
    """Train from scratch in ``run_dir/name`` with some sections replaced (same data and seed)."""
    sub_cfg = replace(run.cfg, paths=replace(run.cfg.paths, inventory=None, checkpoint=None, lm=None),
                      **sections)
    sub_run = start_run(sub_cfg, run.path(name))
    state, inv = run_train(sub_run)
    return state, inv, sub_run


def run_inventory_ablation(run: Run) -> List[Dict]:
    """Train one model per scheme (same data and seed) and compare greedy output."""
    rows = []
    for scheme in (Scheme.EXPLICIT_SPACE, Scheme.CAPITAL_INITIAL, Scheme.INITIAL_AND_FINAL):
        state, inv, sub_run = _train_variant(
            run, f"scheme-{scheme.value}", inventory=replace(run.cfg.inventory, scheme=scheme.value))
        test_set = load_split(sub_run, inv, 'test', training=False)
        results = first_pass(state.params, test_set, inv, sub_run)
        rows.append(_ablation_row(scheme.value, results, test_set, units=inv.size))
    return rows


def run_arch_ablation(run: Run) -> List[Dict]:
    """Train one model per (layers, hidden) entry of ``decode.sweep_architectures``; greedy output."""
    rows = []
    for layers, hidden in run.cfg.decode.sweep_architectures:
        net = replace(run.cfg.net, num_layers=int(layers), hidden_dim=int(hidden))
        state, inv, sub_run = _train_variant(run, f"arch-{layers}x{hidden}", net=net)
        test_set = load_split(sub_run, inv, 'test', training=False)
        results = first_pass(state.params, test_set, inv, sub_run)
        rows.append(_ablation_row(f"{layers}x{hidden}", results, test_set, layers=int(layers),
                                  hidden=int(hidden), parameters=state.params.config.parameter_count()))
        logger.info(f"Architecture {layers}x{hidden}: WER {rows[-1]['wer']:.2f}%")
    return rows
