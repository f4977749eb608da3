"""
Command-line interface
======================

    python main.py synth --out data/toy
    python main.py train --config exp.json --set train.learning_rate=0.5
    python main.py decode --config exp.json --beam
    python main.py score --ref data/toy/test.tsv --hyp runs/toy/decode.tsv
    python main.py validate data/toy/train.tsv data/toy/test.tsv

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.
"""

import argparse
import json
import sys
from dataclasses import replace
from typing import List, Optional

from src.app_logging import setup_logging
from src.checkpoint import describe_header, read_header
from src.config import PRESETS, ExperimentConfig, load_config
from src.errors import ConfigError, DataError, GraphemeCTCError, NumericalError
from src.experiment import (run_ctc2_apply, run_ctc2_train, run_decode, run_polish, run_score,
                            run_sweep, run_train, start_run)
from src.file_validator import print_validation_results, validate_all_files
from src.net import NetConfig, describe
from src.synth import SynthConfig, SynthDefaults, generate

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class CliParser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"❌ {self.prog}: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _add_config_options(p: argparse.ArgumentParser):
    p.add_argument('--config', type=str, default=None,
                   help='JSON experiment file')
    p.add_argument('--preset', type=str, default=None, choices=sorted(PRESETS),
                   help='Start from a named preset')
    p.add_argument('--set', dest='overrides', action='append', default=[], metavar='SECTION.KEY=VALUE',
                   help='Override one setting (repeatable); VALUE is parsed as JSON')
    p.add_argument('--run-dir', type=str, default=None,
                   help='Run directory (default: paths.run_dir)')
    p.add_argument('--seed', type=int, default=None,
                   help='Random seed (default: from the configuration, else 0)')
    p.add_argument('--log-level', type=str, default='INFO',
                   help='Console log level (default: INFO)')


def build_parser() -> CliParser:
    parser = CliParser(
        prog='gctc',
        description='Grapheme CTC toolkit: train, decode and score character-level CTC models',
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest='command', metavar='COMMAND', parser_class=CliParser)
    sub.required = True

    p = sub.add_parser('synth', help='Generate a synthetic corpus')
    p.add_argument('--out', type=str, required=True, help='Output directory')
    p.add_argument('--vocab-size', type=int, default=SynthDefaults.VOCAB_SIZE,
                   help=f"Number of lexicon words (default: {SynthDefaults.VOCAB_SIZE})")
    p.add_argument('--utterances', type=int, default=SynthDefaults.TRAIN_UTTERANCES,
                   help=f"Training utterances (default: {SynthDefaults.TRAIN_UTTERANCES})")
    p.add_argument('--dev-utterances', type=int, default=SynthDefaults.DEV_UTTERANCES)
    p.add_argument('--test-utterances', type=int, default=SynthDefaults.TEST_UTTERANCES)
    p.add_argument('--noise', type=float, default=SynthDefaults.NOISE,
                   help=f"Gaussian noise level (default: {SynthDefaults.NOISE})")
    p.add_argument('--dim', type=int, default=SynthDefaults.DIM)
    p.add_argument('--domain-shift', type=float, default=0.0,
                   help='Per-dimension gain warp of the in-domain subset (default: 0)')
    p.add_argument('--indomain-utterances', type=int, default=0)
    p.add_argument('--seed', type=int, default=0)

    p = sub.add_parser('train', help='Train an acoustic model')
    _add_config_options(p)

    p = sub.add_parser('polish', help='Low-rate training on in-domain data')
    _add_config_options(p)

    p = sub.add_parser('decode', help='Decode a manifest')
    _add_config_options(p)
    p.add_argument('--manifest', type=str, default=None, help='Manifest to decode (default: test split)')
    p.add_argument('--output', type=str, default=None, help='Output TSV (default: run_dir/decode.tsv)')
    p.add_argument('--beam', action='store_true', help='Prefix beam search with the unit LM')
    p.add_argument('--nbest', type=str, default=None, metavar='FILE.json', help='Write n-best lists')
    p.add_argument('--dump-gamma', type=str, default=None, metavar='DIR',
                   help='Write frame x state posteriors against the reference')

    for name, helptext in (('ctc2-train', 'Train the second-pass (iterated CTC) network'),
                           ('ctc2-apply', 'Apply the second-pass network')):
        p = sub.add_parser(name, help=helptext)
        _add_config_options(p)
        p.add_argument('--source', choices=('first-pass', 'corrupt'), default='first-pass',
                       help='Input: greedy first-pass output or corrupted references')
        if name == 'ctc2-apply':
            p.add_argument('--manifest', type=str, default=None)
            p.add_argument('--output', type=str, default=None)

    p = sub.add_parser('score', help='WER / CER of hypotheses against references')
    p.add_argument('--ref', type=str, required=True, help='Reference manifest or utt-id/text file')
    p.add_argument('--hyp', type=str, required=True, help='Decode output or utt-id/text file')
    p.add_argument('--json', type=str, default=None, help='Write the report as JSON')
    p.add_argument('--xlsx', type=str, default=None, help='Write the report as Excel')

    p = sub.add_parser('sweep', help='Beam tuning and post-processing ablation')
    _add_config_options(p)
    p.add_argument('--inventory-ablation', action='store_true',
                   help='Also train and compare one model per unit inventory')
    p.add_argument('--arch-ablation', action='store_true',
                   help='Also train and compare one model per decode.sweep_architectures entry')

    p = sub.add_parser('validate', help='Check manifests, transcript and decode files before use')
    p.add_argument('files', nargs='+', help='TSV files (type detected from the columns)')
    p.add_argument('--no-path-check', action='store_true', help='Do not check that feature files exist')

    p = sub.add_parser('inspect-checkpoint', help='Show a checkpoint or preset network')
    p.add_argument('checkpoint', nargs='?', default=None)
    p.add_argument('--preset', type=str, default=None, choices=sorted(PRESETS))
    p.add_argument('--input-dim', type=int, default=120)
    p.add_argument('--output-dim', type=int, default=79)

    return parser


def _experiment(args) -> ExperimentConfig:
    overrides = list(args.overrides)
    if args.run_dir:
        overrides.append(f"paths.run_dir={json.dumps(args.run_dir)}")
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    return load_config(args.config, overrides, args.preset)


def cmd_synth(args) -> int:
    cfg = SynthConfig(vocab_size=args.vocab_size, train_utterances=args.utterances,
                      dev_utterances=args.dev_utterances, test_utterances=args.test_utterances,
                      noise=args.noise, seed=args.seed, dim=args.dim,
                      domain_shift=args.domain_shift, indomain_utterances=args.indomain_utterances)
    setup_logging(None, 'INFO')
    generate(cfg, args.out)
    return EXIT_OK


def cmd_inspect(args) -> int:
    if args.checkpoint:
        header = read_header(args.checkpoint)
        cfg = NetConfig.from_dict(header['config'])
        total = describe_header(header)
        print(f"Checkpoint: {args.checkpoint} (dtype {header['dtype']})")
    elif args.preset:
        section = load_config(preset_name=args.preset).net
        cfg = section.net_config(args.input_dim, args.output_dim)
        total = cfg.parameter_count()
        print(f"Preset: {args.preset}")
    else:
        raise ConfigError('inspect-checkpoint needs a checkpoint path or --preset')
    print(f"  {cfg.num_layers} layers x {cfg.hidden_dim} hidden, merge={cfg.merge}, "
          f"input {cfg.input_dim}, output {cfg.output_dim}")
    for line in describe(cfg):
        print(line)
    print(f"✓ {total:,d} parameters")
    return EXIT_OK


def cmd_validate(args) -> int:
    all_valid, results = validate_all_files(*args.files, check_paths=not args.no_path_check)
    print_validation_results(results)
    return EXIT_OK if all_valid else EXIT_DATA


def dispatch(args) -> int:
    if args.command == 'synth':
        return cmd_synth(args)
    if args.command == 'validate':
        return cmd_validate(args)
    if args.command == 'score':
        setup_logging(None, 'INFO')
        run_score(args.ref, args.hyp, args.json, args.xlsx)
        return EXIT_OK
    if args.command == 'inspect-checkpoint':
        return cmd_inspect(args)

    cfg = _experiment(args)
    if args.command == 'decode':
        decode = cfg.decode
        if args.beam:
            decode = replace(decode, beam=True)
        if args.nbest and not decode.nbest:
            decode = replace(decode, nbest=10)
        cfg = replace(cfg, decode=decode)
    run = start_run(cfg, cfg.paths.run_dir, args.log_level)

    if args.command == 'train':
        run_train(run)
    elif args.command == 'polish':
        run_polish(run)
    elif args.command == 'decode':
        run_decode(run, args.manifest, args.output, args.nbest, args.dump_gamma)
    elif args.command == 'ctc2-train':
        run_ctc2_train(run, args.source)
    elif args.command == 'ctc2-apply':
        run_ctc2_apply(run, args.manifest, args.output, args.source)
    elif args.command == 'sweep':
        run_sweep(run, args.inventory_ablation, args.arch_ablation)
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    """Parse ``argv``, run the subcommand, return the exit code."""
    args = build_parser().parse_args(argv)
    try:
        return dispatch(args)
    except ConfigError as e:
        print(f"❌ Configuration error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as e:
        print(f"❌ Data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as e:
        print(f"❌ Numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except GraphemeCTCError as e:
        print(f"❌ {e}", file=sys.stderr)
        return e.exit_code
    except FileNotFoundError as e:
        print(f"❌ File not found: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == '__main__':
    sys.exit(main())
