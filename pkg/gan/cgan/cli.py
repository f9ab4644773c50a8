"""
cli.py - Command-line interface: phantom, train, generate, grid, eval, gradcheck, compare.

Exit codes: 0 success, 1 usage error (bad flags, bad config, unknown score),
2 runtime error. stdout carries machine-readable lines only; diagnostics go
to stderr through logging.
"""
import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint
from .config_loader import ENV_OUT_DIR, build_config, config_from_echo, load_config_file, load_default_config
from .data_pipeline import load_manifest
from .errors import GanToolError, LabelError, UsageError
from .evaluation import centroid_fit, emit_comparison_grid, evaluate_generator, generate_images, write_report_row
from .gradcheck import PASS_THRESHOLD, run_gradcheck_suite
from .nets import GLEASON_SCORES, GeneratorNet, GleasonLabel, build_generator
from .phantom import DEFAULT_PER_CLASS, generate_dataset
from .pgm_io import to_u8, write_pgm, write_png
from .training import ECHO_FILE, EvalGrid, TrainConfig, emit_epoch_grid, real_references, sample_noise, train

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

DEFAULT_CONFIG = Path(__file__).resolve().parent.parent / 'config.yaml'
ENV_LOG_LEVEL = 'PGAN_LOG_LEVEL'
LOG_FORMAT = '%(asctime)s [%(levelname)8s] %(name)s: %(message)s'
LOG_DATEFMT = '%Y-%m-%d %H:%M:%S'
DEFAULT_GENERATE_COUNT = 16
DEFAULT_EVAL_PER_CLASS = 64
DEFAULT_COMPARE_COLUMNS = 4


class _ArgumentParser(argparse.ArgumentParser):
    """argparse that raises UsageError instead of exiting with status 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def setup_logging(verbose: bool = False):
    if verbose:
        level = logging.DEBUG
    else:
        level = getattr(logging, os.getenv(ENV_LOG_LEVEL, 'INFO').upper(), logging.INFO)
    logging.basicConfig(level=level, stream=sys.stderr, format=LOG_FORMAT, datefmt=LOG_DATEFMT, force=True)


def _common_options() -> argparse.ArgumentParser:
    common = _ArgumentParser(add_help=False)
    common.add_argument('--config', '-c', default=None,
                        help=f'Config file, key = value or YAML (default: {DEFAULT_CONFIG} if present)')
    common.add_argument('--seed', type=int, default=None, help='Master seed')
    common.add_argument('--out', '-o', default=None,
                        help='Output directory (default: $PGAN_OUT_DIR or runs/latest)')
    common.add_argument('--verbose', '-v', action='store_true', help='Debug logging on stderr')
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = _ArgumentParser(prog='gleason_gan.py',
                             description='Conditional DCGAN toolkit for 32x32 grayscale Gleason-score images')
    sub = parser.add_subparsers(dest='command', metavar='COMMAND')
    sub.required = True

    p = sub.add_parser('phantom', parents=[common], help='Write a seeded synthetic phantom dataset')
    p.add_argument('--n', type=int, default=DEFAULT_PER_CLASS,
                   help=f'Images per class (default: {DEFAULT_PER_CLASS})')

    p = sub.add_parser('train', parents=[common], help='Train the conditional GAN')
    p.add_argument('--data', default=None, help='Training manifest (path<TAB>score per line)')
    p.add_argument('--epochs', type=int, default=None)
    p.add_argument('--batch-size', type=int, default=None)
    p.add_argument('--z-dim', type=int, default=None)
    p.add_argument('--lr', type=float, default=None)
    p.add_argument('--beta1', type=float, default=None)
    p.add_argument('--snapshot-epochs', default=None, help='Comma list, e.g. 1,5,10')
    p.add_argument('--workers', type=int, default=None, help='Batch preparation threads')
    p.add_argument('--ckpt', default=None, help='Resume from this checkpoint')

    p = sub.add_parser('generate', parents=[common], help='Sample images of one score from a checkpoint')
    p.add_argument('--ckpt', required=True)
    p.add_argument('--score', type=int, required=True)
    p.add_argument('--n', type=int, default=DEFAULT_GENERATE_COUNT)

    p = sub.add_parser('grid', parents=[common], help='Re-emit the fixed-noise grid from a checkpoint')
    p.add_argument('--ckpt', required=True)
    p.add_argument('--data', default=None, help='Manifest for the real reference column')

    p = sub.add_parser('eval', parents=[common], help='Score a checkpoint against a real dataset')
    p.add_argument('--ckpt', required=True)
    p.add_argument('--data', required=True)
    p.add_argument('--n', type=int, default=DEFAULT_EVAL_PER_CLASS, help='Generated samples per class')

    sub.add_parser('gradcheck', parents=[common], help='Finite-difference check of every differentiable op')

    p = sub.add_parser('compare', parents=[common], help='Side-by-side generated vs real images per score')
    p.add_argument('--ckpt', required=True)
    p.add_argument('--data', required=True)
    p.add_argument('--n', type=int, default=DEFAULT_COMPARE_COLUMNS, help='Columns of each kind per row')
    return parser


def _out_dir(args, fallback: str) -> Path:
    return Path(args.out or os.getenv(ENV_OUT_DIR) or fallback)


def write_command_echo(out_dir: Path, args, extra: Optional[Dict[str, object]] = None) -> Path:
    """Record the arguments of a non-training command as key = value lines."""
    out_dir.mkdir(parents=True, exist_ok=True)
    values = {k: v for k, v in vars(args).items() if k not in ('verbose',) and v is not None}
    values.update(extra or {})
    lines = [f"# {args.command}"] + [f"{k} = {v}" for k, v in values.items() if k != 'command']
    path = out_dir / ECHO_FILE
    path.write_text('\n'.join(lines) + '\n', encoding='utf-8')
    return path


def generator_from_checkpoint(checkpoint: Checkpoint) -> Tuple[GeneratorNet, TrainConfig]:
    config = config_from_echo(checkpoint.config_text)
    generator = build_generator(config.z_dim, widths=config.g_widths, leaky_slope=config.leaky_slope)
    generator.load_state(checkpoint.section('G'))
    return generator, config


def _seed(args) -> int:
    seed = 0 if args.seed is None else args.seed
    if seed < 0:
        raise UsageError(f"--seed must be >= 0, got {seed}")
    return seed


def cmd_phantom(args) -> int:
    if args.n < 1:
        raise UsageError(f"--n must be >= 1, got {args.n}")
    out = _out_dir(args, 'data/phantoms')
    manifest = generate_dataset(args.n, _seed(args), out)
    write_command_echo(out, args, {'seed': _seed(args)})
    print(manifest)
    return EXIT_OK


def train_config_from_args(args) -> TrainConfig:
    file_values = load_config_file(args.config) if args.config else load_default_config(DEFAULT_CONFIG)
    overrides = {
        'epochs': args.epochs, 'batch_size': args.batch_size, 'z_dim': args.z_dim, 'lr': args.lr,
        'beta1': args.beta1, 'seed': args.seed, 'data': args.data, 'out': args.out,
        'snapshot_epochs': args.snapshot_epochs, 'workers': args.workers,
    }
    return build_config(file_values, overrides)


def cmd_train(args) -> int:
    config = train_config_from_args(args)
    if not config.data:
        raise UsageError("train needs --data (or 'data' in the config file)")
    resume = load_checkpoint(args.ckpt) if args.ckpt else None

    def progress(epoch, batch, d_loss, g_loss):
        print(f"epoch={epoch} batch={batch} d_loss={d_loss:.6f} g_loss={g_loss:.6f}", flush=True)

    result = train(config, config.data, resume_from=resume, progress=progress)
    print(result.out_dir)
    return EXIT_OK


def cmd_generate(args) -> int:
    label = GleasonLabel(args.score)
    if args.n < 1:
        raise UsageError(f"--n must be >= 1, got {args.n}")
    generator, _ = generator_from_checkpoint(load_checkpoint(args.ckpt))
    out = _out_dir(args, 'generated')
    noise = sample_noise(args.n, generator.z_dim, np.random.default_rng(_seed(args)))
    images = generate_images(generator, noise, [label] * args.n)
    for i, image in enumerate(images):
        print(write_pgm(out / f"generated_s{label.score}_{i:04d}.pgm", to_u8(image)))
    write_command_echo(out, args, {'seed': _seed(args)})
    return EXIT_OK


def cmd_grid(args) -> int:
    checkpoint = load_checkpoint(args.ckpt)
    generator, _ = generator_from_checkpoint(checkpoint)
    grid_tensors = checkpoint.section('grid')
    eval_grid = EvalGrid(noise=grid_tensors['noise'])
    eval_grid.columns = {int(k.split('/')[1]): v for k, v in grid_tensors.items() if k.startswith('column/')}
    real_refs = real_references(load_manifest(args.data)) if args.data else None
    out = _out_dir(args, 'grids')
    path = out / f"grid_epoch_{checkpoint.epoch:03d}.pgm"
    grid = emit_epoch_grid(generator, eval_grid, checkpoint.epoch, real_refs, path)
    write_png(path.with_suffix('.png'), grid)
    write_command_echo(out, args)
    print(path)
    return EXIT_OK


def cmd_eval(args) -> int:
    if args.n < 1:
        raise UsageError(f"--n must be >= 1, got {args.n}")
    checkpoint = load_checkpoint(args.ckpt)
    generator, _ = generator_from_checkpoint(checkpoint)
    model = centroid_fit(load_manifest(args.data))
    labels = [GleasonLabel(score) for score in GLEASON_SCORES for _ in range(args.n)]
    noise = sample_noise(len(labels), generator.z_dim, np.random.default_rng(_seed(args)))
    report = evaluate_generator(generator, model, noise, labels, epoch=checkpoint.epoch)
    out = _out_dir(args, 'eval')
    write_report_row(out / 'eval_report.csv', report)
    write_command_echo(out, args, {'seed': _seed(args)})
    print(','.join(report.row()))
    return EXIT_OK


def format_gradcheck_table(results) -> List[str]:
    width = max(len(r.name) for r in results)
    lines = [f"{'check':<{width}}  max_rel_err  status"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {r.max_rel_err:11.3e}  {'ok' if r.passed else 'FAIL'}")
    return lines


def cmd_gradcheck(args) -> int:
    seed = _seed(args)
    results = run_gradcheck_suite(seed)
    for line in format_gradcheck_table(results):
        print(line)
    write_command_echo(_out_dir(args, 'gradcheck'), args, {'seed': seed, 'threshold': PASS_THRESHOLD})
    return EXIT_OK if all(r.passed for r in results) else EXIT_RUNTIME


def cmd_compare(args) -> int:
    if args.n < 1:
        raise UsageError(f"--n must be >= 1, got {args.n}")
    generator, _ = generator_from_checkpoint(load_checkpoint(args.ckpt))
    records = load_manifest(args.data)
    noise = sample_noise(len(GLEASON_SCORES) * args.n, generator.z_dim, np.random.default_rng(_seed(args)))
    grid = emit_comparison_grid(generator, records, args.n, noise)
    out = _out_dir(args, 'compare')
    path = write_pgm(out / 'comparison_grid.pgm', grid)
    write_png(out / 'comparison_grid.png', grid)
    write_command_echo(out, args, {'seed': _seed(args)})
    print(path)
    return EXIT_OK


COMMANDS: Dict[str, Callable[[argparse.Namespace], int]] = {
    'phantom': cmd_phantom,
    'train': cmd_train,
    'generate': cmd_generate,
    'grid': cmd_grid,
    'eval': cmd_eval,
    'gradcheck': cmd_gradcheck,
    'compare': cmd_compare,
}


def run(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:
        return EXIT_OK if not e.code else EXIT_USAGE

    setup_logging(args.verbose)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, LabelError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (GanToolError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
