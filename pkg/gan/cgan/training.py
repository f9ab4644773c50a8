"""
training.py - Adversarial training loop, fixed-noise evaluation grid, loss log and checkpoints.

Run directory layout:
    config.echo                     effective configuration, key = value
    losses.csv                      epoch,batch,d_loss,g_loss (one row per batch)
    eval_report.csv                 one row per snapshot epoch
    grids/grid_epoch_XXX.pgm        9 rows, one column per snapshot so far plus real references
    checkpoints/epoch_XXX.ckpt      full state at each snapshot epoch
    report.html                     rendered summary
"""
import csv
import logging
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .checkpoint import Checkpoint, save_checkpoint
from .data_pipeline import DEFAULT_BATCH_SIZE, MAX_BATCH_SIZE, Batch, ImageRecord, batch_iter, load_manifest
from .errors import ContractError, TrainingDivergedError
from .evaluation import CentroidModel, centroid_fit, evaluate_generator, write_report_row
from .nets import (
    DEFAULT_D_WIDTHS,
    DEFAULT_G_WIDTHS,
    DEFAULT_Z_DIM,
    GLEASON_SCORES,
    IMAGE_SIZE,
    N_CLASSES,
    DiscriminatorNet,
    GeneratorNet,
    GleasonLabel,
    build_discriminator,
    build_generator,
    forward_discriminator,
    forward_generator,
    sample_labels,
)
from .optim import DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPS, DEFAULT_LR, Adam
from .pgm_io import compose_grid, write_pgm
from .report import render_report
from .tensor_core import DEFAULT_LEAKY_SLOPE, Tape, Tensor, backward, bce_loss

logger = logging.getLogger(__name__)

DEFAULT_EPOCHS = 100
DEFAULT_SNAPSHOT_EPOCHS = (1, 5, 10, 20, 30, 50, 100)
DEFAULT_OUT_DIR = 'runs/latest'

LOSS_HEADER = ['epoch', 'batch', 'd_loss', 'g_loss']
LOSSES_FILE = 'losses.csv'
EVAL_FILE = 'eval_report.csv'
ECHO_FILE = 'config.echo'

# independent streams derived from the master seed
_INIT_STREAM = 0
_TRAIN_STREAM = 1
_GRID_STREAM = 2
_EVAL_STREAM = 3

ProgressCallback = Callable[[int, int, float, float], None]


@dataclass
class TrainConfig:
    epochs: int = DEFAULT_EPOCHS
    batch_size: int = DEFAULT_BATCH_SIZE
    z_dim: int = DEFAULT_Z_DIM
    lr: float = DEFAULT_LR
    beta1: float = DEFAULT_BETA1
    beta2: float = DEFAULT_BETA2
    adam_eps: float = DEFAULT_EPS
    leaky_slope: float = DEFAULT_LEAKY_SLOPE
    seed: int = 0
    snapshot_epochs: Optional[Tuple[int, ...]] = None
    g_widths: Tuple[int, ...] = DEFAULT_G_WIDTHS
    d_widths: Tuple[int, ...] = DEFAULT_D_WIDTHS
    workers: int = 1
    eval_samples_per_class: int = 16
    data: str = ''
    out: str = DEFAULT_OUT_DIR

    def validate(self):
        positive = {'epochs': self.epochs, 'batch_size': self.batch_size, 'z_dim': self.z_dim, 'lr': self.lr,
                    'adam_eps': self.adam_eps, 'workers': self.workers,
                    'eval_samples_per_class': self.eval_samples_per_class}
        bad = [f"{k}={v}" for k, v in positive.items() if not v > 0]
        if bad:
            raise ContractError(f"config values must be positive: {', '.join(bad)}")
        if self.batch_size > MAX_BATCH_SIZE:
            raise ContractError(f"batch_size must be <= {MAX_BATCH_SIZE}, got {self.batch_size}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ContractError(f"beta1 and beta2 must be within [0, 1), got {self.beta1}, {self.beta2}")
        if self.seed < 0:
            raise ContractError(f"seed must be >= 0, got {self.seed}")
        if self.snapshot_epochs is not None:
            outside = [e for e in self.snapshot_epochs if not 1 <= e <= self.epochs]
            if outside or not self.snapshot_epochs:
                raise ContractError(f"snapshot epochs must lie within [1, {self.epochs}], got {list(self.snapshot_epochs)}")

    def snapshots(self) -> Tuple[int, ...]:
        """Explicit list, or the default epochs that fit the run plus the final epoch."""
        if self.snapshot_epochs is not None:
            return tuple(sorted(set(self.snapshot_epochs)))
        return tuple(sorted({e for e in DEFAULT_SNAPSHOT_EPOCHS if e <= self.epochs} | {self.epochs}))

    def echo_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == 'snapshot_epochs':
                value = self.snapshots()
            if isinstance(value, tuple):
                value = ','.join(str(v) for v in value)
            lines.append(f"{f.name} = {value}")
        return '\n'.join(lines) + '\n'


def write_config_echo(config: TrainConfig, out_dir: Union[str, Path]) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / ECHO_FILE
    path.write_text(config.echo_text(), encoding='utf-8')
    return path


def sample_noise(n: int, z_dim: int = DEFAULT_Z_DIM, rng: np.random.Generator = None, dtype=np.float32) -> Tensor:
    """n x z_dim i.i.d. Uniform[-1, 1) entries."""
    rng = rng if rng is not None else np.random.default_rng()
    u = rng.random((n, z_dim), dtype=np.float32 if np.dtype(dtype) == np.float32 else np.float64)
    return Tensor((u * 2 - 1).astype(dtype, copy=False))


def _check_finite(which: str, value: float, epoch: int, batch: int):
    if not math.isfinite(value):
        raise TrainingDivergedError(which, epoch, batch, value)


def train_step_discriminator(generator: GeneratorNet, discriminator: DiscriminatorNet, batch: Batch,
                             opt_d: Adam, rng: np.random.Generator) -> float:
    """BCE(D(x, y), 1) + BCE(D(G(z, y'), y'), 0), then one Adam step on D.

    The generator runs without a tape and without touching its running
    statistics, so nothing about G changes.
    """
    n = batch.size
    dtype = batch.images.data.dtype
    fake_labels = sample_labels(n, rng)
    z = sample_noise(n, generator.z_dim, rng, dtype)
    fake = forward_generator(generator, z, fake_labels, mode='train', update_stats=False).detach()

    opt_d.zero_grad()
    with Tape() as tape:
        p_real = forward_discriminator(discriminator, batch.images, batch.labels)
        p_fake = forward_discriminator(discriminator, fake, fake_labels)
        loss = bce_loss(p_real, np.ones((n, 1), dtype=dtype)) + bce_loss(p_fake, np.zeros((n, 1), dtype=dtype))
    value = loss.item()
    _check_finite('d_loss', value, batch.epoch, batch.batch_index)
    backward(loss, tape)
    opt_d.step()
    return value


def train_step_generator(generator: GeneratorNet, discriminator: DiscriminatorNet, batch_size: int,
                         label_sampler: Callable[[int, np.random.Generator], List[GleasonLabel]],
                         opt_g: Adam, rng: np.random.Generator, epoch: int = 0, batch_index: int = 0) -> float:
    """Non-saturating BCE(D(G(z, y), y), 1), then one Adam step on G.

    Gradients flow through D but D is neither stepped nor are its running
    statistics updated; its gradient buffers are cleared afterwards.
    """
    dtype = generator.params['dense.weight'].data.dtype
    labels = label_sampler(batch_size, rng)
    z = sample_noise(batch_size, generator.z_dim, rng, dtype)

    opt_g.zero_grad()
    with Tape() as tape:
        fake = forward_generator(generator, z, labels, mode='train')
        p = forward_discriminator(discriminator, fake, labels, mode='train', update_stats=False)
        loss = bce_loss(p, np.ones((batch_size, 1), dtype=dtype))
    value = loss.item()
    _check_finite('g_loss', value, epoch, batch_index)
    backward(loss, tape)
    opt_g.step()
    for p in discriminator.parameters():
        p.grad = None
    return value


@dataclass
class EvalGrid:
    """Fixed per-class noise, drawn once per run, and the tiles rendered from it."""
    noise: np.ndarray
    labels: Tuple[GleasonLabel, ...] = tuple(GleasonLabel(s) for s in GLEASON_SCORES)
    columns: Dict[int, np.ndarray] = field(default_factory=dict)

    @classmethod
    def create(cls, z_dim: int, rng: np.random.Generator, dtype=np.float32) -> 'EvalGrid':
        return cls(noise=sample_noise(N_CLASSES, z_dim, rng, dtype).data)

    def render_row(self, generator: GeneratorNet, row: int) -> np.ndarray:
        """One tile per call (batch of one) so a row can be regenerated on its own."""
        z = Tensor(self.noise[row:row + 1].copy())
        return forward_generator(generator, z, [self.labels[row]], mode='eval').data[0, 0]

    def render_tiles(self, generator: GeneratorNet) -> np.ndarray:
        return np.stack([self.render_row(generator, r) for r in range(len(self.labels))])


def real_references(records: Sequence[ImageRecord]) -> np.ndarray:
    """First record of each class, blank (-1) where a class has none."""
    refs = np.full((N_CLASSES, IMAGE_SIZE, IMAGE_SIZE), -1.0, dtype=np.float32)
    seen = set()
    for record in records:
        index = record.label.class_index
        if index not in seen and record.pixels.shape == (IMAGE_SIZE, IMAGE_SIZE):
            refs[index] = record.pixels
            seen.add(index)
    missing = [GLEASON_SCORES[i] for i in range(N_CLASSES) if i not in seen]
    if missing:
        logger.warning(f"No real reference image for scores {missing}, grid column left blank")
    return refs


def emit_epoch_grid(generator: GeneratorNet, eval_grid: EvalGrid, epoch: int, real_refs: Optional[np.ndarray],
                    path: Union[str, Path, None] = None) -> np.ndarray:
    """Render the column for `epoch`, then lay out all columns so far plus the real-image column."""
    eval_grid.columns[epoch] = eval_grid.render_tiles(generator)
    columns = [eval_grid.columns[e] for e in sorted(eval_grid.columns)]
    if real_refs is not None:
        columns.append(real_refs)
    rows = [[column[r] for column in columns] for r in range(len(eval_grid.labels))]
    grid = compose_grid(rows)
    if path is not None:
        write_pgm(path, grid)
        logger.info(f"Wrote epoch {epoch} grid with {len(columns)} columns to {path}")
    return grid


def _fmt(value: float) -> str:
    return f"{value:.9g}"


def truncate_csv(path: Path, after_epoch: int):
    """Drop data rows whose epoch column is greater than `after_epoch`."""
    if not path.exists():
        return
    with open(path, 'r', newline='', encoding='utf-8') as f:
        rows = list(csv.reader(f))
    kept = rows[:1] + [row for row in rows[1:] if row and int(row[0]) <= after_epoch]
    with open(path, 'w', newline='', encoding='utf-8') as f:
        csv.writer(f, lineterminator='\n').writerows(kept)


@dataclass
class TrainingResult:
    out_dir: Path
    losses_path: Path
    eval_path: Path
    checkpoints: List[Path] = field(default_factory=list)
    grids: List[Path] = field(default_factory=list)
    last_epoch: int = 0


class GanTrainer:
    """Owns both networks, their optimizers, the training rng stream and the eval grid."""

    def __init__(self, config: TrainConfig, records: Sequence[ImageRecord],
                 progress: Optional[ProgressCallback] = None):
        config.validate()
        self.records = list(records)
        if not self.records:
            raise ContractError("training needs a nonempty dataset")
        self.config = config
        self.progress = progress
        self.out_dir = Path(config.out)
        seed = config.seed

        init_rng = np.random.default_rng([seed, _INIT_STREAM])
        self.generator = build_generator(config.z_dim, rng=init_rng, widths=config.g_widths,
                                         leaky_slope=config.leaky_slope)
        self.discriminator = build_discriminator(rng=init_rng, widths=config.d_widths,
                                                 leaky_slope=config.leaky_slope)
        hyper = dict(lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.adam_eps)
        self.opt_g = Adam(self.generator.named_parameters(), **hyper)
        self.opt_d = Adam(self.discriminator.named_parameters(), **hyper)
        self.rng = np.random.default_rng([seed, _TRAIN_STREAM])
        self.eval_grid = EvalGrid.create(config.z_dim, np.random.default_rng([seed, _GRID_STREAM]))
        self.real_refs = real_references(self.records)
        self.centroids = self._fit_centroids()
        self.start_epoch = 1
        logger.info(f"Trainer ready: {len(self.records)} records, G {self.generator.parameter_count():,} params, "
                    f"D {self.discriminator.parameter_count():,} params")

    def _fit_centroids(self) -> Optional[CentroidModel]:
        try:
            return centroid_fit(self.records)
        except ContractError as e:
            logger.warning(f"Centroid classifier unavailable, eval accuracy will be nan: {e}")
            return None

    @property
    def losses_path(self) -> Path:
        return self.out_dir / LOSSES_FILE

    @property
    def eval_path(self) -> Path:
        return self.out_dir / EVAL_FILE

    def checkpoint_path(self, epoch: int) -> Path:
        return self.out_dir / 'checkpoints' / f"epoch_{epoch:03d}.ckpt"

    def grid_path(self, epoch: int) -> Path:
        return self.out_dir / 'grids' / f"grid_epoch_{epoch:03d}.pgm"

    def to_checkpoint(self, epoch: int) -> Checkpoint:
        tensors = {f"G/{k}": v for k, v in self.generator.named_state().items()}
        tensors.update({f"D/{k}": v for k, v in self.discriminator.named_state().items()})
        tensors['grid/noise'] = self.eval_grid.noise
        tensors.update({f"grid/column/{e:04d}": c for e, c in sorted(self.eval_grid.columns.items())})
        return Checkpoint(epoch=epoch, config_text=self.config.echo_text(), tensors=tensors,
                          optimizers={'G': self.opt_g.state, 'D': self.opt_d.state},
                          rng_state=self.rng.bit_generator.state)

    def resume(self, checkpoint: Checkpoint):
        """Restore everything a checkpoint holds; training continues at the next epoch."""
        if checkpoint.config_text != self.config.echo_text():
            logger.warning("Checkpoint was written with a different config; resuming with the current one")
        self.generator.load_state(checkpoint.section('G'))
        self.discriminator.load_state(checkpoint.section('D'))
        for name, opt in (('G', self.opt_g), ('D', self.opt_d)):
            state = checkpoint.optimizers.get(name)
            expected = [n for n, _ in opt.named_params]
            if state is None or list(state.m) != expected or list(state.v) != expected:
                raise ContractError(f"checkpoint optimizer state for {name} does not match the network")
            opt.state = state
        self.rng.bit_generator.state = checkpoint.rng_state
        grid = checkpoint.section('grid')
        self.eval_grid.noise = grid['noise']
        self.eval_grid.columns = {int(k.split('/')[1]): v for k, v in grid.items() if k.startswith('column/')}
        self.start_epoch = checkpoint.epoch + 1
        logger.info(f"Resuming from epoch {checkpoint.epoch}")

    def _prepare_out_dir(self):
        write_config_echo(self.config, self.out_dir)
        if self.start_epoch == 1:
            with open(self.losses_path, 'w', newline='', encoding='utf-8') as f:
                csv.writer(f, lineterminator='\n').writerow(LOSS_HEADER)
            if self.eval_path.exists():
                self.eval_path.unlink()
        else:
            truncate_csv(self.losses_path, self.start_epoch - 1)
            truncate_csv(self.eval_path, self.start_epoch - 1)

    def train_epoch(self, epoch: int, writer) -> Tuple[List[float], List[float]]:
        d_losses, g_losses = [], []
        cfg = self.config
        for batch in batch_iter(self.records, cfg.batch_size, epoch, cfg.seed, workers=cfg.workers):
            d_loss = train_step_discriminator(self.generator, self.discriminator, batch, self.opt_d, self.rng)
            g_loss = train_step_generator(self.generator, self.discriminator, batch.size, sample_labels,
                                          self.opt_g, self.rng, epoch, batch.batch_index)
            writer(epoch, batch.batch_index, d_loss, g_loss)
            d_losses.append(d_loss)
            g_losses.append(g_loss)
            logger.debug(f"epoch {epoch} batch {batch.batch_index}: d_loss={d_loss:.4f} g_loss={g_loss:.4f}")
            if self.progress is not None:
                self.progress(epoch, batch.batch_index, d_loss, g_loss)
        return d_losses, g_losses

    def snapshot(self, epoch: int, result: TrainingResult):
        grid_path = self.grid_path(epoch)
        emit_epoch_grid(self.generator, self.eval_grid, epoch, self.real_refs, grid_path)
        result.grids.append(grid_path)

        n = self.config.eval_samples_per_class
        labels = [GleasonLabel(score) for score in GLEASON_SCORES for _ in range(n)]
        noise = sample_noise(len(labels), self.config.z_dim, np.random.default_rng([self.config.seed, _EVAL_STREAM, epoch]))
        report = evaluate_generator(self.generator, self.centroids, noise, labels,
                                    grid_images=self.eval_grid.columns[epoch], epoch=epoch)
        write_report_row(self.eval_path, report)

        ckpt_path = self.checkpoint_path(epoch)
        save_checkpoint(ckpt_path, self.to_checkpoint(epoch))
        result.checkpoints.append(ckpt_path)

        render_report(self.out_dir)

    def run(self) -> TrainingResult:
        """Train from `start_epoch` to the configured last epoch.

        Rows are flushed to the loss CSV as they are produced; on an error the
        files written so far are left in place.
        """
        self._prepare_out_dir()
        result = TrainingResult(self.out_dir, self.losses_path, self.eval_path)
        snapshots = set(self.config.snapshots())
        for epoch in range(self.start_epoch, self.config.epochs + 1):
            with open(self.losses_path, 'a', newline='', encoding='utf-8') as f:
                csv_writer = csv.writer(f, lineterminator='\n')

                def write_row(e, b, d, g):
                    csv_writer.writerow([e, b, _fmt(d), _fmt(g)])
                    f.flush()

                d_losses, g_losses = self.train_epoch(epoch, write_row)
            logger.info(f"Epoch {epoch}/{self.config.epochs}: median d_loss={np.median(d_losses):.4f}, "
                        f"median g_loss={np.median(g_losses):.4f}")
            if epoch in snapshots:
                self.snapshot(epoch, result)
            result.last_epoch = epoch
        return result


def train(config: TrainConfig, dataset: Union[str, Path, Sequence[ImageRecord]],
          resume_from: Optional[Checkpoint] = None, progress: Optional[ProgressCallback] = None) -> TrainingResult:
    """Train on a manifest path or a list of records; optionally resume from a checkpoint."""
    records = load_manifest(dataset) if isinstance(dataset, (str, Path)) else list(dataset)
    trainer = GanTrainer(config, records, progress)
    if resume_from is not None:
        trainer.resume(resume_from)
    return trainer.run()
