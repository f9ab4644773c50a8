"""
evaluation.py - Quantitative proxies for generated image quality.

- checkerboard energy: normalized response to the 2x2 alternating kernel,
  sensitive to the grid pattern left by stride-2 transposed convolutions
- class darkness: mean of the central 16x16 crop per class
- conditional fidelity: nearest-centroid classifier fit on real images
"""
import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from .errors import ContractError, ShapeError
from .nets import GLEASON_SCORES, IMAGE_SIZE, N_CLASSES, GeneratorNet, GleasonLabel, LabelLike, as_label, forward_generator
from .pgm_io import compose_grid
from .tensor_core import Tensor

logger = logging.getLogger(__name__)

ENERGY_GUARD = 1e-12
CROP = 16
REPORT_HEADER = ['epoch', 'cb_energy', 'acc'] + [f"dark_{score}" for score in GLEASON_SCORES]
_PREDICT_CHUNK = 256


def checkerboard_response(image: np.ndarray) -> np.ndarray:
    """Valid-region correlation with [[+1, -1], [-1, +1]]."""
    x = np.asarray(image, dtype=np.float64)
    return x[:-1, :-1] - x[:-1, 1:] - x[1:, :-1] + x[1:, 1:]


def checkerboard_energy(image: np.ndarray) -> float:
    x = np.asarray(image, dtype=np.float64)
    if x.ndim != 2 or min(x.shape) < 2:
        raise ShapeError('checkerboard_energy', x.shape, detail='expected a 2-D image of at least 2x2')
    denominator = float(np.sum(x * x))
    if denominator < ENERGY_GUARD:
        return 0.0
    return float(np.sum(checkerboard_response(x) ** 2)) / denominator


def _as_image_stack(images) -> np.ndarray:
    if isinstance(images, Tensor):
        images = images.data
    stack = np.asarray(images, dtype=np.float64)
    if stack.ndim == 4 and stack.shape[1] == 1:
        stack = stack[:, 0]
    if stack.ndim != 3:
        raise ShapeError('image_stack', stack.shape, detail='expected N x H x W or N x 1 x H x W')
    return stack


def center_crop(stack: np.ndarray, size: int = CROP) -> np.ndarray:
    h, w = stack.shape[-2:]
    top, left = (h - size) // 2, (w - size) // 2
    return stack[..., top:top + size, left:left + size]


def class_darkness(images, labels: Sequence[LabelLike]) -> Dict[int, float]:
    """Score -> mean central-crop intensity, ascending score; absent classes are omitted."""
    stack = _as_image_stack(images)
    labels = [as_label(label) for label in labels]
    if len(labels) != stack.shape[0]:
        raise ContractError(f"got {len(labels)} labels for {stack.shape[0]} images")
    crop_means = center_crop(stack).mean(axis=(1, 2))
    scores = np.array([label.score for label in labels])
    darkness = {}
    for score in GLEASON_SCORES:
        mask = scores == score
        if mask.any():
            darkness[score] = float(crop_means[mask].mean())
    missing = [score for score in GLEASON_SCORES if score not in darkness]
    if missing:
        logger.warning(f"Darkness report omits scores with no images: {missing}")
    return darkness


@dataclass
class CentroidModel:
    centroids: np.ndarray

    def predict(self, images) -> np.ndarray:
        """Class index of the nearest centroid; ties go to the lowest index."""
        flat = _as_image_stack(images).reshape(-1, self.centroids.shape[1])
        predictions = np.empty(flat.shape[0], dtype=np.int64)
        for start in range(0, flat.shape[0], _PREDICT_CHUNK):
            chunk = flat[start:start + _PREDICT_CHUNK]
            distances = ((chunk[:, None, :] - self.centroids[None, :, :]) ** 2).sum(axis=2)
            predictions[start:start + len(chunk)] = np.argmin(distances, axis=1)
        return predictions


def centroid_fit(train_records) -> CentroidModel:
    """Per-class mean image; every class must be present."""
    records = list(train_records)
    if not records:
        raise ContractError("centroid_fit needs training records")
    stack = _as_image_stack([r.pixels for r in records]).reshape(len(records), -1)
    indices = np.array([r.label.class_index for r in records])
    centroids = np.zeros((N_CLASSES, stack.shape[1]), dtype=np.float64)
    for class_index in range(N_CLASSES):
        mask = indices == class_index
        if not mask.any():
            raise ContractError(f"no training records for {GleasonLabel.from_index(class_index)}")
        centroids[class_index] = stack[mask].mean(axis=0)
    return CentroidModel(centroids)


def prediction_accuracy(model: CentroidModel, images, labels: Sequence[LabelLike]) -> float:
    expected = np.array([as_label(label).class_index for label in labels])
    if expected.size == 0:
        raise ContractError("accuracy needs at least one image")
    return float(np.mean(model.predict(images) == expected))


def centroid_accuracy(model: CentroidModel, test_records) -> float:
    records = list(test_records)
    if not records:
        raise ContractError("centroid_accuracy needs test records")
    return prediction_accuracy(model, [r.pixels for r in records], [r.label for r in records])


@dataclass
class ArtifactReport:
    epoch: int
    cb_energy: float
    accuracy: float
    darkness: Dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.cb_energy >= 0:
            raise ContractError(f"checkerboard energy must be >= 0, got {self.cb_energy}")
        if not math.isnan(self.accuracy) and not 0.0 <= self.accuracy <= 1.0:
            raise ContractError(f"accuracy must be within [0, 1], got {self.accuracy}")

    def row(self) -> List[str]:
        values = [self.cb_energy, self.accuracy] + [self.darkness.get(score, math.nan) for score in GLEASON_SCORES]
        return [str(self.epoch)] + [f"{v:.9g}" for v in values]


def generate_images(generator: GeneratorNet, noise: Tensor, labels: Sequence[LabelLike],
                    chunk: int = 256) -> np.ndarray:
    """Eval-mode generation, N x 32 x 32, in chunks."""
    labels = list(labels)
    out = np.empty((noise.shape[0], IMAGE_SIZE, IMAGE_SIZE), dtype=noise.data.dtype)
    for start in range(0, noise.shape[0], chunk):
        z = Tensor(noise.data[start:start + chunk])
        out[start:start + z.shape[0]] = forward_generator(generator, z, labels[start:start + z.shape[0]],
                                                          mode='eval').data[:, 0]
    return out


def evaluate_generator(generator: GeneratorNet, model: Optional[CentroidModel], noise: Tensor,
                       labels: Sequence[LabelLike], grid_images=None, epoch: int = 0) -> ArtifactReport:
    """Score one snapshot of the generator.

    Checkerboard energy is the median over `grid_images` when given (the fixed
    evaluation grid), otherwise over the generated samples. Accuracy is NaN
    without a centroid model.
    """
    samples = generate_images(generator, noise, labels)
    energy_source = _as_image_stack(grid_images) if grid_images is not None else samples
    energy = float(np.median([checkerboard_energy(image) for image in energy_source]))
    accuracy = prediction_accuracy(model, samples, labels) if model is not None else math.nan
    report = ArtifactReport(epoch, energy, accuracy, class_darkness(samples, labels))
    logger.info(f"Epoch {epoch}: checkerboard energy {energy:.4f}, centroid accuracy {accuracy:.3f}")
    return report


def write_report_row(path: Union[str, Path], report: ArtifactReport) -> Path:
    """Append one row to the eval CSV, writing the header first for a new file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    new_file = not path.exists() or path.stat().st_size == 0
    with open(path, 'a', newline='', encoding='utf-8') as f:
        writer = csv.writer(f, lineterminator='\n')
        if new_file:
            writer.writerow(REPORT_HEADER)
        writer.writerow(report.row())
    return path


def first_records_by_class(records, n: int) -> Dict[int, List[np.ndarray]]:
    found: Dict[int, List[np.ndarray]] = {score: [] for score in GLEASON_SCORES}
    for record in records:
        bucket = found[record.label.score]
        if len(bucket) < n:
            bucket.append(record.pixels)
    return found


def emit_comparison_grid(generator: GeneratorNet, real_records, n_cols: int, noise: Tensor) -> np.ndarray:
    """One row per score: `n_cols` generated tiles, then `n_cols` real tiles.

    `noise` holds 9 * n_cols rows, consumed row-major. Missing real images are
    left as blank (-1) tiles.
    """
    if n_cols < 1:
        raise ContractError(f"n_cols must be >= 1, got {n_cols}")
    if noise.shape[0] != N_CLASSES * n_cols:
        raise ShapeError('emit_comparison_grid', noise.shape, detail=f'expected {N_CLASSES * n_cols} noise rows')
    labels = [GleasonLabel(score) for score in GLEASON_SCORES for _ in range(n_cols)]
    samples = generate_images(generator, noise, labels)
    reals = first_records_by_class(real_records, n_cols)
    blank = np.full((IMAGE_SIZE, IMAGE_SIZE), -1.0, dtype=np.float32)
    rows = []
    for r, score in enumerate(GLEASON_SCORES):
        fakes = list(samples[r * n_cols:(r + 1) * n_cols])
        real = reals[score] + [blank] * (n_cols - len(reals[score]))
        if len(reals[score]) < n_cols:
            logger.warning(f"Only {len(reals[score])} real images for score {score}, padding with blanks")
        rows.append(fakes + real)
    return compose_grid(rows)
