"""
data_pipeline.py - Manifest ingestion, normalization, augmentation and batching.

Manifest format: UTF-8 text, one record per line, `relative_image_path<TAB>score`,
`#` comment lines and blank lines ignored. Image paths are relative to the
manifest's directory and point at binary PGM (P5) files.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator, List, Sequence, Tuple, Union

import numpy as np

from .errors import ContractError, LabelError, ManifestError, ShapeError
from .nets import IMAGE_SIZE, GleasonLabel
from .pgm_io import read_pgm
from .tensor_core import Tensor

logger = logging.getLogger(__name__)

MIN_INGEST_SIZE = 10
MAX_INGEST_SIZE = 64
CANVAS_FILL = -1.0
DEFAULT_BATCH_SIZE = 64
MAX_BATCH_SIZE = 64

# (quarter turns, horizontal flip): the 8 elements of the square's symmetry group
AUGMENTATIONS: Tuple[Tuple[int, bool], ...] = tuple((k, flip) for flip in (False, True) for k in range(4))

_PERMUTATION_STREAM = 0
_SAMPLE_STREAM = 1


@dataclass
class ImageRecord:
    pixels: np.ndarray
    label: GleasonLabel
    source_id: str

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float32)
        if self.pixels.ndim != 2:
            raise ShapeError('image_record', self.pixels.shape, detail='expected a 2-D grid')
        if self.pixels.size and (self.pixels.min() < -1.0 or self.pixels.max() > 1.0):
            raise ContractError(f"record {self.source_id} has pixels outside [-1, 1]")


@dataclass
class Batch:
    images: Tensor
    labels: List[GleasonLabel]
    epoch: int
    batch_index: int
    rng_stream_id: Tuple[int, int, int]

    @property
    def size(self) -> int:
        return self.images.shape[0]


def normalize_image(raw: np.ndarray) -> np.ndarray:
    """u8 grid -> float32 grid in [-1, 1] via x / 127.5 - 1."""
    return np.asarray(raw).astype(np.float32) / np.float32(127.5) - np.float32(1.0)


def _axis_samples(n_in: int, n_out: int):
    pos = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0.0, n_in - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, pos - lo


def bilinear_resize(pixels: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-centred bilinear resampling, computed in float64."""
    src = np.asarray(pixels, dtype=np.float64)
    lo_y, hi_y, fy = _axis_samples(src.shape[0], out_h)
    lo_x, hi_x, fx = _axis_samples(src.shape[1], out_w)
    rows = src[lo_y] * (1 - fy)[:, None] + src[hi_y] * fy[:, None]
    return rows[:, lo_x] * (1 - fx)[None, :] + rows[:, hi_x] * fx[None, :]


def fit_to_canvas(pixels: np.ndarray, size: int = IMAGE_SIZE, fill: float = CANVAS_FILL) -> np.ndarray:
    """Resize so the longer side equals `size`, keep aspect ratio, centre on a `fill` canvas."""
    pixels = np.asarray(pixels, dtype=np.float32)
    h, w = pixels.shape
    if not (1 <= h <= MAX_INGEST_SIZE and 1 <= w <= MAX_INGEST_SIZE):
        raise ShapeError('fit_to_canvas', pixels.shape, detail=f'sides must be within 1..{MAX_INGEST_SIZE}')
    if (h, w) == (size, size):
        return pixels.copy()
    scale = size / max(h, w)
    new_h = min(size, max(1, int(math.floor(h * scale + 0.5))))
    new_w = min(size, max(1, int(math.floor(w * scale + 0.5))))
    canvas = np.full((size, size), fill, dtype=np.float32)
    top = (size - new_h) // 2
    left = (size - new_w) // 2
    canvas[top:top + new_h, left:left + new_w] = bilinear_resize(pixels, new_h, new_w)
    return canvas


def apply_augmentation(pixels: np.ndarray, rotation: int, flip: bool) -> np.ndarray:
    out = np.rot90(pixels, rotation % 4)
    if flip:
        out = np.fliplr(out)
    return np.ascontiguousarray(out)


def invert_augmentation(pixels: np.ndarray, rotation: int, flip: bool) -> np.ndarray:
    out = np.fliplr(pixels) if flip else pixels
    return np.ascontiguousarray(np.rot90(out, -(rotation % 4)))


def augment(record: ImageRecord, rng: np.random.Generator) -> ImageRecord:
    """Uniform draw of a right-angle rotation and an optional horizontal flip."""
    rotation = int(rng.integers(0, 4))
    flip = bool(rng.integers(0, 2))
    if rotation == 0 and not flip:
        return record
    return replace(record, pixels=apply_augmentation(record.pixels, rotation, flip))


def _parse_manifest_line(path: Path, line: str, line_number: int) -> Tuple[str, GleasonLabel]:
    parts = line.rsplit('\t', 1) if '\t' in line else line.rsplit(None, 1)
    if len(parts) != 2 or not parts[0].strip():
        raise ManifestError(path, f"malformed line {line!r}, expected 'path<TAB>score'", line_number)
    image_path, score_text = parts[0].strip(), parts[1].strip()
    try:
        score = int(score_text)
    except ValueError:
        raise ManifestError(path, f"malformed score {score_text!r}", line_number)
    try:
        return image_path, GleasonLabel(score)
    except LabelError as e:
        raise ManifestError(path, str(e), line_number) from e


def load_manifest(path: Union[str, Path]) -> List[ImageRecord]:
    """Read a manifest and its PGM images into normalized 32x32 records."""
    path = Path(path)
    if not path.is_file():
        raise ManifestError(path, "manifest not found")
    records = []
    with open(path, 'r', encoding='utf-8') as f:
        for line_number, line in enumerate(f, 1):
            stripped = line.strip()
            if not stripped or stripped.startswith('#'):
                continue
            image_path, label = _parse_manifest_line(path, stripped, line_number)
            raw = read_pgm(path.parent / image_path)
            h, w = raw.shape
            if not (MIN_INGEST_SIZE <= h <= MAX_INGEST_SIZE and MIN_INGEST_SIZE <= w <= MAX_INGEST_SIZE):
                raise ManifestError(path, f"image {image_path} is {w}x{h}, sides must be within "
                                          f"{MIN_INGEST_SIZE}..{MAX_INGEST_SIZE}", line_number)
            records.append(ImageRecord(fit_to_canvas(normalize_image(raw)), label, image_path))
    logger.info(f"Loaded {len(records)} records from {path}")
    return records


def sample_rng(master_seed: int, epoch: int, sample_index: int) -> np.random.Generator:
    return np.random.default_rng([master_seed, epoch, _SAMPLE_STREAM, sample_index])


def epoch_permutation(n_records: int, epoch: int, master_seed: int) -> np.ndarray:
    return np.random.default_rng([master_seed, epoch, _PERMUTATION_STREAM]).permutation(n_records)


def batch_iter(records: Sequence[ImageRecord], batch_size: int = DEFAULT_BATCH_SIZE, epoch: int = 1,
               master_seed: int = 0, augment_images: bool = True, workers: int = 1) -> Iterator[Batch]:
    """Deterministic batches for one epoch; the final short batch is kept.

    The shuffle depends only on (master_seed, epoch) and each sample's
    augmentation only on (master_seed, epoch, record index), so batches are
    identical whatever the number of workers preparing them.
    """
    if not records:
        raise ContractError("batch_iter needs at least one record")
    if not 1 <= batch_size <= MAX_BATCH_SIZE or master_seed < 0 or epoch < 0:
        raise ContractError(f"invalid batch_size={batch_size}, master_seed={master_seed}, epoch={epoch}")
    order = epoch_permutation(len(records), epoch, master_seed)
    n_batches = math.ceil(len(records) / batch_size)

    def build(batch_index: int) -> Batch:
        indices = order[batch_index * batch_size:(batch_index + 1) * batch_size]
        images = np.empty((len(indices), 1, IMAGE_SIZE, IMAGE_SIZE), dtype=np.float32)
        labels = []
        for row, i in enumerate(indices):
            record = records[i]
            if augment_images:
                record = augment(record, sample_rng(master_seed, epoch, int(i)))
            pixels = record.pixels
            if pixels.shape != (IMAGE_SIZE, IMAGE_SIZE):
                pixels = fit_to_canvas(pixels)
            images[row, 0] = pixels
            labels.append(record.label)
        return Batch(Tensor(images), labels, epoch, batch_index, (master_seed, epoch, batch_index))

    if workers <= 1:
        for batch_index in range(n_batches):
            yield build(batch_index)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            yield from pool.map(build, range(n_batches))
