"""Binary PGM (P5, maxval 255) and PNG image files through Pillow."""
import logging
import os
import tempfile
from pathlib import Path
from typing import Sequence, Union

import numpy as np
from PIL import Image

from .errors import ManifestError

logger = logging.getLogger(__name__)

PGM_MAGIC = b'P5'
GRID_GAP = 2
GRID_GAP_VALUE = 255

PathLike = Union[str, Path]


def to_u8(pixels: np.ndarray) -> np.ndarray:
    """[-1, 1] floats -> 0..255 via round((x + 1) * 127.5), half up."""
    scaled = np.floor((np.asarray(pixels, dtype=np.float64) + 1.0) * 127.5 + 0.5)
    return np.clip(scaled, 0, 255).astype(np.uint8)


def read_pgm(path: PathLike) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise ManifestError(path, "image file not found")
    with open(path, 'rb') as f:
        magic = f.read(2)
    if magic != PGM_MAGIC:
        raise ManifestError(path, f"not a binary PGM (magic {magic!r})")
    with Image.open(path) as image:
        if image.mode != 'L':
            raise ManifestError(path, f"expected 8-bit single channel PGM, got mode {image.mode}")
        return np.array(image, dtype=np.uint8)


def _atomic_save(path: Path, image: Image.Image, fmt: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix='.tmp')
    try:
        with os.fdopen(fd, 'wb') as f:
            image.save(f, format=fmt)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def _as_image(pixels: np.ndarray) -> Image.Image:
    pixels = np.ascontiguousarray(pixels)
    if pixels.dtype != np.uint8 or pixels.ndim != 2:
        raise ValueError(f"expected a 2-D uint8 grid, got {pixels.dtype} {pixels.shape}")
    return Image.fromarray(pixels)


def write_pgm(path: PathLike, pixels: np.ndarray) -> Path:
    path = Path(path)
    _atomic_save(path, _as_image(pixels), 'PPM')
    logger.debug(f"Wrote PGM {path} ({pixels.shape[1]}x{pixels.shape[0]})")
    return path


def write_png(path: PathLike, pixels: np.ndarray) -> Path:
    path = Path(path)
    _atomic_save(path, _as_image(pixels), 'PNG')
    return path


def compose_grid(rows: Sequence[Sequence[np.ndarray]], gap: int = GRID_GAP, gap_value: int = GRID_GAP_VALUE) -> np.ndarray:
    """Lay out rows of equally sized [-1, 1] tiles into one u8 image separated by `gap` px."""
    n_rows = len(rows)
    n_cols = max((len(r) for r in rows), default=0)
    if n_rows == 0 or n_cols == 0:
        raise ValueError("grid needs at least one tile")
    tile_h, tile_w = np.asarray(rows[0][0]).shape
    height = n_rows * tile_h + (n_rows - 1) * gap
    width = n_cols * tile_w + (n_cols - 1) * gap
    grid = np.full((height, width), gap_value, dtype=np.uint8)
    for r, row in enumerate(rows):
        for c, tile in enumerate(row):
            top = r * (tile_h + gap)
            left = c * (tile_w + gap)
            grid[top:top + tile_h, left:left + tile_w] = to_u8(tile)
    return grid
