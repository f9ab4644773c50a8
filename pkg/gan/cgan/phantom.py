"""
phantom.py - Synthetic prostate-like phantoms with a known score-dependent appearance.

A phantom is a bright elliptical gland on a dark background. Scores 6..9 add
(score - 5) dark circular lesions inside the gland, deeper as the score rises.
The background tone steps down with the class index, from -0.1 at score 0
to -0.9 at score 9, so that every class, including the lesion-free ones,
has a measurable signature.
"""
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np

from .data_pipeline import ImageRecord
from .errors import ContractError, DatasetWriteError
from .nets import GLEASON_SCORES, IMAGE_SIZE, N_CLASSES, GleasonLabel, LabelLike, as_label
from .pgm_io import to_u8, write_pgm

logger = logging.getLogger(__name__)

MANIFEST_NAME = 'manifest.tsv'
IMAGES_DIR = 'images'
DEFAULT_PER_CLASS = 128


@dataclass(frozen=True)
class PhantomSpec:
    canvas: int = IMAGE_SIZE
    center_jitter: float = 3.0
    semi_axis_range: Tuple[float, float] = (8.0, 14.0)
    base_range: Tuple[float, float] = (0.3, 0.6)
    background: float = -0.9
    # without a per-class tone scores 0..5 are identical and centroid separability cannot reach 0.80
    background_step: float = 0.1
    noise_sigma: float = 0.05
    noise_clip_sigmas: float = 3.0
    lesion_radius_range: Tuple[float, float] = (2.0, 4.0)
    lesion_depth_base: float = 0.4
    lesion_depth_step: float = 0.05
    lesion_spread: float = 0.5
    lesion_min_gap: float = 0.8
    placement_attempts: int = 50
    interior_scale: float = 0.6
    rotate: bool = True

    def lesion_count(self, label: GleasonLabel) -> int:
        return max(0, label.score - 5)

    def lesion_depth(self, label: GleasonLabel) -> float:
        return self.lesion_depth_base + self.lesion_depth_step * (label.score - 6)

    def background_level(self, label: GleasonLabel) -> float:
        return self.background + self.background_step * (N_CLASSES - 1 - label.class_index)


DEFAULT_SPEC = PhantomSpec()


@dataclass
class PhantomRender:
    pixels: np.ndarray
    gland_mask: np.ndarray
    interior_mask: np.ndarray
    lesion_mask: np.ndarray
    base_intensity: float
    lesion_centers: List[Tuple[float, float, float]]


def _place_lesion(rng, spec, cy, cx, a, b, cos_t, sin_t, radius, placed):
    ly = lx = None
    for _ in range(spec.placement_attempts):
        rho = spec.lesion_spread * np.sqrt(rng.uniform())
        phi = rng.uniform(0.0, 2 * np.pi)
        u, v = a * rho * np.cos(phi), b * rho * np.sin(phi)
        lx = cx + u * cos_t - v * sin_t
        ly = cy + u * sin_t + v * cos_t
        if all(np.hypot(ly - oy, lx - ox) >= spec.lesion_min_gap * (radius + orad) for oy, ox, orad in placed):
            break
    return ly, lx


def render_phantom(label: LabelLike, seed: int, spec: PhantomSpec = DEFAULT_SPEC) -> PhantomRender:
    """Deterministic in (label, seed); masks are returned alongside the pixels."""
    label = as_label(label)
    rng = np.random.default_rng([seed, label.score])
    size = spec.canvas
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)

    center = (size - 1) / 2
    cy = center + rng.uniform(-spec.center_jitter, spec.center_jitter)
    cx = center + rng.uniform(-spec.center_jitter, spec.center_jitter)
    a = rng.uniform(*spec.semi_axis_range)
    b = rng.uniform(*spec.semi_axis_range)
    theta = rng.uniform(0.0, np.pi) if spec.rotate else 0.0
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    base = rng.uniform(*spec.base_range)

    dy, dx = yy - cy, xx - cx
    u = dx * cos_t + dy * sin_t
    v = -dx * sin_t + dy * cos_t
    radial = (u / a) ** 2 + (v / b) ** 2
    gland = radial <= 1.0
    interior = radial <= spec.interior_scale ** 2

    image = np.full((size, size), spec.background_level(label), dtype=np.float64)
    image[gland] = base

    lesions = np.zeros((size, size), dtype=bool)
    placed = []
    for _ in range(spec.lesion_count(label)):
        radius = rng.uniform(*spec.lesion_radius_range)
        ly, lx = _place_lesion(rng, spec, cy, cx, a, b, cos_t, sin_t, radius, placed)
        placed.append((ly, lx, radius))
        lesions |= ((yy - ly) ** 2 + (xx - lx) ** 2 <= radius ** 2) & gland
    if placed:
        # overlapping lesions do not stack
        image[lesions] = base - spec.lesion_depth(label)

    limit = spec.noise_clip_sigmas * spec.noise_sigma
    noise = np.clip(rng.normal(0.0, spec.noise_sigma, size=(size, size)), -limit, limit)
    pixels = np.clip(image + noise, -1.0, 1.0).astype(np.float32)
    return PhantomRender(pixels, gland, interior, lesions, float(base), placed)


def generate_phantom(label: LabelLike, seed: int, spec: PhantomSpec = DEFAULT_SPEC) -> ImageRecord:
    label = as_label(label)
    render = render_phantom(label, seed, spec)
    return ImageRecord(render.pixels, label, f"phantom-s{label.score}-seed{seed}")


def interior_mean(render: PhantomRender) -> float:
    """Mean pixel value over the central part of the gland."""
    return float(render.pixels[render.interior_mask].mean())


def phantom_seed(master_seed: int, label: GleasonLabel, index: int) -> int:
    return int(np.random.SeedSequence([master_seed, label.score, index]).generate_state(1)[0])


def generate_dataset(per_class: int, master_seed: int, out_dir: Union[str, Path],
                     spec: PhantomSpec = DEFAULT_SPEC) -> Path:
    """Write `per_class` phantoms for each of the 9 scores plus a manifest; return the manifest path."""
    if per_class < 1:
        raise ContractError(f"per_class must be >= 1, got {per_class}")
    if master_seed < 0:
        raise ContractError(f"seed must be >= 0, got {master_seed}")
    out_dir = Path(out_dir)
    images_dir = out_dir / IMAGES_DIR
    try:
        images_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DatasetWriteError(f"cannot create {images_dir}: {e}") from e
    if not os.access(images_dir, os.W_OK):
        raise DatasetWriteError(f"output directory {images_dir} is not writable")

    lines = []
    try:
        for score in GLEASON_SCORES:
            label = GleasonLabel(score)
            for i in range(per_class):
                record = generate_phantom(label, phantom_seed(master_seed, label, i), spec)
                name = f"phantom_s{score}_{i:04d}.pgm"
                write_pgm(images_dir / name, to_u8(record.pixels))
                lines.append(f"{IMAGES_DIR}/{name}\t{score}\n")
            logger.debug(f"Wrote {per_class} phantoms for {label}")
        manifest = out_dir / MANIFEST_NAME
        tmp = manifest.with_name(manifest.name + '.tmp')
        with open(tmp, 'w', encoding='utf-8') as f:
            f.writelines(lines)
        os.replace(tmp, manifest)
    except OSError as e:
        raise DatasetWriteError(f"failed writing phantom dataset to {out_dir}: {e}") from e

    logger.info(f"Generated {len(lines)} phantoms ({per_class} per class, seed {master_seed}) in {out_dir}")
    return manifest
