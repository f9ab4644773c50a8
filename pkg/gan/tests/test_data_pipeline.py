#!/usr/bin/env python3
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from cgan.data_pipeline import (
    AUGMENTATIONS,
    ImageRecord,
    apply_augmentation,
    augment,
    batch_iter,
    fit_to_canvas,
    invert_augmentation,
    load_manifest,
    normalize_image,
)
from cgan.errors import ContractError, ManifestError
from cgan.nets import GleasonLabel
from cgan.pgm_io import write_pgm


def indexed_records(n):
    """Constant images whose value encodes the record index."""
    return [ImageRecord(np.full((32, 32), i / 1000.0), GleasonLabel.from_index(i % 9), f"r{i}") for i in range(n)]


def batch_values(batches):
    return [float(v) for b in batches for v in b.images.data[:, 0, 0, 0]]


@pytest.fixture
def manifest_dir(tmp_path):
    rng = np.random.default_rng(0)
    write_pgm(tmp_path / 'images' / 'a.pgm', rng.integers(0, 256, size=(32, 32), dtype=np.uint8))
    write_pgm(tmp_path / 'images' / 'b.pgm', rng.integers(0, 256, size=(20, 40), dtype=np.uint8))
    write_pgm(tmp_path / 'images' / 'tiny.pgm', np.zeros((8, 8), dtype=np.uint8))
    return tmp_path


def write_manifest(directory, text):
    path = directory / 'manifest.tsv'
    path.write_text(text, encoding='utf-8')
    return path


def test_normalize_endpoints():
    out = normalize_image(np.array([0, 255, 51], dtype=np.uint8))
    assert out[0] == -1.0 and out[1] == 1.0
    assert out.dtype == np.float32


def test_fit_to_canvas_identity_at_32():
    pixels = np.random.default_rng(1).uniform(-1, 1, size=(32, 32)).astype(np.float32)
    assert np.array_equal(fit_to_canvas(pixels), pixels)


def test_fit_to_canvas_wide_image_is_centred():
    out = fit_to_canvas(np.full((10, 35), 0.5, dtype=np.float32))
    assert out.shape == (32, 32)
    # 10x35 scales to 9x32, placed at rows 11..19
    assert np.all(out[:11] == -1.0)
    assert np.all(out[11:20] == 0.5)
    assert np.all(out[20:] == -1.0)


def test_fit_to_canvas_downsamples_large_image():
    out = fit_to_canvas(np.full((64, 64), -0.25, dtype=np.float32))
    np.testing.assert_allclose(out, -0.25)


def test_augmentations_invert_and_are_distinct():
    pixels = np.arange(32 * 32, dtype=np.float32).reshape(32, 32)
    outputs = []
    for rotation, flip in AUGMENTATIONS:
        out = apply_augmentation(pixels, rotation, flip)
        assert np.array_equal(invert_augmentation(out, rotation, flip), pixels)
        outputs.append(out.tobytes())
    assert len(set(outputs)) == 8


def test_augment_keeps_label_and_source():
    record = indexed_records(1)[0]
    out = augment(record, np.random.default_rng(3))
    assert out.label == record.label and out.source_id == record.source_id


def test_batch_sizes_keep_short_tail():
    batches = list(batch_iter(indexed_records(130), batch_size=64, epoch=1, master_seed=0))
    assert [b.size for b in batches] == [64, 64, 2]
    assert [b.batch_index for b in batches] == [0, 1, 2]


def test_each_record_appears_once_per_epoch():
    records = indexed_records(130)
    values = batch_values(batch_iter(records, batch_size=64, epoch=2, master_seed=7, augment_images=False))
    assert sorted(values) == sorted(float(r.pixels[0, 0]) for r in records)


def test_batches_depend_only_on_seed_and_epoch():
    records = indexed_records(50)
    first = batch_values(batch_iter(records, batch_size=16, epoch=3, master_seed=11))
    again = batch_values(batch_iter(records, batch_size=16, epoch=3, master_seed=11))
    other_epoch = batch_values(batch_iter(records, batch_size=16, epoch=4, master_seed=11))
    assert first == again
    assert first != other_epoch


def test_worker_count_does_not_change_batches():
    rng = np.random.default_rng(0)
    records = [ImageRecord(rng.uniform(-1, 1, size=(32, 32)), GleasonLabel(0), f"r{i}") for i in range(40)]
    single = list(batch_iter(records, batch_size=8, epoch=1, master_seed=5, workers=1))
    pooled = list(batch_iter(records, batch_size=8, epoch=1, master_seed=5, workers=4))
    assert len(single) == len(pooled)
    for a, b in zip(single, pooled):
        assert np.array_equal(a.images.data, b.images.data)
        assert a.labels == b.labels


def test_batch_iter_rejects_bad_arguments():
    with pytest.raises(ContractError):
        list(batch_iter([], batch_size=4))
    with pytest.raises(ContractError):
        list(batch_iter(indexed_records(3), batch_size=0))
    with pytest.raises(ContractError):
        list(batch_iter(indexed_records(3), batch_size=65))


def test_image_record_range_checked():
    with pytest.raises(ContractError):
        ImageRecord(np.full((32, 32), 1.5), GleasonLabel(0), 'bad')


def test_load_manifest(manifest_dir):
    path = write_manifest(manifest_dir, "# phantoms\n\nimages/a.pgm\t6\nimages/b.pgm 9\n")
    records = load_manifest(path)
    assert [r.label.score for r in records] == [6, 9]
    for record in records:
        assert record.pixels.shape == (32, 32)
        assert record.pixels.min() >= -1.0 and record.pixels.max() <= 1.0
    # 20x40 is padded top and bottom
    assert np.all(records[1].pixels[:8] == -1.0)


def test_manifest_rejects_unknown_score(manifest_dir):
    path = write_manifest(manifest_dir, "images/a.pgm\t6\nimages/a.pgm\t1\n")
    with pytest.raises(ManifestError, match="score 1 not in label set") as excinfo:
        load_manifest(path)
    assert excinfo.value.line_number == 2


@pytest.mark.parametrize('text, message', [
    ("images/missing.pgm\t3\n", 'not found'),
    ("images/tiny.pgm\t3\n", '8x8'),
    ("images/a.pgm\tseven\n", 'malformed score'),
    ("images/a.pgm\n", 'malformed'),
])
def test_manifest_errors(manifest_dir, text, message):
    with pytest.raises(ManifestError, match=message):
        load_manifest(write_manifest(manifest_dir, text))


def test_missing_manifest(tmp_path):
    with pytest.raises(ManifestError):
        load_manifest(tmp_path / 'nope.tsv')
