#!/usr/bin/env python3
import struct
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from cgan.checkpoint import (
    FORMAT_VERSION,
    MAGIC,
    Checkpoint,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    save_checkpoint,
)
from cgan.errors import BadMagicError, CheckpointError, TruncatedCheckpointError, VersionMismatchError
from cgan.optim import AdamState


@pytest.fixture
def checkpoint():
    rng = np.random.default_rng(0)
    rng.random(3)
    tensors = {
        'G/dense.weight': rng.normal(size=(4, 6)).astype(np.float32),
        'G/bn0.running_var': np.ones(3, dtype=np.float32),
        'grid/noise': rng.uniform(-1, 1, size=(9, 5)).astype(np.float32),
    }
    adam = AdamState.for_params([])
    adam.t = 7
    adam.m['dense.weight'] = rng.normal(size=(4, 6)).astype(np.float32)
    adam.v['dense.weight'] = rng.random((4, 6)).astype(np.float32)
    return Checkpoint(epoch=5, config_text="epochs = 30\nlr = 0.0002\n", tensors=tensors,
                      optimizers={'G': adam}, rng_state=rng.bit_generator.state)


def test_layout_starts_with_magic_and_version(checkpoint):
    data = encode_checkpoint(checkpoint)
    assert data[:4] == MAGIC
    assert struct.unpack('<I', data[4:8])[0] == FORMAT_VERSION


def test_save_load_save_is_byte_identical(tmp_path, checkpoint):
    first = save_checkpoint(tmp_path / 'a.ckpt', checkpoint)
    loaded = load_checkpoint(first)
    second = save_checkpoint(tmp_path / 'b.ckpt', loaded)
    assert first.read_bytes() == second.read_bytes()


def test_loaded_contents(tmp_path, checkpoint):
    loaded = load_checkpoint(save_checkpoint(tmp_path / 'c.ckpt', checkpoint))
    assert loaded.epoch == 5
    assert loaded.config_text == checkpoint.config_text
    assert list(loaded.tensors) == list(checkpoint.tensors)
    np.testing.assert_array_equal(loaded.tensors['G/dense.weight'], checkpoint.tensors['G/dense.weight'])
    assert loaded.section('G').keys() == {'dense.weight', 'bn0.running_var'}

    adam = loaded.optimizers['G']
    assert adam.t == 7 and adam.lr == checkpoint.optimizers['G'].lr
    np.testing.assert_array_equal(adam.v['dense.weight'], checkpoint.optimizers['G'].v['dense.weight'])


def test_rng_state_resumes_the_stream(checkpoint):
    loaded = decode_checkpoint(encode_checkpoint(checkpoint))
    original = np.random.default_rng()
    original.bit_generator.state = checkpoint.rng_state
    restored = np.random.default_rng()
    restored.bit_generator.state = loaded.rng_state
    assert np.array_equal(original.random(10), restored.random(10))


def test_bad_magic(checkpoint):
    data = b'XXXX' + encode_checkpoint(checkpoint)[4:]
    with pytest.raises(BadMagicError):
        decode_checkpoint(data)
    with pytest.raises(BadMagicError):
        decode_checkpoint(b'PG')


def test_version_mismatch(checkpoint):
    data = bytearray(encode_checkpoint(checkpoint))
    data[4:8] = struct.pack('<I', FORMAT_VERSION + 1)
    with pytest.raises(VersionMismatchError):
        decode_checkpoint(bytes(data))


@pytest.mark.parametrize('keep', [6, 40, -1])
def test_truncation(checkpoint, keep):
    data = encode_checkpoint(checkpoint)
    with pytest.raises(TruncatedCheckpointError):
        decode_checkpoint(data[:keep])


def test_trailing_bytes_rejected(checkpoint):
    with pytest.raises(CheckpointError):
        decode_checkpoint(encode_checkpoint(checkpoint) + b'\x00')


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError, match='not found'):
        load_checkpoint(tmp_path / 'none.ckpt')


def test_only_pcg64_state_is_stored(checkpoint):
    checkpoint.rng_state = np.random.Generator(np.random.MT19937(0)).bit_generator.state
    with pytest.raises(CheckpointError):
        encode_checkpoint(checkpoint)
