"""
checkpoint.py - Versioned little-endian binary snapshots of a training run.

Layout:
    magic "PGAN" | version u32 | config text (u32 length + utf-8) | epoch u32
    tensor block: u32 count, then {name_len u32, name utf-8, ndim u32, dims u32[], f32 data[]}
    optimizer block: u32 count, then {name, t u32, lr f64, beta1 f64, beta2 f64, eps f64, tensor block of m/* and v/*}
    rng block: bit generator name, state (16 bytes), inc (16 bytes), has_uint32 u32, uinteger u32
"""
import logging
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Union

import numpy as np

from .errors import BadMagicError, CheckpointError, TruncatedCheckpointError, VersionMismatchError
from .optim import AdamState

logger = logging.getLogger(__name__)

MAGIC = b'PGAN'
FORMAT_VERSION = 1
_RNG_NAME = 'PCG64'
_U128_BYTES = 16


@dataclass
class Checkpoint:
    epoch: int
    config_text: str
    tensors: Dict[str, np.ndarray] = field(default_factory=dict)
    optimizers: Dict[str, AdamState] = field(default_factory=dict)
    rng_state: dict = None

    def section(self, prefix: str) -> Dict[str, np.ndarray]:
        """Tensors under `prefix/`, with the prefix stripped."""
        marker = f"{prefix}/"
        return {name[len(marker):]: value for name, value in self.tensors.items() if name.startswith(marker)}


def _u32(value: int) -> bytes:
    return struct.pack('<I', value)


def _text(value: str) -> bytes:
    encoded = value.encode('utf-8')
    return _u32(len(encoded)) + encoded


def _tensor_block(tensors: Dict[str, np.ndarray]) -> bytes:
    parts = [_u32(len(tensors))]
    for name, array in tensors.items():
        array = np.asarray(array)
        parts.append(_text(name))
        parts.append(_u32(array.ndim))
        parts.extend(_u32(d) for d in array.shape)
        parts.append(np.ascontiguousarray(array, dtype='<f4').tobytes())
    return b''.join(parts)


def _rng_block(state: dict) -> bytes:
    if state is None or state.get('bit_generator') != _RNG_NAME:
        raise CheckpointError(f"only {_RNG_NAME} generator state can be stored")
    return b''.join([
        _text(_RNG_NAME),
        int(state['state']['state']).to_bytes(_U128_BYTES, 'little'),
        int(state['state']['inc']).to_bytes(_U128_BYTES, 'little'),
        _u32(int(state['has_uint32'])),
        _u32(int(state['uinteger'])),
    ])


def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    parts = [MAGIC, _u32(FORMAT_VERSION), _text(checkpoint.config_text), _u32(checkpoint.epoch),
             _tensor_block(checkpoint.tensors), _u32(len(checkpoint.optimizers))]
    for name, state in checkpoint.optimizers.items():
        moments = {f"m/{k}": v for k, v in state.m.items()}
        moments.update({f"v/{k}": v for k, v in state.v.items()})
        parts.append(_text(name))
        parts.append(_u32(state.t))
        parts.append(struct.pack('<4d', state.lr, state.beta1, state.beta2, state.eps))
        parts.append(_tensor_block(moments))
    parts.append(_rng_block(checkpoint.rng_state))
    return b''.join(parts)


class _Reader:
    def __init__(self, data: bytes, path: str):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedCheckpointError(f"{self.path}: truncated at byte {len(self.data)}, needed {self.pos + n}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack('<I', self.take(4))[0]

    def text(self) -> str:
        raw = self.take(self.u32())
        try:
            return raw.decode('utf-8')
        except UnicodeDecodeError as e:
            raise CheckpointError(f"{self.path}: invalid utf-8 at byte {self.pos}") from e

    def tensors(self) -> Dict[str, np.ndarray]:
        out = {}
        for _ in range(self.u32()):
            name = self.text()
            shape = tuple(self.u32() for _ in range(self.u32()))
            count = int(np.prod(shape)) if shape else 1
            out[name] = np.frombuffer(self.take(4 * count), dtype='<f4').astype(np.float32).reshape(shape)
        return out


def decode_checkpoint(data: bytes, path: str = '<bytes>') -> Checkpoint:
    reader = _Reader(data, path)
    magic = reader.take(len(MAGIC)) if len(data) >= len(MAGIC) else data
    if magic != MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}, not a checkpoint")
    version = reader.u32()
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    config_text = reader.text()
    epoch = reader.u32()
    tensors = reader.tensors()

    optimizers = {}
    for _ in range(reader.u32()):
        name = reader.text()
        t = reader.u32()
        lr, beta1, beta2, eps = struct.unpack('<4d', reader.take(32))
        state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps, t=t)
        for key, value in reader.tensors().items():
            kind, param = key.split('/', 1)
            (state.m if kind == 'm' else state.v)[param] = value
        optimizers[name] = state

    rng_name = reader.text()
    if rng_name != _RNG_NAME:
        raise CheckpointError(f"{path}: unsupported bit generator {rng_name}")
    rng_state = {
        'bit_generator': rng_name,
        'state': {'state': int.from_bytes(reader.take(_U128_BYTES), 'little'),
                  'inc': int.from_bytes(reader.take(_U128_BYTES), 'little')},
        'has_uint32': reader.u32(),
        'uinteger': reader.u32(),
    }
    if reader.pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - reader.pos} trailing bytes after rng state")
    return Checkpoint(epoch, config_text, tensors, optimizers, rng_state)


def save_checkpoint(path: Union[str, Path], checkpoint: Checkpoint) -> Path:
    """Write atomically: temp file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = encode_checkpoint(checkpoint)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix='.tmp')
    try:
        with os.fdopen(fd, 'wb') as f:
            f.write(payload)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    logger.info(f"Saved checkpoint for epoch {checkpoint.epoch} to {path} ({len(payload):,} bytes)")
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"{path}: checkpoint not found")
    checkpoint = decode_checkpoint(path.read_bytes(), str(path))
    logger.debug(f"Loaded checkpoint {path} at epoch {checkpoint.epoch} with {len(checkpoint.tensors)} tensors")
    return checkpoint
