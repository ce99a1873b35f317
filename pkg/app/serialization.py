"""Little-endian binary formats for scanning bases, checkpoints and extractor weights.

All three share a 16-byte header: 4-byte magic, then three u32 fields.

* ``SPIB``: version, K, N, then K*N float32 values, row-major.
* ``SPIG``: version, config length in bytes, block count; the UTF-8 JSON config
  echo follows, then the named parameter blocks.
* ``SPIW``: version, block count, reserved (0), then the named parameter blocks.

A named block is: u32 name length, UTF-8 name, u32 ndim, ndim x u32 dims, then
prod(dims) float32 values.
"""
import logging
import struct
from pathlib import Path
from typing import BinaryIO, Dict, Tuple

import numpy as np

from app.errors import CheckpointError

logger = logging.getLogger(__name__)

HEADER = struct.Struct("<4sIII")
FORMAT_VERSION = 1

BASIS_MAGIC = b"SPIB"
CHECKPOINT_MAGIC = b"SPIG"
WEIGHTS_MAGIC = b"SPIW"


def _read_exact(stream: BinaryIO, size: int, path: Path) -> bytes:
    data = stream.read(size)
    if len(data) != size:
        raise CheckpointError(f"{path}: truncated file")
    return data


def read_header(stream: BinaryIO, path: Path, magic: bytes) -> Tuple[int, int, int]:
    found, version, a, b = HEADER.unpack(_read_exact(stream, HEADER.size, path))
    if found != magic:
        raise CheckpointError(f"{path}: expected magic {magic!r}, found {found!r}")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    return version, a, b


def write_blocks(stream: BinaryIO, blocks: Dict[str, np.ndarray]) -> None:
    for name, array in blocks.items():
        encoded = name.encode("utf-8")
        values = np.ascontiguousarray(array, dtype="<f4")
        stream.write(struct.pack("<I", len(encoded)))
        stream.write(encoded)
        stream.write(struct.pack("<I", values.ndim))
        stream.write(struct.pack(f"<{values.ndim}I", *values.shape))
        stream.write(values.tobytes())


def read_blocks(stream: BinaryIO, count: int, path: Path) -> Dict[str, np.ndarray]:
    blocks = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", _read_exact(stream, 4, path))
        name = _read_exact(stream, name_len, path).decode("utf-8")
        (ndim,) = struct.unpack("<I", _read_exact(stream, 4, path))
        shape = struct.unpack(f"<{ndim}I", _read_exact(stream, 4 * ndim, path)) if ndim else ()
        size = int(np.prod(shape)) if shape else 1
        values = np.frombuffer(_read_exact(stream, 4 * size, path), dtype="<f4")
        blocks[name] = values.reshape(shape).astype(np.float32)
    return blocks


def write_basis_file(path: Path, rows: np.ndarray) -> None:
    path = Path(path)
    k, n = rows.shape
    with path.open("wb") as stream:
        stream.write(HEADER.pack(BASIS_MAGIC, FORMAT_VERSION, k, n))
        stream.write(np.ascontiguousarray(rows, dtype="<f4").tobytes())
    logger.info(f"Scanning basis written: {path} (K={k}, N={n})")


def read_basis_file(path: Path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"basis file not found: {path}")
    with path.open("rb") as stream:
        _, k, n = read_header(stream, path, BASIS_MAGIC)
        values = np.frombuffer(_read_exact(stream, 4 * k * n, path), dtype="<f4")
    return values.reshape(k, n).astype(np.float64)


def write_checkpoint_file(path: Path, config_json: str, blocks: Dict[str, np.ndarray]) -> None:
    path = Path(path)
    encoded = config_json.encode("utf-8")
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("wb") as stream:
        stream.write(HEADER.pack(CHECKPOINT_MAGIC, FORMAT_VERSION, len(encoded), len(blocks)))
        stream.write(encoded)
        write_blocks(stream, blocks)
    # previous checkpoint stays intact until the new one is complete
    tmp.replace(path)


def read_checkpoint_file(path: Path) -> Tuple[str, Dict[str, np.ndarray]]:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    with path.open("rb") as stream:
        _, config_len, count = read_header(stream, path, CHECKPOINT_MAGIC)
        config_json = _read_exact(stream, config_len, path).decode("utf-8")
        blocks = read_blocks(stream, count, path)
    return config_json, blocks


def write_weights_file(path: Path, blocks: Dict[str, np.ndarray]) -> None:
    path = Path(path)
    with path.open("wb") as stream:
        stream.write(HEADER.pack(WEIGHTS_MAGIC, FORMAT_VERSION, len(blocks), 0))
        write_blocks(stream, blocks)


def read_weights_file(path: Path) -> Dict[str, np.ndarray]:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"extractor weight file not found: {path}")
    with path.open("rb") as stream:
        _, count, _ = read_header(stream, path, WEIGHTS_MAGIC)
        return read_blocks(stream, count, path)
