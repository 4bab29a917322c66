"""Parameter checkpoint container.

Layout, all integers little-endian::

    magic    4 bytes  b"IAWT"
    version  u16      1 (no metadata) or 2 (metadata block follows)
    [meta    u32 length + UTF-8 ``key=value`` lines]   version 2 only
    count    u32
    count records of:
        name length u16, name bytes (UTF-8)
        rank u8, dims u32 * rank
        values float32 * product(dims)
"""

import logging
import struct
from pathlib import Path
from typing import BinaryIO, Dict, Mapping, Optional, Tuple, Union

import numpy as np

from .errors import BadMagic, TruncatedFile, UnsupportedVersion
from .helpers import dump_kv, parse_kv
from .tensor import Tensor

logger = logging.getLogger(__name__)

MAGIC = b"IAWT"
VERSION_PLAIN = 1
VERSION_META = 2


def _read_exact(f: BinaryIO, n: int) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise TruncatedFile("expected %d bytes, got %d" % (n, len(data)))
    return data


def write_checkpoint(
    f: BinaryIO,
    tensors: Mapping[str, Union[Tensor, np.ndarray]],
    metadata: Optional[Mapping[str, object]] = None,
) -> None:
    """Write named tensors, in mapping order, to a binary stream."""
    f.write(MAGIC)
    if metadata is None:
        f.write(struct.pack("<H", VERSION_PLAIN))
    else:
        meta = dump_kv(metadata).encode("utf-8")
        f.write(struct.pack("<HI", VERSION_META, len(meta)))
        f.write(meta)
    f.write(struct.pack("<I", len(tensors)))
    for name, value in tensors.items():
        data = value.data if isinstance(value, Tensor) else np.asarray(value)
        encoded = name.encode("utf-8")
        f.write(struct.pack("<H", len(encoded)))
        f.write(encoded)
        f.write(struct.pack("<B", data.ndim))
        f.write(struct.pack("<%dI" % data.ndim, *data.shape))
        f.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def read_checkpoint(f: BinaryIO) -> Tuple[Dict[str, np.ndarray], Dict[str, str]]:
    """Read named float32 arrays and the metadata block from a binary stream."""
    magic = f.read(4)
    if magic != MAGIC:
        raise BadMagic("not a checkpoint: magic %r" % magic)
    (version,) = struct.unpack("<H", _read_exact(f, 2))
    metadata: Dict[str, str] = {}
    if version == VERSION_META:
        (length,) = struct.unpack("<I", _read_exact(f, 4))
        metadata = parse_kv(_read_exact(f, length).decode("utf-8"))
    elif version != VERSION_PLAIN:
        raise UnsupportedVersion("checkpoint version %d" % version)
    (count,) = struct.unpack("<I", _read_exact(f, 4))
    tensors: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (length,) = struct.unpack("<H", _read_exact(f, 2))
        name = _read_exact(f, length).decode("utf-8")
        (rank,) = struct.unpack("<B", _read_exact(f, 1))
        dims = struct.unpack("<%dI" % rank, _read_exact(f, 4 * rank))
        n = int(np.prod(dims)) if dims else 1
        values = np.frombuffer(_read_exact(f, 4 * n), dtype="<f4")
        tensors[name] = values.astype(np.float32).reshape(dims)
    return tensors, metadata


def save_checkpoint(
    path: Union[str, Path],
    tensors: Mapping[str, Union[Tensor, np.ndarray]],
    metadata: Optional[Mapping[str, object]] = None,
) -> None:
    """Write a checkpoint file."""
    with open(path, "wb") as f:
        write_checkpoint(f, tensors, metadata)
    logger.info("saved %d tensors to %s", len(tensors), path)


def load_checkpoint(
    path: Union[str, Path],
) -> Tuple[Dict[str, np.ndarray], Dict[str, str]]:
    """Read a checkpoint file."""
    with open(path, "rb") as f:
        tensors, metadata = read_checkpoint(f)
    logger.debug("loaded %d tensors from %s", len(tensors), path)
    return tensors, metadata
