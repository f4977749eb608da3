"""
Checkpoint container
====================

Byte layout (all integers little-endian):

    offset 0   4 bytes   magic b'GCTC'
    offset 4   uint32    format version (1)
    offset 8   uint32    header length H in bytes
    offset 12  H bytes   UTF-8 JSON header: {"config": NetConfig fields,
                         "dtype": "<f8" | "<f4",
                         "params": [[name, shape], ...]}
    then       one raw block per parameter, in header order, C order,
               little-endian float64 (or float32)

The header is written with sorted keys so identical parameters give
identical files.
"""

import json
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from src.app_logging import get_logger
from src.errors import DataError
from src.net import NetConfig, NetParams, param_shapes

logger = get_logger(__name__)

MAGIC = b'GCTC'
VERSION = 1
_PREFIX = struct.Struct('<4sII')


def save_checkpoint(params: NetParams, path) -> Path:
    """Write ``params`` to ``path``."""
    params.check_shapes()
    dtype = '<f4' if params.config.dtype == 'float32' else '<f8'
    header = {
        'config': params.config.to_dict(),
        'dtype': dtype,
        'params': [[name, list(arr.shape)] for name, arr in params.items()],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode('utf-8')

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'wb') as f:
        f.write(_PREFIX.pack(MAGIC, VERSION, len(header_bytes)))
        f.write(header_bytes)
        for _, arr in params.items():
            f.write(np.ascontiguousarray(arr, dtype=dtype).tobytes(order='C'))
    logger.debug(f"Checkpoint written: {path}")
    return path


def read_header(path) -> dict:
    """Header of a checkpoint without loading the parameter blocks."""
    header, _ = _read(path, with_blocks=False)
    return header


def load_checkpoint(path) -> NetParams:
    """
    Read a checkpoint written by ``save_checkpoint``.

    Raises:
        DataError: missing file, bad magic/version, or truncated blocks
    """
    header, arrays = _read(path, with_blocks=True)
    try:
        cfg = NetConfig.from_dict(header['config'])
    except TypeError as e:
        raise DataError(f"Checkpoint {path}: invalid network header: {e}")
    params = NetParams(cfg, arrays)
    params.check_shapes()
    return params


def _read(path, with_blocks: bool):
    path = Path(path)
    if not path.exists():
        raise DataError(f"Checkpoint not found: {path}")
    data = path.read_bytes()
    if len(data) < _PREFIX.size:
        raise DataError(f"Checkpoint {path} is truncated")
    magic, version, header_len = _PREFIX.unpack_from(data, 0)
    if magic != MAGIC:
        raise DataError(f"{path} is not a checkpoint (bad magic {magic!r})")
    if version != VERSION:
        raise DataError(f"Checkpoint {path} has unsupported version {version}")

    start = _PREFIX.size
    try:
        header = json.loads(data[start:start + header_len].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataError(f"Checkpoint {path}: unreadable header: {e}")
    if not with_blocks:
        return header, None

    dtype = np.dtype(header['dtype'])
    offset = start + header_len
    arrays = OrderedDict()
    for name, shape in header['params']:
        count = int(np.prod(shape))
        nbytes = count * dtype.itemsize
        if offset + nbytes > len(data):
            raise DataError(f"Checkpoint {path} is truncated in block '{name}'")
        block = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
        arrays[name] = block.reshape(shape).astype(dtype.newbyteorder('='))
        offset += nbytes
    if offset != len(data):
        raise DataError(f"Checkpoint {path} has {len(data) - offset} trailing bytes")
    return header, arrays


def describe_header(header: dict) -> int:
    """Total parameter count declared by a checkpoint header."""
    cfg = NetConfig.from_dict(header['config'])
    declared = [tuple(shape) for _, shape in header['params']]
    if declared != list(param_shapes(cfg).values()):
        raise DataError('Checkpoint blocks do not match its network configuration')
    return cfg.parameter_count()
