"""
Binary formats for tensors and model checkpoints.

Tensor blob (little-endian)::

    b"LORT" | u32 version | u32 rank | rank x u64 extents | f32 payload

Checkpoint::

    b"LORE" | u32 version | u32 n_fields | n_fields x u32 config fields
    | u32 n_tensors | n_tensors x (u32 name_len | utf-8 name | tensor blob)
"""

import struct
from pathlib import Path
from typing import BinaryIO, Dict, List, Tuple, Union

import numpy as np

from src.core.errors import FormatError

TENSOR_MAGIC = b"LORT"
CHECKPOINT_MAGIC = b"LORE"
FORMAT_VERSION = 1

PathLike = Union[str, Path]


def _read_exact(fh: BinaryIO, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated file while reading {what}")
    return buf


def write_tensor_blob(fh: BinaryIO, array: np.ndarray) -> None:
    """Append one tensor blob to an open binary file."""
    arr = np.ascontiguousarray(array, dtype="<f4")
    fh.write(TENSOR_MAGIC)
    fh.write(struct.pack("<II", FORMAT_VERSION, arr.ndim))
    if arr.ndim:
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    fh.write(arr.tobytes(order="C"))


def read_tensor_blob(fh: BinaryIO) -> np.ndarray:
    """
    Read one tensor blob.

    Raises:
        FormatError: On a bad magic, unknown version or truncated payload.
    """
    magic = _read_exact(fh, 4, "tensor magic")
    if magic != TENSOR_MAGIC:
        raise FormatError(f"bad tensor magic {magic!r}")
    version, rank = struct.unpack("<II", _read_exact(fh, 8, "tensor header"))
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported tensor version {version}")
    shape = struct.unpack(f"<{rank}Q", _read_exact(fh, 8 * rank, "extents")) if rank else ()
    count = int(np.prod(shape, dtype=np.int64)) if rank else 1
    payload = _read_exact(fh, 4 * count, "tensor payload")
    arr = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(shape)
    if not np.isfinite(arr).all():
        raise FormatError("tensor payload contains non-finite values")
    return arr


def save_tensor(path: PathLike, array: np.ndarray) -> None:
    with open(path, "wb") as fh:
        write_tensor_blob(fh, array)


def load_tensor(path: PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_tensor_blob(fh)


def write_checkpoint(path: PathLike, fields: List[int], tensors: Dict[str, np.ndarray]) -> None:
    """
    Write a checkpoint.

    Args:
        path (PathLike): Output file.
        fields (List[int]): Model configuration as fixed-order u32 values.
        tensors (Dict[str, np.ndarray]): Named parameters, written in the
            dict's order.
    """
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(fields)))
        fh.write(struct.pack(f"<{len(fields)}I", *fields))
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            write_tensor_blob(fh, arr)


def read_checkpoint(path: PathLike) -> Tuple[List[int], Dict[str, np.ndarray]]:
    """
    Read a checkpoint written by :func:`write_checkpoint`.

    Returns:
        Tuple[List[int], Dict[str, np.ndarray]]: Config fields and tensors.

    Raises:
        FormatError: If the file is not a checkpoint or is truncated.
    """
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "checkpoint magic")
        if magic != CHECKPOINT_MAGIC:
            raise FormatError(f"bad checkpoint magic {magic!r}")
        version, n_fields = struct.unpack("<II", _read_exact(fh, 8, "checkpoint header"))
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        fields = list(struct.unpack(f"<{n_fields}I", _read_exact(fh, 4 * n_fields, "config")))
        (n_tensors,) = struct.unpack("<I", _read_exact(fh, 4, "tensor count"))
        tensors: Dict[str, np.ndarray] = {}
        for _ in range(n_tensors):
            (name_len,) = struct.unpack("<I", _read_exact(fh, 4, "name length"))
            try:
                name = _read_exact(fh, name_len, "name").decode("utf-8")
            except UnicodeDecodeError as exc:
                raise FormatError("tensor name is not utf-8") from exc
            tensors[name] = read_tensor_blob(fh)
        if fh.read(1):
            raise FormatError("trailing bytes after checkpoint")
    return fields, tensors
