"""Checkpoint container.

Layout: magic ``ORSM``, ``u32`` version, ``u64`` header length, a UTF-8 JSON
header listing every tensor (name, dtype, shape, offset, nbytes) plus run
metadata, then the little-endian tensor payload.
"""

import json
import logging
import os
import struct
import tempfile
from pathlib import Path
from typing import Any

import numpy as np

from orthosupernet.exceptions import FormatError


logger = logging.getLogger(__name__)

MAGIC = b"ORSM"
VERSION = 1
PREFIX = struct.Struct("<4sIQ")


def save_checkpoint(path: Path, tensors: dict[str, np.ndarray], metadata: dict[str, Any]) -> None:
    """Write ``tensors`` and ``metadata`` atomically (temporary file, then
    rename)."""
    path = Path(path)
    entries = []
    payload = []
    offset = 0
    for name, array in tensors.items():
        data = np.ascontiguousarray(array, dtype=array.dtype.newbyteorder("<"))
        raw = data.tobytes()
        entries.append(
            {
                "name": name,
                "dtype": data.dtype.str,
                "shape": list(data.shape),
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        payload.append(raw)
        offset += len(raw)
    header = json.dumps({"tensors": entries, "metadata": metadata}, sort_keys=True).encode()

    path.parent.mkdir(parents=True, exist_ok=True)
    descriptor, temporary = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(descriptor, "wb") as handle:
        handle.write(PREFIX.pack(MAGIC, VERSION, len(header)))
        handle.write(header)
        for raw in payload:
            handle.write(raw)
    os.replace(temporary, path)
    logger.debug("Wrote checkpoint %s (%d tensors, %d bytes)", path, len(entries), offset)


def load_checkpoint(path: Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    """Read a checkpoint written by :func:`save_checkpoint`.

    Returns
    -------
    tuple[dict[str, np.ndarray], dict[str, Any]]
        Tensors in file order and the run metadata

    Raises
    ------
    FormatError
        Missing file, wrong magic or version, or a damaged header or payload
    """
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as error:
        raise FormatError(str(path), error.strerror or "cannot open") from None
    if len(data) < PREFIX.size:
        raise FormatError(str(path), "file too short")
    magic, version, header_length = PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(str(path), f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(str(path), f"unsupported version {version}, expected {VERSION}")
    start = PREFIX.size + header_length
    try:
        header = json.loads(data[PREFIX.size : start])
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise FormatError(str(path), "damaged header") from None

    tensors = {}
    for entry in header["tensors"]:
        begin = start + entry["offset"]
        end = begin + entry["nbytes"]
        if end > len(data):
            raise FormatError(str(path), f"payload of {entry['name']} is truncated")
        dtype = np.dtype(entry["dtype"])
        array = np.frombuffer(data[begin:end], dtype=dtype).reshape(entry["shape"])
        tensors[entry["name"]] = array.astype(dtype.newbyteorder("="))
    return tensors, header["metadata"]
