"""Single-file container for tensor trains and TT-matrices.

Layout:
    4 bytes   magic ``TTC1``
    8 bytes   header length, unsigned little-endian
    n bytes   UTF-8 JSON header {version, kind, l, n_list, m_list, ranks}
    payload   every core in order, little-endian float64, first-index-fastest
"""
import json
import logging
import struct
from pathlib import Path
from typing import Union

import numpy as np

from src.tensor.tensor_train import TensorTrain, TTMatrix
from src.utils.errors import ContainerFormatError

logger = logging.getLogger(__name__)

MAGIC = b"TTC1"
FORMAT_VERSION = 1


def _core_shapes(header: dict):
    full_ranks = [header["l"], *header["ranks"], 1]
    shapes = []
    for k, n in enumerate(header["n_list"]):
        if header["kind"] == "ttm":
            shapes.append((full_ranks[k], n, header["m_list"][k], full_ranks[k + 1]))
        else:
            shapes.append((full_ranks[k], n, full_ranks[k + 1]))
    return shapes


def save_tt(path: Union[str, Path], tt: Union[TensorTrain, TTMatrix]) -> Path:
    """Write ``tt`` to ``path`` and return the path"""
    path = Path(path)
    is_matrix = isinstance(tt, TTMatrix)
    header = {
        "version": FORMAT_VERSION,
        "kind": "ttm" if is_matrix else "tt",
        "l": tt.batch,
        "n_list": list(tt.row_dims if is_matrix else tt.dims),
        "m_list": list(tt.col_dims) if is_matrix else None,
        "ranks": list(tt.ranks),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")

    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as handle:
        handle.write(MAGIC)
        handle.write(struct.pack("<Q", len(header_bytes)))
        handle.write(header_bytes)
        for core in tt.cores:
            handle.write(np.asarray(core, dtype="<f8").ravel(order="F").tobytes())

    logger.debug("Saved %r to %s", tt, path)
    return path


def load_tt(path: Union[str, Path]) -> Union[TensorTrain, TTMatrix]:
    """Read a container written by ``save_tt``

    Raises:
        ContainerFormatError: Bad magic, unsupported version, malformed
            header or a payload whose length does not match the header
    """
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise ContainerFormatError(f"{path} is not a tensor-train container (bad magic)")
    if len(raw) < 12:
        raise ContainerFormatError(f"{path} is truncated")

    (header_len,) = struct.unpack("<Q", raw[4:12])
    try:
        header = json.loads(raw[12:12 + header_len].decode("utf-8"))
        version = header["version"]
        kind = header["kind"]
        shapes = _core_shapes(header)
    except (ValueError, KeyError, TypeError, IndexError) as e:
        raise ContainerFormatError(f"Malformed container header in {path}: {e}") from e

    if version != FORMAT_VERSION:
        raise ContainerFormatError(f"Unsupported container version {version}")
    if kind not in ("tt", "ttm"):
        raise ContainerFormatError(f"Unknown container kind {kind!r}")

    body = raw[12 + header_len:]
    if len(body) % 8:
        raise ContainerFormatError(
            f"Container payload of {len(body)} bytes is not a whole number of float64 values"
        )
    payload = np.frombuffer(body, dtype="<f8")
    expected = sum(int(np.prod(shape)) for shape in shapes)
    if payload.size != expected:
        raise ContainerFormatError(
            f"Container payload holds {payload.size} floats, header describes {expected}"
        )

    cores = []
    offset = 0
    for shape in shapes:
        size = int(np.prod(shape))
        cores.append(payload[offset:offset + size].reshape(shape, order="F").astype(float))
        offset += size

    tt = TTMatrix(tuple(cores)) if kind == "ttm" else TensorTrain(tuple(cores))
    logger.debug("Loaded %r from %s", tt, path)
    return tt
