"""Versioned binary model checkpoints.

Layout: ``b"CAMOMDL1"``, one model-kind byte, a little-endian uint32 array
count, then per array a uint8 rank, uint32 dimensions and float64 values.
"""

from __future__ import annotations

import struct

import numpy as np

from camo.errors import CamoError
from camo.models.knn import KnnModel
from camo.models.mlp import MlpModel
from camo.models.tree import DecisionTreeModel, RandomForestModel

MAGIC = b"CAMOMDL1"
KINDS = {1: KnnModel, 2: DecisionTreeModel, 3: RandomForestModel, 4: MlpModel}
KIND_BYTES = {cls: b for b, cls in KINDS.items()}


class CheckpointError(CamoError):
    pass


def save_model(model) -> bytes:
    arrays = model.get_state()
    out = [MAGIC, bytes([KIND_BYTES[type(model)]]), struct.pack("<I", len(arrays))]
    for a in arrays:
        a = np.ascontiguousarray(a, dtype="<f8")
        out.append(struct.pack(f"<B{a.ndim}I", a.ndim, *a.shape))
        out.append(a.tobytes())
    return b"".join(out)


def load_model(data: bytes):
    if data[:8] != MAGIC:
        raise CheckpointError("not a camo model checkpoint")
    try:
        cls = KINDS[data[8]]
        (count,) = struct.unpack_from("<I", data, 9)
        pos = 13
        arrays = []
        for _ in range(count):
            ndim = data[pos]
            shape = struct.unpack_from(f"<{ndim}I", data, pos + 1)
            pos += 1 + 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            if pos + 8 * size > len(data):
                raise CheckpointError("checkpoint truncated")
            arrays.append(np.frombuffer(data, "<f8", size, pos).reshape(shape).copy())
            pos += 8 * size
    except (KeyError, IndexError, struct.error) as exc:
        raise CheckpointError(f"corrupt checkpoint: {exc}") from None
    return cls.from_state(arrays)
