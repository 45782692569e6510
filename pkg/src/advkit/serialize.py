"""Binary model file format.

Layout (all integers little-endian):

    bytes 0..3    magic "ADVM"
    bytes 4..7    format version (u32, currently 1)
    bytes 8..11   descriptor length (u32)
    ...           descriptor: UTF-8 JSON with the architecture and training
                  metadata
    ...           parameter arrays in declaration order (weight then bias per
                  layer), float64 little-endian, C order
    last 8 bytes  checksum: sum of every preceding byte, modulo 2**64 (u64)
"""

import json
import struct

import numpy as np

from .errors import FormatError
from .layers import Architecture

MAGIC = b"ADVM"
VERSION = 1


def _checksum(data: bytes) -> int:
    return int(np.frombuffer(data, dtype=np.uint8).sum(dtype=np.uint64))


def model_to_bytes(model) -> bytes:
    model._require_built()
    desc = {
        "architecture": json.loads(model.arch_.to_text()),
        "training_meta": model.meta_.to_dict() if model.meta_ else None,
    }
    desc_bytes = json.dumps(desc, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(desc_bytes)), desc_bytes]
    for layer in model.layers_:
        for p in layer.params:
            if not np.isfinite(p).all():
                raise FormatError("refusing to serialize non-finite parameters")
            parts.append(np.ascontiguousarray(p, dtype="<f8").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<Q", _checksum(body))


def model_from_bytes(blob: bytes):
    from .model import NeuralNetClassifier, TrainingMeta

    if len(blob) < 16:
        raise FormatError("file too short for a model header", offset=len(blob))
    if blob[:4] != MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}", offset=0)
    version, desc_len = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise FormatError(f"unsupported format version {version}", offset=4)
    if len(blob) < 12 + desc_len + 8:
        raise FormatError("truncated descriptor", offset=12)
    stored, = struct.unpack_from("<Q", blob, len(blob) - 8)
    actual = _checksum(blob[:-8])
    if stored != actual:
        raise FormatError(f"checksum mismatch: stored {stored}, computed {actual}",
                          offset=len(blob) - 8)
    try:
        desc = json.loads(blob[12:12 + desc_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable descriptor: {exc}", offset=12) from exc

    arch = Architecture.from_text(json.dumps(desc["architecture"]))
    model = NeuralNetClassifier(
        architecture=arch,
        input_shape=arch.input_shape,
        feature_map_scale=arch.feature_map_scale)
    model.initialize()

    offset = 12 + desc_len
    end = len(blob) - 8
    for layer in model.layers_:
        loaded = []
        for p in layer.params:
            nbytes = p.size * 8
            if offset + nbytes > end:
                raise FormatError("truncated parameter block", offset=offset)
            arr = np.frombuffer(blob, dtype="<f8", count=p.size, offset=offset)
            arr = arr.astype(np.float64).reshape(p.shape)
            if not np.isfinite(arr).all():
                raise FormatError("non-finite parameter values", offset=offset)
            loaded.append(arr)
            offset += nbytes
        if loaded:
            layer.weight, layer.bias = loaded
    if offset != end:
        raise FormatError(f"{end - offset} unexpected trailing parameter bytes",
                          offset=offset)

    meta_doc = desc.get("training_meta")
    if meta_doc is not None:
        model.meta_ = TrainingMeta.from_dict(meta_doc)
        # mirror the hyperparameters the model was trained with
        model.epochs = model.meta_.epochs
        model.seed = model.meta_.seed
        model.learning_rate = model.meta_.learning_rate
        model.momentum = model.meta_.momentum
        model.batch_size = model.meta_.batch_size
    model._freeze()
    return model
