"""Weight container.

Layout (all integers little-endian):

    8 bytes   magic  b"TWBWGT01"
    8 bytes   uint64 header length N
    N bytes   UTF-8 JSON header: {"config": {...}, "tensors": [{"name", "shape"}, ...]}
    ...       each tensor in header order as float64 '<f8', C order

The file size must equal exactly what the header implies.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .config import ConfigError, EncoderConfig, parameter_shapes
from .model import EncoderModel

MAGIC = b"TWBWGT01"


class WeightFormatError(ValueError):
    pass


class ConfigMismatchError(WeightFormatError):
    pass


def save_weights(model: EncoderModel, path) -> None:
    header = {
        "config": model.cfg.to_dict(),
        "tensors": [{"name": k, "shape": list(v.shape)} for k, v in model.params.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for v in model.params.values():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        return _read_header(fh, Path(path))


def _read_header(fh, path: Path) -> dict:
    if fh.read(len(MAGIC)) != MAGIC:
        raise WeightFormatError(f"{path}: not a weight container")
    raw = fh.read(8)
    if len(raw) != 8:
        raise WeightFormatError(f"{path}: truncated header")
    (n,) = struct.unpack("<Q", raw)
    blob = fh.read(n)
    if len(blob) != n:
        raise WeightFormatError(f"{path}: truncated header")
    try:
        return json.loads(blob.decode("utf-8"))
    except ValueError as exc:
        raise WeightFormatError(f"{path}: bad header JSON ({exc})") from exc


def load_weights(path, expected: EncoderConfig | None = None) -> EncoderModel:
    """Read a container; raise ConfigMismatchError if ``expected`` differs from the stored config.

    Nothing is returned unless every tensor was read completely.
    """
    path = Path(path)
    size = path.stat().st_size
    with open(path, "rb") as fh:
        header = _read_header(fh, path)
        try:
            cfg = EncoderConfig.from_dict(header["config"])
            entries = [(t["name"], tuple(t["shape"])) for t in header["tensors"]]
        except (KeyError, TypeError, ConfigError) as exc:
            raise WeightFormatError(f"{path}: bad header ({exc})") from exc
        if expected is not None and cfg != expected:
            diffs = {k: (v, getattr(expected, k)) for k, v in cfg.to_dict().items()
                     if getattr(expected, k) != v}
            raise ConfigMismatchError(f"{path}: stored config differs from expected: {diffs}")
        if dict(entries) != parameter_shapes(cfg) or len(entries) != len(parameter_shapes(cfg)):
            raise WeightFormatError(f"{path}: tensor list does not match the stored config")
        n_values = sum(int(np.prod(s)) for _, s in entries)
        if size != fh.tell() + 8 * n_values:
            raise WeightFormatError(f"{path}: expected {fh.tell() + 8 * n_values} bytes, "
                                    f"found {size} (truncated or padded file)")
        params = {}
        for name, shape in entries:
            count = int(np.prod(shape))
            data = fh.read(8 * count)
            if len(data) != 8 * count:
                raise WeightFormatError(f"{path}: truncated tensor {name}")
            params[name] = np.frombuffer(data, dtype="<f8").astype(np.float64).reshape(shape)
    return EncoderModel(cfg, params)
