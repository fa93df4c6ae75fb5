"""Binary model checkpoints.

Layout: magic "CSEQ", u32 version, then repeated records until EOF:
u32 name length, UTF-8 name, u32 rank, u32 dims[rank], little-endian
float64 payload. A text sidecar <path>.cfg stores the model config as
key=value lines.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .errors import ParseError
from .model import LasModel, ModelConfig

MAGIC = b"CSEQ"
VERSION = 1

_CFG_TUPLES = {"feature_names": str, "cardinalities": int}


def _cfg_to_lines(cfg: ModelConfig) -> str:
    lines = []
    for key, value in sorted(vars(cfg).items()):
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"


def _cfg_from_lines(text: str) -> ModelConfig:
    kv = {}
    for n, line in enumerate(text.split("\n"), start=1):
        if not line.strip():
            continue
        if "=" not in line:
            raise ParseError(f"bad config line {line!r}", line=n)
        key, value = line.split("=", 1)
        kv[key.strip()] = value.strip()
    ints = {
        "vocab_size", "d_feat", "enc_layers", "enc_cells", "enc_proj",
        "reduction", "att_heads", "att_dim", "dec_layers", "dec_cells",
        "emb_dim", "enc_inj_dim", "dec_inj_dim",
    }
    kwargs = {}
    for key, value in kv.items():
        if key in ints:
            kwargs[key] = int(value)
        elif key == "feature_names":
            kwargs[key] = tuple(value.split(",")) if value else ()
        elif key == "cardinalities":
            kwargs[key] = tuple(int(v) for v in value.split(",")) if value else ()
        else:
            kwargs[key] = value
    return ModelConfig(**kwargs)


def save(path, model: LasModel) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        for name, arr in model.param_arrays().items():
            data = np.ascontiguousarray(arr, dtype="<f8")
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", data.ndim))
            f.write(struct.pack(f"<{data.ndim}I", *data.shape))
            f.write(data.tobytes())
    with open(str(path) + ".cfg", "w", encoding="utf-8") as f:
        f.write(_cfg_to_lines(model.cfg))


def load(path) -> LasModel:
    cfg_path = str(path) + ".cfg"
    if not os.path.exists(cfg_path):
        raise ParseError(f"missing config sidecar {cfg_path}")
    with open(cfg_path, encoding="utf-8") as f:
        cfg = _cfg_from_lines(f.read())
    arrays = {}
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise ParseError(f"{path}: bad checkpoint magic")
        (version,) = struct.unpack("<I", f.read(4))
        if version != VERSION:
            raise ParseError(f"{path}: unsupported checkpoint version {version}")
        while True:
            head = f.read(4)
            if not head:
                break
            (nlen,) = struct.unpack("<I", head)
            name = f.read(nlen).decode("utf-8")
            (rank,) = struct.unpack("<I", f.read(4))
            dims = struct.unpack(f"<{rank}I", f.read(4 * rank))
            count = int(np.prod(dims)) if rank else 1
            buf = f.read(8 * count)
            if len(buf) != 8 * count:
                raise ParseError(f"{path}: truncated payload for tensor {name}")
            arrays[name] = np.frombuffer(buf, dtype="<f8").reshape(dims).copy()
    return LasModel.from_arrays(cfg, arrays)
