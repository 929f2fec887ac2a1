"""Named-tensor checkpoint files.

Layout (all integers little-endian)::

    b"S2SCKPT\\n"            8-byte magic
    u32 version              currently 1
    u32 header_len
    header                   UTF-8 JSON: {"config", "source_vocab", "target_vocab", "meta",
                             "tensors": [{"name", "shape", "offset"}]}
    payload                  float64 little-endian values, tensors back to back,
                             ``offset`` counted in values from the payload start
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from ..corpus import RESERVED, Vocab
from ..errors import DataError
from .autodiff import DTYPE, ModelParams
from .seq2seq import Seq2SeqConfig

MAGIC = b"S2SCKPT\n"
VERSION = 1


def save_checkpoint(path: str | Path, params: ModelParams, cfg: Seq2SeqConfig,
                    source_vocab: Vocab, target_vocab: Vocab, meta: dict | None = None) -> None:
    entries, payload, offset = [], [], 0
    for name, t in params.items():
        arr = t.detach().cpu().numpy().astype("<f8").ravel()
        entries.append({"name": name, "shape": list(t.shape), "offset": offset})
        payload.append(arr.tobytes())
        offset += arr.size
    header = json.dumps({
        "config": cfg.to_dict(),
        "source_vocab": source_vocab.itos,
        "target_vocab": target_vocab.itos,
        "meta": meta or {},
        "tensors": entries,
    }, sort_keys=True).encode("utf-8")
    Path(path).write_bytes(MAGIC + struct.pack("<II", VERSION, len(header)) + header
                           + b"".join(payload))


def load_checkpoint(path: str | Path) -> tuple[ModelParams, Seq2SeqConfig, Vocab, Vocab, dict]:
    data = Path(path).read_bytes()
    if data[:len(MAGIC)] != MAGIC:
        raise DataError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack_from("<II", data, len(MAGIC))
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    start = len(MAGIC) + 8
    header = json.loads(data[start:start + hlen].decode("utf-8"))
    values = np.frombuffer(data[start + hlen:], dtype="<f8")
    params: ModelParams = {}
    for entry in header["tensors"]:
        n = int(np.prod(entry["shape"], dtype=np.int64))
        chunk = values[entry["offset"]:entry["offset"] + n]
        if chunk.size != n:
            raise DataError(f"{path}: truncated payload for {entry['name']}")
        params[entry["name"]] = torch.tensor(chunk.reshape(entry["shape"]), dtype=DTYPE) \
            .requires_grad_(True)
    src, tgt = Vocab(), Vocab()
    for vocab, tokens in ((src, header["source_vocab"]), (tgt, header["target_vocab"])):
        if tuple(tokens[:len(RESERVED)]) != RESERVED:
            raise DataError(f"{path}: vocabulary does not start with the reserved tokens")
        for tok in tokens[len(RESERVED):]:
            vocab.add(tok)
    return params, Seq2SeqConfig(**header["config"]), src, tgt, header["meta"]
