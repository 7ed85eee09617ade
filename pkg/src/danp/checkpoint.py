"""Binary checkpoint format.

Layout: 8-byte magic "DANPCKPT", u32 little-endian format version, u32
little-endian metadata length, canonical JSON metadata (sorted keys, compact
separators), then the payload: every parameter as little-endian float32 in
C order, concatenated in lexicographic key order.  Canonical metadata plus a
fixed payload order make save -> load -> save byte-identical.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .model import ModelConfig, ParamStore, init_params
from .numerics import param

MAGIC = b"DANPCKPT"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<II")


class CheckpointError(ValueError):
    """The file is not a loadable checkpoint of this format version."""


def checkpoint_save(path: str, params: ParamStore, config: ModelConfig,
                    run_config: dict | None = None, seed: int = 0, step: int = 0) -> None:
    keys = sorted(params.keys())
    index = []
    offset = 0
    chunks = []
    for key in keys:
        arr = np.ascontiguousarray(params[key].data, dtype="<f4")
        index.append({"key": key, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    meta = {
        "param_index": index,
        "run_config": run_config if run_config is not None else {"model": config.to_dict()},
        "rng": {"seed": int(seed)},
        "step": int(step),
    }
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_HEADER.pack(FORMAT_VERSION, len(meta_bytes)))
        fh.write(meta_bytes)
        for chunk in chunks:
            fh.write(chunk)


def checkpoint_load(path: str) -> tuple[ParamStore, ModelConfig, dict]:
    """Reconstruct (params, model config, metadata); never partially loads."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a DANP checkpoint (bad magic)")
    if len(blob) < 8 + _HEADER.size:
        raise CheckpointError(f"{path}: truncated header")
    version, meta_len = _HEADER.unpack_from(blob, 8)
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {version} unsupported (this reader is v{FORMAT_VERSION})"
        )
    meta_start = 8 + _HEADER.size
    if meta_start + meta_len > len(blob):
        raise CheckpointError(f"{path}: metadata overruns file")
    try:
        meta = json.loads(blob[meta_start:meta_start + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise CheckpointError(f"{path}: metadata is not valid JSON: {err}") from None

    config = ModelConfig.from_dict(meta["run_config"]["model"])
    payload = blob[meta_start + meta_len:]
    index = meta["param_index"]
    if [e["key"] for e in index] != sorted(e["key"] for e in index):
        raise CheckpointError(f"{path}: parameter index is not sorted by key")

    tensors = {}
    for entry in index:
        key, shape, offset = entry["key"], tuple(entry["shape"]), entry["offset"]
        size = int(np.prod(shape, dtype=np.int64)) * 4 if shape else 4
        if offset + size > len(payload):
            raise CheckpointError(
                f"{path}: payload truncated; {key!r} needs bytes "
                f"[{offset}, {offset + size}) of {len(payload)}"
            )
        arr = np.frombuffer(payload, dtype="<f4", count=size // 4, offset=offset)
        tensors[key] = param(arr.reshape(shape).astype(np.float32))

    expected = init_params(config, seed=0)
    if set(tensors) != set(expected.keys()):
        missing = sorted(set(expected.keys()) - set(tensors))
        extra = sorted(set(tensors) - set(expected.keys()))
        raise CheckpointError(
            f"{path}: parameter keys do not match the stored config "
            f"(missing {missing[:3]}, unexpected {extra[:3]})"
        )
    for key, t in tensors.items():
        if t.data.shape != expected[key].data.shape:
            raise CheckpointError(
                f"{path}: {key!r} has shape {t.data.shape}, config implies "
                f"{expected[key].data.shape}"
            )
    return ParamStore(tensors), config, meta
