"""
Portable checkpoint files.

Layout (all integers little-endian):

    bytes 0..7    magic b"PALPLAB\\x00"
    bytes 8..11   uint32 format version
    bytes 12..19  uint64 header length H
    next H bytes  UTF-8 JSON header, keys sorted:
                  {"format_version", "kind", "meta", "tensors": [{"name", "shape"}, ...]}
    remainder     float64 little-endian payload, tensors in header order, row-major

A "base" checkpoint holds the denoiser weights and the base embedding rows. An
"adapter" checkpoint holds LoRA factors and placeholder rows and is attached to a base.
"""
import hashlib
import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

from palp_lab.denoiser.embedding import BASE_ROWS, PLACEHOLDER_ROWS, EmbeddingTable
from palp_lab.denoiser.lora import LoraAdapter
from palp_lab.denoiser.network import ModelState
from palp_lab.denoiser.params import DenoiserParams

MAGIC = b"PALPLAB\x00"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


class CheckpointError(ValueError):
    pass


def encode_checkpoint(kind: str, meta: dict[str, Any], arrays: dict[str, np.ndarray]) -> bytes:
    header = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "meta": meta,
        "tensors": [{"name": name, "shape": list(array.shape)} for name, array in arrays.items()],
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(array, dtype="<f8").tobytes() for array in arrays.values())
    return _PREFIX.pack(MAGIC, FORMAT_VERSION, len(header_bytes)) + header_bytes + payload


def decode_checkpoint(blob: bytes) -> tuple[str, dict[str, Any], dict[str, np.ndarray]]:
    if len(blob) < _PREFIX.size:
        raise CheckpointError("Checkpoint is truncated")
    magic, version, header_len = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError("Not a checkpoint file (bad magic)")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"Unsupported checkpoint format version {version}")
    start = _PREFIX.size
    try:
        header = json.loads(blob[start:start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"Corrupt checkpoint header: {e}") from e

    offset = start + header_len
    arrays = {}
    for spec in header["tensors"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(blob):
            raise CheckpointError(f"Payload ends before tensor {spec['name']}")
        arrays[spec["name"]] = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).reshape(shape).astype(np.float64)
        offset = end
    if offset != len(blob):
        raise CheckpointError("Trailing bytes after checkpoint payload")
    return header["kind"], header["meta"], arrays


def encode_base(state: ModelState, extra: dict[str, Any] | None = None) -> bytes:
    params = state.params
    meta = {
        "extra": extra or {},
        "image_shape": list(params.image_shape),
        "time_dim": params.time_dim,
        "cond_dim": params.cond_dim,
        "n_layers": params.n_layers,
        "vocab": list(state.table.tokens),
    }
    arrays = {**params.named_arrays(), BASE_ROWS: state.table.rows}
    return encode_checkpoint("base", meta, arrays)


def decode_base(blob: bytes) -> ModelState:
    kind, meta, arrays = decode_checkpoint(blob)
    if kind != "base":
        raise CheckpointError(f"Expected a base checkpoint, got {kind!r}")
    n_layers = meta["n_layers"]
    params = DenoiserParams(
        weights=tuple(arrays[f"layers.{i}.weight"] for i in range(n_layers)),
        biases=tuple(arrays[f"layers.{i}.bias"] for i in range(n_layers)),
        image_shape=tuple(meta["image_shape"]),
        time_dim=meta["time_dim"],
        cond_dim=meta["cond_dim"],
    )
    table = EmbeddingTable(tokens=tuple(meta["vocab"]), rows=arrays[BASE_ROWS])
    return ModelState(params, table)


def encode_adapter(state: ModelState) -> bytes:
    if state.lora is None:
        raise CheckpointError("Model has no adapter to save")
    table, lora = state.table, state.lora
    meta = {
        "placeholders": list(table.placeholders),
        "class_tokens": {token: table.class_tokens[token] for token in table.placeholders},
        "targets": list(lora.targets),
        "rank": lora.rank,
        "scale": lora.scale,
        "base_vocab": list(table.tokens),
    }
    arrays = {**lora.named_arrays()}
    if table.placeholders:
        arrays[PLACEHOLDER_ROWS] = table.placeholder_rows
    return encode_checkpoint("adapter", meta, arrays)


def attach_adapter(base: ModelState, blob: bytes) -> ModelState:
    kind, meta, arrays = decode_checkpoint(blob)
    if kind != "adapter":
        raise CheckpointError(f"Expected an adapter checkpoint, got {kind!r}")
    if tuple(meta["base_vocab"]) != base.table.tokens:
        raise CheckpointError("Adapter was trained against a different vocabulary")
    placeholders = tuple(meta["placeholders"])
    table = EmbeddingTable(
        tokens=base.table.tokens,
        rows=base.table.rows,
        placeholders=placeholders,
        placeholder_rows=arrays.get(PLACEHOLDER_ROWS, np.zeros((0, base.table.cond_dim))),
        class_tokens=meta["class_tokens"],
    )
    targets = tuple(meta["targets"])
    lora = LoraAdapter(
        targets=targets,
        A=tuple(arrays[f"lora.{layer}.A"] for layer in targets),
        B=tuple(arrays[f"lora.{layer}.B"] for layer in targets),
        rank=meta["rank"],
        scale=meta["scale"],
    )
    return ModelState(base.params, table, lora)


def save_base(state: ModelState, path: str | Path, extra: dict[str, Any] | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_base(state, extra))
    return path


def load_base(path: str | Path) -> ModelState:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    return decode_base(path.read_bytes())


def save_adapter(state: ModelState, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_adapter(state))
    return path


def load_adapter(base: ModelState, path: str | Path) -> ModelState:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    return attach_adapter(base, path.read_bytes())


def file_hash(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def read_meta(path: str | Path) -> tuple[str, dict[str, Any]]:
    """Kind and metadata of a checkpoint file."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    kind, meta, _ = decode_checkpoint(path.read_bytes())
    return kind, meta
