"""Checkpoint directory format.

A checkpoint is a directory holding a ``manifest`` JSON file (format
version, config snapshot, vocabularies, best epoch, dev F1, parameter
names) plus one binary blob per parameter. Blob layout, all little
endian: u64 name byte count, name UTF-8, u64 rank, u64 extents, then
row-major float64 IEEE-754 data.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .config import TrainConfig
from .encoder import WordVocabulary
from .errors import CheckpointError
from .graph import EdgeTypeVocabulary

FORMAT_VERSION = 1


def write_param_blob(path: Path, name: str, data: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(encoded)))
        fh.write(encoded)
        fh.write(struct.pack("<Q", data.ndim))
        fh.write(struct.pack(f"<{data.ndim}Q", *data.shape))
        fh.write(np.ascontiguousarray(data, dtype="<f8").tobytes())


def read_param_blob(path: Path) -> tuple[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    try:
        (name_len,) = struct.unpack_from("<Q", blob, 0)
        offset = 8
        name = blob[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack_from("<Q", blob, offset)
        offset += 8
        extents = struct.unpack_from(f"<{rank}Q", blob, offset)
        offset += 8 * rank
        count = int(np.prod(extents)) if rank else 1
        data = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
        if offset + 8 * count != len(blob):
            raise CheckpointError(f"{path}: trailing bytes after parameter data")
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated parameter blob") from exc
    return name, data.reshape(extents).astype(np.float64)


def save_checkpoint(out_dir: str | Path, model, best_epoch: int, dev_f1: float) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    params = model.param_values()
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": model.config.to_jsonable(),
        "edge_vocab": model.edge_vocab.to_jsonable(),
        "word_vocab": model.word_vocab.to_jsonable(),
        "relation_vocab": list(model.relation_vocab),
        "best_epoch": best_epoch,
        "dev_f1": dev_f1,
        "parameters": sorted(params),
    }
    with open(out / "manifest", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for name, data in sorted(params.items()):
        write_param_blob(out / f"{name}.bin", name, data)
    return out


def load_checkpoint(path: str | Path):
    """Rebuild the model exactly as checkpointed. Returns (model, manifest)."""
    from .model import RelationModel  # deferred: model depends on nothing here

    root = Path(path)
    manifest_path = root / "manifest"
    if not manifest_path.exists():
        raise CheckpointError(f"no manifest in {root}")
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format {manifest.get('format_version')!r}")
    config = TrainConfig.from_jsonable(manifest["config"])
    word_vocab = WordVocabulary.from_jsonable(manifest["word_vocab"])
    edge_vocab = EdgeTypeVocabulary.from_jsonable(manifest["edge_vocab"])
    relation_vocab = tuple(manifest["relation_vocab"])
    model = RelationModel(config, word_vocab, edge_vocab, relation_vocab,
                          np.random.default_rng(0))
    values: dict[str, np.ndarray] = {}
    for name in manifest["parameters"]:
        blob_name, data = read_param_blob(root / f"{name}.bin")
        if blob_name != name:
            raise CheckpointError(f"blob for {name!r} carries name {blob_name!r}")
        values[name] = data
    extra = set(values) - set(model.params())
    if extra:
        raise CheckpointError(f"checkpoint has unknown parameters: {sorted(extra)}")
    model.set_param_values(values)
    return model, manifest
