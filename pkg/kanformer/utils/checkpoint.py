"""
Checkpoint directory layout:

    <dir>/manifest    YAML: format_version, resolved config, task, tensor index
    <dir>/params.bin  every parameter as little-endian f32, concatenated in index order

Each tensor index entry holds name, shape, dtype and byte offset into params.bin.
"""
import numpy as np

from dataclasses import asdict
from pathlib import Path
from typing import Optional, Tuple, Union

from omegaconf import DictConfig, OmegaConf

from kanformer.data.dataset import TaskInfo
from kanformer.errors import (
    CheckpointError,
    CheckpointManifestError,
    CheckpointSizeError,
    CheckpointVersionError,
)
from kanformer.models.encoder import Encoder, build_encoder
from kanformer.utils.utils import make_streams

FORMAT_VERSION = 1
BLOB_DTYPE = "<f4"
MANIFEST = "manifest"
BLOB = "params.bin"


def save_checkpoint(model: Encoder, path: Union[str, Path], cfg: DictConfig, task: TaskInfo) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    index, chunks, offset = [], [], 0
    for name, p in model.named_parameters():
        raw = np.ascontiguousarray(p.data, dtype=BLOB_DTYPE).tobytes()
        index.append({"name": name, "shape": list(p.shape), "dtype": "f32", "offset": offset})
        chunks.append(raw)
        offset += len(raw)

    manifest = OmegaConf.create(
        {
            "format_version": FORMAT_VERSION,
            "config": OmegaConf.to_container(cfg, resolve=True),
            "task": asdict(task),
            "total_bytes": offset,
            "tensors": index,
        }
    )
    OmegaConf.save(manifest, path / MANIFEST)
    (path / BLOB).write_bytes(b"".join(chunks))
    return path


def read_manifest(path: Union[str, Path]) -> DictConfig:
    path = Path(path)
    manifest_fp = path / MANIFEST
    if not manifest_fp.is_file():
        raise CheckpointManifestError(f"no manifest in checkpoint directory {path}")
    try:
        manifest = OmegaConf.load(manifest_fp)
    except Exception as e:
        raise CheckpointManifestError(f"unreadable manifest {manifest_fp}: {e}") from None
    for key in ("format_version", "config", "task", "total_bytes", "tensors"):
        if key not in manifest:
            raise CheckpointManifestError(f"manifest {manifest_fp} lacks '{key}'")
    if manifest.format_version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint format version {manifest.format_version}, this build reads version {FORMAT_VERSION}"
        )
    return manifest


def load_checkpoint(
    path: Union[str, Path], cfg: Optional[DictConfig] = None
) -> Tuple[Encoder, DictConfig, TaskInfo]:
    """Rebuild the model recorded in the manifest and fill it from the blob."""
    path = Path(path)
    if not path.is_dir():
        raise CheckpointError(f"checkpoint directory not found: {path}")
    manifest = read_manifest(path)
    blob_fp = path / BLOB
    if not blob_fp.is_file():
        raise CheckpointSizeError(f"checkpoint {path} has no {BLOB}")
    blob = blob_fp.read_bytes()
    if len(blob) != manifest.total_bytes:
        raise CheckpointSizeError(
            f"{blob_fp}: {len(blob)} bytes on disk, manifest records {manifest.total_bytes}"
        )

    model_cfg = cfg if cfg is not None else manifest.config
    task = TaskInfo(**OmegaConf.to_container(manifest.task))
    if task.image_shape is not None:
        task.image_shape = tuple(task.image_shape)
    model = build_encoder(model_cfg, task, make_streams(model_cfg.seed)["init"])

    params = dict(model.named_parameters())
    entries = {e.name: e for e in manifest.tensors}
    if set(entries) != set(params):
        missing = sorted(set(params) - set(entries))
        extra = sorted(set(entries) - set(params))
        raise CheckpointManifestError(f"tensor index does not match the model: missing {missing}, unexpected {extra}")

    itemsize = np.dtype(BLOB_DTYPE).itemsize
    for name, p in params.items():
        e = entries[name]
        shape = tuple(e.shape)
        if shape != p.shape:
            raise CheckpointManifestError(f"'{name}': manifest shape {shape}, model shape {p.shape}")
        count = int(np.prod(shape, dtype=np.int64))
        end = e.offset + count * itemsize
        if e.offset < 0 or end > len(blob):
            raise CheckpointManifestError(f"'{name}': bytes [{e.offset}, {end}) fall outside the blob")
        values = np.frombuffer(blob, dtype=BLOB_DTYPE, count=count, offset=e.offset)
        p.data[...] = values.reshape(shape)
    return model, model_cfg, task
