"""Portable binary checkpoints.

Byte layout (all integers little-endian):
    magic        8 bytes  b"DSUMCKPT"
    version      uint32   currently 1
    header_len   uint32   length of the UTF-8 JSON header that follows
    header       JSON: model config, vocab_size, n_domains, rng_seed,
                 vocab_hash and token list (when supplied), tensor count
    per tensor:  name_len uint16, name UTF-8, ndim uint8, dims uint32 each,
                 raw float32 little-endian row-major data

Checkpoints embed the training vocabulary so a saved model evaluates on any
corpus (unknown tokens map to UNK) without rebuilding ids.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .model import ModelConfig, ParameterStore

MAGIC = b"DSUMCKPT"
FORMAT_VERSION = 1


class CheckpointError(Exception):
    pass


def save_checkpoint(params: ParameterStore, path: str | Path, vocab=None) -> None:
    vocab_hash = None
    vocab_tokens = None
    vocab_settings = None
    if vocab is not None:
        vocab_hash = vocab.content_hash()
        vocab_tokens = [
            t for t, _ in sorted(vocab.token_to_id.items(), key=lambda kv: kv[1])
        ]
        vocab_settings = {
            "min_frequency": vocab.min_frequency,
            "max_size": vocab.max_size,
        }
    header = {
        "config": params.config.to_dict(),
        "vocab_size": params.vocab_size,
        "n_domains": params.n_domains,
        "rng_seed": params.rng_seed,
        "vocab_hash": vocab_hash,
        "vocab_tokens": vocab_tokens,
        "vocab_settings": vocab_settings,
        "n_tensors": len(params.tensors),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        for name, tensor in params.tensors.items():
            name_bytes = name.encode("utf-8")
            fh.write(struct.pack("<H", len(name_bytes)))
            fh.write(name_bytes)
            arr = np.ascontiguousarray(tensor.data, dtype="<f4")
            fh.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(arr.tobytes())


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return data


def load_checkpoint(
    path: str | Path, expected_config: ModelConfig | None = None
) -> ParameterStore:
    """Load a checkpoint; refuses foreign magic, versions or configs.

    When expected_config is given it must equal the stored config exactly
    (a tag-bearing checkpoint will not load into a tag-free config and vice
    versa).
    """
    with open(path, "rb") as fh:
        if _read_exact(fh, len(MAGIC), "magic") != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != FORMAT_VERSION:
            raise CheckpointError(
                f"{path}: format version {version} unsupported (expected {FORMAT_VERSION})"
            )
        (header_len,) = struct.unpack("<I", _read_exact(fh, 4, "header length"))
        header = json.loads(_read_exact(fh, header_len, "header").decode("utf-8"))
        config = ModelConfig.from_dict(header["config"])
        if expected_config is not None and config != expected_config:
            stored_tag = config.use_domain_tag
            wanted_tag = expected_config.use_domain_tag
            if stored_tag != wanted_tag:
                raise CheckpointError(
                    f"{path}: checkpoint was saved "
                    f"{'with' if stored_tag else 'without'} a domain tag table but the "
                    f"requested config is {'tag-free' if not wanted_tag else 'tag-bearing'}"
                )
            raise CheckpointError(f"{path}: stored model config differs from requested config")
        store = ParameterStore(
            config=config,
            vocab_size=header["vocab_size"],
            n_domains=header["n_domains"],
            rng_seed=header["rng_seed"],
        )
        for _ in range(header["n_tensors"]):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2, "tensor name length"))
            name = _read_exact(fh, name_len, "tensor name").decode("utf-8")
            (ndim,) = struct.unpack("<B", _read_exact(fh, 1, "tensor rank"))
            shape = tuple(
                struct.unpack("<I", _read_exact(fh, 4, "tensor dim"))[0] for _ in range(ndim)
            )
            count = int(np.prod(shape)) if shape else 1
            raw = _read_exact(fh, count * 4, f"tensor {name!r} data")
            arr = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)
            store.tensors[name] = Tensor(arr, requires_grad=True, name=name)
        if fh.read(1):
            raise CheckpointError(f"{path}: trailing bytes after last tensor")
    return store


def read_checkpoint_header(path: str | Path) -> dict:
    with open(path, "rb") as fh:
        if _read_exact(fh, len(MAGIC), "magic") != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
        _read_exact(fh, 4, "version")
        (header_len,) = struct.unpack("<I", _read_exact(fh, 4, "header length"))
        return json.loads(_read_exact(fh, header_len, "header").decode("utf-8"))


def load_checkpoint_vocabulary(path: str | Path):
    """Rebuild the embedded training vocabulary, or None when absent."""
    from ..corpus import Vocabulary

    header = read_checkpoint_header(path)
    tokens = header.get("vocab_tokens")
    if tokens is None:
        return None
    settings = header.get("vocab_settings") or {}
    return Vocabulary(
        token_to_id={t: i for i, t in enumerate(tokens)},
        min_frequency=settings.get("min_frequency", 1),
        max_size=settings.get("max_size", len(tokens)),
    )
