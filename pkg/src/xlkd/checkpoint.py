"""Self-describing binary checkpoints.

Layout: a magic line, a decimal header-length line, a canonical JSON header
(sorted keys, no whitespace), a newline, then all tensors as little-endian
float32 in manifest order. The manifest records (name, shape, float offset)
for every parameter, optimizer moment, and the loss history, so files are
readable without the code that wrote them. Saving a loaded checkpoint again
reproduces the bytes exactly.
"""

from __future__ import annotations

import dataclasses
import json
from collections.abc import Mapping
from pathlib import Path
from typing import Any

import numpy as np
import torch

from .model import (
    Encoder,
    EncoderConfig,
    HeadConfig,
    ModelBundle,
    ProjectionHead,
    all_named_parameters,
)

MAGIC = b"XLKD-CKPT-1\n"


class CheckpointError(ValueError):
    """Corrupt, truncated, or unreadable checkpoint."""


class CheckpointMismatchError(CheckpointError):
    """Checkpoint header disagrees with the expected configuration."""


def _config_dict(module: Encoder | ProjectionHead) -> dict[str, Any]:
    return dataclasses.asdict(module.config)


def _module_from_config(name: str, cfg: Mapping[str, Any]) -> Encoder | ProjectionHead:
    if name.endswith("encoder"):
        return Encoder(EncoderConfig(**cfg))
    return ProjectionHead(HeadConfig(**cfg))


def _tensor_entries(
    named: list[tuple[str, torch.Tensor]],
) -> tuple[list[list[Any]], list[np.ndarray]]:
    manifest: list[list[Any]] = []
    arrays: list[np.ndarray] = []
    offset = 0
    for name, t in named:
        arr = t.detach().to(torch.float32).contiguous().numpy().astype("<f4", copy=False)
        manifest.append([name, list(t.shape), offset])
        arrays.append(arr)
        offset += arr.size
    return manifest, arrays


def _write(path: str | Path, header: dict[str, Any], arrays: list[np.ndarray]) -> None:
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(f"{len(header_bytes)}\n".encode("ascii"))
        fh.write(header_bytes)
        fh.write(b"\n")
        for arr in arrays:
            fh.write(arr.tobytes())


def read_header(path: str | Path) -> dict[str, Any]:
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise CheckpointError(f"{path}: bad magic; not a checkpoint of this format")
        length_line = fh.readline()
        try:
            header_len = int(length_line)
        except ValueError as exc:
            raise CheckpointError(f"{path}: bad header length line") from exc
        raw = fh.read(header_len)
        if len(raw) != header_len:
            raise CheckpointError(f"{path}: truncated header")
        try:
            return json.loads(raw)
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"{path}: header is not valid JSON") from exc


def _read_payload(path: str | Path, header: dict[str, Any]) -> dict[str, torch.Tensor]:
    manifest = header["manifest"]
    total = 0
    for name, shape, offset in manifest:
        size = int(np.prod(shape)) if shape else 1
        if offset != total:
            raise CheckpointError(f"{path}: manifest offset mismatch at {name}")
        total += size
    with open(path, "rb") as fh:
        fh.read(len(MAGIC))
        header_len = int(fh.readline())
        fh.read(header_len + 1)
        raw = fh.read()
    expected = total * 4
    if len(raw) != expected:
        raise CheckpointError(f"{path}: payload is {len(raw)} bytes, expected {expected}")
    flat = np.frombuffer(raw, dtype="<f4")
    out: dict[str, torch.Tensor] = {}
    for name, shape, offset in manifest:
        size = int(np.prod(shape)) if shape else 1
        arr = flat[offset : offset + size].reshape(shape).copy()
        out[name] = torch.from_numpy(arr)
    return out


def check_expected(header: dict[str, Any], expect: Mapping[str, Any]) -> None:
    """Compare dotted module-config paths (e.g. 'student_encoder.vocab_size')
    against the header; raise CheckpointMismatchError on any disagreement."""
    for dotted, want in expect.items():
        node: Any = header["modules"]
        for part in dotted.split("."):
            if not isinstance(node, Mapping) or part not in node:
                raise CheckpointMismatchError(f"checkpoint lacks config entry {dotted!r}")
            node = node[part]
        if node != want:
            raise CheckpointMismatchError(f"config mismatch at {dotted!r}: checkpoint has {node!r}, expected {want!r}")


def save_encoder(encoder: Encoder, path: str | Path) -> None:
    """Standalone frozen-encoder checkpoint (the teacher artifact)."""
    named = [(f"encoder.{n}", p) for n, p in encoder.named_parameters()]
    manifest, arrays = _tensor_entries(named)
    header = {
        "format": 1,
        "kind": "encoder",
        "modules": {"encoder": _config_dict(encoder)},
        "manifest": manifest,
        "state": None,
    }
    _write(path, header, arrays)


def load_encoder(path: str | Path, expect: Mapping[str, Any] | None = None) -> Encoder:
    header = read_header(path)
    if header.get("kind") != "encoder":
        raise CheckpointError(f"{path}: kind {header.get('kind')!r}, expected 'encoder'")
    if expect:
        check_expected(header, expect)
    encoder = _module_from_config("encoder", header["modules"]["encoder"])
    tensors = _read_payload(path, header)
    _load_module_params(encoder, "encoder", tensors)
    encoder.requires_grad_(False).eval()
    return encoder


def _load_module_params(module: torch.nn.Module, prefix: str, tensors: Mapping[str, torch.Tensor]) -> None:
    with torch.no_grad():
        for n, p in module.named_parameters():
            key = f"{prefix}.{n}"
            if key not in tensors:
                raise CheckpointError(f"missing tensor {key}")
            if tuple(tensors[key].shape) != tuple(p.shape):
                raise CheckpointError(f"shape mismatch for {key}")
            p.copy_(tensors[key])
