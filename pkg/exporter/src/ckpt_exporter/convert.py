"""Convert framework-native weight files into the tensor-container format.

Sources: local torch state-dict files (.pt/.bin, optionally wrapped in a
"state_dict"/"model_state_dict" key), local safetensors files, or a
model-hub identifier resolved through transformers.  Tensor names pass
through untouched and shapes are preserved exactly; only the storage
dtype may change under the cast-to-F32 policy.

The writer is deliberately self-contained (no dependency on the analysis
toolkit): it emits the same on-disk layout from this side of the fence,
which doubles as an interoperability check.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass

import numpy as np
import torch


class ExportError(Exception):
    pass


# torch dtype -> (container tag, little-endian numpy conversion)
_DTYPE_TAGS = {
    torch.float16: "F16",
    torch.bfloat16: "BF16",
    torch.float32: "F32",
    torch.float64: "F64",
}

_NUMPY_LE = {"F16": "<f2", "F32": "<f4", "F64": "<f8"}


@dataclass(frozen=True)
class ExportJob:
    source: str
    out_path: str
    cast_to_f32: bool = False
    sidecar_path: str | None = None
    skip_unsupported: bool = False

    @property
    def sidecar(self) -> str:
        return self.sidecar_path or self.out_path + ".json"


def _unwrap_state_dict(obj) -> dict:
    if isinstance(obj, dict):
        for key in ("state_dict", "model_state_dict"):
            if key in obj and isinstance(obj[key], dict):
                return obj[key]
        return obj
    raise ExportError("checkpoint does not contain a state-dict-like mapping")


def _file_digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        while chunk := fh.read(1 << 20):
            h.update(chunk)
    return h.hexdigest()


def _state_digest(state: dict[str, torch.Tensor]) -> str:
    """Canonical digest for sources without a single underlying file."""
    h = hashlib.sha256()
    for name in sorted(state):
        tensor = state[name]
        h.update(name.encode("utf-8") + b"\0")
        h.update(str(tensor.dtype).encode() + b"\0")
        h.update(struct.pack(f"<{tensor.dim()}q", *tensor.shape))
        h.update(_raw_bytes(tensor, _DTYPE_TAGS.get(tensor.dtype, "F32")))
    return h.hexdigest()


def resolve_source(source: str) -> tuple[dict[str, torch.Tensor], str]:
    """Load the weights behind a path or hub id; returns (state, digest)."""
    if os.path.exists(source):
        if source.endswith(".safetensors"):
            try:
                from safetensors.torch import load_file
            except ImportError as exc:
                raise ExportError(
                    "reading .safetensors sources needs the safetensors package"
                ) from exc
            return load_file(source), _file_digest(source)
        try:
            obj = torch.load(source, map_location="cpu", weights_only=True)
        except Exception:
            obj = torch.load(source, map_location="cpu", weights_only=False)
        return _unwrap_state_dict(obj), _file_digest(source)

    try:
        from transformers import AutoModel
    except ImportError as exc:
        raise ExportError(
            f"unresolvable model {source!r}: not a local file and transformers "
            "is not installed"
        ) from exc
    try:
        model = AutoModel.from_pretrained(source)
    except Exception as exc:
        raise ExportError(f"unresolvable model {source!r}: {exc}") from None
    state = {k: v.detach().cpu() for k, v in model.state_dict().items()}
    return state, _state_digest(state)


def _raw_bytes(tensor: torch.Tensor, tag: str) -> bytes:
    tensor = tensor.detach().contiguous()
    if tag == "BF16":
        return tensor.view(torch.uint16).numpy().astype("<u2").tobytes()
    return tensor.numpy().astype(_NUMPY_LE[tag]).tobytes()


def _plan_tensors(state: dict, job: ExportJob) -> list[tuple[str, str, tuple, bytes]]:
    plan = []
    for name in sorted(state):
        tensor = state[name]
        if not isinstance(tensor, torch.Tensor):
            if job.skip_unsupported:
                continue
            raise ExportError(f"entry {name!r} is not a tensor")
        tag = _DTYPE_TAGS.get(tensor.dtype)
        if tag is None:
            if job.skip_unsupported:
                continue
            raise ExportError(
                f"unsupported source dtype {tensor.dtype} for tensor {name!r}"
            )
        if job.cast_to_f32 and tag in ("F16", "BF16"):
            # strictly widening, so every value is preserved exactly;
            # F32 stays as-is and F64 is not narrowed
            tensor = tensor.to(torch.float32)
            tag = "F32"
        if tensor.numel() == 0:
            raise ExportError(f"tensor {name!r} is empty")
        plan.append((name, tag, tuple(tensor.shape), _raw_bytes(tensor, tag)))
    if not plan:
        raise ExportError("nothing to export")
    return plan


def write_container_file(plan, path) -> None:
    """Self-contained writer for the container layout (see module doc)."""
    header = {}
    offset = 0
    for name, tag, shape, raw in plan:
        header[name] = {
            "dtype": tag,
            "shape": list(shape),
            "data_offsets": [offset, offset + len(raw)],
        }
        offset += len(raw)
    header_bytes = json.dumps(header, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for _, _, _, raw in plan:
            fh.write(raw)


def export(job: ExportJob) -> dict:
    """Run one conversion; returns the sidecar inventory document."""
    state, digest = resolve_source(job.source)
    plan = _plan_tensors(state, job)
    write_container_file(plan, job.out_path)

    sidecar = {
        "tensors": [
            {"name": name, "shape": list(shape), "dtype": tag, "bytes": len(raw)}
            for name, tag, shape, raw in plan
        ],
        "total_params": sum(int(np.prod(shape)) for _, _, shape, _ in plan),
        "source_digest": digest,
    }
    with open(job.sidecar, "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return sidecar


def build_manifest(pairs: list[tuple[int, str]]) -> dict:
    """Series-manifest document for the analysis toolkit's census command."""
    ordered = sorted(pairs)
    iterations = [it for it, _ in ordered]
    if len(set(iterations)) != len(iterations):
        raise ExportError("duplicate iterations in manifest")
    return {"entries": [{"iteration": it, "path": p} for it, p in ordered]}
