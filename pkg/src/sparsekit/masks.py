"""Packed binary pruning masks: sparsity, similarity, nesting, application.

A mask stores one bit per weight (1 = kept) packed LSB-first within bytes
in row-major element order.  That packing is canonical, so serialized
masks are byte-stable across runs and implementations.

Mask file format ("ESMK"):

    magic  b"ESMK"
    u32 LE version (currently 1)
    u64 LE header length
    UTF-8 JSON header: {"provenance": {...},
                        tensor name: {"shape": [...], "nnz": int,
                                      "bit_offset": int}, ...}
    packed bitstreams, each tensor padded to a byte boundary

"provenance" is a reserved header key and therefore an illegal tensor name.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .container import TensorContainer, container_digest
from .errors import DigestMismatchError, MaskError

_MAGIC = b"ESMK"
_VERSION = 1


def _popcount(packed: np.ndarray) -> int:
    return int(np.bitwise_count(packed).sum())


@dataclass(frozen=True, eq=False)
class TensorMask:
    """Immutable per-tensor keep mask with a cached set-bit count."""

    shape: tuple[int, ...]
    packed: np.ndarray
    nnz: int

    def __post_init__(self):
        numel = self.numel
        expected_bytes = (numel + 7) // 8
        if self.packed.dtype != np.uint8 or self.packed.ndim != 1:
            raise MaskError("packed mask bits must be a flat uint8 array")
        if len(self.packed) != expected_bytes:
            raise MaskError(
                f"bit length inconsistency: {len(self.packed)} bytes for "
                f"{numel} elements"
            )
        pad = expected_bytes * 8 - numel
        if pad and (self.packed[-1] >> (8 - pad)) != 0:
            raise MaskError("nonzero padding bits in packed mask")
        if self.recount() != self.nnz:
            raise MaskError(
                f"nnz mismatch: cached {self.nnz}, popcount {self.recount()}"
            )
        arr = self.packed
        if arr.flags.writeable:
            arr = arr.copy()
            arr.flags.writeable = False
            object.__setattr__(self, "packed", arr)

    @classmethod
    def from_bools(cls, keep, shape=None) -> "TensorMask":
        keep = np.asarray(keep, dtype=bool)
        if shape is None:
            shape = keep.shape
        flat = keep.reshape(-1)
        packed = np.packbits(flat, bitorder="little")
        return cls(tuple(int(d) for d in shape), packed, int(flat.sum()))

    @property
    def numel(self) -> int:
        n = 1
        for d in self.shape:
            n *= d
        return n

    def bools(self) -> np.ndarray:
        """Flat boolean view (kept = True) in row-major order."""
        return np.unpackbits(self.packed, count=self.numel, bitorder="little").view(bool)

    def recount(self) -> int:
        """Recompute the population count from the packed bits."""
        return _popcount(self.packed)

    def __eq__(self, other):
        if not isinstance(other, TensorMask):
            return NotImplemented
        return (
            self.shape == other.shape
            and self.nnz == other.nnz
            and np.array_equal(self.packed, other.packed)
        )

    __hash__ = None


@dataclass(frozen=True)
class Provenance:
    """How a mask set was produced and from which container."""

    method: str
    target_sparsity: float
    source_digest: str
    prunable_filter: dict

    def to_json(self) -> dict:
        return {
            "method": self.method,
            "target_sparsity": self.target_sparsity,
            "source_digest": self.source_digest,
            "prunable_filter": self.prunable_filter,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "Provenance":
        try:
            return cls(
                method=str(obj["method"]),
                target_sparsity=float(obj["target_sparsity"]),
                source_digest=str(obj["source_digest"]),
                prunable_filter=dict(obj["prunable_filter"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise MaskError(f"malformed provenance record: {exc}") from None


@dataclass(frozen=True)
class MaskSet:
    """Masks for the prunable tensors of one container, plus provenance.

    Non-prunable tensors are simply absent rather than carried as
    all-ones, keeping sparsity accounting scoped to prunable parameters.
    """

    masks: dict[str, TensorMask]
    provenance: Provenance

    def names(self) -> list[str]:
        return sorted(self.masks)

    @property
    def total_elements(self) -> int:
        return sum(m.numel for m in self.masks.values())

    @property
    def total_nnz(self) -> int:
        return sum(m.nnz for m in self.masks.values())


def sparsity(mask_set: MaskSet) -> float:
    """Fraction of pruned weights, 1 - kept/total, over covered tensors."""
    if not mask_set.masks:
        raise MaskError("empty mask set has undefined sparsity")
    return 1.0 - mask_set.total_nnz / mask_set.total_elements


def _check_pairable(a: MaskSet, b: MaskSet) -> None:
    if set(a.masks) != set(b.masks):
        only_a = sorted(set(a.masks) - set(b.masks))
        only_b = sorted(set(b.masks) - set(a.masks))
        raise MaskError(
            f"mask sets cover different tensors (only left: {only_a}, "
            f"only right: {only_b})"
        )
    for name in a.masks:
        if a.masks[name].shape != b.masks[name].shape:
            raise MaskError(
                f"shape mismatch for tensor {name!r}: "
                f"{a.masks[name].shape} vs {b.masks[name].shape}"
            )


def _pair_counts(a, b) -> tuple[int, int, int]:
    """(intersection, nnz_a, nnz_b) over a mask pair or set pair."""
    if isinstance(a, TensorMask) and isinstance(b, TensorMask):
        if a.shape != b.shape:
            raise MaskError(f"shape mismatch: {a.shape} vs {b.shape}")
        return _popcount(a.packed & b.packed), a.nnz, b.nnz
    if isinstance(a, MaskSet) and isinstance(b, MaskSet):
        _check_pairable(a, b)
        inter = sum(
            _popcount(a.masks[n].packed & b.masks[n].packed) for n in a.masks
        )
        return inter, a.total_nnz, b.total_nnz
    raise MaskError("operands must both be TensorMask or both be MaskSet")


def cosine_similarity(a, b) -> float:
    """Cosine of two masks read as flat 0/1 vectors: |a&b| / sqrt(nnz*nnz).

    MaskSet operands are concatenated whole-model vectors; use
    :func:`cosine_similarity_per_tensor` for the per-layer breakdown.
    """
    inter, na, nb = _pair_counts(a, b)
    if na == 0 or nb == 0:
        raise MaskError("all-zero mask has undefined cosine similarity")
    return inter / math.sqrt(na * nb)


def cosine_similarity_per_tensor(a: MaskSet, b: MaskSet) -> dict[str, float]:
    """Per-tensor cosine similarity; NaN where either side is all-zero."""
    _check_pairable(a, b)
    out = {}
    for name in sorted(a.masks):
        ma, mb = a.masks[name], b.masks[name]
        if ma.nnz == 0 or mb.nnz == 0:
            out[name] = math.nan
        else:
            out[name] = _popcount(ma.packed & mb.packed) / math.sqrt(ma.nnz * mb.nnz)
    return out


def similarity_matrix(sets: Sequence[MaskSet]) -> np.ndarray:
    """Symmetric pairwise cosine-similarity matrix with an exact unit diagonal."""
    if len(sets) < 2:
        raise MaskError("similarity matrix needs at least two mask sets")
    n = len(sets)
    out = np.ones((n, n), dtype=np.float64)
    for i in range(n):
        for j in range(i + 1, n):
            out[i, j] = out[j, i] = cosine_similarity(sets[i], sets[j])
    return out


def is_nested(high: MaskSet, low: MaskSet) -> bool:
    """True iff every bit kept by ``high`` is also kept by ``low``.

    ``high`` is the higher-sparsity (smaller) mask; magnitude masks pruned
    from one checkpoint satisfy this for any sparsity pair.
    """
    _check_pairable(high, low)
    return all(
        np.array_equal(high.masks[n].packed & low.masks[n].packed, high.masks[n].packed)
        for n in high.masks
    )


def _masked_payload(raw: bytes, mask: TensorMask, byte_width: int) -> bytes:
    arr = np.frombuffer(raw, dtype=np.uint8).reshape(mask.numel, byte_width).copy()
    arr[~mask.bools()] = 0
    return arr.tobytes()


def _check_applicable(mask_set: MaskSet, container: TensorContainer, allow_digest_mismatch):
    if not allow_digest_mismatch:
        digest = container_digest(container)
        if digest != mask_set.provenance.source_digest:
            raise DigestMismatchError(
                f"container digest {digest[:12]}... does not match mask provenance "
                f"{mask_set.provenance.source_digest[:12]}... "
                "(pass allow_digest_mismatch/--force to override)"
            )
    for name, mask in mask_set.masks.items():
        meta = container.metas.get(name)
        if meta is None:
            raise MaskError(f"mask covers tensor {name!r} absent from container")
        if meta.shape != mask.shape:
            raise MaskError(
                f"shape mismatch for tensor {name!r}: container {meta.shape}, "
                f"mask {mask.shape}"
            )


def apply_mask(
    mask_set: MaskSet,
    container: TensorContainer,
    *,
    allow_digest_mismatch: bool = False,
) -> TensorContainer:
    """Zero out pruned positions, leaving every other byte unchanged.

    Masked-out elements become exact +0.0 in the stored dtype; tensors not
    covered by the set pass through untouched.  The result reuses the
    source header verbatim, so applying an all-ones set is byte-identical
    and application is idempotent byte-for-byte.
    """
    from .container import BytesByteSource, open_container

    _check_applicable(mask_set, container, allow_digest_mismatch)
    parts = [container.header_blob]
    for meta in sorted(container.metas.values(), key=lambda m: m.byte_range[0]):
        raw = container.read_bytes(meta.name)
        mask = mask_set.masks.get(meta.name)
        parts.append(raw if mask is None else _masked_payload(raw, mask, meta.dtype.byte_width))
    return open_container(BytesByteSource(b"".join(parts)))


def apply_mask_to_path(
    mask_set: MaskSet,
    container: TensorContainer,
    path,
    *,
    allow_digest_mismatch: bool = False,
) -> None:
    """Streaming variant of :func:`apply_mask` writing straight to ``path``."""
    _check_applicable(mask_set, container, allow_digest_mismatch)
    with open(path, "wb") as fh:
        fh.write(container.header_blob)
        for meta in sorted(container.metas.values(), key=lambda m: m.byte_range[0]):
            raw = container.read_bytes(meta.name)
            mask = mask_set.masks.get(meta.name)
            fh.write(raw if mask is None else _masked_payload(raw, mask, meta.dtype.byte_width))


def write_mask(mask_set: MaskSet, path) -> None:
    """Serialize a mask set to the ESMK format; output is byte-deterministic."""
    header: dict = {"provenance": mask_set.provenance.to_json()}
    chunks = []
    bit_cursor = 0
    for name in sorted(mask_set.masks):
        if name == "provenance":
            raise MaskError("'provenance' is a reserved name in mask files")
        mask = mask_set.masks[name]
        header[name] = {
            "shape": list(mask.shape),
            "nnz": mask.nnz,
            "bit_offset": bit_cursor,
        }
        chunks.append(mask.packed.tobytes())
        bit_cursor += len(mask.packed) * 8

    header_bytes = json.dumps(header, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for chunk in chunks:
            fh.write(chunk)


def read_mask(path) -> MaskSet:
    """Parse an ESMK mask file, verifying counts and bit lengths."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise MaskError(f"bad magic {blob[:4]!r}, expected {_MAGIC!r}")
    if len(blob) < 16:
        raise MaskError("truncated mask file")
    (version,) = struct.unpack("<I", blob[4:8])
    if version != _VERSION:
        raise MaskError(f"unsupported mask version {version}")
    (header_len,) = struct.unpack("<Q", blob[8:16])
    if 16 + header_len > len(blob):
        raise MaskError(f"header length {header_len} exceeds file size")
    try:
        header = json.loads(blob[16 : 16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MaskError(f"mask header is not valid JSON: {exc}") from None
    if not isinstance(header, dict) or "provenance" not in header:
        raise MaskError("mask header missing provenance record")

    provenance = Provenance.from_json(header.pop("provenance"))
    payload = np.frombuffer(blob[16 + header_len :], dtype=np.uint8)
    masks = {}
    for name, entry in header.items():
        try:
            shape = tuple(int(d) for d in entry["shape"])
            nnz = int(entry["nnz"])
            bit_offset = int(entry["bit_offset"])
        except (KeyError, TypeError, ValueError) as exc:
            raise MaskError(f"tensor {name!r}: malformed mask entry: {exc}") from None
        if bit_offset % 8:
            raise MaskError(f"tensor {name!r}: bit_offset {bit_offset} not byte-aligned")
        numel = 1
        for d in shape:
            numel *= d
        nbytes = (numel + 7) // 8
        start = bit_offset // 8
        if start + nbytes > len(payload):
            raise MaskError(f"tensor {name!r}: bitstream extends past end of file")
        packed = payload[start : start + nbytes].copy()
        try:
            masks[name] = TensorMask(shape, packed, nnz)
        except MaskError as exc:
            raise MaskError(f"tensor {name!r}: {exc}") from None
    return MaskSet(masks, provenance)
