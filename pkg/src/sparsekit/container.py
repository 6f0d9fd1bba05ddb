"""Bit-exact reader/writer for the tensor-container checkpoint format.

The on-disk layout is safetensors-compatible:

    bytes 0..8      unsigned 64-bit little-endian integer H (header length)
    bytes 8..8+H    UTF-8 JSON object mapping each tensor name to
                    {"dtype": "F16"|"BF16"|"F32"|"F64",
                     "shape": [ints],
                     "data_offsets": [begin, end]}
                    plus an optional "__metadata__" string-to-string object
    bytes 8+H..     raw row-major little-endian tensor payloads

``data_offsets`` are half-open and relative to the start of the data
section.  Payloads are tightly packed: sorted by begin they must tile the
data section from offset 0 with no gaps, overlaps, or trailing slack.

Reading is lazy and bounded: opening a container parses the header only,
and reading one tensor touches exactly that tensor's byte range.  All
decoded values are widened losslessly to float64 so every precision shares
one code path downstream.
"""

from __future__ import annotations

import enum
import hashlib
import json
import os
import struct
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import ContainerError

_HEADER_LEN_BYTES = 8
_CHUNK = 1 << 20


class DType(enum.Enum):
    """Storage precision of a tensor payload."""

    F16 = "F16"
    BF16 = "BF16"
    F32 = "F32"
    F64 = "F64"

    @property
    def byte_width(self) -> int:
        return _BYTE_WIDTH[self]


_BYTE_WIDTH = {DType.F16: 2, DType.BF16: 2, DType.F32: 4, DType.F64: 8}


def decode_values(raw: bytes, dtype: DType) -> np.ndarray:
    """Decode little-endian payload bytes to a flat float64 array.

    Widening from any supported precision to float64 is exact, so the
    returned values compare and round-trip without precision loss.
    Signaling-NaN payloads must not trip FP warnings here; NaN rejection
    happens at read_values with a proper error.
    """
    with np.errstate(invalid="ignore"):
        if dtype is DType.F16:
            return np.frombuffer(raw, dtype="<f2").astype(np.float64)
        if dtype is DType.BF16:
            u32 = np.frombuffer(raw, dtype="<u2").astype(np.uint32) << 16
            return u32.view(np.float32).astype(np.float64)
        if dtype is DType.F32:
            return np.frombuffer(raw, dtype="<f4").astype(np.float64)
        return np.frombuffer(raw, dtype="<f8").astype(np.float64)


def encode_values(values: np.ndarray, dtype: DType) -> bytes:
    """Encode a float64 array as little-endian payload bytes.

    BF16 uses round-to-nearest-even truncation of the F32 bit pattern, so
    encode(decode(raw)) reproduces raw exactly for every finite payload.
    """
    values = np.ascontiguousarray(values, dtype=np.float64)
    if dtype is DType.F16:
        return values.astype("<f2").tobytes()
    if dtype is DType.BF16:
        u32 = values.astype(np.float32).view(np.uint32)
        bias = np.uint32(0x7FFF) + ((u32 >> 16) & 1)
        return ((u32 + bias) >> 16).astype("<u2").tobytes()
    if dtype is DType.F32:
        return values.astype("<f4").tobytes()
    return values.astype("<f8").tobytes()


@dataclass(frozen=True)
class TensorMeta:
    """Name, precision, shape, and data-section byte range of one tensor."""

    name: str
    dtype: DType
    shape: tuple[int, ...]
    byte_range: tuple[int, int]

    @property
    def numel(self) -> int:
        n = 1
        for d in self.shape:
            n *= d
        return n

    @property
    def nbytes(self) -> int:
        return self.byte_range[1] - self.byte_range[0]

    @property
    def ndim(self) -> int:
        return len(self.shape)


class ByteSource:
    """Random-access byte provider backing a container."""

    def read_at(self, offset: int, size: int) -> bytes:
        raise NotImplementedError

    def size(self) -> int:
        raise NotImplementedError

    def close(self) -> None:
        pass


class FileByteSource(ByteSource):
    """File-backed source using pread, safe for concurrent readers."""

    def __init__(self, path):
        self.path = os.fspath(path)
        self._fd = os.open(self.path, os.O_RDONLY)
        self._size = os.fstat(self._fd).st_size

    def read_at(self, offset: int, size: int) -> bytes:
        parts = []
        got = 0
        while got < size:
            chunk = os.pread(self._fd, size - got, offset + got)
            if not chunk:
                raise ContainerError(
                    f"unexpected end of file in {self.path!r} at offset {offset + got}"
                )
            parts.append(chunk)
            got += len(chunk)
        return b"".join(parts)

    def size(self) -> int:
        return self._size

    def close(self) -> None:
        if self._fd is not None:
            os.close(self._fd)
            self._fd = None

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass


class BytesByteSource(ByteSource):
    """In-memory source over an immutable blob."""

    def __init__(self, blob: bytes):
        self._blob = bytes(blob)

    def read_at(self, offset: int, size: int) -> bytes:
        if offset + size > len(self._blob):
            raise ContainerError("read past end of in-memory container")
        return self._blob[offset : offset + size]

    def size(self) -> int:
        return len(self._blob)


class TensorContainer:
    """Parsed checkpoint: metas plus lazy access to tensor payloads.

    Immutable after construction; concurrent reads of the same or distinct
    tensors are safe.
    """

    def __init__(
        self,
        metas: Mapping[str, TensorMeta],
        metadata: dict[str, str] | None,
        source: ByteSource,
        header_blob: bytes,
    ):
        self.metas = dict(sorted(metas.items()))
        self.metadata = metadata
        self._source = source
        self._header_blob = header_blob
        self._data_start = len(header_blob)

    def names(self) -> list[str]:
        return list(self.metas)

    @property
    def total_elements(self) -> int:
        return sum(m.numel for m in self.metas.values())

    @property
    def total_bytes(self) -> int:
        return sum(m.nbytes for m in self.metas.values())

    @property
    def header_blob(self) -> bytes:
        return self._header_blob

    def _meta(self, name: str) -> TensorMeta:
        meta = self.metas.get(name)
        if meta is None:
            raise ContainerError(f"unknown tensor {name!r}")
        return meta

    def read_bytes(self, name: str) -> bytes:
        """Raw little-endian payload of one tensor, nothing else touched."""
        meta = self._meta(name)
        begin, end = meta.byte_range
        return self._source.read_at(self._data_start + begin, end - begin)

    def read_values(self, name: str) -> np.ndarray:
        """Flat float64 values of one tensor in row-major order.

        NaN payloads are rejected: magnitude comparison is undefined for
        them and nothing downstream contemplates non-finite weights.
        """
        meta = self._meta(name)
        values = decode_values(self.read_bytes(name), meta.dtype)
        if np.isnan(values).any():
            raise ContainerError(f"non-finite weight in tensor {meta.name!r}")
        return values

    def read_array(self, name: str) -> np.ndarray:
        """Shaped float64 view of :meth:`read_values`."""
        return self.read_values(name).reshape(self._meta(name).shape)

    def save(self, path) -> None:
        """Write this container byte-preservingly (header blob + payloads)."""
        with open(path, "wb") as fh:
            fh.write(self._header_blob)
            for meta in sorted(self.metas.values(), key=lambda m: m.byte_range[0]):
                begin, end = meta.byte_range
                off = begin
                while off < end:
                    step = min(_CHUNK, end - off)
                    fh.write(self._source.read_at(self._data_start + off, step))
                    off += step

    def close(self) -> None:
        self._source.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


def _parse_pairs(pairs):
    obj = {}
    for key, value in pairs:
        if key in obj:
            raise ContainerError(f"duplicate tensor name {key!r} in header")
        obj[key] = value
    return obj


def _parse_meta(name, entry, data_size: int) -> TensorMeta:
    if not name:
        raise ContainerError("empty tensor name in header")
    if not isinstance(entry, dict):
        raise ContainerError(f"tensor {name!r}: header entry is not an object")
    try:
        tag = entry["dtype"]
        shape = entry["shape"]
        offsets = entry["data_offsets"]
    except KeyError as missing:
        raise ContainerError(f"tensor {name!r}: missing header key {missing}") from None

    try:
        dtype = DType(tag)
    except ValueError:
        raise ContainerError(f"tensor {name!r}: unknown dtype tag {tag!r}") from None

    if not isinstance(shape, list) or not all(
        isinstance(d, int) and not isinstance(d, bool) and d > 0 for d in shape
    ):
        raise ContainerError(f"tensor {name!r}: invalid shape {shape!r}")

    if (
        not isinstance(offsets, list)
        or len(offsets) != 2
        or not all(isinstance(o, int) and not isinstance(o, bool) and o >= 0 for o in offsets)
        or offsets[0] > offsets[1]
    ):
        raise ContainerError(f"tensor {name!r}: invalid data_offsets {offsets!r}")

    begin, end = offsets
    meta = TensorMeta(name=name, dtype=dtype, shape=tuple(shape), byte_range=(begin, end))
    expected = meta.numel * dtype.byte_width
    if expected != end - begin:
        raise ContainerError(
            f"tensor {name!r}: size mismatch (shape {meta.shape} x {dtype.value} "
            f"needs {expected} bytes, data_offsets span {end - begin})"
        )
    if end > data_size:
        raise ContainerError(f"tensor {name!r}: data_offsets out of bounds")
    return meta


def _check_layout(metas: dict[str, TensorMeta], data_size: int) -> None:
    ordered = sorted(metas.values(), key=lambda m: (m.byte_range[0], m.byte_range[1]))
    cursor = 0
    prev = None
    for meta in ordered:
        begin, end = meta.byte_range
        if begin < cursor:
            raise ContainerError(
                f"overlapping ranges between {prev.name!r} and {meta.name!r}"
            )
        if begin > cursor:
            where = f"before tensor {meta.name!r}" if prev is None else (
                f"between {prev.name!r} and {meta.name!r}"
            )
            raise ContainerError(f"ranges not contiguous: gap {where}")
        cursor = end
        prev = meta
    if cursor != data_size:
        raise ContainerError(
            f"trailing bytes after tensor data ({data_size - cursor} unaccounted)"
        )


def open_container(src) -> TensorContainer:
    """Open a container from a path or :class:`ByteSource`.

    Parses and validates all metas; no tensor payload is loaded eagerly.
    """
    source = src if isinstance(src, ByteSource) else FileByteSource(src)
    total = source.size()
    if total < _HEADER_LEN_BYTES:
        source.close()
        raise ContainerError(
            f"truncated file: {total} bytes, need at least {_HEADER_LEN_BYTES} "
            "for the header length"
        )
    (header_len,) = struct.unpack("<Q", source.read_at(0, _HEADER_LEN_BYTES))
    if _HEADER_LEN_BYTES + header_len > total:
        source.close()
        raise ContainerError(
            f"header length {header_len} exceeds file size {total}"
        )

    header_blob = source.read_at(0, _HEADER_LEN_BYTES + header_len)
    try:
        text = header_blob[_HEADER_LEN_BYTES:].decode("utf-8")
    except UnicodeDecodeError as exc:
        source.close()
        raise ContainerError(f"header is not valid UTF-8: {exc}") from None
    try:
        header = json.loads(text, object_pairs_hook=_parse_pairs)
    except ContainerError:
        source.close()
        raise
    except json.JSONDecodeError as exc:
        source.close()
        raise ContainerError(f"header is not valid JSON: {exc}") from None
    if not isinstance(header, dict):
        source.close()
        raise ContainerError("header is not a JSON object")

    data_size = total - _HEADER_LEN_BYTES - header_len
    metadata = None
    metas: dict[str, TensorMeta] = {}
    try:
        for name, entry in header.items():
            if name == "__metadata__":
                if not isinstance(entry, dict) or not all(
                    isinstance(k, str) and isinstance(v, str) for k, v in entry.items()
                ):
                    raise ContainerError("__metadata__ must map strings to strings")
                metadata = dict(entry)
                continue
            metas[name] = _parse_meta(name, entry, data_size)
        _check_layout(metas, data_size)
    except ContainerError:
        source.close()
        raise
    return TensorContainer(metas, metadata, source, header_blob)


def _normalize_entry(name: str, entry) -> tuple[np.ndarray, DType, tuple[int, ...]]:
    shape = None
    if isinstance(entry, tuple):
        if len(entry) == 2:
            values, dtype = entry
        elif len(entry) == 3:
            values, dtype, shape = entry
        else:
            raise ContainerError(f"tensor {name!r}: expected (values, dtype[, shape])")
    else:
        values = entry
        dtype = _INFERRED.get(np.asarray(entry).dtype.str.lstrip("<>=|"))
        if dtype is None:
            raise ContainerError(
                f"tensor {name!r}: cannot infer container dtype from array dtype "
                f"{np.asarray(entry).dtype}; pass (values, DType) explicitly"
            )
    flat = np.asarray(values, dtype=np.float64).reshape(-1)
    if shape is None:
        shape = np.asarray(values).shape
    shape = tuple(int(d) for d in shape)
    numel = 1
    for d in shape:
        if d <= 0:
            raise ContainerError(f"tensor {name!r}: invalid shape {shape}")
        numel *= d
    if flat.size != numel:
        raise ContainerError(
            f"tensor {name!r}: {flat.size} values do not fit shape {shape}"
        )
    if not np.isfinite(flat).all():
        raise ContainerError(f"non-finite value in tensor {name!r}")
    return flat, dtype, shape


_INFERRED = {"f2": DType.F16, "f4": DType.F32, "f8": DType.F64}


def serialize_container(tensors: Mapping, metadata: Mapping[str, str] | None = None) -> bytes:
    """Serialize tensors to container bytes with deterministic layout.

    ``tensors`` maps each name to an array, ``(values, DType)``, or
    ``(values, DType, shape)``.  Writing the same logical content twice
    yields byte-identical output: names are laid out in lexicographic
    order and the header JSON is emitted compactly with a fixed key order.
    """
    normalized = {}
    for name in tensors:
        if not isinstance(name, str) or not name:
            raise ContainerError(f"invalid tensor name {name!r}")
        if name == "__metadata__":
            raise ContainerError("'__metadata__' is a reserved name")
        normalized[name] = _normalize_entry(name, tensors[name])

    header: dict = {}
    if metadata is not None:
        meta = {str(k): str(v) for k, v in metadata.items()}
        header["__metadata__"] = dict(sorted(meta.items()))

    payloads = []
    offset = 0
    for name in sorted(normalized):
        flat, dtype, shape = normalized[name]
        raw = encode_values(flat, dtype)
        header[name] = {
            "dtype": dtype.value,
            "shape": list(shape),
            "data_offsets": [offset, offset + len(raw)],
        }
        payloads.append(raw)
        offset += len(raw)

    header_bytes = json.dumps(header, separators=(",", ":")).encode("utf-8")
    return b"".join(
        [struct.pack("<Q", len(header_bytes)), header_bytes, *payloads]
    )


def write_container(path, tensors: Mapping, metadata: Mapping[str, str] | None = None) -> None:
    """Write tensors to ``path`` in the container format (see module doc)."""
    blob = serialize_container(tensors, metadata)
    with open(path, "wb") as fh:
        fh.write(blob)


def container_from_arrays(tensors: Mapping, metadata=None) -> TensorContainer:
    """In-memory container over the canonical serialization of ``tensors``."""
    return open_container(BytesByteSource(serialize_container(tensors, metadata)))


def list_tensors(container: TensorContainer, filter=None) -> list[TensorMeta]:
    """Metas passing ``filter`` (a :class:`TensorFilter` or None), name-sorted."""
    if filter is None:
        return [container.metas[n] for n in container.names()]
    return filter.select(container.metas)


def container_digest(container: TensorContainer) -> str:
    """SHA-256 over the container's canonical bytes (header + payloads)."""
    h = hashlib.sha256()
    h.update(container.header_blob)
    for meta in sorted(container.metas.values(), key=lambda m: m.byte_range[0]):
        begin, end = meta.byte_range
        off = begin
        while off < end:
            step = min(_CHUNK, end - off)
            h.update(container._source.read_at(container._data_start + off, step))
            off += step
    return h.hexdigest()
