"""Binary file formats (all little-endian).

TBNT  sparse ternary tensor: magic, u16 version, u16 H, u16 W, u16 C,
      map bits then value bits, each padded to a byte boundary.
TBNA  archive of TBNT blobs: magic, u16 version, u32 count, then per entry
      (u64 offset, u32 length, i16 label), then the blobs.  label -1 = none.
TBNW  binary weights: magic, u16 version, u8 kh, u8 kw, u16 in, u16 out, bits.
TBNP  per-channel parameters: magic, u16 version, u16 channels, int16 payload.
      BN factors carry one Q8.8 value per channel; quantizer thresholds carry
      (pos, neg) pairs.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .sparse import BinaryWeightTensor, SparseEncoding

VERSION = 1

_TENSOR_HDR = struct.Struct("<4sHHHH")
_ARCHIVE_HDR = struct.Struct("<4sHI")
_ARCHIVE_ENTRY = struct.Struct("<QIh")
_WEIGHT_HDR = struct.Struct("<4sHBBHH")
_PARAM_HDR = struct.Struct("<4sHH")

CIFAR_RECORD = 1 + 3 * 1024


def _pack_bits(bits: np.ndarray) -> bytes:
    return np.packbits(np.asarray(bits, dtype=np.uint8), bitorder="little").tobytes()


def _unpack_bits(buf: bytes, n: int) -> np.ndarray:
    return np.unpackbits(np.frombuffer(buf, dtype=np.uint8), count=n, bitorder="little")


def _check_header(buf: bytes, hdr: struct.Struct, magic: bytes, what: str) -> tuple:
    if len(buf) < hdr.size:
        raise FormatError(f"{what}: truncated header ({len(buf)} bytes)")
    fields = hdr.unpack_from(buf)
    if fields[0] != magic:
        raise FormatError(f"{what}: bad magic {fields[0]!r}, expected {magic!r}")
    if fields[1] != VERSION:
        raise FormatError(f"{what}: unsupported version {fields[1]}")
    return fields[2:]


def tensor_to_bytes(s: SparseEncoding) -> bytes:
    h, w, c = s.shape
    return _TENSOR_HDR.pack(b"TBNT", VERSION, h, w, c) + _pack_bits(s.map_bits) + _pack_bits(s.value_bits)


def tensor_from_bytes(buf: bytes) -> SparseEncoding:
    h, w, c = _check_header(buf, _TENSOR_HDR, b"TBNT", "tensor")
    n = h * w * c
    map_len = -(-n // 8)
    body = buf[_TENSOR_HDR.size:]
    if len(body) < map_len:
        raise FormatError(f"tensor: map truncated, need {map_len} bytes, have {len(body)}")
    map_bits = _unpack_bits(body[:map_len], n)
    nnz = int(map_bits.sum())
    val_len = -(-nnz // 8)
    if len(body) != map_len + val_len:
        raise FormatError(f"tensor: value stream is {len(body) - map_len} bytes, map implies {val_len}")
    return SparseEncoding((h, w, c), map_bits, _unpack_bits(body[map_len:], nnz))


def write_tensor(path, s: SparseEncoding) -> None:
    Path(path).write_bytes(tensor_to_bytes(s))


def read_tensor(path) -> SparseEncoding:
    return tensor_from_bytes(Path(path).read_bytes())


def archive_to_bytes(tensors, labels=None) -> bytes:
    tensors = list(tensors)
    labels = [-1] * len(tensors) if labels is None else [int(x) for x in labels]
    if len(labels) != len(tensors):
        raise ValueError("one label per tensor")
    blobs = [tensor_to_bytes(t) for t in tensors]
    offset = _ARCHIVE_HDR.size + _ARCHIVE_ENTRY.size * len(blobs)
    index = []
    for blob, label in zip(blobs, labels):
        index.append(_ARCHIVE_ENTRY.pack(offset, len(blob), label))
        offset += len(blob)
    return _ARCHIVE_HDR.pack(b"TBNA", VERSION, len(blobs)) + b"".join(index) + b"".join(blobs)


def archive_from_bytes(buf: bytes) -> tuple[list[SparseEncoding], list[int]]:
    (count,) = _check_header(buf, _ARCHIVE_HDR, b"TBNA", "archive")
    tensors, labels = [], []
    for i in range(count):
        at = _ARCHIVE_HDR.size + i * _ARCHIVE_ENTRY.size
        if at + _ARCHIVE_ENTRY.size > len(buf):
            raise FormatError(f"archive: index truncated at entry {i}")
        offset, length, label = _ARCHIVE_ENTRY.unpack_from(buf, at)
        if offset + length > len(buf):
            raise FormatError(f"archive: entry {i} runs past end of file (offset {offset})")
        tensors.append(tensor_from_bytes(buf[offset:offset + length]))
        labels.append(label)
    return tensors, labels


def write_archive(path, tensors, labels=None) -> None:
    Path(path).write_bytes(archive_to_bytes(tensors, labels))


def read_archive(path) -> tuple[list[SparseEncoding], list[int]]:
    return archive_from_bytes(Path(path).read_bytes())


def weights_to_bytes(w: BinaryWeightTensor) -> bytes:
    kh, kw, cin, cout = w.dims
    if kh > 255 or kw > 255 or cin > 0xFFFF or cout > 0xFFFF:
        raise ValueError(f"weight dims {w.dims} exceed the file header fields")
    return _WEIGHT_HDR.pack(b"TBNW", VERSION, kh, kw, cin, cout) + _pack_bits(w.bits)


def weights_from_bytes(buf: bytes) -> BinaryWeightTensor:
    kh, kw, cin, cout = _check_header(buf, _WEIGHT_HDR, b"TBNW", "weights")
    n = kh * kw * cin * cout
    body = buf[_WEIGHT_HDR.size:]
    if len(body) != -(-n // 8):
        raise FormatError(f"weights: payload is {len(body)} bytes, header implies {-(-n // 8)}")
    return BinaryWeightTensor(kh, kw, cin, cout, _unpack_bits(body, n))


def write_weights(path, w: BinaryWeightTensor) -> None:
    Path(path).write_bytes(weights_to_bytes(w))


def read_weights(path) -> BinaryWeightTensor:
    return weights_from_bytes(Path(path).read_bytes())


def params_to_bytes(values: np.ndarray) -> bytes:
    """values: (C,) BN factors or (C, 2) threshold pairs."""
    v = np.asarray(values)
    if v.ndim not in (1, 2):
        raise ValueError("parameters must be (C,) or (C, k)")
    if v.min(initial=0) < -32768 or v.max(initial=0) > 32767:
        raise ValueError("parameters must fit in int16")
    return _PARAM_HDR.pack(b"TBNP", VERSION, v.shape[0]) + v.astype("<i2").tobytes()


def params_from_bytes(buf: bytes) -> np.ndarray:
    (channels,) = _check_header(buf, _PARAM_HDR, b"TBNP", "parameters")
    body = buf[_PARAM_HDR.size:]
    if len(body) % 2 or channels == 0 or (len(body) // 2) % channels:
        raise FormatError(f"parameters: {len(body)} payload bytes do not divide into {channels} channels")
    v = np.frombuffer(body, dtype="<i2").astype(np.int32)
    per = v.size // channels
    return v if per == 1 else v.reshape(channels, per)


def write_params(path, values) -> None:
    Path(path).write_bytes(params_to_bytes(values))


def read_params(path) -> np.ndarray:
    return params_from_bytes(Path(path).read_bytes())


def parse_cifar10(buf: bytes) -> tuple[np.ndarray, np.ndarray]:
    """Split a CIFAR-10 binary batch into labels (n,) and RGB planes (n, 3, 32, 32)."""
    whole, rest = divmod(len(buf), CIFAR_RECORD)
    if rest:
        raise FormatError(f"truncated CIFAR-10 record at byte offset {whole * CIFAR_RECORD} "
                          f"({rest} of {CIFAR_RECORD} bytes present)")
    recs = np.frombuffer(buf, dtype=np.uint8).reshape(whole, CIFAR_RECORD)
    return recs[:, 0].astype(np.int64), recs[:, 1:].reshape(whole, 3, 32, 32)


def read_cifar10(path) -> tuple[np.ndarray, np.ndarray]:
    return parse_cifar10(Path(path).read_bytes())
