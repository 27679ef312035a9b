"""Ternary tensors, the sparsity-map/value-stream encoding and 32-bit memory images.

Element traversal for the map and value stream is channel-group-major: all
spatial positions (row-major) of channels 0..31, then all positions of
channels 32..63, and so on, channel index ascending inside a group.  This is
the same order in which MAP words are laid out, so the value FIFO can be
consumed strictly sequentially while walking MAP addresses.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import FormatError

WORD_BITS = 32
_BIT_WEIGHTS = np.left_shift(np.uint64(1), np.arange(WORD_BITS, dtype=np.uint64))


class TraversalOrder(enum.Enum):
    GROUP_MAJOR = "group-major"
    ROW_MAJOR = "row-major"  # plain (row, col, channel) flatten


def channel_groups(channels: int) -> int:
    return -(-channels // WORD_BITS)


@lru_cache(maxsize=64)
def traversal_index(shape: tuple[int, int, int], order: TraversalOrder = TraversalOrder.GROUP_MAJOR) -> np.ndarray:
    """Flat (row, col, channel) indices visited in `order`."""
    h, w, c = shape
    flat = np.arange(h * w * c).reshape(h * w, c)
    if order is TraversalOrder.ROW_MAJOR:
        idx = flat.reshape(-1)
    else:
        idx = np.concatenate([flat[:, g * WORD_BITS:(g + 1) * WORD_BITS].reshape(-1)
                              for g in range(channel_groups(c))])
    idx.setflags(write=False)
    return idx


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TernaryTensor:
    """Dense ternary activation map indexed (row, col, channel)."""

    data: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.data)
        if a.ndim != 3 or min(a.shape) < 1:
            raise ValueError(f"ternary tensor needs a non-empty (H, W, C) shape, got {a.shape}")
        if not np.isin(a, (-1, 0, 1)).all():
            raise ValueError("ternary tensor elements must be -1, 0 or +1")
        object.__setattr__(self, "data", _frozen(a.astype(np.int8)))

    @classmethod
    def zeros(cls, height: int, width: int, channels: int) -> "TernaryTensor":
        return cls(np.zeros((height, width, channels), dtype=np.int8))

    @classmethod
    def random(cls, shape, density: float, rng: np.random.Generator) -> "TernaryTensor":
        """Uniformly random tensor with exactly round(density * N) non-zeros, signs fair."""
        n = int(np.prod(shape))
        nnz = int(round(density * n))
        flat = np.zeros(n, dtype=np.int8)
        pos = rng.choice(n, size=nnz, replace=False)
        flat[pos] = rng.choice(np.array([-1, 1], dtype=np.int8), size=nnz)
        return cls(flat.reshape(shape))

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(int(s) for s in self.data.shape)

    @property
    def height(self) -> int:
        return self.shape[0]

    @property
    def width(self) -> int:
        return self.shape[1]

    @property
    def channels(self) -> int:
        return self.shape[2]

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def nnz(self) -> int:
        return int(np.count_nonzero(self.data))

    @property
    def density(self) -> float:
        return self.nnz / self.size

    def flatten(self, order: TraversalOrder = TraversalOrder.GROUP_MAJOR) -> np.ndarray:
        """Elements in traversal order; this is also the FC input ordering."""
        return self.data.reshape(-1)[traversal_index(self.shape, order)]

    def __eq__(self, other):
        if not isinstance(other, TernaryTensor):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.data, other.data))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class SparseEncoding:
    """1-bit sparsity map plus sign stream (1 = +1, 0 = -1) for the non-zeros."""

    shape: tuple[int, int, int]
    map_bits: np.ndarray
    value_bits: np.ndarray
    order: TraversalOrder = TraversalOrder.GROUP_MAJOR

    def __post_init__(self):
        shape = tuple(int(s) for s in self.shape)
        if len(shape) != 3 or min(shape) < 1:
            raise FormatError(f"bad encoding shape {self.shape}")
        m = np.asarray(self.map_bits, dtype=np.uint8).reshape(-1)
        v = np.asarray(self.value_bits, dtype=np.uint8).reshape(-1)
        if m.size != shape[0] * shape[1] * shape[2]:
            raise FormatError(f"map has {m.size} bits, shape {shape} needs {shape[0] * shape[1] * shape[2]}")
        if (m > 1).any() or (v > 1).any():
            raise FormatError("map and value streams must hold bits")
        nnz = int(m.sum())
        if v.size != nnz:
            raise FormatError(f"value stream has {v.size} bits but map marks {nnz} non-zeros")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "map_bits", _frozen(m))
        object.__setattr__(self, "value_bits", _frozen(v))

    @property
    def size(self) -> int:
        return int(self.map_bits.size)

    @property
    def nnz(self) -> int:
        return int(self.value_bits.size)

    @property
    def density(self) -> float:
        return self.nnz / self.size

    def dense_map(self) -> np.ndarray:
        """Map bits scattered back to an (H, W, C) boolean array."""
        out = np.zeros(self.size, dtype=bool)
        out[traversal_index(self.shape, self.order)] = self.map_bits.astype(bool)
        return out.reshape(self.shape)

    def __eq__(self, other):
        if not isinstance(other, SparseEncoding):
            return NotImplemented
        return (self.shape == other.shape and self.order is other.order
                and np.array_equal(self.map_bits, other.map_bits)
                and np.array_equal(self.value_bits, other.value_bits))

    __hash__ = None


def encode_sparse(t: TernaryTensor, traversal: TraversalOrder = TraversalOrder.GROUP_MAJOR) -> SparseEncoding:
    seq = t.flatten(traversal)
    nz = seq != 0
    return SparseEncoding(t.shape, nz.astype(np.uint8), (seq[nz] > 0).astype(np.uint8), traversal)


def decode_sparse(s: SparseEncoding) -> TernaryTensor:
    if s.value_bits.size != int(s.map_bits.sum()):
        raise FormatError("value stream length does not match the sparsity map")
    seq = np.zeros(s.size, dtype=np.int8)
    seq[s.map_bits.astype(bool)] = np.where(s.value_bits == 1, 1, -1)
    flat = np.empty(s.size, dtype=np.int8)
    flat[traversal_index(s.shape, s.order)] = seq
    return TernaryTensor(flat.reshape(s.shape))


@dataclass(frozen=True, eq=False)
class BinaryWeightTensor:
    """+-1 weights stored as bits (1 = +1) in (kernel row, kernel col, in, out) order."""

    kernel_h: int
    kernel_w: int
    in_channels: int
    out_channels: int
    bits: np.ndarray

    def __post_init__(self):
        dims = (self.kernel_h, self.kernel_w, self.in_channels, self.out_channels)
        if min(dims) < 1:
            raise ValueError(f"weight dimensions must be positive, got {dims}")
        b = np.asarray(self.bits, dtype=np.uint8).reshape(-1)
        if b.size != int(np.prod(dims)):
            raise FormatError(f"weight payload has {b.size} bits, expected {int(np.prod(dims))}")
        if (b > 1).any():
            raise FormatError("weight payload must hold bits")
        object.__setattr__(self, "bits", _frozen(b))

    @classmethod
    def from_signs(cls, signs: np.ndarray) -> "BinaryWeightTensor":
        s = np.asarray(signs)
        if s.ndim == 2:  # fully connected (in, out)
            s = s[None, None]
        if not np.isin(s, (-1, 1)).all():
            raise ValueError("binary weights must be -1 or +1")
        return cls(*s.shape, bits=(s > 0).astype(np.uint8))

    @classmethod
    def random(cls, kernel_h, kernel_w, in_channels, out_channels, rng: np.random.Generator):
        n = kernel_h * kernel_w * in_channels * out_channels
        return cls(kernel_h, kernel_w, in_channels, out_channels, rng.integers(0, 2, n, dtype=np.uint8))

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return (self.kernel_h, self.kernel_w, self.in_channels, self.out_channels)

    @property
    def bit_array(self) -> np.ndarray:
        return self.bits.reshape(self.dims)

    @property
    def signs(self) -> np.ndarray:
        return self.bit_array.astype(np.int8) * 2 - 1

    def negated(self) -> "BinaryWeightTensor":
        return BinaryWeightTensor(*self.dims, bits=1 - self.bits)

    def __eq__(self, other):
        if not isinstance(other, BinaryWeightTensor):
            return NotImplemented
        return self.dims == other.dims and bool(np.array_equal(self.bits, other.bits))

    __hash__ = None


class MemoryKind(enum.Enum):
    MAP = "MAP"
    WGH = "WGH"
    VAL = "VAL"


@dataclass(frozen=True, eq=False)
class MemoryImage:
    """Contents of one 32-bit wide on-chip memory.

    `dims` records the logical tensor the words came from: (H, W, C) for MAP,
    (kernel_h, kernel_w, in, out) for WGH, (nnz,) for VAL.
    """

    kind: MemoryKind
    words: np.ndarray
    dims: tuple[int, ...]
    word_width: int = field(default=WORD_BITS)

    def __post_init__(self):
        if self.word_width != WORD_BITS:
            raise ValueError("memory images are 32 bits wide")
        object.__setattr__(self, "words", _frozen(np.asarray(self.words, dtype=np.uint32)))

    def __len__(self):
        return int(self.words.size)


def _pack_words(bits: np.ndarray) -> np.ndarray:
    """(..., 32) bit array -> (...) uint32, bit i of the word = bits[..., i]."""
    return (bits.astype(np.uint64) * _BIT_WEIGHTS).sum(axis=-1).astype(np.uint32)


def unpack_words(words: np.ndarray) -> np.ndarray:
    w = np.asarray(words, dtype=np.uint64)[..., None]
    return ((w >> np.arange(WORD_BITS, dtype=np.uint64)) & np.uint64(1)).astype(np.uint8)


def pack_map_memory(s: SparseEncoding) -> MemoryImage:
    """MAP image: word g*H*W + p holds channels 32g..32g+31 of spatial position p."""
    h, w, c = s.shape
    groups = channel_groups(c)
    bits = np.zeros((h * w, groups * WORD_BITS), dtype=np.uint8)
    bits[:, :c] = s.dense_map().reshape(h * w, c)
    bits = bits.reshape(h * w, groups, WORD_BITS).transpose(1, 0, 2)
    return MemoryImage(MemoryKind.MAP, _pack_words(bits).reshape(-1), (h, w, c))


def unpack_map_memory(img: MemoryImage) -> np.ndarray:
    """Inverse of pack_map_memory, returning the (H, W, C) boolean map."""
    if img.kind is not MemoryKind.MAP:
        raise FormatError(f"expected a MAP image, got {img.kind.value}")
    h, w, c = img.dims
    groups = channel_groups(c)
    if len(img) != groups * h * w:
        raise FormatError(f"MAP image has {len(img)} words, expected {groups * h * w}")
    bits = unpack_words(img.words).reshape(groups, h * w, WORD_BITS).transpose(1, 0, 2)
    return bits.reshape(h * w, groups * WORD_BITS)[:, :c].reshape(h, w, c).astype(bool)


def pack_value_memory(s: SparseEncoding) -> MemoryImage:
    """Value stream packed 32 bits per word, first stream bit in bit 0."""
    n = s.nnz
    bits = np.zeros(channel_groups(max(n, 1)) * WORD_BITS, dtype=np.uint8)
    bits[:n] = s.value_bits
    return MemoryImage(MemoryKind.VAL, _pack_words(bits.reshape(-1, WORD_BITS)), (n,))


def weight_word_address(dims: tuple[int, int, int, int], row: int, col: int, in_ch: int, out_group: int) -> int:
    kh, kw, cin, cout = dims
    return ((row * kw + col) * cin + in_ch) * channel_groups(cout) + out_group


def pack_weight_memory(w: BinaryWeightTensor) -> MemoryImage:
    """WGH image, one word per (kernel row, kernel col, in-channel, 32-output group).

    Kernel rows occupy contiguous address ranges, so PCL r streams
    words [r * kw * in * G, (r + 1) * kw * in * G).
    """
    kh, kw, cin, cout = w.dims
    groups = channel_groups(cout)
    bits = np.zeros((kh, kw, cin, groups * WORD_BITS), dtype=np.uint8)
    bits[..., :cout] = w.bit_array
    words = _pack_words(bits.reshape(kh, kw, cin, groups, WORD_BITS))
    return MemoryImage(MemoryKind.WGH, words.reshape(-1), w.dims)


def unpack_weight_memory(img: MemoryImage) -> BinaryWeightTensor:
    if img.kind is not MemoryKind.WGH:
        raise FormatError(f"expected a WGH image, got {img.kind.value}")
    kh, kw, cin, cout = img.dims
    groups = channel_groups(cout)
    if len(img) != kh * kw * cin * groups:
        raise FormatError(f"WGH image has {len(img)} words, expected {kh * kw * cin * groups}")
    bits = unpack_words(img.words).reshape(kh, kw, cin, groups * WORD_BITS)[..., :cout]
    return BinaryWeightTensor(kh, kw, cin, cout, bits)


def kernel_row_words(img: MemoryImage, row: int) -> np.ndarray:
    kh, kw, cin, cout = img.dims
    span = kw * cin * channel_groups(cout)
    return img.words[row * span:(row + 1) * span]


@dataclass(frozen=True)
class SizeStats:
    elements: int
    nnz: int

    @property
    def dense8_bits(self) -> int:
        return 8 * self.elements

    @property
    def dense2_bits(self) -> int:
        return 2 * self.elements

    @property
    def encoded_bits(self) -> int:
        return self.elements + self.nnz

    @property
    def reduction_2bit_vs_8bit(self) -> float:
        return 1.0 - self.dense2_bits / self.dense8_bits

    @property
    def reduction_encoded_vs_2bit(self) -> float:
        return 1.0 - self.encoded_bits / self.dense2_bits

    @property
    def reduction_encoded_vs_8bit(self) -> float:
        return 1.0 - self.encoded_bits / self.dense8_bits

    def __add__(self, other: "SizeStats") -> "SizeStats":
        return SizeStats(self.elements + other.elements, self.nnz + other.nnz)


def size_report(s: SparseEncoding) -> SizeStats:
    return SizeStats(s.size, s.nnz)
