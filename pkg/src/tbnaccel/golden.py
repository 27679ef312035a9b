"""Bit-exact reference implementation of ternary-input binary-weight inference.

Conv and FC layers are evaluated in the XOR/popcount form the hardware uses:
for a non-zero input with sign bit s and weight bit b the product is +1 when
s == b and -1 otherwise, so a dot product over non-zeros is
``nnz - 2 * popcount(nz & (s ^ b))``.  Zero inputs never enter the sum.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, PartialSumOverflow
from .network import LayerKind, NetworkConfig, Q88_ONE
from .sparse import BinaryWeightTensor, TernaryTensor, TraversalOrder

PSUM_MIN, PSUM_MAX = -32768, 32767


def xor_mac(input_sign_bit: int, weight_bit: int) -> int:
    return -1 if (input_sign_bit ^ weight_bit) & 1 else 1


class PartialSumTensor:
    """Signed 16-bit partial sums, shape (H, W, C)."""

    __slots__ = ("values",)

    def __init__(self, values):
        v = np.asarray(values)
        if v.ndim != 3:
            raise ValueError(f"partial sums must be (H, W, C), got {v.shape}")
        if v.size and (v.min() < PSUM_MIN or v.max() > PSUM_MAX):
            raise PartialSumOverflow(f"partial sum range [{v.min()}, {v.max()}] exceeds 16 bits")
        v = v.astype(np.int32)
        v.setflags(write=False)
        self.values = v

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(int(s) for s in self.values.shape)

    def __eq__(self, other):
        if not isinstance(other, PartialSumTensor):
            return NotImplemented
        return np.array_equal(self.values, other.values)

    __hash__ = None

    def __repr__(self):
        return f"PartialSumTensor(shape={self.shape})"


def _xor_dot(pos: np.ndarray, neg: np.ndarray, wbits: np.ndarray) -> np.ndarray:
    """pos/neg: (N, K) 0/1 indicator of +1/-1 inputs; wbits: (K, M) weight bits."""
    # float64 matmul is exact for these magnitudes and uses BLAS
    wb = wbits.astype(np.float64)
    p, n = pos.astype(np.float64), neg.astype(np.float64)
    nnz = (p + n).sum(axis=1, keepdims=True)
    mismatches = p @ (1.0 - wb) + n @ wb  # popcount(nz & (s ^ b))
    return (nnz - 2 * mismatches).astype(np.int64)


def ternary_conv3x3(x: TernaryTensor, w: BinaryWeightTensor) -> PartialSumTensor:
    if (w.kernel_h, w.kernel_w) != (3, 3) or w.in_channels != x.channels:
        raise ConfigError(f"conv weights {w.dims} do not fit input {x.shape}")
    h, wd, c = x.shape
    padded = np.pad(x.data.astype(np.int64), ((1, 1), (1, 1), (0, 0)))
    pos, neg = (padded > 0).astype(np.int64), (padded < 0).astype(np.int64)
    bits = w.bit_array
    out = np.zeros((h * wd, w.out_channels), dtype=np.int64)
    for kr in range(3):
        for kc in range(3):
            p = pos[kr:kr + h, kc:kc + wd].reshape(-1, c)
            n = neg[kr:kr + h, kc:kc + wd].reshape(-1, c)
            out += _xor_dot(p, n, bits[kr, kc])
    return PartialSumTensor(out.reshape(h, wd, w.out_channels))


def fully_connected(x: TernaryTensor, w: BinaryWeightTensor) -> PartialSumTensor:
    flat = x.flatten(TraversalOrder.GROUP_MAJOR).astype(np.int64)
    if w.in_channels != flat.size or (w.kernel_h, w.kernel_w) != (1, 1):
        raise ConfigError(f"FC weights {w.dims} do not fit {flat.size} inputs")
    out = _xor_dot((flat > 0)[None].astype(np.int64), (flat < 0)[None].astype(np.int64), w.bit_array[0, 0])
    return PartialSumTensor(out.reshape(1, 1, -1))


def pool_relu(x: PartialSumTensor) -> PartialSumTensor:
    h, w, c = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"pool_relu needs even height and width, got {h}x{w}")
    pooled = x.values.reshape(h // 2, 2, w // 2, 2, c).max(axis=(1, 3))
    return PartialSumTensor(np.maximum(pooled, 0))


def _round_half_even_q8(prod: np.ndarray) -> np.ndarray:
    floor = prod >> 8
    rem = prod & 0xFF
    up = (rem > 128) | ((rem == 128) & (floor & 1 == 1))
    return floor + up


def batch_norm_counted(x: PartialSumTensor, factors) -> tuple[PartialSumTensor, int]:
    """Scale by Q8.8 factors with round-half-even, saturating to 16 bits; also return #saturations."""
    f = np.asarray(factors, dtype=np.int64)
    if f.shape != (x.shape[2],):
        raise ConfigError(f"need {x.shape[2]} BN factors, got {f.shape}")
    y = _round_half_even_q8(x.values.astype(np.int64) * f)
    sat = int(((y < PSUM_MIN) | (y > PSUM_MAX)).sum())
    return PartialSumTensor(np.clip(y, PSUM_MIN, PSUM_MAX)), sat


def batch_norm(x: PartialSumTensor, factors) -> PartialSumTensor:
    return batch_norm_counted(x, factors)[0]


def quantize_ternary(x: PartialSumTensor, thresholds) -> TernaryTensor:
    t = np.asarray(thresholds, dtype=np.int64).reshape(-1, 2)
    if t.shape[0] != x.shape[2]:
        raise ConfigError(f"need {x.shape[2]} threshold pairs, got {t.shape[0]}")
    pos, neg = t[:, 0], t[:, 1]
    if not (neg < pos).all():
        raise ConfigError("thresholds need neg < pos")
    v = x.values
    return TernaryTensor((v > pos).astype(np.int8) - (v < neg).astype(np.int8))


@dataclass
class InferenceResult:
    logits: np.ndarray
    label: int
    activations: dict[str, TernaryTensor] = field(default_factory=dict)
    bn_saturations: int = 0


def argmax_lowest(logits) -> int:
    # np.argmax already returns the first maximum
    return int(np.argmax(np.asarray(logits)))


def apply_layer(layer, value):
    """One layer step; returns (output, bn saturation count)."""
    k = layer.kind
    if k is LayerKind.CONV3X3:
        return ternary_conv3x3(value, layer.weights), 0
    if k is LayerKind.FC:
        return fully_connected(value, layer.weights), 0
    if k is LayerKind.POOL_RELU:
        return pool_relu(value), 0
    if k is LayerKind.BATCH_NORM:
        return batch_norm_counted(value, layer.bn_factors)
    if k is LayerKind.QUANTIZE:
        return quantize_ternary(value, layer.quant_thresholds), 0
    raise ConfigError(f"unknown layer kind {k}")


def infer(net: NetworkConfig, x: TernaryTensor, keep_activations: bool = False) -> InferenceResult:
    """Run the network; `activations` maps each conv/FC layer name to its ternary input."""
    net.require_params()
    if x.shape != net.input_shape:
        raise ConfigError(f"input shape {x.shape} does not match network input {net.input_shape}")
    acts = {}
    sat = 0
    value = x
    for layer in net.layers:
        if keep_activations and layer.kind in (LayerKind.CONV3X3, LayerKind.FC):
            acts[layer.name] = value
        value, s = apply_layer(layer, value)
        sat += s
    logits = value.values.reshape(-1).astype(np.int64)
    return InferenceResult(logits, argmax_lowest(logits), acts, sat)


def fit_thresholds(values: np.ndarray, target_density: float, min_samples: int = 32) -> np.ndarray:
    """Per-channel integer (pos, neg) so roughly target/2 of samples fall below neg and the
    overall fraction outside [neg, pos] is as close to the target as the data allow.

    values: (samples, C).  With fewer than `min_samples` rows, one pair is fit
    on all channels pooled and shared.
    """
    n, c = values.shape
    if n < min_samples:
        return np.tile(fit_thresholds(values.reshape(-1, 1), target_density, 1), (c, 1))
    out = np.empty((c, 2), dtype=np.int64)
    for ch in range(c):
        v = np.sort(values[:, ch].astype(np.int64))
        cand = np.unique(np.concatenate((v, [v[-1] + 1])))
        below = np.searchsorted(v, cand, side="left")
        neg = cand[int(np.argmin(np.abs(below / n - target_density / 2)))]
        pcand = np.unique(np.concatenate((v, [v[0] - 1], [neg + 1])))
        pcand = pcand[pcand > neg]
        above = n - np.searchsorted(v, pcand, side="right")
        total = (np.searchsorted(v, neg, side="left") + above) / n
        pos = pcand[int(np.argmin(np.abs(total - target_density)))]
        out[ch] = (min(pos, PSUM_MAX), max(neg, PSUM_MIN))
    return out


def calibrate_quantizers(net: NetworkConfig, probes, target_density: float = 0.462) -> NetworkConfig:
    """Fit every quantizer, in order, on the probe batch so its output density approaches the target."""
    values = list(probes)
    for layer in net.layers:
        if layer.kind is LayerKind.QUANTIZE:
            samples = np.concatenate([v.values.reshape(-1, v.shape[2]) for v in values])
            layer_new = layer.with_params(quant_thresholds=fit_thresholds(samples, target_density))
            net = net.replace_layer(layer.name, layer_new)
            layer = layer_new
        values = [apply_layer(layer, v)[0] for v in values]
    return net


def unit_bn(channels: int) -> np.ndarray:
    return np.full(channels, Q88_ONE, dtype=np.int64)
