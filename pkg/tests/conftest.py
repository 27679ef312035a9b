import time
from contextlib import contextmanager
from fractions import Fraction

import numpy as np
import pytest

from tbnaccel.network import LayerKind, LayerSpec, NetworkConfig
from tbnaccel.sparse import BinaryWeightTensor, TernaryTensor
from tbnaccel import golden


# -- dense integer oracles (no XOR, no popcount, no skipping) ---------------

def dense_conv(x: np.ndarray, signs: np.ndarray) -> np.ndarray:
    """Plain loop 3x3 convolution, padding 1, on integer arrays."""
    h, w, cin = x.shape
    cout = signs.shape[3]
    out = np.zeros((h, w, cout), dtype=np.int64)
    for y in range(h):
        for xx in range(w):
            for kr in range(3):
                for kc in range(3):
                    iy, ix = y + kr - 1, xx + kc - 1
                    if 0 <= iy < h and 0 <= ix < w:
                        out[y, xx] += x[iy, ix].astype(np.int64) @ signs[kr, kc].astype(np.int64)
    return out


def dense_bn(v: np.ndarray, factors) -> np.ndarray:
    out = np.empty(v.shape, dtype=np.int64)
    for idx in np.ndindex(v.shape):
        r = round(Fraction(int(v[idx]) * int(factors[idx[-1]]), 256))  # Fraction rounds half to even
        out[idx] = min(max(r, -32768), 32767)
    return out


def dense_infer(net: NetworkConfig, x: np.ndarray) -> np.ndarray:
    v = x.astype(np.int64)
    for l in net.layers:
        if l.kind is LayerKind.CONV3X3:
            v = dense_conv(v, l.weights.signs)
        elif l.kind is LayerKind.FC:
            h, w, c = v.shape
            g = -(-c // 32)
            pad = np.zeros((h, w, g * 32), dtype=np.int64)
            pad[..., :c] = v
            # group-major flatten: 32-channel group, then row-major position, then channel
            flat = pad.reshape(h * w, g, 32).transpose(1, 0, 2).reshape(g, h * w * 32)
            keep = np.zeros((h * w, g * 32), dtype=bool)
            keep[:, :c] = True
            keep = keep.reshape(h * w, g, 32).transpose(1, 0, 2).reshape(-1)
            v = (flat.reshape(-1)[keep] @ l.weights.signs[0, 0].astype(np.int64)).reshape(1, 1, -1)
        elif l.kind is LayerKind.POOL_RELU:
            h, w, c = v.shape
            out = np.zeros((h // 2, w // 2, c), dtype=np.int64)
            for y in range(h // 2):
                for xx in range(w // 2):
                    out[y, xx] = np.maximum(v[2 * y:2 * y + 2, 2 * xx:2 * xx + 2].max(axis=(0, 1)), 0)
            v = out
        elif l.kind is LayerKind.BATCH_NORM:
            v = dense_bn(v, l.bn_factors)
        elif l.kind is LayerKind.QUANTIZE:
            t = l.quant_thresholds
            v = np.where(v > t[:, 0], 1, np.where(v < t[:, 1], -1, 0))
    return v.reshape(-1)


# -- random small networks --------------------------------------------------

_TEMPLATES = (
    ("fc",),
    ("conv", "qnt", "fc"),
    ("conv", "pool", "qnt", "fc"),
    ("conv", "bn", "qnt", "fc"),
    ("fc", "qnt", "fc"),
)


def random_small_net(rng: np.random.Generator, density: float = 0.462):
    """A <= 4 layer network (spatial <= 8x8, channels <= 64) with calibrated quantizers, plus an input."""
    template = _TEMPLATES[rng.integers(len(_TEMPLATES))]
    side = int(rng.choice([2, 4, 6, 8]))
    shape = (side, int(rng.choice([2, 4, 6, 8])), int(rng.integers(1, 65)))
    classes = int(rng.integers(2, 11))
    layers = []
    cur = shape
    for i, kind in enumerate(template):
        name = f"l{i}"
        h, w, c = cur
        if kind == "conv":
            cout = int(rng.integers(1, 65))
            l = LayerSpec(name, LayerKind.CONV3X3, cur, (h, w, cout),
                          weights=BinaryWeightTensor.random(3, 3, c, cout, rng))
        elif kind == "fc":
            cout = classes if i == len(template) - 1 else int(rng.integers(2, 65))
            l = LayerSpec(name, LayerKind.FC, cur, (1, 1, cout),
                          weights=BinaryWeightTensor.random(1, 1, h * w * c, cout, rng))
        elif kind == "pool":
            l = LayerSpec(name, LayerKind.POOL_RELU, cur, (h // 2, w // 2, c))
        elif kind == "bn":
            l = LayerSpec(name, LayerKind.BATCH_NORM, cur, cur, bn_factors=rng.integers(64, 512, c))
        else:
            l = LayerSpec(name, LayerKind.QUANTIZE, cur, cur, quant_thresholds=np.tile([1, -1], (c, 1)))
        layers.append(l)
        cur = l.out_shape
    net = NetworkConfig(tuple(layers), classes, "small")
    x = TernaryTensor.random(shape, density, rng)
    probes = [x] + [TernaryTensor.random(shape, density, rng) for _ in range(3)]
    return golden.calibrate_quantizers(net, probes, density), x


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance reporting ---------------------------------------------------

@pytest.fixture
def criterion(request):
    """Context manager recording one PASS/FAIL line per acceptance criterion."""
    lines = request.config.__dict__.setdefault("_acceptance_lines", [])

    @contextmanager
    def run(number, title, limit_s):
        info = {}
        t0 = time.perf_counter()
        status = "FAIL"
        try:
            yield info
            elapsed = time.perf_counter() - t0
            if elapsed >= limit_s:
                info["runtime"] = f"{elapsed:.2f}s exceeds {limit_s}s"
                raise AssertionError(f"criterion {number} took {elapsed:.2f}s, limit {limit_s}s")
            status = "PASS"
        finally:
            elapsed = time.perf_counter() - t0
            detail = "; ".join(f"{k}={v}" for k, v in info.items())
            lines.append(f"[{status}] criterion {number:>2}: {title} ({elapsed:.2f}s) {detail}".rstrip())

    return run


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.__dict__.get("_acceptance_lines")
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
