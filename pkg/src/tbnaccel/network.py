"""Network description: layer specs, default topology, config files, memory budget."""

from __future__ import annotations

import configparser
import enum
import io
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import formats
from .errors import ConfigError, FormatError
from .sparse import BinaryWeightTensor

Shape = tuple[int, int, int]

Q88_ONE = 256
MEMORY_LIMIT_BYTES = 412_000
PSUM_BITS = 16


class LayerKind(enum.Enum):
    CONV3X3 = "conv3x3"
    FC = "fully_connected"
    POOL_RELU = "pool_relu"
    BATCH_NORM = "batch_norm"
    QUANTIZE = "quantize"


# which layers eat/produce ternary maps; the rest work on partial sums
_TERNARY_IN = {LayerKind.CONV3X3, LayerKind.FC}
_TERNARY_OUT = {LayerKind.QUANTIZE}


@dataclass(frozen=True, eq=False)
class LayerSpec:
    name: str
    kind: LayerKind
    in_shape: Shape
    out_shape: Shape
    weight_ref: str | None = None
    bn_ref: str | None = None
    thresholds_ref: str | None = None
    weights: BinaryWeightTensor | None = field(default=None, repr=False)
    bn_factors: np.ndarray | None = field(default=None, repr=False)
    quant_thresholds: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        ins, outs = tuple(map(int, self.in_shape)), tuple(map(int, self.out_shape))
        object.__setattr__(self, "in_shape", ins)
        object.__setattr__(self, "out_shape", outs)
        h, w, c = ins
        k = self.kind
        if k is LayerKind.CONV3X3 and outs[:2] != (h, w):
            raise ConfigError(f"{self.name}: conv3x3 must keep H and W, {ins} -> {outs}")
        if k is LayerKind.POOL_RELU and (h % 2 or w % 2 or outs != (h // 2, w // 2, c)):
            raise ConfigError(f"{self.name}: pool_relu needs even H, W and halves them, {ins} -> {outs}")
        if k in (LayerKind.BATCH_NORM, LayerKind.QUANTIZE) and outs != ins:
            raise ConfigError(f"{self.name}: {k.value} must preserve shape, {ins} -> {outs}")
        if k is LayerKind.FC and outs[:2] != (1, 1):
            raise ConfigError(f"{self.name}: fully_connected output must be 1x1xN, got {outs}")
        if self.bn_factors is not None:
            f = np.asarray(self.bn_factors, dtype=np.int64)
            if f.shape != (c,):
                raise ConfigError(f"{self.name}: expected {c} BN factors, got shape {f.shape}")
            object.__setattr__(self, "bn_factors", f)
        if self.quant_thresholds is not None:
            t = np.asarray(self.quant_thresholds, dtype=np.int64)
            if t.shape != (c, 2):
                raise ConfigError(f"{self.name}: expected ({c}, 2) thresholds, got shape {t.shape}")
            if not (t[:, 1] < t[:, 0]).all():
                raise ConfigError(f"{self.name}: every quantizer needs neg < pos")
            object.__setattr__(self, "quant_thresholds", t)
        if self.weights is not None:
            want = self.expected_weight_dims()
            if self.weights.dims != want:
                raise ConfigError(f"{self.name}: weights are {self.weights.dims}, layer needs {want}")

    def expected_weight_dims(self) -> tuple[int, int, int, int] | None:
        h, w, c = self.in_shape
        if self.kind is LayerKind.CONV3X3:
            return (3, 3, c, self.out_shape[2])
        if self.kind is LayerKind.FC:
            return (1, 1, h * w * c, self.out_shape[2])
        return None

    @property
    def has_params(self) -> bool:
        if self.kind in _TERNARY_IN:
            return self.weights is not None
        if self.kind is LayerKind.BATCH_NORM:
            return self.bn_factors is not None
        if self.kind is LayerKind.QUANTIZE:
            return self.quant_thresholds is not None
        return True

    @property
    def dense_macs(self) -> int:
        """Multiply-accumulates of a dense implementation, padding taps excluded."""
        h, w, c = self.in_shape
        if self.kind is LayerKind.CONV3X3:
            return _taps(h) * _taps(w) * c * self.out_shape[2]
        if self.kind is LayerKind.FC:
            return h * w * c * self.out_shape[2]
        return 0

    def with_params(self, **kw) -> "LayerSpec":
        return replace(self, **kw)


def _taps(n: int) -> int:
    # sum over outputs of in-range kernel taps along one axis, padding 1
    return 3 * n - 2 if n > 1 else 1


@dataclass(frozen=True, eq=False)
class NetworkConfig:
    layers: tuple[LayerSpec, ...]
    class_count: int
    name: str = "tbn"

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise ConfigError("network has no layers")
        if self.class_count < 1:
            raise ConfigError("class_count must be positive")
        if self.layers[0].kind not in _TERNARY_IN:
            raise ConfigError(f"first layer {self.layers[0].name} must consume the ternary input")
        ternary = True
        for prev, cur in zip((None,) + self.layers[:-1], self.layers):
            if prev is not None and prev.out_shape != cur.in_shape:
                raise ConfigError(f"{prev.name} -> {cur.name}: shape {prev.out_shape} does not chain to {cur.in_shape}")
            if (cur.kind in _TERNARY_IN) != ternary:
                want = "a ternary map" if cur.kind in _TERNARY_IN else "partial sums"
                raise ConfigError(f"{cur.name}: {cur.kind.value} needs {want} as input")
            ternary = cur.kind in _TERNARY_OUT
        last = self.layers[-1]
        if last.kind is not LayerKind.FC or last.out_shape[2] != self.class_count:
            raise ConfigError(f"final layer must be fully_connected with {self.class_count} outputs")
        names = [l.name for l in self.layers]
        if len(set(names)) != len(names):
            raise ConfigError("layer names must be unique")

    @property
    def input_shape(self) -> Shape:
        return self.layers[0].in_shape

    def layer(self, name: str) -> LayerSpec:
        for l in self.layers:
            if l.name == name:
                return l
        raise KeyError(name)

    def require_params(self) -> None:
        for l in self.layers:
            if not l.has_params:
                raise ConfigError(f"layer {l.name} ({l.kind.value}) has no parameters loaded")

    def replace_layer(self, name: str, new: LayerSpec) -> "NetworkConfig":
        return replace(self, layers=tuple(new if l.name == name else l for l in self.layers))


def _conv(name, shape, cout):
    h, w, _ = shape
    return LayerSpec(name, LayerKind.CONV3X3, shape, (h, w, cout), weight_ref=f"{name}.tbnw")


def _qnt(name, shape):
    return LayerSpec(name, LayerKind.QUANTIZE, shape, shape, thresholds_ref=f"{name}.tbnp")


def build_network(input_shape: Shape, blocks, fc_hidden: int | None, class_count: int,
                  name: str = "tbn") -> NetworkConfig:
    """VGG-style stack: `blocks` is a list of conv widths per block, each block ends in PL+BN+QNT.

    Every conv that is not last in its block is followed by its own quantizer so
    the next conv sees a ternary map.
    """
    layers = []
    shape = tuple(input_shape)
    n_conv = n_q = n_blk = 0

    def q():
        nonlocal n_q
        n_q += 1
        layers.append(_qnt(f"qn{n_q}", shape))

    for widths in blocks:
        n_blk += 1
        for i, cout in enumerate(widths):
            n_conv += 1
            layers.append(_conv(f"cv{n_conv}", shape, cout))
            shape = layers[-1].out_shape
            if i < len(widths) - 1:
                q()
        h, w, c = shape
        layers.append(LayerSpec(f"pl{n_blk}", LayerKind.POOL_RELU, shape, (h // 2, w // 2, c)))
        shape = layers[-1].out_shape
        layers.append(LayerSpec(f"bn{n_blk}", LayerKind.BATCH_NORM, shape, shape, bn_ref=f"bn{n_blk}.tbnp"))
        q()
    widths = ([fc_hidden] if fc_hidden else []) + [class_count]
    for i, cout in enumerate(widths, 1):
        layers.append(LayerSpec(f"fc{i}", LayerKind.FC, shape, (1, 1, cout), weight_ref=f"fc{i}.tbnw"))
        shape = layers[-1].out_shape
        if i < len(widths):
            q()
    return NetworkConfig(tuple(layers), class_count, name)


def default_network() -> NetworkConfig:
    """Six convs in three blocks (64, 128, 256 wide), FC 4096 -> 256 -> 10, two-channel 32x32 input."""
    return build_network((32, 32, 2), [[64, 64], [128, 128], [256, 256]], 256, 10, name="tbn-default")


def random_parameters(net: NetworkConfig, rng: np.random.Generator) -> NetworkConfig:
    """Random +-1 weights, unit BN factors and placeholder thresholds (+1, -1)."""
    layers = []
    for l in net.layers:
        c = l.in_shape[2]
        if l.kind in _TERNARY_IN:
            l = l.with_params(weights=BinaryWeightTensor.random(*l.expected_weight_dims(), rng))
        elif l.kind is LayerKind.BATCH_NORM:
            l = l.with_params(bn_factors=np.full(c, Q88_ONE))
        elif l.kind is LayerKind.QUANTIZE:
            l = l.with_params(quant_thresholds=np.tile([1, -1], (c, 1)))
        layers.append(l)
    return replace(net, layers=tuple(layers))


def _fmt_shape(s: Shape) -> str:
    return "x".join(map(str, s))


def _parse_shape(text: str, where: str) -> Shape:
    try:
        parts = tuple(int(p) for p in text.lower().replace(",", "x").split("x"))
    except ValueError:
        raise ConfigError(f"{where}: bad shape {text!r}") from None
    if len(parts) != 3 or min(parts) < 1:
        raise ConfigError(f"{where}: shape must be HxWxC with positive entries, got {text!r}")
    return parts


def network_to_text(net: NetworkConfig) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    cp["network"] = {"name": net.name, "class_count": str(net.class_count)}
    for l in net.layers:
        sec = {"kind": l.kind.value, "in_shape": _fmt_shape(l.in_shape), "out_shape": _fmt_shape(l.out_shape)}
        for key, ref in (("weights", l.weight_ref), ("bn_factors", l.bn_ref), ("thresholds", l.thresholds_ref)):
            if ref:
                sec[key] = ref
        cp[f"layer {l.name}"] = sec
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def parse_network(text: str) -> NetworkConfig:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"network config: {e}") from None
    if "network" not in cp:
        raise ConfigError("network config lacks a [network] section")
    layers = []
    for sec in cp.sections():
        if not sec.startswith("layer "):
            continue
        name = sec[len("layer "):].strip()
        body = cp[sec]
        try:
            kind = LayerKind(body.get("kind", ""))
        except ValueError:
            raise ConfigError(f"layer {name}: unknown kind {body.get('kind')!r}") from None
        layers.append(LayerSpec(
            name, kind,
            _parse_shape(body.get("in_shape", ""), f"layer {name}"),
            _parse_shape(body.get("out_shape", ""), f"layer {name}"),
            weight_ref=body.get("weights"), bn_ref=body.get("bn_factors"),
            thresholds_ref=body.get("thresholds")))
    try:
        classes = cp["network"].getint("class_count")
    except ValueError:
        raise ConfigError("class_count must be an integer") from None
    if classes is None:
        raise ConfigError("[network] needs class_count")
    return NetworkConfig(tuple(layers), classes, cp["network"].get("name", "tbn"))


def _load_file(base: Path, ref: str | None, layer: LayerSpec, what: str, reader):
    if not ref:
        raise ConfigError(f"layer {layer.name}: no {what} file declared")
    path = base / ref
    if not path.is_file():
        raise ConfigError(f"layer {layer.name}: {what} file {path} not found")
    try:
        return reader(path)
    except FormatError as e:
        raise FormatError(f"layer {layer.name}: {e}") from None


def load_network(path, with_params: bool = True) -> NetworkConfig:
    """Read a config file; parameter paths are resolved relative to its directory."""
    path = Path(path)
    try:
        net = parse_network(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError(f"cannot read network config {path}: {e}") from None
    if not with_params:
        return net
    base = path.parent
    layers = []
    for l in net.layers:
        if l.kind in _TERNARY_IN:
            l = l.with_params(weights=_load_file(base, l.weight_ref, l, "weight", formats.read_weights))
        elif l.kind is LayerKind.BATCH_NORM:
            l = l.with_params(bn_factors=_load_file(base, l.bn_ref, l, "BN factor", formats.read_params))
        elif l.kind is LayerKind.QUANTIZE:
            l = l.with_params(quant_thresholds=_load_file(base, l.thresholds_ref, l, "threshold", formats.read_params))
        layers.append(l)
    return replace(net, layers=tuple(layers))


def save_network(net: NetworkConfig, path) -> list[Path]:
    """Write the config file plus every loaded parameter file next to it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    written = [path]
    path.write_text(network_to_text(net), encoding="utf-8")
    for l in net.layers:
        if l.weights is not None and l.weight_ref:
            formats.write_weights(path.parent / l.weight_ref, l.weights)
            written.append(path.parent / l.weight_ref)
        if l.bn_factors is not None and l.bn_ref:
            formats.write_params(path.parent / l.bn_ref, l.bn_factors)
            written.append(path.parent / l.bn_ref)
        if l.quant_thresholds is not None and l.thresholds_ref:
            formats.write_params(path.parent / l.thresholds_ref, l.quant_thresholds)
            written.append(path.parent / l.thresholds_ref)
    return written


def memory_budget_bits(net: NetworkConfig) -> dict[str, int]:
    """On-chip storage estimate.

    weights: packed 1-bit weights of every conv/FC layer.
    activations: worst case over conv/FC layers of a 2-bit input map plus the
      2-bit ternary map the layer's block eventually produces (or 16-bit logits).
    tmp: a three-row band of 16-bit partial sums for conv, one vector for FC.
    params: 16-bit BN factors and threshold pairs.
    """
    weights = act = tmp = params = 0
    layers = net.layers
    for i, l in enumerate(layers):
        h, w, c = l.in_shape
        oh, ow, oc = l.out_shape
        if l.kind in _TERNARY_IN:
            weights += int(np.prod(l.expected_weight_dims()))
            out_bits = PSUM_BITS * oc
            for nxt in layers[i + 1:]:
                if nxt.kind in _TERNARY_IN:
                    break
                if nxt.kind is LayerKind.QUANTIZE:
                    out_bits = 2 * int(np.prod(nxt.out_shape))
                    break
            act = max(act, 2 * h * w * c + out_bits)
            tmp = max(tmp, PSUM_BITS * (3 * ow * oc if l.kind is LayerKind.CONV3X3 else oc))
        elif l.kind is LayerKind.BATCH_NORM:
            params += PSUM_BITS * c
        elif l.kind is LayerKind.QUANTIZE:
            params += 2 * PSUM_BITS * c
    total = weights + act + tmp + params
    return {"weights": weights, "activations": act, "tmp": tmp, "params": params, "total": total}
