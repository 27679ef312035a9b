"""Data-size, MAC, throughput, energy and figure-of-merit accounting."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .accel import AccelConfig, SimReport
from .errors import ConfigError
from .network import LayerKind, NetworkConfig
from .sparse import SizeStats, SparseEncoding, TernaryTensor, encode_sparse, size_report

# Published reference points, shown beside computed values.
REF_ACCURACY = 82.56
REF_TIME_S = 0.44
REF_POWER_MW = 1.6
REF_FOM = 257.9
REF_GOPS = 46.4
REF_CYCLE_REDUCTION = 0.35
REF_MAC_SHARE = 0.177
REF_DATA_REDUCTION_2BIT = 0.75
REF_DATA_REDUCTION_ENCODED = 0.269
REF_MAC_REDUCTION = 0.355


@dataclass(frozen=True)
class FomInputs:
    accuracy: float  # percent
    processing_time: float  # seconds
    energy: float  # millijoules

    def __post_init__(self):
        if not 0 < self.accuracy <= 100:
            raise ValueError(f"accuracy must be in (0, 100], got {self.accuracy}")
        if self.processing_time <= 0 or self.energy <= 0:
            raise ValueError("processing time and energy must be positive")


def fom(inputs: FomInputs) -> float:
    """Accuracy / (time * energy), in % per second per millijoule."""
    return inputs.accuracy / (inputs.processing_time * inputs.energy)


@dataclass(frozen=True)
class PowerModel:
    """Piecewise-linear (clock Hz -> mW) table."""

    points: tuple[tuple[float, float], ...] = ((10e6, REF_POWER_MW),)

    def __post_init__(self):
        pts = tuple(sorted((float(f), float(p)) for f, p in self.points))
        if not pts:
            raise ConfigError("power model needs at least one point")
        if len({f for f, _ in pts}) != len(pts):
            raise ConfigError("duplicate frequency in power model")
        if any(p1 < p0 for (_, p0), (_, p1) in zip(pts, pts[1:])):
            raise ConfigError("power must be non-decreasing in frequency")
        if any(p < 0 for _, p in pts):
            raise ConfigError("power must be non-negative")
        object.__setattr__(self, "points", pts)

    @classmethod
    def parse(cls, text: str) -> "PowerModel":
        """'1e7:1.6,1e8:9' -> points."""
        try:
            pts = [tuple(float(v) for v in item.split(":")) for item in text.split(",") if item.strip()]
        except ValueError:
            raise ConfigError(f"bad power table {text!r}") from None
        if any(len(p) != 2 for p in pts):
            raise ConfigError(f"bad power table {text!r}, expected HZ:MW pairs")
        return cls(tuple(pts))

    def power_mw(self, clock_hz: float, extrapolate: bool = False) -> float:
        f = np.array([p[0] for p in self.points])
        p = np.array([p[1] for p in self.points])
        if not (f[0] <= clock_hz <= f[-1]) and not extrapolate:
            raise ConfigError(f"clock {clock_hz:g} Hz outside the power table [{f[0]:g}, {f[-1]:g}]")
        return float(np.interp(clock_hz, f, p))  # flat beyond the ends


def energy_mj(power_mw: float, time_s: float) -> float:
    return power_mw * time_s


def energy_report(report: SimReport, power: PowerModel, extrapolate: bool = False) -> float:
    return energy_mj(power.power_mw(report.clock_hz, extrapolate), report.time_s)


def throughput_report(report: SimReport) -> dict[str, float]:
    """GOPS under both op-counting conventions (2 ops per MAC)."""
    t = report.time_s
    if t <= 0:
        return {"dense_equivalent_gops": 0.0, "executed_gops": 0.0}
    return {"dense_equivalent_gops": 2 * report.dense_macs / t / 1e9,
            "executed_gops": 2 * report.executed_macs / t / 1e9}


def peak_gops(cfg: AccelConfig) -> float:
    return cfg.pcl_count * cfg.pe_per_pcl * cfg.xor_lanes_per_pe * 2 * cfg.clock_hz / 1e9


def _as_encoding(a) -> SparseEncoding:
    return a if isinstance(a, SparseEncoding) else encode_sparse(a)


def _nonzero_map(a) -> np.ndarray:
    if isinstance(a, TernaryTensor):
        return a.data != 0
    return a.dense_map()


def _reach(n: int) -> np.ndarray:
    """Per index along an axis: how many 3-tap outputs (padding 1) it feeds."""
    r = np.full(n, 3)
    r[0] -= 1
    r[-1] -= 1
    if n == 1:
        r[0] = 1
    return r


@dataclass
class MacRow:
    name: str
    dense: int
    executed: int

    @property
    def bnn(self) -> int:
        return self.dense

    @property
    def skipped(self) -> int:
        return self.dense - self.executed

    @property
    def reduction(self) -> float:
        return 1.0 - self.executed / self.dense if self.dense else 0.0


@dataclass
class MacStats:
    rows: list[MacRow] = field(default_factory=list)

    @property
    def dense(self) -> int:
        return sum(r.dense for r in self.rows)

    @property
    def executed(self) -> int:
        return sum(r.executed for r in self.rows)

    @property
    def bnn(self) -> int:
        return self.dense

    @property
    def reduction(self) -> float:
        return 1.0 - self.executed / self.dense if self.dense else 0.0


def mac_report(net: NetworkConfig, activations: dict) -> MacStats:
    """MAC counts from the ternary inputs of each conv/FC layer.

    A non-zero at (y, x) of a conv input feeds one output per in-range kernel
    tap, for every output channel; zeros are skipped entirely.
    """
    stats = MacStats()
    for layer in net.layers:
        if layer.kind not in (LayerKind.CONV3X3, LayerKind.FC) or layer.name not in activations:
            continue
        nz = _nonzero_map(activations[layer.name])
        cout = layer.out_shape[2]
        if layer.kind is LayerKind.CONV3X3:
            h, w, _ = nz.shape
            fan = np.outer(_reach(h), _reach(w))
            executed = int((nz.sum(axis=2) * fan).sum()) * cout
        else:
            executed = int(nz.sum()) * cout
        stats.rows.append(MacRow(layer.name, layer.dense_macs, executed))
    return stats


def data_report(activations: dict) -> tuple[list[tuple[str, SizeStats]], SizeStats]:
    rows = [(name, size_report(_as_encoding(a))) for name, a in activations.items()]
    total = SizeStats(0, 0)
    for _, s in rows:
        total = total + s
    return rows, total
