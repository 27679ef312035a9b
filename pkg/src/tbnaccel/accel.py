"""Cycle-level model of the sparsity-aware TBN accelerator.

Datapath: three processing clusters (PCLs), one per kernel row, each with six
processing engines (PEs) of 32 XOR lanes.  Input values are broadcast to all
PCLs; lanes span 32 output channels, so a layer is processed once per
32-output-channel group ("output pass") with the input re-streamed each pass.

Conv schedule per output pass: for each 32-channel input group, walk the input
rows; along a row a 1x3 window slides one column at a time.  Entering a column
costs one MAP word and one serial VAL read per non-zero.  The window's 3x32
slots are cut into 2*PE groups, optionally re-paired by the sorting network,
and each PE spends one cycle per non-zero in its two groups (priority encoder
skips zeros).  PCL r produces the row-offset partial sum for output row
y - r + 1, which is read-modify-written in TMP.

FC layers gang the PCLs on different output groups; windows are three
consecutive MAP words of the flattened input, and partial sums stay in the PE
accumulators until the pass ends.

Every cycle constant is an `AccelConfig` knob.  Categories are sequential (no
overlap), so they add up to the layer total.
"""

from __future__ import annotations

import configparser
import io
from collections import deque
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, FormatError, PartialSumOverflow
from .golden import PSUM_MAX, PSUM_MIN, PartialSumTensor, argmax_lowest
from .network import LayerKind, NetworkConfig
from .sparse import (
    WORD_BITS,
    BinaryWeightTensor,
    SparseEncoding,
    TernaryTensor,
    TraversalOrder,
    channel_groups,
    encode_sparse,
    pack_map_memory,
    pack_weight_memory,
    unpack_words,
    weight_word_address,
)

EventSink = Callable[[int, str, str], None]


@dataclass(frozen=True)
class AccelConfig:
    pcl_count: int = 3
    pe_per_pcl: int = 6
    xor_lanes_per_pe: int = 32
    clock_hz: float = 10e6
    fetch_cycles_per_map_word: int = 1
    fetch_cycles_per_value_bit: int = 1
    fetch_cycles_per_weight_word: int = 1
    tmp_rw_cycles_per_word: int = 1
    sort_cycles: int = 1
    qnt_cycles_per_word: int = 1
    post_cycles_per_word: int = 1
    zero_skip_enabled: bool = True
    reorder_enabled: bool = True

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                continue
            if f.name in ("sort_cycles",) and v == 0:
                continue
            if v <= 0:
                raise ConfigError(f"{f.name} must be positive, got {v}")
        if self.xor_lanes_per_pe != WORD_BITS:
            raise ConfigError("PE lane count is tied to the 32-bit weight word")

    def baseline(self) -> "AccelConfig":
        """BNN-style cost baseline: no zero skipping, no reordering."""
        return replace(self, zero_skip_enabled=False, reorder_enabled=False)

    def with_overrides(self, **kw) -> "AccelConfig":
        names = {f.name: f.type for f in fields(self)}
        clean = {}
        for k, v in kw.items():
            if k not in names:
                raise ConfigError(f"unknown accelerator setting {k!r}")
            cur = getattr(self, k)
            if isinstance(cur, bool):
                clean[k] = v if isinstance(v, bool) else str(v).lower() in ("1", "true", "yes", "on")
            else:
                clean[k] = int(float(v)) if isinstance(cur, int) else float(v)
        return replace(self, **clean)


# -- workload balancing -----------------------------------------------------

@dataclass(frozen=True)
class WorkloadAssignment:
    group_counts: tuple[int, ...]
    pe_pairs: tuple[tuple[int, int], ...]

    @property
    def loads(self) -> tuple[int, ...]:
        return tuple(self.group_counts[a] + self.group_counts[b] for a, b in self.pe_pairs)

    @property
    def makespan(self) -> int:
        return max(self.loads)


def balance_workload(group_counts: Sequence[int], pe_count: int, reorder: bool) -> WorkloadAssignment:
    """Assign 2*pe_count groups to PEs, two each.

    With `reorder`, groups are sorted by count (descending, ties by index) and
    PE i takes the i-th largest and the i-th smallest.  Otherwise PE i takes
    groups 2i and 2i+1.
    """
    counts = tuple(int(c) for c in group_counts)
    if len(counts) != 2 * pe_count:
        raise ValueError(f"need {2 * pe_count} groups for {pe_count} PEs, got {len(counts)}")
    if reorder:
        order = sorted(range(len(counts)), key=lambda i: (-counts[i], i))
        pairs = tuple((order[i], order[-1 - i]) for i in range(pe_count))
    else:
        pairs = tuple((2 * i, 2 * i + 1) for i in range(pe_count))
    return WorkloadAssignment(counts, pairs)


def _fast_makespan(counts: np.ndarray, reorder: bool) -> tuple[int, np.ndarray]:
    """Same result as balance_workload(...).makespan, vectorized for the inner loop."""
    if reorder:
        s = np.sort(counts)[::-1]
        loads = s[: len(s) // 2] + s[::-1][: len(s) // 2]
    else:
        loads = counts[0::2] + counts[1::2]
    return int(loads.max()), loads


# -- processing engine ------------------------------------------------------

@dataclass
class PeState:
    """PMA bit k marks slot k as non-zero; PWG row k is that slot's 32-lane weight word (as bits)."""

    pma: int
    pwg: np.ndarray
    psum: np.ndarray = field(default_factory=lambda: np.zeros(WORD_BITS, dtype=np.int64))
    pva: deque = field(default_factory=deque)

    @property
    def slots(self) -> int:
        return self.pwg.shape[0]


@dataclass
class PeRun:
    psum: np.ndarray
    cycles: int
    order: list[int]


def pe_run(state: PeState, value_bits: Sequence[int], zero_skip: bool = True) -> PeRun:
    """Drain the PMA register, highest set bit first, one MAC per cycle.

    The first queued value bit pairs with the highest set PMA bit.  Without
    zero skipping every slot costs a cycle and empty slots add nothing.
    """
    state.pva = deque(int(v) for v in value_bits)
    if len(state.pva) != bin(state.pma).count("1"):
        raise FormatError(f"PVA holds {len(state.pva)} values but PMA marks {bin(state.pma).count('1')}")
    pma = state.pma
    cycles = 0
    order = []
    slot = state.slots - 1
    while pma:
        top = pma.bit_length() - 1
        if not zero_skip:
            cycles += slot - top  # walked over empty slots
        v = state.pva.popleft()
        state.psum += 1 - 2 * (v ^ state.pwg[top].astype(np.int64))
        pma &= ~(1 << top)
        order.append(top)
        cycles += 1
        slot = top - 1
    if not zero_skip:
        cycles += slot + 1
    if np.abs(state.psum).max(initial=0) > PSUM_MAX:
        raise PartialSumOverflow("PE accumulator left the 16-bit range")
    return PeRun(state.psum, cycles, order)


# -- traces -----------------------------------------------------------------

_CYCLE_FIELDS = ("fetch_map", "fetch_value", "fetch_weight", "mac", "sort", "tmp", "qnt", "post")


@dataclass
class LayerTrace:
    name: str
    kind: str
    fetch_map: int = 0
    fetch_value: int = 0
    fetch_weight: int = 0
    mac: int = 0
    sort: int = 0
    tmp: int = 0
    qnt: int = 0
    post: int = 0
    executed_macs: int = 0
    skipped_macs: int = 0
    windows: int = 0
    pe_busy: list[int] = field(default_factory=list)
    bn_saturations: int = 0

    @property
    def fetch_cycles(self) -> int:
        return self.fetch_map + self.fetch_value + self.fetch_weight

    @property
    def total_cycles(self) -> int:
        return sum(getattr(self, f) for f in _CYCLE_FIELDS)

    @property
    def dense_macs(self) -> int:
        return self.executed_macs + self.skipped_macs

    @property
    def pe_utilization(self) -> float:
        if not self.pe_busy or self.mac == 0:
            return 0.0
        return sum(self.pe_busy) / (len(self.pe_busy) * self.mac)

    def categories(self) -> dict[str, int]:
        return {"fetch": self.fetch_cycles, "mac": self.mac, "sort": self.sort,
                "tmp": self.tmp, "qnt": self.qnt, "post": self.post}


@dataclass
class SimReport:
    layers: list[LayerTrace]
    logits: np.ndarray
    label: int
    clock_hz: float
    config: dict = field(default_factory=dict)

    @property
    def total_cycles(self) -> int:
        return sum(l.total_cycles for l in self.layers)

    @property
    def time_s(self) -> float:
        return self.total_cycles / self.clock_hz

    @property
    def executed_macs(self) -> int:
        return sum(l.executed_macs for l in self.layers)

    @property
    def dense_macs(self) -> int:
        return sum(l.dense_macs for l in self.layers)

    def category_totals(self) -> dict[str, int]:
        out = {}
        for l in self.layers:
            for k, v in l.categories().items():
                out[k] = out.get(k, 0) + v
        return out

    def to_text(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp["totals"] = {
            "label": str(self.label),
            "logits": " ".join(str(int(v)) for v in self.logits),
            "clock_hz": repr(float(self.clock_hz)),
            "total_cycles": str(self.total_cycles),
            "time_s": repr(self.time_s),
            "executed_macs": str(self.executed_macs),
            "dense_macs": str(self.dense_macs),
            **{f"{k}_cycles": str(v) for k, v in self.category_totals().items()},
        }
        cp["config"] = {k: str(v) for k, v in self.config.items()}
        for l in self.layers:
            d = asdict(l)
            d["pe_busy"] = " ".join(map(str, l.pe_busy))
            d["total_cycles"] = l.total_cycles
            d.pop("name")
            cp[f"layer {l.name}"] = {k: str(v) for k, v in d.items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "SimReport":
        cp = configparser.ConfigParser(interpolation=None)
        try:
            cp.read_string(text)
            tot = cp["totals"]
            layers = []
            for sec in cp.sections():
                if not sec.startswith("layer "):
                    continue
                b = cp[sec]
                lt = LayerTrace(sec[len("layer "):], b["kind"])
                for f in _CYCLE_FIELDS + ("executed_macs", "skipped_macs", "windows", "bn_saturations"):
                    setattr(lt, f, int(b[f]))
                lt.pe_busy = [int(v) for v in b["pe_busy"].split()]
                if int(b["total_cycles"]) != lt.total_cycles:
                    raise FormatError(f"{sec}: total_cycles does not match its categories")
                layers.append(lt)
            config = dict(cp["config"]) if "config" in cp else {}
            return cls(layers, np.array([int(v) for v in tot["logits"].split()], dtype=np.int64),
                       int(tot["label"]), float(tot["clock_hz"]), config)
        except (KeyError, ValueError, configparser.Error) as e:
            raise FormatError(f"bad simulation report: {e}") from None


# -- helpers ----------------------------------------------------------------

class ValueFifo:
    """Serial value-stream reader; counts bits read."""

    def __init__(self, bits: np.ndarray):
        self.bits = np.asarray(bits, dtype=np.uint8)
        self.pos = 0

    def rewind(self) -> None:
        self.pos = 0

    def read(self, n: int) -> np.ndarray:
        if self.pos + n > self.bits.size:
            raise FormatError(f"value FIFO underrun: wanted {n} bits at {self.pos}, stream has {self.bits.size}")
        out = self.bits[self.pos:self.pos + n]
        self.pos += n
        return out


def _group_of_slot(n_slots: int, n_groups: int) -> np.ndarray:
    gid = np.empty(n_slots, dtype=np.int64)
    for i, part in enumerate(np.array_split(np.arange(n_slots), n_groups)):
        gid[part] = i
    return gid


def _taps(n: int) -> int:
    return 3 * n - 2 if n > 1 else 1


def _check_psum(a: np.ndarray, where: str) -> None:
    if a.size and (a.min() < PSUM_MIN or a.max() > PSUM_MAX):
        raise PartialSumOverflow(f"{where}: partial sum left the 16-bit range")


def _pe_model_window(group_of: np.ndarray, assignment: WorkloadAssignment, slot_idx: np.ndarray,
                     vbits: np.ndarray, wrows: np.ndarray, zero_skip: bool, n_slots: int) -> tuple[np.ndarray, list[int]]:
    """Run every PE of one PCL through pe_run; returns the summed psum and per-PE cycles.

    slot_idx: window slot of each non-zero (stream order); wrows: (n_slots, lanes) weight bits.
    """
    lanes = wrows.shape[1]
    total = np.zeros(lanes, dtype=np.int64)
    cycles = []
    for a, b in assignment.pe_pairs:
        mine = np.flatnonzero(np.isin(group_of, (a, b)))  # slots of this PE, ascending
        nz = [(k, int(s)) for k, s in enumerate(slot_idx) if group_of[s] in (a, b)]
        # slot order ascending maps to PMA bits descending so the first value pairs with the top bit
        bit_of = {int(s): len(mine) - 1 - j for j, s in enumerate(mine)}
        pwg = np.zeros((len(mine), WORD_BITS), dtype=np.uint8)
        for s, bit in bit_of.items():
            pwg[bit, :lanes] = wrows[s]
        pma = 0
        for _, s in nz:
            pma |= 1 << bit_of[s]
        state = PeState(pma, pwg)
        run = pe_run(state, [vbits[k] for k, _ in nz], zero_skip)
        total += run.psum[:lanes]
        cycles.append(run.cycles)
    return total, cycles


# -- conv -------------------------------------------------------------------

def simulate_conv_layer(x: SparseEncoding, w: BinaryWeightTensor, cfg: AccelConfig, name: str = "conv",
                        events: EventSink | None = None, pe_model: bool = False,
                        cycle_base: int = 0) -> tuple[PartialSumTensor, LayerTrace]:
    """Simulate one 3x3 conv, returning partial sums (pre-pooling) and the cycle trace.

    `pe_model` routes the arithmetic through pe_run for every PE (slow; used to
    cross-check the vectorized path).
    """
    if cfg.pcl_count != 3:
        raise ConfigError("conv layers need exactly three PCLs, one per kernel row")
    h, wd, c = x.shape
    if w.dims[:3] != (3, 3, c):
        raise ConfigError(f"{name}: weights {w.dims} do not match input {x.shape}")
    if x.order is not TraversalOrder.GROUP_MAJOR:
        raise FormatError(f"{name}: simulator consumes group-major streams")
    cout = w.out_channels
    n_in_groups, n_out_groups = channel_groups(c), channel_groups(cout)
    pe = cfg.pe_per_pcl
    skip = cfg.zero_skip_enabled
    mapimg = pack_map_memory(x)
    wimg = pack_weight_memory(w)
    fifo = ValueFifo(x.value_bits)
    tmp = np.zeros((h, wd, n_out_groups * WORD_BITS), dtype=np.int64)
    touched = np.zeros((h, wd, n_out_groups), dtype=bool)
    tr = LayerTrace(name, LayerKind.CONV3X3.value, pe_busy=[0] * pe)
    busy = np.zeros(pe, dtype=np.int64)
    lane_bits = np.arange(WORD_BITS)

    for og in range(n_out_groups):
        lanes = min(WORD_BITS, cout - og * WORD_BITS)
        fifo.rewind()
        for g in range(n_in_groups):
            gch = min(WORD_BITS, c - g * WORD_BITS)
            n_slots = 3 * gch
            group_of = _group_of_slot(n_slots, 2 * pe)
            # RWG load: each PCL receives its kernel row for this (input, output) group block
            addrs = [weight_word_address(w.dims, r, kc, g * WORD_BITS + ic, og)
                     for r in range(3) for kc in range(3) for ic in range(gch)]
            wbits = unpack_words(wimg.words[addrs]).reshape(3, 3, gch, WORD_BITS)[..., :lanes].astype(np.int64)
            tr.fetch_weight += len(addrs) * cfg.fetch_cycles_per_weight_word
            for y in range(h):
                cols: dict[int, tuple[np.ndarray, np.ndarray]] = {}

                def load(col):
                    word = int(mapimg.words[g * h * wd + y * wd + col])
                    chs = np.flatnonzero((word >> lane_bits[:gch]) & 1)
                    vals = fifo.read(chs.size)
                    tr.fetch_map += cfg.fetch_cycles_per_map_word
                    tr.fetch_value += (chs.size if skip else gch) * cfg.fetch_cycles_per_value_bit
                    cols[col] = (chs, vals)

                for xc in range(wd):
                    for col in ((0, 1) if xc == 0 else (xc + 1,)):
                        if col < wd:
                            load(col)
                    cols.pop(xc - 2, None)
                    present = [xc + d for d in (-1, 0, 1) if 0 <= xc + d < wd]
                    kcs, chs, vals = [], [], []
                    for col in present:
                        ch, v = cols[col]
                        kcs.append(np.full(ch.size, col - xc + 1))
                        chs.append(ch)
                        vals.append(v)
                    kc_arr = np.concatenate(kcs)
                    ch_arr = np.concatenate(chs)
                    v_arr = np.concatenate(vals).astype(np.int64)
                    slot_idx = kc_arr * gch + ch_arr
                    if skip:
                        counts = np.bincount(group_of[slot_idx], minlength=2 * pe)
                    else:
                        real = np.concatenate([(col - xc + 1) * gch + np.arange(gch) for col in present])
                        counts = np.bincount(group_of[real], minlength=2 * pe)
                    makespan, loads = _fast_makespan(counts, cfg.reorder_enabled)
                    tr.mac += makespan
                    busy += loads
                    if cfg.reorder_enabled:
                        tr.sort += cfg.sort_cycles
                    tr.windows += 1
                    valid = [r for r in range(3) if 0 <= y - r + 1 < h]
                    processed = int(counts.sum())
                    tr.executed_macs += processed * lanes * len(valid)
                    if pe_model:
                        assignment = balance_workload(counts, pe, cfg.reorder_enabled)
                    for r in valid:
                        oy = y - r + 1
                        if pe_model:
                            wrows = np.zeros((n_slots, lanes), dtype=np.int64)
                            wrows[slot_idx] = wbits[r, kc_arr, ch_arr]
                            contrib, _ = _pe_model_window(group_of, assignment, slot_idx, v_arr, wrows, skip, n_slots)
                        else:
                            contrib = (1 - 2 * (v_arr[:, None] ^ wbits[r, kc_arr, ch_arr])).sum(axis=0)
                        sl = slice(og * WORD_BITS, og * WORD_BITS + lanes)
                        tmp[oy, xc, sl] += contrib
                        _check_psum(tmp[oy, xc, sl], name)
                        tr.tmp += (2 if touched[oy, xc, og] else 1) * cfg.tmp_rw_cycles_per_word
                        touched[oy, xc, og] = True
                    if events is not None:
                        events(cycle_base + tr.total_cycles, "PCL",
                               f"{name} og={og} ig={g} y={y} x={xc} groups={list(map(int, counts))} makespan={makespan}")
        if fifo.pos != fifo.bits.size:
            raise FormatError(f"{name}: {fifo.bits.size - fifo.pos} value bits left unread")
    tr.skipped_macs = _taps(h) * _taps(wd) * c * cout - tr.executed_macs
    tr.pe_busy = [int(b) for b in busy]
    return PartialSumTensor(tmp[..., :cout]), tr


# -- fully connected --------------------------------------------------------

def simulate_fc_layer(x: SparseEncoding, w: BinaryWeightTensor, cfg: AccelConfig, name: str = "fc",
                      events: EventSink | None = None, pe_model: bool = False,
                      cycle_base: int = 0) -> tuple[PartialSumTensor, LayerTrace]:
    h, wd, c = x.shape
    n = h * wd * c
    if w.dims[:3] != (1, 1, n):
        raise ConfigError(f"{name}: weights {w.dims} do not match {n} inputs")
    if x.order is not TraversalOrder.GROUP_MAJOR:
        raise FormatError(f"{name}: simulator consumes group-major streams")
    cout = w.out_channels
    n_out_groups = channel_groups(cout)
    pe, skip = cfg.pe_per_pcl, cfg.zero_skip_enabled
    mapimg = pack_map_memory(x)
    wimg = pack_weight_memory(w)
    fifo = ValueFifo(x.value_bits)
    tr = LayerTrace(name, LayerKind.FC.value, pe_busy=[0] * pe)
    busy = np.zeros(pe, dtype=np.int64)
    out = np.zeros(n_out_groups * WORD_BITS, dtype=np.int64)

    # element index range of every MAP word, in address order (= stream order)
    word_spans = []
    start = 0
    for g in range(channel_groups(c)):
        gch = min(WORD_BITS, c - g * WORD_BITS)
        for _ in range(h * wd):
            word_spans.append((start, gch))
            start += gch
    windows = [word_spans[i:i + 3] for i in range(0, len(word_spans), 3)]

    for first in range(0, n_out_groups, cfg.pcl_count):
        active = list(range(first, min(first + cfg.pcl_count, n_out_groups)))
        fifo.rewind()
        for wi, win in enumerate(windows):
            elem_idx, vals = [], []
            for (base, gch), addr in zip(win, range(3 * wi, 3 * wi + len(win))):
                word = int(mapimg.words[addr])
                chs = np.flatnonzero((word >> np.arange(gch)) & 1)
                elem_idx.append(base + chs)
                vals.append(fifo.read(chs.size))
                tr.fetch_map += cfg.fetch_cycles_per_map_word
                tr.fetch_value += (chs.size if skip else gch) * cfg.fetch_cycles_per_value_bit
            n_slots = sum(gch for _, gch in win)
            win_start = win[0][0]
            e_arr = np.concatenate(elem_idx)
            v_arr = np.concatenate(vals).astype(np.int64)
            slot_idx = e_arr - win_start
            group_of = _group_of_slot(n_slots, 2 * pe)
            counts = np.bincount(group_of[slot_idx] if skip else group_of, minlength=2 * pe)
            makespan, loads = _fast_makespan(counts, cfg.reorder_enabled)
            tr.mac += makespan
            busy += loads
            tr.sort += cfg.sort_cycles if cfg.reorder_enabled else 0
            tr.windows += 1
            tr.fetch_weight += n_slots * len(active) * cfg.fetch_cycles_per_weight_word
            if pe_model:
                assignment = balance_workload(counts, pe, cfg.reorder_enabled)
            for og in active:
                lanes = min(WORD_BITS, cout - og * WORD_BITS)
                addrs = [weight_word_address(w.dims, 0, 0, int(e), og) for e in range(win_start, win_start + n_slots)]
                wrows = unpack_words(wimg.words[addrs])[:, :lanes].astype(np.int64)
                if pe_model:
                    contrib, _ = _pe_model_window(group_of, assignment, slot_idx, v_arr, wrows, skip, n_slots)
                else:
                    contrib = (1 - 2 * (v_arr[:, None] ^ wrows[slot_idx])).sum(axis=0)
                sl = slice(og * WORD_BITS, og * WORD_BITS + lanes)
                out[sl] += contrib
                _check_psum(out[sl], name)
                tr.executed_macs += int(counts.sum()) * lanes
            if events is not None:
                events(cycle_base + tr.total_cycles, "PCL",
                       f"{name} ogs={active} window={wi} groups={list(map(int, counts))} makespan={makespan}")
        tr.tmp += len(active) * cfg.tmp_rw_cycles_per_word
    tr.skipped_macs = n * cout - tr.executed_macs
    tr.pe_busy = [int(b) for b in busy]
    return PartialSumTensor(out[:cout].reshape(1, 1, cout)), tr


# -- post-processing units --------------------------------------------------

def _words(shape) -> int:
    h, w, c = shape
    return h * w * channel_groups(c)


def plr_unit(x: PartialSumTensor, cfg: AccelConfig, name: str) -> tuple[PartialSumTensor, LayerTrace]:
    """2x2 max pool then ReLU, reading four TMP words per pooled word."""
    h, w, c = x.shape
    if h % 2 or w % 2:
        raise ConfigError(f"{name}: pooling needs even height and width")
    v = x.values.astype(np.int64)
    best = np.zeros((h // 2, w // 2, c), dtype=np.int64)  # ReLU floor
    for dy in (0, 1):
        for dx in (0, 1):
            best = np.maximum(best, v[dy::2, dx::2])
    words = _words(best.shape)
    tr = LayerTrace(name, LayerKind.POOL_RELU.value)
    tr.tmp = 5 * words * cfg.tmp_rw_cycles_per_word
    tr.post = words * cfg.post_cycles_per_word
    return PartialSumTensor(best), tr


def bnm_unit(x: PartialSumTensor, factors: np.ndarray, cfg: AccelConfig, name: str) -> tuple[PartialSumTensor, LayerTrace]:
    """Q8.8 scaling, ties to even, saturating."""
    prod = x.values.astype(np.int64) * np.asarray(factors, dtype=np.int64)
    q, r = np.divmod(prod, 256)
    q = q + ((r > 128) | ((r == 128) & (q % 2 == 1)))
    sat = int(np.count_nonzero((q > PSUM_MAX) | (q < PSUM_MIN)))
    words = _words(x.shape)
    tr = LayerTrace(name, LayerKind.BATCH_NORM.value, bn_saturations=sat)
    tr.tmp = 2 * words * cfg.tmp_rw_cycles_per_word
    tr.post = words * cfg.post_cycles_per_word
    return PartialSumTensor(np.clip(q, PSUM_MIN, PSUM_MAX)), tr


def qnt_unit(x: PartialSumTensor, thresholds: np.ndarray, cfg: AccelConfig, name: str) -> tuple[SparseEncoding, LayerTrace]:
    """Compare against per-channel thresholds and emit map + value streams directly."""
    h, w, c = x.shape
    t = np.asarray(thresholds, dtype=np.int64)
    map_bits, value_bits = [], []
    v = x.values.reshape(h * w, c)
    for g in range(channel_groups(c)):
        sl = slice(g * WORD_BITS, min((g + 1) * WORD_BITS, c))
        blk = v[:, sl]
        hi, lo = blk > t[sl, 0], blk < t[sl, 1]
        nz = (hi | lo).reshape(-1)
        map_bits.append(nz)
        value_bits.append(hi.reshape(-1)[nz])
    words = _words(x.shape)
    tr = LayerTrace(name, LayerKind.QUANTIZE.value)
    tr.tmp = words * cfg.tmp_rw_cycles_per_word
    tr.qnt = words * cfg.qnt_cycles_per_word
    enc = SparseEncoding((h, w, c), np.concatenate(map_bits).astype(np.uint8),
                         np.concatenate(value_bits).astype(np.uint8))
    return enc, tr


# -- network ----------------------------------------------------------------

def simulate_network(net: NetworkConfig, x: TernaryTensor | SparseEncoding, cfg: AccelConfig | None = None,
                     events: EventSink | None = None, pe_model: bool = False) -> tuple[int, SimReport]:
    cfg = cfg or AccelConfig()
    net.require_params()
    enc = x if isinstance(x, SparseEncoding) else encode_sparse(x)
    if enc.shape != net.input_shape:
        raise ConfigError(f"input shape {enc.shape} does not match network input {net.input_shape}")
    value = enc
    traces = []
    cycles = 0
    for layer in net.layers:
        k = layer.kind
        if k is LayerKind.CONV3X3:
            value, tr = simulate_conv_layer(value, layer.weights, cfg, layer.name, events, pe_model, cycles)
        elif k is LayerKind.FC:
            value, tr = simulate_fc_layer(value, layer.weights, cfg, layer.name, events, pe_model, cycles)
        elif k is LayerKind.POOL_RELU:
            value, tr = plr_unit(value, cfg, layer.name)
        elif k is LayerKind.BATCH_NORM:
            value, tr = bnm_unit(value, layer.bn_factors, cfg, layer.name)
        elif k is LayerKind.QUANTIZE:
            value, tr = qnt_unit(value, layer.quant_thresholds, cfg, layer.name)
        else:
            raise ConfigError(f"unknown layer kind {k}")
        cycles += tr.total_cycles
        if events is not None:
            events(cycles, k.value.upper(), f"{layer.name} done total={tr.total_cycles}")
        traces.append(tr)
    logits = value.values.reshape(-1).astype(np.int64)
    label = argmax_lowest(logits)
    report = SimReport(traces, logits, label, cfg.clock_hz, {f.name: getattr(cfg, f.name) for f in fields(cfg)})
    return label, report


def mean_report(reports: Sequence[SimReport]) -> SimReport:
    """Per-layer average of several runs (counts rounded to integers); logits/label from the first run."""
    if not reports:
        raise ValueError("no reports to average")
    first = reports[0]
    names = [l.name for l in first.layers]
    if any([l.name for l in r.layers] != names for r in reports):
        raise ConfigError("reports come from different networks")
    n = len(reports)
    layers = []
    for i, l0 in enumerate(first.layers):
        lt = LayerTrace(l0.name, l0.kind)
        for f in _CYCLE_FIELDS + ("executed_macs", "skipped_macs", "windows", "bn_saturations"):
            setattr(lt, f, round(sum(getattr(r.layers[i], f) for r in reports) / n))
        lt.pe_busy = [round(sum(r.layers[i].pe_busy[j] for r in reports) / n) for j in range(len(l0.pe_busy))]
        layers.append(lt)
    return SimReport(layers, first.logits, first.label, first.clock_hz, dict(first.config))
