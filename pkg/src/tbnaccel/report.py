"""Assemble metric tables and render them as aligned text or key/value lines."""

from __future__ import annotations

from dataclasses import dataclass, field

from . import metrics
from .accel import SimReport
from .metrics import FomInputs, MacStats, PowerModel
from .sparse import SizeStats


@dataclass
class Section:
    name: str
    columns: list[str]
    rows: list[list] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)


def _fmt(v) -> str:
    if isinstance(v, float):
        if abs(v) >= 1e5:
            return f"{v:.1f}"
        return f"{v:.6g}" if abs(v) >= 1e-3 or v == 0 else f"{v:.4e}"
    return str(v)


def render_table(sections: list[Section]) -> str:
    out = []
    for s in sections:
        cells = [s.columns] + [[_fmt(v) for v in r] for r in s.rows]
        widths = [max(len(row[i]) for row in cells) for i in range(len(s.columns))]
        out.append(f"== {s.name} ==")
        for j, row in enumerate(cells):
            out.append("  ".join(c.ljust(wd) if i == 0 or j == 0 else c.rjust(wd)
                                 for i, (c, wd) in enumerate(zip(row, widths))).rstrip())
            if j == 0:
                out.append("  ".join("-" * wd for wd in widths))
        out.extend(f"note: {n}" for n in s.notes)
        out.append("")
    return "\n".join(out)


def render_kv(sections: list[Section]) -> str:
    out = []
    for s in sections:
        for r in s.rows:
            key = str(r[0])
            for col, v in zip(s.columns[1:], r[1:]):
                out.append(f"{s.name}.{key}.{col}={_fmt(v)}")
        for i, n in enumerate(s.notes):
            out.append(f"{s.name}.note{i}={n}")
    return "\n".join(out) + "\n"


def render(sections: list[Section], fmt: str) -> str:
    return render_kv(sections) if fmt == "kv" else render_table(sections)


def data_section(rows: list[tuple[str, SizeStats]], total: SizeStats) -> Section:
    s = Section("data_size", ["layer", "elements", "nnz", "density", "bits_8bit", "bits_2bit", "bits_encoded",
                              "red_2bit_vs_8bit", "red_enc_vs_2bit", "red_enc_vs_8bit"])
    for name, st in rows + [("total", total)]:
        s.rows.append([name, st.elements, st.nnz, st.nnz / st.elements if st.elements else 0.0,
                       st.dense8_bits, st.dense2_bits, st.encoded_bits,
                       st.reduction_2bit_vs_8bit, st.reduction_encoded_vs_2bit, st.reduction_encoded_vs_8bit])
    s.notes.append(f"reported: 2-bit vs 8-bit {metrics.REF_DATA_REDUCTION_2BIT:.1%}, "
                   f"encoding a further {metrics.REF_DATA_REDUCTION_ENCODED:.1%}")
    return s


def mac_section(stats: MacStats) -> Section:
    s = Section("macs", ["layer", "dense_cnn", "bnn", "tbn_executed", "reduction"])
    for r in stats.rows:
        s.rows.append([r.name, r.dense, r.bnn, r.executed, r.reduction])
    s.rows.append(["total", stats.dense, stats.bnn, stats.executed, stats.reduction])
    s.notes.append(f"reported TBN vs BNN MAC reduction: {metrics.REF_MAC_REDUCTION:.1%} "
                   "(depends on trained activation density)")
    return s


def cycle_section(rep: SimReport, name: str = "cycles") -> Section:
    s = Section(name, ["layer", "kind", "total", "fetch", "mac", "sort", "tmp", "qnt", "post",
                       "pe_util", "time_ms"])
    for l in rep.layers:
        c = l.categories()
        s.rows.append([l.name, l.kind, l.total_cycles, c["fetch"], c["mac"], c["sort"], c["tmp"], c["qnt"],
                       c["post"], l.pe_utilization, 1e3 * l.total_cycles / rep.clock_hz])
    tot = rep.category_totals()
    s.rows.append(["total", "-", rep.total_cycles, tot["fetch"], tot["mac"], tot["sort"], tot["tmp"],
                   tot["qnt"], tot["post"], "-", 1e3 * rep.time_s])
    share = tot["mac"] / rep.total_cycles if rep.total_cycles else 0.0
    s.notes.append(f"MAC share of cycles {share:.1%} (reported {metrics.REF_MAC_SHARE:.1%}); "
                   f"inference time {rep.time_s:.4g} s (reported {metrics.REF_TIME_S} s)")
    return s


def mode_section(tbn: SimReport, bnn: SimReport) -> Section:
    s = Section("tbn_vs_bnn", ["mode", "total_cycles", "time_s"])
    s.rows.append(["tbn", tbn.total_cycles, tbn.time_s])
    s.rows.append(["bnn_baseline", bnn.total_cycles, bnn.time_s])
    red = 1 - tbn.total_cycles / bnn.total_cycles if bnn.total_cycles else 0.0
    s.rows.append(["reduction", red, "-"])
    s.notes.append(f"reported processing-time reduction vs BNN: {metrics.REF_CYCLE_REDUCTION:.0%}")
    return s


def throughput_section(rep: SimReport, peak: float | None = None) -> Section:
    g = metrics.throughput_report(rep)
    s = Section("throughput", ["convention", "gops"])
    s.rows.append(["dense_equivalent", g["dense_equivalent_gops"]])
    s.rows.append(["executed", g["executed_gops"]])
    if peak is not None:
        s.rows.append(["peak_lanes", peak])
    s.rows.append(["reported", metrics.REF_GOPS])
    s.notes.append("2 ops per MAC; the convention behind the reported figure is not stated")
    return s


def fom_section(accuracy: float, power: PowerModel, rep: SimReport | None) -> Section:
    s = Section("fom", ["case", "accuracy_pct", "time_s", "power_mw", "energy_mj", "fom_pct_per_s_per_mj"])
    e = metrics.energy_mj(metrics.REF_POWER_MW, metrics.REF_TIME_S)
    anchor = metrics.fom(FomInputs(metrics.REF_ACCURACY, metrics.REF_TIME_S, e))
    s.rows.append(["anchor", metrics.REF_ACCURACY, metrics.REF_TIME_S, metrics.REF_POWER_MW, e, anchor])
    s.rows.append(["reported", metrics.REF_ACCURACY, metrics.REF_TIME_S, metrics.REF_POWER_MW, "-", metrics.REF_FOM])
    if rep is not None and rep.time_s > 0:
        p = power.power_mw(rep.clock_hz, extrapolate=True)
        e_sim = metrics.energy_mj(p, rep.time_s)
        s.rows.append(["simulated", accuracy, rep.time_s, p, e_sim,
                       metrics.fom(FomInputs(accuracy, rep.time_s, e_sim)) if e_sim > 0 else "-"])
    s.notes.append(f"anchor recomputes accuracy/(time*energy) from the rounded published inputs; "
                   f"the published {metrics.REF_FOM} differs by {anchor / metrics.REF_FOM - 1:.1%}")
    s.notes.append("accuracy and power are inputs here, not reproduced (training and circuit simulation are out of scope)")
    return s


def sweep_section(rows: list[tuple[int, int, int, int]]) -> Section:
    """rows: (pe_count, baseline cycles, skip cycles, skip+reorder cycles)."""
    s = Section("pe_sweep", ["pe_per_pcl", "baseline", "zero_skip", "zero_skip_reorder", "speedup_skip",
                             "speedup_skip_reorder"])
    for pe, base, skip, reo in rows:
        s.rows.append([pe, base, skip, reo, base / skip if skip else 0.0, base / reo if reo else 0.0])
    return s
