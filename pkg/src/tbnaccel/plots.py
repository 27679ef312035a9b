"""Report figures, written straight to files (Agg backend, no display)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "figure.figsize": (6.0, 3.6),
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})  # no version stamp, stable bytes
    plt.close(fig)
    return path


def accumulated_time(reports: dict, path) -> Path:
    """Cumulative processing time over compute layers, one line per mode."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        for label, rep in reports.items():
            layers = [l for l in rep.layers if l.kind in ("conv3x3", "fully_connected")]
            # post-processing cycles are folded into the preceding compute layer
            acc, names, run = [], [], 0
            for l in rep.layers:
                run += l.total_cycles
                if l in layers:
                    names.append(l.name)
                    acc.append(run / rep.clock_hz * 1e3)
                elif acc:
                    acc[-1] = run / rep.clock_hz * 1e3
            ax.plot(names, acc, marker="o", label=label)
        ax.set_xlabel("layer")
        ax.set_ylabel("accumulated time (ms)")
        ax.legend(frameon=False)
        return _save(fig, path)


def cycle_breakdown(rep, path) -> Path:
    cats = {k: v for k, v in rep.category_totals().items() if v}
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        total = sum(cats.values())
        ax.barh(list(cats), [100 * v / total for v in cats.values()], color="0.4")
        ax.invert_yaxis()
        ax.set_xlabel("share of cycles (%)")
        for i, v in enumerate(cats.values()):
            ax.text(100 * v / total, i, f" {100 * v / total:.1f}%", va="center", fontsize=8)
        return _save(fig, path)


def data_size(rows, path) -> Path:
    names = [n for n, _ in rows]
    x = np.arange(len(names))
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        for i, (lab, attr) in enumerate((("8-bit", "dense8_bits"), ("2-bit", "dense2_bits"),
                                         ("map + values", "encoded_bits"))):
            ax.bar(x + (i - 1) * 0.27, [getattr(s, attr) / 8192 for _, s in rows], 0.27, label=lab)
        ax.set_xticks(x, names)
        ax.set_ylabel("feature map size, all images (KiB)")
        ax.legend(frameon=False)
        return _save(fig, path)


def mac_counts(stats, path) -> Path:
    names = [r.name for r in stats.rows]
    x = np.arange(len(names))
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        ax.bar(x - 0.2, [r.bnn / 1e6 for r in stats.rows], 0.4, label="BNN (dense)")
        ax.bar(x + 0.2, [r.executed / 1e6 for r in stats.rows], 0.4, label="TBN (zeros skipped)")
        ax.set_xticks(x, names)
        ax.set_ylabel("MACs (millions)")
        ax.legend(frameon=False)
        return _save(fig, path)


def pe_sweep(rows, path) -> Path:
    pes = [r[0] for r in rows]
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        base = np.array([r[1] for r in rows], dtype=float)
        ax.plot(pes, base[0] / base, marker="s", label="baseline")
        ax.plot(pes, base[0] / np.array([r[2] for r in rows]), marker="o", label="zero skip")
        ax.plot(pes, base[0] / np.array([r[3] for r in rows]), marker="^", label="zero skip + reorder")
        ax.set_xlabel("PEs per PCL")
        ax.set_ylabel("speedup vs 1-PE baseline")
        ax.legend(frameon=False)
        return _save(fig, path)
