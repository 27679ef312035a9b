"""Command-line driver: encode -> genweights -> infer -> simulate -> report.

Every option can also come from a JSON manifest (``--manifest``) whose keys are
the option names with dashes replaced by underscores; explicit flags win.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from functools import partial
from pathlib import Path

import numpy as np

from . import dvs, formats, golden, metrics, plots, report
from .accel import AccelConfig, SimReport, mean_report, simulate_network
from .errors import CalibrationError, ConfigError, FormatError, OracleMismatch, TbnError
from .network import LayerKind, NetworkConfig, default_network, load_network, random_parameters, save_network
from .sparse import SizeStats, TernaryTensor, decode_sparse, encode_sparse, size_report

log = logging.getLogger("tbnaccel")

EXIT_OK, EXIT_FAIL, EXIT_FORMAT, EXIT_MISMATCH, EXIT_CONFIG = 0, 1, 2, 3, 4

DEFAULTS = {
    "seed": 0,
    "out_dir": ".",
    "format": "table",
    "verbose": False,
    "workers": None,
    "dvs_config": 5,
    "thresholds": None,
    "target_density": 0.462,
    "synthetic": None,
    "shape": "32x32x2",
    "out": None,
    "net": None,
    "topology": None,
    "probes": None,
    "probe_count": 8,
    "input": None,
    "cifar": None,
    "dump_activations": None,
    "set": [],
    "baseline": None,
    "pe_sweep": None,
    "pe_model": False,
    "activations": None,
    "sim": None,
    "power": None,
    "accuracy": metrics.REF_ACCURACY,
    "anchor": False,
    "no_figures": False,
}


# -- helpers ----------------------------------------------------------------

def _pmap(fn, items, workers):
    """Ordered map, optionally across processes."""
    items = list(items)
    if workers == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def _parse_shape(text: str) -> tuple[int, int, int]:
    try:
        s = tuple(int(v) for v in text.lower().split("x"))
    except ValueError:
        raise ConfigError(f"bad shape {text!r}, expected HxWxC") from None
    if len(s) != 3 or min(s) < 1:
        raise ConfigError(f"bad shape {text!r}, expected HxWxC")
    return s


def _parse_range(text: str) -> list[int]:
    """'1..6' or '1,2,6'."""
    try:
        if ".." in text:
            lo, hi = (int(v) for v in text.split(".."))
            vals = list(range(lo, hi + 1))
        else:
            vals = [int(v) for v in text.split(",")]
    except ValueError:
        raise ConfigError(f"bad range {text!r}, expected LO..HI or a comma list") from None
    if not vals or min(vals) < 1:
        raise ConfigError(f"bad range {text!r}")
    return vals


def _parse_overrides(items) -> dict[str, str]:
    out = {}
    for it in items or []:
        if "=" not in it:
            raise ConfigError(f"--set expects KEY=VALUE, got {it!r}")
        k, v = it.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _out_path(args, given, default_name) -> Path:
    p = Path(given) if given else Path(args.out_dir) / default_name
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _pipeline_defaults(args) -> None:
    """--net and --input fall back to what genweights and encode wrote into --out-dir."""
    for name, default in (("net", "net.cfg"), ("input", "encoded.tbna")):
        if getattr(args, name) is None and (Path(args.out_dir) / default).is_file():
            setattr(args, name, str(Path(args.out_dir) / default))


def _require(args, *names):
    missing = [f"--{n.replace('_', '-')}" for n in names if getattr(args, n) in (None, "")]
    if missing:
        raise ConfigError(f"{args.command}: missing {', '.join(missing)}")


def _read_inputs(path):
    tensors, labels = formats.read_archive(path)
    return tensors, labels


# -- encode -----------------------------------------------------------------

def _encode_one(cfg: dvs.DvsConfig, frame: dvs.GrayFrame):
    return encode_sparse(dvs.encode_frame(frame, cfg))


def cmd_encode(args) -> int:
    out = _out_path(args, args.out, "encoded.tbna")
    if args.synthetic is not None:
        shape = _parse_shape(args.shape)
        rng = np.random.default_rng(args.seed)
        tensors = [encode_sparse(TernaryTensor.random(shape, args.target_density, rng))
                   for _ in range(args.synthetic)]
        labels = [-1] * len(tensors)
        source = f"{args.synthetic} synthetic tensors {args.shape}"
    else:
        _require(args, "cifar")
        labels_arr, rgb = formats.read_cifar10(args.cifar)
        cfg = dvs.get_config(args.dvs_config)
        frames = [dvs.rgb_to_gray(*img) for img in rgb]
        if not frames:
            log.warning("%s holds no records; writing an empty archive", args.cifar)
        elif args.thresholds:
            parts = [float(v) for v in str(args.thresholds).split(",")]
            cfg = cfg.with_thresholds(*parts)
        else:
            pos, neg = dvs.calibrate_thresholds(frames, cfg, args.target_density)
            cfg = cfg.with_thresholds(pos, neg)
        tensors = _pmap(partial(_encode_one, cfg), frames, args.workers)
        labels = [int(v) for v in labels_arr]
        source = f"{len(frames)} records, DVS config #{cfg.id}"
        if frames:
            source += f", thresholds ({cfg.pos_threshold:g}, {cfg.neg_threshold:g})"
    formats.write_archive(out, tensors, labels)
    dens = np.array([t.density for t in tensors]) if tensors else np.zeros(0)
    sec = report.Section("encode", ["item", "value"])
    sec.rows = [["tensors", len(tensors)],
                ["density_mean", float(dens.mean()) if dens.size else 0.0],
                ["density_min", float(dens.min()) if dens.size else 0.0],
                ["density_max", float(dens.max()) if dens.size else 0.0]]
    sec.notes = [source, f"archive {out}"]
    print(report.render([sec], args.format), end="")
    return EXIT_OK


# -- genweights -------------------------------------------------------------

def _default_refs(net: NetworkConfig) -> NetworkConfig:
    layers = []
    for l in net.layers:
        if l.kind in (LayerKind.CONV3X3, LayerKind.FC) and not l.weight_ref:
            l = replace(l, weight_ref=f"{l.name}.tbnw")
        elif l.kind is LayerKind.BATCH_NORM and not l.bn_ref:
            l = replace(l, bn_ref=f"{l.name}.tbnp")
        elif l.kind is LayerKind.QUANTIZE and not l.thresholds_ref:
            l = replace(l, thresholds_ref=f"{l.name}.tbnp")
        layers.append(l)
    return replace(net, layers=tuple(layers))


def quantizer_densities(net: NetworkConfig, inputs) -> dict[str, float]:
    """Mean output density of every quantizer over a batch of ternary inputs."""
    dens: dict[str, list[float]] = {}
    for x in inputs:
        value = x
        for layer in net.layers:
            value, _ = golden.apply_layer(layer, value)
            if layer.kind is LayerKind.QUANTIZE:
                dens.setdefault(layer.name, []).append(value.density)
    return {k: float(np.mean(v)) for k, v in dens.items()}


def cmd_genweights(args) -> int:
    net = load_network(args.topology, with_params=False) if args.topology else default_network()
    net = _default_refs(net)
    rng = np.random.default_rng(args.seed)
    net = random_parameters(net, rng)
    if args.probes:
        probes = [decode_sparse(t) for t in _read_inputs(args.probes)[0]]
    else:
        probes = [TernaryTensor.random(net.input_shape, args.target_density, rng) for _ in range(args.probe_count)]
    has_qnt = any(l.kind is LayerKind.QUANTIZE for l in net.layers)
    if has_qnt:
        if not probes:
            raise CalibrationError("no probe inputs to calibrate the quantizers on")
        net = golden.calibrate_quantizers(net, probes, args.target_density)
    cfg_path = Path(args.out_dir) / "net.cfg"
    written = save_network(net, cfg_path)
    sec = report.Section("genweights", ["quantizer", "probe_density"])
    for name, d in quantizer_densities(net, probes).items() if has_qnt else ():
        sec.rows.append([name, d])
    sec.notes = [f"{len(written)} files under {cfg_path.parent}", f"seed {args.seed}, {len(probes)} probes"]
    print(report.render([sec], args.format), end="")
    return EXIT_OK


# -- infer ------------------------------------------------------------------

def _infer_one(net: NetworkConfig, dump: bool, enc):
    r = golden.infer(net, decode_sparse(enc), keep_activations=dump)
    acts = {k: encode_sparse(v) for k, v in r.activations.items()}
    return r.label, r.logits, acts


def _labels_text(rows) -> str:
    lines = ["index\tlabel\ttrue_label\tlogits"]
    for i, (label, logits, truth) in enumerate(rows):
        lines.append(f"{i}\t{label}\t{truth if truth >= 0 else '-'}\t{' '.join(str(int(v)) for v in logits)}")
    return "\n".join(lines) + "\n"


def cmd_infer(args) -> int:
    _pipeline_defaults(args)
    _require(args, "net", "input")
    net = load_network(args.net)
    tensors, truth = _read_inputs(args.input)
    dump = bool(args.dump_activations)
    results = _pmap(partial(_infer_one, net, dump), tensors, args.workers)
    out = _out_path(args, args.out, "labels.tsv")
    out.write_text(_labels_text([(lab, lg, t) for (lab, lg, _), t in zip(results, truth)]), encoding="utf-8")
    if dump:
        d = Path(args.dump_activations)
        d.mkdir(parents=True, exist_ok=True)
        for layer in net.layers:
            if layer.kind in (LayerKind.CONV3X3, LayerKind.FC):
                formats.write_archive(d / f"{layer.name}.tbna", [acts[layer.name] for _, _, acts in results])
    known = [(lab, t) for (lab, _, _), t in zip(results, truth) if t >= 0]
    sec = report.Section("infer", ["item", "value"])
    sec.rows = [["images", len(results)]]
    if known:
        sec.rows.append(["top1_vs_labels", sum(a == b for a, b in known) / len(known)])
    sec.notes = [f"labels {out}"] + ([f"activations {args.dump_activations}"] if dump else [])
    print(report.render([sec], args.format), end="")
    return EXIT_OK


# -- simulate ---------------------------------------------------------------

def _simulate_one(net: NetworkConfig, cfgs: tuple, pe_model: bool, verbose: bool, enc):
    ref = golden.infer(net, decode_sparse(enc))
    out = []
    for cfg in cfgs:
        lines = []
        sink = (lambda c, u, m: lines.append(f"{c}\t{u}\t{m}")) if verbose else None
        label, rep = simulate_network(net, enc, cfg, sink, pe_model)
        ok = label == ref.label and np.array_equal(rep.logits, ref.logits)
        out.append((rep.to_text(), ok, lines))
    return out


def _sweep_one(net: NetworkConfig, base: AccelConfig, pes: list[int], enc):
    rows = []
    for pe in pes:
        cfg = replace(base, pe_per_pcl=pe)
        modes = (cfg.baseline(), replace(cfg, zero_skip_enabled=True, reorder_enabled=False),
                 replace(cfg, zero_skip_enabled=True, reorder_enabled=True))
        rows.append([simulate_network(net, enc, m)[1].total_cycles for m in modes])
    return rows


def read_sweep(path) -> list[tuple[int, int, int, int]]:
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines()[1:]:
        if line.strip():
            try:
                pe, a, b, c = (int(v) for v in line.split("\t"))
            except ValueError:
                raise FormatError(f"{path}: bad sweep row {line!r}") from None
            rows.append((pe, a, b, c))
    return rows


def cmd_simulate(args) -> int:
    _pipeline_defaults(args)
    _require(args, "net", "input")
    net = load_network(args.net)
    tensors, _ = _read_inputs(args.input)
    cfg = AccelConfig().with_overrides(**_parse_overrides(args.set))
    modes = [("tbn", cfg)]
    if args.baseline:
        if args.baseline != "bnn":
            raise ConfigError(f"unknown baseline {args.baseline!r}")
        modes.append(("bnn", cfg.baseline()))
    results = _pmap(partial(_simulate_one, net, tuple(c for _, c in modes), args.pe_model, args.verbose),
                    tensors, args.workers)
    sim_dir = Path(args.out_dir) / "sim"
    sim_dir.mkdir(parents=True, exist_ok=True)
    bad = []
    reports: dict[str, list[SimReport]] = {m: [] for m, _ in modes}
    for i, per_mode in enumerate(results):
        for (mode, _), (text, ok, lines) in zip(modes, per_mode):
            (sim_dir / f"{mode}_{i:05d}.txt").write_text(text, encoding="utf-8")
            reports[mode].append(SimReport.from_text(text))
            if lines:
                (sim_dir / f"{mode}_{i:05d}.events.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
            if not ok:
                bad.append(f"image {i} ({mode})")
    sections = []
    summary = report.Section("simulate", ["mode", "images", "mean_cycles", "mean_time_s"])
    for mode, reps in reports.items():
        mean = float(np.mean([r.total_cycles for r in reps])) if reps else 0.0
        summary.rows.append([mode, len(reps), mean, mean / cfg.clock_hz])
    if not tensors:
        summary.notes.append("empty input archive")
    sections.append(summary)
    if reports["tbn"] and "bnn" in reports:
        sections.append(report.mode_section(mean_report(reports["tbn"]), mean_report(reports["bnn"])))
    if args.pe_sweep:
        pes = _parse_range(args.pe_sweep)
        per_image = _pmap(partial(_sweep_one, net, cfg, pes), tensors, args.workers)
        rows = []
        for j, pe in enumerate(pes):
            vals = [round(np.mean([img[j][k] for img in per_image])) if per_image else 0 for k in range(3)]
            rows.append((pe, *vals))
        text = "pe\tbaseline\tzero_skip\tzero_skip_reorder\n" + "".join(
            "\t".join(map(str, r)) + "\n" for r in rows)
        (Path(args.out_dir) / "pe_sweep.tsv").write_text(text, encoding="utf-8")
        if per_image:
            sections.append(report.sweep_section(rows))
    print(report.render(sections, args.format), end="")
    if bad:
        raise OracleMismatch("simulated result differs from the golden model for " + ", ".join(bad))
    return EXIT_OK


# -- report -----------------------------------------------------------------

def _load_activations(d: Path, net: NetworkConfig | None) -> dict[str, list]:
    files = {p.stem: p for p in sorted(d.glob("*.tbna"))}
    if net is not None:
        order = [l.name for l in net.layers if l.name in files]
    else:
        order = sorted(files)
    return {name: formats.read_archive(files[name])[0] for name in order}


def _load_sim(d: Path, mode: str) -> list[SimReport]:
    return [SimReport.from_text(p.read_text(encoding="utf-8")) for p in sorted(d.glob(f"{mode}_*.txt"))]


def cmd_report(args) -> int:
    _pipeline_defaults(args)
    if not (args.activations or args.sim or args.anchor or args.pe_sweep):
        raise ConfigError("report: missing inputs (give --activations, --sim, --pe-sweep or --anchor)")
    power = metrics.PowerModel.parse(args.power) if args.power else metrics.PowerModel()
    net = load_network(args.net, with_params=False) if args.net else None
    fig_dir = Path(args.out_dir) / "figures"
    figures = not args.no_figures
    sections = []

    if args.activations:
        acts = _load_activations(Path(args.activations), net)
        if not acts:
            raise ConfigError(f"no activation archives in {args.activations}")
        rows = []
        for name, encs in acts.items():
            st = SizeStats(0, 0)
            for e in encs:
                st = st + size_report(e)
            rows.append((name, st))
        total = SizeStats(0, 0)
        for _, st in rows:
            total = total + st
        sections.append(report.data_section(rows, total))
        if figures:
            plots.data_size(rows, fig_dir / "data_size.png")
        if net is not None:
            n_img = min(len(v) for v in acts.values())
            stats = metrics.MacStats()
            for i in range(n_img):
                one = metrics.mac_report(net, {k: v[i] for k, v in acts.items()})
                if not stats.rows:
                    stats = one
                else:
                    for a, b in zip(stats.rows, one.rows):
                        a.dense += b.dense
                        a.executed += b.executed
            sections.append(report.mac_section(stats))
            if figures and stats.rows:
                plots.mac_counts(stats, fig_dir / "mac_counts.png")

    tbn = None
    if args.sim:
        d = Path(args.sim)
        tbn_reps, bnn_reps = _load_sim(d, "tbn"), _load_sim(d, "bnn")
        if not tbn_reps:
            raise ConfigError(f"no simulation reports in {d}")
        tbn = mean_report(tbn_reps)
        sections.append(report.cycle_section(tbn))
        curves = {"TBN (zero skip + reorder)": tbn}
        if bnn_reps:
            bnn = mean_report(bnn_reps)
            sections.append(report.mode_section(tbn, bnn))
            curves["BNN baseline"] = bnn
        sections.append(report.throughput_section(tbn))
        if figures:
            plots.cycle_breakdown(tbn, fig_dir / "cycle_breakdown.png")
            plots.accumulated_time(curves, fig_dir / "accumulated_time.png")
    if args.sim or args.anchor:
        sections.append(report.fom_section(args.accuracy, power, tbn))
    if args.pe_sweep:
        rows = read_sweep(args.pe_sweep)
        sections.append(report.sweep_section(rows))
        if figures and rows:
            plots.pe_sweep(rows, fig_dir / "pe_sweep.png")

    text = report.render(sections, args.format)
    _out_path(args, args.out, "report.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK


# -- entry point ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global")
    g.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="seed for every random choice")
    g.add_argument("--manifest", default=argparse.SUPPRESS, help="JSON file of option values")
    g.add_argument("--out-dir", default=argparse.SUPPRESS, help="directory for outputs (default .)")
    g.add_argument("--format", choices=("table", "kv"), default=argparse.SUPPRESS)
    g.add_argument("--verbose", action="store_true", default=argparse.SUPPRESS)
    g.add_argument("--workers", type=int, default=argparse.SUPPRESS,
                   help="worker processes (default: available cores)")

    p = argparse.ArgumentParser(prog="tbnaccel", parents=[common],
                                description="Ternary-input binary-weight accelerator model.")
    sub = p.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS

    e = sub.add_parser("encode", parents=[common], help="CIFAR-10 batch -> spatial-DVS ternary archive")
    e.add_argument("cifar", nargs="?", default=S, help="CIFAR-10 binary batch file")
    e.add_argument("--dvs-config", type=int, default=S, help="DVS configuration 1-5 (default 5)")
    e.add_argument("--thresholds", default=S, help="POS[,NEG] DVS thresholds (default: calibrate)")
    e.add_argument("--target-density", type=float, default=S, help="calibration target (default 0.462)")
    e.add_argument("--synthetic", type=int, default=S, help="emit N random tensors instead of reading CIFAR")
    e.add_argument("--shape", default=S, help="HxWxC for --synthetic (default 32x32x2)")
    e.add_argument("--out", default=S, help="archive path (default OUT_DIR/encoded.tbna)")

    w = sub.add_parser("genweights", parents=[common], help="random weights, unit BN, calibrated thresholds")
    w.add_argument("--topology", default=S, help="network config to fill (default: built-in network)")
    w.add_argument("--probes", default=S, help="archive of probe inputs (default: random)")
    w.add_argument("--probe-count", type=int, default=S, help="random probes when --probes is absent (default 8)")
    w.add_argument("--target-density", type=float, default=S)

    i = sub.add_parser("infer", parents=[common], help="golden-model labels and logits")
    i.add_argument("--net", default=S, help="network config (default OUT_DIR/net.cfg)")
    i.add_argument("--input", default=S, help="encoded archive (default OUT_DIR/encoded.tbna)")
    i.add_argument("--out", default=S, help="labels file (default OUT_DIR/labels.tsv)")
    i.add_argument("--dump-activations", default=S, help="write each conv/FC input as DIR/<layer>.tbna")

    s = sub.add_parser("simulate", parents=[common], help="cycle simulation checked against the golden model")
    s.add_argument("--net", default=S, help="network config (default OUT_DIR/net.cfg)")
    s.add_argument("--input", default=S, help="encoded archive (default OUT_DIR/encoded.tbna)")
    s.add_argument("--set", action="append", default=S, metavar="KEY=VALUE", help="accelerator setting override")
    s.add_argument("--baseline", choices=("bnn",), default=S, help="also run with skipping and reordering off")
    s.add_argument("--pe-sweep", default=S, metavar="LO..HI", help="cycle table per PE count")
    s.add_argument("--pe-model", action="store_true", default=S, help="step PEs bit by bit (slow cross-check)")

    r = sub.add_parser("report", parents=[common], help="data, MAC, cycle, throughput and FoM tables")
    r.add_argument("--net", default=S, help="network config for the MAC table (default OUT_DIR/net.cfg)")
    r.add_argument("--activations", default=S, help="directory written by infer --dump-activations")
    r.add_argument("--sim", default=S, help="directory of simulation reports")
    r.add_argument("--pe-sweep", default=S, help="sweep table written by simulate --pe-sweep")
    r.add_argument("--power", default=S, metavar="HZ:MW,...", help="power table (default 1e7:1.6)")
    r.add_argument("--accuracy", type=float, default=S, help="top-1 accuracy in percent (default 82.56)")
    r.add_argument("--anchor", action="store_true", default=S, help="include the FoM anchor without a simulation")
    r.add_argument("--no-figures", action="store_true", default=S)
    r.add_argument("--out", default=S, help="report file (default OUT_DIR/report.txt)")
    return p


def resolve_args(argv=None) -> argparse.Namespace:
    """Parse flags, then fill gaps from the manifest, then from DEFAULTS."""
    ns = build_parser().parse_args(argv)
    given = vars(ns)
    manifest = {}
    if "manifest" in given:
        try:
            manifest = json.loads(Path(given["manifest"]).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read manifest: {e}") from None
        if not isinstance(manifest, dict):
            raise ConfigError("manifest must be a JSON object")
        unknown = set(manifest) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown manifest keys: {', '.join(sorted(unknown))}")
    merged = {**DEFAULTS, **manifest, **given}
    if merged["workers"] is None:
        merged["workers"] = os.cpu_count() or 1
    return argparse.Namespace(**merged)


COMMANDS = {"encode": cmd_encode, "genweights": cmd_genweights, "infer": cmd_infer,
            "simulate": cmd_simulate, "report": cmd_report}


def main(argv=None) -> int:
    try:
        args = resolve_args(argv)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    Path(args.out_dir).mkdir(parents=True, exist_ok=True)
    try:
        return COMMANDS[args.command](args)
    except FormatError as e:
        code, msg = EXIT_FORMAT, e
    except OracleMismatch as e:
        code, msg = EXIT_MISMATCH, e
    except (ConfigError, CalibrationError) as e:
        code, msg = EXIT_CONFIG, e
    except TbnError as e:
        code, msg = EXIT_FAIL, e
    except OSError as e:
        code, msg = EXIT_FORMAT, f"{e.filename or ''}: {e.strerror}"
    print(f"error: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
