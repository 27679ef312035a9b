import numpy as np
import pytest

from conftest import random_small_net
from tbnaccel import metrics, report
from tbnaccel.accel import AccelConfig, LayerTrace, SimReport, simulate_network
from tbnaccel.errors import ConfigError
from tbnaccel.golden import infer
from tbnaccel.metrics import FomInputs, PowerModel
from tbnaccel.network import LayerKind, LayerSpec, NetworkConfig
from tbnaccel.sparse import BinaryWeightTensor, TernaryTensor, encode_sparse


def test_fom_examples():
    e = metrics.energy_mj(1.6, 0.44)
    assert e == pytest.approx(0.704)
    assert metrics.fom(FomInputs(82.56, 0.44, e)) == pytest.approx(266.5, abs=0.1)
    assert metrics.fom(FomInputs(100, 1, 1)) == 100
    assert metrics.fom(FomInputs(90, 2, 3)) == pytest.approx(metrics.fom(FomInputs(90, 1, 3)) / 2)
    with pytest.raises(ValueError):
        FomInputs(101, 1, 1)
    with pytest.raises(ValueError):
        FomInputs(50, 0, 1)


def test_energy_linearity():
    assert metrics.energy_mj(1.6, 0) == 0
    rep = SimReport([LayerTrace("a", "conv3x3", mac=1000)], np.zeros(1), 0, 10e6)
    slow = SimReport(rep.layers, rep.logits, 0, 5e6)
    flat = PowerModel(((5e6, 1.6), (10e6, 1.6)))
    assert slow.time_s == 2 * rep.time_s
    assert metrics.energy_report(slow, flat) == pytest.approx(2 * metrics.energy_report(rep, flat))


def test_power_model():
    pm = PowerModel.parse("1e7:1.6,2e7:3.0")
    assert pm.power_mw(1.5e7) == pytest.approx(2.3)
    with pytest.raises(ConfigError):
        pm.power_mw(5e7)
    assert pm.power_mw(5e7, extrapolate=True) == 3.0
    with pytest.raises(ConfigError):
        PowerModel.parse("1e7")
    with pytest.raises(ConfigError):
        PowerModel(((1e7, 2.0), (2e7, 1.0)))


def test_gops_definition():
    rep = SimReport([LayerTrace("c", "conv3x3", mac=10_000, executed_macs=400_000, skipped_macs=600_000)],
                    np.zeros(1), 0, 10e6)
    g = metrics.throughput_report(rep)  # 1 M dense MACs in 1 ms
    assert g["dense_equivalent_gops"] == pytest.approx(2.0)
    assert g["executed_gops"] == pytest.approx(0.8)
    rep0 = SimReport([LayerTrace("c", "conv3x3", mac=5, skipped_macs=10)], np.zeros(1), 0, 10e6)
    assert metrics.throughput_report(rep0)["executed_gops"] == 0
    assert metrics.peak_gops(AccelConfig()) == pytest.approx(3 * 6 * 32 * 2 * 10e6 / 1e9)


def _conv_net(shape, cout, rng):
    h, w, c = shape
    cv = LayerSpec("cv", LayerKind.CONV3X3, shape, (h, w, cout), weights=BinaryWeightTensor.random(3, 3, c, cout, rng))
    q = LayerSpec("q", LayerKind.QUANTIZE, (h, w, cout), (h, w, cout), quant_thresholds=np.tile([0, -1], (cout, 1)))
    fc = LayerSpec("fc", LayerKind.FC, (h, w, cout), (1, 1, 2), weights=BinaryWeightTensor.random(1, 1, h * w * cout, 2, rng))
    return NetworkConfig((cv, q, fc), 2)


def test_mac_reduction_limits(rng):
    net = _conv_net((6, 6, 4), 8, rng)
    zero = metrics.mac_report(net, {"cv": TernaryTensor.zeros(6, 6, 4)})
    assert zero.reduction == 1.0
    full = metrics.mac_report(net, {"cv": TernaryTensor(np.ones((6, 6, 4), dtype=np.int8))})
    assert full.reduction == 0.0


def test_mac_reduction_tracks_density(rng):
    net = _conv_net((16, 16, 16), 8, rng)
    for d in (0.2, 0.462, 0.8):
        r = np.mean([metrics.mac_report(net, {"cv": TernaryTensor.random((16, 16, 16), d, rng)}).reduction
                     for _ in range(5)])
        assert r == pytest.approx(1 - d, abs=0.01)


def test_mac_report_agrees_with_simulator():
    rng = np.random.default_rng(9)
    for _ in range(8):
        net, x = random_small_net(rng)
        acts = infer(net, x, keep_activations=True).activations
        stats = metrics.mac_report(net, acts)
        _, rep = simulate_network(net, x)
        assert stats.executed == rep.executed_macs
        assert stats.dense == rep.dense_macs


def test_data_report(rng):
    acts = {"a": encode_sparse(TernaryTensor.random((8, 8, 32), 0.462, rng)),
            "b": TernaryTensor.random((4, 4, 64), 0.462, rng)}
    rows, total = metrics.data_report(acts)
    assert [n for n, _ in rows] == ["a", "b"]
    assert total.elements == 2048 + 1024
    for _, s in rows:
        assert s.reduction_2bit_vs_8bit == 0.75
        assert s.reduction_encoded_vs_2bit == pytest.approx(0.269, abs=0.002)
        assert s.reduction_encoded_vs_8bit == pytest.approx(0.817, abs=0.002)


def test_fom_section_shows_anchor_and_reported():
    sec = report.fom_section(82.56, PowerModel(), None)
    text = report.render([sec], "table")
    assert "266.5" in text and "257.9" in text
    kv = report.render([sec], "kv")
    assert "fom.anchor.fom_pct_per_s_per_mj=266.5" in kv
    assert "fom.reported.fom_pct_per_s_per_mj=257.9" in kv
    assert any("3.3%" in n for n in sec.notes)


def test_render_kv_and_table():
    s = report.Section("t", ["name", "x", "y"], [["r1", 1, 0.5], ["r2", 20000000.0, "-"]], ["hello"])
    assert report.render_kv([s]).splitlines() == ["t.r1.x=1", "t.r1.y=0.5", "t.r2.x=20000000.0", "t.r2.y=-",
                                                  "t.note0=hello"]
    table = report.render_table([s]).splitlines()
    assert table[0] == "== t =="
    assert table[3].startswith("r1 ") and table[-1] == "note: hello"
