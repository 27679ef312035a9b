import numpy as np
import pytest

from tbnaccel import formats
from tbnaccel.errors import ConfigError
from tbnaccel.network import (
    LayerKind,
    LayerSpec,
    MEMORY_LIMIT_BYTES,
    NetworkConfig,
    default_network,
    load_network,
    memory_budget_bits,
    network_to_text,
    parse_network,
    random_parameters,
    save_network,
)


def test_default_topology():
    net = default_network()
    assert [l.name for l in net.layers] == [
        "cv1", "qn1", "cv2", "pl1", "bn1", "qn2", "cv3", "qn3", "cv4", "pl2", "bn2", "qn4",
        "cv5", "qn5", "cv6", "pl3", "bn3", "qn6", "fc1", "qn7", "fc2"]
    assert net.input_shape == (32, 32, 2)
    assert net.layer("fc1").in_shape == (4, 4, 256)
    assert net.layer("fc2").out_shape == (1, 1, 10)


def test_default_fits_memory_budget():
    b = memory_budget_bits(default_network())
    assert b["total"] == b["weights"] + b["activations"] + b["tmp"] + b["params"]
    assert b["total"] / 8 <= MEMORY_LIMIT_BYTES


def test_shape_chain_and_final_layer():
    fc = LayerSpec("f", LayerKind.FC, (1, 1, 4), (1, 1, 3))
    with pytest.raises(ConfigError):
        NetworkConfig((fc,), 2)
    conv = LayerSpec("c", LayerKind.CONV3X3, (2, 2, 1), (2, 2, 4))
    with pytest.raises(ConfigError):
        NetworkConfig((conv,), 4)
    with pytest.raises(ConfigError):
        LayerSpec("p", LayerKind.POOL_RELU, (3, 3, 1), (1, 1, 1))
    q = LayerSpec("q", LayerKind.QUANTIZE, (2, 2, 4), (2, 2, 4))
    with pytest.raises(ConfigError):
        NetworkConfig((conv, q, LayerSpec("f", LayerKind.FC, (2, 2, 5), (1, 1, 3))), 3)


def test_conv_needs_ternary_input():
    c1 = LayerSpec("c1", LayerKind.CONV3X3, (2, 2, 1), (2, 2, 4))
    c2 = LayerSpec("c2", LayerKind.CONV3X3, (2, 2, 4), (2, 2, 4))
    f = LayerSpec("f", LayerKind.FC, (2, 2, 4), (1, 1, 2))
    with pytest.raises(ConfigError):
        NetworkConfig((c1, c2, f), 2)


def test_text_round_trip():
    net = default_network()
    back = parse_network(network_to_text(net))
    assert [(l.name, l.kind, l.in_shape, l.out_shape, l.weight_ref) for l in back.layers] == \
        [(l.name, l.kind, l.in_shape, l.out_shape, l.weight_ref) for l in net.layers]


def test_save_load_round_trip(tmp_path):
    net = random_parameters(default_network(), np.random.default_rng(3))
    save_network(net, tmp_path / "net.cfg")
    back = load_network(tmp_path / "net.cfg")
    for a, b in zip(net.layers, back.layers):
        if a.weights is not None:
            assert a.weights == b.weights
        if a.quant_thresholds is not None:
            assert np.array_equal(a.quant_thresholds, b.quant_thresholds)


def test_missing_weight_file_names_layer(tmp_path):
    net = random_parameters(default_network(), np.random.default_rng(3))
    save_network(net, tmp_path / "net.cfg")
    (tmp_path / "cv3.tbnw").unlink()
    with pytest.raises(ConfigError, match="cv3"):
        load_network(tmp_path / "net.cfg")


def test_bad_config_text():
    with pytest.raises(ConfigError):
        parse_network("[layer x]\nkind = conv3x3\n")
    with pytest.raises(ConfigError):
        parse_network("[network]\nclass_count = 2\n[layer x]\nkind = magic\nin_shape = 1x1x1\nout_shape = 1x1x1\n")


def test_param_files_formats(tmp_path):
    net = random_parameters(default_network(), np.random.default_rng(0))
    save_network(net, tmp_path / "n.cfg")
    assert formats.read_params(tmp_path / "bn1.tbnp").tolist() == [256] * 64
    assert formats.read_params(tmp_path / "qn1.tbnp").shape == (64, 2)
