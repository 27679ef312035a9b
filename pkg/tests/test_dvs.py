import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tbnaccel import dvs
from tbnaccel.errors import CalibrationError


def test_rgb_to_gray_examples():
    assert dvs.rgb_to_gray(0, 0, 0).intensity.item() == 0
    assert dvs.rgb_to_gray(255, 255, 255).intensity.item() == 255
    assert dvs.rgb_to_gray(100, 50, 200).intensity.item() == 82


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 255), st.integers(0, 255), st.integers(0, 255))
def test_rgb_to_gray_matches_float_rounding(r, g, b):
    y = 0.299 * r + 0.587 * g + 0.114 * b
    got = dvs.rgb_to_gray(r, g, b).intensity.item()
    assert abs(got - y) <= 0.5 + 1e-9


def _frame(center, a, b):
    # 3x3 frame: diagonal A of config #5 is (-1,-1), (1,1) around the center
    f = np.full((3, 3), 128)
    f[1, 1], f[0, 0], f[2, 2] = center, a, b
    return dvs.GrayFrame(f)


def test_diagonal_pair_examples():
    cfg = dvs.get_config(5).with_thresholds(20)
    assert dvs.encode_frame(_frame(100, 80, 60), cfg).data[1, 1, 0] == 1
    assert dvs.encode_frame(_frame(40, 80, 60), cfg).data[1, 1, 0] == -1
    # boundary: diff exactly the threshold stays zero (strict comparison)
    assert dvs.encode_frame(_frame(90, 80, 60), cfg).data[1, 1, 0] == 0


def test_uniform_frame_all_zero():
    for cfg in dvs.config_catalog():
        t = dvs.encode_frame(dvs.GrayFrame(np.full((8, 8), 77)), cfg)
        assert t.nnz == 0 and t.channels == cfg.channels


def test_catalog():
    cat = dvs.config_catalog()
    assert len(cat) == 5
    assert dvs.get_config(5).channels == 2
    assert dvs.get_config(1).channels == 1
    assert [c.id for c in cat] == [1, 2, 3, 4, 5]
    with pytest.raises(KeyError):
        dvs.get_config(6)


def test_config_validation():
    with pytest.raises(ValueError):
        dvs.DvsConfig(9, (((0, 0), (1, 1)),), 1, -1)
    with pytest.raises(ValueError):
        dvs.DvsConfig(9, (((1, 1),),), 1, 1)
    with pytest.raises(ValueError):
        dvs.DvsConfig(9, ((),), 1, -1)


def test_encode_matches_loop_oracle(rng):
    img = rng.integers(0, 256, (9, 7))
    for cfg in dvs.config_catalog():
        cfg = cfg.with_thresholds(6.5, -4)
        got = dvs.encode_frame(dvs.GrayFrame(img), cfg).data
        h, w = img.shape
        for y in range(h):
            for x in range(w):
                for k, ch in enumerate(cfg.channel_patterns):
                    nb = [img[min(max(y + dy, 0), h - 1), min(max(x + dx, 0), w - 1)] for dy, dx in ch]
                    diff = img[y, x] - sum(nb) / len(nb)
                    want = 1 if diff > 6.5 else (-1 if diff < -4 else 0)
                    assert got[y, x, k] == want


def test_calibration_reaches_target(rng):
    frames = [dvs.GrayFrame(rng.integers(0, 256, (32, 32))) for _ in range(4)]
    cfg = dvs.get_config(5)
    pos, neg = dvs.calibrate_thresholds(frames, cfg, 0.462)
    assert neg == -pos > -np.inf
    cfg = cfg.with_thresholds(pos, neg)
    d = np.mean([dvs.encode_frame(f, cfg).density for f in frames])
    assert 0.452 <= d <= 0.472


def test_calibration_uniform_fails():
    frames = [dvs.GrayFrame(np.full((8, 8), 3))]
    with pytest.raises(CalibrationError):
        dvs.calibrate_thresholds(frames, dvs.get_config(5), 0.3)


def test_huge_threshold_gives_zero_density(rng):
    f = dvs.GrayFrame(rng.integers(0, 256, (16, 16)))
    assert dvs.encode_frame(f, dvs.get_config(4).with_thresholds(1e6)).nnz == 0
