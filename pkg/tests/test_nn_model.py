import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from legassist.errors import FormatError, InvalidArgumentError, ShapeError, TrainingDivergedError
from legassist.nn import (SegmentationMask, TrainConfig, UNet, UNetConfig, load_model,
                          occupied_positive_weight, positive_weight, read_mask, save_model, train, unet_forward,
                          weighted_bce, weighted_bce_with_logits, write_mask)
from legassist.nn.loss import EPS
from legassist.nn.ops import sigmoid
from legassist.nn.serialize import MAGIC, model_from_bytes, model_to_bytes
from legassist.raster import GridSpec, OccupancyGrid
from legassist.sim import gen_training_set

from gradcheck import numeric_grad, rel_error

SMALL = UNetConfig(input_size=32, channels=(4, 8))


# ---------------------------------------------------------------- loss

def test_bce_half_is_ln2():
    loss, _ = weighted_bce(np.array([0.5]), np.array([1.0]), 1.0)
    assert loss == pytest.approx(math.log(2), abs=1e-12)


def test_bce_perfect_prediction_bounded():
    y = np.array([1.0, 0.0, 1.0, 0.0])
    w = 37.2
    loss, _ = weighted_bce(y.copy(), y, w)
    assert 0 <= loss <= w * math.log(1 / (1 - EPS)) + 1e-15


@pytest.mark.parametrize("seed", range(20))
def test_bce_gradient(seed):
    rng = np.random.default_rng(seed)
    shape = tuple(int(v) for v in rng.integers(1, 6, size=3))
    p = rng.uniform(0.05, 0.95, size=shape)
    y = (rng.random(shape) < 0.3).astype(float)
    _, g = weighted_bce(p, y, 37.2)
    assert rel_error(g, numeric_grad(lambda: weighted_bce(p, y, 37.2)[0], p)) < 1e-5


@pytest.mark.parametrize("seed", range(20))
def test_bce_logits_gradient_and_agreement(seed):
    rng = np.random.default_rng(seed)
    shape = tuple(int(v) for v in rng.integers(1, 6, size=3))
    z = rng.normal(scale=2, size=shape)
    y = (rng.random(shape) < 0.3).astype(float)
    loss, g = weighted_bce_with_logits(z, y, 37.2)
    assert rel_error(g, numeric_grad(lambda: weighted_bce_with_logits(z, y, 37.2)[0], z)) < 1e-5
    assert loss == pytest.approx(weighted_bce(sigmoid(z), y, 37.2)[0], rel=1e-9)


def test_bce_unit_weight_is_plain_bce():
    rng = np.random.default_rng(1)
    p = rng.uniform(0.01, 0.99, size=50)
    y = (rng.random(50) < 0.5).astype(float)
    plain = -np.mean(y * np.log(p) + (1 - y) * np.log(1 - p))
    assert weighted_bce(p, y, 1.0)[0] == plain


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.booleans()), min_size=1, max_size=30),
       st.floats(0.01, 1e4))
def test_bce_non_negative(pairs, w):
    p = np.array([a for a, _ in pairs])
    y = np.array([float(b) for _, b in pairs])
    assert weighted_bce(p, y, w)[0] >= 0


def test_bce_shape_mismatch():
    with pytest.raises(ShapeError):
        weighted_bce(np.zeros(3), np.zeros(4))


def test_positive_weight_ratio():
    m = np.zeros((10, 100), dtype=np.uint8)
    m[:, 0] = 255  # 1% positives
    assert positive_weight([m]) == pytest.approx(99, rel=0.01)
    with pytest.raises(InvalidArgumentError):
        positive_weight([np.zeros((4, 4))])


# ---------------------------------------------------------------- model

def test_unet_size():
    assert 20_000 < UNet().n_parameters() < 40_000


def test_zero_grid_inference():
    mask = unet_forward(OccupancyGrid(np.zeros((256, 256), np.uint8)), UNet(seed=3))
    assert mask.probabilities.shape == (256, 256)
    assert np.all(np.isfinite(mask.probabilities))
    assert np.all((mask.probabilities >= 0) & (mask.probabilities <= 1))


def test_inference_deterministic():
    grid = gen_training_set(1, 2)[0][0]
    model = UNet(seed=1)
    a, b = unet_forward(grid, model), unet_forward(grid, model)
    assert np.array_equal(a.probabilities, b.probabilities)


def test_inference_size_mismatch():
    with pytest.raises(ShapeError):
        unet_forward(OccupancyGrid(np.zeros((64, 64), np.uint8), GridSpec(64)), UNet())


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.1, 1e3))
def test_output_is_probability(seed, scale):
    model = UNet(SMALL, seed=seed % 1000)
    x = np.random.default_rng(seed).normal(scale=scale, size=(1, 32, 32, 1))
    p = model.predict(x)
    assert np.all((p >= 0) & (p <= 1))


def test_config_invariants():
    with pytest.raises(InvalidArgumentError):
        UNetConfig(input_size=100, channels=(8, 16, 32))
    with pytest.raises(InvalidArgumentError):
        UNetConfig(channels=())
    with pytest.raises(InvalidArgumentError):
        TrainConfig(learning_rate=0)
    with pytest.raises(InvalidArgumentError):
        TrainConfig(pos_weight=-1)
    with pytest.raises(InvalidArgumentError):
        TrainConfig(weight_scope="empty")


# ---------------------------------------------------------------- serialization

def test_model_round_trip(tmp_path):
    model = UNet(seed=4)
    save_model(tmp_path / "m.bin", model)
    loaded = load_model(tmp_path / "m.bin")
    assert (tmp_path / "m.bin").read_bytes().startswith(MAGIC)
    for k, v in model.params.items():
        assert np.array_equal(v, loaded.params[k])
    grid = gen_training_set(1, 3)[0][0]
    assert np.array_equal(unet_forward(grid, model).binary(), unet_forward(grid, loaded).binary())


def test_model_header_layout():
    data = model_to_bytes(UNet(SMALL))
    assert data[:8] == b"MINASEG1"
    count = struct.unpack_from("<I", data, 8)[0]
    assert count == len(UNet(SMALL).params)
    name_len = struct.unpack_from("<I", data, 12)[0]
    assert data[16:16 + name_len] == b"enc0.conv0.w"


@pytest.mark.parametrize("cut", [0, 5, 8, 11, 20, 100, -1])
def test_truncated_model(cut):
    data = model_to_bytes(UNet(SMALL))
    bad = data[:cut] if cut >= 0 else data[:-1]
    with pytest.raises(FormatError) as err:
        model_from_bytes(bad, 32)
    assert err.value.location is not None and 0 <= err.value.location <= len(bad)


def test_bad_magic_and_trailing():
    data = model_to_bytes(UNet(SMALL))
    with pytest.raises(FormatError) as err:
        model_from_bytes(b"NOTASEG1" + data[8:], 32)
    assert err.value.location == 0
    with pytest.raises(FormatError) as err:
        model_from_bytes(data + b"\0", 32)
    assert err.value.location == len(data)


def test_wrong_layout_rejected():
    m = UNet(SMALL)
    del m.params["head.b"]
    with pytest.raises(FormatError):
        model_from_bytes(model_to_bytes(m), 32)


def test_mask_file_round_trip(tmp_path):
    probs = np.zeros((256, 256))
    probs[100:104, 50:55] = 1.0
    mask = SegmentationMask(probs, 0.4)
    write_mask(tmp_path / "m.pgm", mask)
    back = read_mask(tmp_path / "m.pgm")
    assert back.threshold == 0.4
    assert np.array_equal(back.binary(), mask.binary())


def test_mask_invariants():
    with pytest.raises(InvalidArgumentError):
        SegmentationMask(np.full((4, 4), 1.5))
    with pytest.raises(InvalidArgumentError):
        SegmentationMask(np.zeros((4, 4)), threshold=1.0)


# ---------------------------------------------------------------- training

def _leg_sample(n=64, seed=5):
    return [d for d in gen_training_set(20, seed, grid=GridSpec(n)) if d[1].any()]


def test_overfit_single_sample():
    data = _leg_sample()[:1]
    res = train(data, UNetConfig(input_size=64),
                TrainConfig(epochs=200, batch_size=1, crop_size=None, learning_rate=3e-3))
    assert len(res.loss_history) == 200
    assert res.loss_history[-1] < 0.01 * res.loss_history[0]


def test_training_deterministic():
    data = _leg_sample()[:4]
    cfg = TrainConfig(epochs=2, batch_size=2, crop_size=32, seed=11)
    a = train(data, UNetConfig(input_size=64, channels=(4, 8)), cfg)
    b = train(data, UNetConfig(input_size=64, channels=(4, 8)), cfg)
    assert a.loss_history == b.loss_history
    assert all(np.array_equal(a.model.params[k], b.model.params[k]) for k in a.model.params)


def test_auto_weight_matches_definition():
    data = _leg_sample()[:4]
    net = UNetConfig(input_size=64, channels=(4, 8))
    res = train(data, net, TrainConfig(epochs=1, batch_size=4, crop_size=None, weight_scope="all"),
                max_steps=1)
    assert res.pos_weight == positive_weight([m for _, m in data])
    res = train(data, net, TrainConfig(epochs=1, batch_size=4, crop_size=None), max_steps=1)
    assert res.pos_weight == occupied_positive_weight([g.pixels for g, _ in data], [m for _, m in data])


def test_occupied_weight_counts_returns_only():
    grid = np.zeros((10, 10), np.uint8)
    mask = np.zeros_like(grid)
    grid[0, :6] = 255  # six returns, two of them on a leg
    mask[0, :2] = 255
    assert occupied_positive_weight([grid], [mask]) == 2.0
    assert positive_weight([mask]) == 49.0
    assert occupied_positive_weight([mask], [mask]) == 1.0  # legs only: nothing to balance
    with pytest.raises(InvalidArgumentError):
        occupied_positive_weight([grid], [np.zeros_like(grid)])


def test_crops_per_sample_sets_step_count():
    data = _leg_sample()[:4]
    res = train(data, UNetConfig(input_size=64, channels=(4, 8)),
                TrainConfig(epochs=2, batch_size=4, crop_size=32, crops_per_sample=3))
    assert len(res.loss_history) == 2 * 4 * 3 // 4


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_reports_step():
    data = _leg_sample()[:2]
    model = UNet(UNetConfig(input_size=64, channels=(4, 8)))
    model.params["head.b"][:] = np.nan
    with pytest.raises(TrainingDivergedError) as err:
        train(data, model.cfg, TrainConfig(epochs=1, batch_size=1), model=model)
    assert err.value.step == 0


def test_empty_dataset():
    with pytest.raises(InvalidArgumentError):
        train([], SMALL)
