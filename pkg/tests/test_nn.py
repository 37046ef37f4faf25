import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from framedisp.errors import ConfigError, FormatError, InvalidInputError, ShapeError
from framedisp.nn import (Regressor, RegressorSpec, TrainConfig, load_regressor, loss_and_grads,
                          mse_loss, predict, save_regressor, train)

SPEC = RegressorSpec((12, 10), n_out=3, channels=(3, 4), flow_scale=2.0, label_scale=0.5)


def test_mse_examples():
    H = np.array([0.01, -0.02, 0.003])
    assert mse_loss(H, H) == 0.0
    assert mse_loss([0.01], [0.0]) == pytest.approx(1e-4, rel=1e-12)
    assert mse_loss([0.0], [0.0], [np.array([2.0])], 1e-4) == pytest.approx(4e-4, rel=1e-12)
    with pytest.raises(ShapeError):
        mse_loss([0.0, 1.0], [0.0])


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 10.0), st.floats(0.01, 10.0))
def test_l2_term_grows_with_weight_norm(norm, extra):
    H = np.array([0.1, 0.2])
    w = np.array([0.6, 0.8])
    small = mse_loss(H, H, [w * norm], 1e-4)
    large = mse_loss(H, H, [w * (norm + extra)], 1e-4)
    assert large > small


@pytest.mark.parametrize("pooling", ["flatten", "gap"])
def test_gradients_match_central_differences(pooling):
    spec = RegressorSpec((12, 10), n_out=3, channels=(3, 4), pooling=pooling)
    model = Regressor(spec, seed=3)
    rng = np.random.default_rng(4)
    x = model.encode(rng.normal(size=(4, 12, 10, 2)))
    target = rng.normal(size=(4, 3))
    l2 = 1e-2
    _, grads = loss_and_grads(model, x, target, l2)
    for (layer, name), g in zip(model.parameters(), grads):
        arr = getattr(layer, name)
        for _ in range(10):
            idx = tuple(rng.integers(s) for s in arr.shape)
            old = arr[idx]
            step = 1e-6
            arr[idx] = old + step
            up = loss_and_grads(model, x, target, l2)[0]
            arr[idx] = old - step
            down = loss_and_grads(model, x, target, l2)[0]
            arr[idx] = old
            fd = (up - down) / (2 * step)
            denom = max(abs(fd), abs(g[idx]), 1e-8)
            assert abs(fd - g[idx]) / denom <= 1e-4, (name, idx, fd, g[idx])


def test_output_length_and_layer_chain():
    model = Regressor(SPEC)
    out = predict(model, np.zeros((12, 10, 2)))
    assert out.shape == (3,)
    assert predict(model, np.zeros((7, 12, 10, 2))).shape == (7, 3)
    with pytest.raises(ShapeError):
        predict(model, np.zeros((10, 12, 2)))


def test_zero_weight_regressor_outputs_bias():
    model = Regressor(SPEC, seed=None)
    K = np.random.default_rng(0).normal(size=(12, 10, 2))
    assert not predict(model, K).any()
    model.layers[-1].bias = np.array([0.1, -0.2, 0.3])
    np.testing.assert_allclose(predict(model, K), np.array([0.1, -0.2, 0.3]) * SPEC.label_scale)
    nobias = Regressor(RegressorSpec((12, 10), n_out=3, channels=(3,), bias=False), seed=None)
    assert not predict(nobias, K).any()


def test_predict_is_deterministic():
    model = Regressor(SPEC, seed=1)
    K = np.random.default_rng(1).normal(size=(12, 10, 2))
    assert predict(model, K).tobytes() == predict(model, K).tobytes()


def test_stationary_point_leaves_weights_unchanged():
    model = Regressor(SPEC, seed=None)
    target = np.array([[0.05, -0.1, 0.2]])
    model.layers[-1].bias = target[0] / SPEC.label_scale
    before = [a.copy() for _, a in model.named_arrays()]
    K = np.random.default_rng(2).normal(size=(1, 12, 10, 2))
    res = train((K, target), TrainConfig(epochs=1, l2=0.0), SPEC, model=model)
    assert res.history[0][1] == 0.0
    for b, (_, a) in zip(before, model.named_arrays()):
        np.testing.assert_array_equal(a, b)


def test_overfits_ten_samples():
    rng = np.random.default_rng(0)
    K = rng.normal(size=(10, 16, 16, 2))
    H = rng.uniform(-0.025, 0.025, (10, 5))
    spec = RegressorSpec((16, 16), label_scale=0.025)
    cfg = TrainConfig(learning_rate=0.05, batch_size=5, decay=1.0, epochs=200, l2=0.0)
    res = train((K, H), cfg, spec)
    assert np.mean((predict(res.model, K) - H) ** 2) <= 1e-5
    assert len(res.history) == 200


def test_seeded_training_is_bit_reproducible():
    rng = np.random.default_rng(5)
    K, H = rng.normal(size=(12, 12, 10, 2)), rng.uniform(-0.5, 0.5, (12, 3))
    cfg = TrainConfig(epochs=3, batch_size=4, seed=9)
    a = train((K, H), cfg, SPEC, (K[:4], H[:4]))
    b = train((K, H), cfg, SPEC, (K[:4], H[:4]))
    assert a.history == b.history
    for (_, x), (_, y) in zip(a.model.named_arrays(), b.model.named_arrays()):
        assert x.tobytes() == y.tobytes()
    assert a.curve_csv().splitlines()[0] == "epoch,train_loss,test_loss"
    assert len(a.curve_csv().splitlines()) == 4


def test_empty_and_inconsistent_training_sets():
    with pytest.raises(InvalidInputError):
        train((np.zeros((0, 12, 10, 2)), np.zeros((0, 3))), TrainConfig(), SPEC)
    with pytest.raises(ShapeError):
        train((np.zeros((2, 12, 10, 2)), np.zeros((3, 3))), TrainConfig(), SPEC)


@pytest.mark.parametrize("kwargs", [{"learning_rate": 0}, {"batch_size": 0}, {"decay": 0},
                                    {"decay": 1.5}, {"l2": -1}])
def test_invalid_train_config(kwargs):
    with pytest.raises(ConfigError):
        TrainConfig(**kwargs)


def test_default_training_schedule():
    cfg = TrainConfig()
    assert (cfg.learning_rate, cfg.batch_size, cfg.decay, cfg.epochs, cfg.l2) == \
        (0.01, 20, 0.94, 30, 1e-4)


def test_weights_round_trip(tmp_path):
    model = Regressor(SPEC, seed=4)
    save_regressor(model, tmp_path / "w.bin")
    raw = (tmp_path / "w.bin").read_bytes()
    assert raw[:6] == b"FDREG\x00"
    back = load_regressor(tmp_path / "w.bin")
    assert back.spec == model.spec
    for (n1, a), (n2, b) in zip(model.named_arrays(), back.named_arrays()):
        assert n1 == n2
        np.testing.assert_array_equal(b, a.astype(np.float32))
    K = np.random.default_rng(3).normal(size=(12, 10, 2))
    np.testing.assert_allclose(predict(back, K), predict(model, K), rtol=1e-5, atol=1e-7)


def test_weights_reject_foreign_file(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"not a weight file")
    with pytest.raises(FormatError):
        load_regressor(tmp_path / "x.bin")
