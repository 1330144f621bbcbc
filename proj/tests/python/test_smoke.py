"""Smoke tests for the python extension (built module on PYTHONPATH)."""

import numpy as np
import pytest

import earconv as ec


@pytest.fixture(scope="module")
def model():
    return ec.build_earnet_small(seed=4)


def test_model_metadata(model):
    assert model.arch == "earnet-small"
    assert model.input_shape == (32, 32, 3)
    assert model.total_params == 40018
    assert model.conv_layers == [f"Conv{i}" for i in range(1, 8)]


def test_forward_probabilities(model):
    x = np.random.default_rng(0).random((3, 32, 32, 3), dtype=np.float32)
    probs = model.forward(x)
    assert probs.shape == (3, 2)
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-5)
    assert np.array_equal(probs, model.forward(x))  # eval is deterministic


def test_bad_input_shape_raises(model):
    with pytest.raises(ValueError):
        model.forward(np.zeros((1, 16, 16, 3), dtype=np.float32))


def test_feature_maps(model):
    x = np.random.default_rng(1).random((1, 32, 32, 3), dtype=np.float32)
    conv1, conv7 = model.feature_maps(x, ["Conv1", "Conv7"])
    assert conv1.shape == (1, 14, 14, 64)
    assert conv7.shape == (1, 1, 1, 8)
    with pytest.raises(KeyError):
        model.feature_maps(x, ["Conv99"])


def test_checkpoint_round_trip(model, tmp_path):
    path = tmp_path / "model.earconv"
    model.save(str(path))
    loaded = ec.load_checkpoint(str(path))
    x = np.random.default_rng(2).random((2, 32, 32, 3), dtype=np.float32)
    assert np.array_equal(model.forward(x), loaded.forward(x))
    for name in model.param_names:
        assert np.array_equal(model.get_param(name), loaded.get_param(name))


def test_metrics():
    pts, auc = ec.roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
    assert auc == pytest.approx(0.75)
    assert pts[0] == (0.0, 0.0) and pts[-1] == (1.0, 1.0)
    cm = ec.confusion([0, 0, 1, 1], [0, 1, 1, 1])
    assert cm == ((1, 1), (0, 2))
    loss, grad = ec.bce_loss(
        np.array([[0.5, 0.5]], dtype=np.float32), [1]
    )
    assert loss == pytest.approx(np.log(2.0), rel=1e-6)
    assert grad.shape == (1, 2)


def test_training_learns_on_synthetic_data():
    images, labels = ec.synthetic_dataset(32, hw=32, seed=9)
    assert images.shape == (32, 32, 32, 3)
    assert sorted(set(labels)) == [0, 1]
    model = ec.build_earnet_small(seed=9)
    log = ec.train(
        model, images, labels, epochs=6, batch_size=8, seed=9,
        augment=False, dropout=0.0,
    )
    assert len(log) == 6
    assert log[-1]["train_loss"] < log[0]["train_loss"]
    report = ec.evaluate(model, images, labels)
    assert set(report) == {"confusion", "accuracy", "per_class", "roc", "auc"}
    assert report["accuracy"] >= 0.75


def test_rng_is_deterministic():
    a = ec.Rng(42).uniform_tensor([5, 5], 0.0, 1.0)
    b = ec.Rng(42).uniform_tensor([5, 5], 0.0, 1.0)
    assert np.array_equal(a, b)
    assert (a >= 0).all() and (a < 1).all()
    with pytest.raises(ValueError):
        ec.Rng(1).uniform(2.0, 1.0)
