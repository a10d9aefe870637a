import numpy as np
import pytest

import patchx


@pytest.fixture(scope="module")
def data():
    return patchx.generate_anomaly(train=200, val=60, test=40, seed=4)


@pytest.fixture(scope="module")
def model(data):
    settings = {
        "seed": 4,
        "network.blocks": "6x3",
        "train.epochs": 3,
        "train.patience": 1,
        "shallow.svm_epochs": 30,
    }
    return patchx.Model.fit(*data["train"], *data["val"], settings)


def test_enumerate_patches():
    assert patchx.enumerate_patches(50, 5, 10) == [(p * 5, min(p * 5 + 10, 50)) for p in range(10)]
    assert patchx.enumerate_patches(7, 3, 4) == [(0, 4), (3, 7), (6, 7)]
    with pytest.raises(patchx.ConfigError):
        patchx.enumerate_patches(50, 0, 10)


def test_transform():
    values = np.arange(1.0, 7.0).reshape(1, 6)
    out, start, end = patchx.transform(values, 1, 2, 2)
    assert out.shape == (2, 6)
    np.testing.assert_array_equal(out[0], [0, 0, 3, 4, 0, 0])
    np.testing.assert_array_equal(out[1], [0, 0, 1, 1, 0, 0])
    assert (start, end) == (2, 4)
    shifted, start, end = patchx.transform(values, 1, 2, 2, attach=False, notemp=True)
    np.testing.assert_array_equal(shifted[0], [3, 4, 0, 0, 0, 0])
    assert (start, end) == (0, 2)
    with pytest.raises(patchx.IndexError):
        patchx.transform(values, 3, 2, 2)


def test_extract_presence():
    softmax = np.array([[0.7, 0.3], [0.2, 0.8], [0.9, 0.1]])
    features, wins = patchx.extract_presence([0, 0, 1], softmax, 2)
    assert features == pytest.approx([0.7, 0.8, 0.9, 0.0])
    assert wins == [[1, 1], [1, 0]]


def test_generate_shapes(data):
    x, y = data["train"]
    assert x.shape == (200, 3, 50)
    assert y.shape == (200,)
    assert set(np.unique(y)) <= {0, 1}
    assert len(data["test_peaks"]) == 40
    again = patchx.generate_anomaly(train=200, val=60, test=40, seed=4)
    np.testing.assert_array_equal(again["train"][0], x)


def test_model_predicts_and_round_trips(model, data, tmp_path):
    x, y = data["test"]
    pred = model.predict(x)
    assert pred.shape == y.shape
    assert model.configs == "5:10,10:20"
    assert model.presence(x).shape == (40, 4)
    blob = model.to_bytes()
    assert blob[:5] == b"PCHX1"
    again = patchx.Model.from_bytes(blob)
    assert again.to_bytes() == blob
    model.save(tmp_path / "m.pchx")
    np.testing.assert_array_equal(patchx.Model.load(tmp_path / "m.pchx").predict(x), pred)
    with pytest.raises(patchx.FormatError):
        patchx.Model.from_bytes(blob[:-1])


def test_explain_probe_histogram(model, data):
    x, _ = data["test"]
    e = patchx.explain(model, x[0])
    assert len(e["records"]) == 15
    assert e["predicted"] == int(model.predict(x[:1])[0])
    p = patchx.probe(model, x[0], 0, 10, [0.0, 1.0, 2.0])
    assert len(p["steps"]) == 3
    h = patchx.histogram(model, x)
    assert h["total"] == 40 * 15
    with pytest.raises(patchx.DimensionError):
        patchx.explain(model, x[0][:2])


def test_config_and_seeds():
    ini = patchx.resolve_config({"seed": 5, "train.epochs": 7})
    assert "epochs = 7" in ini
    assert patchx.mix_seed(0, 0) == 0xE220A8397B1DCDAF
    with pytest.raises(patchx.ConfigError):
        patchx.resolve_config({"train.epochs": "ten"})


def test_gradcheck():
    passed, worst, lines = patchx.gradcheck(2)
    assert passed
    assert worst < 1e-4
    assert lines
