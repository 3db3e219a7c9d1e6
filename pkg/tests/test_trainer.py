import json

import numpy as np
import pytest

from simp import mdn, trainer
from simp.data import Dataset, extract_episodes, split
from simp.errors import InputError, SchemaError, TrainingError
from simp.synthetic import SynthConfig, generate_synthetic
from simp.trainer import Model, Standardizer, TrainConfig, initial_model, predict, train

SMALL = dict(hidden=(16, 16), dropout=0.0, batch_size=8, patience=0)


def toy_dataset(n=20, seed=0):
    """Areas and targets are smooth functions of the first two features."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 25))
    area = 1 + (x[:, 0] > 0).astype(int) + 2 * (x[:, 1] > 0).astype(int)
    y_s = 20.0 + 5.0 * x[:, 2]
    y_t = 2.0 + 0.5 * np.tanh(x[:, 3])
    ids = np.arange(n)
    return Dataset(x, area, y_s, y_t, ids // 4, ids, ids // 4)


def params_equal(a, b):
    return all(np.array_equal(getattr(a, k), getattr(b, k))
               for k in ("weights", "alpha", "mu_s", "mu_t", "sigma_s", "sigma_t", "rho"))


def test_default_output_width():
    assert TrainConfig().output_width == 35
    model = initial_model(toy_dataset(), TrainConfig())
    assert model.net.n_outputs == 35
    assert [l.n_out for l in model.net.layers] == [400, 400, 400, 35]


def test_zero_epochs_returns_initialization():
    ds = toy_dataset()
    cfg = TrainConfig(epochs=0, **SMALL)
    model, log = train(ds, None, cfg)
    reference = initial_model(ds, cfg)
    for a, b in zip(model.net.parameters(), reference.net.parameters()):
        assert np.array_equal(a, b)
    assert len(log.epochs) == 1 and log.best_epoch == 0


def test_all_zero_model_predicts_uniform_weights():
    model = initial_model(toy_dataset(), TrainConfig(**SMALL))
    for p in model.net.parameters():
        p[:] = 0.0
    p = predict(model, np.ones(25))
    np.testing.assert_array_equal(p.weights, np.full((1, 5), 0.2))


def test_inference_is_deterministic_even_with_dropout():
    model = initial_model(toy_dataset(), TrainConfig(hidden=(16,), dropout=0.5))
    x = toy_dataset().features[:3]
    assert params_equal(predict(model, x), predict(model, x))


def test_feature_length_checked():
    model = initial_model(toy_dataset(), TrainConfig(**SMALL))
    with pytest.raises(InputError):
        predict(model, np.zeros(24))


def test_checkpoint_round_trip_is_bitwise(tmp_path):
    ds = toy_dataset(40)
    model, _ = train(ds, None, TrainConfig(epochs=3, **SMALL))
    model.save(tmp_path / "m.json")
    back = Model.load(tmp_path / "m.json")
    assert params_equal(predict(model, ds.features), predict(back, ds.features))
    back.save(tmp_path / "again.json")
    assert (tmp_path / "m.json").read_bytes() == (tmp_path / "again.json").read_bytes()
    model.save(tmp_path / "run" / "model.json")
    assert params_equal(predict(Model.load(tmp_path / "run"), ds.features), predict(model, ds.features))


def test_model_load_errors(tmp_path):
    with pytest.raises(InputError):
        Model.load(tmp_path / "missing.json")
    model = initial_model(toy_dataset(), TrainConfig(**SMALL))
    doc = model.to_dict()
    doc["feature_normalization"]["mean"][0] += 1.0
    with pytest.raises(SchemaError, match="hash"):
        Model.from_dict(json.loads(json.dumps(doc)))
    doc = model.to_dict()
    doc["feature_hash"] = "0" * 64
    with pytest.raises(SchemaError):
        Model.from_dict(doc)


def test_normalization_comes_from_training_set_only():
    ds = toy_dataset(80)
    tr, va = split(ds, 0.75, seed=0)
    model, _ = train(tr, va, TrainConfig(epochs=1, **SMALL))
    assert model.features.fingerprint() == Standardizer.fit(tr.features).fingerprint()
    assert model.features.fingerprint() != Standardizer.fit(va.features).fingerprint()
    assert model.targets.fingerprint() == Standardizer.fit(tr.targets).fingerprint()


def test_standardizer_leaves_constant_columns_finite():
    s = Standardizer.fit(np.array([[1.0, 2.0], [1.0, 4.0]]))
    np.testing.assert_array_equal(s.apply([[1.0, 3.0]]), [[0.0, 0.0]])


def test_config_validation():
    with pytest.raises(InputError):
        TrainConfig(w1=-1.0)
    with pytest.raises(InputError):
        TrainConfig(batch_size=0)
    with pytest.raises(InputError):
        TrainConfig.from_dict({"epochs": 3, "learning_rte": 0.1})
    with pytest.raises(InputError):
        train(toy_dataset().subset(np.array([], dtype=int)), None, TrainConfig(**SMALL))


def test_training_is_deterministic_under_seed():
    ds = toy_dataset(40)
    cfg = TrainConfig(epochs=4, hidden=(16,), dropout=0.5, batch_size=8, seed=3)
    a, log_a = train(ds, None, cfg)
    b, log_b = train(ds, None, cfg)
    assert log_a.to_dict() == log_b.to_dict()
    for p, q in zip(a.net.parameters(), b.net.parameters()):
        assert np.array_equal(p, q)


def test_log_records_loss_terms():
    ds = toy_dataset(40)
    tr, va = split(ds, 0.8, seed=1)
    _, log = train(tr, va, TrainConfig(epochs=2, w1=0.5, w2=2.0, **SMALL))
    row = log.epochs[-1]
    assert row["train_total"] == pytest.approx(row["train_w1_term"] + row["train_w2_term"])
    assert {"val_w1_term", "val_w2_term", "val_total", "val_accuracy"} <= set(row)


@pytest.mark.filterwarnings("ignore:invalid value:RuntimeWarning")
@pytest.mark.parametrize("poison", ["loss", "gradient"])
def test_non_finite_batch_aborts_with_last_good_model(monkeypatch, poison):
    ds = toy_dataset(40)
    real = mdn.loss_and_gradient
    calls = {"batches": 0}

    def flaky(raw, *args, **kwargs):
        nll, ce, grad = real(raw, *args, **kwargs)
        if raw.shape[0] == 8:
            calls["batches"] += 1
            if calls["batches"] == 8:  # epoch 2, third batch
                if poison == "loss":
                    nll = nll.copy()
                    nll[0] = np.nan
                else:
                    grad = grad.copy()
                    grad[0, 0] = np.inf
        return nll, ce, grad

    monkeypatch.setattr(trainer.mdn, "loss_and_gradient", flaky)
    with pytest.raises(TrainingError) as info:
        train(ds, None, TrainConfig(epochs=5, **SMALL))
    exc = info.value
    assert exc.batch == 2 and "epoch 2" in str(exc)
    assert exc.model is not None
    assert all(np.all(np.isfinite(p)) for p in exc.model.net.parameters())


def test_training_loss_moving_average_never_rises():
    ds = toy_dataset(64, seed=2)
    _, log = train(ds, None, TrainConfig(epochs=100, hidden=(16, 16), dropout=0.0, batch_size=16, patience=0))
    loss = np.array([row["train_total"] for row in log.epochs[1:]])
    assert loss.size == 100
    smooth = np.convolve(loss, np.ones(10) / 10, mode="valid")
    assert np.all(np.diff(smooth) <= 0.0)
    assert loss[-1] < loss[0]


def test_model_trained_on_synthetic_scenes_recognises_left_changes():
    corpus = generate_synthetic(SynthConfig(n_scenes=120, seed=11))
    tr, te = split(extract_episodes(corpus.records), 0.8, seed=0)
    model, _ = train(tr, None, TrainConfig(hidden=(64, 64), epochs=15, patience=0, seed=1))
    deep = (np.isin(te.area, (1, 2))) & (te.y_t <= 1.0)
    assert deep.sum() >= 20
    top = predict(model, te.features[deep]).weights.argmax(axis=1) + 1
    assert np.mean(np.isin(top, (1, 2))) >= 0.9
