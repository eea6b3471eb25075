import numpy as np
import pytest

from clucdd.exceptions import ConfigError, FormatError, TrainingError, ValidationError
from clucdd.model import TABLE
from clucdd.synth import SynthConfig, generate_splits
from clucdd.trainer import (
    PARAM_ORDER,
    TrainConfig,
    adam_step,
    clip_gradients,
    load_checkpoint,
    save_checkpoint,
    train,
)
from helpers import make_dialogue


@pytest.fixture(scope="module")
def corpus():
    cfg = SynthConfig(dialogues=0, n_min=6, n_max=10, k_min=2, k_max=3, n_topics=4, seed=3)
    return generate_splits(cfg, 8, 3, 3)


def small_config(**kw):
    base = dict(dim=8, k_max=4, epochs=2, batch_size=3, learning_rate=5e-3, seed=1)
    base.update(kw)
    return TrainConfig(**base)


def _same_params(a, b):
    return a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)


def test_adam_zero_gradient():
    cfg = TrainConfig()
    params = {"w": np.array([1.0, -2.0])}
    moments = {"w": (np.array([0.5, 0.5]), np.array([0.2, 0.2]))}
    new_p, new_m = adam_step(params, {"w": np.zeros(2)}, moments, 3, cfg)
    assert np.allclose(new_m["w"][0], 0.9 * 0.5) and np.allclose(new_m["w"][1], 0.999 * 0.2)
    fresh, _ = adam_step(params, {"w": np.zeros(2)}, {}, 1, cfg)
    assert np.array_equal(fresh["w"], params["w"])


def test_adam_first_step_scalar():
    new_p, _ = adam_step({"w": np.array(0.0)}, {"w": np.array(1.0)}, {}, 1, TrainConfig())
    assert float(new_p["w"]) == pytest.approx(-5e-4, rel=1e-6)


def test_adam_pure_and_deterministic():
    params = {"w": np.arange(3.0)}
    grads = {"w": np.array([0.1, -0.2, 0.3])}
    a = adam_step(params, grads, {}, 1, TrainConfig())
    b = adam_step(params, grads, {}, 1, TrainConfig())
    assert np.array_equal(a[0]["w"], b[0]["w"])
    assert np.array_equal(params["w"], np.arange(3.0))


def test_adam_frozen_tensor_untouched():
    params = {"w": np.ones(2), "frozen": np.ones(2)}
    new_p, new_m = adam_step(params, {"w": np.ones(2)}, {}, 1, TrainConfig())
    assert new_p["frozen"] is params["frozen"] and "frozen" not in new_m


def test_adam_non_finite_names_tensor():
    with pytest.raises(TrainingError, match="bad"):
        adam_step({"bad": np.ones(1)}, {"bad": np.array([np.nan])}, {}, 1, TrainConfig())


def test_clip():
    g = {"a": np.array([3.0]), "b": np.array([4.0])}
    out = clip_gradients(g, 1.0)
    assert np.sqrt(out["a"] ** 2 + out["b"] ** 2) == pytest.approx(1.0)
    assert clip_gradients(g, 10.0) is g


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"nonsense": 1})


def test_config_precedence():
    cfg = TrainConfig.resolve(
        {"epochs": 3, "margin": 0.5, "seed": 4},
        env={"CLUCDD_EPOCHS": "7", "CLUCDD_FREEZE_ENCODER": "true", "CLUCDD_MARGIN": "0.75"},
        overrides={"margin": 1.25, "seed": None},
    )
    assert cfg.epochs == 7 and cfg.freeze_encoder is True
    assert cfg.margin == 1.25 and cfg.seed == 4
    with pytest.raises(ConfigError):
        TrainConfig.resolve(env={"CLUCDD_EPOCHS": "many"})


def test_train_rejects_unlabeled_and_empty():
    with pytest.raises(ValidationError):
        train([make_dialogue([None, None])], small_config())
    with pytest.raises(ValidationError):
        train([], small_config())
    with pytest.raises(ValidationError):
        train([make_dialogue([0, 1, 2, 3, 4])], small_config())  # k above k_max


def test_freeze_encoder(corpus):
    train_set, _, _ = corpus
    res = train(train_set, small_config(freeze_encoder=True, epochs=0))
    table0 = res.state.model.params[TABLE].copy()
    res = train(train_set, small_config(freeze_encoder=True))
    assert np.array_equal(res.state.model.params[TABLE], table0)
    assert TABLE not in res.state.moments
    assert "fc.W" in res.state.moments


def test_overfit_single_dialogue():
    d = make_dialogue([0, 0, 1, 1, 0, 1], texts=["red car", "red bus", "blue sky", "blue sea", "red hat", "blue"])
    res = train([d], small_config(epochs=200, batch_size=1, learning_rate=1e-2))
    losses = [e["loss"] for e in res.log]
    assert losses[-1] < 0.01 * losses[0]


def test_small_lr_tail_is_monotone():
    d = make_dialogue([0, 0, 1, 1, 0, 1], texts=["red car", "red bus", "blue sky", "blue sea", "red hat", "blue"])
    res = train([d], small_config(epochs=200, batch_size=1, learning_rate=1e-4))
    tail = [e["loss"] for e in res.log][-50:]
    assert all(b <= a + 1e-12 for a, b in zip(tail, tail[1:]))


def test_training_is_deterministic(corpus, tmp_path):
    train_set, dev_set, _ = corpus
    for name in ("a", "b"):
        res = train(train_set, small_config(), dev_set)
        save_checkpoint(res.state, tmp_path / f"{name}.ckpt", model=res.best)
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_log_has_dev_metrics(corpus):
    train_set, dev_set, _ = corpus
    res = train(train_set, small_config(), dev_set)
    assert [e["epoch"] for e in res.log] == [1, 2]
    assert set(res.log[0]["dev"]) == {"nmi", "ari", "loc3", "one_to_one", "shen_f"}
    assert 1 <= res.best_epoch <= 2


def test_checkpoint_round_trip_and_resume(corpus, tmp_path):
    train_set, _, _ = corpus
    full = train(train_set, small_config(epochs=2))
    half = train(train_set, small_config(epochs=1))
    path = tmp_path / "half.ckpt"
    save_checkpoint(half.state, path)
    loaded = load_checkpoint(path)
    assert _same_params(loaded.model.params, half.state.model.params)
    assert loaded.step == half.state.step and loaded.epoch == 1
    for name, (m, v) in half.state.moments.items():
        assert np.array_equal(loaded.moments[name][0], m) and np.array_equal(loaded.moments[name][1], v)
    save_checkpoint(loaded, tmp_path / "again.ckpt")
    assert (tmp_path / "again.ckpt").read_bytes() == path.read_bytes()
    resumed = train(train_set, small_config(epochs=2), state=loaded)
    assert _same_params(resumed.state.model.params, full.state.model.params)


def test_checkpoint_layout(corpus, tmp_path):
    train_set, _, _ = corpus
    res = train(train_set, small_config(epochs=1))
    save_checkpoint(res.state, tmp_path / "m.ckpt")
    blob = (tmp_path / "m.ckpt").read_bytes()
    assert blob[:4] == b"CLCK"
    names = [n for n in PARAM_ORDER if n in res.state.model.params]
    assert names[0] == TABLE and names[-1] == "head.out.b"


@pytest.mark.parametrize("damage", ["truncate", "magic", "version", "flip"])
def test_checkpoint_damage_rejected(corpus, tmp_path, damage):
    train_set, _, _ = corpus
    res = train(train_set, small_config(epochs=1))
    path = tmp_path / "m.ckpt"
    save_checkpoint(res.state, path)
    blob = bytearray(path.read_bytes())
    if damage == "truncate":
        blob = blob[: len(blob) // 2]
    elif damage == "magic":
        blob[:4] = b"XXXX"
    elif damage == "version":
        blob[4] = 99
    else:
        blob[len(blob) // 2] ^= 0x01
    path.write_bytes(bytes(blob))
    with pytest.raises(FormatError):
        load_checkpoint(path)
