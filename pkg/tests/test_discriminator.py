from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chainrestore.algebra import parse_label
from chainrestore.discriminator import (
    BLIND_DEGRADED,
    ClassifierModel,
    MarginConfig,
    TrainHyper,
    TrainingError,
    apply_margins,
    decide,
    discriminate,
    extract_features,
    fit_softmax,
    make_training_set,
    predict_probs,
    softmax,
    train,
    train_on_features,
)
from chainrestore.synthesis import HazeParams, apply_haze, gen_clean


def _toy_model(class_labels, seed=0):
    r = np.random.default_rng(seed)
    n = len(class_labels)
    return ClassifierModel(class_labels, r.normal(size=(n, 8)), r.normal(size=n), np.zeros(8), np.ones(8))


def test_features_constant_patch():
    f = extract_features(np.full((32, 32, 3), 0.4))
    assert f[1] == 0 and f[3] == 0 and f[6] == 0
    assert f.shape == (8,) and np.all(np.isfinite(f))


def test_features_noise_and_haze_directions(clean64):
    noisy = clean64 + np.random.default_rng(0).normal(0, 25 / 255, clean64.shape)
    assert extract_features(noisy)[3] > extract_features(clean64)[3]
    hazy = apply_haze(clean64, HazeParams(0.9, t=0.5))
    assert extract_features(hazy)[2] > extract_features(clean64)[2]


def test_features_reject_small_patch():
    with pytest.raises(ValueError):
        extract_features(np.zeros((15, 32, 3)))


def test_features_use_clamped_view():
    a = np.full((16, 16, 3), 0.5)
    a[0, 0] = 3.0
    b = a.copy()
    b[0, 0] = 1.0
    assert np.array_equal(extract_features(a), extract_features(b))


def _separable(n=200, seed=0):
    r = np.random.default_rng(seed)
    x = r.normal(size=(n, 8))
    y = (x[:, 0] + 0.5 * x[:, 1] > 0).astype(int)
    x[:, 0] += np.where(y == 1, 0.5, -0.5)  # open a margin
    return x, y


def test_separable_reaches_full_accuracy():
    x, y = _separable()
    model, _ = train_on_features(x, y, ["a", "clean"], TrainHyper(lr=0.05, epochs=200, batch=None))
    assert np.mean(np.argmax(model.logits(x), axis=1) == y) == 1.0


def test_training_is_deterministic():
    x, y = _separable()
    hyper = TrainHyper(epochs=30, seed=4)
    a, _ = train_on_features(x, y, ["a", "clean"], hyper)
    b, _ = train_on_features(x, y, ["a", "clean"], hyper)
    assert np.array_equal(a.weights, b.weights) and np.array_equal(a.biases, b.biases)


@pytest.mark.parametrize("optimizer", ["gd", "adam"])
def test_full_batch_loss_monotone(optimizer):
    x, y = _separable(seed=3)
    _, _, losses = fit_softmax(x, y, 2, TrainHyper(lr=2e-3, epochs=150, batch=None, optimizer=optimizer))
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_train_requires_every_class():
    patch = np.zeros((32, 32, 3))
    with pytest.raises(ValueError):
        train([(patch, 0)], ["haze", "clean"])


def test_non_finite_loss_raises():
    x, y = _separable()
    x[0, 0] = np.inf
    with pytest.raises(TrainingError), np.errstate(invalid="ignore", over="ignore"):
        fit_softmax(x, y, 2, TrainHyper(epochs=2, batch=None))


def test_train_from_patches_end_to_end():
    samples, classes = make_training_set(["haze"], n_images=4, patches_per_image=2, size=(128, 128),
                                         patch_size=64, seed=2)
    assert classes == ["haze", "clean"] and len(samples) == 16
    model, losses = train(samples, classes, TrainHyper(epochs=50, seed=2))
    assert model.n_classes == 2 and losses[-1] < losses[0]


def test_predict_single_crop_equals_patch_softmax(clean64):
    model = _toy_model(["haze", "rain", "clean"])
    v = predict_probs(model, clean64, n_patches=1, patch_size=128)
    assert np.allclose(v, softmax(model.logits(extract_features(clean64)))[0], atol=1e-15)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_predict_probs_is_distribution(seed):
    r = np.random.default_rng(seed)
    model = _toy_model(["haze", "rain", "noise25", "clean"], seed % 7)
    v = predict_probs(model, r.random((40, 40, 3)), n_patches=3, patch_size=32, seed=seed)
    assert np.all(v >= 0) and abs(v.sum() - 1) <= 1e-9


def test_more_patches_reduce_variance():
    model = _toy_model(["haze", "rain", "clean"], 5)
    img = gen_clean(3)
    def spread(n):
        return np.var([predict_probs(model, img, n, 64, seed=s) for s in range(40)], axis=0).sum()
    assert spread(12) < spread(1)


def test_predict_probs_permutation_consistent(clean64):
    model = _toy_model(["haze", "rain", "noise25", "clean"], 2)
    perm = [2, 0, 1, 3]
    swapped = ClassifierModel([model.class_labels[i] for i in perm], model.weights[perm], model.biases[perm],
                              model.feature_means, model.feature_stds)
    v = predict_probs(model, clean64, 4, 32, seed=1)
    assert np.allclose(predict_probs(swapped, clean64, 4, 32, seed=1), v[perm], atol=1e-15)


def test_margin_examples():
    bases = [parse_label("haze"), parse_label("rain+haze")]
    out = apply_margins([0.40, 0.38, 0.22], MarginConfig(0.03, {}), bases)
    assert np.allclose(out, [0.43, 0.44, 0.22])
    assert decide([0.40, 0.38, 0.22], MarginConfig(0.03, {}), bases).basis == parse_label("rain+haze")

    bases = [parse_label("low"), parse_label("haze")]
    m = MarginConfig(0.03, {"low": -0.05})
    assert np.allclose(apply_margins([0.40, 0.38, 0.22], m, bases), [0.38, 0.41, 0.22])
    assert decide([0.40, 0.38, 0.22], m, bases).basis == parse_label("haze")


@settings(max_examples=100)
@given(st.lists(st.floats(0, 1), min_size=3, max_size=3))
def test_zero_margins_identity(v):
    bases = [parse_label("haze"), parse_label("rain+haze")]
    assert np.array_equal(apply_margins(v, MarginConfig.zero(), bases), np.asarray(v, dtype=float))


def test_default_margins_cannot_beat_confident_clean():
    bases = [parse_label("low+haze"), parse_label("haze")]
    assert decide([0.10, 0.10, 0.80], MarginConfig.defaults(bases), bases).clean


def test_tie_goes_to_lowest_index():
    bases = [parse_label("haze"), parse_label("rain")]
    assert decide([0.4, 0.4, 0.2], MarginConfig.zero(), bases).basis == parse_label("haze")
    assert decide([0.2, 0.4, 0.4], MarginConfig.zero(), bases).basis == parse_label("rain")


def test_margin_length_mismatch():
    with pytest.raises(ValueError):
        apply_margins([0.5, 0.5], MarginConfig(), ["haze", "rain"])


def test_margin_defaults_and_roundtrip():
    m = MarginConfig.defaults(["low", "haze", "low+haze"])
    assert m.epsilon_o == 0.03
    assert m.offset("low") == m.offset("haze+low") == -0.05 and m.offset("haze") == 0
    assert MarginConfig.from_dict(json.loads(json.dumps(m.to_dict()))) == m
    with pytest.raises(ValueError):
        MarginConfig.from_dict({"epsilon": 0.1})


def test_blind_decisions():
    assert decide([0.51, 0.49], MarginConfig(), [], "blind").basis is BLIND_DEGRADED
    assert decide([0.49, 0.51], MarginConfig(), [], "blind").clean


def test_mode_mismatch(clean64):
    blind = _toy_model(["degraded", "clean"])
    multi = _toy_model(["haze", "rain", "clean"])
    assert blind.is_blind and not multi.is_blind
    with pytest.raises(ValueError):
        discriminate(blind, clean64, MarginConfig(), "non_blind")
    with pytest.raises(ValueError):
        discriminate(multi, clean64, MarginConfig(), "blind")
    with pytest.raises(ValueError):
        ClassifierModel(["clean", "haze"], np.zeros((2, 8)), np.zeros(2), np.zeros(8), np.ones(8))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_discriminate_deterministic_and_in_class_list(seed):
    model = _toy_model(["haze", "rain", "noise25", "clean"], seed % 11)
    img = np.random.default_rng(seed).random((48, 48, 3))
    a = discriminate(model, img, MarginConfig(), n_patches=2, patch_size=32, seed=seed)
    b = discriminate(model, img, MarginConfig(), n_patches=2, patch_size=32, seed=seed)
    assert a.basis == b.basis and np.array_equal(a.revised, b.revised)
    assert a.clean or a.basis in model.bases


def test_model_json_roundtrip(tmp_path):
    model = _toy_model(["haze", "rain+haze", "clean"])
    model.save(tmp_path / "m.json")
    d = json.loads((tmp_path / "m.json").read_text())
    assert set(d) >= {"class_labels", "feature_means", "feature_stds", "weights", "biases"}
    back = ClassifierModel.load(tmp_path / "m.json")
    assert back.class_labels == model.class_labels
    assert np.array_equal(back.weights, model.weights) and np.array_equal(back.biases, model.biases)
