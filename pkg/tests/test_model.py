"""Classifier tests."""

# ruff: noqa: D103

import numpy as np
import pytest

from inamp.amplifier import InAmpConfig
from inamp.checkpoint import load_checkpoint, save_checkpoint
from inamp.configuration import config_from_dict
from inamp.errors import ConfigError, ShapeMismatch
from inamp.helpers import dump_kv, parse_kv
from inamp.model import (
    ClassifierConfig,
    build_classifier,
    classify,
    count_parameters,
    load_classifier,
    save_classifier,
)
from inamp.nn import softmax_xent
from inamp.tensor import backward, tensor


def _small(with_inamp=True):  # type: ignore
    return ClassifierConfig(
        input_bands=3,
        n_classes=3,
        with_inamp=with_inamp,
        input_size=8,
        block_widths=[4, 8],
        inamp=InAmpConfig(3, out_channels=8, ca_reduction=4) if with_inamp else None,
        bands=["red", "nir", "swir2"],
    )


def test_default_parameter_counts():  # type: ignore
    rng = np.random.default_rng(0)
    base = build_classifier(ClassifierConfig(6, 3, with_inamp=False), rng)
    counts = count_parameters(base)
    assert counts["inamp"] == 0
    # 3x3 convs 6->32->64->128 and a 128x3 head
    assert counts["backbone"] == (9 * 6 * 32 + 32) + (9 * 32 * 64 + 64) + (
        9 * 64 * 128 + 128
    )
    assert counts["head"] == 128 * 3 + 3
    amplified = build_classifier(ClassifierConfig(6, 3), rng)
    counts_amp = count_parameters(amplified)
    assert counts_amp["inamp"] == 1275
    assert counts_amp["backbone"] - counts["backbone"] == 9 * (32 - 6) * 32
    groups = ("inamp", "backbone", "head")
    assert counts_amp["total"] == sum(counts_amp[k] for k in groups)


def test_config_errors():  # type: ignore
    with pytest.raises(ConfigError):
        ClassifierConfig(6, 3, input_size=20)
    with pytest.raises(ConfigError):
        ClassifierConfig(6, 1)
    with pytest.raises(ConfigError):
        ClassifierConfig(6, 3, inamp=InAmpConfig(4))
    with pytest.raises(ConfigError):
        ClassifierConfig(6, 3, bands=["red"])


def test_from_config():  # type: ignore
    cfg = ClassifierConfig.from_config(
        config_from_dict(
            {
                "model": {"input_bands": "4", "n_classes": "3", "input_size": "16"},
                "inamp": {"out_channels": "16", "sa_kernel": "3"},
            },
        ),
    )
    assert cfg.inamp is not None
    assert cfg.inamp.in_bands == 4
    assert cfg.inamp.sa_kernel == 3
    assert cfg.backbone_input == 16
    with pytest.raises(ConfigError):
        ClassifierConfig.from_config(config_from_dict({"inamp.out_channels": 16}))
    with pytest.raises(ConfigError):
        ClassifierConfig.from_config(config_from_dict({"model.n_classes": 3}))


def test_metadata_round_trip():  # type: ignore
    cfg = _small()
    again = ClassifierConfig.from_metadata(parse_kv(dump_kv(cfg.to_metadata())))
    assert again == cfg


def test_forward_and_classify():  # type: ignore
    model = build_classifier(_small(), np.random.default_rng(0))
    batch = np.random.default_rng(1).uniform(0, 1, size=(5, 8, 8, 3))
    logits = model(tensor(batch))
    assert logits.shape == (5, 3)
    probs, labels = classify(model, batch)
    assert probs.dtype == np.float64
    assert probs.sum(axis=1) == pytest.approx(np.ones(5))
    assert labels.tolist() == probs.argmax(axis=1).tolist()
    with pytest.raises(ShapeMismatch):
        model(tensor(np.zeros((1, 16, 16, 3))))
    with pytest.raises(ShapeMismatch):
        model(tensor(np.zeros((1, 8, 8, 4))))


def test_every_parameter_receives_gradient():  # type: ignore
    model = build_classifier(_small(), np.random.default_rng(0))
    batch = np.random.default_rng(1).uniform(0, 1, size=(4, 8, 8, 3))
    loss, _ = softmax_xent(model(tensor(batch)), [0, 1, 2, 0])
    backward(loss)
    missing = [n for n, p in model.named_parameters().items() if p.grad is None]
    assert missing == []


def test_build_is_deterministic():  # type: ignore
    a = build_classifier(_small(), np.random.default_rng(7))
    b = build_classifier(_small(), np.random.default_rng(7))
    for p, q in zip(a.parameters(), b.parameters()):
        np.testing.assert_array_equal(p.data, q.data)


def test_save_and_load(tmp_path):  # type: ignore
    model = build_classifier(_small(), np.random.default_rng(0))
    path = tmp_path / "model.iawt"
    save_classifier(path, model, {"data.labels": ["a", "b", "c"]})
    loaded, metadata = load_classifier(path)
    assert metadata["data.labels"] == "a,b,c"
    assert loaded.cfg == model.cfg
    batch = np.random.default_rng(1).uniform(0, 1, size=(2, 8, 8, 3))
    np.testing.assert_array_equal(classify(loaded, batch)[0], classify(model, batch)[0])


def test_load_rejects_mismatched_tensors(tmp_path):  # type: ignore
    model = build_classifier(_small(with_inamp=False), np.random.default_rng(0))
    path = tmp_path / "model.iawt"
    save_classifier(path, model)
    tensors, metadata = load_checkpoint(path)
    tensors["head/weights"] = np.zeros((3, 3), dtype=np.float32)
    save_checkpoint(path, tensors, metadata)
    with pytest.raises(ShapeMismatch):
        load_classifier(path)
    del tensors["head/weights"]
    save_checkpoint(path, tensors, metadata)
    with pytest.raises(ConfigError):
        load_classifier(path)


def test_classify_breaks_ties_to_lowest_index():  # type: ignore
    model = build_classifier(_small(), np.random.default_rng(0))
    model.head.weights.data = np.zeros_like(model.head.weights.data)
    model.head.bias.data = np.array([0.0, 2.0, 2.0], dtype=model.head.bias.data.dtype)
    probs, labels = classify(model, np.random.default_rng(1).uniform(size=(4, 8, 8, 3)))
    assert probs[:, 1] == pytest.approx(probs[:, 2])
    assert labels.tolist() == [1, 1, 1, 1]
    model.head.bias.data = np.zeros_like(model.head.bias.data)
    _, labels = classify(model, np.zeros((2, 8, 8, 3)))
    assert labels.tolist() == [0, 0]


def test_untrained_model_is_at_chance():  # type: ignore
    k = 3
    labels = np.repeat(np.arange(k), 100)
    batch = np.random.default_rng(2).uniform(size=(labels.size, 8, 8, 3))
    hits = []
    for seed in range(5):
        model = build_classifier(_small(), np.random.default_rng(seed))
        _, predicted = classify(model, batch)
        hits.append(np.mean(predicted == labels))
    assert np.mean(hits) == pytest.approx(1 / k, abs=0.08)
