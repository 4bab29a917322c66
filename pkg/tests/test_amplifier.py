"""InAmp module tests."""

# ruff: noqa: D103

import numpy as np
import pytest
from PIL import Image

from inamp.amplifier import (
    InAmpConfig,
    band_attention,
    channel_attention,
    channel_weights,
    concat_bands,
    core_contrast,
    export_pseudo_bands,
    inamp_forward,
    init_inamp,
    spatial_attention,
    spatial_mask,
)
from inamp.configuration import config_from_dict
from inamp.errors import (
    ChannelMismatch,
    ConfigError,
    IndexOutOfRange,
    ReductionUnderflow,
    SpatialMismatch,
)
from inamp.tensor import create, tensor


def _setup(**kwargs):  # type: ignore
    cfg = InAmpConfig(**{"in_bands": 3, "out_channels": 8, "ca_reduction": 4, **kwargs})
    return cfg, init_inamp(cfg, np.random.default_rng(0))


def _image(shape=(2, 6, 6, 3), seed=1):  # type: ignore
    return tensor(np.random.default_rng(seed).uniform(0, 1, size=shape))


def test_defaults():  # type: ignore
    cfg = InAmpConfig(in_bands=6)
    assert cfg.out_channels == 32
    assert cfg.pseudo_bands == 26
    assert cfg.widths() == [26, 26]
    assert cfg.ca_hidden == 4
    assert cfg.variant == "CA & SA"
    params = init_inamp(cfg, np.random.default_rng(0))
    assert params.count() == 182 + 702 + 99 + 132 + 160


def test_parameter_names():  # type: ignore
    _, params = _setup()
    names = list(params.named_parameters())
    assert names[:4] == [
        "inamp/band/0/weights",
        "inamp/band/0/bias",
        "inamp/band/1/weights",
        "inamp/band/1/bias",
    ]
    assert "inamp/sa/weights" in names
    assert "inamp/ca/fc2/bias" in names


def test_variants():  # type: ignore
    assert InAmpConfig(3, use_channel_attention=False).variant == "SA"
    assert InAmpConfig(3, use_spatial_attention=False).variant == "CA"
    none = InAmpConfig(3, use_channel_attention=False, use_spatial_attention=False)
    assert none.variant == "None"


def test_config_errors():  # type: ignore
    with pytest.raises(ConfigError):
        InAmpConfig(in_bands=6, out_channels=6)
    with pytest.raises(ReductionUnderflow):
        InAmpConfig(in_bands=3, out_channels=6, ca_reduction=8)
    with pytest.raises(ConfigError):
        InAmpConfig(in_bands=3, n_one_by_one_layers=5)
    with pytest.raises(ConfigError):
        InAmpConfig(in_bands=3, out_channels=8, layer_widths=[4, 4], ca_reduction=4)
    with pytest.raises(ConfigError):
        InAmpConfig(in_bands=3, layer_widths=[29])


def test_layer_widths():  # type: ignore
    cfg = InAmpConfig(in_bands=3, out_channels=8, ca_reduction=4, layer_widths=[16, 5])
    assert cfg.widths() == [16, 5]
    cfg = InAmpConfig(3, out_channels=8, ca_reduction=4, concat_all_layers=True)
    assert cfg.widths() == [3, 2]


def test_from_config():  # type: ignore
    cfg = InAmpConfig.from_config(
        config_from_dict(
            {"in_bands": "4", "out_channels": "16", "use_spatial_attention": "false"},
        ),
    )
    assert cfg.in_bands == 4
    assert cfg.out_channels == 16
    assert not cfg.use_spatial_attention
    with pytest.raises(ConfigError):
        InAmpConfig.from_config(config_from_dict({"out_channels": 16}))
    with pytest.raises(ConfigError):
        InAmpConfig.from_config(config_from_dict({"in_bands": 4, "channels": 16}))


def test_band_attention_is_pixelwise_and_nonnegative():  # type: ignore
    cfg, params = _setup()
    x = _image()
    out = band_attention(x, params, cfg)
    assert out.shape == (2, 6, 6, 5)
    assert out.data.min() >= 0
    changed = x.data.copy()
    changed[0, 2, 3, :] += 0.5
    diff = np.abs(band_attention(tensor(changed), params, cfg).data - out.data)
    diff[0, 2, 3, :] = 0
    assert diff.max() == 0


def test_band_attention_concat_all_layers():  # type: ignore
    cfg, params = _setup(concat_all_layers=True)
    assert band_attention(_image(), params, cfg).shape == (2, 6, 6, 5)


def test_band_attention_channel_mismatch():  # type: ignore
    cfg, params = _setup()
    with pytest.raises(ChannelMismatch):
        band_attention(_image((1, 4, 4, 4)), params, cfg)


def test_concat_bands():  # type: ignore
    x = _image((1, 4, 4, 3))
    out = concat_bands(x, create((1, 4, 4, 5), 2.0))
    assert out.shape == (1, 4, 4, 8)
    np.testing.assert_array_equal(out.data[..., :3], x.data)
    with pytest.raises(SpatialMismatch):
        concat_bands(x, create((1, 4, 5, 5)))


def test_spatial_attention():  # type: ignore
    _, params = _setup()
    x = _image((2, 5, 5, 8))
    mask = spatial_mask(x, params)
    assert mask.shape == (2, 5, 5, 1)
    assert mask.data.min() > 0 and mask.data.max() < 1
    out = spatial_attention(x, params)
    np.testing.assert_allclose(out.data, x.data * mask.data, rtol=1e-6)


def test_channel_attention():  # type: ignore
    _, params = _setup()
    x = _image((2, 5, 5, 8))
    w = channel_weights(x, params)
    assert w.shape == (2, 8)
    assert w.data.min() > 0 and w.data.max() < 1
    out = channel_attention(x, params)
    np.testing.assert_allclose(out.data, x.data * w.data[:, None, None, :], rtol=1e-6)
    with pytest.raises(ChannelMismatch):
        channel_weights(_image((1, 4, 4, 6)), params)


def test_inamp_forward_shapes():  # type: ignore
    cfg, params = _setup()
    x = _image()
    assert inamp_forward(x, params, cfg).shape == (2, 6, 6, 8)


def test_inamp_without_attention_keeps_original_bands():  # type: ignore
    cfg, params = _setup(use_spatial_attention=False, use_channel_attention=False)
    x = _image()
    out = inamp_forward(x, params, cfg)
    np.testing.assert_array_equal(out.data[..., :3], x.data)
    assert out.data[..., 3:].min() >= 0


def test_export_pseudo_bands(tmp_path):  # type: ignore
    cfg, params = _setup()
    out = inamp_forward(_image((1, 6, 6, 3)), params, cfg)
    paths = export_pseudo_bands(out, [3, 7], tmp_path / "viz")
    assert [p.name for p in paths] == ["pseudo_band_03.pgm", "pseudo_band_07.pgm"]
    with Image.open(paths[0]) as image:
        assert (image.format, image.mode) == ("PPM", "L")
        pixels = np.asarray(image)
    assert pixels.shape == (6, 6)
    if out.data[0, :, :, 3].max() > out.data[0, :, :, 3].min():
        assert pixels.min() == 0 and pixels.max() == 255
    with pytest.raises(IndexOutOfRange):
        export_pseudo_bands(out, [8], tmp_path)


def test_export_constant_band_is_black(tmp_path):  # type: ignore
    paths = export_pseudo_bands(np.ones((1, 3, 3, 2)), [1], tmp_path)
    with Image.open(paths[0]) as image:
        assert not np.asarray(image).any()


def test_core_contrast():  # type: ignore
    mask = np.zeros((4, 4))
    mask[1:3, 1:3] = 1.0
    band = np.where(mask > 0, 3.0, 1.0)
    band[0, 0] = 2.0
    outside = band[mask <= 0]
    expected = abs(3.0 - outside.mean()) / outside.std()
    assert core_contrast(band, mask) == pytest.approx(expected)
    assert core_contrast(np.where(mask > 0, 3.0, 1.0), mask) == float("inf")
    assert core_contrast(band, np.zeros((4, 4))) == 0.0
    assert core_contrast(np.ones((4, 4)), mask) == 0.0


@pytest.mark.parametrize("bands", [3, 6])
def test_default_module_emits_32_channels(bands):  # type: ignore
    cfg = InAmpConfig(in_bands=bands)
    params = init_inamp(cfg, np.random.default_rng(0))
    out = inamp_forward(_image((1, 8, 8, bands)), params, cfg)
    assert out.shape == (1, 8, 8, 32)
    assert band_attention(_image((1, 8, 8, bands)), params, cfg).shape[3] == 32 - bands


@pytest.mark.parametrize(
    "kwargs",
    [
        {"use_channel_attention": False, "use_spatial_attention": False},
        {"use_spatial_attention": False},
        {"use_channel_attention": False},
        {"n_one_by_one_layers": 1},
        {"n_one_by_one_layers": 3},
        {"n_one_by_one_layers": 4},
        {"out_channels": 16},
        {"out_channels": 24},
        {"out_channels": 40},
        {"out_channels": 48},
    ],
)
def test_ablation_variants_run(kwargs):  # type: ignore
    cfg = InAmpConfig(in_bands=6, **kwargs)
    params = init_inamp(cfg, np.random.default_rng(0))
    out = inamp_forward(_image((1, 8, 8, 6)), params, cfg)
    assert out.shape == (1, 8, 8, cfg.out_channels)


def test_zero_attention_weights_halve_the_input():  # type: ignore
    _, params = _setup()
    for layer in (params.sa_conv, params.ca_fc2):
        layer.weights.data = np.zeros_like(layer.weights.data)
        layer.bias.data = np.zeros_like(layer.bias.data)
    x = _image((2, 5, 5, 8))
    np.testing.assert_allclose(spatial_mask(x, params).data, 0.5)
    np.testing.assert_allclose(spatial_attention(x, params).data, x.data / 2)
    np.testing.assert_allclose(channel_weights(x, params).data, 0.5)
    np.testing.assert_allclose(channel_attention(x, params).data, x.data / 2)


def test_attention_never_amplifies():  # type: ignore
    for seed in range(10):
        cfg = InAmpConfig(in_bands=3, out_channels=8, ca_reduction=4)
        params = init_inamp(cfg, np.random.default_rng(seed))
        x = tensor(np.random.default_rng(seed).normal(size=(2, 5, 5, 8)))
        for attend in (spatial_attention, channel_attention):
            out = attend(x, params).data
            assert np.all(np.abs(out) <= np.abs(x.data))
