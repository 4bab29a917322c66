"""Synthetic benchmark and manifest tests."""

# ruff: noqa: D103

import numpy as np
import pytest

from inamp.configuration import config_from_dict
from inamp.dataset import (
    MANIFEST,
    SPEC_FILE,
    Manifest,
    Record,
    SyntheticSpec,
    gen_synthetic,
    import_arrays,
    load_images,
    mask_path,
    plume_mask,
    read_manifest,
    split_dataset,
    synth_image,
    value_noise,
    write_manifest,
)
from inamp.errors import ChannelMismatch, ConfigError, EmptyManifest
from inamp.raster import read_msib, spectral_index
from inamp.rng import Seeds

SMALL = {"per_label": 4, "size": 16}


def test_spec_defaults():  # type: ignore
    spec = SyntheticSpec()
    assert spec.labels == ["clear", "other_aerosol", "smoke"]
    assert spec.bands == ["blue", "green", "red", "nir", "swir1", "swir2"]
    assert spec.signatures["smoke"][:3] == spec.signatures["other_aerosol"][:3]


def test_spec_errors():  # type: ignore
    with pytest.raises(ConfigError):
        SyntheticSpec(per_label=0)
    with pytest.raises(ConfigError):
        SyntheticSpec(plumes_min=3, plumes_max=1)
    with pytest.raises(ConfigError):
        SyntheticSpec(labels=["a", "a"], signatures={})
    with pytest.raises(ConfigError):
        SyntheticSpec(signatures={"fog": [0.5] * 6})
    with pytest.raises(ConfigError):
        SyntheticSpec(signatures={"smoke": [0.5] * 5})
    with pytest.raises(ConfigError):
        SyntheticSpec(
            signatures={"smoke": [0.5] * 6, "other_aerosol": [0.4] + [0.5] * 5},
        )


def test_spec_from_config_and_kv(tmp_path):  # type: ignore
    spec = SyntheticSpec.from_config(
        config_from_dict(
            {
                "seed": "5",
                "per_label": "2",
                "signature.smoke": "0.5,0.5,0.5,0.2,0.1,0.1",
            },
        ),
    )
    assert spec.seed == 5
    assert spec.signatures == {"smoke": [0.5, 0.5, 0.5, 0.2, 0.1, 0.1]}
    path = tmp_path / "spec.txt"
    path.write_text(spec.to_kv(), encoding="utf-8")
    assert SyntheticSpec.load(path) == spec
    with pytest.raises(ConfigError):
        SyntheticSpec.from_config(config_from_dict({"per_lable": 2}))


def test_value_noise_range():  # type: ignore
    field = value_noise(np.random.default_rng(0), 16, 4, 3, 0.05, 0.45)
    assert field.shape == (16, 16, 3)
    assert field.min() >= 0.05 - 1e-12 and field.max() <= 0.45 + 1e-12


def test_plume_mask():  # type: ignore
    mask = plume_mask(np.random.default_rng(0), SyntheticSpec(size=32))
    assert mask.shape == (32, 32)
    assert mask.min() >= 0 and mask.max() <= 1
    assert mask.max() == 1.0


def test_synth_image():  # type: ignore
    spec = SyntheticSpec(size=32, noise_sigma=0.0)
    img, weight = synth_image(spec, "clear", np.random.default_rng(0))
    assert img.values.shape == (32, 32, 6)
    assert not weight.any()
    img, weight = synth_image(spec, "smoke", np.random.default_rng(0))
    core = weight == 1.0
    assert core.any()
    np.testing.assert_allclose(
        img.values[core], np.tile(spec.signatures["smoke"], (core.sum(), 1)),
        atol=1e-6,
    )
    noisy, _ = synth_image(SyntheticSpec(size=32), "smoke", np.random.default_rng(0))
    assert noisy.values.min() >= 0 and noisy.values.max() <= 1


def test_gen_synthetic(tmp_path):  # type: ignore
    spec = SyntheticSpec(**SMALL)
    manifest = gen_synthetic(spec, tmp_path)
    assert len(manifest) == 12
    assert manifest.counts() == [4, 4, 4]
    assert (tmp_path / MANIFEST).exists()
    assert SyntheticSpec.load(tmp_path / SPEC_FILE) == spec
    first = manifest.records[0]
    assert first.path == "clear/clear_0000.msib"
    img = read_msib(manifest.path(first))
    assert img.values.shape == (16, 16, 6)
    mask = read_msib(mask_path(manifest.path(first)))
    assert mask.bands == ["blend"]
    again = read_manifest(tmp_path)
    assert again.records == manifest.records
    assert again.labels == manifest.labels


def test_gen_synthetic_is_deterministic(tmp_path):  # type: ignore
    spec = SyntheticSpec(**SMALL)
    gen_synthetic(spec, tmp_path / "a")
    gen_synthetic(spec, tmp_path / "b")
    for name in ("smoke/smoke_0003.msib", "clear/clear_0000.msib"):
        assert (tmp_path / "a" / name).read_bytes() == (
            tmp_path / "b" / name
        ).read_bytes()
    gen_synthetic(SyntheticSpec(seed=2, **SMALL), tmp_path / "c")
    assert (tmp_path / "a" / "smoke/smoke_0000.msib").read_bytes() != (
        tmp_path / "c" / "smoke/smoke_0000.msib"
    ).read_bytes()


def test_smoke_is_darker_than_other_aerosol_in_swir():  # type: ignore
    spec = SyntheticSpec(size=32)
    seeds = Seeds(3)
    swir = spec.bands.index("swir2")
    smoke, _ = synth_image(spec, "smoke", seeds.stream("generate", 0))
    other, _ = synth_image(spec, "other_aerosol", seeds.stream("generate", 0))
    assert smoke.values[:, :, swir].mean() < other.values[:, :, swir].mean()


def test_manifest_errors(tmp_path):  # type: ignore
    with pytest.raises(ConfigError):
        Manifest([Record("a.msib", 1, "x")], ["x"])
    with pytest.raises(ConfigError):
        Manifest([Record("a.msib", 0, "y")], ["x"])
    path = tmp_path / MANIFEST
    write_manifest(Manifest([], ["x"]), path)
    with pytest.raises(EmptyManifest):
        read_manifest(path)
    path.write_text("path,label_index,label_name\na.msib,1,x\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        read_manifest(path)
    path.write_text("file,label\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        read_manifest(path)


def test_split_dataset(tmp_path):  # type: ignore
    records = [Record("%d.msib" % i, i % 2, "ab"[i % 2]) for i in range(20)]
    manifest = Manifest(records, ["a", "b"], tmp_path)
    train, val, test = split_dataset(manifest, 0)
    assert train.counts() == [6, 6]
    assert val.counts() == [1, 1]
    assert test.counts() == [3, 3]
    paths = [r.path for part in (train, val, test) for r in part.records]
    assert sorted(paths) == sorted(r.path for r in records)
    again = split_dataset(manifest, 0)
    assert [r.path for r in again[0].records] == [r.path for r in train.records]
    with pytest.raises(EmptyManifest):
        split_dataset(Manifest([], ["a"]), 0)


def test_load_images(tmp_path):  # type: ignore
    manifest = gen_synthetic(SyntheticSpec(**SMALL), tmp_path)
    x, y = load_images(manifest, ["red", "nir"])
    assert x.shape == (12, 16, 16, 2)
    assert x.dtype == np.float32
    assert y.tolist() == [0] * 4 + [1] * 4 + [2] * 4


def test_import_arrays(tmp_path):  # type: ignore
    src = tmp_path / "src"
    for label in ("smoke", "clear"):
        (src / label).mkdir(parents=True)
        np.save(src / label / "s1.npy", np.full((4, 4, 3), 0.5, dtype=np.float32))
    manifest = import_arrays(src, ["b1", "b2", "b3"], tmp_path / "out")
    assert manifest.labels == ["clear", "smoke"]
    assert read_manifest(tmp_path / "out").records == manifest.records
    assert read_msib(tmp_path / "out" / "smoke" / "s1.msib").bands == ["b1", "b2", "b3"]
    with pytest.raises(ChannelMismatch):
        import_arrays(src, ["b1", "b2"], tmp_path / "bad")
    (tmp_path / "empty").mkdir()
    with pytest.raises(EmptyManifest):
        import_arrays(tmp_path / "empty", ["b1"], tmp_path / "none")


def test_plume_core_ndvi_separates_smoke_from_other_aerosol():  # type: ignore
    spec = SyntheticSpec(size=16)
    seeds = Seeds(11)
    cores = {}
    for label in ("smoke", "other_aerosol"):
        means = []
        for i in range(100):
            img, weight = synth_image(spec, label, seeds.stream(label, i))
            core = weight >= 0.9
            assert core.any()
            means.append(spectral_index(img, "ndvi")[core].mean())
        cores[label] = np.array(means)
    # signatures put smoke near -0.41 and other aerosol near 0.04
    assert cores["smoke"].max() < -0.2
    assert cores["other_aerosol"].min() > -0.1
