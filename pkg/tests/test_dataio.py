from dataclasses import replace

import numpy as np
import pytest

from mainzsl.dataio import (
    DatasetBundle,
    RunConfig,
    SynthSpec,
    bundle_digest,
    convert_xlsa17,
    load_bundle,
    synth_generate,
    write_bundle,
)
from mainzsl.errors import ConfigError, DataError, LabelError


def random_bundle(N=10, C=3, d=5, D=4, unseen=(2,), seed=0):
    rng = np.random.default_rng(seed)
    labels = np.arange(N) % C
    seen = [c for c in range(C) if c not in unseen]
    return DatasetBundle(
        rng.normal(size=(N, d)).astype(np.float32).astype(np.float64), labels, rng.normal(size=(C, D)),
        [f"c{i}" for i in range(C)], seen, list(unseen),
        np.array([i for i in range(N) if labels[i] in seen][:3]), name="rand",
    )


def assert_same(a: DatasetBundle, b: DatasetBundle):
    np.testing.assert_array_equal(a.features, b.features)
    np.testing.assert_array_equal(a.labels, b.labels)
    np.testing.assert_array_equal(a.attributes, b.attributes)
    np.testing.assert_array_equal(a.train_indices, b.train_indices)
    assert (a.seen_ids, a.unseen_ids, a.class_names, a.name) == (b.seen_ids, b.unseen_ids, b.class_names, b.name)


def test_round_trip(tmp_path):
    b = random_bundle()
    write_bundle(b, tmp_path / "b")
    assert_same(b, load_bundle(tmp_path / "b"))


def test_truncated_features(tmp_path):
    write_bundle(random_bundle(), tmp_path)
    raw = (tmp_path / "features.bin").read_bytes()
    (tmp_path / "features.bin").write_bytes(raw[:-8])
    with pytest.raises(DataError, match=f"expected {len(raw)} bytes.*found {len(raw) - 8}"):
        load_bundle(tmp_path)


def test_out_of_range_label(tmp_path):
    write_bundle(random_bundle(), tmp_path)
    lines = (tmp_path / "labels.csv").read_text().splitlines()
    lines[4] = "3"
    (tmp_path / "labels.csv").write_text("\n".join(lines) + "\n")
    with pytest.raises(LabelError, match=r"labels.csv:5"):
        load_bundle(tmp_path)


def test_missing_file_and_bad_magic(tmp_path):
    with pytest.raises(DataError, match="missing bundle file"):
        load_bundle(tmp_path)
    write_bundle(random_bundle(), tmp_path)
    raw = bytearray((tmp_path / "features.bin").read_bytes())
    raw[:8] = b"NOTMAGIC"
    (tmp_path / "features.bin").write_bytes(bytes(raw))
    with pytest.raises(DataError, match="bad magic"):
        load_bundle(tmp_path)


def test_digest_deterministic(tmp_path):
    b = random_bundle()
    write_bundle(b, tmp_path / "x")
    write_bundle(b, tmp_path / "y")
    assert bundle_digest(tmp_path / "x") == bundle_digest(tmp_path / "x") == bundle_digest(tmp_path / "y")


def test_empty_unseen_set_allowed(tmp_path):
    b = random_bundle(unseen=())
    assert b.unseen_ids == []
    write_bundle(b, tmp_path)
    assert load_bundle(tmp_path).unseen_ids == []


def test_cub_shaped_header(tmp_path):
    b = random_bundle(N=4, C=2, d=2048, D=312, unseen=(1,))
    write_bundle(b, tmp_path)
    back = load_bundle(tmp_path)
    assert (back.feat_dim, back.attr_dim) == (2048, 312)


def test_bundle_validation():
    b = random_bundle()
    with pytest.raises(DataError):
        replace(b, seen_ids=[0], unseen_ids=[2])
    with pytest.raises(LabelError):
        replace(b, labels=np.full(10, 5))
    with pytest.raises(DataError):
        replace(b, features=np.full((10, 5), np.nan))


def test_synth_noise_free_and_seeded():
    b = synth_generate(SynthSpec(noise=0.0, samples_per_class=5))
    for c in range(b.n_classes):
        rows = b.features[b.labels == c]
        assert np.all(rows == rows[0])
    x, y = synth_generate(SynthSpec(seed=3)), synth_generate(SynthSpec(seed=3))
    assert_same(x, y)
    assert x.features.shape == (20 * 200, 32) and x.attributes.shape == (20, 16)
    assert len(x.train_indices) == 15 * 160


def test_synth_round_trip_bit_exact(tmp_path):
    b = synth_generate(SynthSpec(samples_per_class=10, map_kind="mlp"))
    write_bundle(b, tmp_path)
    assert_same(b, load_bundle(tmp_path))


def test_synth_rejects_bad_spec():
    with pytest.raises(ConfigError):
        SynthSpec.from_dict({"n_sen": 3})
    with pytest.raises(ConfigError):
        synth_generate(SynthSpec(n_unseen=0))
    with pytest.raises(ConfigError):
        synth_generate(SynthSpec(map_kind="cubic"))


def test_run_config_round_trip_and_validation(tmp_path):
    cfg = RunConfig(synth={"seed": 2}, protocol="fixed", tasks=4, train={"lam": 0.0})
    p = tmp_path / "c.json"
    p.write_text(cfg.to_json())
    assert RunConfig.load(p) == cfg
    with pytest.raises(ConfigError):
        RunConfig()
    with pytest.raises(ConfigError):
        RunConfig(synth={}, protocol="online")
    with pytest.raises(ConfigError):
        RunConfig(synth={}, train={"lam": -1})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"synth": {}, "extra": 1})


def test_normalized_attributes():
    cfg = RunConfig(synth={"samples_per_class": 5}, normalize_attributes=True)
    b = cfg.load_data()
    np.testing.assert_allclose(np.linalg.norm(b.attributes, axis=1), 1.0)


def test_convert_mat_archive(tmp_path):
    from scipy.io import savemat

    rng = np.random.default_rng(0)
    C, n, d, D = 4, 3, 5, 2
    labels = np.repeat(np.arange(1, C + 1), n)
    savemat(tmp_path / "res101.mat", {"features": rng.normal(size=(d, C * n)), "labels": labels[:, None]})
    loc = np.arange(1, C * n + 1)
    savemat(tmp_path / "att_splits.mat", {
        "att": rng.normal(size=(D, C)),
        "trainval_loc": loc[labels <= 2][:4, None],
        "test_seen_loc": loc[labels <= 2][4:, None],
        "test_unseen_loc": loc[labels > 2][:, None],
    })
    b = convert_xlsa17(tmp_path / "res101.mat", tmp_path / "att_splits.mat", tmp_path / "out", "TOY")
    assert b.seen_ids == [0, 1] and b.unseen_ids == [2, 3]
    back = load_bundle(tmp_path / "out")
    assert back.name == "TOY" and back.feat_dim == d
    np.testing.assert_allclose(back.features, b.features, rtol=1e-6)
    savemat(tmp_path / "bad.mat", {"att": np.zeros((2, 2))})
    with pytest.raises(DataError, match="trainval_loc"):
        convert_xlsa17(tmp_path / "res101.mat", tmp_path / "bad.mat", tmp_path / "o2")
