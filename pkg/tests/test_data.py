import numpy as np
import pytest

from nightiqa.data import (
    CheckpointError,
    ManifestError,
    ModelCheckpoint,
    CHECKPOINT_FORMAT_VERSION,
    load_checkpoint,
    load_image,
    load_manifest,
    save_checkpoint,
    save_image,
    validate_image,
)

from conftest import write_manifest


def test_mos_normalization_midpoint(tmp_path):
    path = tmp_path / "m.csv"
    write_manifest(path, [["a.png", 2.5, "c1", "", "d"]], mos_scale=(0, 5))
    manifest = load_manifest(path)
    assert manifest.records[0].mos == 0.5
    assert manifest.mos_scale == (0.0, 5.0)


def test_mos_normalization_identity(tmp_path):
    path = tmp_path / "m.csv"
    write_manifest(path, [["a.png", 0.73, "c1", "", "d"]], mos_scale=(0, 1))
    assert load_manifest(path).records[0].mos == 0.73


def test_mos_normalization_is_affine(tmp_path):
    lo, hi = 1.0, 9.0
    raws = [1.0, 3.5, 7.25, 9.0]
    path = tmp_path / "m.csv"
    write_manifest(
        path,
        [[f"im{i}.png", raw, f"c{i}", "", "d"] for i, raw in enumerate(raws)],
        mos_scale=(lo, hi),
    )
    manifest = load_manifest(path)
    for rec, raw in zip(manifest.records, raws):
        assert rec.mos == (raw - lo) / (hi - lo)


def test_duplicate_image_path_rejected(tmp_path):
    path = tmp_path / "m.csv"
    write_manifest(path, [["a.png", 0.5, "c1", "", "d"], ["a.png", 0.6, "c2", "", "d"]])
    with pytest.raises(ManifestError, match="duplicate"):
        load_manifest(path)


def test_missing_manifest():
    with pytest.raises(ManifestError, match="not found"):
        load_manifest("/nonexistent/m.csv")


def test_malformed_row_reports_index(tmp_path):
    path = tmp_path / "m.csv"
    with open(path, "w") as fh:
        fh.write("#mos_scale=0,1\n")
        fh.write("image_path,mos,content_id,device_tag,dataset_tag\n")
        fh.write("a.png,0.5,c1,,d\n")
        fh.write("b.png,not_a_number,c2,,d\n")
    with pytest.raises(ManifestError, match="row 2"):
        load_manifest(path)


def test_empty_manifest_rejected(tmp_path):
    path = tmp_path / "m.csv"
    write_manifest(path, [])
    with pytest.raises(ManifestError, match="empty"):
        load_manifest(path)


def test_missing_mos_scale_line(tmp_path):
    path = tmp_path / "m.csv"
    with open(path, "w") as fh:
        fh.write("image_path,mos,content_id,device_tag,dataset_tag\n")
        fh.write("a.png,0.5,c1,,d\n")
    with pytest.raises(ManifestError, match="mos_scale"):
        load_manifest(path)


def test_degenerate_mos_scale(tmp_path):
    path = tmp_path / "m.csv"
    write_manifest(path, [["a.png", 1.0, "c1", "", "d"]], mos_scale=(1, 1))
    with pytest.raises(ManifestError, match="min must be"):
        load_manifest(path)


def test_empty_content_id_rejected(tmp_path):
    path = tmp_path / "m.csv"
    write_manifest(path, [["a.png", 0.5, "", "", "d"]])
    with pytest.raises(ManifestError, match="content_id"):
        load_manifest(path)


def test_load_image_resizes(tmp_path):
    rng = np.random.default_rng(0)
    src = tmp_path / "big.png"
    save_image(rng.random((128, 96, 3)), src)
    img = load_image(src, (64, 48))
    assert img.shape == (64, 48, 3)
    assert img.min() >= 0.0 and img.max() <= 1.0
    validate_image(img)


def test_load_image_noop_resize(tmp_path):
    rng = np.random.default_rng(1)
    original = rng.random((32, 32, 3))
    src = tmp_path / "same.png"
    save_image(original, src)
    img = load_image(src, (32, 32))
    # identical up to 8-bit quantization
    assert np.abs(img - original).max() <= 1.0 / 255.0 + 1e-9


def test_load_image_all_black(tmp_path):
    src = tmp_path / "black.png"
    save_image(np.zeros((16, 16, 3)), src)
    assert np.all(load_image(src, (16, 16)) == 0.0)


def test_load_image_undecodable(tmp_path):
    bad = tmp_path / "junk.png"
    bad.write_bytes(b"this is not a png")
    with pytest.raises(ValueError, match="cannot decode"):
        load_image(bad)


def test_load_image_zero_target(tmp_path):
    src = tmp_path / "x.png"
    save_image(np.zeros((8, 8, 3)), src)
    with pytest.raises(ValueError, match="target size"):
        load_image(src, (0, 8))


def test_validate_image_rejects_bad_shapes_and_ranges():
    with pytest.raises(ValueError):
        validate_image(np.zeros((4, 4, 2)))
    with pytest.raises(ValueError):
        validate_image(np.full((4, 4, 3), 1.5))
    with pytest.raises(ValueError):
        validate_image(np.full((4, 4, 3), np.nan))


def _dummy_checkpoint():
    rng = np.random.default_rng(0)
    return ModelCheckpoint(
        format_version=CHECKPOINT_FORMAT_VERSION,
        parameter_map={
            "layer1.weight": rng.standard_normal((4, 3)).astype(np.float32),
            "layer1.bias": rng.standard_normal(4).astype(np.float32),
            "bn.count": np.array(7, dtype=np.int64),
        },
        config_snapshot={"lr": 3e-5, "input_size": [64, 64]},
        rng_seed=42,
    )


def test_checkpoint_roundtrip_exact(tmp_path):
    ckpt = _dummy_checkpoint()
    path = tmp_path / "m.ckpt"
    save_checkpoint(ckpt, path)
    loaded = load_checkpoint(path)
    assert loaded.format_version == ckpt.format_version
    assert loaded.rng_seed == 42
    assert loaded.config_snapshot == ckpt.config_snapshot
    assert set(loaded.parameter_map) == set(ckpt.parameter_map)
    for key, arr in ckpt.parameter_map.items():
        assert np.array_equal(loaded.parameter_map[key], arr)
        assert loaded.parameter_map[key].dtype == arr.dtype


def test_checkpoint_version_mismatch(tmp_path):
    ckpt = _dummy_checkpoint()
    ckpt.format_version = 99
    path = tmp_path / "m.ckpt"
    save_checkpoint(ckpt, path)
    with pytest.raises(CheckpointError, match="format_version"):
        load_checkpoint(path)


def test_checkpoint_truncated(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(_dummy_checkpoint(), path)
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) - 20])
    with pytest.raises(CheckpointError, match="checksum|truncated"):
        load_checkpoint(path)


def test_checkpoint_corrupted_payload(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(_dummy_checkpoint(), path)
    blob = bytearray(path.read_bytes())
    blob[-5] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="checksum"):
        load_checkpoint(path)


def test_checkpoint_not_a_checkpoint(tmp_path):
    path = tmp_path / "m.ckpt"
    path.write_bytes(b"garbage bytes here")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
