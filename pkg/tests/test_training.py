import numpy as np
import pytest
import torch

from nightiqa.data import load_checkpoint, load_manifest
from nightiqa.training import (
    LOG_FIELDS,
    TrainConfig,
    build_model,
    load_config,
    load_model_from_checkpoint,
    predict,
    predict_batch,
    total_loss,
    train,
    write_loss_log,
)

from conftest import make_synthetic_corpus


class TestTotalLoss:
    def test_unit_components(self):
        cfg = TrainConfig()
        assert float(total_loss(1.0, 1.0, 1.0, cfg)) == pytest.approx(1.0, abs=1e-12)

    def test_quality_only(self):
        cfg = TrainConfig()
        assert float(total_loss(0.0, 0.0, 1.0, cfg)) == pytest.approx(0.7, abs=1e-12)

    def test_zero_components(self):
        assert float(total_loss(0.0, 0.0, 0.0, TrainConfig())) == 0.0

    def test_weighted_combination(self):
        cfg = TrainConfig(lambda1=0.5, lambda2=0.25, lambda3=0.25)
        got = float(total_loss(2.0, 4.0, 8.0, cfg))
        assert got == pytest.approx(0.5 * 2 + 0.25 * 4 + 0.25 * 8, abs=1e-12)

    def test_negative_component_rejected(self):
        with pytest.raises(ValueError, match="negative"):
            total_loss(-0.1, 0.0, 0.0, TrainConfig())
        with pytest.raises(ValueError, match="feat"):
            total_loss(0.0, torch.tensor(-1e-3), 0.0, TrainConfig())

    def test_tensor_components_keep_grad(self):
        idm = torch.tensor(0.5, requires_grad=True)
        out = total_loss(idm, 0.2, 0.1, TrainConfig())
        assert out.requires_grad


class TestConfig:
    def test_defaults(self):
        cfg = TrainConfig()
        assert (cfg.lambda1, cfg.lambda2, cfg.lambda3) == (0.1, 0.2, 0.7)
        assert cfg.input_size == (512, 512)

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError, match="non-negative"):
            TrainConfig(lambda2=-0.1)

    def test_file_parse(self, tmp_path):
        path = tmp_path / "train.cfg"
        path.write_text(
            "# comment\n"
            "learning_rate = 1e-4\n"
            "epochs = 7\n"
            "input_size = 64x64  # trailing comment\n"
            "lambda3 = 0.5\n"
        )
        cfg = load_config(path)
        assert cfg.learning_rate == 1e-4
        assert cfg.epochs == 7
        assert cfg.input_size == (64, 64)
        assert cfg.lambda3 == 0.5
        assert cfg.batch_size == 16  # untouched default

    def test_overrides_win(self, tmp_path):
        path = tmp_path / "train.cfg"
        path.write_text("epochs = 7\nseed = 3\n")
        cfg = load_config(path, overrides={"epochs": 2})
        assert cfg.epochs == 2 and cfg.seed == 3

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "train.cfg"
        path.write_text("momentum = 0.9\n")
        with pytest.raises(ValueError, match="unknown config key"):
            load_config(path)

    def test_malformed_line_rejected(self, tmp_path):
        path = tmp_path / "train.cfg"
        path.write_text("epochs 7\n")
        with pytest.raises(ValueError, match="key = value"):
            load_config(path)

    def test_roundtrip_through_dict(self):
        cfg = TrainConfig(epochs=3, input_size=(64, 64))
        assert TrainConfig(**cfg.to_dict()) == cfg


class TestTrainErrors:
    def test_empty_split_rejected(self, smoke_corpus):
        manifest = load_manifest(smoke_corpus)
        with pytest.raises(ValueError, match="empty"):
            train(manifest, TrainConfig(epochs=1, input_size=(64, 64)), records=[])

    def test_missing_eai_names_file(self, tmp_path):
        manifest_path = make_synthetic_corpus(tmp_path, count=2, size=32, seed=0, with_eai=False)
        manifest = load_manifest(manifest_path)
        with pytest.raises(FileNotFoundError) as exc:
            train(manifest, TrainConfig(epochs=1, input_size=(32, 32)))
        assert manifest.records[0].image_path.split("/")[-1] in str(exc.value)
        assert ".eai.png" in str(exc.value)


class TestTrainAndPredict:
    def test_log_schema_and_file(self, smoke_run, tmp_path):
        log = smoke_run["log"]
        assert [e["epoch"] for e in log] == list(range(1, len(log) + 1))
        assert all(set(e) == set(LOG_FIELDS) for e in log)
        path = tmp_path / "loss.csv"
        write_loss_log(log, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == ",".join(LOG_FIELDS)
        assert len(lines) == len(log) + 1
        # full-precision round trip of the logged floats
        for line, entry in zip(lines[1:], log):
            cells = line.split(",")
            assert int(cells[0]) == entry["epoch"]
            for cell, key in zip(cells[1:], LOG_FIELDS[1:]):
                assert float(cell) == entry[key]

    def test_total_is_weighted_mix(self, smoke_run):
        for entry in smoke_run["log"]:
            expected = (
                0.1 * entry["idm"] + 0.2 * entry["feat"] + 0.7 * entry["quality"]
            )
            assert entry["total"] == pytest.approx(expected, rel=1e-12)

    def test_best_epoch_recorded(self, smoke_run):
        ckpt, log = smoke_run["checkpoint"], smoke_run["log"]
        best = min(log, key=lambda e: e["total"])
        assert ckpt.extra["best_epoch"] == best["epoch"]
        assert ckpt.extra["best_total_loss"] == pytest.approx(best["total"])

    def test_checkpoint_loads_back(self, smoke_run, tmp_path):
        path = tmp_path / "model.ckpt"
        from nightiqa.data import save_checkpoint

        save_checkpoint(smoke_run["checkpoint"], path)
        loaded = load_checkpoint(path)
        model = load_model_from_checkpoint(loaded)
        assert sum(p.numel() for p in model.parameters()) > 0

    def test_predict_deterministic(self, smoke_run, smoke_corpus):
        manifest = load_manifest(smoke_corpus)
        path = manifest.records[0].image_path
        a = predict(smoke_run["checkpoint"], path)
        b = predict(smoke_run["checkpoint"], path)
        assert a == b

    def test_predict_needs_no_eai(self, smoke_run, tmp_path):
        # score a brand-new image that has no EAI sidecar
        from PIL import Image

        rng = np.random.default_rng(11)
        arr = (rng.random((64, 64, 3)) * 255).astype(np.uint8)
        path = tmp_path / "fresh.png"
        Image.fromarray(arr).save(path)
        assert np.isfinite(predict(smoke_run["checkpoint"], path))

    def test_predict_finite_on_extremes(self, smoke_run, tmp_path):
        from PIL import Image

        for name, value in (("black.png", 0), ("white.png", 255)):
            path = tmp_path / name
            Image.fromarray(np.full((64, 64, 3), value, np.uint8)).save(path)
            assert np.isfinite(predict(smoke_run["checkpoint"], path))

    def test_predict_batch_matches_single(self, smoke_run, smoke_corpus):
        manifest = load_manifest(smoke_corpus)
        paths = [r.image_path for r in manifest.records[:3]]
        batched = predict_batch(smoke_run["checkpoint"], paths)
        singles = [predict(smoke_run["checkpoint"], p) for p in paths]
        assert batched == pytest.approx(singles, abs=1e-5)


class TestBuildModel:
    def test_seeded_init_reproducible(self):
        a = build_model(seed=0).state_dict()
        b = build_model(seed=0).state_dict()
        assert all(torch.equal(a[k], b[k]) for k in a)

    def test_different_seeds_differ(self):
        a = build_model(seed=0).state_dict()
        b = build_model(seed=1).state_dict()
        assert any(not torch.equal(a[k], b[k]) for k in a)
