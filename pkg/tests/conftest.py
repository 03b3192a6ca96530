import csv

import numpy as np
import pytest

from nightiqa.data import save_image
from nightiqa.eai import eai_cache_path, make_eai


def write_manifest(path, rows, mos_scale=(0.0, 1.0)):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"#mos_scale={mos_scale[0]},{mos_scale[1]}\n")
        writer = csv.writer(fh)
        writer.writerow(["image_path", "mos", "content_id", "device_tag", "dataset_tag"])
        writer.writerows(rows)


def make_synthetic_corpus(root, count=16, size=64, seed=7, contents=None,
                          with_eai=True):
    """Images whose brightness rises and noise falls with MOS, so quality
    is learnable from pixels. Returns the manifest path."""
    rng = np.random.default_rng(seed)
    base = rng.random((size, size, 3)) * 0.3
    img_dir = root / "img"
    img_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for k in range(count):
        q = k / max(count - 1, 1)
        img = np.clip(
            0.15 + 0.55 * q + 0.25 * base
            + (0.04 * (1 - q)) * rng.standard_normal((size, size, 3)),
            0.0, 1.0,
        )
        path = img_dir / f"s{k:02d}.png"
        save_image(img, path)
        if with_eai:
            save_image(make_eai(img), eai_cache_path(path))
        content = contents[k] if contents else f"c{k}"
        rows.append([str(path), q, content, "", "synthetic"])
    manifest_path = root / "manifest.csv"
    write_manifest(manifest_path, rows)
    return manifest_path


@pytest.fixture(scope="session")
def smoke_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("smoke")
    return make_synthetic_corpus(root, count=16, size=64, seed=7)


@pytest.fixture(scope="session")
def smoke_run(smoke_corpus):
    """The overfit experiment: 16 synthetic 64x64 images, 200 steps with
    the default loss weights."""
    import time

    from nightiqa.data import load_manifest
    from nightiqa.training import TrainConfig, train

    manifest = load_manifest(smoke_corpus)
    config = TrainConfig(
        batch_size=8, epochs=100, learning_rate=3e-3, input_size=(64, 64), seed=0
    )
    t0 = time.time()
    ckpt, log = train(manifest, config)
    return {
        "manifest": manifest,
        "config": config,
        "checkpoint": ckpt,
        "log": log,
        "runtime": time.time() - t0,
    }


@pytest.fixture(scope="session")
def tiny_checkpoint(tmp_path_factory):
    """A quickly trained checkpoint for CLI/predict tests."""
    from nightiqa.data import load_manifest
    from nightiqa.training import TrainConfig, train

    root = tmp_path_factory.mktemp("tiny")
    manifest_path = make_synthetic_corpus(root, count=4, size=32, seed=3)
    manifest = load_manifest(manifest_path)
    config = TrainConfig(batch_size=4, epochs=2, learning_rate=1e-3,
                         input_size=(32, 32), seed=0)
    ckpt_path = root / "model.ckpt"
    train(manifest, config, checkpoint_path=ckpt_path)
    return {"manifest_path": manifest_path, "manifest": manifest,
            "ckpt_path": ckpt_path, "root": root}
