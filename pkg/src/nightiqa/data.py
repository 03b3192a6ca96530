"""Corpus ingestion, image I/O and checkpoint serialization.

The manifest is a CSV with header ``image_path,mos,content_id,device_tag,
dataset_tag`` and a sidecar line ``#mos_scale=<min>,<max>`` at the top of
the file giving the native MOS range. MOS values are linearly normalized
to [0,1] at ingest.
"""

import csv
import hashlib
import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

MANIFEST_HEADER = ["image_path", "mos", "content_id", "device_tag", "dataset_tag"]

CHECKPOINT_MAGIC = b"NIQA"
CHECKPOINT_FORMAT_VERSION = 1


class ManifestError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class SampleRecord:
    image_path: str
    mos: float  # normalized to [0,1]
    content_id: str
    device_tag: str = ""
    dataset_tag: str = ""


@dataclass(frozen=True)
class DatasetManifest:
    records: tuple
    mos_scale: tuple  # (min, max) of the native MOS range

    def __len__(self):
        return len(self.records)


def validate_image(arr, name="image"):
    """Check the universal pixel-container invariants: finite, in [0,1],
    1 or 3 channels."""
    arr = np.asarray(arr)
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ValueError(f"{name}: expected HxWx1 or HxWx3, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError(f"{name}: values outside [0,1]")
    return arr


def load_manifest(path):
    """Parse a manifest CSV into a DatasetManifest with normalized MOS."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except FileNotFoundError:
        raise ManifestError(f"manifest not found: {path}")

    if not lines or not lines[0].startswith("#mos_scale="):
        raise ManifestError(f"{path}: missing '#mos_scale=<min>,<max>' sidecar line")
    try:
        lo, hi = (float(v) for v in lines[0][len("#mos_scale="):].split(","))
    except ValueError:
        raise ManifestError(f"{path}: malformed mos_scale line: {lines[0]!r}")
    if not lo < hi:
        raise ManifestError(f"{path}: mos_scale min must be < max, got ({lo}, {hi})")

    reader = csv.DictReader(lines[1:])
    if reader.fieldnames != MANIFEST_HEADER:
        raise ManifestError(
            f"{path}: bad header {reader.fieldnames}, expected {MANIFEST_HEADER}"
        )

    records = []
    seen = set()
    for idx, row in enumerate(reader, start=1):
        try:
            raw_mos = float(row["mos"])
            image_path = row["image_path"].strip()
            content_id = row["content_id"].strip()
        except (TypeError, KeyError, ValueError):
            raise ManifestError(f"{path}: malformed row {idx}: {row}")
        if not image_path:
            raise ManifestError(f"{path}: row {idx}: empty image_path")
        if not content_id:
            raise ManifestError(f"{path}: row {idx}: empty content_id")
        if image_path in seen:
            raise ManifestError(f"{path}: row {idx}: duplicate image_path {image_path}")
        seen.add(image_path)
        if not lo <= raw_mos <= hi:
            raise ManifestError(
                f"{path}: row {idx}: mos {raw_mos} outside scale ({lo}, {hi})"
            )
        records.append(
            SampleRecord(
                image_path=image_path,
                mos=(raw_mos - lo) / (hi - lo),
                content_id=content_id,
                device_tag=(row.get("device_tag") or "").strip(),
                dataset_tag=(row.get("dataset_tag") or "").strip(),
            )
        )
    if not records:
        raise ManifestError(f"{path}: empty manifest")
    return DatasetManifest(records=tuple(records), mos_scale=(lo, hi))


def load_image(path, target_size=None):
    """Load an 8-bit RGB image as float32 HxWx3 in [0,1], optionally
    bilinear-resized to target_size=(H, W)."""
    try:
        img = Image.open(path)
        img.load()
    except Exception as exc:
        raise ValueError(f"cannot decode image {path}: {exc}")
    img = img.convert("RGB")
    if target_size is not None:
        h, w = target_size
        if h <= 0 or w <= 0:
            raise ValueError(f"invalid target size {target_size}")
        if (img.height, img.width) != (h, w):
            img = img.resize((w, h), Image.BILINEAR)
    return np.asarray(img, dtype=np.float32) / 255.0


def save_image(arr, path):
    """Write an HxWx{1,3} [0,1] array as an 8-bit PNG."""
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    data = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data).save(path)


@dataclass
class ModelCheckpoint:
    format_version: int
    parameter_map: dict  # layer path -> numpy array
    config_snapshot: dict
    rng_seed: int = 0
    extra: dict = field(default_factory=dict)


def save_checkpoint(ckpt, path):
    """Serialize a checkpoint: magic + JSON header (with payload checksum)
    + npz payload of the parameter arrays."""
    buf = io.BytesIO()
    np.savez(buf, **ckpt.parameter_map)
    payload = buf.getvalue()
    header = json.dumps(
        {
            "format_version": ckpt.format_version,
            "config_snapshot": ckpt.config_snapshot,
            "rng_seed": ckpt.rng_seed,
            "extra": ckpt.extra,
            "sha256": hashlib.sha256(payload).hexdigest(),
        },
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(payload)


def load_checkpoint(path):
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}")
    if len(blob) < 8 or blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<I", blob[4:8])
    if len(blob) < 8 + hlen:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(blob[8 : 8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise CheckpointError(f"{path}: corrupted header")
    if header.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format_version {header.get('format_version')} "
            f"unsupported (expected {CHECKPOINT_FORMAT_VERSION})"
        )
    payload = blob[8 + hlen :]
    if hashlib.sha256(payload).hexdigest() != header["sha256"]:
        raise CheckpointError(f"{path}: payload checksum mismatch (corrupted file)")
    with np.load(io.BytesIO(payload)) as npz:
        params = {k: npz[k].copy() for k in npz.files}
    return ModelCheckpoint(
        format_version=header["format_version"],
        parameter_map=params,
        config_snapshot=header["config_snapshot"],
        rng_seed=header["rng_seed"],
        extra=header.get("extra", {}),
    )
