"""Bilinear fusion of the reflectance and illumination pyramids and the
quality regression head.

Per scale: 1x1 projections to 32 channels, location-averaged outer
product (32x32 -> 1024), signed square root + l2 normalization; the four
normalized vectors are concatenated (4096) and fed to two fully
connected layers producing a scalar score.
"""

import torch
import torch.nn as nn

from .encoding import PYRAMID_CHANNELS

COMPACT_CHANNELS = 32
DESCRIPTOR_LENGTH = 4 * COMPACT_CHANNELS * COMPACT_CHANNELS  # 4096


def bilinear_pool(c_r, c_l):
    """Location-averaged outer product of two NCHW maps with equal
    channel counts; returns (N, C*C) flattened row-major."""
    if c_r.shape != c_l.shape:
        raise ValueError(f"shape mismatch: {tuple(c_r.shape)} vs {tuple(c_l.shape)}")
    n, c, h, w = c_r.shape
    pooled = torch.einsum("nchw,ndhw->ncd", c_r, c_l) / (h * w)
    return pooled.reshape(n, c * c)


def normalize_descriptor(b):
    """Signed square root then l2 normalization; all-zero vectors pass
    through unchanged."""
    signed = torch.sign(b) * torch.sqrt(torch.abs(b))
    norm = torch.linalg.vector_norm(signed, dim=-1, keepdim=True)
    denom = torch.where(norm > 0, norm, torch.ones_like(norm))
    return signed / denom


class QualityHead(nn.Module):
    """Compress -> pool -> normalize per scale, concatenate, regress."""

    def __init__(self, hidden=512):
        super().__init__()
        self.compress_r = nn.ModuleList(
            nn.Conv2d(c, COMPACT_CHANNELS, 1) for c in PYRAMID_CHANNELS
        )
        self.compress_l = nn.ModuleList(
            nn.Conv2d(c, COMPACT_CHANNELS, 1) for c in PYRAMID_CHANNELS
        )
        self.fc1 = nn.Linear(DESCRIPTOR_LENGTH, hidden)
        self.fc2 = nn.Linear(hidden, 1)

    def descriptor(self, pyr_r, pyr_l):
        if len(pyr_r) != 4 or len(pyr_l) != 4:
            raise ValueError("expected 4-level pyramids")
        parts = []
        for conv_r, conv_l, c_r, c_l in zip(
            self.compress_r, self.compress_l, pyr_r, pyr_l
        ):
            if c_r.shape[2:] != c_l.shape[2:]:
                raise ValueError(
                    f"pyramid spatial mismatch: {tuple(c_r.shape)} vs {tuple(c_l.shape)}"
                )
            parts.append(normalize_descriptor(bilinear_pool(conv_r(c_r), conv_l(c_l))))
        return torch.cat(parts, dim=-1)

    def forward(self, pyr_r, pyr_l):
        b = self.descriptor(pyr_r, pyr_l)
        return self.fc2(torch.relu(self.fc1(b))).squeeze(-1)


def quality_loss(predictions, targets):
    """Mini-batch mean squared error against normalized MOS."""
    predictions = torch.as_tensor(predictions) if not torch.is_tensor(predictions) else predictions
    targets = torch.as_tensor(targets, dtype=predictions.dtype, device=predictions.device)
    if predictions.shape != targets.shape:
        raise ValueError(
            f"shape mismatch: {tuple(predictions.shape)} vs {tuple(targets.shape)}"
        )
    return torch.mean((predictions - targets) ** 2)
