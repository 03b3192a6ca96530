"""Unsupervised Retinex-style image decomposition.

A two-stream network maps an image to reflectance R (3 channels) and
illumination L (1 channel), both sigmoid-bounded. Training uses five
unsupervised loss terms over the (night image, exposure-adjusted image)
pair: reflectance consistency, illumination mutual consistency,
illumination structure-aware smoothness, reflectance total variation,
and element-wise-product reconstruction.

All tensors are NCHW. All l1/l2 penalties are realized as means over
elements so loss magnitudes are resolution independent.
"""

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass(frozen=True)
class PenaltyParams:
    c: float = 0.1

    def __post_init__(self):
        if self.c <= 0:
            raise ValueError(f"penalty width c must be positive, got {self.c}")


@dataclass
class DecompositionLossBreakdown:
    con_r: torch.Tensor
    con_l: torch.Tensor
    sm_r: torch.Tensor
    sm_l: torch.Tensor
    rec: torch.Tensor

    @property
    def total(self):
        return self.con_r + self.con_l + self.sm_r + self.sm_l + self.rec


def spatial_gradient(x):
    """|forward dx| + |forward dy| with replicate boundary (the last
    row/column difference is zero)."""
    if x.shape[-1] < 2 or x.shape[-2] < 2:
        raise ValueError(f"spatial dims too small for gradients: {tuple(x.shape)}")
    dx = torch.abs(x[..., :, 1:] - x[..., :, :-1])
    dy = torch.abs(x[..., 1:, :] - x[..., :-1, :])
    dx = F.pad(dx, (0, 1, 0, 0))
    dy = F.pad(dy, (0, 0, 0, 1))
    return dx + dy


def penalty_f(m, params=PenaltyParams()):
    """Mean of (M/c^2) * exp(-M^2 / (2 c^2)) over a non-negative map.

    As a scalar curve this rises from 0, peaks at M=c and decays to 0.
    """
    if torch.any(m < 0):
        raise ValueError("penalty input must be non-negative")
    c2 = params.c**2
    return torch.mean(m / c2 * torch.exp(-(m**2) / (2.0 * c2)))


def loss_reflection_consistency(r_n, r_e):
    if r_n.shape != r_e.shape:
        raise ValueError(f"shape mismatch: {tuple(r_n.shape)} vs {tuple(r_e.shape)}")
    return torch.mean(torch.abs(r_n - r_e))


def loss_illum_consistency(l_n, l_e, params=PenaltyParams()):
    """Penalize weak mutual illumination edges, keep strong ones."""
    return penalty_f(spatial_gradient(l_n) + spatial_gradient(l_e), params)


def _channel_mean_gradient(r):
    return spatial_gradient(r).mean(dim=1, keepdim=True)


def loss_illum_smoothness(l_n, r_n, l_e, r_e, tau=0.01):
    """Structure-aware smoothness: illumination gradients are cheap where
    the (channel-averaged) reflectance gradient is strong."""
    term_n = torch.mean(
        spatial_gradient(l_n) / torch.clamp(_channel_mean_gradient(r_n) ** 2, min=tau)
    )
    term_e = torch.mean(
        spatial_gradient(l_e) / torch.clamp(_channel_mean_gradient(r_e) ** 2, min=tau)
    )
    return term_n + term_e


def loss_reflect_tv(r_n, r_e):
    return torch.mean(spatial_gradient(r_n)) + torch.mean(spatial_gradient(r_e))


def loss_reconstruction(i_n, r_n, l_n, i_e, r_e, l_e):
    """mean |I - R*L| for both pairs; single-channel L broadcasts over RGB."""
    return torch.mean(torch.abs(i_n - r_n * l_n)) + torch.mean(
        torch.abs(i_e - r_e * l_e)
    )


def decomposition_loss(i_n, i_e, out_n, out_e, params=PenaltyParams(), tau=0.01):
    """All five unsupervised terms; .total is their unweighted sum."""
    r_n, l_n = out_n
    r_e, l_e = out_e
    return DecompositionLossBreakdown(
        con_r=loss_reflection_consistency(r_n, r_e),
        con_l=loss_illum_consistency(l_n, l_e, params),
        sm_r=loss_reflect_tv(r_n, r_e),
        sm_l=loss_illum_smoothness(l_n, r_n, l_e, r_e, tau),
        rec=loss_reconstruction(i_n, r_n, l_n, i_e, r_e, l_e),
    )


def _conv_bn_relu(c_in, c_out):
    return nn.Sequential(
        nn.Conv2d(c_in, c_out, 3, padding=1),
        nn.BatchNorm2d(c_out),
        nn.ReLU(inplace=True),
    )


class DecompositionNet(nn.Module):
    """Reflection stream: 5-level U-Net-like body (32/64/128 widths with
    2x bilinear resampling and skip connections) followed by two conv
    layers and a sigmoid. Illumination stream: two conv+ReLU layers on
    the input, concatenated with the reflection stream's last 32-channel
    features, one conv, sigmoid.
    """

    def __init__(self):
        super().__init__()
        self.enc0 = _conv_bn_relu(3, 32)
        self.enc1 = _conv_bn_relu(32, 64)
        self.enc2 = _conv_bn_relu(64, 128)
        self.dec1 = _conv_bn_relu(128 + 64, 64)
        self.dec0 = _conv_bn_relu(64 + 32, 32)
        self.refl_post = _conv_bn_relu(32, 32)
        self.refl_out = nn.Conv2d(32, 3, 3, padding=1)

        self.illum_conv1 = _conv_bn_relu(3, 32)
        self.illum_conv2 = _conv_bn_relu(32, 32)
        self.illum_out = nn.Conv2d(64, 1, 3, padding=1)

    def forward(self, x):
        if x.dim() != 4 or x.shape[1] != 3:
            raise ValueError(f"expected NCHW with 3 channels, got {tuple(x.shape)}")
        if x.shape[2] < 16 or x.shape[3] < 16:
            raise ValueError(
                f"input spatial dims must be >= 16, got {tuple(x.shape[2:])}"
            )
        f0 = self.enc0(x)
        f1 = self.enc1(F.interpolate(f0, scale_factor=0.5, mode="bilinear"))
        f2 = self.enc2(F.interpolate(f1, scale_factor=0.5, mode="bilinear"))
        u1 = self.dec1(
            torch.cat([F.interpolate(f2, size=f1.shape[2:], mode="bilinear"), f1], 1)
        )
        u0 = self.dec0(
            torch.cat([F.interpolate(u1, size=f0.shape[2:], mode="bilinear"), f0], 1)
        )
        refl_feat = self.refl_post(u0)
        reflectance = torch.sigmoid(self.refl_out(refl_feat))

        g = self.illum_conv2(self.illum_conv1(x))
        illumination = torch.sigmoid(self.illum_out(torch.cat([g, refl_feat], 1)))
        return reflectance, illumination
