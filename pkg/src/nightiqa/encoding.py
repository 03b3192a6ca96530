"""Self-reconstruction feature encoders for reflectance and illumination.

Encoder: four stride-1 3x3 conv+ReLU stages with widths 16/32/64/128;
a 2x2 average pool between stages creates the four-scale pyramid
C1 (HxWx16) .. C4 (H/8 x W/8 x 128). Decoder: mirrored conv stages with
2x bilinear upsampling, final conv + sigmoid back to the input channels.

Reflectance reconstruction is trained with structure (1-SSIM) and
blurred-color losses; illumination with plain MSE.
"""

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

PYRAMID_CHANNELS = (16, 32, 64, 128)


@dataclass(frozen=True)
class ColorLossParams:
    peak: float = 0.053  # kernel center value
    mu: float = 0.0
    sigma: float = 3.0
    kernel_radius: int = 10


def _conv_bn_relu(c_in, c_out):
    return nn.Sequential(
        nn.Conv2d(c_in, c_out, 3, padding=1),
        nn.BatchNorm2d(c_out),
        nn.ReLU(inplace=True),
    )


class FeatureEncoder(nn.Module):
    """Produces the 4-level pyramid. R- and L-encoders share this
    architecture but never share weights."""

    def __init__(self, in_channels):
        super().__init__()
        chans = (in_channels,) + PYRAMID_CHANNELS
        self.stages = nn.ModuleList(
            _conv_bn_relu(chans[i], chans[i + 1]) for i in range(4)
        )

    def forward(self, x):
        if x.shape[2] % 8 or x.shape[3] % 8:
            raise ValueError(
                f"spatial dims must be divisible by 8, got {tuple(x.shape[2:])}"
            )
        pyramid = []
        feat = x
        for i, stage in enumerate(self.stages):
            if i > 0:
                feat = F.avg_pool2d(feat, 2)
            feat = stage(feat)
            pyramid.append(feat)
        return tuple(pyramid)


class FeatureDecoder(nn.Module):
    """Reconstructs the encoder input from C4."""

    def __init__(self, out_channels):
        super().__init__()
        self.stages = nn.ModuleList(
            [_conv_bn_relu(128, 64), _conv_bn_relu(64, 32), _conv_bn_relu(32, 16)]
        )
        self.out_conv = nn.Conv2d(16, out_channels, 3, padding=1)

    def forward(self, c4):
        feat = c4
        for stage in self.stages:
            feat = stage(F.interpolate(feat, scale_factor=2.0, mode="bilinear"))
        return torch.sigmoid(self.out_conv(feat))


def _gaussian_window(size=11, sigma=1.5):
    coords = torch.arange(size, dtype=torch.float64) - (size - 1) / 2.0
    g = torch.exp(-(coords**2) / (2.0 * sigma**2))
    g = g / g.sum()
    return torch.outer(g, g)


def ssim(a, b, window_size=11, sigma=1.5, k1=0.01, k2=0.03, data_range=1.0):
    """Mean SSIM with a Gaussian window, valid positions only; channels
    averaged."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    if a.shape[-1] < window_size or a.shape[-2] < window_size:
        raise ValueError(f"image smaller than SSIM window ({window_size})")
    channels = a.shape[1]
    window = _gaussian_window(window_size, sigma).to(dtype=a.dtype, device=a.device)
    kernel = window.expand(channels, 1, window_size, window_size)

    mu_a = F.conv2d(a, kernel, groups=channels)
    mu_b = F.conv2d(b, kernel, groups=channels)
    var_a = F.conv2d(a * a, kernel, groups=channels) - mu_a**2
    var_b = F.conv2d(b * b, kernel, groups=channels) - mu_b**2
    cov = F.conv2d(a * b, kernel, groups=channels) - mu_a * mu_b

    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    ssim_map = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    )
    return ssim_map.mean()


def loss_structure(r, r_hat):
    """1 - SSIM, in [0, 2]."""
    return 1.0 - ssim(r, r_hat)


def gaussian_blur(x, params=ColorLossParams()):
    """Blur with the color-comparison kernel
    G(di, dj) = peak * exp(-((di-mu)^2 + (dj-mu)^2) / (2*sigma)),
    replicate padding. Note the linear-sigma denominator; the kernel is
    not renormalized (its sum is ~1 for the default parameters).
    """
    r = params.kernel_radius
    coords = torch.arange(-r, r + 1, dtype=torch.float64) - params.mu
    d2 = coords[:, None] ** 2 + coords[None, :] ** 2
    window = params.peak * torch.exp(-d2 / (2.0 * params.sigma))
    window = window.to(dtype=x.dtype, device=x.device)
    channels = x.shape[1]
    kernel = window.expand(channels, 1, 2 * r + 1, 2 * r + 1)
    padded = F.pad(x, (r, r, r, r), mode="replicate")
    return F.conv2d(padded, kernel, groups=channels)


def loss_color(r, r_hat, params=ColorLossParams()):
    """Mean squared difference of the blurred pair."""
    diff = gaussian_blur(r, params) - gaussian_blur(r_hat, params)
    return torch.mean(diff**2)


def loss_mse(l, l_hat):
    if l.shape != l_hat.shape:
        raise ValueError(f"shape mismatch: {tuple(l.shape)} vs {tuple(l_hat.shape)}")
    return torch.mean((l - l_hat) ** 2)


def feature_loss(r, r_hat, l, l_hat, params=ColorLossParams()):
    """Structure + color on reflectance, MSE on illumination."""
    return loss_structure(r, r_hat) + loss_color(r, r_hat, params) + loss_mse(l, l_hat)
