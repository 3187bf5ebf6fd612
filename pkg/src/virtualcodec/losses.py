"""Differentiable training losses (torch).

Inputs are tensors shaped ``(H, W)``, ``(N, H, W)`` or ``(N, 1, H, W)``;
per-image losses are averaged over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch.nn import functional as F

from .image import SSIM_C1, SSIM_C2, gaussian_window

HORIZONTAL = "horizontal"
VERTICAL = "vertical"
DEFAULT_DIRECTIONS = (HORIZONTAL, VERTICAL)


@dataclass
class LossValue:
    """A total and the (weighted) terms that add up to it."""

    value: torch.Tensor
    components: dict = field(default_factory=dict)

    def item(self) -> float:
        return float(self.value.detach())

    def floats(self) -> dict:
        return {k: float(v.detach()) for k, v in self.components.items()}


@dataclass(frozen=True)
class LossWeights:
    content: float = 1.0
    gradient: float = 1.0
    ssim: float = 1.0


def _as4d(t):
    t = torch.as_tensor(t)
    if t.dim() == 2:
        return t[None, None]
    if t.dim() == 3:
        return t[:, None]
    if t.dim() == 4 and t.shape[1] == 1:
        return t
    raise ValueError(f"expected (H,W), (N,H,W) or (N,1,H,W), got {tuple(t.shape)}")


def _pair(a, b):
    a, b = _as4d(a), _as4d(b)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    return a, b


def l1_content(a, b) -> LossValue:
    a, b = _pair(a, b)
    v = (a - b).abs().mean()
    return LossValue(v, {"content": v})


def forward_difference(t, direction):
    """Forward difference; the last column/row (no successor) is zero."""
    t = _as4d(t)
    if direction == HORIZONTAL:
        return F.pad(t[..., :, 1:] - t[..., :, :-1], (0, 1, 0, 0))
    if direction == VERTICAL:
        return F.pad(t[..., 1:, :] - t[..., :-1, :], (0, 0, 0, 1))
    raise ValueError(f"unknown gradient direction {direction!r}")


def l1_gradient_diff(a, b, dirs=DEFAULT_DIRECTIONS) -> LossValue:
    """Sum over directions of |grad_k a - grad_k b|, divided by the pixel count only."""
    a, b = _pair(a, b)
    if not dirs:
        raise ValueError("need at least one gradient direction")
    total = 0
    for d in dirs:
        total = total + (forward_difference(a, d) - forward_difference(b, d)).abs()
    v = total.sum(dim=(-2, -1)).mean() / (a.shape[-2] * a.shape[-1])
    return LossValue(v, {"gradient": v})


def upsample2x(y):
    """The linear upsampler s(.): bilinear x2, half-pixel (align_corners=False) grid."""
    return F.interpolate(_as4d(y), scale_factor=2, mode="bilinear", align_corners=False)


def ssim_map(a, b, *, window=11, sigma=1.5, c1=SSIM_C1, c2=SSIM_C2):
    a, b = _pair(a, b)
    if min(a.shape[-2:]) < window:
        raise ValueError(f"image {tuple(a.shape[-2:])} smaller than the {window}x{window} window")
    g = torch.as_tensor(gaussian_window(window, sigma), dtype=a.dtype, device=a.device)
    kernel = torch.outer(g, g)[None, None]

    def filt(x):
        return F.conv2d(x, kernel)

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a ** 2
    var_b = filt(b * b) - mu_b ** 2
    cov = filt(a * b) - mu_a * mu_b
    return ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2))


def ssim_loss(sy, x, **kw) -> LossValue:
    """Negative mean SSIM between the upsampled description and the target."""
    v = -ssim_map(sy, x, **kw).mean()
    return LossValue(v, {"ssim": v})


def _combine(*parts):
    comps = {name: w * part.value for name, part, w in parts}
    return LossValue(sum(comps.values()), comps)


def ppnn_objective(x, i_tilde, weights=LossWeights(), dirs=DEFAULT_DIRECTIONS) -> LossValue:
    return _combine(("content", l1_content(x, i_tilde), weights.content),
                    ("gradient", l1_gradient_diff(x, i_tilde, dirs), weights.gradient))


def vcnn_objective(i_hat, i_tilde, weights=LossWeights(), dirs=DEFAULT_DIRECTIONS) -> LossValue:
    return _combine(("content", l1_content(i_hat, i_tilde), weights.content),
                    ("gradient", l1_gradient_diff(i_hat, i_tilde, dirs), weights.gradient))


def fdnn_objective(x, i_hat, sy, weights=LossWeights(), dirs=DEFAULT_DIRECTIONS,
                   **ssim_kw) -> LossValue:
    _pair(x, sy)
    return _combine(("content", l1_content(x, i_hat), weights.content),
                    ("gradient", l1_gradient_diff(x, i_hat, dirs), weights.gradient),
                    ("ssim", ssim_loss(sy, x, **ssim_kw), weights.ssim))
