"""Spatial-angular attention over epipolar planes, plus angular upsampling.

Feature tensors use torch's channels-first layout ``(B, C, W, H, A)``.  The
attention map for one (batch, height) plane is a ``(W*A, W*A)`` matrix whose
row ``x0*A + s0`` and column ``x1*A + s1`` hold ``M'(x0, s0, x1, s1)``.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn


class ConfigError(ValueError):
    """Invalid architecture configuration (channel or factor arithmetic)."""


def upsampled_views(n_views: int, alpha_a: int) -> int:
    return alpha_a * (n_views - 1) + 1


def angular_deconv(channels: int, alpha_a: int, out_channels: int | None = None) -> nn.ConvTranspose3d:
    """3x1x7 transposed conv with stride alpha_a along A.

    The raw output has ``alpha_a*(A-1) + 7`` views; padding 3 crops the
    overhang symmetrically to exactly ``alpha_a*(A-1) + 1``.
    """
    return nn.ConvTranspose3d(
        channels, out_channels or channels, kernel_size=(3, 1, 7),
        stride=(1, 1, alpha_a), padding=(1, 0, 3),
    )


def pointwise(c_in: int, c_out: int) -> nn.Conv3d:
    return nn.Conv3d(c_in, c_out, kernel_size=1)


class SAAM(nn.Module):
    """Non-local attention in the (W, A) epipolar plane followed by angular deconvolution.

    With ``upsample=False`` the deconvolution is dropped and the module maps
    ``(B, C, W, H, A)`` to the same shape; the network uses that for its
    single-scale ablation.
    """

    def __init__(self, channels: int, alpha_a: int, upsample: bool = True):
        super().__init__()
        if channels % 8 != 0:
            raise ConfigError(f"SAAM needs channels divisible by 8, got {channels}")
        if alpha_a < 2:
            raise ConfigError(f"alpha_a must be >= 2, got {alpha_a}")
        self.channels = channels
        self.alpha_a = alpha_a
        self.key_channels = channels // 8
        self.value_channels = channels // 2
        self.conv_a = pointwise(channels, self.key_channels)
        self.conv_b = pointwise(channels, self.key_channels)
        self.conv_c = pointwise(channels, self.value_channels)
        self.conv_expand = pointwise(self.value_channels, channels)
        self.gamma = nn.Parameter(torch.zeros(()))
        self.upsample = upsample
        if upsample:
            self.deconv = angular_deconv(channels, alpha_a)
            self.conv_out = pointwise(channels, channels)
        self.relu = nn.ReLU()

    def build_attention(self, phi: torch.Tensor) -> torch.Tensor:
        b, c, w, h, a = phi.shape
        if c != self.channels:
            raise ConfigError(f"expected {self.channels} channels, got {c}")
        query = _to_planes(self.conv_a(phi))  # (B*H, W*A, C')
        key = _to_planes(self.conv_b(phi)).transpose(1, 2)  # (B*H, C', W*A)
        return torch.softmax(torch.bmm(query, key), dim=-1)

    def attend(self, phi: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Return ``(gamma * expand(M @ value) + phi, M)``."""
        b, _, w, h, a = phi.shape
        attn = self.build_attention(phi)
        value = _to_planes(self.conv_c(phi))
        mixed = _from_planes(torch.bmm(attn, value), b, w, h, a)
        residual = self.gamma * self.conv_expand(mixed) + phi
        return residual, attn

    def forward(self, phi: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        residual, attn = self.attend(phi)
        if not self.upsample:
            return residual, attn
        out = self.relu(self.conv_out(self.relu(self.deconv(residual))))
        return out, attn


def _to_planes(t: torch.Tensor) -> torch.Tensor:
    # (B, C, W, H, A) -> (B*H, W*A, C)
    b, c, w, h, a = t.shape
    return t.permute(0, 3, 2, 4, 1).reshape(b * h, w * a, c)


def _from_planes(t: torch.Tensor, b: int, w: int, h: int, a: int) -> torch.Tensor:
    # (B*H, W*A, C) -> (B, C, W, H, A)
    c = t.shape[-1]
    return t.reshape(b, h, w, a, c).permute(0, 4, 2, 1, 3)


def attention_submap(attn: torch.Tensor, width: int, n_views: int, plane: int, s0: int, s1: int) -> np.ndarray:
    """Slice ``M'(:, s0, :, s1)`` out of one plane of a flattened attention map."""
    m = attn[plane].detach().cpu().numpy().reshape(width, n_views, width, n_views)
    return m[:, s0, :, s1]


# -- naive reference ---------------------------------------------------------

def _np(p: torch.Tensor) -> np.ndarray:
    return p.detach().cpu().numpy().astype(np.float64)


def _pointwise_loops(x: np.ndarray, conv: nn.Conv3d) -> np.ndarray:
    weight = _np(conv.weight)[:, :, 0, 0, 0]  # (C_out, C_in)
    bias = _np(conv.bias)
    c_in, w, h, a = x.shape
    out = np.empty((weight.shape[0], w, h, a))
    for i in range(w):
        for j in range(h):
            for k in range(a):
                out[:, i, j, k] = weight @ x[:, i, j, k] + bias
    return out


def _transposed_conv_loops(x: np.ndarray, deconv: nn.ConvTranspose3d) -> np.ndarray:
    weight = _np(deconv.weight)  # (C_in, C_out, kW, kH, kA)
    bias = _np(deconv.bias)
    stride, pad = deconv.stride, deconv.padding
    _, w, h, a = x.shape
    kernel = weight.shape[2:]
    full = [(n - 1) * st + k for n, st, k in zip((w, h, a), stride, kernel)]
    acc = np.zeros((weight.shape[1], *full))
    for i in range(w):
        for j in range(h):
            for k in range(a):
                for p in range(kernel[0]):
                    for q in range(kernel[1]):
                        for r in range(kernel[2]):
                            acc[:, i * stride[0] + p, j * stride[1] + q, k * stride[2] + r] += (
                                x[:, i, j, k] @ weight[:, :, p, q, r]
                            )
    out = acc[:, pad[0]:full[0] - pad[0], pad[1]:full[1] - pad[1], pad[2]:full[2] - pad[2]]
    return out + bias[:, None, None, None]


def saam_forward_reference(phi: torch.Tensor, module: SAAM) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Loop-by-loop float64 evaluation of ``module`` for tiny inputs.

    Returns ``(output, attention, residual)`` as numpy arrays in the same
    layouts as the batched module.
    """
    x = _np(phi)
    b, c, w, h, a = x.shape
    if w * a > 64:
        raise ValueError("reference evaluation is limited to W*A <= 64")
    gamma = float(module.gamma.detach())
    n = w * a
    attention = np.zeros((b * h, n, n))
    residual = np.zeros_like(x)
    for bi in range(b):
        fa = _pointwise_loops(x[bi], module.conv_a)
        fb = _pointwise_loops(x[bi], module.conv_b)
        fc = _pointwise_loops(x[bi], module.conv_c)
        for y in range(h):
            plane = bi * h + y
            mixed = np.zeros((module.value_channels, w, 1, a))
            for x0 in range(w):
                for s0 in range(a):
                    logits = np.empty(n)
                    for x1 in range(w):
                        for s1 in range(a):
                            logits[x1 * a + s1] = np.dot(fa[:, x0, y, s0], fb[:, x1, y, s1])
                    row = np.exp(logits - logits.max())
                    row /= row.sum()
                    attention[plane, x0 * a + s0] = row
                    for x1 in range(w):
                        for s1 in range(a):
                            mixed[:, x0, 0, s0] += row[x1 * a + s1] * fc[:, x1, y, s1]
            expanded = _pointwise_loops(mixed, module.conv_expand)
            residual[bi, :, :, y, :] = gamma * expanded[:, :, 0, :] + x[bi, :, :, y, :]
    if not module.upsample:
        return residual, attention, residual
    outs = []
    for bi in range(b):
        up = np.maximum(_transposed_conv_loops(residual[bi], module.deconv), 0.0)
        outs.append(np.maximum(_pointwise_loops(up, module.conv_out), 0.0))
    return np.stack(outs), attention, residual
