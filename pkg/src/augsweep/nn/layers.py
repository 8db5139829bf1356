"""Convolutional building blocks: conv-norm-act, MBConv, multi-scale attention."""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from augsweep.nn.attention import relu_linear_attention


def _act(name: str) -> nn.Module:
    if name == "hardswish":
        return nn.Hardswish()
    if name == "gelu":
        return nn.GELU()
    if name == "relu":
        return nn.ReLU()
    if name == "none":
        return nn.Identity()
    raise ValueError(f"unknown activation {name!r}")


class ConvNormAct(nn.Sequential):
    def __init__(self, c_in, c_out, kernel=3, stride=1, groups=1, act="hardswish", norm=True):
        layers = [nn.Conv2d(c_in, c_out, kernel, stride, kernel // 2, groups=groups, bias=not norm)]
        if norm:
            layers.append(nn.BatchNorm2d(c_out))
        layers.append(_act(act))
        super().__init__(*layers)


class MBConv(nn.Module):
    """Inverted bottleneck: 1x1 expand, 3x3 depthwise (strided), 1x1 project.

    The residual is added when ``stride == 1`` and the channel count is kept.
    """

    def __init__(self, c_in, c_out, stride=1, expand_ratio=4, act="hardswish"):
        super().__init__()
        if stride not in (1, 2):
            raise ValueError("MBConv stride must be 1 or 2")
        mid = int(round(c_in * expand_ratio))
        self.c_in, self.c_out, self.mid, self.stride = c_in, c_out, mid, stride
        self.expand = ConvNormAct(c_in, mid, 1, act=act)
        self.depthwise = ConvNormAct(mid, mid, 3, stride, groups=mid, act=act)
        self.project = ConvNormAct(mid, c_out, 1, act="none")
        self.residual = stride == 1 and c_in == c_out

    def forward(self, x):
        if x.dim() != 4 or x.shape[1] != self.c_in:
            raise ValueError(f"MBConv expects (B, {self.c_in}, H, W), got {tuple(x.shape)}")
        y = self.project(self.depthwise(self.expand(x)))
        return x + y if self.residual else y

    @staticmethod
    def closed_form_params(c_in, c_out, expand_ratio=4) -> int:
        mid = int(round(c_in * expand_ratio))
        return (c_in * mid + 2 * mid) + (9 * mid + 2 * mid) + (mid * c_out + 2 * c_out)


class MultiScaleTokens(nn.Module):
    """Identity channels followed by a depthwise ``kernel x kernel`` aggregate of them.

    Borders replicate-pad so constant maps stay constant.
    """

    def __init__(self, channels, kernel=5):
        super().__init__()
        if kernel < 1 or kernel % 2 == 0:
            raise ValueError("multi-scale kernel must be a positive odd integer")
        self.kernel = kernel
        self.aggregate = nn.Conv2d(channels, channels, kernel, padding=0, groups=channels, bias=False)

    def forward(self, x):
        h, w = x.shape[-2:]
        if self.kernel > min(h, w):
            raise ValueError(f"kernel {self.kernel} exceeds spatial size {h}x{w}")
        pad = self.kernel // 2
        agg = self.aggregate(F.pad(x, (pad, pad, pad, pad), mode="replicate"))
        return torch.cat([x, agg], dim=1)


def multiscale_tokens(x, kernel: int, weight=None):
    """Functional form of :class:`MultiScaleTokens` on a ``(C, H, W)`` or batched map."""
    squeeze = x.dim() == 3
    if squeeze:
        x = x.unsqueeze(0)
    mod = MultiScaleTokens(x.shape[1], kernel).to(x.dtype)
    with torch.no_grad():
        if weight is None:
            mod.aggregate.weight.fill_(1.0 / kernel**2)
        else:
            mod.aggregate.weight.copy_(weight)
    out = mod(x)
    return out[0] if squeeze else out


class MultiScaleLinearAttention(nn.Module):
    """Q/K/V from a 1x1 conv, widened by multi-scale tokens, mixed by ReLU linear attention."""

    def __init__(self, channels, heads=4, head_dim=16, kernel=5):
        super().__init__()
        self.heads, self.head_dim = heads, head_dim
        inner = heads * head_dim
        self.qkv = nn.Conv2d(channels, 3 * inner, 1, bias=False)
        self.tokens = MultiScaleTokens(3 * inner, kernel)
        self.proj = ConvNormAct(2 * inner, channels, 1, act="none")

    def forward(self, x):
        b, _, h, w = x.shape
        n = h * w
        qkv = self.tokens(self.qkv(x))  # (B, 2 * 3 * inner, H, W)
        qkv = qkv.reshape(b, 2 * self.heads, 3 * self.head_dim, n).transpose(-1, -2)
        q, k, v = qkv.split(self.head_dim, dim=-1)
        out = relu_linear_attention(q, k, v)  # (B, 2h, N, d)
        out = out.transpose(-1, -2).reshape(b, 2 * self.heads * self.head_dim, h, w)
        return self.proj(out)


class EfficientViTBlock(nn.Module):
    """Global context (multi-scale linear attention) then local mixing (MBConv)."""

    def __init__(self, channels, heads, head_dim, kernel, expand_ratio=4, act="hardswish"):
        super().__init__()
        self.context = MultiScaleLinearAttention(channels, heads, head_dim, kernel)
        self.local = MBConv(channels, channels, 1, expand_ratio, act)

    def forward(self, x):
        return self.local(x + self.context(x))
