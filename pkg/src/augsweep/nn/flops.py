"""Forward-pass FLOP estimate (2 x multiply-accumulates)."""

from __future__ import annotations

import torch
from torch import nn

from augsweep.nn.attention import linear_attention_macs
from augsweep.nn.layers import MultiScaleLinearAttention


def conv_macs(conv: nn.Conv2d, out_shape) -> int:
    _, c_out, h, w = out_shape
    kh, kw = conv.kernel_size
    return c_out * h * w * (conv.in_channels // conv.groups) * kh * kw


def estimate_flops(model: nn.Module, input_shape) -> float:
    """GFLOPs of one forward pass over convolutions, linear layers and attention."""
    macs = 0
    hooks = []

    def on_conv(mod, _inp, out):
        nonlocal macs
        macs += conv_macs(mod, out.shape)

    def on_linear(mod, inp, _out):
        nonlocal macs
        macs += inp[0].numel() // mod.in_features * mod.in_features * mod.out_features

    def on_attention(mod, inp, _out):
        nonlocal macs
        b, _, h, w = inp[0].shape
        macs += b * 2 * mod.heads * linear_attention_macs(h * w, mod.head_dim)

    for mod in model.modules():
        if isinstance(mod, nn.Conv2d):
            hooks.append(mod.register_forward_hook(on_conv))
        elif isinstance(mod, nn.Linear):
            hooks.append(mod.register_forward_hook(on_linear))
        elif isinstance(mod, MultiScaleLinearAttention):
            hooks.append(mod.register_forward_hook(on_attention))
    was_training = model.training
    model.eval()
    try:
        dtype = next(model.parameters()).dtype
        with torch.no_grad():
            model(torch.zeros(tuple(input_shape), dtype=dtype))
    finally:
        for h in hooks:
            h.remove()
        model.train(was_training)
    return 2.0 * macs / 1e9
