"""ReLU linear attention and the softmax reference it replaces."""

from __future__ import annotations

import math

import torch
from torch import Tensor

EPS = 1e-6


def _check_qkv(q: Tensor, k: Tensor, v: Tensor) -> None:
    if q.dim() < 2 or q.shape != k.shape or q.shape[:-1] != v.shape[:-1]:
        raise ValueError(
            f"attention shape mismatch: q{tuple(q.shape)} k{tuple(k.shape)} v{tuple(v.shape)}"
        )


def relu_linear_attention(q: Tensor, k: Tensor, v: Tensor, eps: float = EPS) -> Tensor:
    """Attention with a ReLU kernel over ``(..., N, d)`` inputs.

    out_i = relu(q_i) @ (sum_j relu(k_j)^T v_j) / (relu(q_i) . sum_j relu(k_j) + eps)

    The key/value product is formed first, so the cost is O(N d^2) and no
    N x N matrix is ever built.
    """
    _check_qkv(q, k, v)
    q = torch.relu(q)
    k = torch.relu(k)
    kv = k.transpose(-1, -2) @ v
    k_sum = k.sum(dim=-2, keepdim=True)
    num = q @ kv
    den = (q * k_sum).sum(dim=-1, keepdim=True) + eps
    return num / den


def softmax_attention(q: Tensor, k: Tensor, v: Tensor, return_weights: bool = False):
    """Scaled dot-product attention; O(N^2 d)."""
    _check_qkv(q, k, v)
    logits = (q @ k.transpose(-1, -2)) / math.sqrt(q.shape[-1])
    weights = torch.softmax(logits, dim=-1)
    out = weights @ v
    return (out, weights) if return_weights else out


def linear_attention_macs(n: int, d: int, dv: int | None = None) -> int:
    """Multiply-accumulates of the factored ReLU attention for one head."""
    dv = d if dv is None else dv
    return n * d * dv + n * d * dv + n * d + n * d


def softmax_attention_macs(n: int, d: int, dv: int | None = None) -> int:
    dv = d if dv is None else dv
    return n * n * d + n * n * dv
