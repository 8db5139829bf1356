from augsweep.nn.attention import relu_linear_attention, softmax_attention
from augsweep.nn.autodiff import GradTape, TapeError, backward
from augsweep.nn.flops import estimate_flops
from augsweep.nn.layers import MBConv, MultiScaleLinearAttention, MultiScaleTokens, multiscale_tokens
from augsweep.nn.model import EfficientViTClassifier, ModelConfig, build_model, count_params

__all__ = [
    "EfficientViTClassifier",
    "GradTape",
    "MBConv",
    "ModelConfig",
    "MultiScaleLinearAttention",
    "MultiScaleTokens",
    "TapeError",
    "backward",
    "build_model",
    "count_params",
    "estimate_flops",
    "multiscale_tokens",
    "relu_linear_attention",
    "softmax_attention",
]
